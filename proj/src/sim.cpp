#include "fidosim/sim.hpp"

namespace fidosim {

const char* to_string(DetectionCode c) {
  switch (c) {
    case DetectionCode::DeviceCloningDetected: return "DEVICE_CLONING_DETECTED";
    case DetectionCode::MacFailure: return "MAC_FAILURE";
    case DetectionCode::OriginMismatch: return "ORIGIN_MISMATCH";
    case DetectionCode::DowngradeBlocked: return "DOWNGRADE_BLOCKED";
    case DetectionCode::AckMissing: return "ACK_MISSING";
    case DetectionCode::PolicyDenied: return "POLICY_DENIED";
    case DetectionCode::DisplayMismatch: return "DISPLAY_MISMATCH";
    case DetectionCode::NotificationAnomaly: return "NOTIFICATION_ANOMALY";
  }
  return "?";
}

std::string Trace::to_jsonl() const {
  std::string out;
  for (const auto& r : records_) {
    Json j;
    j["step"] = r.step;
    j["type"] = r.msg_type;
    j["from"] = r.sender;
    j["to"] = r.receiver;
    j["origin"] = r.origin;
    j["size"] = r.size_bytes;
    j["mac"] = r.mac_present;
    j["tampered"] = r.tampered;
    j["dropped"] = r.dropped;
    out += j.dump();
    out += '\n';
  }
  return out;
}

void Scheduler::send(MessageEnvelope env) {
  bytes_[env.sender].sent += encoded_size(env);
  typed_bytes_[env.sender][env.type] += encoded_size(env);
  queue_.push_back(std::move(env));
}

void Scheduler::detect(DetectionCode code, const EntityId& by, std::string detail) {
  detections.push_back({code, by, delivered_, std::move(detail)});
}

bool Scheduler::deliver_one() {
  if (queue_.empty()) return false;
  MessageEnvelope env = std::move(queue_.front());
  queue_.pop_front();
  int index = delivered_++;
  if (delivered_ > step_budget) throw StepBudgetExceeded();

  TraceRecord rec;
  rec.step = index;
  rec.msg_type = to_string(env.type);
  rec.sender = env.sender.str();
  rec.receiver = env.receiver.str();
  rec.origin = env.origin;
  rec.mac_present = env.mac.has_value();

  if (drop_.count(index)) {
    rec.size_bytes = encoded_size(env);
    rec.dropped = true;
    trace.add(rec);
    return true;
  }

  if (tamper_ && tamper_->first == index) {
    size_t bit = tamper_->second;
    if (bit / 8 < env.payload.size()) {
      env.payload[bit / 8] ^= static_cast<uint8_t>(1u << (bit % 8));
      rec.tampered = true;
    }
  }

  std::vector<MessageEnvelope> to_deliver;
  bool hooked = false;
  for (const auto& hook : hooks_) {
    if (hook.match(env)) {
      to_deliver = hook.transform(env);
      hooked = true;
      break;
    }
  }
  if (!hooked) to_deliver.push_back(env);

  if (to_deliver.empty()) {
    rec.size_bytes = encoded_size(env);
    rec.dropped = true;
    rec.tampered = true;
    trace.add(rec);
    return true;
  }

  bool modified = hooked && !(to_deliver.size() == 1 && to_deliver[0] == env);
  for (auto& out : to_deliver) {
    TraceRecord r = rec;
    r.msg_type = to_string(out.type);
    r.sender = out.sender.str();
    r.receiver = out.receiver.str();
    r.origin = out.origin;
    r.mac_present = out.mac.has_value();
    r.tampered = rec.tampered || modified;
    r.size_bytes = encoded_size(out);
    trace.add(r);
    bytes_[out.receiver].received += encoded_size(out);
    typed_bytes_[out.receiver][out.type] += encoded_size(out);
    auto it = entities_.find(out.receiver);
    if (it != entities_.end()) it->second->handle(out, *this);
  }
  return true;
}

void Scheduler::run() {
  while (deliver_one()) {
  }
}

std::map<EntityId, size_t> Scheduler::bytes_for_types(const std::set<MsgType>& types) const {
  std::map<EntityId, size_t> out;
  for (const auto& [ent, per_type] : typed_bytes_) {
    size_t total = 0;
    for (const auto& [t, n] : per_type) {
      if (types.count(t)) total += n;
    }
    out[ent] = total;
  }
  return out;
}

}  // namespace fidosim
