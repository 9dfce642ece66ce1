#pragma once

#include <deque>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "fidosim/core.hpp"
#include "vendor_json.hpp"

namespace fidosim {

using Json = nlohmann::ordered_json;

/// Standardized error codes carried to the client, plus user/display-side
/// events the simulator surfaces the same way.
enum class DetectionCode {
  DeviceCloningDetected,
  MacFailure,
  OriginMismatch,
  DowngradeBlocked,
  AckMissing,
  PolicyDenied,
  DisplayMismatch,
  NotificationAnomaly,
};
const char* to_string(DetectionCode c);

struct DetectionEvent {
  DetectionCode code;
  EntityId by;
  int step = 0;
  std::string detail;
};

struct SessionRecord {
  std::string rp;
  std::string username;
  EntityId requester;   // device that initiated and completed the login
  std::string via;      // "HSK", "COOKIE", "BUILTIN"
  int step = 0;
};

struct DisplaySnapshot {
  int step = 0;
  std::string device;
  std::string rp_name;
  std::string username;
  bool is_first_authenticator = false;
  bool secure_enclave = false;
  std::string ack_status;  // PENDING / SUCCESS / WARNING / empty
};

struct TraceRecord {
  int step = 0;
  std::string msg_type;
  std::string sender;
  std::string receiver;
  std::string origin;
  size_t size_bytes = 0;
  bool mac_present = false;
  bool tampered = false;
  bool dropped = false;
};

class Trace {
 public:
  void add(TraceRecord r) { records_.push_back(std::move(r)); }
  const std::vector<TraceRecord>& records() const { return records_; }
  /// JSON-lines, one record per line, hex digests, deterministic ordering.
  std::string to_jsonl() const;

 private:
  std::vector<TraceRecord> records_;
};

class Scheduler;

class Entity {
 public:
  virtual ~Entity() = default;
  virtual const EntityId& id() const = 0;
  virtual void handle(const MessageEnvelope& env, Scheduler& sched) = 0;
  virtual Json snapshot() const { return Json::object(); }
};

/// A1's interception interface: hooks can read, modify, drop, or inject
/// envelopes but see nothing beyond the envelope itself.
struct InterceptorHook {
  std::function<bool(const MessageEnvelope&)> match;
  std::function<std::vector<MessageEnvelope>(const MessageEnvelope&)> transform;
};

struct ByteCounter {
  size_t sent = 0;
  size_t received = 0;
};

class StepBudgetExceeded : public std::runtime_error {
 public:
  StepBudgetExceeded() : std::runtime_error("scenario step budget exceeded") {}
};

/// Single-queue round-based deliverer. Within a round, envelopes are
/// delivered in enqueue order; hooks run synchronously inside the
/// delivery step.
class Scheduler {
 public:
  Trace trace;
  std::vector<DetectionEvent> detections;
  std::vector<SessionRecord> sessions;
  std::vector<DisplaySnapshot> displays;
  int day = 0;            // coarse scenario clock for cookie expiry
  bool macs_enabled = true;
  int step_budget = 4096;

  void register_entity(Entity& e) { entities_[e.id()] = &e; }
  void add_hook(InterceptorHook hook) { hooks_.push_back(std::move(hook)); }
  void clear_hooks() { hooks_.clear(); }
  void set_drop_pattern(std::set<int> indices) { drop_ = std::move(indices); }

  /// Flip one bit of the payload of the envelope delivered at `index`.
  void set_tamper(int index, size_t bit) { tamper_ = {index, bit}; }

  void send(MessageEnvelope env);
  bool deliver_one();
  /// Deliver until the queue is empty.
  void run();

  int delivered() const { return delivered_; }
  int current_step() const { return delivered_; }
  bool queue_empty() const { return queue_.empty(); }

  void detect(DetectionCode code, const EntityId& by, std::string detail = "");

  const std::map<EntityId, ByteCounter>& byte_counters() const { return bytes_; }
  /// Sum of sent+received bytes for envelopes of the given types, per entity.
  std::map<EntityId, size_t> bytes_for_types(const std::set<MsgType>& types) const;

 private:
  std::deque<MessageEnvelope> queue_;
  std::map<EntityId, Entity*> entities_;
  std::vector<InterceptorHook> hooks_;
  std::set<int> drop_;
  std::optional<std::pair<int, size_t>> tamper_;
  std::map<EntityId, ByteCounter> bytes_;
  // per-entity, per-msg-type byte totals for overhead accounting
  std::map<EntityId, std::map<MsgType, size_t>> typed_bytes_;
  int delivered_ = 0;
};

}  // namespace fidosim
