#include "fidosim/vfido2.hpp"

#include <algorithm>

namespace fidosim {

Digest verifier_measurement(const std::string& identity, uint32_t version) {
  ByteWriter w;
  w.str(identity);
  w.u32(version);
  Bytes b = w.take();
  return hash(b);
}

Bytes AttestationReport::canonical() const {
  ByteWriter w;
  w.fixed(measurement.bytes);
  w.fixed(kex_public);
  w.str(platform_id);
  return w.take();
}

Bytes AttestationReport::encode() const {
  ByteWriter w;
  w.raw(canonical());
  w.blob(service_signature);
  return w.take();
}

AttestationReport AttestationReport::decode(ByteView data) {
  ByteReader r(data);
  AttestationReport rep;
  rep.measurement.bytes = r.fixed<32>();
  rep.kex_public = r.fixed<32>();
  rep.platform_id = r.str();
  rep.service_signature = r.blob();
  r.expect_done();
  return rep;
}

AttestationReport AttestationService::issue(const Digest& measurement,
                                            const std::array<uint8_t, 32>& kex_public,
                                            const std::string& platform_id) const {
  AttestationReport rep;
  rep.measurement = measurement;
  rep.kex_public = kex_public;
  rep.platform_id = platform_id;
  rep.service_signature = sign(keypair_, rep.canonical());
  return rep;
}

bool verify_report(const Bytes& service_public, const AttestationReport& report) {
  return verify(SigAlg::StrongEc, service_public, report.canonical(), report.service_signature);
}

const char* to_string(AttestOutcome o) {
  switch (o) {
    case AttestOutcome::Ok: return "OK";
    case AttestOutcome::NoTee: return "NO_TEE";
    case AttestOutcome::MeasurementMismatch: return "MEASUREMENT_MISMATCH";
    case AttestOutcome::BadServiceSignature: return "BAD_SERVICE_SIGNATURE";
  }
  return "?";
}

FallbackDecision negotiate_fallback(bool client_claims_tee, bool account_requires_tee) {
  if (!client_claims_tee) {
    if (account_requires_tee) return {ProtocolVariant::VFido2, true};
    return {ProtocolVariant::Legacy, false};
  }
  return {ProtocolVariant::VFido2, false};
}

std::optional<AttestationReport> VerifierSim::produce_report(const AttestationService& svc) {
  if (!tee_present) return std::nullopt;
  kex_ = generate_kex_keypair(*rng_);
  return svc.issue(measurement, kex_.public_key, platform_id);
}

SymmetricKey VerifierSim::finish_attestation(const std::array<uint8_t, 32>& peer_public) const {
  return derive_shared_key(kex_, peer_public);
}

void VerifierSim::install_key(Role role, const std::string& rp_id, const SymmetricKey& key) {
  if (role == Role::RpChannel) {
    sk1_by_rp_[rp_id] = key;
  } else {
    sk2_ = key;
  }
}

ChannelResult establish_channel(VerifierSim& v, VerifierSim::Role role, const std::string& rp_id,
                                const AttestationService& svc, const Digest& expected_measurement,
                                const Bytes& service_public, Rng& peer_rng) {
  auto report = v.produce_report(svc);
  if (!report) return {AttestOutcome::NoTee, std::nullopt};
  if (!verify_report(service_public, *report))
    return {AttestOutcome::BadServiceSignature, std::nullopt};
  if (!(report->measurement == expected_measurement))
    return {AttestOutcome::MeasurementMismatch, std::nullopt};
  KexKeyPair peer = generate_kex_keypair(peer_rng);
  SymmetricKey peer_key = derive_shared_key(peer, report->kex_public);
  v.install_key(role, rp_id, v.finish_attestation(peer.public_key));
  return {AttestOutcome::Ok, peer_key};
}

VerifierSim::BuiltinStatus VerifierSim::arm_builtin(const std::string& rp_id,
                                                    bool fresh_external_assertion,
                                                    int remember_days, int today) {
  if (!fresh_external_assertion) return BuiltinStatus::ApprovalRequired;
  armed_rp_ids_.insert(rp_id);
  remember_expiry_day = today + remember_days;
  return BuiltinStatus::Ok;
}

SymmetricKey VerifierSim::sealing_key() const {
  ByteWriter w;
  w.fixed(measurement.bytes);
  w.str(platform_id);
  Bytes b = w.take();
  return SymmetricKey{hash(b).bytes};
}

Bytes VerifierSim::seal_builtin() const {
  ByteWriter w;
  w.u32(static_cast<uint32_t>(builtin_credentials.size()));
  for (const auto& [cid, cred] : builtin_credentials) {
    w.fixed(cid);
    w.str(cred.rp_id);
    w.str(cred.username);
    w.u8(static_cast<uint8_t>(cred.keypair.alg));
    w.blob(cred.keypair.public_key);
    w.blob(cred.keypair.private_key);
    w.u32(cred.counter);
    w.boolean(cred.slot.initialized());
    if (cred.slot.initialized()) w.fixed(cred.slot.current()->bytes);
  }
  Bytes payload = w.take();
  MacTag tag = mac_tag(sealing_key(), payload);
  ByteWriter out;
  out.blob(payload);
  out.fixed(tag.bytes);
  return out.take();
}

VerifierSim::SealStatus VerifierSim::load_sealed(ByteView blob) {
  try {
    ByteReader r(blob);
    Bytes payload = r.blob();
    MacTag tag;
    tag.bytes = r.fixed<32>();
    r.expect_done();
    if (!mac_verify(sealing_key(), payload, tag)) return SealStatus::SealCorrupted;

    std::map<CredentialId, BuiltinCredential> loaded;
    ByteReader p(payload);
    uint32_t n = p.u32();
    for (uint32_t i = 0; i < n; ++i) {
      BuiltinCredential cred;
      CredentialId cid = p.fixed<16>();
      cred.id = cid;
      cred.rp_id = p.str();
      cred.username = p.str();
      cred.keypair.alg = static_cast<SigAlg>(p.u8());
      cred.keypair.public_key = p.blob();
      cred.keypair.private_key = p.blob();
      cred.counter = p.u32();
      if (p.boolean()) {
        Digest d;
        d.bytes = p.fixed<32>();
        cred.slot.restore(d);
      }
      loaded.emplace(cid, std::move(cred));
    }
    p.expect_done();
    builtin_credentials = std::move(loaded);
    return SealStatus::Ok;
  } catch (const MalformedEnvelope&) {
    return SealStatus::SealCorrupted;
  }
}

bool VerifierSim::mac_ok_sk1(const MessageEnvelope& env) const {
  if (!env.mac) return false;
  for (const auto& [rp_id, key] : sk1_by_rp_) {
    if (check_mac(env, key)) return true;
  }
  return false;
}

void VerifierSim::handle(const MessageEnvelope& env, Scheduler& sched) {
  switch (env.type) {
    case MsgType::RegRequest:
    case MsgType::AuthRequest:
    case MsgType::RegAck:
      relay_request(env, sched);
      break;
    case MsgType::RegResponse:
    case MsgType::AuthResponse:
      relay_response(env, sched);
      break;
    default:
      break;
  }
}

void VerifierSim::relay_request(const MessageEnvelope& env, Scheduler& sched) {
  if (sched.macs_enabled && !sk1_by_rp_.empty() && !mac_ok_sk1(env)) {
    sched.detect(DetectionCode::MacFailure, id_, std::string(to_string(env.type)));
    return;
  }

  if (env.type == MsgType::RegAck) {
    if (!awaiting_hsk_ack_) {
      // ack for a registration answered inside the enclave; nothing to forward
      return;
    }
    awaiting_hsk_ack_ = false;
    MessageEnvelope fwd = env;
    fwd.sender = id_;
    fwd.receiver = hsk_id;
    fwd.mac.reset();
    if (sched.macs_enabled && sk2_) attach_mac(fwd, *sk2_);
    sched.send(std::move(fwd));
    return;
  }

  try {
    if (env.type == MsgType::RegRequest) {
      auto req = RegistrationRequest::decode(env.payload);
      if (env.origin != "https://" + req.rp_id) {
        sched.detect(DetectionCode::OriginMismatch, id_,
                     env.origin + " requested credentials for " + req.rp_id);
        return;
      }
      if (armed_rp_ids_.count(req.rp_id)) {
        answer_builtin_registration(req, env.origin, req.rp_id, sched);
        return;
      }
      pending_rp_[client_data_digest(req.challenge, env.origin).hex()] = req.rp_id;
      awaiting_hsk_ack_ = true;
    } else {
      auto req = AuthRequest::decode(env.payload);
      if (env.origin != "https://" + req.rp_id) {
        sched.detect(DetectionCode::OriginMismatch, id_,
                     env.origin + " requested credentials for " + req.rp_id);
        return;
      }
      if (answer_builtin_auth(req, env.origin, req.rp_id, sched)) return;
      pending_rp_[hex(ByteView(req.challenge.data(), req.challenge.size()))] = req.rp_id;
    }
  } catch (const MalformedEnvelope&) {
    refusals.push_back("unparseable request dropped");
    return;
  }

  MessageEnvelope fwd = env;
  fwd.sender = id_;
  fwd.receiver = hsk_id;
  fwd.mac.reset();
  if (sched.macs_enabled && sk2_) attach_mac(fwd, *sk2_);
  sched.send(std::move(fwd));
}

void VerifierSim::relay_response(const MessageEnvelope& env, Scheduler& sched) {
  if (sched.macs_enabled && sk2_) {
    if (!env.mac || !check_mac(env, *sk2_)) {
      sched.detect(DetectionCode::MacFailure, id_, std::string(to_string(env.type)));
      return;
    }
  }

  std::string key;
  try {
    if (env.type == MsgType::AuthResponse) {
      auto resp = AssertionResponse::decode(env.payload);
      key = hex(ByteView(resp.challenge_echo.data(), resp.challenge_echo.size()));
    } else {
      auto resp = AttestationResponse::decode(env.payload);
      key = resp.client_data_hash.hex();
    }
  } catch (const MalformedEnvelope&) {
    refusals.push_back("unparseable response dropped");
    return;
  }

  const SymmetricKey* out_key = nullptr;
  auto it = pending_rp_.find(key);
  if (it != pending_rp_.end()) {
    auto kit = sk1_by_rp_.find(it->second);
    if (kit != sk1_by_rp_.end()) out_key = &kit->second;
    pending_rp_.erase(it);
  } else if (sk1_by_rp_.size() == 1) {
    out_key = &sk1_by_rp_.begin()->second;
  }
  if (!out_key && sched.macs_enabled && !sk1_by_rp_.empty()) {
    refusals.push_back("response with no matching request dropped");
    return;
  }

  MessageEnvelope fwd = env;
  fwd.sender = id_;
  fwd.receiver = client_id;
  fwd.mac.reset();
  if (sched.macs_enabled && out_key) attach_mac(fwd, *out_key);
  sched.send(std::move(fwd));
}

void VerifierSim::answer_builtin_registration(const RegistrationRequest& req,
                                              const std::string& origin,
                                              const std::string& sk1_key, Scheduler& sched) {
  SigAlg chosen = SigAlg::StrongEc;
  for (SigAlg a : req.alg_list) {
    if (a != SigAlg::WeakToy) {
      chosen = a;
      break;
    }
  }

  BuiltinCredential cred;
  cred.rp_id = req.rp_id;
  cred.username = req.username;
  cred.id = rng_->bytes16();
  cred.keypair = generate_keypair(chosen, *rng_);
  cred.counter = 0;
  cred.slot.on_registration(req.challenge);

  AttestationResponse resp;
  resp.credential_id = cred.id;
  resp.public_key = cred.keypair.public_key;
  resp.alg = chosen;
  resp.rp_id_hash = hash(req.rp_id);
  resp.counter = 0;
  resp.attestation_sig = sign(platform_attestation_keypair, resp.attested_data());
  resp.client_data_hash = client_data_digest(req.challenge, origin);
  resp.make_model = kBuiltinMakeModel;

  builtin_credentials[cred.id] = std::move(cred);
  armed_rp_ids_.erase(req.rp_id);

  MessageEnvelope reply;
  reply.type = MsgType::RegResponse;
  reply.sender = id_;
  reply.receiver = client_id;
  reply.origin = origin;
  reply.payload = resp.encode();
  auto kit = sk1_by_rp_.find(sk1_key);
  if (sched.macs_enabled && kit != sk1_by_rp_.end()) attach_mac(reply, kit->second);
  sched.send(std::move(reply));
}

bool VerifierSim::answer_builtin_auth(const AuthRequest& req, const std::string& origin,
                                      const std::string& sk1_key, Scheduler& sched) {
  BuiltinCredential* cred = nullptr;
  for (const auto& allowed : req.allowed_credential_ids) {
    auto it = builtin_credentials.find(allowed);
    if (it != builtin_credentials.end() && it->second.rp_id == req.rp_id) {
      cred = &it->second;
      break;
    }
  }
  if (!cred) return false;
  if (sched.day > remember_expiry_day) {
    refusals.push_back("remember period expired for " + req.rp_id);
    return true;
  }

  AssertionResponse resp;
  resp.credential_id = cred->id;
  resp.counter = ++cred->counter;
  resp.client_data_hash = client_data_digest(req.challenge, origin);
  resp.challenge_echo = req.challenge;
  resp.stored_challenge_hash = cred->slot.on_authentication(req.challenge);
  resp.signature = sign(cred->keypair, resp.signed_data(hash(req.rp_id)));

  MessageEnvelope reply;
  reply.type = MsgType::AuthResponse;
  reply.sender = id_;
  reply.receiver = client_id;
  reply.origin = origin;
  reply.payload = resp.encode();
  auto kit = sk1_by_rp_.find(sk1_key);
  if (sched.macs_enabled && kit != sk1_by_rp_.end()) attach_mac(reply, kit->second);
  sched.send(std::move(reply));
  return true;
}

Json VerifierSim::snapshot() const {
  Json j;
  j["platform_id"] = platform_id;
  j["tee_present"] = tee_present;
  j["measurement"] = measurement.hex();
  j["remember_expiry_day"] = remember_expiry_day;
  Json armed = Json::array();
  for (const auto& r : armed_rp_ids_) armed.push_back(r);
  j["armed"] = armed;
  Json creds = Json::object();
  for (const auto& [cid, cred] : builtin_credentials) {
    Json c;
    c["rp_id"] = cred.rp_id;
    c["counter"] = cred.counter;
    c["hash_c"] = cred.slot.current() ? cred.slot.current()->hex() : "";
    creds[hex(ByteView(cid.data(), cid.size()))] = c;
  }
  j["builtin"] = creds;
  return j;
}

}  // namespace fidosim
