#include "fidosim/baseline.hpp"

#include <algorithm>

namespace fidosim {

std::string hex(ByteView data) {
  static constexpr char k[] = "0123456789abcdef";
  std::string s;
  s.reserve(data.size() * 2);
  for (uint8_t b : data) {
    s.push_back(k[b >> 4]);
    s.push_back(k[b & 0xf]);
  }
  return s;
}

// --- codecs -----------------------------------------------------------------

Bytes RegistrationRequest::encode() const {
  ByteWriter w;
  w.fixed(challenge);
  w.str(rp_id);
  w.str(rp_name);
  w.str(username);
  w.u8(static_cast<uint8_t>(alg_list.size()));
  for (SigAlg a : alg_list) w.u8(static_cast<uint8_t>(a));
  w.boolean(requires_user_presence);
  w.boolean(first_authenticator);
  return w.take();
}

RegistrationRequest RegistrationRequest::decode(ByteView data) {
  ByteReader r(data);
  RegistrationRequest req;
  req.challenge = r.fixed<32>();
  req.rp_id = r.str();
  req.rp_name = r.str();
  req.username = r.str();
  uint8_t n = r.u8();
  for (uint8_t i = 0; i < n; ++i) {
    uint8_t a = r.u8();
    if (a > static_cast<uint8_t>(SigAlg::StrongEc)) throw MalformedEnvelope("bad alg id");
    req.alg_list.push_back(static_cast<SigAlg>(a));
  }
  req.requires_user_presence = r.boolean();
  req.first_authenticator = r.boolean();
  r.expect_done();
  return req;
}

Bytes CtapRegistrationRequest::encode() const {
  ByteWriter w;
  w.blob(inner.encode());
  w.str(origin);
  w.u8(static_cast<uint8_t>(request_type));
  return w.take();
}

CtapRegistrationRequest CtapRegistrationRequest::decode(ByteView data) {
  ByteReader r(data);
  CtapRegistrationRequest req;
  req.inner = RegistrationRequest::decode(r.blob());
  req.origin = r.str();
  req.request_type = static_cast<CtapRequestType>(r.u8());
  r.expect_done();
  return req;
}

Bytes AttestationResponse::attested_data() const {
  ByteWriter w;
  w.fixed(rp_id_hash.bytes);
  w.fixed(credential_id);
  w.blob(public_key);
  w.u32(counter);
  return w.take();
}

Bytes AttestationResponse::encode() const {
  ByteWriter w;
  w.fixed(credential_id);
  w.blob(public_key);
  w.u8(static_cast<uint8_t>(alg));
  w.fixed(rp_id_hash.bytes);
  w.u32(counter);
  w.blob(attestation_sig);
  w.fixed(client_data_hash.bytes);
  w.str(make_model);
  return w.take();
}

AttestationResponse AttestationResponse::decode(ByteView data) {
  ByteReader r(data);
  AttestationResponse resp;
  resp.credential_id = r.fixed<16>();
  resp.public_key = r.blob();
  resp.alg = static_cast<SigAlg>(r.u8());
  resp.rp_id_hash.bytes = r.fixed<32>();
  resp.counter = r.u32();
  resp.attestation_sig = r.blob();
  resp.client_data_hash.bytes = r.fixed<32>();
  resp.make_model = r.str();
  r.expect_done();
  return resp;
}

Bytes AuthRequest::encode() const {
  ByteWriter w;
  w.fixed(challenge);
  w.str(rp_id);
  w.u8(static_cast<uint8_t>(allowed_credential_ids.size()));
  for (const auto& id : allowed_credential_ids) w.fixed(id);
  return w.take();
}

AuthRequest AuthRequest::decode(ByteView data) {
  ByteReader r(data);
  AuthRequest req;
  req.challenge = r.fixed<32>();
  req.rp_id = r.str();
  uint8_t n = r.u8();
  for (uint8_t i = 0; i < n; ++i) req.allowed_credential_ids.push_back(r.fixed<16>());
  r.expect_done();
  return req;
}

Bytes CtapAuthRequest::encode() const {
  ByteWriter w;
  w.blob(inner.encode());
  w.str(origin);
  return w.take();
}

CtapAuthRequest CtapAuthRequest::decode(ByteView data) {
  ByteReader r(data);
  CtapAuthRequest req;
  req.inner = AuthRequest::decode(r.blob());
  req.origin = r.str();
  r.expect_done();
  return req;
}

Bytes AssertionResponse::signed_data(const Digest& rp_id_hash) const {
  ByteWriter w;
  w.fixed(rp_id_hash.bytes);
  w.u32(counter);
  w.fixed(client_data_hash.bytes);
  return w.take();
}

Bytes AssertionResponse::encode() const {
  ByteWriter w;
  w.fixed(credential_id);
  w.u32(counter);
  w.blob(signature);
  w.fixed(client_data_hash.bytes);
  w.fixed(challenge_echo);
  w.boolean(stored_challenge_hash.has_value());
  if (stored_challenge_hash) w.fixed(stored_challenge_hash->bytes);
  return w.take();
}

AssertionResponse AssertionResponse::decode(ByteView data) {
  ByteReader r(data);
  AssertionResponse resp;
  resp.credential_id = r.fixed<16>();
  resp.counter = r.u32();
  resp.signature = r.blob();
  resp.client_data_hash.bytes = r.fixed<32>();
  resp.challenge_echo = r.fixed<32>();
  if (r.boolean()) {
    Digest d;
    d.bytes = r.fixed<32>();
    resp.stored_challenge_hash = d;
  }
  r.expect_done();
  return resp;
}

Bytes RegistrationAck::encode() const {
  ByteWriter w;
  w.fixed(response_hash.bytes);
  return w.take();
}

RegistrationAck RegistrationAck::decode(ByteView data) {
  ByteReader r(data);
  RegistrationAck ack;
  ack.response_hash.bytes = r.fixed<32>();
  r.expect_done();
  return ack;
}

Bytes NotificationBody::encode() const {
  ByteWriter w;
  w.str(body);
  w.str(nickname);
  w.str(make_model);
  w.boolean(mentions_make_model);
  w.boolean(mentions_total_hsk_count);
  w.u32(total_hsks);
  return w.take();
}

NotificationBody NotificationBody::decode(ByteView data) {
  ByteReader r(data);
  NotificationBody n;
  n.body = r.str();
  n.nickname = r.str();
  n.make_model = r.str();
  n.mentions_make_model = r.boolean();
  n.mentions_total_hsk_count = r.boolean();
  n.total_hsks = r.u32();
  r.expect_done();
  return n;
}

Digest client_data_digest(const Challenge& challenge, const std::string& origin) {
  ByteWriter w;
  w.fixed(challenge);
  w.str(origin);
  Bytes b = w.take();
  return hash(b);
}

// --- policies ---------------------------------------------------------------

const char* to_string(CloneMode m) {
  return m == CloneMode::Counter ? "COUNTER" : "HASHLIST";
}

std::optional<CloneMode> clone_mode_from_string(const std::string& s) {
  if (s == "COUNTER") return CloneMode::Counter;
  if (s == "HASHLIST") return CloneMode::HashList;
  return std::nullopt;
}

namespace {

struct PresetRow {
  const char* name;
  RpPolicy policy;
};

const std::vector<PresetRow>& preset_table() {
  auto make = [](bool attest, AddHskAuth add, bool email, SigAlg min_alg,
                 const char* err, std::optional<int> max = std::nullopt) {
    RpPolicy p;
    p.require_attestation = attest;
    p.auth_before_additional_hsk = add;
    p.sends_registration_email = email;
    p.email_includes_make_model = false;
    p.min_alg = min_alg;
    p.clone_error_style = CloneErrorStyle::Generic;
    p.clone_error_text = err;
    p.max_hsks = max;
    return p;
  };
  static const std::vector<PresetRow> rows = {
      {"facebook", make(false, AddHskAuth::Password, false, SigAlg::StrongEc, "(Page refresh)")},
      {"github", make(false, AddHskAuth::None, true, SigAlg::StrongRsa,
                      "Security key authentication failed")},
      {"boxcryptor", make(true, AddHskAuth::Password, false, SigAlg::StrongEc, "N/A")},
      {"dropbox", make(true, AddHskAuth::Password, true, SigAlg::StrongRsa, "N/A")},
      {"twitter", make(false, AddHskAuth::None, false, SigAlg::StrongRsa,
                       "(technical problem during testing)", 1)},
      {"cloudflare", make(false, AddHskAuth::Password, false, SigAlg::StrongRsa,
                          "Invalid security key used. Please use a security key registered to "
                          "this account.")},
      {"basecamp", make(false, AddHskAuth::None, true, SigAlg::StrongRsa,
                        "We couldn't verify this security key. Make sure you have registered "
                        "it.")},
      {"login.gov", make(false, AddHskAuth::None, false, SigAlg::StrongRsa,
                         "(cloning not detected)")},
      {"shopify", make(false, AddHskAuth::Password, true, SigAlg::StrongRsa,
                       "Couldn't connect to your security key. Try again.")},
      {"1password", make(false, AddHskAuth::None, false, SigAlg::StrongEc,
                         "Unable to verify your security key.")},
  };
  return rows;
}

}  // namespace

std::optional<RpPolicy> rp_preset(const std::string& name) {
  for (const auto& row : preset_table()) {
    if (name == row.name) return row.policy;
  }
  if (name == "custom") return RpPolicy{};
  return std::nullopt;
}

std::vector<std::string> rp_preset_names() {
  std::vector<std::string> names;
  for (const auto& row : preset_table()) names.emplace_back(row.name);
  names.emplace_back("custom");
  return names;
}

UserPolicy vigilant_user() {
  return UserPolicy{.verifies_display = true,
                    .taps_when_prompted = TapBehavior::OnlyIfDisplayMatchesIntent,
                    .reads_notifications = true,
                    .retries_on_double_prompt = false};
}

UserPolicy negligent_user() {
  return UserPolicy{.verifies_display = false,
                    .taps_when_prompted = TapBehavior::Always,
                    .reads_notifications = false,
                    .retries_on_double_prompt = true};
}

// --- user -------------------------------------------------------------------

void UserSim::handle(const MessageEnvelope& env, Scheduler& sched) {
  if (env.type != MsgType::Notify) return;
  NotificationBody body;
  try {
    body = NotificationBody::decode(env.payload);
  } catch (const MalformedEnvelope&) {
    return;
  }
  if (policy_.reads_notifications && body.mentions_make_model) {
    // With device details shown, the user can spot a key they do not own
    // and a second registration email for a device they only added once.
    bool duplicate = std::any_of(notifications_.begin(), notifications_.end(),
                                 [&](const NotificationBody& n) { return n.body == body.body; });
    bool foreign = !expected_make_model.empty() && body.make_model != expected_make_model;
    if (foreign || duplicate) {
      sched.detect(DetectionCode::NotificationAnomaly, id_,
                   foreign ? "unrecognized authenticator make/model"
                           : "duplicate registration notification");
    }
  }
  notifications_.push_back(std::move(body));
}

bool UserSim::decide_tap(const std::optional<DisplayPanel>& panel, Scheduler& sched) {
  if (!policy_.verifies_display || !panel) {
    if (policy_.taps_when_prompted == TapBehavior::Always) return true;
    // No display to check: a careful user only satisfies prompts they
    // initiated, and does not blindly retry a second prompt.
    if (intent.expected_prompts > 0) {
      --intent.expected_prompts;
      return true;
    }
    return policy_.retries_on_double_prompt;
  }
  const DisplayPanel& p = *panel;
  if (p.rp_name != intent.rp_name) {
    sched.detect(DetectionCode::DisplayMismatch, id_,
                 "display shows " + p.rp_name + " but intent is " + intent.rp_name);
    return false;
  }
  if (p.username && *p.username != intent.username) {
    sched.detect(DetectionCode::DisplayMismatch, id_, "display username mismatch");
    return false;
  }
  if (intent.tee_capable && !p.secure_enclave) {
    sched.detect(DetectionCode::DowngradeBlocked, id_,
                 "no secure enclave indicator on a TEE-capable client");
    return false;
  }
  if (p.username && intent.first_registration && !p.is_first_authenticator) {
    sched.detect(DetectionCode::DisplayMismatch, id_,
                 "display reports an authenticator already bound to this account");
    return false;
  }
  if (intent.expected_prompts > 0) --intent.expected_prompts;
  return true;
}

// --- HSK --------------------------------------------------------------------

uint32_t HskSim::next_counter(HskCredential& cred) {
  if (counter_mode == CounterMode::Global) {
    if (global_counter == 0xffffffffu) throw std::overflow_error("counter wrap");
    ++global_counter;
    cred.counter = global_counter;
    return global_counter;
  }
  if (cred.counter == 0xffffffffu) throw std::overflow_error("counter wrap");
  return ++cred.counter;
}

HskSim::Status HskSim::process_registration(const CtapRegistrationRequest& req,
                                            bool channel_secure, Scheduler* sched,
                                            AttestationResponse* out) {
  SigAlg chosen{};
  bool found = false;
  for (SigAlg a : req.inner.alg_list) {
    if (supported_algs.count(a)) {
      chosen = a;
      found = true;
      break;
    }
  }
  if (!found) return Status::NoAcceptableAlgorithm;

  std::optional<DisplayPanel> panel;
  if (display_equipped) {
    panel = DisplayPanel{.rp_name = req.inner.rp_name,
                         .username = req.inner.username,
                         .is_first_authenticator = req.inner.first_authenticator,
                         .secure_enclave = channel_secure,
                         .ack_status = DisplayPanel::AckStatus::Pending};
    last_display = panel;
    if (sched) {
      sched->displays.push_back({sched->current_step(), device_id, panel->rp_name,
                                 req.inner.username, panel->is_first_authenticator,
                                 panel->secure_enclave, "PENDING"});
    }
  }
  if (req.inner.requires_user_presence && !auto_tap) {
    if (!user || !sched || !user->decide_tap(panel, *sched)) return Status::UserPresenceDenied;
  }

  HskCredential cred;
  cred.rp_id = req.inner.rp_id;
  cred.username = req.inner.username;
  cred.keypair = generate_keypair(chosen, *rng_);
  cred.counter = counter_mode == CounterMode::Global ? global_counter : 0;
  if (supports_hash_slot) cred.slot.on_registration(req.inner.challenge);

  CredentialId cid = rng_->bytes16();
  AttestationResponse resp;
  resp.credential_id = cid;
  resp.public_key = cred.keypair.public_key;
  resp.alg = chosen;
  resp.rp_id_hash = hash(req.inner.rp_id);
  resp.counter = cred.counter;
  resp.attestation_sig = sign(attestation_keypair, resp.attested_data());
  resp.client_data_hash = client_data_digest(req.inner.challenge, req.origin);
  resp.make_model = make_model;

  credentials[cid] = std::move(cred);
  last_response_bytes = resp.encode();
  if (out) *out = std::move(resp);
  return Status::Registered;
}

HskSim::Status HskSim::process_authentication(const CtapAuthRequest& req, bool channel_secure,
                                              Scheduler* sched, AssertionResponse* out) {
  HskCredential* cred = nullptr;
  CredentialId cid{};
  for (const auto& allowed : req.inner.allowed_credential_ids) {
    auto it = credentials.find(allowed);
    if (it != credentials.end() && it->second.rp_id == req.inner.rp_id) {
      cred = &it->second;
      cid = allowed;
      break;
    }
  }
  if (!cred) return Status::UnknownCredential;

  std::optional<DisplayPanel> panel;
  if (display_equipped) {
    panel = DisplayPanel{.rp_name = req.inner.rp_id,
                         .username = std::nullopt,
                         .is_first_authenticator = false,
                         .secure_enclave = channel_secure,
                         .ack_status = DisplayPanel::AckStatus::Pending};
    last_display = panel;
    if (sched) {
      sched->displays.push_back({sched->current_step(), device_id, panel->rp_name, "", false,
                                 panel->secure_enclave, ""});
    }
  }
  if (!auto_tap) {
    if (!user || !sched || !user->decide_tap(panel, *sched)) return Status::UserPresenceDenied;
  }

  AssertionResponse resp;
  resp.credential_id = cid;
  resp.counter = next_counter(*cred);
  resp.client_data_hash = client_data_digest(req.inner.challenge, req.origin);
  resp.challenge_echo = req.inner.challenge;
  if (supports_hash_slot && cred->slot.initialized()) {
    resp.stored_challenge_hash = cred->slot.on_authentication(req.inner.challenge);
  }
  resp.signature = sign(cred->keypair, resp.signed_data(hash(req.inner.rp_id)));
  if (out) *out = std::move(resp);
  return Status::Asserted;
}

void HskSim::process_ack(const RegistrationAck& ack, Scheduler& sched) {
  if (!awaiting_ack) return;
  awaiting_ack = false;
  bool match = !last_response_bytes.empty() && ack.response_hash == hash(last_response_bytes);
  if (last_display) {
    last_display->ack_status =
        match ? DisplayPanel::AckStatus::Success : DisplayPanel::AckStatus::Warning;
    sched.displays.push_back({sched.current_step(), device_id, last_display->rp_name,
                              last_display->username.value_or(""),
                              last_display->is_first_authenticator, last_display->secure_enclave,
                              match ? "SUCCESS" : "WARNING"});
  }
  if (!match) {
    sched.detect(DetectionCode::DisplayMismatch, id_, "registration ack hash mismatch");
  }
}

void HskSim::handle(const MessageEnvelope& env, Scheduler& sched) {
  bool from_verifier = env.sender.kind == EntityKind::Verifier;
  bool channel_secure = false;
  if (sk2 && sched.macs_enabled) {
    if (env.mac) {
      if (!check_mac(env, *sk2)) {
        sched.detect(DetectionCode::MacFailure, id_, std::string(to_string(env.type)));
        return;
      }
      channel_secure = true;
    }
    // mac absent with sk2 established: legacy-format message, processed but
    // the display will show no secure-enclave indicator
  } else if (sk2 && !sched.macs_enabled) {
    channel_secure = from_verifier;
  }

  try {
    switch (env.type) {
      case MsgType::RegRequest: {
        // CTAP origin travels in the envelope; the wire body is the RP's
        CtapRegistrationRequest req{RegistrationRequest::decode(env.payload), env.origin,
                                    CtapRequestType::Create};
        AttestationResponse resp;
        Status s = process_registration(req, channel_secure, &sched, &resp);
        if (s != Status::Registered) return;
        MessageEnvelope reply;
        reply.type = MsgType::RegResponse;
        reply.sender = id_;
        reply.receiver = env.sender;
        reply.origin = req.origin;
        reply.payload = resp.encode();
        if (sk2 && sched.macs_enabled && channel_secure) attach_mac(reply, *sk2);
        if (display_equipped) awaiting_ack = true;
        sched.send(std::move(reply));
        break;
      }
      case MsgType::AuthRequest: {
        CtapAuthRequest req{AuthRequest::decode(env.payload), env.origin};
        AssertionResponse resp;
        Status s = process_authentication(req, channel_secure, &sched, &resp);
        if (s != Status::Asserted) return;
        MessageEnvelope reply;
        reply.type = MsgType::AuthResponse;
        reply.sender = id_;
        reply.receiver = env.sender;
        reply.origin = req.origin;
        reply.payload = resp.encode();
        if (sk2 && sched.macs_enabled && channel_secure) attach_mac(reply, *sk2);
        sched.send(std::move(reply));
        break;
      }
      case MsgType::RegAck: {
        process_ack(RegistrationAck::decode(env.payload), sched);
        break;
      }
      default:
        break;
    }
  } catch (const MalformedEnvelope&) {
    // unparseable message is ignored; nothing to respond to
  }
}

void HskSim::finalize_acks(Scheduler& sched) {
  if (!awaiting_ack) return;
  awaiting_ack = false;
  if (last_display) {
    last_display->ack_status = DisplayPanel::AckStatus::Warning;
    sched.displays.push_back({sched.current_step(), device_id, last_display->rp_name,
                              last_display->username.value_or(""),
                              last_display->is_first_authenticator, last_display->secure_enclave,
                              "WARNING"});
  }
  sched.detect(DetectionCode::AckMissing, id_, "no registration acknowledgment received");
}

HskSim HskSim::clone_state(EntityId new_id) const {
  HskSim copy(std::move(new_id), rng_);
  copy.device_id = device_id + "-clone";
  copy.make_model = make_model;
  copy.supported_algs = supported_algs;
  copy.counter_mode = counter_mode;
  copy.global_counter = global_counter;
  copy.attestation_keypair = attestation_keypair;
  copy.attestation_group = attestation_group;
  copy.auto_tap = true;  // the adversary operates the clone
  copy.display_equipped = display_equipped;
  copy.supports_hash_slot = supports_hash_slot;
  copy.clone_mode = clone_mode;
  copy.sk2 = sk2;
  copy.credentials = credentials;
  return copy;
}

Json HskSim::snapshot() const {
  Json j;
  j["device_id"] = device_id;
  j["counter_mode"] = counter_mode == CounterMode::Global ? "GLOBAL" : "PER_CREDENTIAL";
  j["global_counter"] = global_counter;
  Json creds = Json::object();
  for (const auto& [cid, cred] : credentials) {
    Json c;
    c["rp_id"] = cred.rp_id;
    c["counter"] = cred.counter;
    c["hash_c"] = cred.slot.current() ? cred.slot.current()->hex() : "";
    creds[hex(ByteView(cid.data(), cid.size()))] = c;
  }
  j["credentials"] = creds;
  return j;
}

// --- RP ---------------------------------------------------------------------

const char* to_string(RpSim::Status s) {
  switch (s) {
    case RpSim::Status::Ok: return "OK";
    case RpSim::Status::MaxHsksReached: return "MaxHsksReached";
    case RpSim::Status::PolicyDenied: return "PolicyDenied";
    case RpSim::Status::BadSignature: return "BadSignature";
    case RpSim::Status::AttestationRequiredButInvalid: return "AttestationRequiredButInvalid";
    case RpSim::Status::ChallengeMismatch: return "ChallengeMismatch";
    case RpSim::Status::CloneSuspected: return "CloneSuspected";
    case RpSim::Status::UnknownCredential: return "UnknownCredential";
    case RpSim::Status::MacFailure: return "MacFailure";
    case RpSim::Status::ExpiredCookie: return "ExpiredCookie";
    case RpSim::Status::UnknownCookie: return "UnknownCookie";
    case RpSim::Status::CredentialFrozen: return "CredentialFrozen";
  }
  return "?";
}

RpAccount& RpSim::ensure_account(const std::string& username) {
  auto it = accounts_.find(username);
  if (it == accounts_.end()) it = accounts_.emplace(username, RpAccount{username, {}, {}}).first;
  return it->second;
}

RpSim::Status RpSim::fail(Status s, Scheduler*) {
  last_status_ = s;
  return s;
}

RpSim::Status RpSim::begin_registration(const std::string& username, const Route& route,
                                        const AddHskEvidence& evidence, Scheduler& sched) {
  RpAccount& account = ensure_account(username);
  size_t external = 0;
  for (const auto& [cid, cred] : account.credentials) {
    if (!cred.builtin && !cred.frozen) ++external;
  }
  if (policy_.max_hsks && external >= static_cast<size_t>(*policy_.max_hsks))
    return fail(Status::MaxHsksReached, &sched);
  if (external >= 1) {
    bool ok = false;
    switch (policy_.auth_before_additional_hsk) {
      case AddHskAuth::None: ok = true; break;
      case AddHskAuth::Password: ok = evidence.password_ok; break;
      case AddHskAuth::ExistingHsk: ok = evidence.fresh_assertion; break;
    }
    if (!ok) {
      sched.detect(DetectionCode::PolicyDenied, id_, "additional HSK registration denied");
      return fail(Status::PolicyDenied, &sched);
    }
  }

  RegistrationRequest req;
  req.challenge = rng_->bytes32();
  req.rp_id = rp_id_;
  req.rp_name = rp_name_;
  req.username = username;
  for (SigAlg a : {SigAlg::StrongEc, SigAlg::StrongRsa, SigAlg::WeakToy}) {
    if (strength_rank(a) >= strength_rank(policy_.min_alg)) req.alg_list.push_back(a);
  }
  req.requires_user_presence = true;
  req.first_authenticator = external == 0;
  pending_regs_.push_back({req, route});

  MessageEnvelope env;
  env.type = MsgType::RegRequest;
  env.sender = id_;
  env.receiver = route.first_hop;
  env.origin = origin();
  env.payload = req.encode();
  if (route.mac && sched.macs_enabled && sk1) attach_mac(env, *sk1);
  sched.send(std::move(env));
  last_status_ = Status::Ok;
  return Status::Ok;
}

RpSim::Status RpSim::begin_authentication(const std::string& username, const Route& route,
                                          const AuthOptions& opts, Scheduler& sched) {
  auto it = accounts_.find(username);
  if (it == accounts_.end()) return fail(Status::UnknownCredential, &sched);
  RpAccount& account = it->second;

  AuthRequest req;
  req.challenge = rng_->bytes32();
  req.rp_id = rp_id_;
  if (opts.allow_list) {
    req.allowed_credential_ids = *opts.allow_list;
  } else {
    for (const auto& [cid, cred] : account.credentials) {
      if (cred.builtin == opts.builtin && !cred.frozen) req.allowed_credential_ids.push_back(cid);
    }
  }
  if (req.allowed_credential_ids.empty()) return fail(Status::UnknownCredential, &sched);

  if (clone_mode == CloneMode::HashList) {
    Digest h = hash(ByteView(req.challenge.data(), req.challenge.size()));
    for (const auto& cid : req.allowed_credential_ids) {
      auto c = account.credentials.find(cid);
      if (c != account.credentials.end()) c->second.hash_list.add(h);
    }
  }
  pending_auths_.push_back({req, route, opts, username});

  MessageEnvelope env;
  env.type = MsgType::AuthRequest;
  env.sender = id_;
  env.receiver = route.first_hop;
  env.origin = origin();
  env.payload = req.encode();
  if (route.mac && sched.macs_enabled && sk1) attach_mac(env, *sk1);
  sched.send(std::move(env));
  last_status_ = Status::Ok;
  return Status::Ok;
}

void RpSim::handle(const MessageEnvelope& env, Scheduler& sched) {
  if (env.type != MsgType::RegResponse && env.type != MsgType::AuthResponse) return;
  // An account served over the authenticated channel accepts nothing
  // unauthenticated; the check runs before any parsing or state change.
  if (sk1 && sched.macs_enabled) {
    if (!env.mac || !check_mac(env, *sk1)) {
      sched.detect(DetectionCode::MacFailure, id_, std::string(to_string(env.type)));
      last_status_ = Status::MacFailure;
      return;
    }
  }
  try {
    switch (env.type) {
      case MsgType::RegResponse:
        finish_registration(AttestationResponse::decode(env.payload), env, sched);
        break;
      case MsgType::AuthResponse:
        finish_authentication(AssertionResponse::decode(env.payload), env, sched);
        break;
      default:
        break;
    }
  } catch (const MalformedEnvelope&) {
    last_status_ = Status::BadSignature;
  }
}

RpSim::Status RpSim::finish_registration(const AttestationResponse& resp,
                                         const MessageEnvelope& env, Scheduler& sched) {
  auto match = pending_regs_.end();
  for (auto it = pending_regs_.begin(); it != pending_regs_.end(); ++it) {
    if (client_data_digest(it->request.challenge, origin()) == resp.client_data_hash) {
      match = it;
      break;
    }
  }
  if (match == pending_regs_.end()) return fail(Status::ChallengeMismatch, &sched);

  const RegistrationRequest& req = match->request;
  if (resp.rp_id_hash != hash(rp_id_)) return fail(Status::BadSignature, &sched);
  if (std::find(req.alg_list.begin(), req.alg_list.end(), resp.alg) == req.alg_list.end())
    return fail(Status::BadSignature, &sched);
  if (policy_.require_attestation) {
    bool attested = false;
    for (const auto& [group, key] : trusted_attestation_keys) {
      if (verify(SigAlg::StrongEc, key, resp.attested_data(), resp.attestation_sig)) {
        attested = true;
        break;
      }
    }
    if (!attested) return fail(Status::AttestationRequiredButInvalid, &sched);
  }

  RpAccount& account = ensure_account(req.username);
  RpCredential cred;
  cred.public_key = resp.public_key;
  cred.alg = resp.alg;
  cred.counter = resp.counter;
  cred.nickname = "key-" + std::to_string(account.credentials.size() + 1);
  cred.make_model = resp.make_model;
  cred.builtin = resp.make_model == kBuiltinMakeModel;
  if (clone_mode == CloneMode::HashList) {
    cred.hash_list.add(hash(ByteView(req.challenge.data(), req.challenge.size())));
  }
  account.credentials[resp.credential_id] = std::move(cred);
  emit_registration_notification(account, account.credentials[resp.credential_id], sched);

  if (match->route.mac) {
    RegistrationAck ack{hash(env.payload)};
    MessageEnvelope ack_env;
    ack_env.type = MsgType::RegAck;
    ack_env.sender = id_;
    ack_env.receiver = env.sender;
    ack_env.origin = origin();
    ack_env.payload = ack.encode();
    if (sched.macs_enabled && sk1) attach_mac(ack_env, *sk1);
    sched.send(std::move(ack_env));
  }
  pending_regs_.erase(match);
  last_status_ = Status::Ok;
  return Status::Ok;
}

RpSim::Status RpSim::finish_authentication(const AssertionResponse& resp,
                                           const MessageEnvelope&, Scheduler& sched) {
  auto match = pending_auths_.end();
  for (auto it = pending_auths_.begin(); it != pending_auths_.end(); ++it) {
    if (it->request.challenge == resp.challenge_echo) {
      match = it;
      break;
    }
  }
  if (match == pending_auths_.end()) return fail(Status::ChallengeMismatch, &sched);

  RpAccount& account = ensure_account(match->username);
  auto cit = account.credentials.find(resp.credential_id);
  if (cit == account.credentials.end()) return fail(Status::UnknownCredential, &sched);
  RpCredential& cred = cit->second;
  if (cred.frozen) {
    last_error_text_ = policy_.clone_error_style == CloneErrorStyle::Generic
                           ? policy_.clone_error_text
                           : kSpecificCloneError;
    return fail(Status::CredentialFrozen, &sched);
  }
  if (resp.client_data_hash != client_data_digest(match->request.challenge, origin()))
    return fail(Status::ChallengeMismatch, &sched);
  if (!verify(cred.alg, cred.public_key, resp.signed_data(hash(rp_id_)), resp.signature))
    return fail(Status::BadSignature, &sched);

  if (clone_mode == CloneMode::HashList && resp.stored_challenge_hash) {
    if (cred.hash_list.consume(*resp.stored_challenge_hash) ==
        HashListState::Result::CloneDetected) {
      clone_detected(account, cred, sched, true);
      pending_auths_.erase(match);
      return fail(Status::CloneSuspected, &sched);
    }
    cred.counter = resp.counter;
  } else {
    // counter mode, or a legacy counter-only HSK under a hash-list RP.
    // A stale counter is reported but not frozen, matching deployed RP
    // behavior: the device advanced its counter anyway, so a retry passes.
    if (resp.counter <= cred.counter) {
      clone_detected(account, cred, sched, false);
      pending_auths_.erase(match);
      return fail(Status::CloneSuspected, &sched);
    }
    cred.counter = resp.counter;
  }

  sched.sessions.push_back({rp_id_, match->username, match->opts.requester,
                            match->opts.builtin ? "BUILTIN" : "HSK", sched.current_step()});
  if (match->opts.remember_selected) {
    RememberCookie cookie;
    cookie.value = rng_->bytes32();
    cookie.username = match->username;
    cookie.expiry_day = sched.day + policy_.remember_device_days;
    issued_cookies_.push_back(cookie);
  }
  pending_auths_.erase(match);
  last_status_ = Status::Ok;
  return Status::Ok;
}

RpSim::Status RpSim::accept_cookie(const std::array<uint8_t, 32>& value, bool password_ok,
                                   const EntityId& requester, Scheduler& sched) {
  auto it = std::find_if(issued_cookies_.begin(), issued_cookies_.end(),
                         [&](const RememberCookie& c) { return c.value == value; });
  if (it == issued_cookies_.end()) return fail(Status::UnknownCookie, &sched);
  if (sched.day > it->expiry_day) return fail(Status::ExpiredCookie, &sched);
  if (!password_ok) return fail(Status::PolicyDenied, &sched);
  sched.sessions.push_back({rp_id_, it->username, requester, "COOKIE", sched.current_step()});
  last_status_ = Status::Ok;
  return Status::Ok;
}

void RpSim::emit_registration_notification(const RpAccount& account, const RpCredential& cred,
                                           Scheduler& sched) {
  if (!policy_.sends_registration_email) return;
  NotificationBody body;
  body.mentions_make_model = policy_.email_includes_make_model;
  body.mentions_total_hsk_count = policy_.email_includes_make_model;
  if (policy_.email_includes_make_model) {
    body.nickname = cred.nickname;
    body.make_model = cred.make_model;
    body.total_hsks = static_cast<uint32_t>(account.credentials.size());
    body.body = "Security key \"" + cred.nickname + "\" (" + cred.make_model +
                ") was added to your account. Keys on account: " +
                std::to_string(body.total_hsks) + ".";
  } else {
    // The analyzed services all send an identical email with no device details.
    body.body = "A new security key was added to your " + rp_name_ + " account.";
  }
  ensure_account(account.username).notification_outbox.push_back(body);

  MessageEnvelope env;
  env.type = MsgType::Notify;
  env.sender = id_;
  env.receiver = user_id;
  env.origin = origin();
  env.payload = body.encode();
  sched.send(std::move(env));
}

void RpSim::clone_detected(RpAccount& account, RpCredential& cred, Scheduler& sched,
                           bool freeze) {
  if (freeze) cred.frozen = true;
  last_error_text_ = policy_.clone_error_style == CloneErrorStyle::Generic
                         ? policy_.clone_error_text
                         : kSpecificCloneError;
  sched.detect(DetectionCode::DeviceCloningDetected, id_, last_error_text_);

  NotificationBody body;
  body.body = "Suspicious security key activity detected on your account.";
  account.notification_outbox.push_back(body);
  MessageEnvelope env;
  env.type = MsgType::Notify;
  env.sender = id_;
  env.receiver = user_id;
  env.origin = origin();
  env.payload = body.encode();
  sched.send(std::move(env));
}

Json RpSim::snapshot() const {
  Json j;
  j["rp_id"] = rp_id_;
  j["clone_mode"] = to_string(clone_mode);
  Json accounts = Json::object();
  for (const auto& [name, account] : accounts_) {
    Json creds = Json::object();
    for (const auto& [cid, cred] : account.credentials) {
      Json c;
      c["alg"] = to_string(cred.alg);
      c["counter"] = cred.counter;
      c["frozen"] = cred.frozen;
      c["builtin"] = cred.builtin;
      Json hl = Json::array();
      for (const auto& d : cred.hash_list.entries()) hl.push_back(d.hex());
      c["hash_list"] = hl;
      creds[hex(ByteView(cid.data(), cid.size()))] = c;
    }
    accounts[name] = creds;
  }
  j["accounts"] = accounts;
  return j;
}

// --- client -----------------------------------------------------------------

void ClientSim::handle(const MessageEnvelope& env, Scheduler& sched) {
  if (env.sender.kind == EntityKind::Rp || env.sender.kind == EntityKind::Adversary) {
    if (env.type == MsgType::RegAck && mode == ClientMode::VerifierRelay) {
      MessageEnvelope fwd = env;
      fwd.sender = id_;
      fwd.receiver = verifier_id;
      sched.send(std::move(fwd));
      return;
    }
    if (env.type != MsgType::RegRequest && env.type != MsgType::AuthRequest) return;

    if (env.type == MsgType::AuthRequest && env.origin != page_origin &&
        !iframe_permissions.count(env.origin)) {
      refusals.push_back("cross-origin authentication request from " + env.origin + " refused");
      return;
    }

    // relay the body untouched; the frame origin travels in the envelope
    try {
      if (env.type == MsgType::RegRequest) {
        auto req = RegistrationRequest::decode(env.payload);
        return_routes_[client_data_digest(req.challenge, env.origin).hex()] = env.sender;
      } else {
        auto req = AuthRequest::decode(env.payload);
        return_routes_[hex(ByteView(req.challenge.data(), req.challenge.size()))] = env.sender;
      }
    } catch (const MalformedEnvelope&) {
      // forward anyway; an authenticated receiver rejects it, and the
      // response path falls back to default_rp
    }
    MessageEnvelope fwd = env;
    fwd.sender = id_;
    fwd.receiver = mode == ClientMode::VerifierRelay ? verifier_id : hsk_id;
    sched.send(std::move(fwd));
    return;
  }

  if (env.sender.kind == EntityKind::Hsk || env.sender.kind == EntityKind::Verifier) {
    if (env.type != MsgType::AuthResponse && env.type != MsgType::RegResponse) return;
    // route the response back to the RP that issued the request
    EntityId target = default_rp;
    try {
      std::string key;
      if (env.type == MsgType::AuthResponse) {
        auto resp = AssertionResponse::decode(env.payload);
        key = hex(ByteView(resp.challenge_echo.data(), resp.challenge_echo.size()));
      } else {
        auto resp = AttestationResponse::decode(env.payload);
        key = resp.client_data_hash.hex();
      }
      auto it = return_routes_.find(key);
      if (it != return_routes_.end()) target = it->second;
    } catch (const MalformedEnvelope&) {
    }
    if (target.name.empty()) {
      refusals.push_back("response with no matching request dropped");
      return;
    }
    MessageEnvelope fwd = env;
    fwd.sender = id_;
    fwd.receiver = target;
    sched.send(std::move(fwd));
  }
}

}  // namespace fidosim
