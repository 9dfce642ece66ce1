#include "fidosim/harness.hpp"

#include <algorithm>
#include <sstream>

namespace fidosim {

const char* to_string(Protocol p) { return p == Protocol::Fido2 ? "FIDO2" : "VFIDO2"; }

std::optional<Protocol> protocol_from_string(const std::string& s) {
  if (s == "FIDO2") return Protocol::Fido2;
  if (s == "VFIDO2") return Protocol::VFido2;
  return std::nullopt;
}

namespace {

RpPolicy scenario_policy(const ScenarioConfig& cfg) {
  auto preset = rp_preset(cfg.rp_preset);
  if (!preset) throw std::invalid_argument("unknown RP preset: " + cfg.rp_preset);
  RpPolicy policy = *preset;
  if (cfg.protocol == Protocol::VFido2) {
    // hardened deployments gate additional authenticators on a fresh
    // assertion from an already-bound key
    policy.auth_before_additional_hsk = AddHskAuth::ExistingHsk;
  }
  if (cfg.attack == AttackId::SigDowngrade) {
    // the downgrade needs an RP that still advertises the legacy algorithm
    policy.min_alg = SigAlg::WeakToy;
  }
  return policy;
}

}  // namespace

Scenario::Scenario(const ScenarioConfig& config)
    : cfg(config),
      rp_id(config.rp_preset),
      rp_id_b(config.rp_preset + "-b"),
      rng(config.seed),
      svc(rng),
      user({EntityKind::User, "user"}, config.vigilant ? vigilant_user() : negligent_user()),
      client({EntityKind::Client, "webauthn"}),
      hsk({EntityKind::Hsk, "hsk-main"}, &rng),
      adv_hsk({EntityKind::Hsk, "hsk-evil"}, &rng),
      verifier({EntityKind::Verifier, "verifier"}, &rng),
      rp({EntityKind::Rp, "rp"}, rp_id, rp_id, scenario_policy(config), &rng),
      rp_b({EntityKind::Rp, "rp-b"}, rp_id_b, rp_id_b, scenario_policy(config), &rng),
      adv({EntityKind::Adversary, "adversary"}, &rng) {
  sched.set_drop_pattern(cfg.drop);

  bool hardened = cfg.protocol == Protocol::VFido2;
  user.intent = {rp_id, kVictimUser, true, hardened, 0};
  user.expected_make_model = hsk.make_model;

  client.page_origin = "https://" + rp_id;
  client.hsk_id = hsk.id();
  client.verifier_id = verifier.id();
  client.default_rp = rp.id();
  client.mode = hardened ? ClientMode::VerifierRelay : ClientMode::Baseline;

  hsk.device_id = "hsk-main";
  hsk.user = &user;
  hsk.clone_mode = cfg.clone_mode;
  hsk.supports_hash_slot = cfg.clone_mode == CloneMode::HashList;
  hsk.display_equipped = hardened;
  hsk.attestation_group = "yubico-group-1";
  hsk.attestation_keypair = generate_keypair(SigAlg::StrongEc, rng);

  adv_hsk.device_id = "hsk-evil";
  adv_hsk.make_model = hsk.make_model;  // same retail model as the victim's
  adv_hsk.auto_tap = true;
  adv_hsk.clone_mode = cfg.clone_mode;
  adv_hsk.supports_hash_slot = hsk.supports_hash_slot;
  adv_hsk.attestation_group = "unknown";
  adv_hsk.attestation_keypair = generate_keypair(SigAlg::StrongEc, rng);

  for (RpSim* r : {&rp, &rp_b}) {
    r->clone_mode = cfg.clone_mode;
    r->user_id = user.id();
    r->trusted_attestation_keys["yubico-group-1"] = hsk.attestation_keypair.public_key;
  }

  if (hardened) {
    verifier.hsk_id = hsk.id();
    verifier.client_id = client.id();
    verifier.platform_attestation_keypair = generate_keypair(SigAlg::StrongEc, rng);
    rp.trusted_attestation_keys["platform-tee"] =
        verifier.platform_attestation_keypair.public_key;
    rp_b.trusted_attestation_keys["platform-tee"] =
        verifier.platform_attestation_keypair.public_key;

    auto ch_rp = establish_channel(verifier, VerifierSim::Role::RpChannel, rp_id, svc,
                                   verifier.measurement, svc.public_key(), rng);
    rp.sk1 = ch_rp.key;
    auto ch_rp_b = establish_channel(verifier, VerifierSim::Role::RpChannel, rp_id_b, svc,
                                     verifier.measurement, svc.public_key(), rng);
    rp_b.sk1 = ch_rp_b.key;
    auto ch_hsk = establish_channel(verifier, VerifierSim::Role::HskChannel, "", svc,
                                    verifier.measurement, svc.public_key(), rng);
    hsk.sk2 = ch_hsk.key;
  }

  for (Entity* e : std::initializer_list<Entity*>{&rp, &rp_b, &client, &hsk, &adv_hsk, &user,
                                                  &verifier, &adv}) {
    sched.register_entity(*e);
  }
}

Route Scenario::victim_route() const {
  return {client.id(), cfg.protocol == Protocol::VFido2};
}

void Scenario::honest_register(const std::string& username, const AddHskEvidence& ev) {
  user.intent.username = username;
  ++user.intent.expected_prompts;
  rp.begin_registration(username, victim_route(), ev, sched);
  sched.run();
}

bool Scenario::honest_login(const std::string& username, bool remember) {
  ++user.intent.expected_prompts;
  AuthOptions opts;
  opts.requester = client.id();
  opts.remember_selected = remember;
  rp.begin_authentication(username, victim_route(), opts, sched);
  sched.run();
  return rp.last_status() == RpSim::Status::Ok;
}

void Scenario::adversary_login(const Route& route) {
  AuthOptions opts;
  opts.requester = adv.id();
  rp.begin_authentication(kVictimUser, route, opts, sched);
  sched.run();
}

void Scenario::finish() { hsk.finalize_acks(sched); }

void Scenario::run_attack() {
  if (!cfg.attack) {
    honest_register(kVictimUser);
    honest_login(kVictimUser);
    honest_login(kVictimUser);
    return;
  }
  switch (*cfg.attack) {
    case AttackId::Misbind: attack_misbind(); break;
    case AttackId::DoublebindReg: attack_doublebind(false); break;
    case AttackId::DoublebindSession: attack_doublebind(true); break;
    case AttackId::SyncLogin: attack_sync_login(); break;
    case AttackId::MitmTransplant: attack_mitm_transplant(); break;
    case AttackId::SigDowngrade: attack_sig_downgrade(); break;
    case AttackId::CookieSteal: attack_cookie_steal(); break;
    case AttackId::CloneStealth: attack_clone_stealth(); break;
  }
}

// The attacker in the victim's network path copies the registration request
// to its own key and suppresses the victim's response, so the account binds
// the attacker's credential while the victim believes their key was added.
void Scenario::attack_misbind() {
  sched.add_hook({[this](const MessageEnvelope& env) {
                    return env.type == MsgType::RegRequest && env.sender == rp.id() &&
                           env.receiver == client.id();
                  },
                  [this](const MessageEnvelope& env) {
                    MessageEnvelope copy = env;
                    copy.receiver = adv_hsk.id();
                    return std::vector<MessageEnvelope>{env, copy};
                  }});
  sched.add_hook({[this](const MessageEnvelope& env) {
                    return env.type == MsgType::RegResponse && env.sender == hsk.id();
                  },
                  [](const MessageEnvelope&) { return std::vector<MessageEnvelope>{}; }});
  honest_register(kVictimUser);
  sched.clear_hooks();
  adversary_login({adv_hsk.id(), false});
}

// A second key is registered to the account in the background, either cold
// (reg variant) or while the victim has an authenticated session whose
// password the attacker already phished (session variant).
void Scenario::attack_doublebind(bool with_session) {
  honest_register(kVictimUser);
  if (with_session) honest_login(kVictimUser);
  AddHskEvidence ev;
  ev.password_ok = with_session;
  rp.begin_registration(kVictimUser, {adv_hsk.id(), false}, ev, sched);
  sched.run();
  adversary_login({adv_hsk.id(), false});
}

// A page the victim visits embeds a login iframe for a second service where
// the same key is registered; the victim's presence tap for the intended
// login is harvested for the second service too.
void Scenario::attack_sync_login() {
  honest_register(kVictimUser);

  user.intent.rp_name = rp_id_b;
  ++user.intent.expected_prompts;
  rp_b.begin_registration(kVictimUser, victim_route(), {}, sched);
  sched.run();
  user.intent.rp_name = rp_id;

  honest_login(kVictimUser);

  client.iframe_permissions.insert("https://" + rp_id_b);
  if (cfg.sync_origin_spoofed) {
    sched.add_hook({[this](const MessageEnvelope& env) {
                      return env.type == MsgType::AuthRequest && env.sender == rp_b.id();
                    },
                    [this](const MessageEnvelope& env) {
                      MessageEnvelope spoofed = env;
                      spoofed.origin = "https://" + rp_id;
                      return std::vector<MessageEnvelope>{spoofed};
                    }});
  }
  AuthOptions opts;
  opts.requester = adv.id();
  rp_b.begin_authentication(kVictimUser, victim_route(), opts, sched);
  sched.run();
  sched.clear_hooks();
}

// Machine-in-the-middle: the attacker opens its own login session and
// substitutes that session's challenge into the victim's login, so the
// victim's assertion completes the attacker's session.
void Scenario::attack_mitm_transplant() {
  honest_register(kVictimUser);

  if (cfg.protocol == Protocol::VFido2) {
    // the attacker's connection carries no attested channel; a legacy
    // session is refused outright for a TEE-bound account
    FallbackDecision fb = negotiate_fallback(false, true);
    if (fb.blocked) {
      sched.detect(DetectionCode::DowngradeBlocked, rp.id(),
                   "legacy session refused for a TEE-bound account");
    }
    AuthOptions opts;
    opts.requester = adv.id();
    rp.begin_authentication(kVictimUser, {adv.id(), false}, opts, sched);
    sched.run();
    // inject the unauthenticated request into the victim's machine
    if (!adv.observed.empty()) {
      MessageEnvelope inj = adv.observed.back();
      inj.receiver = client.id();
      sched.send(std::move(inj));
      sched.run();
    }
    honest_login(kVictimUser);
    return;
  }

  auto held = std::make_shared<std::optional<MessageEnvelope>>();
  sched.add_hook({[this, held](const MessageEnvelope& env) {
                    return env.type == MsgType::AuthRequest && env.receiver == client.id() &&
                           !held->has_value();
                  },
                  [held](const MessageEnvelope& env) {
                    *held = env;
                    return std::vector<MessageEnvelope>{};
                  }});
  AuthOptions opts;
  opts.requester = adv.id();
  rp.begin_authentication(kVictimUser, victim_route(), opts, sched);
  sched.run();
  sched.clear_hooks();

  sched.add_hook({[this](const MessageEnvelope& env) {
                    return env.type == MsgType::AuthRequest && env.receiver == client.id();
                  },
                  [held](const MessageEnvelope&) {
                    return *held ? std::vector<MessageEnvelope>{**held}
                                 : std::vector<MessageEnvelope>{};
                  }});
  honest_login(kVictimUser);
  sched.clear_hooks();
}

// The attacker strips the strong algorithms from the registration offer;
// the key registers with the forgeable legacy scheme and the attacker later
// mints assertions from observed traffic alone.
void Scenario::attack_sig_downgrade() {
  sched.add_hook({[this](const MessageEnvelope& env) {
                    return env.type == MsgType::RegRequest && env.receiver == client.id();
                  },
                  [](const MessageEnvelope& env) {
                    MessageEnvelope pruned = env;
                    try {
                      auto req = RegistrationRequest::decode(env.payload);
                      req.alg_list = {SigAlg::WeakToy};
                      pruned.payload = req.encode();
                    } catch (const MalformedEnvelope&) {
                    }
                    return std::vector<MessageEnvelope>{pruned};
                  }});
  sched.add_hook(observe_hook(adv));
  honest_register(kVictimUser);
  sched.clear_hooks();

  sched.add_hook(observe_hook(adv));
  honest_login(kVictimUser);
  sched.clear_hooks();

  // reconstruct the credential and the device's last challenge from the tap
  std::optional<AttestationResponse> reg;
  std::optional<Challenge> last_challenge;
  uint32_t last_counter = 0;
  for (const auto& env : adv.observed) {
    try {
      if (env.type == MsgType::RegResponse) {
        reg = AttestationResponse::decode(env.payload);
      } else if (env.type == MsgType::AuthRequest) {
        last_challenge = AuthRequest::decode(env.payload).challenge;
      } else if (env.type == MsgType::AuthResponse) {
        last_counter = AssertionResponse::decode(env.payload).counter;
      }
    } catch (const MalformedEnvelope&) {
    }
  }
  if (!reg || reg->alg != SigAlg::WeakToy) return;  // downgrade did not take

  AuthOptions opts;
  opts.requester = adv.id();
  rp.begin_authentication(kVictimUser, {adv.id(), false}, opts, sched);
  sched.run();
  AuthRequest session;
  try {
    session = AuthRequest::decode(adv.observed.back().payload);
  } catch (const MalformedEnvelope&) {
    return;
  }

  AssertionResponse forged;
  forged.credential_id = reg->credential_id;
  forged.counter = last_counter + 1;
  forged.client_data_hash = client_data_digest(session.challenge, rp.origin());
  forged.challenge_echo = session.challenge;
  if (cfg.clone_mode == CloneMode::HashList && last_challenge) {
    forged.stored_challenge_hash =
        hash(ByteView(last_challenge->data(), last_challenge->size()));
  }
  forged.signature = forge_weak(reg->public_key, forged.signed_data(hash(rp_id)));

  MessageEnvelope env;
  env.type = MsgType::AuthResponse;
  env.sender = adv.id();
  env.receiver = rp.id();
  env.origin = rp.origin();
  env.payload = forged.encode();
  sched.send(std::move(env));
  sched.run();
}

// Baseline: the remember-device cookie is lifted from the browser and
// replayed with the phished password. Hardened: the device-resident
// credential replaces cookies; its sealed state is useless off-platform and
// recorded assertions do not replay.
void Scenario::attack_cookie_steal() {
  honest_register(kVictimUser);

  if (cfg.protocol == Protocol::Fido2) {
    honest_login(kVictimUser, true);
    if (!rp.issued_cookies().empty()) {
      client.cookie_jar.push_back(rp.issued_cookies().back());
      adv.stolen_cookie = client.cookie_jar.back();
      adv.knows_password = true;
      rp.accept_cookie(adv.stolen_cookie->value, true, adv.id(), sched);
      sched.run();
    }
    return;
  }

  honest_login(kVictimUser);  // fresh assertion from the external key
  verifier.arm_builtin(rp_id, true, rp.policy().remember_device_days, sched.day);
  user.intent.first_registration = false;
  AddHskEvidence ev;
  ev.fresh_assertion = true;
  rp.begin_registration(kVictimUser, victim_route(), ev, sched);
  sched.run();
  user.intent.first_registration = true;

  // the victim's remembered login works from the enclave
  sched.add_hook(observe_hook(adv));
  AuthOptions opts;
  opts.requester = client.id();
  opts.builtin = true;
  rp.begin_authentication(kVictimUser, victim_route(), opts, sched);
  sched.run();
  sched.clear_hooks();

  // exfiltrated sealed store fails to open on the attacker's platform
  Bytes blob = verifier.seal_builtin();
  VerifierSim evil({EntityKind::Verifier, "evil-verifier"}, &rng);
  evil.platform_id = "adversary-host";
  if (evil.load_sealed(blob) == VerifierSim::SealStatus::SealCorrupted) {
    extra_evidence.push_back("sealed credential store rejected on foreign platform");
  }

  // replaying a recorded assertion matches no pending request
  for (auto it = adv.observed.rbegin(); it != adv.observed.rend(); ++it) {
    if (it->type == MsgType::AuthResponse && it->receiver == rp.id()) {
      sched.send(*it);
      sched.run();
      extra_evidence.push_back(std::string("replayed assertion rejected: ") +
                               to_string(rp.last_status()));
      break;
    }
  }
}

// Physical access: clone the key's state, run y throwaway auths on the
// original so the victim's counter stays ahead, return it, and log in from
// the clone m times.
void Scenario::attack_clone_stealth() {
  honest_register(kVictimUser);
  honest_login(kVictimUser);

  clone.emplace(hsk.clone_state({EntityKind::Hsk, "hsk-clone"}));
  sched.register_entity(*clone);
  inflate_hsk(hsk, rp_id, cfg.clone_inflate_y, rng);

  bool hardened = cfg.protocol == Protocol::VFido2;
  for (int i = 0; i < cfg.clone_attacker_logins_m; ++i) {
    if (hardened) verifier.hsk_id = clone->id();
    adversary_login(hardened ? victim_route() : Route{clone->id(), false});
    if (hardened) verifier.hsk_id = hsk.id();
  }

  honest_login(kVictimUser);
}

// --- reporting --------------------------------------------------------------

namespace {

bool adversary_session(const Scheduler& sched) {
  return std::any_of(sched.sessions.begin(), sched.sessions.end(), [](const SessionRecord& s) {
    return s.requester.kind == EntityKind::Adversary;
  });
}

std::set<std::string> fold_detected_by(const std::vector<DetectionEvent>& detections) {
  std::set<std::string> out;
  for (const auto& d : detections) {
    if (d.code == DetectionCode::NotificationAnomaly) {
      out.insert("USER_NOTIFICATION");
    } else if (d.by.kind == EntityKind::Rp || d.by.kind == EntityKind::Verifier) {
      out.insert("RP");
    } else {
      out.insert("HSK_DISPLAY");
    }
  }
  if (out.empty()) out.insert("NONE");
  return out;
}

std::string classify(bool succeeded, const std::vector<DetectionEvent>& detections) {
  bool alarmed = std::any_of(detections.begin(), detections.end(), [](const DetectionEvent& d) {
    return d.code == DetectionCode::DeviceCloningDetected ||
           d.code == DetectionCode::NotificationAnomaly;
  });
  if (alarmed) return "DETECTED";
  if (!succeeded) return "PREVENTED";
  return "SUCCEEDS";
}

}  // namespace

Json ScenarioReport::to_json() const {
  Json j;
  j["seed"] = config.seed;
  j["protocol"] = outcome.protocol;
  j["clone_mode"] = to_string(config.clone_mode);
  j["rp_preset"] = config.rp_preset;
  j["user"] = config.vigilant ? "vigilant" : "negligent";
  j["attack"] = outcome.attack;
  j["succeeded"] = outcome.succeeded;
  Json by = Json::array();
  for (const auto& d : outcome.detected_by) by.push_back(d);
  j["detected_by"] = by;
  j["classification"] = classification;
  Json ev = Json::array();
  for (const auto& e : outcome.evidence) ev.push_back(e);
  j["evidence"] = ev;
  j["sessions"] = sessions;
  j["detections"] = detections;
  j["rp"] = rp_snapshot;
  j["hsk"] = hsk_snapshot;
  j["verifier"] = verifier_snapshot;
  j["trace_jsonl"] = trace_jsonl;
  return j;
}

ScenarioReport run_scenario(const ScenarioConfig& cfg) {
  Scenario s(cfg);
  s.run_attack();
  s.finish();

  ScenarioReport rep;
  rep.config = cfg;
  rep.outcome.attack = cfg.attack ? to_string(*cfg.attack) : "NONE";
  rep.outcome.protocol = to_string(cfg.protocol);
  rep.outcome.succeeded = adversary_session(s.sched);
  rep.outcome.detected_by = fold_detected_by(s.sched.detections);
  for (const auto& d : s.sched.detections) {
    rep.outcome.evidence.push_back(std::string(to_string(d.code)) + " by " + d.by.str() +
                                   (d.detail.empty() ? "" : ": " + d.detail));
    Json jd;
    jd["code"] = to_string(d.code);
    jd["by"] = d.by.str();
    jd["step"] = d.step;
    jd["detail"] = d.detail;
    rep.detections.push_back(jd);
  }
  for (const auto& e : s.extra_evidence) rep.outcome.evidence.push_back(e);
  rep.classification =
      cfg.attack ? classify(rep.outcome.succeeded, s.sched.detections) : "NONE";
  for (const auto& sess : s.sched.sessions) {
    Json js;
    js["rp"] = sess.rp;
    js["username"] = sess.username;
    js["requester"] = sess.requester.str();
    js["via"] = sess.via;
    js["step"] = sess.step;
    rep.sessions.push_back(js);
  }
  rep.rp_snapshot = s.rp.snapshot();
  rep.hsk_snapshot = s.hsk.snapshot();
  rep.verifier_snapshot = s.verifier.snapshot();
  rep.trace_jsonl = s.sched.trace.to_jsonl();
  return rep;
}

MatrixResult detection_matrix(uint64_t seed) {
  MatrixResult result;
  for (AttackId attack : all_attacks()) {
    for (Protocol protocol : {Protocol::Fido2, Protocol::VFido2}) {
      for (CloneMode mode : {CloneMode::Counter, CloneMode::HashList}) {
        for (bool vigilant : {false, true}) {
          ScenarioConfig cfg;
          cfg.seed = seed;
          cfg.protocol = protocol;
          cfg.clone_mode = mode;
          cfg.rp_preset = "github";
          cfg.vigilant = vigilant;
          cfg.attack = attack;
          ScenarioReport rep = run_scenario(cfg);

          Json cell;
          cell["attack"] = rep.outcome.attack;
          cell["protocol"] = rep.outcome.protocol;
          cell["clone_mode"] = to_string(mode);
          cell["user"] = vigilant ? "vigilant" : "negligent";
          cell["succeeded"] = rep.outcome.succeeded;
          Json by = Json::array();
          for (const auto& d : rep.outcome.detected_by) by.push_back(d);
          cell["detected_by"] = by;
          cell["classification"] = rep.classification;
          result.cells.push_back(cell);

          result.traces += rep.outcome.attack;
          result.traces += '/';
          result.traces += rep.outcome.protocol;
          result.traces += '/';
          result.traces += to_string(mode);
          result.traces += '/';
          result.traces += vigilant ? "vigilant" : "negligent";
          result.traces += '\n';
          result.traces += rep.trace_jsonl;
        }
      }
    }
  }
  return result;
}

std::string matrix_table(const Json& cells) {
  std::ostringstream out;
  out << "attack              protocol clone_mode user       result     detected_by\n";
  for (const auto& cell : cells) {
    std::string by;
    for (const auto& d : cell["detected_by"]) {
      if (!by.empty()) by += ",";
      by += d.get<std::string>();
    }
    out << cell["attack"].get<std::string>() << std::string(20 - cell["attack"].get<std::string>().size(), ' ')
        << cell["protocol"].get<std::string>() << std::string(9 - cell["protocol"].get<std::string>().size(), ' ')
        << cell["clone_mode"].get<std::string>() << std::string(11 - cell["clone_mode"].get<std::string>().size(), ' ')
        << cell["user"].get<std::string>() << std::string(11 - cell["user"].get<std::string>().size(), ' ')
        << cell["classification"].get<std::string>() << std::string(11 - cell["classification"].get<std::string>().size(), ' ')
        << by << "\n";
  }
  return out.str();
}

Json OverheadReport::to_json() const {
  Json j;
  Json a = Json::object();
  for (const auto& [k, v] : auth_delta) a[k] = v;
  j["auth_bytes_delta"] = a;
  Json r = Json::object();
  for (const auto& [k, v] : reg_delta) r[k] = v;
  j["registration_bytes_delta"] = r;
  return j;
}

OverheadReport measure_overhead(uint64_t seed) {
  auto run = [seed](bool macs) {
    ScenarioConfig cfg;
    cfg.seed = seed;
    cfg.protocol = Protocol::VFido2;
    cfg.clone_mode = CloneMode::Counter;
    cfg.rp_preset = "github";
    cfg.vigilant = false;
    Scenario s(cfg);
    s.sched.macs_enabled = macs;
    s.honest_register(kVictimUser);
    s.honest_login(kVictimUser);
    s.finish();
    return std::pair{s.sched.bytes_for_types({MsgType::AuthRequest, MsgType::AuthResponse}),
                     s.sched.bytes_for_types(
                         {MsgType::RegRequest, MsgType::RegResponse, MsgType::RegAck})};
  };
  auto [auth_on, reg_on] = run(true);
  auto [auth_off, reg_off] = run(false);

  OverheadReport rep;
  for (const auto& [ent, bytes] : auth_on) rep.auth_delta[ent.name] = bytes - auth_off[ent];
  for (const auto& [ent, bytes] : reg_on) rep.reg_delta[ent.name] = bytes - reg_off[ent];
  return rep;
}

}  // namespace fidosim
