#include "fidosim/adversary.hpp"

namespace fidosim {

const char* to_string(AttackId a) {
  switch (a) {
    case AttackId::Misbind: return "MISBIND";
    case AttackId::DoublebindReg: return "DOUBLEBIND_REG";
    case AttackId::DoublebindSession: return "DOUBLEBIND_SESSION";
    case AttackId::SyncLogin: return "SYNC_LOGIN";
    case AttackId::MitmTransplant: return "MITM_TRANSPLANT";
    case AttackId::SigDowngrade: return "SIG_DOWNGRADE";
    case AttackId::CookieSteal: return "COOKIE_STEAL";
    case AttackId::CloneStealth: return "CLONE_STEALTH";
  }
  return "?";
}

std::optional<AttackId> attack_from_string(const std::string& s) {
  for (AttackId a : all_attacks()) {
    if (s == to_string(a)) return a;
  }
  return std::nullopt;
}

const std::vector<AttackId>& all_attacks() {
  static const std::vector<AttackId> ids = {
      AttackId::Misbind,        AttackId::DoublebindReg, AttackId::DoublebindSession,
      AttackId::SyncLogin,      AttackId::MitmTransplant, AttackId::SigDowngrade,
      AttackId::CookieSteal,    AttackId::CloneStealth,
  };
  return ids;
}

void AdversarySim::handle(const MessageEnvelope& env, Scheduler& sched) {
  observed.push_back(env);
  if (on_message) on_message(env, sched);
}

InterceptorHook observe_hook(AdversarySim& adv) {
  return {[](const MessageEnvelope&) { return true; },
          [&adv](const MessageEnvelope& env) {
            adv.observed.push_back(env);
            return std::vector<MessageEnvelope>{env};
          }};
}

void inflate_hsk(HskSim& hsk, const std::string& rp_id, int y, Rng& rng) {
  std::vector<CredentialId> ids;
  for (const auto& [cid, cred] : hsk.credentials) {
    if (cred.rp_id == rp_id) ids.push_back(cid);
  }
  bool saved = hsk.auto_tap;
  hsk.auto_tap = true;  // the attacker holds the key and taps it themselves
  for (int i = 0; i < y; ++i) {
    CtapAuthRequest req;
    req.inner.challenge = rng.bytes32();
    req.inner.rp_id = rp_id;
    req.inner.allowed_credential_ids = ids;
    req.origin = "https://" + rp_id;
    AssertionResponse out;
    hsk.process_authentication(req, false, nullptr, &out);
  }
  hsk.auto_tap = saved;
}

}  // namespace fidosim
