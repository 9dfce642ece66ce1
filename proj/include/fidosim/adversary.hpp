#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "fidosim/baseline.hpp"

namespace fidosim {

/// The attack catalogue: seven network/software attacks plus the physical
/// clone-and-inflate attack.
enum class AttackId {
  Misbind,
  DoublebindReg,
  DoublebindSession,
  SyncLogin,
  MitmTransplant,
  SigDowngrade,
  CookieSteal,
  CloneStealth,
};

const char* to_string(AttackId a);
std::optional<AttackId> attack_from_string(const std::string& s);
const std::vector<AttackId>& all_attacks();

/// Network/software adversary endpoint. It records every envelope it sees;
/// attack-specific behavior is supplied through on_message.
class AdversarySim : public Entity {
 public:
  AdversarySim(EntityId id, Rng* rng) : rng(rng), id_(std::move(id)) {}

  const EntityId& id() const override { return id_; }
  void handle(const MessageEnvelope& env, Scheduler& sched) override;

  std::function<void(const MessageEnvelope&, Scheduler&)> on_message;
  std::vector<MessageEnvelope> observed;
  std::optional<RememberCookie> stolen_cookie;
  bool knows_password = false;
  Rng* rng;

 private:
  EntityId id_;
};

/// Wiretap hook: copies every envelope into the adversary's log and lets it
/// pass unchanged. Install after attack-specific hooks (first match wins).
InterceptorHook observe_hook(AdversarySim& adv);

/// Physical access step of the clone attack: run y throwaway
/// authentications against the device so its counter (and stored challenge
/// hash) move ahead of the cloned state.
void inflate_hsk(HskSim& hsk, const std::string& rp_id, int y, Rng& rng);

}  // namespace fidosim
