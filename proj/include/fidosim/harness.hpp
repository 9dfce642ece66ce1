#pragma once

#include <optional>
#include <set>
#include <string>
#include <vector>

#include "fidosim/adversary.hpp"
#include "fidosim/vfido2.hpp"

namespace fidosim {

enum class Protocol { Fido2, VFido2 };
const char* to_string(Protocol p);
std::optional<Protocol> protocol_from_string(const std::string& s);

struct ScenarioConfig {
  uint64_t seed = 1;
  Protocol protocol = Protocol::Fido2;
  CloneMode clone_mode = CloneMode::Counter;
  std::string rp_preset = "github";
  bool vigilant = false;
  std::optional<AttackId> attack;
  std::set<int> drop;  // delivery indices removed from the network

  // clone attack knobs: throwaway auths run against the victim device (y)
  // and attacker logins attempted inside that window (m <= y)
  int clone_inflate_y = 3;
  int clone_attacker_logins_m = 2;
  // sync-login variant where the malicious page also forges the iframe origin
  bool sync_origin_spoofed = false;
};

/// One fully wired deployment: RP (plus a second RP for cross-service
/// attacks), browser, security key, user, platform verifier, and an
/// adversary with its own key. A (config, seed) pair determines the run.
struct Scenario {
  explicit Scenario(const ScenarioConfig& cfg);

  ScenarioConfig cfg;
  std::string rp_id;
  std::string rp_id_b;
  Rng rng;
  Scheduler sched;
  AttestationService svc;
  UserSim user;
  ClientSim client;
  HskSim hsk;
  HskSim adv_hsk;
  VerifierSim verifier;
  RpSim rp;
  RpSim rp_b;
  AdversarySim adv;
  std::optional<HskSim> clone;
  std::vector<std::string> extra_evidence;

  Route victim_route() const;
  void honest_register(const std::string& username, const AddHskEvidence& ev = {});
  /// Returns true when the RP completed the login.
  bool honest_login(const std::string& username, bool remember = false);
  void run_attack();
  /// End-of-run bookkeeping (outstanding registration acknowledgments).
  void finish();

 private:
  void attack_misbind();
  void attack_doublebind(bool with_session);
  void attack_sync_login();
  void attack_mitm_transplant();
  void attack_sig_downgrade();
  void attack_cookie_steal();
  void attack_clone_stealth();
  void adversary_login(const Route& route);
};

inline constexpr const char* kVictimUser = "alice";

struct AttackOutcome {
  std::string attack;
  std::string protocol;
  bool succeeded = false;
  std::set<std::string> detected_by;  // RP / HSK_DISPLAY / USER_NOTIFICATION / NONE
  std::vector<std::string> evidence;
};

struct ScenarioReport {
  ScenarioConfig config;
  AttackOutcome outcome;
  std::string classification;  // SUCCEEDS / PREVENTED / DETECTED / NONE
  Json sessions = Json::array();
  Json detections = Json::array();
  Json rp_snapshot;
  Json hsk_snapshot;
  Json verifier_snapshot;
  std::string trace_jsonl;

  Json to_json() const;
};

ScenarioReport run_scenario(const ScenarioConfig& cfg);

/// 8 attacks x 2 protocols x 2 clone modes x 2 user profiles on the github
/// preset. Cell outcomes are seed-invariant; traces are seed-deterministic.
struct MatrixResult {
  Json cells = Json::array();
  std::string traces;
};
MatrixResult detection_matrix(uint64_t seed);
std::string matrix_table(const Json& cells);

/// Authenticated-channel byte cost: identical runs with MACs on and off,
/// reported as per-entity deltas over the auth and registration exchanges.
struct OverheadReport {
  std::map<std::string, size_t> auth_delta;
  std::map<std::string, size_t> reg_delta;
  Json to_json() const;
};
OverheadReport measure_overhead(uint64_t seed);

}  // namespace fidosim
