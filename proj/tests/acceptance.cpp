// End-to-end acceptance checks. Each check prints exactly one PASS/FAIL line;
// the process exits nonzero when any check fails.

#include <chrono>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <vector>

#include "fidosim/harness.hpp"

using namespace fidosim;
using Clock = std::chrono::steady_clock;

namespace {

int g_failures = 0;
std::vector<std::string> g_notes;

void note(const std::string& text) { g_notes.push_back(text); }

void report(int index, const char* title, bool ok, double seconds) {
  std::printf("[%s] %d. %s (%.2fs)\n", ok ? "PASS" : "FAIL", index, title, seconds);
  if (!ok) {
    for (const auto& n : g_notes) std::printf("       %s\n", n.c_str());
    ++g_failures;
  }
  g_notes.clear();
}

template <typename Fn>
void check(int index, const char* title, Fn fn) {
  auto start = Clock::now();
  bool ok = false;
  try {
    ok = fn();
  } catch (const std::exception& e) {
    note(std::string("exception: ") + e.what());
  }
  double secs = std::chrono::duration<double>(Clock::now() - start).count();
  report(index, title, ok, secs);
}

ScenarioConfig make_cfg(AttackId attack, Protocol proto, CloneMode mode, bool vigilant) {
  ScenarioConfig cfg;
  cfg.protocol = proto;
  cfg.clone_mode = mode;
  cfg.vigilant = vigilant;
  cfg.attack = attack;
  return cfg;
}

bool only_none(const std::set<std::string>& by) {
  return by == std::set<std::string>{"NONE"};
}

// --- 1: every attack succeeds silently against plain FIDO2 ------------------

bool baseline_feasibility() {
  auto start = Clock::now();
  bool ok = true;
  for (AttackId id : all_attacks()) {
    ScenarioReport rep =
        run_scenario(make_cfg(id, Protocol::Fido2, CloneMode::Counter, false));
    if (!rep.outcome.succeeded || !only_none(rep.outcome.detected_by)) {
      note(std::string(to_string(id)) + ": succeeded=" +
           (rep.outcome.succeeded ? "true" : "false") + " classification=" +
           rep.classification);
      ok = false;
    }
  }
  double secs = std::chrono::duration<double>(Clock::now() - start).count();
  if (secs >= 1.0) {
    note("budget exceeded: " + std::to_string(secs) + "s");
    ok = false;
  }
  return ok;
}

// --- 2: hardened protocol mitigations and the golden matrix -----------------

bool hardened_mitigations() {
  bool ok = true;
  auto expect = [&](AttackId id, const char* cls,
                    std::set<std::string> by = {}) {
    ScenarioReport rep =
        run_scenario(make_cfg(id, Protocol::VFido2, CloneMode::HashList, true));
    bool cell_ok = rep.classification == cls;
    if (cell_ok && !by.empty()) cell_ok = rep.outcome.detected_by == by;
    if (!cell_ok) {
      std::string got;
      for (const auto& d : rep.outcome.detected_by) got += d + " ";
      note(std::string(to_string(id)) + ": got " + rep.classification + " by " + got);
      ok = false;
    }
  };
  expect(AttackId::Misbind, "PREVENTED");
  expect(AttackId::DoublebindReg, "PREVENTED");
  expect(AttackId::DoublebindSession, "PREVENTED");
  expect(AttackId::SyncLogin, "PREVENTED", {"HSK_DISPLAY"});
  expect(AttackId::MitmTransplant, "PREVENTED");
  expect(AttackId::SigDowngrade, "PREVENTED");
  expect(AttackId::CookieSteal, "PREVENTED", {"NONE"});
  expect(AttackId::CloneStealth, "DETECTED", {"RP"});

  std::ifstream f(std::string(FIDOSIM_GOLDEN_DIR) + "/detection_matrix.json");
  if (!f) {
    note("golden matrix file missing");
    return false;
  }
  Json golden = Json::parse(f);
  if (detection_matrix(1).cells != golden) {
    note("computed matrix deviates from the golden file");
    ok = false;
  }
  return ok;
}

// --- 3: clone detection soundness over all clone points / interleavings -----

struct PairState {
  HashListState list;
  HskChallengeSlot victim;
  HskChallengeSlot attacker;
  bool frozen = false;
  uint8_t tag = 0;

  enum class Login { Ok, Detected, Blocked };

  std::array<uint8_t, 32> next_challenge() {
    std::array<uint8_t, 32> c{};
    c.fill(tag++);
    return c;
  }

  void setup(int honest_rounds) {
    auto c = next_challenge();
    victim.on_registration(c);
    list.add(hash(ByteView(c.data(), c.size())));
    for (int i = 0; i < honest_rounds; ++i) login(victim);
    attacker = victim;  // the physical clone point
  }

  Login login(HskChallengeSlot& slot) {
    if (frozen) return Login::Blocked;
    auto c = next_challenge();
    list.add(hash(ByteView(c.data(), c.size())));
    if (list.consume(slot.on_authentication(c)) == HashListState::Result::Ok)
      return Login::Ok;
    frozen = true;
    return Login::Detected;
  }
};

bool clone_soundness() {
  int cases = 0;
  for (int point = 0; point <= 5; ++point) {
    for (int a = 0; a <= 3; ++a) {
      for (int v = 0; v <= 3; ++v) {
        int total = a + v;
        for (unsigned mask = 0; mask < (1u << total); ++mask) {
          if (__builtin_popcount(mask) != a) continue;
          ++cases;
          PairState st;
          st.setup(point);
          // bit set: attacker acts; clear: victim acts
          int first_switch = -1;
          for (int i = 0; i < total; ++i) {
            bool same_as_first = ((mask >> i) & 1) == (mask & 1);
            if (!same_as_first && first_switch < 0) first_switch = i;
            bool attacker_turn = (mask >> i) & 1;
            PairState::Login r = st.login(attacker_turn ? st.attacker : st.victim);
            PairState::Login want;
            if (first_switch < 0) {
              want = PairState::Login::Ok;  // case 1: one party only
            } else if (i == first_switch) {
              want = PairState::Login::Detected;  // case 2: caught on first use
            } else {
              want = PairState::Login::Blocked;  // frozen afterwards
            }
            if (r != want) {
              note("violation at point=" + std::to_string(point) +
                   " mask=" + std::to_string(mask) + " i=" + std::to_string(i));
              return false;
            }
          }
        }
      }
    }
  }
  note("cases=" + std::to_string(cases));
  g_notes.clear();
  return cases == 414;
}

// --- 4: any tampered authenticated message fails closed ---------------------

struct WireRecord {
  MsgType type;
  size_t payload_bytes;
  bool macd;
};

std::vector<WireRecord> reference_wire() {
  ScenarioConfig cfg;
  cfg.protocol = Protocol::VFido2;
  cfg.clone_mode = CloneMode::HashList;
  Scenario s(cfg);
  std::vector<WireRecord> wire;
  s.sched.add_hook({[](const MessageEnvelope&) { return true; },
                    [&wire](const MessageEnvelope& env) {
                      wire.push_back({env.type, env.payload.size(), env.mac.has_value()});
                      return std::vector<MessageEnvelope>{env};
                    }});
  s.honest_register(kVictimUser);
  s.honest_login(kVictimUser);
  return wire;
}

bool tamper_fails_closed() {
  std::vector<WireRecord> wire = reference_wire();
  int first_auth = -1;
  std::set<MsgType> covered;
  for (size_t i = 0; i < wire.size(); ++i) {
    if (wire[i].type == MsgType::AuthRequest && first_auth < 0) first_auth = (int)i;
    if (wire[i].macd) covered.insert(wire[i].type);
  }
  std::set<MsgType> wanted{MsgType::RegRequest, MsgType::RegResponse, MsgType::RegAck,
                           MsgType::AuthRequest, MsgType::AuthResponse};
  if (covered != wanted) {
    note("authenticated coverage is incomplete");
    return false;
  }

  int runs = 0;
  for (size_t step = 0; step < wire.size(); ++step) {
    if (!wire[step].macd) continue;
    size_t nbits = wire[step].payload_bytes * 8;
    size_t stride = nbits <= 512 ? 1 : nbits / 128;
    for (size_t bit = 0; bit < nbits; bit += stride) {
      ++runs;
      ScenarioConfig cfg;
      cfg.protocol = Protocol::VFido2;
      cfg.clone_mode = CloneMode::HashList;
      Scenario s(cfg);
      s.sched.set_tamper((int)step, bit);
      s.honest_register(kVictimUser);
      bool reg_phase = (int)step < first_auth;
      if (!reg_phase || wire[step].type == MsgType::RegAck) s.honest_login(kVictimUser);
      s.finish();

      bool mac_failure = false;
      for (const auto& d : s.sched.detections)
        if (d.code == DetectionCode::MacFailure) mac_failure = true;
      bool clean_state = true;
      switch (wire[step].type) {
        case MsgType::RegRequest:
        case MsgType::RegResponse:
          clean_state = s.rp.accounts().count(kVictimUser) == 0 ||
                        s.rp.accounts().at(kVictimUser).credentials.empty();
          clean_state = clean_state && s.sched.sessions.empty();
          break;
        case MsgType::RegAck: {
          bool ack_missing = false;
          for (const auto& d : s.sched.detections)
            if (d.code == DetectionCode::AckMissing) ack_missing = true;
          clean_state = ack_missing;
          break;
        }
        default:
          clean_state = s.sched.sessions.empty();
          break;
      }
      if (!mac_failure || !clean_state) {
        note("step=" + std::to_string(step) + " bit=" + std::to_string(bit) +
             " mac_failure=" + (mac_failure ? "y" : "n") +
             " clean=" + (clean_state ? "y" : "n"));
        return false;
      }
    }
  }
  return runs >= 128 * 5;
}

// --- 5: message loss never produces a false clone alarm ---------------------

bool loss_tolerance() {
  auto start = Clock::now();
  uint8_t tag = 0;
  auto challenge = [&tag]() {
    std::array<uint8_t, 32> c{};
    c.fill(tag++);
    return c;
  };
  for (unsigned pattern = 0; pattern < (1u << 12); ++pattern) {
    tag = 0;
    HashListState list;
    HskChallengeSlot device;
    auto c0 = challenge();
    device.on_registration(c0);
    list.add(hash(ByteView(c0.data(), c0.size())));
    for (int round = 0; round < 6; ++round) {
      bool drop_req = (pattern >> (2 * round)) & 1;
      bool drop_resp = (pattern >> (2 * round + 1)) & 1;
      auto c = challenge();
      list.add(hash(ByteView(c.data(), c.size())));
      if (drop_req) continue;
      Digest returned = device.on_authentication(c);
      if (drop_resp) continue;
      if (list.consume(returned) != HashListState::Result::Ok) {
        note("false alarm at pattern " + std::to_string(pattern));
        return false;
      }
    }
  }
  double secs = std::chrono::duration<double>(Clock::now() - start).count();
  if (secs >= 10.0) {
    note("budget exceeded");
    return false;
  }
  return true;
}

// --- 6: stealth window algebra ----------------------------------------------

int adversary_sessions(const ScenarioReport& rep) {
  int n = 0;
  for (const auto& s : rep.sessions)
    if (s["requester"].get<std::string>().find("ADVERSARY") == 0 ||
        s["requester"].get<std::string>().find("adversary") != std::string::npos)
      ++n;
  return n;
}

bool stealth_window() {
  for (int y = 1; y <= 5; ++y) {
    for (int m = 0; m <= y; ++m) {
      ScenarioConfig counter =
          make_cfg(AttackId::CloneStealth, Protocol::Fido2, CloneMode::Counter, false);
      counter.clone_inflate_y = y;
      counter.clone_attacker_logins_m = m;
      ScenarioReport rc = run_scenario(counter);
      if (!rc.detections.empty() || adversary_sessions(rc) != m) {
        note("counter y=" + std::to_string(y) + " m=" + std::to_string(m) +
             " not silent");
        return false;
      }

      ScenarioConfig hashed = counter;
      hashed.clone_mode = CloneMode::HashList;
      ScenarioReport rh = run_scenario(hashed);
      bool clone_alarm = false;
      for (const auto& d : rh.detections)
        if (d["code"] == "DEVICE_CLONING_DETECTED") clone_alarm = true;
      // the attacker's m logins complete; the victim's next login raises the alarm
      if (!clone_alarm || rh.classification != "DETECTED" || adversary_sessions(rh) != m) {
        note("hashlist y=" + std::to_string(y) + " m=" + std::to_string(m) +
             " got " + rh.classification);
        return false;
      }
    }
    // one login past the window trips the counter heuristic too
    ScenarioConfig over =
        make_cfg(AttackId::CloneStealth, Protocol::Fido2, CloneMode::Counter, false);
    over.clone_inflate_y = y;
    over.clone_attacker_logins_m = y + 1;
    ScenarioReport ro = run_scenario(over);
    bool alarm = false;
    for (const auto& d : ro.detections)
      if (d["code"] == "DEVICE_CLONING_DETECTED") alarm = true;
    if (!alarm) {
      note("counter window overflow y=" + std::to_string(y) + " went unnoticed");
      return false;
    }
  }
  return true;
}

// --- 7: exact authenticated-channel cost ------------------------------------

bool channel_cost() {
  OverheadReport rep = measure_overhead(1);
  bool ok = rep.auth_delta.at("rp") == 64 && rep.auth_delta.at("hsk-main") == 64 &&
            rep.auth_delta.at("webauthn") == 128;
  if (!ok) {
    for (const auto& [k, v] : rep.auth_delta) note(k + "=" + std::to_string(v));
  }
  return ok;
}

// --- 8: hash collisions do not fake a valid response ------------------------

bool collision_resistance() {
  HashListState list;
  for (uint8_t i = 0; i < 10; ++i) {
    Digest d;
    d.bytes.fill(i);
    list.add(d);
  }
  Rng rng(8);
  for (int i = 0; i < 100000; ++i) {
    Digest random;
    auto b = rng.bytes32();
    std::copy(b.begin(), b.end(), random.bytes.begin());
    if (list.consume(random) != HashListState::Result::CloneDetected) {
      note("random digest accepted at trial " + std::to_string(i));
      return false;
    }
  }
  return list.size() == 10;
}

// --- 9: traces are reproducible byte for byte -------------------------------

bool reproducible_traces() {
  MatrixResult a = detection_matrix(5);
  MatrixResult b = detection_matrix(5);
  std::string pa = "/tmp/fidosim_traces_a.jsonl";
  std::string pb = "/tmp/fidosim_traces_b.jsonl";
  {
    std::ofstream(pa, std::ios::binary) << a.traces;
    std::ofstream(pb, std::ios::binary) << b.traces;
  }
  std::ifstream fa(pa, std::ios::binary), fb(pb, std::ios::binary);
  std::stringstream sa, sb;
  sa << fa.rdbuf();
  sb << fb.rdbuf();
  if (sa.str().empty() || sa.str() != sb.str()) {
    note("trace files differ or are empty");
    return false;
  }
  return true;
}

}  // namespace

int main() {
  check(1, "all eight attacks succeed silently against plain FIDO2", baseline_feasibility);
  check(2, "hardened protocol prevents or detects every attack; matrix matches golden",
        hardened_mitigations);
  check(3, "clone detection sound for every clone point and interleaving", clone_soundness);
  check(4, "bit flips on authenticated messages fail closed before any state change",
        tamper_fails_closed);
  check(5, "4096 message-loss patterns cause no false clone alarm", loss_tolerance);
  check(6, "stealth clone window: counters stay silent inside it, hash list never does",
        stealth_window);
  check(7, "authenticated channel costs exactly 64/64/128 bytes per login", channel_cost);
  check(8, "100000 random digests are never accepted by a hash list", collision_resistance);
  check(9, "same-seed matrix runs produce byte-identical trace files", reproducible_traces);
  return g_failures == 0 ? 0 : 1;
}
