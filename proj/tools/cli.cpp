#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "fidosim/harness.hpp"

namespace {

using namespace fidosim;

void emit(const std::string& text, const std::string& out_path) {
  if (out_path.empty()) {
    std::cout << text;
    if (text.empty() || text.back() != '\n') std::cout << '\n';
    return;
  }
  std::ofstream f(out_path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + out_path);
  f << text;
}

std::set<int> parse_drop(const std::string& spec) {
  std::set<int> out;
  std::stringstream ss(spec);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.insert(std::stoi(item));
  }
  return out;
}

std::string run_summary(const ScenarioReport& rep) {
  std::ostringstream out;
  out << "attack:         " << rep.outcome.attack << "\n"
      << "protocol:       " << rep.outcome.protocol << "\n"
      << "clone mode:     " << to_string(rep.config.clone_mode) << "\n"
      << "rp preset:      " << rep.config.rp_preset << "\n"
      << "user:           " << (rep.config.vigilant ? "vigilant" : "negligent") << "\n"
      << "succeeded:      " << (rep.outcome.succeeded ? "true" : "false") << "\n"
      << "classification: " << rep.classification << "\n";
  out << "detected by:    ";
  bool first = true;
  for (const auto& d : rep.outcome.detected_by) {
    if (!first) out << ",";
    out << d;
    first = false;
  }
  out << "\n";
  for (const auto& e : rep.outcome.evidence) out << "evidence:       " << e << "\n";
  for (const auto& s : rep.sessions) {
    out << "session:        " << s["username"].get<std::string>() << "@"
        << s["rp"].get<std::string>() << " via " << s["via"].get<std::string>() << " by "
        << s["requester"].get<std::string>() << "\n";
  }
  return out.str();
}

std::string overhead_table(const OverheadReport& rep) {
  std::ostringstream out;
  out << "entity       auth_delta  reg_delta\n";
  for (const auto& [name, bytes] : rep.auth_delta) {
    size_t reg = rep.reg_delta.count(name) ? rep.reg_delta.at(name) : 0;
    out << name << std::string(name.size() < 13 ? 13 - name.size() : 1, ' ') << bytes
        << std::string(11, ' ') << reg << "\n";
  }
  return out.str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deterministic FIDO2 / v-FIDO2 protocol and attack simulator"};
  app.require_subcommand(1);

  uint64_t seed = 1;
  std::string protocol = "FIDO2";
  std::string clone_mode = "COUNTER";
  std::string preset = "github";
  std::string attack;
  std::string user_profile = "negligent";
  std::string drop;
  std::string out_path;
  std::string format = "json";
  std::string golden = "tests/golden/detection_matrix.json";
  bool check = false;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--seed", seed, "RNG seed");
    cmd->add_option("--out", out_path, "write the report to a file instead of stdout");
    cmd->add_option("--format", format, "output format")
        ->check(CLI::IsMember({"json", "table"}));
  };

  CLI::App* run = app.add_subcommand("run", "run one scenario and report the outcome");
  add_common(run);
  run->add_option("--protocol", protocol)->check(CLI::IsMember({"FIDO2", "VFIDO2"}));
  run->add_option("--clone-mode", clone_mode)->check(CLI::IsMember({"COUNTER", "HASHLIST"}));
  run->add_option("--rp-preset", preset, "relying-party policy preset");
  run->add_option("--attack", attack, "attack to execute (omit for an honest run)");
  run->add_option("--user", user_profile)->check(CLI::IsMember({"negligent", "vigilant"}));
  run->add_option("--drop", drop, "comma-separated delivery indices to drop");

  CLI::App* matrix = app.add_subcommand("matrix", "full attack/protocol detection matrix");
  add_common(matrix);
  matrix->add_flag("--check", check, "compare against the golden matrix; exit 2 on mismatch");
  matrix->add_option("--golden", golden, "golden matrix file for --check");

  CLI::App* overhead = app.add_subcommand("overhead", "authenticated-channel byte overhead");
  add_common(overhead);

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) {
      ScenarioConfig cfg;
      cfg.seed = seed;
      cfg.protocol = *protocol_from_string(protocol);
      cfg.clone_mode = *clone_mode_from_string(clone_mode);
      cfg.rp_preset = preset;
      cfg.vigilant = user_profile == "vigilant";
      cfg.drop = parse_drop(drop);
      if (!attack.empty()) {
        auto id = attack_from_string(attack);
        if (!id) {
          std::cerr << "unknown attack: " << attack << "\n";
          return 1;
        }
        cfg.attack = id;
      }
      ScenarioReport rep = run_scenario(cfg);
      emit(format == "json" ? rep.to_json().dump(2) : run_summary(rep), out_path);
      return 0;
    }
    if (matrix->parsed()) {
      MatrixResult result = detection_matrix(seed);
      if (check) {
        std::ifstream f(golden);
        if (!f) {
          std::cerr << "golden matrix not found: " << golden << "\n";
          return 2;
        }
        Json expected = Json::parse(f);
        if (expected != result.cells) {
          std::cerr << "detection matrix deviates from " << golden << "\n";
          return 2;
        }
      }
      emit(format == "json" ? result.cells.dump(2) : matrix_table(result.cells), out_path);
      return 0;
    }
    OverheadReport rep = measure_overhead(seed);
    emit(format == "json" ? rep.to_json().dump(2) : overhead_table(rep), out_path);
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
