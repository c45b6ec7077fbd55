// chainlearn: run scenarios, generate datasets, audit ledgers, render reports.
//
// Exit codes: 0 success, 1 runtime failure, 2 configuration error,
// 3 trend check failure (run --check) or invalid chain (verify-chain).

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "chainlearn/config.hpp"
#include "chainlearn/datasets.hpp"
#include "chainlearn/ledger.hpp"
#include "chainlearn/protocol.hpp"
#include "chainlearn/report.hpp"

namespace fs = std::filesystem;
using namespace chainlearn;

namespace {

constexpr const char* kStoreEnv = "CHAINLEARN_STORE";

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << text;
}

int cmd_run(const std::string& config_path, std::optional<std::uint64_t> seed, bool check, const std::string& out,
            const std::string& chain_out, bool tables) {
  config::ScenarioConfig cfg;
  try {
    cfg = config::load(config_path);
    if (seed) cfg.seed = *seed;
    cfg.validate();
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  }
  protocol::RunHooks hooks;
  if (const char* root = std::getenv(kStoreEnv); root != nullptr && *root) hooks.store_root = fs::path(root);
  const auto result = protocol::run_scenario(cfg, hooks);
  protocol::validate_report(result.report);
  if (out.empty()) {
    std::cout << result.report_text;
  } else {
    write_file(out, result.report_text);
  }
  if (!chain_out.empty()) write_file(chain_out, result.chain_jsonl);
  if (tables) std::cerr << report::render(result.report);
  if (check) {
    const auto failures = report::check_trends(result.report);
    for (const auto& f : failures) std::cerr << "check failed: " << f << "\n";
    if (!failures.empty()) return 3;
    std::cerr << "all checks passed\n";
  }
  return 0;
}

int cmd_gen_data(const std::string& kind, const fs::path& out, std::uint64_t seed, std::size_t count,
                 std::size_t test_count) {
  fs::create_directories(out);
  if (kind == "digits") {
    const auto train = data::synthetic_digits(count, Rng::derive(seed, 1));
    const auto test = data::synthetic_digits(test_count, Rng::derive(seed, 2));
    data::write_idx(train, out / "train-images-idx3-ubyte", out / "train-labels-idx1-ubyte");
    data::write_idx(test, out / "t10k-images-idx3-ubyte", out / "t10k-labels-idx1-ubyte");
    std::cout << "wrote " << train.size() << " train and " << test.size() << " test digits to " << out << "\n";
    return 0;
  }
  if (kind == "fading") {
    data::FadingParams fp;
    const auto all = data::gen_fading_data(seed, count, test_count, fp);
    std::ofstream train_f(out / "fading-train.csv"), test_f(out / "fading-test.csv");
    for (std::size_t i = 0; i < all.size(); ++i) {
      auto& f = i < count ? train_f : test_f;
      const auto& ex = all.examples[i];
      f << ex.label;
      for (double v : ex.input) f << "," << v;
      f << "\n";
    }
    std::cout << "wrote " << count << " train and " << test_count << " test windows (" << fp.length
              << " samples, class 1 = deep fade) to " << out << "\n";
    return 0;
  }
  std::cerr << "unknown dataset kind '" << kind << "'\n";
  return 2;
}

int cmd_verify_chain(const std::string& path, const std::string& authorities) {
  const auto chain = ledger::chain_from_jsonl(read_file(path));
  if (chain.empty()) {
    std::cerr << "empty chain\n";
    return 3;
  }
  std::vector<std::string> auth;
  if (!authorities.empty()) {
    std::stringstream ss(authorities);
    for (std::string a; std::getline(ss, a, ',');) auth.push_back(a);
  }
  const auto vr = ledger::verify_chain(chain, auth);
  if (!vr.ok) {
    std::cout << "INVALID at block " << vr.first_bad_index << ": " << vr.reason << "\n";
    return 3;
  }
  try {
    const auto state = ledger::replay(chain);
    std::cout << "valid: " << chain.size() << " blocks, head " << chain.back().hash << ", "
              << state.total_tokens() << " tokens\n";
  } catch (const ConsensusError& e) {
    std::cout << "INVALID replay: " << e.what() << "\n";
    return 3;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"chainlearn: blockchain-coordinated encrypted model fusion simulator"};
  app.require_subcommand(1);

  auto* run = app.add_subcommand("run", "run a scenario and emit its report");
  std::string config_path, out, chain_out;
  std::optional<std::uint64_t> seed;
  bool check = false, tables = false;
  run->add_option("--config", config_path, "scenario config file")->required();
  run->add_option("--seed", seed, "override the config seed");
  run->add_flag("--check", check, "exit 3 if a trend check fails");
  run->add_option("--out", out, "report path (default stdout)");
  run->add_option("--chain", chain_out, "ledger export path (JSON lines)");
  run->add_flag("--tables", tables, "print text tables to stderr");

  auto* gen = app.add_subcommand("gen-data", "write a synthetic dataset");
  std::string kind;
  fs::path gen_out;
  std::uint64_t gen_seed = 1;
  std::size_t count = 1000, test_count = 100;
  gen->add_option("--kind", kind, "digits | fading")->required()->check(CLI::IsMember({"digits", "fading"}));
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--seed", gen_seed, "generator seed");
  gen->add_option("--count", count, "digits: per class; fading: train windows");
  gen->add_option("--test-count", test_count, "digits: test per class; fading: test windows");

  auto* vc = app.add_subcommand("verify-chain", "check hashes, links, sealer order and replay of a ledger export");
  std::string chain_in, authorities;
  vc->add_option("--in", chain_in, "ledger export (JSON lines)")->required();
  vc->add_option("--authorities", authorities, "comma-separated sealer order (default a1..aN from the chain)");

  auto* rd = app.add_subcommand("render", "print a report as text tables");
  std::string report_in;
  rd->add_option("--in", report_in, "report JSON")->required();

  auto* sc = app.add_subcommand("config-schema", "print the config key table");
  auto* show = app.add_subcommand("show-config", "print a config with every default filled in");
  std::string show_path;
  show->add_option("--config", show_path, "scenario config file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*run) return cmd_run(config_path, seed, check, out, chain_out, tables);
    if (*gen) return cmd_gen_data(kind, gen_out, gen_seed, count, test_count);
    if (*vc) {
      std::string auth = authorities;
      if (auth.empty()) {
        // Derive the rotation from the export itself: sealers in block order until one repeats.
        const auto chain = ledger::chain_from_jsonl(read_file(chain_in));
        std::vector<std::string> seen;
        for (const auto& b : chain) {
          if (std::find(seen.begin(), seen.end(), b.sealer) != seen.end()) break;
          seen.push_back(b.sealer);
        }
        for (std::size_t i = 0; i < seen.size(); ++i) auth += (i ? "," : "") + seen[i];
      }
      return cmd_verify_chain(chain_in, auth);
    }
    if (*rd) {
      const auto j = nlohmann::json::parse(read_file(report_in));
      protocol::validate_report(j);
      std::cout << report::render(j);
      return 0;
    }
    if (*sc) {
      std::cout << config::schema().dump(2) << "\n";
      return 0;
    }
    if (*show) {
      auto cfg = config::load(show_path);
      cfg.validate();
      std::cout << config::render(cfg);
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
