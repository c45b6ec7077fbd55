// Acceptance suite: one PASS/FAIL line per criterion, exit 1 if any fails.
// Scenario runs use the shipped configs under configs/.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "chainlearn/ciphernet.hpp"
#include "chainlearn/config.hpp"
#include "chainlearn/datasets.hpp"
#include "chainlearn/ivhe.hpp"
#include "chainlearn/ledger.hpp"
#include "chainlearn/protocol.hpp"

using namespace chainlearn;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

config::ScenarioConfig load_config(const std::string& name, std::uint64_t seed) {
  auto cfg = config::load(std::string(CHAINLEARN_SOURCE_DIR) + "/configs/" + name);
  cfg.seed = seed;
  cfg.validate();
  return cfg;
}

// Scenario results are shared between criteria; each (config, seed) runs once.
const protocol::ScenarioResult& scenario(const std::string& name, std::uint64_t seed) {
  static std::map<std::pair<std::string, std::uint64_t>, protocol::ScenarioResult> memo;
  auto key = std::make_pair(name, seed);
  auto it = memo.find(key);
  if (it == memo.end()) {
    const auto t0 = Clock::now();
    it = memo.emplace(key, protocol::run_scenario(load_config(name, seed))).first;
    std::fprintf(stderr, "  ran %s seed %llu in %.1f s\n", name.c_str(), static_cast<unsigned long long>(seed),
                 seconds_since(t0));
  }
  return it->second;
}

const std::vector<std::uint64_t> kSeeds{1, 2, 3, 4, 5};

// ---------------------------------------------------------------------------

Outcome c1_he_correctness() {
  const auto t0 = Clock::now();
  Rng rng(101);
  std::size_t bad = 0;
  for (int i = 0; i < 1000; ++i) {
    ivhe::HEParams p;
    p.n = static_cast<std::size_t>(rng.uniform_int(1, 8));
    p.w = 1 << 16;
    p.non_negative = i % 2 == 0;
    const auto km = ivhe::gen_keys(p, rng.next_u64());
    std::vector<std::vector<std::int64_t>> xs(3, std::vector<std::int64_t>(p.n));
    for (auto& x : xs)
      for (auto& v : x) v = rng.uniform_int(-(1 << 12), 1 << 12);
    std::vector<ivhe::Ciphertext> cts;
    for (const auto& x : xs) {
      cts.push_back(ivhe::encrypt(x, km.switch_key));
      if (ivhe::decrypt(cts.back(), km.secret, p) != x) ++bad;
    }
    std::vector<std::int64_t> sum(p.n), wsum(p.n);
    const std::vector<std::int64_t> weights{rng.uniform_int(-8, 8), rng.uniform_int(-8, 8), rng.uniform_int(-8, 8)};
    for (std::size_t k = 0; k < p.n; ++k) {
      sum[k] = xs[0][k] + xs[1][k];
      for (std::size_t j = 0; j < 3; ++j) wsum[k] += weights[j] * xs[j][k];
    }
    if (ivhe::decrypt(ivhe::he_add(cts[0], cts[1], p), km.secret, p) != sum) ++bad;
    if (ivhe::decrypt(ivhe::he_weighted_sum(weights, cts, p), km.secret, p) != wsum) ++bad;
  }
  const double secs = seconds_since(t0);
  return {bad == 0 && secs < 10.0,
          std::to_string(bad) + " mismatches over 1000 cases (3 round trips, add, weighted sum each), " +
              fmt("%.2f s", secs)};
}

Outcome c2_worked_example() {
  ivhe::HEParams p;
  p.n = 1;
  p.l = 4;
  p.w = 4;
  p.e_bound = 0;
  ivhe::IntMatrix a(1, 4), e(1, 4);
  a(0, 0) = 1;
  const std::vector<std::int64_t> t{2};
  const auto key = ivhe::make_switch_key(p, t, a, e);
  const std::vector<std::int64_t> x{3};
  const auto c = ivhe::encrypt(x, key);
  ivhe::SecretKey sk;
  sk.s = ivhe::IntMatrix(1, 2);
  sk.s(0, 0) = 1;
  sk.s(0, 1) = t[0];
  sk.t = t;
  const auto back = ivhe::decrypt(c, sk, p);
  const bool ok = c.digits == std::vector<std::int64_t>{10, 1} && back == x;
  return {ok, "c' = [" + std::to_string(c.digits.at(0)) + "," + std::to_string(c.digits.at(1)) + "], decrypts to " +
                  std::to_string(back.at(0))};
}

std::vector<std::vector<double>> fading_inputs(std::size_t n) {
  const auto d = data::gen_fading_data(4242, n / 2, n - n / 2);
  std::vector<std::vector<double>> out;
  for (const auto& ex : d.examples) out.push_back(ex.input);
  return out;
}

ivhe::HEParams params_like(const config::ScenarioConfig& cfg, std::int64_t e_bound) {
  ivhe::HEParams hp;
  hp.w = cfg.he_w;
  hp.l = cfg.he_l;
  hp.a_bound = cfg.he_a_bound;
  hp.e_bound = e_bound;
  hp.t_bound = cfg.he_t_bound;
  hp.non_negative = cfg.he_non_negative;
  return hp;
}

ivhe::KeyMaterial keys_like(const config::ScenarioConfig& cfg, std::int64_t e_bound, std::uint64_t seed) {
  return ivhe::gen_keys(params_like(cfg, e_bound), seed);
}

Outcome c3_cipherspace_exactness() {
  // Linear + average-pool model (the case-2 architecture), exact policy with E = 0.
  const auto cfg2 = load_config("case2.conf", 1);
  const auto& linear = scenario("case2.conf", 1).plain_models.at(0);
  const auto sm = cipher::quantize(linear, cfg2.p, cfg2.q);
  const auto k0 = keys_like(cfg2, 0, 7);
  cipher::EncryptOptions exact;
  exact.noise = cipher::NoisePolicy::Exact;
  const auto em = cipher::encrypt_elementwise(sm, k0.switch_key, exact);
  const auto digits = data::synthetic_digits(100, 909);
  std::size_t exact_ok = 0;
  for (const auto& ex : digits.examples) {
    const auto got = cipher::decrypt_scores_exact(cipher::forward_cipher(em, ex.input), k0.secret);
    exact_ok += got == cipher::forward_quantized(sm, ex.input);
  }

  // ReLU model (the case-4 architecture) under non-negative keys, against the
  // quantized plaintext model. Matrix-pair decides the criterion; element-wise
  // is printed alongside because its lanes can disagree in sign after a
  // mixed-sign first layer.
  const auto relu_agreement = [&](const std::string& conf, std::int64_t e_bound) {
    const auto cfg4 = load_config(conf, 1);
    const auto& relu = scenario(conf, 1).plain_models.at(0);
    const auto sm4 = cipher::quantize(relu, cfg4.p, cfg4.q);
    const bool pair = cipher::strategy_from(cfg4.strategy) == cipher::Strategy::MatrixPair;
    auto hp = params_like(cfg4, e_bound);
    if (pair) {
      hp.n = std::get<nn::Conv2d>(relu.layers.front()).out_c;
      hp.uniform_secret = true;
    }
    const auto km = ivhe::gen_keys(hp, 8);
    const auto em4 = pair ? cipher::encrypt_matrixpair(sm4, km.switch_key) : cipher::encrypt_elementwise(sm4, km.switch_key);
    std::size_t agree = 0;
    const auto inputs = fading_inputs(1000);
    for (const auto& x : inputs) {
      const auto dec = cipher::decrypt_scores(cipher::forward_cipher(em4, x), km.secret);
      agree += nn::argmax(dec) == nn::argmax(cipher::forward_quantized_real(sm4, x));
    }
    return static_cast<double>(agree) / static_cast<double>(inputs.size());
  };
  const auto e_default = load_config("case4-fading-matrixpair.conf", 1).he_e_bound;
  const double a0 = relu_agreement("case4-fading-matrixpair.conf", 0);
  const double a1 = relu_agreement("case4-fading-matrixpair.conf", e_default);
  const double ew0 = relu_agreement("case4-fading.conf", 0);
  const bool ok = exact_ok == digits.size() && a0 == 1.0 && a1 >= 0.98;
  return {ok, "linear exact " + std::to_string(exact_ok) + "/" + std::to_string(digits.size()) +
                  "; ReLU matrix-pair argmax agreement E=0 " + fmt("%.4f", a0) + ", E<=" + std::to_string(e_default) +
                  " " + fmt("%.4f", a1) + " (element-wise E=0 " + fmt("%.4f", ew0) + ", informational)"};
}

std::optional<double> sweep_accuracy(const nlohmann::ordered_json& report, std::int64_t p) {
  for (const auto& x : report["fusion"]["comparisons"]["p_sweep"])
    if (x["p"].get<std::int64_t>() == p) return x["accuracy"].get<double>();
  return std::nullopt;
}

Outcome c4_quantization() {
  int within = 0, above = 0, both = 0;
  std::string detail;
  for (auto seed : kSeeds) {
    const auto& r = scenario("case2.conf", seed).report;
    const double plain = r["fusion"]["trajectory"].back()["plain_accuracy"].get<double>();
    const double hi = sweep_accuracy(r, 128).value(), lo = sweep_accuracy(r, 32).value();
    const bool w = std::abs(hi - plain) <= 0.005, g = hi > lo;
    within += w;
    above += g;
    both += w && g;
    detail += " s" + std::to_string(seed) + "(plain " + fmt("%.4f", plain) + " p128 " + fmt("%.4f", hi) + " p32 " +
              fmt("%.4f", lo) + ")";
  }
  return {both >= 3, "seeds meeting both parts " + std::to_string(both) + "/5 (within 0.5 pt " +
                         std::to_string(within) + "/5, p128 > p32 " + std::to_string(above) + "/5);" + detail};
}

Outcome c5_monotone_fusion() {
  int monotone = 0, ii_ge_i = 0;
  std::string detail;
  for (auto seed : kSeeds) {
    const auto& r = scenario("case1.conf", seed).report;
    const auto& traj = r["fusion"]["trajectory"];
    bool mono = traj.size() == 3;
    for (std::size_t k = 0; mono && k < 3; ++k)
      mono = traj[k]["contributors"].size() == k + 1 &&
             traj[k]["contributors"].back().get<std::string>() == "c" + std::to_string(k + 1);
    for (std::size_t k = 1; mono && k < traj.size(); ++k)
      mono = traj[k]["accuracy"].get<double>() > traj[k - 1]["accuracy"].get<double>();
    monotone += mono;
    const auto& cmp = r["fusion"]["comparisons"];
    const double s1 = cmp["strategy_I"].get<double>(), s2 = cmp["strategy_II"].get<double>();
    ii_ge_i += s2 >= s1;
    detail += " s" + std::to_string(seed) + "(";
    for (std::size_t k = 0; k < traj.size(); ++k) detail += (k ? " -> " : "") + fmt("%.4f", traj[k]["accuracy"].get<double>());
    detail += " I " + fmt("%.4f", s1) + " II " + fmt("%.4f", s2) + ")";
  }
  return {monotone == 5 && ii_ge_i >= 3, "strictly monotone " + std::to_string(monotone) +
                                             "/5, Strategy II >= I " + std::to_string(ii_ge_i) + "/5;" + detail};
}

Outcome c6_fedavg() {
  int full_ok = 0, partial_ok = 0;
  bool bytes_ok = true;
  std::string detail;
  for (auto seed : kSeeds) {
    const auto& full = scenario("case3-fedavg-full.conf", seed).report;
    const auto& part = scenario("case3-fedavg-partial.conf", seed).report;
    const double ff = full["fedavg"]["accuracy"].get<double>(), fp = full["fusion"]["accuracy"].get<double>();
    const double pf = part["fedavg"]["accuracy"].get<double>(), pp = part["fusion"]["accuracy"].get<double>();
    full_ok += ff >= fp;
    partial_ok += pp >= pf;
    for (const auto* r : {&full, &part}) {
      const auto& c = (*r)["communication"];
      bytes_ok = bytes_ok && c["fedavg_weight_bytes"].get<std::uint64_t>() > c["proposed_model_bytes"].get<std::uint64_t>();
    }
    detail += " s" + std::to_string(seed) + "(full fedavg " + fmt("%.4f", ff) + " vs " + fmt("%.4f", fp) +
              ", partial " + fmt("%.4f", pf) + " vs " + fmt("%.4f", pp) + ")";
  }
  const auto& c = scenario("case3-fedavg-partial.conf", 1).report["communication"];
  detail += " bytes fedavg " + std::to_string(c["fedavg_weight_bytes"].get<std::uint64_t>()) + " vs proposed " +
            std::to_string(c["proposed_model_bytes"].get<std::uint64_t>());
  return {full_ok >= 3 && partial_ok >= 3 && bytes_ok,
          "full view FedAvg >= proposed " + std::to_string(full_ok) + "/5, partial view proposed >= FedAvg " +
              std::to_string(partial_ok) + "/5, FedAvg bytes larger " + (bytes_ok ? "in every run" : "NOT always") +
              ";" + detail};
}

Outcome c7_forward_time() {
  const auto cfg = load_config("case4-fading.conf", 1);
  const auto& model = scenario("case4-fading.conf", 1).plain_models.at(0);
  const auto km = keys_like(cfg, cfg.he_e_bound, 9);
  const auto em = cipher::encrypt_elementwise(cipher::quantize(model, cfg.p, cfg.q), km.switch_key);
  const auto inputs = fading_inputs(1000);
  std::vector<double> plain_s, cipher_s;
  volatile double sink = 0;  // keeps the timed loops from being optimized away
  for (int run = 0; run < 5; ++run) {
    auto t0 = Clock::now();
    for (const auto& x : inputs) sink = sink + nn::forward(model, x)[0];
    plain_s.push_back(seconds_since(t0));
    t0 = Clock::now();
    for (const auto& x : inputs) sink = sink + static_cast<double>(cipher::forward_cipher(em, x).lane1[0]);
    cipher_s.push_back(seconds_since(t0));
  }
  std::sort(plain_s.begin(), plain_s.end());
  std::sort(cipher_s.begin(), cipher_s.end());
  const double ratio = cipher_s[2] / plain_s[2];
  return {ratio <= 4.0, "median cipher " + fmt("%.4f s", cipher_s[2]) + " / plain " + fmt("%.4f s", plain_s[2]) +
                            " = " + fmt("%.2fx", ratio)};
}

bool tamper_detected(const std::string& jsonl, const std::vector<std::string>& auth) {
  try {
    const auto chain = ledger::chain_from_jsonl(jsonl);
    if (!ledger::verify_chain(chain, auth).ok) return true;
    ledger::replay(chain);
  } catch (const Error&) {
    return true;
  }
  return false;
}

// Injects random votes into a copy of the contract state after every block
// and checks admission against the one-vote rule.
std::size_t vote_injection_violations(const std::vector<ledger::Block>& chain, std::size_t& injected) {
  using namespace ledger;
  Rng rng(303);
  ContractState state;
  std::size_t violations = 0;
  for (const auto& b : chain) {
    for (const auto& tx : b.txs)
      if (tx.sender != kContractSender) contract_step(state, tx, b.timestamp);
    if (state.tasks.empty()) continue;
    // contract_step reassigns the whole state, so hold copies, not references.
    auto probe = state;
    const std::string task_id = probe.tasks.begin()->first;
    const auto models = probe.tasks.begin()->second.model_order;
    if (models.empty()) continue;
    std::vector<std::string> senders = probe.tasks.begin()->second.verifiers;
    for (const auto& [who, role] : probe.tasks.begin()->second.roles)
      if (role != Role::Verifier) senders.push_back(who);
    senders.push_back("intruder");
    for (int k = 0; k < 250; ++k) {
      Transaction tx;
      tx.kind = TxKind::VoteCast;
      tx.sender = senders[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(senders.size()) - 1))];
      tx.payload.task_id = task_id;
      tx.payload.target = models[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(models.size()) - 1))];
      tx.payload.vote = rng.bernoulli(0.5);
      tx.nonce = probe.nonces[tx.sender] + 1;
      const auto mv = probe.tasks.at(task_id).models.at(tx.payload.target);
      const bool admissible = !mv.verdict &&
                              std::find(mv.quorum.begin(), mv.quorum.end(), tx.sender) != mv.quorum.end() &&
                              !mv.votes.count(tx.sender);
      bool accepted = true;
      try {
        contract_step(probe, tx, b.timestamp);
      } catch (const Error&) {
        accepted = false;
      }
      ++injected;
      if (accepted != admissible) ++violations;
    }
    for (const auto& [ref, mv] : probe.tasks.at(task_id).models) {
      if (mv.votes.size() > mv.quorum.size()) ++violations;
      for (const auto& [voter, _] : mv.votes)
        if (std::find(mv.quorum.begin(), mv.quorum.end(), voter) == mv.quorum.end()) ++violations;
      if (mv.verdict) {
        std::size_t yes = 0;
        for (const auto& [_, v] : mv.votes) yes += v;
        if (mv.votes.size() != mv.quorum.size() || *mv.verdict != (2 * yes > mv.votes.size())) ++violations;
      }
    }
  }
  return violations;
}

Outcome c8_ledger() {
  const auto& r = scenario("case1.conf", 1);
  const auto t0 = Clock::now();
  const auto& chain = r.chain;
  std::vector<std::string> auth;
  for (const auto& b : chain) {
    if (std::find(auth.begin(), auth.end(), b.sealer) != auth.end()) break;
    auth.push_back(b.sealer);
  }
  const std::string text = r.chain_jsonl;
  bool base_ok = !tamper_detected(text, auth);

  Rng rng(202);
  std::size_t caught = 0;
  for (int i = 0; i < 1000; ++i) {
    std::string bad = text;
    std::size_t pos;
    do {
      pos = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(bad.size()) - 1));
    } while (bad[pos] == '\n');
    bad[pos] = static_cast<char>(bad[pos] ^ (1 << rng.uniform_int(0, 7)));
    caught += tamper_detected(bad, auth);
  }

  const auto s1 = ledger::replay(chain).to_json().dump();
  const auto s2 = ledger::replay(ledger::chain_from_jsonl(text)).to_json().dump();
  const bool replay_ok = s1 == s2 && ledger::chain_to_jsonl(ledger::chain_from_jsonl(text)) == text;

  std::int64_t initial = 0;
  std::size_t conserved = 0;
  for (std::size_t k = 1; k <= chain.size(); ++k) {
    const auto total = ledger::replay({chain.begin(), chain.begin() + static_cast<std::ptrdiff_t>(k)}).total_tokens();
    if (k == 1) initial = total;
    conserved += total == initial;
  }

  std::size_t injected = 0;
  const auto violations = vote_injection_violations(chain, injected);
  const double secs = seconds_since(t0);
  const bool ok = base_ok && caught == 1000 && replay_ok && conserved == chain.size() && violations == 0 && secs < 30;
  return {ok, "tampers detected " + std::to_string(caught) + "/1000, replay deterministic " +
                  (replay_ok ? "yes" : "no") + ", supply conserved after " + std::to_string(conserved) + "/" +
                  std::to_string(chain.size()) + " blocks, one-vote violations " + std::to_string(violations) +
                  " in " + std::to_string(injected) + " injected votes, " + fmt("%.2f s", secs)};
}

Outcome c9_sigmoid() {
  std::string detail;
  bool ok = true;
  for (double divisor : {48.0, 348.0}) {
    const cipher::SigmoidApprox s{3, divisor};
    double sup = 0;
    for (int i = -100000; i <= 100000; ++i) {
      const double x = i / 100000.0;
      sup = std::max(sup, std::abs(s(x) - 1.0 / (1.0 + std::exp(-x))));
    }
    ok = ok && sup <= 0.05;
    detail += "sup error (divisor " + fmt("%.0f", divisor) + ") " + fmt("%.5f", sup) + "; ";
  }
  const double at1 = cipher::SigmoidApprox{3, 48.0}(1.0);
  ok = ok && std::abs(at1 - 0.72917) <= 1e-5;
  return {ok, detail + "value at x=1 " + fmt("%.6f", at1)};
}

Outcome c10_reproducible() {
  const auto& first = scenario("case1.conf", 1);
  const auto again = protocol::run_scenario(load_config("case1.conf", 1));
  const bool report_same = again.report_text == first.report_text;
  const bool chain_same = again.chain_jsonl == first.chain_jsonl;
  return {report_same && chain_same, std::string("report ") + (report_same ? "identical" : "DIFFERS") + ", ledger export " +
                                         (chain_same ? "identical" : "DIFFERS") + " (" +
                                         std::to_string(first.report_text.size()) + " and " +
                                         std::to_string(first.chain_jsonl.size()) + " bytes)"};
}

}  // namespace

// Optional arguments select criteria by number; default runs all.
int main(int argc, char** argv) {
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  const std::vector<std::pair<int, std::function<Outcome()>>> criteria{
      {1, c1_he_correctness}, {2, c2_worked_example}, {3, c3_cipherspace_exactness}, {4, c4_quantization},
      {5, c5_monotone_fusion}, {6, c6_fedavg},        {7, c7_forward_time},          {8, c8_ledger},
      {9, c9_sigmoid},        {10, c10_reproducible}};
  int failed = 0, ran = 0;
  for (const auto& [n, fn] : criteria) {
    if (!only.empty() && !only.count(n)) continue;
    ++ran;
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("criterion %d: %s  %s\n", n, o.pass ? "PASS" : "FAIL", o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d/%d criteria passed\n", ran - failed, ran);
  return failed == 0 ? 0 : 1;
}
