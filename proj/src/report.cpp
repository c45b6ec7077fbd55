#include "chainlearn/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <optional>
#include <sstream>
#include <vector>

namespace chainlearn::report {

namespace {

class Table {
 public:
  explicit Table(std::vector<std::string> header) : header_(std::move(header)) {}
  void row(std::vector<std::string> cells) { rows_.push_back(std::move(cells)); }

  std::string str() const {
    std::vector<std::size_t> width(header_.size(), 0);
    auto fit = [&](const std::vector<std::string>& r) {
      for (std::size_t i = 0; i < r.size() && i < width.size(); ++i) width[i] = std::max(width[i], r[i].size());
    };
    fit(header_);
    for (const auto& r : rows_) fit(r);
    std::ostringstream out;
    auto line = [&](const std::vector<std::string>& r) {
      for (std::size_t i = 0; i < width.size(); ++i) {
        const std::string cell = i < r.size() ? r[i] : "";
        out << "  " << cell << std::string(width[i] - cell.size(), ' ');
      }
      out << "\n";
    };
    line(header_);
    std::vector<std::string> rule;
    for (auto w : width) rule.push_back(std::string(w, '-'));
    line(rule);
    for (const auto& r : rows_) line(r);
    return out.str();
  }

 private:
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

std::string str(const nlohmann::json& v) {
  if (v.is_null()) return "-";
  if (v.is_string()) return v.get<std::string>();
  if (v.is_boolean()) return v.get<bool>() ? "yes" : "no";
  return v.dump();
}

std::string short_ref(const nlohmann::json& v) {
  const auto s = str(v);
  return s.size() > 12 ? s.substr(0, 12) : s;
}

std::string labels(const nlohmann::json& v) {
  std::string out = "{";
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + v[i].dump();
  return out + "}";
}

}  // namespace

std::string pct(const nlohmann::json& v) {
  if (v.is_null() || !v.is_number()) return "-";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", 100.0 * v.get<double>());
  return buf;
}

std::string render(const nlohmann::json& r) {
  std::ostringstream out;
  out << "Scenario " << str(r.value("scenario", nlohmann::json())) << ", seed " << str(r.value("seed", nlohmann::json()))
      << "\n";
  if (r.contains("flags") && !r["flags"].empty()) {
    out << "Flags:";
    for (const auto& f : r["flags"]) out << " [" << str(f) << "]";
    out << "\n";
  }

  out << "\nPrivate models\n";
  Table c({"node", "labels", "train", "epochs", "local acc %", "test acc %", "announced", "model"});
  for (const auto& x : r.at("contributors")) {
    c.row({str(x["id"]), labels(x["labels"]), str(x["train_examples"]), str(x["epochs"]), pct(x["local_accuracy"]),
           pct(x["test_accuracy"]), str(x["announced_tick"]), short_ref(x["model_ref"])});
  }
  out << c.str();

  out << "\nVerdicts\n";
  Table v({"model", "contributor", "yes", "no", "accepted", "tick"});
  for (const auto& x : r.at("verdicts")) {
    v.row({short_ref(x["model_ref"]), str(x["contributor"]), str(x["yes"]), str(x["no"]), str(x["accepted"]),
           str(x["tick"])});
  }
  out << v.str();

  out << "\nClassification accuracy of fused models (%)\n";
  Table f({"models", "encrypted path", "never encrypted"});
  for (const auto& x : r.at("fusion").at("trajectory")) {
    std::string names = "{";
    for (std::size_t i = 0; i < x["contributors"].size(); ++i) names += (i ? "," : "") + str(x["contributors"][i]);
    names += "}";
    f.row({names, pct(x["accuracy"]), pct(x.value("plain_accuracy", nlohmann::json()))});
  }
  out << f.str();

  const auto& cmp = r.at("fusion").at("comparisons");
  if (cmp.contains("strategy_I")) {
    out << "\nFusion strategies (%)\n";
    Table s({"strategy", "accuracy"});
    s.row({"I", pct(cmp["strategy_I"])});
    s.row({"II", pct(cmp["strategy_II"])});
    out << s.str();
  }
  if (cmp.contains("p_sweep")) {
    out << "\nScaling factor p (%)\n";
    Table s({"p", "fused accuracy"});
    for (const auto& x : cmp["p_sweep"]) s.row({str(x["p"]), pct(x["accuracy"])});
    out << s.str();
  }

  out << "\nInference with and without encryption\n";
  Table inf({"node", "plain %", "cipher %", "argmax agree %", "lanes", "model bytes"});
  for (const auto& x : r.at("inference")) {
    inf.row({str(x["contributor"]), pct(x["plain_accuracy"]), pct(x["cipher_accuracy"]), pct(x["argmax_agreement"]),
             str(x["lanes"]), str(x["blob_bytes"])});
  }
  out << inf.str();

  out << "\nCommunication and baseline\n";
  Table b({"paradigm", "accuracy %", "transferred bytes"});
  b.row({"fused MetaModel", pct(r.at("fusion").at("accuracy")), str(r.at("communication").at("proposed_model_bytes"))});
  if (r.at("fedavg").is_object()) {
    b.row({"FedAvg", pct(r["fedavg"]["accuracy"]), str(r["communication"].value("fedavg_weight_bytes", nlohmann::json()))});
  }
  out << b.str();

  if (r.contains("timings_ms")) {
    out << "\nWall time (ms)\n";
    Table t({"stage", "ms"});
    for (const auto& [k, x] : r["timings_ms"].items()) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.1f", x.get<double>());
      t.row({k, buf});
    }
    out << t.str();
  }

  const auto& l = r.at("ledger");
  out << "\nLedger: " << str(l["height"]) << " blocks, head " << short_ref(l["head_hash"]) << ", chain "
      << (l.value("chain_valid", false) ? "valid" : "INVALID") << ", supply "
      << (l.value("supply_conserved", false) ? "conserved" : "NOT conserved") << " (" << str(l["supply_final"])
      << " tokens)\n";
  const auto& t = r.at("ticks");
  out << "Ticks: published " << str(t["published"]) << ", window end " << str(t["window_end"]) << ", settled "
      << str(t["settled"]) << "\n";
  return out.str();
}

std::vector<std::string> check_trends(const nlohmann::json& r) {
  std::vector<std::string> fail;
  const auto& l = r.at("ledger");
  if (!l.value("chain_valid", false)) fail.push_back("ledger chain does not verify");
  if (!l.value("replay_ok", false)) fail.push_back("ledger replay diverges");
  if (!l.value("supply_conserved", false)) fail.push_back("token supply not conserved");

  const auto& traj = r.at("fusion").at("trajectory");
  for (std::size_t i = 1; i < traj.size(); ++i) {
    if (!(traj[i]["accuracy"].get<double>() > traj[i - 1]["accuracy"].get<double>())) {
      fail.push_back("fused accuracy does not increase from prefix " + std::to_string(i) + " to " +
                     std::to_string(i + 1));
    }
  }
  const auto& cmp = r.at("fusion").at("comparisons");
  if (cmp.contains("p_sweep") && !traj.empty() && traj.back().contains("plain_accuracy")) {
    std::optional<double> hi, lo;
    for (const auto& x : cmp["p_sweep"]) {
      if (x["p"] == 128) hi = x["accuracy"].get<double>();
      if (x["p"] == 32) lo = x["accuracy"].get<double>();
    }
    const double plain = traj.back()["plain_accuracy"].get<double>();
    if (hi && std::abs(*hi - plain) > 0.005) fail.push_back("fused accuracy at p=128 is not within 0.5 points of plain");
    if (hi && lo && !(*hi > *lo)) fail.push_back("fused accuracy at p=128 does not exceed p=32");
  }
  if (cmp.contains("strategy_I") && cmp["strategy_II"].get<double>() < cmp["strategy_I"].get<double>()) {
    fail.push_back("Strategy II below Strategy I");
  }
  for (const auto& x : r.at("inference")) {
    if (x["argmax_agreement"].get<double>() < 0.98) {
      fail.push_back("cipherspace argmax agreement below 98% for " + x["contributor"].get<std::string>());
    }
  }
  return fail;
}

}  // namespace chainlearn::report
