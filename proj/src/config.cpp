#include "chainlearn/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "chainlearn/ciphernet.hpp"
#include "chainlearn/fusion.hpp"
#include "chainlearn/ivhe.hpp"

namespace chainlearn::config {

namespace {

std::string trim(std::string_view s) {
  auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  if (trim(s).empty()) return out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(trim(cur));
  return out;
}

template <typename T>
T parse_int(const std::string& s, const std::string& key) {
  T v{};
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size() || s.empty())
    throw ConfigError(key + ": expected an integer, got '" + s + "'");
  return v;
}

double parse_double(const std::string& s, const std::string& key) {
  double v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size() || s.empty() || !std::isfinite(v))
    throw ConfigError(key + ": expected a number, got '" + s + "'");
  return v;
}

bool parse_bool(const std::string& s, const std::string& key) {
  if (s == "true") return true;
  if (s == "false") return false;
  throw ConfigError(key + ": expected true or false, got '" + s + "'");
}

std::string fmt_double(double v) {
  // Shortest representation that parses back to the same value.
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  (void)ec;
  return std::string(buf, ptr);
}

template <typename T>
std::string join(const std::vector<T>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    if constexpr (std::is_floating_point_v<T>) out += fmt_double(v[i]);
    else out += std::to_string(v[i]);
  }
  return out;
}

template <typename T>
std::vector<T> parse_list(const std::string& s, const std::string& key) {
  std::vector<T> out;
  for (const auto& part : split(s, ',')) {
    if constexpr (std::is_floating_point_v<T>) out.push_back(parse_double(part, key));
    else out.push_back(parse_int<T>(part, key));
  }
  return out;
}

struct Field {
  std::string key;
  std::string type;
  std::string help;
  std::function<std::string(const ScenarioConfig&)> get;
  std::function<void(ScenarioConfig&, const std::string&)> set;
};

template <typename T>
Field make_field(std::string key, T ScenarioConfig::*m, std::string help) {
  Field f;
  f.key = key;
  f.help = std::move(help);
  if constexpr (std::is_same_v<T, std::string>) {
    f.type = "string";
    f.get = [m](const ScenarioConfig& c) { return c.*m; };
    f.set = [m](ScenarioConfig& c, const std::string& v) { c.*m = v; };
  } else if constexpr (std::is_same_v<T, bool>) {
    f.type = "bool";
    f.get = [m](const ScenarioConfig& c) { return std::string(c.*m ? "true" : "false"); };
    f.set = [m, key](ScenarioConfig& c, const std::string& v) { c.*m = parse_bool(v, key); };
  } else if constexpr (std::is_floating_point_v<T>) {
    f.type = "number";
    f.get = [m](const ScenarioConfig& c) { return fmt_double(c.*m); };
    f.set = [m, key](ScenarioConfig& c, const std::string& v) { c.*m = parse_double(v, key); };
  } else if constexpr (std::is_integral_v<T>) {
    f.type = std::is_signed_v<T> ? "int" : "uint";
    f.get = [m](const ScenarioConfig& c) { return std::to_string(c.*m); };
    f.set = [m, key](ScenarioConfig& c, const std::string& v) { c.*m = parse_int<T>(v, key); };
  } else {
    using E = typename T::value_type;
    f.type = std::is_floating_point_v<E> ? "number-list" : "int-list";
    f.get = [m](const ScenarioConfig& c) { return join(c.*m); };
    f.set = [m, key](ScenarioConfig& c, const std::string& v) { c.*m = parse_list<E>(v, key); };
  }
  return f;
}

const std::vector<Field>& fields() {
  using C = ScenarioConfig;
  static const std::vector<Field> table = {
      make_field("scenario", &C::scenario, "case1 | case2 | case3-fedavg | case4-fading | custom"),
      make_field("seed", &C::seed, "master seed; every actor and model derives its stream from it"),
      make_field("data.source", &C::data_source, "synthetic-digits | synthetic-fading | idx"),
      make_field("data.idx.train_images", &C::idx_train_images, "IDX3 image file (data.source = idx)"),
      make_field("data.idx.train_labels", &C::idx_train_labels, "IDX1 label file"),
      make_field("data.idx.test_images", &C::idx_test_images, "IDX3 test image file"),
      make_field("data.idx.test_labels", &C::idx_test_labels, "IDX1 test label file"),
      make_field("data.pool_per_class", &C::pool_per_class, "synthetic digits per class in the partition pool"),
      make_field("data.test_per_class", &C::test_per_class, "synthetic digits per class in the test set"),
      make_field("data.fading_pool", &C::fading_pool, "synthetic fading windows in the partition pool"),
      make_field("data.fading_test", &C::fading_test, "synthetic fading windows in the test set"),
      make_field("nodes.verifier_pool", &C::verifier_pool, "registered verifier nodes"),
      make_field("nodes.verifiers", &C::verifiers, "verifiers sampled per task"),
      make_field("nodes.authorities", &C::authorities, "block sealing authorities"),
      make_field("model.arch", &C::arch, "layer list, e.g. conv:3:5x5,pool:avg,relu,flatten,dense:10"),
      make_field("train.optimizer", &C::optimizer, "adam | sgd"),
      make_field("train.learning_rate", &C::learning_rate, "local training step size"),
      make_field("train.batch_size", &C::batch_size, "local training mini-batch"),
      make_field("train.max_epochs", &C::max_epochs, "local training epoch cap"),
      make_field("train.stop_accuracy", &C::stop_accuracy, "contract accuracy threshold on the local verify split"),
      make_field("he.strategy", &C::strategy, "element-wise | matrix-pair"),
      make_field("he.w", &C::he_w, "plaintext-to-noise ratio"),
      make_field("he.l", &C::he_l, "bits per ciphertext digit"),
      make_field("he.a_bound", &C::he_a_bound, "bound on the public random matrix A"),
      make_field("he.e_bound", &C::he_e_bound, "bound on the key-switch noise E; 0 gives exact decryption"),
      make_field("he.t_bound", &C::he_t_bound, "bound on the secret vector T"),
      make_field("he.non_negative", &C::he_non_negative, "non-negative key (required for ReLU after the encrypted layer)"),
      make_field("he.p", &C::p, "weight scaling factor"),
      make_field("he.q", &C::q, "input scaling factor"),
      make_field("he.noise_policy", &C::noise_policy, "report | exact"),
      make_field("he.sigmoid_divisor", &C::sigmoid_divisor, "cubic divisor of the sigmoid approximation"),
      make_field("he.approximate_sigmoid", &C::approximate_sigmoid, "allow lane-wise sigmoid after the encrypted layer"),
      make_field("fusion.strategy", &C::fusion_strategy, "I | II"),
      make_field("fusion.epochs", &C::fusion_epochs, "head training epochs (Strategy II: both stages)"),
      make_field("fusion.stage0_epochs", &C::fusion_stage0_epochs, "Strategy II epochs at gamma = 0"),
      make_field("fusion.learning_rate", &C::fusion_learning_rate, "head step size"),
      make_field("fusion.batch_size", &C::fusion_batch_size, "head mini-batch"),
      make_field("verify.epochs", &C::verify_epochs, "verifier head epochs"),
      make_field("verify.learning_rate", &C::verify_learning_rate, "verifier head step size"),
      make_field("verify.margin", &C::verify_margin, "required accuracy gain for a yes vote (strict)"),
      make_field("contract.initial_balance", &C::initial_balance, "genesis tokens per node"),
      make_field("contract.deposit", &C::deposit, "participant deposit"),
      make_field("contract.fee_per_model", &C::fee_per_model, "compensation per accepted model"),
      make_field("contract.fee_per_verification", &C::fee_per_verification, "compensation per cast vote"),
      make_field("contract.task_escrow", &C::task_escrow, "tokens the initiator escrows at publication"),
      make_field("contract.window_ticks", &C::window_ticks, "announcement window length"),
      make_field("contract.block_interval", &C::block_interval, "ticks between blocks"),
      make_field("contract.train_ticks", &C::train_ticks, "simulated ticks a contributor spends training"),
      make_field("contract.verify_ticks", &C::verify_ticks, "simulated ticks a verifier spends per job"),
      make_field("net.delay_min", &C::delay_min, "minimum message delay (ticks)"),
      make_field("net.delay_max", &C::delay_max, "maximum message delay (ticks)"),
      make_field("net.drop_probability", &C::drop_probability, "per-message drop probability"),
      make_field("events.depart", &C::depart, "contributor@tick that leaves the task; empty for none"),
      make_field("report.compare_plain", &C::compare_plain, "also fuse the never-encrypted models"),
      make_field("report.compare_strategies", &C::compare_strategies, "fuse with both strategies"),
      make_field("report.p_sweep", &C::p_sweep, "extra p values to encrypt, decrypt and fuse with"),
      make_field("report.wall_time", &C::wall_time, "include wall-clock timings (not reproducible)"),
      make_field("fedavg.enabled", &C::fedavg, "run the federated averaging baseline"),
      make_field("fedavg.rounds", &C::fedavg_rounds, "communication rounds"),
      make_field("fedavg.local_epochs", &C::fedavg_local_epochs, "local epochs per round"),
  };
  return table;
}

void set_partition_key(PartitionCfg& p, const std::string& sub, const std::string& value, const std::string& key) {
  if (sub == "labels") p.labels = parse_list<int>(value, key);
  else if (sub == "weights") p.weights = parse_list<double>(value, key);
  else if (sub == "train") p.train = parse_int<std::size_t>(value, key);
  else if (sub == "verify") p.verify = parse_int<std::size_t>(value, key);
  else throw ConfigError("unknown key '" + key + "'");
}

void render_partition(std::ostringstream& out, const std::string& prefix, const PartitionCfg& p) {
  out << prefix << ".labels = " << join(p.labels) << "\n";
  out << prefix << ".weights = " << join(p.weights) << "\n";
  out << prefix << ".train = " << p.train << "\n";
  out << prefix << ".verify = " << p.verify << "\n";
}

}  // namespace

nn::Shape ScenarioConfig::input_shape() const {
  if (data_source == "synthetic-fading") return {1, 1, 64};
  return {1, 28, 28};
}

void ScenarioConfig::validate() const {
  static const std::set<std::string> scenarios = {"case1", "case2", "case3-fedavg", "case4-fading", "custom"};
  if (!scenarios.count(scenario)) throw ConfigError("scenario: unknown '" + scenario + "'");
  if (data_source != "synthetic-digits" && data_source != "synthetic-fading" && data_source != "idx")
    throw ConfigError("data.source: unknown '" + data_source + "'");
  if (data_source == "idx") {
    for (const auto* f : {&idx_train_images, &idx_train_labels, &idx_test_images, &idx_test_labels}) {
      if (f->empty() || !std::filesystem::exists(*f))
        throw ConfigError("data.idx: file '" + *f + "' does not exist");
    }
  }
  const int d = num_classes();
  auto check_part = [&](const PartitionCfg& p, const std::string& name, bool allow_empty) {
    if (p.labels.empty() && !allow_empty) throw ConfigError(name + ".labels: empty label set");
    std::set<int> seen;
    for (int l : p.labels) {
      if (l < 0 || l >= d) throw ConfigError(name + ".labels: label " + std::to_string(l) + " outside 0.." +
                                             std::to_string(d - 1));
      if (!seen.insert(l).second) throw ConfigError(name + ".labels: duplicate label " + std::to_string(l));
    }
    if (!p.weights.empty()) {
      if (p.weights.size() != p.labels.size()) throw ConfigError(name + ".weights: one weight per label");
      for (double w : p.weights)
        if (!(w >= 0)) throw ConfigError(name + ".weights: negative weight");
    }
    if (p.train == 0) throw ConfigError(name + ".train: must be >= 1");
  };
  for (std::size_t i = 0; i < partitions.size(); ++i) check_part(partitions[i], "partition." + std::to_string(i + 1), false);
  check_part(sample, "sample", true);
  if (sample.verify == 0) throw ConfigError("sample.verify: must be >= 1");

  // Counts against what the pool can supply (per label, since shares are label-restricted).
  if (data_source != "idx") {
    std::vector<std::size_t> demand(d, 0);
    std::size_t total = 0;
    auto add = [&](const PartitionCfg& p) { total += p.train + p.verify; };
    for (const auto& p : partitions) add(p);
    add(sample);
    const std::size_t available = data_source == "synthetic-fading" ? fading_pool : pool_per_class * d;
    if (total > available)
      throw ConfigError("partitions request " + std::to_string(total) + " examples but the pool has " +
                        std::to_string(available));
    for (const auto& p : partitions) {
      const std::size_t cap = data_source == "synthetic-fading" ? fading_pool / 2 * p.labels.size()
                                                                 : pool_per_class * p.labels.size();
      if (p.train + p.verify > cap) throw ConfigError("partition requests more examples than its labels hold");
    }
    if ((data_source == "synthetic-digits" && (pool_per_class == 0 || test_per_class == 0)) ||
        (data_source == "synthetic-fading" && (fading_pool == 0 || fading_test == 0)))
      throw ConfigError("data: pool and test counts must be >= 1");
  }

  if (verifiers == 0) throw ConfigError("nodes.verifiers: must be >= 1");
  if (verifiers > verifier_pool) throw ConfigError("nodes.verifiers exceeds nodes.verifier_pool");
  if (authorities == 0) throw ConfigError("nodes.authorities: must be >= 1");
  if (optimizer != "adam" && optimizer != "sgd") throw ConfigError("train.optimizer: adam or sgd");
  if (!(learning_rate > 0)) throw ConfigError("train.learning_rate: must be > 0");
  if (batch_size == 0 || max_epochs == 0) throw ConfigError("train: batch_size and max_epochs must be >= 1");
  if (!(stop_accuracy > 0 && stop_accuracy <= 1)) throw ConfigError("train.stop_accuracy: must be in (0, 1]");

  try {
    (void)cipher::strategy_from(strategy);
    (void)fusion::strategy_from(fusion_strategy);
    ivhe::HEParams hp;
    hp.w = he_w;
    hp.l = he_l;
    hp.a_bound = he_a_bound;
    hp.e_bound = he_e_bound;
    hp.t_bound = he_t_bound;
    hp.non_negative = he_non_negative;
    hp.validate();
    (void)build_arch(arch, input_shape(), d);
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  if (noise_policy != "report" && noise_policy != "exact") throw ConfigError("he.noise_policy: report or exact");
  if (p < 1 || q < 1) throw ConfigError("he.p and he.q must be >= 1");
  for (auto v : p_sweep)
    if (v < 1) throw ConfigError("report.p_sweep: values must be >= 1");
  if (!(sigmoid_divisor > 0)) throw ConfigError("he.sigmoid_divisor: must be > 0");
  if (fusion_epochs == 0 || fusion_batch_size == 0) throw ConfigError("fusion: epochs and batch_size must be >= 1");
  if (fusion_stage0_epochs > fusion_epochs) throw ConfigError("fusion.stage0_epochs exceeds fusion.epochs");
  if (!(fusion_learning_rate > 0) || !(verify_learning_rate > 0)) throw ConfigError("learning rates must be > 0");
  if (verify_epochs == 0) throw ConfigError("verify.epochs: must be >= 1");
  if (verify_margin < 0) throw ConfigError("verify.margin: must be >= 0");
  if (initial_balance < 0 || deposit < 0 || fee_per_model < 0 || fee_per_verification < 0 || task_escrow < 0)
    throw ConfigError("contract: token amounts must be >= 0");
  if (task_escrow + deposit > initial_balance) throw ConfigError("contract.task_escrow + deposit exceeds the balance");
  if (deposit > initial_balance) throw ConfigError("contract.deposit exceeds the balance");
  if (window_ticks == 0 || block_interval == 0) throw ConfigError("contract: window and interval must be >= 1");
  if (delay_min > delay_max) throw ConfigError("net.delay_min exceeds net.delay_max");
  if (!(drop_probability >= 0 && drop_probability < 1)) throw ConfigError("net.drop_probability: must be in [0, 1)");
  if (!depart.empty()) {
    auto dep = parse_departure(depart);
    if (dep.contributor == 0 || dep.contributor > partitions.size())
      throw ConfigError("events.depart: no contributor " + std::to_string(dep.contributor));
  }
  if (fedavg && (fedavg_rounds == 0 || fedavg_local_epochs == 0))
    throw ConfigError("fedavg: rounds and local_epochs must be >= 1");
}

ScenarioConfig parse(const std::string& text) {
  ScenarioConfig cfg;
  std::map<std::string, const Field*> by_key;
  for (const auto& f : fields()) by_key[f.key] = &f;

  std::set<std::string> seen;
  std::map<std::size_t, PartitionCfg> parts;
  std::optional<std::size_t> declared_count;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    std::string t = trim(line);
    if (t.empty()) continue;
    auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    std::string key = trim(std::string_view(t).substr(0, eq));
    std::string value = trim(std::string_view(t).substr(eq + 1));
    if (!seen.insert(key).second) throw ConfigError("line " + std::to_string(lineno) + ": repeated key '" + key + "'");
    try {
      if (auto it = by_key.find(key); it != by_key.end()) {
        it->second->set(cfg, value);
      } else if (key == "partition.count") {
        declared_count = parse_int<std::size_t>(value, key);
      } else if (key.rfind("sample.", 0) == 0) {
        set_partition_key(cfg.sample, key.substr(7), value, key);
      } else if (key.rfind("partition.", 0) == 0) {
        auto rest = key.substr(10);
        auto dot = rest.find('.');
        if (dot == std::string::npos) throw ConfigError("unknown key '" + key + "'");
        auto idx = parse_int<std::size_t>(rest.substr(0, dot), key);
        if (idx == 0) throw ConfigError(key + ": partitions are numbered from 1");
        set_partition_key(parts[idx], rest.substr(dot + 1), value, key);
      } else {
        throw ConfigError("unknown key '" + key + "'");
      }
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  const std::size_t count = declared_count.value_or(parts.size());
  for (const auto& [idx, p] : parts) {
    if (idx > count) throw ConfigError("partition." + std::to_string(idx) + " beyond partition.count");
  }
  for (std::size_t i = 1; i <= count; ++i) {
    auto it = parts.find(i);
    if (it == parts.end()) throw ConfigError("partition." + std::to_string(i) + " is missing");
    cfg.partitions.push_back(it->second);
  }
  return cfg;
}

ScenarioConfig load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read config '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return parse(ss.str());
}

std::string render(const ScenarioConfig& cfg) {
  std::ostringstream out;
  for (const auto& f : fields()) out << f.key << " = " << f.get(cfg) << "\n";
  render_partition(out, "sample", cfg.sample);
  out << "partition.count = " << cfg.partitions.size() << "\n";
  for (std::size_t i = 0; i < cfg.partitions.size(); ++i)
    render_partition(out, "partition." + std::to_string(i + 1), cfg.partitions[i]);
  return out.str();
}

nlohmann::json to_json(const ScenarioConfig& cfg) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const auto& f : fields()) j[f.key] = f.get(cfg);
  auto part = [](const PartitionCfg& p) {
    return nlohmann::ordered_json{{"labels", p.labels}, {"weights", p.weights}, {"train", p.train},
                                  {"verify", p.verify}};
  };
  j["sample"] = part(cfg.sample);
  j["partitions"] = nlohmann::ordered_json::array();
  for (const auto& p : cfg.partitions) j["partitions"].push_back(part(p));
  return nlohmann::json::parse(j.dump());
}

nlohmann::json schema() {
  ScenarioConfig defaults;
  nlohmann::json keys = nlohmann::json::array();
  for (const auto& f : fields())
    keys.push_back({{"key", f.key}, {"type", f.type}, {"default", f.get(defaults)}, {"description", f.help}});
  for (const std::string prefix : {"sample", "partition.N"}) {
    keys.push_back({{"key", prefix + ".labels"}, {"type", "int-list"}, {"default", ""},
                    {"description", "label subset"}});
    keys.push_back({{"key", prefix + ".weights"}, {"type", "number-list"}, {"default", ""},
                    {"description", "per-label sampling weights; empty = uniform"}});
    keys.push_back({{"key", prefix + ".train"}, {"type", "uint"}, {"default", "0"},
                    {"description", "training examples"}});
    keys.push_back({{"key", prefix + ".verify"}, {"type", "uint"}, {"default", "0"},
                    {"description", "held-out examples"}});
  }
  keys.push_back({{"key", "partition.count"}, {"type", "uint"}, {"default", "0"},
                  {"description", "number of computing contributors"}});
  return {{"format", "chainlearn.scenario-config"}, {"version", 1}, {"keys", keys}};
}

nn::LayeredModel build_arch(const std::string& spec, nn::Shape input, int num_classes) {
  nn::LayeredModel m;
  m.input = input;
  nn::Shape cur = input;
  for (const auto& tok : split(spec, ',')) {
    auto parts = split(tok, ':');
    if (parts.empty()) throw ConfigError("model.arch: empty layer");
    const auto& kind = parts[0];
    auto need = [&](std::size_t n) {
      if (parts.size() != n) throw ConfigError("model.arch: malformed layer '" + tok + "'");
    };
    if (kind == "conv") {
      need(3);
      auto filters = parse_int<std::size_t>(parts[1], "model.arch");
      auto x = parts[2].find('x');
      std::size_t kh, kw;
      if (x == std::string::npos) {
        kh = kw = parse_int<std::size_t>(parts[2], "model.arch");
      } else {
        kh = parse_int<std::size_t>(parts[2].substr(0, x), "model.arch");
        kw = parse_int<std::size_t>(parts[2].substr(x + 1), "model.arch");
      }
      if (filters == 0 || kh == 0 || kw == 0) throw ConfigError("model.arch: zero-sized conv '" + tok + "'");
      m.layers.push_back(nn::make_conv(cur.c, filters, kh, kw));
    } else if (kind == "pool") {
      if (parts.size() < 2 || parts.size() > 3) throw ConfigError("model.arch: malformed layer '" + tok + "'");
      nn::Pool p;
      if (parts[1] == "avg") p.kind = nn::PoolKind::Avg;
      else if (parts[1] == "max") p.kind = nn::PoolKind::Max;
      else if (parts[1] == "sum") p.kind = nn::PoolKind::Sum;
      else throw ConfigError("model.arch: unknown pool '" + parts[1] + "'");
      if (parts.size() == 3) p.window = parse_int<std::size_t>(parts[2], "model.arch");
      m.layers.push_back(p);
    } else if (kind == "relu") {
      need(1);
      m.layers.push_back(nn::Activation{nn::ActivationKind::Relu});
    } else if (kind == "sigmoid") {
      need(1);
      m.layers.push_back(nn::Activation{nn::ActivationKind::Sigmoid});
    } else if (kind == "flatten") {
      need(1);
      m.layers.push_back(nn::Flatten{});
    } else if (kind == "dense") {
      need(2);
      auto out = parse_int<std::size_t>(parts[1], "model.arch");
      if (out == 0) throw ConfigError("model.arch: zero-width dense layer");
      m.layers.push_back(nn::make_dense(cur.size(), out));
    } else if (kind == "softmax") {
      need(1);
      m.layers.push_back(nn::Softmax{});
    } else {
      throw ConfigError("model.arch: unknown layer '" + kind + "'");
    }
    try {
      cur = m.shapes().back();
    } catch (const Error& e) {
      throw ConfigError(std::string("model.arch: ") + e.what());
    }
  }
  if (m.layers.empty()) throw ConfigError("model.arch: no layers");
  try {
    m.validate();
  } catch (const Error& e) {
    throw ConfigError(std::string("model.arch: ") + e.what());
  }
  if (m.output_shape().size() != static_cast<std::size_t>(num_classes))
    throw ConfigError("model.arch: output size " + std::to_string(m.output_shape().size()) + " but " +
                      std::to_string(num_classes) + " classes");
  return m;
}

Departure parse_departure(const std::string& s) {
  auto at = s.find('@');
  if (at == std::string::npos) throw ConfigError("events.depart: expected contributor@tick");
  Departure d;
  d.contributor = parse_int<std::size_t>(trim(s.substr(0, at)), "events.depart");
  d.tick = parse_int<std::uint64_t>(trim(s.substr(at + 1)), "events.depart");
  return d;
}

}  // namespace chainlearn::config
