#pragma once

// Scenario configuration: a flat `key = value` document. Every key has a
// default; unknown or repeated keys are errors. render() emits every key, so
// parse(render(c)) == c.

#include <cstdint>
#include <string>
#include <vector>

#include "chainlearn/neuralnet.hpp"

#include <json.hpp>

namespace chainlearn::config {

struct PartitionCfg {
  std::vector<int> labels;
  std::vector<double> weights;  // empty = uniform over labels
  std::size_t train = 0;
  std::size_t verify = 0;

  bool operator==(const PartitionCfg&) const = default;
};

struct ScenarioConfig {
  std::string scenario = "custom";  // case1 | case2 | case3-fedavg | case4-fading | custom
  std::uint64_t seed = 1;

  // data
  std::string data_source = "synthetic-digits";  // synthetic-digits | synthetic-fading | idx
  std::string idx_train_images, idx_train_labels, idx_test_images, idx_test_labels;
  std::size_t pool_per_class = 600;  // synthetic digits drawn per class for the partition pool
  std::size_t test_per_class = 300;  // synthetic digits per class in the held-out test set
  std::size_t fading_pool = 2000;
  std::size_t fading_test = 1000;
  std::vector<PartitionCfg> partitions;  // one per computing contributor
  PartitionCfg sample{{}, {}, 1000, 300};  // initiator sample set: train = head data, verify = holdout

  // roles
  std::size_t verifier_pool = 3;  // candidate verifier nodes
  std::size_t verifiers = 3;      // randomly selected per task
  std::size_t authorities = 3;

  // local model and training
  std::string arch = "conv:3:5x5,pool:avg,conv:3:5x5,pool:avg,flatten,dense:10";
  std::string optimizer = "adam";
  double learning_rate = 0.01;
  std::size_t batch_size = 50;
  std::size_t max_epochs = 30;
  double stop_accuracy = 0.9;

  // encryption
  std::string strategy = "element-wise";  // element-wise | matrix-pair
  std::int64_t he_w = 1 << 10;
  int he_l = 32;
  std::int64_t he_a_bound = 1 << 4;
  std::int64_t he_e_bound = 1;
  std::int64_t he_t_bound = 1 << 4;
  bool he_non_negative = false;
  std::int64_t p = 1 << 7;
  std::int64_t q = 1000;
  std::string noise_policy = "report";  // report | exact
  double sigmoid_divisor = 48.0;
  bool approximate_sigmoid = false;

  // fusion and verification
  std::string fusion_strategy = "II";  // I | II
  std::size_t fusion_epochs = 70;      // Strategy I epochs; Strategy II total
  std::size_t fusion_stage0_epochs = 10;
  double fusion_learning_rate = 0.001;
  std::size_t fusion_batch_size = 32;
  std::size_t verify_epochs = 30;
  double verify_learning_rate = 0.01;
  double verify_margin = 0.0;

  // contract economics and time
  std::int64_t initial_balance = 1000;
  std::int64_t deposit = 10;
  std::int64_t fee_per_model = 100;
  std::int64_t fee_per_verification = 5;
  std::int64_t task_escrow = 600;
  std::uint64_t window_ticks = 60;
  std::uint64_t block_interval = 1;
  std::uint64_t train_ticks = 5;
  std::uint64_t verify_ticks = 2;

  // simulated network
  std::uint64_t delay_min = 1;
  std::uint64_t delay_max = 3;
  double drop_probability = 0.0;
  std::string depart;  // "<contributor>@<tick>", e.g. "2@12"; empty = nobody leaves

  // comparisons reported alongside the run
  bool compare_plain = true;
  bool compare_strategies = false;
  std::vector<std::int64_t> p_sweep;
  bool fedavg = false;
  std::size_t fedavg_rounds = 5;
  std::size_t fedavg_local_epochs = 2;
  bool wall_time = false;  // wall-clock timings make the report non-reproducible

  bool operator==(const ScenarioConfig&) const = default;

  int num_classes() const { return data_source == "synthetic-fading" ? 2 : 10; }
  nn::Shape input_shape() const;
  void validate() const;
};

ScenarioConfig parse(const std::string& text);
ScenarioConfig load(const std::string& path);
std::string render(const ScenarioConfig& cfg);
nlohmann::json to_json(const ScenarioConfig& cfg);

// Key table: name, type, default, description.
nlohmann::json schema();

// Layer list such as "conv:3:5x5,pool:avg,relu,flatten,dense:10".
nn::LayeredModel build_arch(const std::string& spec, nn::Shape input, int num_classes);

struct Departure {
  std::size_t contributor = 0;  // 1-based
  std::uint64_t tick = 0;
};
Departure parse_departure(const std::string& s);

}  // namespace chainlearn::config
