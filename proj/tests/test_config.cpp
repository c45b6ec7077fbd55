#include <gtest/gtest.h>

#include <filesystem>

#include "chainlearn/config.hpp"

using namespace chainlearn;
using namespace chainlearn::config;

namespace {

PartitionCfg random_partition(Rng& rng) {
  PartitionCfg p;
  for (int l = 0; l < 10; ++l)
    if (rng.bernoulli(0.5)) p.labels.push_back(l);
  if (p.labels.empty()) p.labels.push_back(3);
  if (rng.bernoulli(0.3))
    for (std::size_t i = 0; i < p.labels.size(); ++i) p.weights.push_back(rng.uniform(0.0, 5.0));
  p.train = static_cast<std::size_t>(rng.uniform_int(1, 1000));
  p.verify = static_cast<std::size_t>(rng.uniform_int(0, 300));
  return p;
}

ScenarioConfig random_config(Rng& rng) {
  ScenarioConfig c;
  const char* scen[] = {"case1", "case2", "case3-fedavg", "case4-fading", "custom"};
  c.scenario = scen[rng.uniform_int(0, 4)];
  c.seed = rng.next_u64();
  c.pool_per_class = static_cast<std::size_t>(rng.uniform_int(1, 5000));
  c.learning_rate = rng.uniform(1e-5, 1.0);
  c.stop_accuracy = rng.uniform01();
  c.he_w = rng.uniform_int(2, 1LL << 40);
  c.he_e_bound = rng.uniform_int(0, 10);
  c.he_non_negative = rng.bernoulli(0.5);
  c.p = rng.uniform_int(1, 1 << 20);
  c.sigmoid_divisor = rng.uniform(1.0, 500.0);
  c.fusion_learning_rate = rng.normal() * 1e-3;
  c.verify_margin = rng.uniform01() * 1e-7;
  c.drop_probability = rng.uniform01();
  c.strategy = rng.bernoulli(0.5) ? "matrix-pair" : "element-wise";
  c.depart = rng.bernoulli(0.5) ? "" : "2@" + std::to_string(rng.uniform_int(0, 99));
  for (int i = 0, n = static_cast<int>(rng.uniform_int(0, 3)); i < n; ++i) c.p_sweep.push_back(rng.uniform_int(1, 4096));
  c.fedavg = rng.bernoulli(0.5);
  c.sample = random_partition(rng);
  if (rng.bernoulli(0.3)) c.sample.labels.clear();
  c.sample.weights.clear();
  for (int i = 0, n = static_cast<int>(rng.uniform_int(0, 4)); i < n; ++i) c.partitions.push_back(random_partition(rng));
  return c;
}

}  // namespace

TEST(Config, RenderParseRoundTrip) {
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) {
    const auto c = random_config(rng);
    const auto text = render(c);
    ASSERT_EQ(parse(text), c) << text;
    ASSERT_EQ(render(parse(text)), text);
  }
}

TEST(Config, DefaultsAndComments) {
  const auto c = parse("# only a comment\n\nseed = 7   # trailing\n");
  ScenarioConfig want;
  want.seed = 7;
  EXPECT_EQ(c, want);
}

TEST(Config, ErrorsNameTheLine) {
  const auto message = [](const std::string& text) {
    try {
      parse(text);
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string("no error");
  };
  EXPECT_NE(message("seed = 1\nbogus.key = 3\n").find("line 2"), std::string::npos);
  EXPECT_NE(message("seed = 1\n\nseed = 2\n").find("line 3: repeated key"), std::string::npos);
  EXPECT_NE(message("seed = x\n").find("line 1"), std::string::npos);
  EXPECT_NE(message("he.non_negative = maybe\n").find("true or false"), std::string::npos);
  EXPECT_NE(message("no equals sign\n").find("line 1"), std::string::npos);
  EXPECT_NE(message("partition.count = 2\npartition.1.labels = 1\npartition.1.train = 5\n").find("partition.2"),
            std::string::npos);
  EXPECT_NE(message("partition.0.labels = 1\n").find("numbered from 1"), std::string::npos);
}

TEST(Config, ValidationRejectsBadValues) {
  ScenarioConfig c;
  c.partitions.push_back({{0, 1}, {}, 100, 10});
  EXPECT_NO_THROW(c.validate());
  auto bad = c;
  bad.partitions[0].labels = {0, 0};
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = c;
  bad.partitions[0].labels = {};
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = c;
  bad.verifiers = 5;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = c;
  bad.depart = "4@3";
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = c;
  bad.arch = "conv:3:5x5,pool:avg,flatten,dense:7";
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = c;
  bad.task_escrow = bad.initial_balance;
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(Config, Departure) {
  const auto d = parse_departure("2@12");
  EXPECT_EQ(d.contributor, 2u);
  EXPECT_EQ(d.tick, 12u);
  EXPECT_THROW(parse_departure("2"), ConfigError);
  EXPECT_THROW(parse_departure("a@1"), ConfigError);
}

TEST(Config, SchemaListsEveryRenderedKey) {
  const auto s = schema();
  std::set<std::string> keys;
  for (const auto& k : s["keys"]) keys.insert(k["key"].get<std::string>());
  ScenarioConfig c;
  c.partitions.push_back({{0}, {}, 1, 1});
  std::istringstream in(render(c));
  for (std::string line; std::getline(in, line);) {
    auto key = line.substr(0, line.find(" = "));
    if (key.rfind("partition.1.", 0) == 0) key = "partition.N." + key.substr(12);
    EXPECT_TRUE(keys.count(key)) << key;
  }
}

TEST(Config, ShippedConfigsLoadAndValidate) {
  std::size_t n = 0;
  for (const auto& e : std::filesystem::directory_iterator(CHAINLEARN_SOURCE_DIR "/configs")) {
    if (e.path().extension() != ".conf") continue;
    ++n;
    const auto c = load(e.path().string());
    EXPECT_NO_THROW(c.validate()) << e.path();
    EXPECT_FALSE(c.wall_time) << e.path();
  }
  EXPECT_GE(n, 6u);
}
