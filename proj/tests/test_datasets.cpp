#include <gtest/gtest.h>

#include <filesystem>
#include <set>

#include "chainlearn/datasets.hpp"

using namespace chainlearn;
using namespace chainlearn::data;

TEST(Datasets, SyntheticDigitsAreBalancedAndDeterministic) {
  const auto a = synthetic_digits(20, 5);
  const auto b = synthetic_digits(20, 5);
  EXPECT_EQ(serialize(a), serialize(b));
  EXPECT_NE(serialize(a), serialize(synthetic_digits(20, 6)));
  EXPECT_EQ(a.size(), 200u);
  EXPECT_EQ(a.shape, (nn::Shape{1, 28, 28}));
  for (auto c : label_counts(a)) EXPECT_EQ(c, 20u);
  for (const auto& ex : a.examples)
    for (double v : ex.input) ASSERT_TRUE(v >= 0.0 && v <= 1.0);
}

TEST(Datasets, PartitionRespectsLabelsAndCounts) {
  const auto pool = synthetic_digits(60, 1);
  Rng rng(2);
  for (int i = 0; i < 200; ++i) {
    std::vector<PartitionSpec> specs;
    const auto n = rng.uniform_int(1, 3);
    for (int k = 0; k < n; ++k) {
      PartitionSpec s;
      for (int l = 0; l < 10; ++l)
        if (rng.bernoulli(0.5)) s.labels.push_back(l);
      if (s.labels.empty()) s.labels.push_back(static_cast<int>(rng.uniform_int(0, 9)));
      s.n_train = static_cast<std::size_t>(rng.uniform_int(1, 20 * static_cast<std::int64_t>(s.labels.size())));
      s.n_verify = static_cast<std::size_t>(rng.uniform_int(0, 5));
      specs.push_back(s);
    }
    const auto shares = partition(pool, specs, rng.next_u64());
    ASSERT_EQ(shares.size(), specs.size());
    std::set<std::string> used;  // shares never reuse a pool example
    for (std::size_t k = 0; k < shares.size(); ++k) {
      const auto& sh = shares[k];
      ASSERT_EQ(sh.subset(nn::Split::Train).size(), specs[k].n_train);
      ASSERT_EQ(sh.subset(nn::Split::Verify).size(), specs[k].n_verify);
      const std::set<int> allowed(specs[k].labels.begin(), specs[k].labels.end());
      for (const auto& ex : sh.examples) {
        ASSERT_TRUE(allowed.count(ex.label));
        ASSERT_TRUE(used.insert(nn::encode_doubles(ex.input)).second);
      }
    }
  }
}

TEST(Datasets, PartitionWeightsSkewLabels) {
  const auto pool = synthetic_digits(200, 3);
  PartitionSpec s{{0, 1}, {3.0, 1.0}, 200, 0};
  const auto share = partition(pool, {s}, 4)[0];
  const auto counts = label_counts(share);
  EXPECT_GT(counts[0], 2 * counts[1]);
}

TEST(Datasets, PartitionThrowsWhenPoolIsShort) {
  const auto pool = synthetic_digits(5, 3);
  EXPECT_THROW(partition(pool, {PartitionSpec{{0}, {}, 6, 0}}, 1), ConfigError);
}

TEST(Datasets, SerializationRoundTrip) {
  auto d = synthetic_digits(3, 9);
  d.splits.assign(d.size(), nn::Split::Train);
  d.splits[4] = nn::Split::Verify;
  d.splits[7] = nn::Split::Test;
  const auto bytes = serialize(d);
  const auto back = deserialize_dataset(bytes);
  EXPECT_EQ(serialize(back), bytes);
  EXPECT_EQ(back.splits, d.splits);
  auto damaged = bytes;
  damaged.resize(damaged.size() / 2);
  EXPECT_ANY_THROW(deserialize_dataset(damaged));
}

TEST(Datasets, IdxRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "chainlearn-idx-test";
  std::filesystem::create_directories(dir);
  const auto d = synthetic_digits(4, 11);
  write_idx(d, dir / "img", dir / "lbl");
  const auto back = ingest_idx(dir / "img", dir / "lbl");
  ASSERT_EQ(back.size(), d.size());
  EXPECT_EQ(back.shape, d.shape);
  for (std::size_t i = 0; i < d.size(); ++i) {
    EXPECT_EQ(back.examples[i].label, d.examples[i].label);
    for (std::size_t k = 0; k < d.examples[i].input.size(); ++k)
      ASSERT_NEAR(back.examples[i].input[k], d.examples[i].input[k], 0.5 / 255 + 1e-12);
  }
  std::filesystem::remove_all(dir);
}

TEST(Datasets, FadingWindowsAreBalancedAndSeparable) {
  const auto d = gen_fading_data(3, 400, 100);
  EXPECT_EQ(d.size(), 500u);
  EXPECT_EQ(d.num_classes, 2);
  const auto counts = label_counts(d);
  EXPECT_EQ(counts[0], counts[1]);
  // A deep fade pulls the window minimum down.
  double min0 = 0, min1 = 0;
  for (const auto& ex : d.examples) {
    const double m = *std::min_element(ex.input.begin(), ex.input.end());
    (ex.label ? min1 : min0) += m;
  }
  EXPECT_LT(min1 / counts[1], min0 / counts[0]);
}
