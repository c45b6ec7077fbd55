#include <gtest/gtest.h>

#include <cmath>

#include "chainlearn/config.hpp"
#include "chainlearn/fusion.hpp"

using namespace chainlearn;
using namespace chainlearn::fusion;

namespace {

FeatureSet random_features(Rng& rng, std::size_t n, std::size_t dim, int d) {
  FeatureSet fs;
  fs.dim = dim;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> f(dim);
    for (auto& v : f) v = rng.uniform(-1.0, 1.0);
    // Label depends on the features so training has signal.
    const int label = static_cast<int>((f[0] > 0 ? 1 : 0) + (f[dim - 1] > 0 ? 1 : 0)) % d;
    fs.push(f, label);
  }
  return fs;
}

double head_loss(const FusionWeights& fw, const FeatureSet& data) {
  double loss = 0;
  for (std::size_t i = 0; i < data.size(); ++i)
    loss -= std::log(fw.scores(data.row(i))[static_cast<std::size_t>(data.labels[i])]);
  return loss / static_cast<double>(data.size());
}

}  // namespace

TEST(Fusion, SpansTileTheFeatureVector) {
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) {
    std::vector<std::size_t> lens(static_cast<std::size_t>(rng.uniform_int(1, 6)));
    for (auto& l : lens) l = static_cast<std::size_t>(rng.uniform_int(1, 20));
    const auto spans = spans_from_lengths(lens);
    std::size_t off = 0;
    for (std::size_t k = 0; k < spans.size(); ++k) {
      ASSERT_EQ(spans[k].offset, off);
      ASSERT_EQ(spans[k].length, lens[k]);
      off += lens[k];
    }
  }
}

TEST(Fusion, Strategy2InitStructure) {
  const std::vector<std::size_t> lens{5, 3, 4};
  const std::size_t d = 3;
  const auto fw = init_strategy2(lens, d, 7);
  EXPECT_EQ(fw.f_len, 12u);
  EXPECT_EQ(fw.h_len, 9u);
  EXPECT_EQ(fw.gamma, 0);
  for (std::size_t i = 0; i < fw.f_len; ++i)
    for (std::size_t j = 0; j < fw.h_len; ++j) {
      const double v = fw.a[i * fw.h_len + j];
      if (!fw.a_in_block(i, j)) EXPECT_EQ(v, 0.0) << i << "," << j;
    }
  for (std::size_t j = 0; j < fw.h_len; ++j)
    for (std::size_t k = 0; k < d; ++k) EXPECT_EQ(fw.b[j * d + k], j % d == k ? 1.0 : 0.0);
}

TEST(Fusion, HeadGradientsMatchFiniteDifferences) {
  Rng rng(2);
  const std::vector<std::size_t> lens{3, 4};
  auto fw = init_strategy1(lens, 3, 3);
  const auto data = random_features(rng, 12, 7, 3);
  std::vector<std::size_t> rows(data.size());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  const auto g = head_gradients(fw, data, rows);
  EXPECT_NEAR(g.loss, head_loss(fw, data), 1e-12);
  const double h = 1e-6;
  for (auto* buf : {&fw.a, &fw.b}) {
    const auto& grad = buf == &fw.a ? g.a : g.b;
    for (std::size_t k = 0; k < buf->size(); ++k) {
      const double keep = (*buf)[k];
      (*buf)[k] = keep + h;
      const double up = head_loss(fw, data);
      (*buf)[k] = keep - h;
      const double dn = head_loss(fw, data);
      (*buf)[k] = keep;
      ASSERT_NEAR(grad[k], (up - dn) / (2 * h), 1e-7);
    }
  }
}

TEST(Fusion, GammaZeroFreezesOffBlockEntries) {
  Rng rng(4);
  const std::vector<std::size_t> lens{4, 4, 2};
  auto fw = init_strategy2(lens, 3, 5);
  // Perturb the frozen entries so "unchanged" is distinguishable from zero.
  for (std::size_t i = 0; i < fw.f_len; ++i)
    for (std::size_t j = 0; j < fw.h_len; ++j)
      if (!fw.a_in_block(i, j)) fw.a[i * fw.h_len + j] = rng.uniform(-0.1, 0.1);
  for (std::size_t j = 0; j < fw.h_len; ++j)
    for (std::size_t k = 0; k < fw.d; ++k)
      if (!fw.b_on_identity(j, k)) fw.b[j * fw.d + k] = rng.uniform(-0.1, 0.1);
  const auto before = fw;
  const auto data = random_features(rng, 200, 10, 3);
  nn::TrainConfig cfg;
  cfg.batch_size = 16;
  cfg.learning_rate = 0.01;
  train_head(fw, data, cfg, 5);
  bool moved = false;
  for (std::size_t i = 0; i < fw.f_len; ++i)
    for (std::size_t j = 0; j < fw.h_len; ++j) {
      const std::size_t k = i * fw.h_len + j;
      if (fw.a_in_block(i, j)) {
        moved = moved || fw.a[k] != before.a[k];
      } else {
        ASSERT_EQ(fw.a[k], before.a[k]);
      }
    }
  for (std::size_t j = 0; j < fw.h_len; ++j)
    for (std::size_t k = 0; k < fw.d; ++k)
      if (!fw.b_on_identity(j, k)) ASSERT_EQ(fw.b[j * fw.d + k], before.b[j * fw.d + k]);
  EXPECT_TRUE(moved);
}

TEST(Fusion, TrainingReducesLossAndSelectionKeepsBest) {
  Rng rng(6);
  const std::vector<std::size_t> lens{5, 5};
  auto fw = init_strategy1(lens, 3, 1);
  const auto train = random_features(rng, 300, 10, 3);
  const auto hold = random_features(rng, 100, 10, 3);
  const double l0 = head_loss(fw, train);
  nn::TrainConfig cfg;
  cfg.batch_size = 16;
  cfg.learning_rate = 0.01;
  HeadSelection sel;
  sel.holdout = &hold;
  train_head(fw, train, cfg, 20, &sel);
  EXPECT_LT(head_loss(fw, train), l0);
  EXPECT_EQ(sel.epochs_seen, 20u);
  ASSERT_GE(sel.best_epoch, 1u);
  EXPECT_DOUBLE_EQ(head_accuracy(sel.best, hold), sel.best_accuracy);
}

TEST(Fusion, MetaModelOnTinyModels) {
  Rng rng(8);
  nn::LabeledDataset data;
  data.shape = {4, 1, 1};
  data.num_classes = 2;
  for (int i = 0; i < 300; ++i) {
    nn::Example ex;
    ex.input = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
    ex.label = ex.input[0] + ex.input[1] > 0 ? 1 : 0;
    data.append(ex, i < 200 ? nn::Split::Train : nn::Split::Verify);
  }
  std::vector<nn::LayeredModel> models;
  for (std::uint64_t s = 0; s < 2; ++s) {
    auto m = config::build_arch("flatten,dense:6,relu,dense:2", data.shape, 2);
    nn::init_weights(m, s);
    models.push_back(m);
  }
  nn::TrainConfig cfg;
  cfg.batch_size = 16;
  cfg.learning_rate = 0.01;
  auto meta = fuse_strategy2(models, data, cfg, 5, 20);
  meta.model_refs = {"ref-a", "ref-b"};
  EXPECT_EQ(meta.head.f_len, 12u);
  EXPECT_EQ(meta.head.h_len, 4u);
  const auto x = data.examples[0].input;
  EXPECT_EQ(concat_features(models, x).size(), 12u);
  const auto s = meta.scores(x);
  EXPECT_NEAR(s[0] + s[1], 1.0, 1e-12);
  EXPECT_GT(evaluate(meta, data.subset(nn::Split::Verify)), 0.6);

  const auto manifest = to_manifest(meta);
  std::vector<std::string> asked;
  const auto back = from_manifest(manifest, [&](const std::string& ref) {
    asked.push_back(ref);
    return models[asked.size() - 1];
  });
  EXPECT_EQ(asked, meta.model_refs);
  EXPECT_EQ(back.scores(x), s);
  EXPECT_EQ(to_json(fusion_weights_from_json(to_json(meta.head))).dump(), to_json(meta.head).dump());
}

TEST(Fusion, FedAvgCountsBytes) {
  Rng rng(9);
  std::vector<nn::LabeledDataset> locals(2);
  for (auto& d : locals) {
    d.shape = {3, 1, 1};
    d.num_classes = 2;
    for (int i = 0; i < 60; ++i) {
      nn::Example ex;
      ex.input = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
      ex.label = ex.input[0] > 0 ? 1 : 0;
      d.append(ex, nn::Split::Train);
    }
  }
  auto arch = config::build_arch("flatten,dense:2", {3, 1, 1}, 2);
  nn::init_weights(arch, 1);
  nn::TrainConfig cfg;
  cfg.batch_size = 10;
  cfg.learning_rate = 0.05;
  const auto r = fedavg_baseline(locals, arch, 3, 1, cfg, &locals[0]);
  // Each round broadcasts to and uploads from every client: 2 * clients * params * 8 bytes.
  EXPECT_EQ(r.bytes_transferred, 3u * 2u * 2u * arch.parameter_count() * 8u);
  EXPECT_EQ(r.round_accuracy.size(), 3u);
  EXPECT_GT(evaluate(r.model, locals[1]), 0.8);
}
