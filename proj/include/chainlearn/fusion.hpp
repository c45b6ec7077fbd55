#pragma once

// Early fusion of frozen private models. The upper-layer features of every
// model are concatenated into f_c and a two-matrix linear head maps them to
// class probabilities:
//
//     h = A^T f_c,    y = softmax(B^T h)
//
// Each model owns a feature span in f_c and a label span of width d in h.
// Strategy I initialises A and B at random. Strategy II starts from a
// block-diagonal A (one dense random block per model) and B stacked from d x d
// identities, trains only those blocks first (gamma = 0), then everything
// (gamma = 1).

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "chainlearn/neuralnet.hpp"

namespace chainlearn::fusion {

struct Span {
  std::size_t offset = 0, length = 0;
  bool operator==(const Span&) const = default;
};

// Row-major example matrix: n rows of `dim` features.
struct FeatureSet {
  std::size_t dim = 0;
  std::vector<double> x;
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  std::span<const double> row(std::size_t i) const { return {x.data() + i * dim, dim}; }
  void push(std::span<const double> f, int label);
};

struct FusionWeights {
  std::size_t f_len = 0, h_len = 0, d = 0;
  std::vector<double> a;  // [f_len][h_len]
  std::vector<double> b;  // [h_len][d]
  std::vector<Span> feature_spans, label_spans;
  int gamma = 1;

  // softmax(B^T A^T f)
  std::vector<double> scores(std::span<const double> f) const;
  std::vector<double> hidden(std::span<const double> f) const;

  // Entries trainable in the gamma = 0 stage: A inside the model blocks, B on
  // the stacked-identity diagonal.
  bool a_in_block(std::size_t i, std::size_t j) const;
  bool b_on_identity(std::size_t j, std::size_t k) const;
};

std::vector<Span> spans_from_lengths(std::span<const std::size_t> lengths);

FusionWeights init_strategy1(std::span<const std::size_t> feature_lengths, std::size_t d, std::uint64_t seed);
FusionWeights init_strategy2(std::span<const std::size_t> feature_lengths, std::size_t d, std::uint64_t seed);

struct HeadGradients {
  std::vector<double> a, b;
  double loss = 0.0;
};

// Mean cross-entropy gradient over the given rows.
HeadGradients head_gradients(const FusionWeights& fw, const FeatureSet& data, std::span<const std::size_t> rows);

// Checkpoint selection: after every epoch the head is scored on `holdout`
// and the best weights so far (strictly better accuracy) are kept.
struct HeadSelection {
  const FeatureSet* holdout = nullptr;
  double best_accuracy = -1.0;
  std::size_t best_epoch = 0;  // 1-based across calls sharing this selection
  std::size_t epochs_seen = 0;
  FusionWeights best;
};

// Adam (or SGD) on the head for `epochs` passes; under gamma = 0 only the
// block entries move, every other entry stays bit-identical.
void train_head(FusionWeights& fw, const FeatureSet& data, const nn::TrainConfig& cfg, std::size_t epochs,
                HeadSelection* selection = nullptr);

double head_accuracy(const FusionWeights& fw, const FeatureSet& data);

// ---------------------------------------------------------------------------

enum class Strategy { I, II };
std::string strategy_name(Strategy s);
Strategy strategy_from(const std::string& s);

struct MetaModel {
  std::vector<nn::LayeredModel> models;
  std::vector<std::string> model_refs;  // content hashes, when known
  FusionWeights head;
  Strategy strategy = Strategy::I;

  std::vector<double> scores(std::span<const double> input) const;
};

std::vector<double> concat_features(std::span<const nn::LayeredModel> models, std::span<const double> input);

FeatureSet extract_features(std::span<const nn::LayeredModel> models, const nn::LabeledDataset& data);

// When `data` carries Verify-split examples the head trains on the Train
// split and keeps the epoch with the best Verify accuracy; otherwise it
// trains on everything and keeps the last epoch.
MetaModel fuse_strategy1(std::span<const nn::LayeredModel> models, const nn::LabeledDataset& data,
                         const nn::TrainConfig& cfg);

// stage epochs (e0, e1): e0 at gamma = 0, then e1 at gamma = 1.
MetaModel fuse_strategy2(std::span<const nn::LayeredModel> models, const nn::LabeledDataset& data,
                         const nn::TrainConfig& cfg, std::size_t e0, std::size_t e1);

double evaluate(const MetaModel& meta, const nn::LabeledDataset& data);

// ---------------------------------------------------------------------------

struct FedAvgResult {
  nn::LayeredModel model;
  std::uint64_t bytes_transferred = 0;  // broadcast + upload of float64 weights, all rounds
  std::vector<double> round_accuracy;   // on the optional monitor set
};

FedAvgResult fedavg_baseline(std::span<const nn::LabeledDataset> local_datasets, const nn::LayeredModel& arch,
                             std::size_t rounds, std::size_t local_epochs, const nn::TrainConfig& cfg,
                             const nn::LabeledDataset* monitor = nullptr);

// Manifest: private-model refs plus head weights. Reconstruction resolves the
// refs through `fetch`.
nlohmann::json to_manifest(const MetaModel& meta);
MetaModel from_manifest(const nlohmann::json& j,
                        const std::function<nn::LayeredModel(const std::string& ref)>& fetch);

nlohmann::json to_json(const FusionWeights& fw);
FusionWeights fusion_weights_from_json(const nlohmann::json& j);

}  // namespace chainlearn::fusion
