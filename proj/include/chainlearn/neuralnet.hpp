#pragma once

// Plaintext feedforward / convolutional networks: definition, forward pass,
// backpropagation training and the feature tap used by model fusion.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "chainlearn/common.hpp"

#include <json.hpp>

namespace chainlearn::nn {

// Channel-major tensor shape. Flat vectors are (n, 1, 1).
struct Shape {
  std::size_t c = 1, h = 1, w = 1;
  std::size_t size() const { return c * h * w; }
  bool operator==(const Shape&) const = default;
};

enum class PoolKind { Max, Avg, Sum };
enum class ActivationKind { Sigmoid, Relu };

struct Dense {
  std::size_t in = 0, out = 0;
  std::vector<double> weights;  // [out][in]
  std::vector<double> bias;     // [out]
};

struct Conv2d {
  std::size_t in_c = 0, out_c = 0, kh = 0, kw = 0;
  std::vector<double> weights;  // [out_c][in_c][kh][kw]
  std::vector<double> bias;     // [out_c]
};

struct Pool {
  PoolKind kind = PoolKind::Avg;
  std::size_t window = 2;
};

struct Activation {
  ActivationKind kind = ActivationKind::Relu;
};

struct Flatten {};
struct Softmax {};

using Layer = std::variant<Dense, Conv2d, Pool, Activation, Flatten, Softmax>;

std::string layer_name(const Layer& layer);

struct LayeredModel {
  Shape input;
  std::vector<Layer> layers;

  // Output shape of every layer, in order. Throws ShapeError on inconsistency.
  std::vector<Shape> shapes() const;
  Shape output_shape() const;
  void validate() const;

  // Index of the last Dense or Conv2d layer: the output layer whose input is
  // the fusion feature vector.
  std::size_t output_layer_index() const;
  std::size_t feature_length() const;
  std::size_t parameter_count() const;

  bool has_softmax() const;
};

// Mutable views over every weight and bias buffer, in layer order.
std::vector<std::span<double>> parameters(LayeredModel& model);
std::vector<std::span<const double>> parameters(const LayeredModel& model);

// Builders ------------------------------------------------------------------

// Glorot-uniform initialisation, seeded.
void init_weights(LayeredModel& model, std::uint64_t seed);

Dense make_dense(std::size_t in, std::size_t out);
Conv2d make_conv(std::size_t in_c, std::size_t out_c, std::size_t kh, std::size_t kw);

// Inference -----------------------------------------------------------------

std::vector<double> forward(const LayeredModel& model, std::span<const double> input);

// Activations feeding the output layer.
std::vector<double> feature_vector(const LayeredModel& model, std::span<const double> input);

// Runs only layers [first, last) starting from `input` shaped as shapes()[first-1].
std::vector<double> forward_range(const LayeredModel& model, std::span<const double> input,
                                  std::size_t first, std::size_t last);

std::size_t argmax(std::span<const double> scores);
std::vector<double> softmax(std::span<const double> logits);

// Datasets ------------------------------------------------------------------

enum class Split { Train, Verify, Test };

struct Example {
  std::vector<double> input;
  int label = 0;
  std::vector<double> target;  // optional regression target (MSE loss)
};

struct LabeledDataset {
  Shape shape;
  int num_classes = 10;
  std::vector<Example> examples;
  std::vector<Split> splits;  // parallel to examples; empty means all Train

  std::size_t size() const { return examples.size(); }
  LabeledDataset subset(Split split) const;
  void validate() const;
  void append(Example ex, Split split);
};

// Training ------------------------------------------------------------------

enum class OptimizerKind { Sgd, Adam };
enum class LossKind { CrossEntropy, Mse };

struct TrainConfig {
  OptimizerKind optimizer = OptimizerKind::Adam;
  LossKind loss = LossKind::CrossEntropy;
  std::size_t batch_size = 50;
  double learning_rate = 1e-3;
  double beta1 = 0.9, beta2 = 0.999, epsilon = 1e-8;
  std::size_t max_epochs = 100;
  double stop_accuracy = 1.1;  // > 1 disables early stop
  std::uint64_t seed = 0;

  void validate(std::size_t dataset_size) const;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double loss = 0.0;
  double stop_accuracy = 0.0;  // accuracy on the split used by the stop rule
};

struct TrainResult {
  LayeredModel model;
  std::vector<EpochRecord> history;
};

// Per-parameter gradients, aligned with parameters(model).
struct Gradients {
  std::vector<std::vector<double>> buffers;
  double loss = 0.0;
};

// Mean loss and its gradient over the given examples.
Gradients compute_gradients(const LayeredModel& model, std::span<const Example> batch, LossKind loss);

double loss_value(const LayeredModel& model, std::span<const Example> batch, LossKind loss);

// Stops at cfg.stop_accuracy measured on the Verify split (or Train when no
// Verify examples exist), or after cfg.max_epochs.
TrainResult train(LayeredModel model, const LabeledDataset& data, const TrainConfig& cfg);

// Argmax accuracy; ties resolve to the lowest class index.
double evaluate(const LayeredModel& model, const LabeledDataset& data);
double evaluate(const LayeredModel& model, std::span<const Example> examples);

// Serialization: versioned JSON, weights as base64 little-endian float64.
nlohmann::json to_json(const LayeredModel& model);
LayeredModel model_from_json(const nlohmann::json& j);
Bytes serialize(const LayeredModel& model);
LayeredModel deserialize_model(std::span<const std::uint8_t> bytes);

nlohmann::json shape_to_json(const Shape& s);
Shape shape_from_json(const nlohmann::json& j);

std::string encode_doubles(std::span<const double> values);
std::vector<double> decode_doubles(const std::string& text);

}  // namespace chainlearn::nn
