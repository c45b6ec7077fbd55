#pragma once

// Running a trained network in cipherspace.
//
// quantize() turns real weights into integers (scale p per weight layer,
// input scale q, avg-pool divisors folded into the output scale). The first
// weight tensor is then encrypted:
//
//  * element-wise: every scalar weight becomes a length-2 ciphertext, giving
//    a trailing lane axis of size 2. Each lane runs through the rest of the
//    network with plaintext integer weights; decryption recombines
//    (lane1 + t*lane2) / (w * scale).
//
//  * matrix-pair: conv1's r filter weights at each kernel tap form one
//    length-r plaintext, encrypted to r+1 channels. conv2 is widened to r+1
//    input channels; its extra slice is the sum of the other slices, which
//    folds the extra channel into lane 2. Requires a key whose secret vector
//    has identical entries (HEParams::uniform_secret), after which both
//    strategies share the same two-lane execution.
//
// Lanes are 64-bit when an analytic magnitude bound allows, 128-bit
// otherwise.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "chainlearn/ivhe.hpp"
#include "chainlearn/neuralnet.hpp"

namespace chainlearn::cipher {

using Wide = __int128;

struct IntDense {
  std::size_t in = 0, out = 0;
  std::vector<std::int64_t> weights;  // [out][in]
  std::vector<std::int64_t> bias;     // at scale in_scale * p
};

struct IntConv {
  std::size_t in_c = 0, out_c = 0, kh = 0, kw = 0;
  std::vector<std::int64_t> weights;  // [out_c][in_c][kh][kw]
  std::vector<std::int64_t> bias;
};

using ScaledLayer = std::variant<IntDense, IntConv, nn::Pool, nn::Activation, nn::Flatten, nn::Softmax>;

// Cubic (or linear) Taylor approximation of the logistic sigmoid:
// 1/2 + x/4 - x^3/divisor. The true Taylor divisor is 48.
struct SigmoidApprox {
  int order = 3;
  double cubic_divisor = 48.0;

  double operator()(double x) const;
  std::vector<double> coefficients() const;  // c0, c1, c2, c3
};

struct ScaledModel {
  nn::Shape input;
  std::vector<ScaledLayer> layers;
  std::int64_t p = 1 << 7;
  std::int64_t q = 1000;
  std::int64_t sigmoid_scale = 1 << 12;  // re-quantization scale after an approximate sigmoid
  SigmoidApprox sigmoid;
  // Scale of each layer's output (product of the factors applied so far).
  std::vector<std::int64_t> layer_scale;
  // Factors applied along the path, in order: q, p, window areas, ...
  std::vector<std::int64_t> scale_ledger;

  std::int64_t output_scale() const;
  std::size_t output_layer_index() const;
  bool has_softmax() const;
  // Output shape of every layer; does not look at weight buffers.
  std::vector<nn::Shape> shapes() const;
};

// p, q >= 1; rejects max pooling.
ScaledModel quantize(const nn::LayeredModel& model, std::int64_t p, std::int64_t q,
                     std::int64_t sigmoid_scale = 1 << 12, SigmoidApprox sigmoid = {});

// Integer weights / scale back to real weights.
nn::LayeredModel dequantize(const ScaledModel& sm);

// Integer input: round(q * x), half away from zero.
std::vector<std::int64_t> quantize_input(std::span<const double> input, std::int64_t q);

// Plaintext forward of the quantized network. Integer scores at output_scale().
std::vector<Wide> forward_quantized(const ScaledModel& sm, std::span<const double> input);
std::vector<double> forward_quantized_real(const ScaledModel& sm, std::span<const double> input);

// ---------------------------------------------------------------------------

enum class Strategy { ElementWise, MatrixPair };
std::string strategy_name(Strategy s);
Strategy strategy_from(const std::string& s);

enum class NoisePolicy {
  Exact,   // reject keys/inputs whose worst-case noise could perturb rounded results
  Report,  // accept; results are approximate within the reported noise bound
};

struct EncryptOptions {
  NoisePolicy noise = NoisePolicy::Report;
  double max_abs_input = 1.0;  // real-valued input bound used by the Exact budget check
  // Lane-wise sigmoid is not exact; models with a sigmoid after the
  // encrypted layer are refused unless this is set.
  bool approximate_sigmoid = false;
};

struct EncryptedModel {
  Strategy strategy = Strategy::ElementWise;
  ScaledModel plain;            // all layers; encrypted ones keep shapes, weights cleared
  std::size_t encrypted_layer = 0;   // index of the (first) encrypted layer
  // Ciphertext digits, component-major. element-wise: [2][weights...];
  // matrix-pair: [r+1][in_c][kh][kw]. Serialized with the lane axis last.
  std::vector<std::int64_t> enc_weights;
  std::vector<std::int64_t> enc_bias;  // element-wise: [2][out]; matrix-pair: [r+1]
  // matrix-pair only: conv2 widened to [l][r+1][kh][kw]
  std::size_t pair_layer = 0;
  std::vector<std::int64_t> pair_weights;
  std::string key_id;
  ivhe::HEParams params;
  NoisePolicy noise_policy = NoisePolicy::Report;
  std::int64_t input_bound = 0;    // quantized input bound checked under NoisePolicy::Exact
  bool approximate_sigmoid = false;

  // Derived on construction / load: per-layer max row abs-sum of the integer
  // weights and max |bias| (lane units), for the overflow and noise bounds.
  std::vector<double> gain, bias_mag;

  std::vector<std::size_t> encrypted_shape() const;
  std::vector<std::size_t> pair_shape() const;
};

EncryptedModel encrypt_elementwise(const ScaledModel& sm, const ivhe::SwitchKey& key, EncryptOptions opts = {});
EncryptedModel encrypt_matrixpair(const ScaledModel& sm, const ivhe::SwitchKey& key, EncryptOptions opts = {});

// Two integer lanes plus the scale that divides their recombination.
struct CipherLanes {
  std::vector<Wide> lane1, lane2;
  std::int64_t w = 1;
  std::vector<std::int64_t> scales;
  bool softmax = false;
  bool wide = false;  // true when the 128-bit path ran

  Wide total_scale() const;
};

CipherLanes forward_cipher(const EncryptedModel& em, std::span<const double> input);

// Lanes at the input of the output layer (the fusion feature tap).
CipherLanes feature_lanes(const EncryptedModel& em, std::span<const double> input);

// Public normalisation of lane features: each lane divided by w * scale.
// The true features are lane1 + t * lane2 in these units.
std::vector<double> normalized_lane_features(const CipherLanes& lanes);

// (lane1 + t*lane2) / (w * scale), softmax applied afterwards when declared.
std::vector<double> decrypt_scores(const CipherLanes& lanes, const ivhe::SecretKey& sk);

// round((lane1 + t*lane2) / w): integer scores at total_scale(). Equal to
// forward_quantized() whenever the accumulated noise is zero.
std::vector<Wide> decrypt_scores_exact(const CipherLanes& lanes, const ivhe::SecretKey& sk);

// Initiator side: recover the integer ScaledModel (requires the secret key).
ScaledModel decrypt_model(const EncryptedModel& em, const ivhe::SecretKey& sk);

// Worst-case magnitude of the noise term in the final recombination, in
// units of the integer score (after division by w), for inputs bounded by
// max_abs_input.
double noise_bound_scores(const EncryptedModel& em, double max_abs_input);

nlohmann::json to_json(const ScaledModel& sm);
ScaledModel scaled_model_from_json(const nlohmann::json& j);
nlohmann::json to_json(const EncryptedModel& em);
EncryptedModel encrypted_model_from_json(const nlohmann::json& j);
Bytes serialize(const EncryptedModel& em);
EncryptedModel deserialize_encrypted_model(std::span<const std::uint8_t> bytes);

}  // namespace chainlearn::cipher
