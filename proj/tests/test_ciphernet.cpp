#include <gtest/gtest.h>

#include <cmath>

#include "chainlearn/ciphernet.hpp"
#include "chainlearn/config.hpp"

using namespace chainlearn;
using namespace chainlearn::cipher;

namespace {

nn::LayeredModel arch(const std::string& spec, std::uint64_t seed, nn::Shape in = {1, 8, 8}, int classes = 3) {
  auto m = config::build_arch(spec, in, classes);
  nn::init_weights(m, seed);
  return m;
}

ivhe::KeyMaterial keys(std::size_t n, std::int64_t e_bound, bool non_negative, std::uint64_t seed,
                       bool uniform = false) {
  ivhe::HEParams p;
  p.n = n;
  p.e_bound = e_bound;
  p.non_negative = non_negative;
  p.uniform_secret = uniform;
  return ivhe::gen_keys(p, seed);
}

std::vector<double> random_input(Rng& rng, std::size_t n) {
  std::vector<double> x(n);
  for (auto& v : x) v = rng.uniform(0.0, 1.0);
  return x;
}

const char* kLinear = "conv:2:3x3,pool:avg,conv:2:3x3,pool:avg,flatten,dense:3";

}  // namespace

TEST(Ciphernet, ExactPolicyDecryptsToQuantizedScores) {
  const auto m = arch(kLinear, 1);
  const auto sm = quantize(m, 128, 1000);
  const auto km = keys(1, 0, false, 2);
  EncryptOptions opts;
  opts.noise = NoisePolicy::Exact;
  const auto em = encrypt_elementwise(sm, km.switch_key, opts);
  Rng rng(3);
  for (int i = 0; i < 1000; ++i) {
    const auto x = random_input(rng, 64);
    const auto lanes = forward_cipher(em, x);
    ASSERT_EQ(lanes.total_scale(), static_cast<Wide>(sm.output_scale()));
    ASSERT_TRUE(decrypt_scores_exact(lanes, km.secret) == forward_quantized(sm, x)) << "input " << i;
  }
}

TEST(Ciphernet, ExactPolicyRejectsNoisyKeys) {
  const auto sm = quantize(arch(kLinear, 1), 128, 1000);
  const auto km = keys(1, 1, false, 2);
  EncryptOptions opts;
  opts.noise = NoisePolicy::Exact;
  EXPECT_THROW(encrypt_elementwise(sm, km.switch_key, opts), BudgetError);
}

TEST(Ciphernet, QuantizedForwardTracksPlaintext) {
  const auto m = arch(kLinear, 4);
  const auto sm = quantize(m, 1 << 10, 1 << 12);
  Rng rng(5);
  for (int i = 0; i < 200; ++i) {
    const auto x = random_input(rng, 64);
    const auto a = nn::forward(m, x), b = forward_quantized_real(sm, x);
    for (std::size_t k = 0; k < a.size(); ++k) ASSERT_NEAR(a[k], b[k], 1e-2);
  }
}

TEST(Ciphernet, ReluArgmaxAgreement) {
  const auto m = arch("conv:3:3x3,relu,conv:3:3x3,relu,flatten,dense:3", 6);
  const auto sm = quantize(m, 128, 1000);
  for (std::int64_t e : {0, 1}) {
    const auto km = keys(1, e, true, 7);
    const auto em = encrypt_elementwise(sm, km.switch_key);
    Rng rng(8);
    int agree = 0;
    for (int i = 0; i < 500; ++i) {
      const auto x = random_input(rng, 64);
      const auto dec = decrypt_scores(forward_cipher(em, x), km.secret);
      const auto ref = forward_quantized_real(sm, x);
      if (nn::argmax(dec) == nn::argmax(ref)) ++agree;
    }
    if (e == 0) {
      EXPECT_EQ(agree, 500);
    } else {
      EXPECT_GE(agree, 490);
    }
  }
}

TEST(Ciphernet, MatrixPairMatchesElementWise) {
  const auto m = arch("conv:3:3x3,pool:avg,conv:2:3x3,flatten,dense:3", 9);  // linear: lane-wise ReLU is not exact
  const auto sm = quantize(m, 128, 1000);
  const auto km = keys(3, 0, true, 10, true);
  const auto mp = encrypt_matrixpair(sm, km.switch_key);
  const auto ew_keys = keys(1, 0, true, 11, true);
  const auto ew = encrypt_elementwise(sm, ew_keys.switch_key);
  Rng rng(12);
  for (int i = 0; i < 300; ++i) {
    const auto x = random_input(rng, 64);
    const auto a = decrypt_scores_exact(forward_cipher(mp, x), km.secret);
    const auto b = decrypt_scores_exact(forward_cipher(ew, x), ew_keys.secret);
    ASSERT_TRUE(a == b) << "input " << i;
    ASSERT_TRUE(a == forward_quantized(sm, x));
  }
}

TEST(Ciphernet, MatrixPairNeedsUniformSecret) {
  const auto sm = quantize(arch("conv:3:3x3,pool:avg,conv:2:3x3,flatten,dense:3", 9), 128, 1000);
  const auto km = keys(3, 0, false, 10, false);
  EXPECT_ANY_THROW(encrypt_matrixpair(sm, km.switch_key));
}

TEST(Ciphernet, DecryptModelRecoversQuantizedWeights) {
  const auto sm = quantize(arch(kLinear, 13), 128, 1000);
  const auto km = keys(1, 1, false, 14);
  const auto em = encrypt_elementwise(sm, km.switch_key);
  const auto back = decrypt_model(em, km.secret);
  EXPECT_EQ(to_json(back).dump(), to_json(sm).dump());
}

TEST(Ciphernet, MaxPoolIsRejected) {
  const auto m = arch("conv:2:3x3,pool:max,flatten,dense:3", 1);
  EXPECT_ANY_THROW(quantize(m, 128, 1000));
}

TEST(Ciphernet, QuantizeInputRoundsHalfAway) {
  const std::vector<double> x{0.0005, -0.0005, 0.0004, 1.0};
  EXPECT_EQ(quantize_input(x, 1000), (std::vector<std::int64_t>{1, -1, 0, 1000}));
}

TEST(Ciphernet, SerializationRoundTrip) {
  const auto sm = quantize(arch(kLinear, 15), 128, 1000);
  const auto km = keys(1, 1, false, 16);
  const auto em = encrypt_elementwise(sm, km.switch_key);
  const auto bytes = serialize(em);
  const auto back = deserialize_encrypted_model(bytes);
  EXPECT_EQ(serialize(back), bytes);
  Rng rng(17);
  const auto x = random_input(rng, 64);
  const auto a = forward_cipher(em, x), b = forward_cipher(back, x);
  EXPECT_TRUE(a.lane1 == b.lane1 && a.lane2 == b.lane2);
}

TEST(Ciphernet, FeatureLanesRecombineToPlainFeatures) {
  const auto m = arch(kLinear, 18);
  const auto sm = quantize(m, 1 << 10, 1 << 12);
  const auto km = keys(1, 0, false, 19);
  const auto em = encrypt_elementwise(sm, km.switch_key);
  const double t = static_cast<double>(km.secret.t[0]);
  Rng rng(20);
  for (int i = 0; i < 100; ++i) {
    const auto x = random_input(rng, 64);
    const auto lanes = feature_lanes(em, x);
    const auto norm = normalized_lane_features(lanes);
    const auto plain = nn::feature_vector(m, x);
    ASSERT_EQ(norm.size(), 2 * plain.size());
    // Lane layout is [lane1..., lane2...]; true features are lane1 + t*lane2.
    for (std::size_t k = 0; k < plain.size(); ++k)
      ASSERT_NEAR(norm[k] + t * norm[plain.size() + k], plain[k], 1e-2);
  }
}

TEST(Ciphernet, SigmoidApproximation) {
  for (double divisor : {48.0, 348.0}) {
    SigmoidApprox s{3, divisor};
    double sup = 0;
    for (int i = -1000; i <= 1000; ++i) {
      const double x = i / 1000.0;
      sup = std::max(sup, std::abs(s(x) - 1.0 / (1.0 + std::exp(-x))));
    }
    EXPECT_LE(sup, 0.05) << divisor;
  }
  EXPECT_NEAR((SigmoidApprox{3, 48.0})(1.0), 0.72917, 1e-5);
  EXPECT_NEAR((SigmoidApprox{1, 48.0})(1.0), 0.75, 1e-15);
  EXPECT_THROW((SigmoidApprox{2, 48.0})(0.0), ParameterError);
}
