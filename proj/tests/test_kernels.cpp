#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "chainlearn/common.hpp"
#include "chainlearn/kernels.hpp"

using namespace chainlearn;
using namespace chainlearn::kernels;

namespace {

template <typename T>
std::vector<T> random_buf(Rng& rng, std::size_t n, std::int64_t bound) {
  std::vector<T> v(n);
  for (auto& x : v) {
    if constexpr (std::is_floating_point_v<T>) {
      x = rng.uniform(-1.0, 1.0);
    } else {
      x = static_cast<T>(rng.uniform_int(-bound, bound));
    }
  }
  return v;
}

ConvGeom random_geom(Rng& rng) {
  ConvGeom g{};
  g.in_c = static_cast<std::size_t>(rng.uniform_int(1, 3));
  g.out_c = static_cast<std::size_t>(rng.uniform_int(1, 4));
  g.h = static_cast<std::size_t>(rng.uniform_int(1, 7));
  g.w = static_cast<std::size_t>(rng.uniform_int(1, 7));
  g.kh = static_cast<std::size_t>(rng.uniform_int(1, 5));
  g.kw = static_cast<std::size_t>(rng.uniform_int(1, 5));
  return g;
}

// Independent oracle: direct "same" convolution with explicit bounds checks.
std::vector<double> conv_oracle(const ConvGeom& g, const std::vector<double>& in, const std::vector<double>& wt,
                                const std::vector<double>& b) {
  std::vector<double> out(g.out_size());
  const long py = static_cast<long>(g.pad_y()), px = static_cast<long>(g.pad_x());
  for (std::size_t o = 0; o < g.out_c; ++o)
    for (long y = 0; y < static_cast<long>(g.h); ++y)
      for (long x = 0; x < static_cast<long>(g.w); ++x) {
        double acc = b[o];
        for (std::size_t c = 0; c < g.in_c; ++c)
          for (long ky = 0; ky < static_cast<long>(g.kh); ++ky)
            for (long kx = 0; kx < static_cast<long>(g.kw); ++kx) {
              const long iy = y + ky - py, ix = x + kx - px;
              if (iy < 0 || ix < 0 || iy >= static_cast<long>(g.h) || ix >= static_cast<long>(g.w)) continue;
              acc += wt[((o * g.in_c + c) * g.kh + static_cast<std::size_t>(ky)) * g.kw + static_cast<std::size_t>(kx)] *
                     in[(c * g.h + static_cast<std::size_t>(iy)) * g.w + static_cast<std::size_t>(ix)];
            }
        out[(o * g.h + static_cast<std::size_t>(y)) * g.w + static_cast<std::size_t>(x)] = acc;
      }
  return out;
}

}  // namespace

TEST(Kernels, ConvMatchesOracle) {
  Rng rng(1);
  for (int i = 0; i < 300; ++i) {
    const auto g = random_geom(rng);
    const auto in = random_buf<double>(rng, g.in_size(), 0);
    const auto wt = random_buf<double>(rng, g.weight_size(), 0);
    const auto b = random_buf<double>(rng, g.out_c, 0);
    std::vector<double> out(g.out_size());
    serial::conv2d_forward<double>(g, in, wt, b, out);
    const auto want = conv_oracle(g, in, wt, b);
    for (std::size_t k = 0; k < out.size(); ++k) ASSERT_NEAR(out[k], want[k], 1e-12);
  }
}

// Serial and OpenMP kernels agree: exactly on integers, to rounding on doubles.
TEST(Kernels, SerialAndOmpConvAgree) {
  Rng rng(2);
  for (int i = 0; i < 1000; ++i) {
    const auto g = random_geom(rng);
    {
      const auto in = random_buf<double>(rng, g.in_size(), 0);
      const auto wt = random_buf<double>(rng, g.weight_size(), 0);
      const auto b = random_buf<double>(rng, g.out_c, 0);
      std::vector<double> a(g.out_size()), c(g.out_size());
      serial::conv2d_forward<double>(g, in, wt, b, a);
      omp::conv2d_forward<double>(g, in, wt, b, c);
      for (std::size_t k = 0; k < a.size(); ++k) ASSERT_NEAR(a[k], c[k], 1e-12);
    }
    {
      const auto in = random_buf<std::int64_t>(rng, g.in_size(), 1000);
      const auto wt = random_buf<std::int64_t>(rng, g.weight_size(), 1000);
      const auto b = random_buf<std::int64_t>(rng, g.out_c, 1000);
      std::vector<std::int64_t> a(g.out_size()), c(g.out_size());
      serial::conv2d_forward<std::int64_t>(g, in, wt, b, a);
      omp::conv2d_forward<std::int64_t>(g, in, wt, b, c);
      ASSERT_EQ(a, c);
    }
  }
}

TEST(Kernels, SerialAndOmpDenseAgree) {
  Rng rng(3);
  for (int i = 0; i < 1000; ++i) {
    const auto n_in = static_cast<std::size_t>(rng.uniform_int(1, 30));
    const auto n_out = static_cast<std::size_t>(rng.uniform_int(1, 12));
    const auto in = random_buf<std::int64_t>(rng, n_in, 1 << 20);
    const auto wt = random_buf<std::int64_t>(rng, n_in * n_out, 1 << 10);
    const auto b = random_buf<std::int64_t>(rng, n_out, 1 << 20);
    std::vector<std::int64_t> a(n_out), c(n_out);
    serial::dense_forward<std::int64_t>(n_in, n_out, in, wt, b, a);
    omp::dense_forward<std::int64_t>(n_in, n_out, in, wt, b, c);
    ASSERT_EQ(a, c);
    for (std::size_t o = 0; o < n_out; ++o) {
      std::int64_t want = b[o];
      for (std::size_t k = 0; k < n_in; ++k) want += wt[o * n_in + k] * in[k];
      ASSERT_EQ(a[o], want);
    }
  }
}

TEST(Kernels, WideDenseAgrees) {
  Rng rng(4);
  using Wide = __int128;
  for (int i = 0; i < 200; ++i) {
    const std::size_t n_in = 8, n_out = 3;
    std::vector<Wide> in(n_in), wt(n_in * n_out), b(n_out);
    for (auto& v : in) v = static_cast<Wide>(rng.uniform_int(-(1LL << 50), 1LL << 50)) * 1000;
    for (auto& v : wt) v = rng.uniform_int(-1000, 1000);
    for (auto& v : b) v = rng.uniform_int(-1000, 1000);
    std::vector<Wide> a(n_out), c(n_out);
    serial::dense_forward<Wide>(n_in, n_out, in, wt, b, a);
    omp::dense_forward<Wide>(n_in, n_out, in, wt, b, c);
    ASSERT_TRUE(a == c);
  }
}

TEST(Kernels, SumPoolAgreesAndSums) {
  Rng rng(5);
  for (int i = 0; i < 1000; ++i) {
    PoolGeom g{};
    g.c = static_cast<std::size_t>(rng.uniform_int(1, 3));
    g.window = static_cast<std::size_t>(rng.uniform_int(1, 3));
    g.h = g.window * static_cast<std::size_t>(rng.uniform_int(1, 4));
    g.w = g.window * static_cast<std::size_t>(rng.uniform_int(1, 4));
    const auto in = random_buf<std::int64_t>(rng, g.in_size(), 100);
    std::vector<std::int64_t> a(g.out_size()), c(g.out_size());
    serial::sum_pool_forward<std::int64_t>(g, in, a);
    omp::sum_pool_forward<std::int64_t>(g, in, c);
    ASSERT_EQ(a, c);
    std::int64_t total_in = 0, total_out = 0;
    for (auto v : in) total_in += v;
    for (auto v : a) total_out += v;
    ASSERT_EQ(total_in, total_out);  // windows tile the map exactly
  }
}

// Backward kernels against central finite differences of the forward kernels.
TEST(Kernels, ConvBackwardMatchesFiniteDifferences) {
  Rng rng(6);
  for (int i = 0; i < 30; ++i) {
    const auto g = random_geom(rng);
    auto in = random_buf<double>(rng, g.in_size(), 0);
    auto wt = random_buf<double>(rng, g.weight_size(), 0);
    auto b = random_buf<double>(rng, g.out_c, 0);
    const auto gout = random_buf<double>(rng, g.out_size(), 0);
    const auto objective = [&]() {
      std::vector<double> out(g.out_size());
      serial::conv2d_forward<double>(g, in, wt, b, out);
      double s = 0;
      for (std::size_t k = 0; k < out.size(); ++k) s += out[k] * gout[k];
      return s;
    };
    std::vector<double> gin(g.in_size(), 0.0), gw(g.weight_size(), 0.0), gb(g.out_c, 0.0);
    std::vector<double> gin2 = gin, gw2 = gw, gb2 = gb;
    serial::conv2d_backward(g, in, wt, gout, gin, gw, gb);
    omp::conv2d_backward(g, in, wt, gout, gin2, gw2, gb2);
    const double h = 1e-6;
    for (std::size_t k = 0; k < wt.size(); ++k) {
      const double keep = wt[k];
      wt[k] = keep + h;
      const double up = objective();
      wt[k] = keep - h;
      const double dn = objective();
      wt[k] = keep;
      ASSERT_NEAR(gw[k], (up - dn) / (2 * h), 1e-6);
      ASSERT_NEAR(gw2[k], gw[k], 1e-10);
    }
    for (std::size_t k = 0; k < in.size(); ++k) {
      const double keep = in[k];
      in[k] = keep + h;
      const double up = objective();
      in[k] = keep - h;
      const double dn = objective();
      in[k] = keep;
      ASSERT_NEAR(gin[k], (up - dn) / (2 * h), 1e-6);
      ASSERT_NEAR(gin2[k], gin[k], 1e-10);
    }
    for (std::size_t k = 0; k < b.size(); ++k) ASSERT_NEAR(gb2[k], gb[k], 1e-10);
  }
}

TEST(Kernels, MaxPoolRoutesGradientToArgmax) {
  PoolGeom g{1, 2, 2, 2};
  const std::vector<double> in{0.1, 0.9, -0.3, 0.2};
  std::vector<double> out(1), gin(4, 0.0);
  max_pool_forward(g, in, out);
  EXPECT_DOUBLE_EQ(out[0], 0.9);
  const std::vector<double> gout{2.0};
  max_pool_backward(g, in, gout, gin);
  EXPECT_EQ(gin, (std::vector<double>{0, 2.0, 0, 0}));
}
