// Serial reference kernels vs the OpenMP versions, plus one plaintext and one
// cipherspace forward pass of a small CNN.

#include <benchmark/benchmark.h>

#include <cstdint>
#include <vector>

#include "chainlearn/ciphernet.hpp"
#include "chainlearn/common.hpp"
#include "chainlearn/config.hpp"
#include "chainlearn/kernels.hpp"
#include "chainlearn/neuralnet.hpp"

using namespace chainlearn;

namespace {

template <typename T>
std::vector<T> random_vec(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<T> v(n);
  for (auto& x : v) {
    if constexpr (std::is_floating_point_v<T>) x = rng.uniform(-1.0, 1.0);
    else x = static_cast<T>(rng.uniform_int(-1000, 1000));
  }
  return v;
}

template <typename T, bool Parallel>
void BM_Conv(benchmark::State& state) {
  const kernels::ConvGeom g{static_cast<std::size_t>(state.range(0)), static_cast<std::size_t>(state.range(1)),
                            28, 28, 5, 5};
  const auto in = random_vec<T>(g.in_size(), 1);
  const auto w = random_vec<T>(g.weight_size(), 2);
  const auto b = random_vec<T>(g.out_c, 3);
  std::vector<T> out(g.out_size());
  for (auto _ : state) {
    if constexpr (Parallel) kernels::omp::conv2d_forward<T>(g, in, w, b, out);
    else kernels::serial::conv2d_forward<T>(g, in, w, b, out);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * g.out_size() * g.in_c * g.kh * g.kw));
}

template <typename T, bool Parallel>
void BM_Dense(benchmark::State& state) {
  const std::size_t n_in = static_cast<std::size_t>(state.range(0)), n_out = static_cast<std::size_t>(state.range(1));
  const auto in = random_vec<T>(n_in, 1);
  const auto w = random_vec<T>(n_in * n_out, 2);
  const auto b = random_vec<T>(n_out, 3);
  std::vector<T> out(n_out);
  for (auto _ : state) {
    if constexpr (Parallel) kernels::omp::dense_forward<T>(n_in, n_out, in, w, b, out);
    else kernels::serial::dense_forward<T>(n_in, n_out, in, w, b, out);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * n_in * n_out));
}

nn::LayeredModel bench_model() {
  auto m = config::build_arch("conv:4:1x5,relu,conv:4:1x5,relu,flatten,dense:2", {1, 1, 64}, 2);
  nn::init_weights(m, 7);
  return m;
}

void BM_PlainForward(benchmark::State& state) {
  const auto m = bench_model();
  const auto x = random_vec<double>(64, 4);
  for (auto _ : state) benchmark::DoNotOptimize(nn::forward(m, x));
}

void BM_CipherForward(benchmark::State& state) {
  const auto m = bench_model();
  ivhe::HEParams hp;
  hp.non_negative = true;
  const auto keys = ivhe::gen_keys(hp, 5);
  const auto em = cipher::encrypt_elementwise(cipher::quantize(m, 128, 1000), keys.switch_key);
  const auto x = random_vec<double>(64, 4);
  for (auto _ : state) benchmark::DoNotOptimize(cipher::forward_cipher(em, x));
}

}  // namespace

BENCHMARK(BM_Conv<double, false>)->Args({1, 8})->Args({8, 16});
BENCHMARK(BM_Conv<double, true>)->Args({1, 8})->Args({8, 16});
BENCHMARK(BM_Conv<std::int64_t, false>)->Args({1, 8})->Args({8, 16});
BENCHMARK(BM_Conv<std::int64_t, true>)->Args({1, 8})->Args({8, 16});
BENCHMARK(BM_Conv<__int128, false>)->Args({8, 16});
BENCHMARK(BM_Conv<__int128, true>)->Args({8, 16});
BENCHMARK(BM_Dense<double, false>)->Args({784, 128});
BENCHMARK(BM_Dense<double, true>)->Args({784, 128});
BENCHMARK(BM_Dense<std::int64_t, false>)->Args({784, 128});
BENCHMARK(BM_Dense<std::int64_t, true>)->Args({784, 128});
BENCHMARK(BM_PlainForward);
BENCHMARK(BM_CipherForward);

BENCHMARK_MAIN();
