#include "chainlearn/kernels.hpp"

#include <algorithm>
#include <cstdint>

namespace chainlearn::kernels {

namespace {

// Below this many multiply-adds a parallel region costs more than it saves.
constexpr std::size_t kParallelWork = 1 << 15;

// Valid output range [lo, hi) along one axis for tap offset k.
inline void tap_range(std::size_t n, std::size_t k, std::size_t pad, std::size_t& lo, std::size_t& hi) {
  // input index = out + k - pad must lie in [0, n)
  lo = pad > k ? pad - k : 0;
  hi = n + pad > k ? std::min(n, n + pad - k) : 0;
}

}  // namespace

namespace serial {

template <typename T>
void conv2d_forward(const ConvGeom& g, std::span<const T> in, std::span<const T> weights,
                    std::span<const T> bias, std::span<T> out) {
  const auto py = static_cast<std::ptrdiff_t>(g.pad_y());
  const auto px = static_cast<std::ptrdiff_t>(g.pad_x());
  const auto H = static_cast<std::ptrdiff_t>(g.h);
  const auto W = static_cast<std::ptrdiff_t>(g.w);
  for (std::size_t oc = 0; oc < g.out_c; ++oc) {
    for (std::ptrdiff_t y = 0; y < H; ++y) {
      for (std::ptrdiff_t x = 0; x < W; ++x) {
        T acc = bias.empty() ? T{0} : bias[oc];
        for (std::size_t ic = 0; ic < g.in_c; ++ic) {
          for (std::size_t ky = 0; ky < g.kh; ++ky) {
            for (std::size_t kx = 0; kx < g.kw; ++kx) {
              const std::ptrdiff_t iy = y + static_cast<std::ptrdiff_t>(ky) - py;
              const std::ptrdiff_t ix = x + static_cast<std::ptrdiff_t>(kx) - px;
              if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
              acc += weights[((oc * g.in_c + ic) * g.kh + ky) * g.kw + kx] *
                     in[(ic * g.h + static_cast<std::size_t>(iy)) * g.w + static_cast<std::size_t>(ix)];
            }
          }
        }
        out[(oc * g.h + static_cast<std::size_t>(y)) * g.w + static_cast<std::size_t>(x)] = acc;
      }
    }
  }
}

void conv2d_backward(const ConvGeom& g, std::span<const double> in, std::span<const double> weights,
                     std::span<const double> grad_out, std::span<double> grad_in,
                     std::span<double> grad_w, std::span<double> grad_b) {
  const auto py = static_cast<std::ptrdiff_t>(g.pad_y());
  const auto px = static_cast<std::ptrdiff_t>(g.pad_x());
  const auto H = static_cast<std::ptrdiff_t>(g.h);
  const auto W = static_cast<std::ptrdiff_t>(g.w);
  for (std::size_t oc = 0; oc < g.out_c; ++oc) {
    for (std::ptrdiff_t y = 0; y < H; ++y) {
      for (std::ptrdiff_t x = 0; x < W; ++x) {
        const double go = grad_out[(oc * g.h + static_cast<std::size_t>(y)) * g.w + static_cast<std::size_t>(x)];
        grad_b[oc] += go;
        for (std::size_t ic = 0; ic < g.in_c; ++ic) {
          for (std::size_t ky = 0; ky < g.kh; ++ky) {
            for (std::size_t kx = 0; kx < g.kw; ++kx) {
              const std::ptrdiff_t iy = y + static_cast<std::ptrdiff_t>(ky) - py;
              const std::ptrdiff_t ix = x + static_cast<std::ptrdiff_t>(kx) - px;
              if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
              const std::size_t wi = ((oc * g.in_c + ic) * g.kh + ky) * g.kw + kx;
              const std::size_t ii = (ic * g.h + static_cast<std::size_t>(iy)) * g.w + static_cast<std::size_t>(ix);
              grad_w[wi] += go * in[ii];
              if (!grad_in.empty()) grad_in[ii] += go * weights[wi];
            }
          }
        }
      }
    }
  }
}

template <typename T>
void dense_forward(std::size_t n_in, std::size_t n_out, std::span<const T> in, std::span<const T> weights,
                   std::span<const T> bias, std::span<T> out) {
  for (std::size_t o = 0; o < n_out; ++o) {
    T acc = bias.empty() ? T{0} : bias[o];
    for (std::size_t i = 0; i < n_in; ++i) acc += weights[o * n_in + i] * in[i];
    out[o] = acc;
  }
}

void dense_backward(std::size_t n_in, std::size_t n_out, std::span<const double> in,
                    std::span<const double> weights, std::span<const double> grad_out,
                    std::span<double> grad_in, std::span<double> grad_w, std::span<double> grad_b) {
  for (std::size_t o = 0; o < n_out; ++o) {
    grad_b[o] += grad_out[o];
    for (std::size_t i = 0; i < n_in; ++i) {
      grad_w[o * n_in + i] += grad_out[o] * in[i];
      if (!grad_in.empty()) grad_in[i] += grad_out[o] * weights[o * n_in + i];
    }
  }
}

template <typename T>
void sum_pool_forward(const PoolGeom& g, std::span<const T> in, std::span<T> out) {
  const std::size_t oh = g.out_h(), ow = g.out_w();
  for (std::size_t c = 0; c < g.c; ++c) {
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t x = 0; x < ow; ++x) {
        T acc{0};
        for (std::size_t dy = 0; dy < g.window; ++dy) {
          for (std::size_t dx = 0; dx < g.window; ++dx) {
            acc += in[(c * g.h + y * g.window + dy) * g.w + x * g.window + dx];
          }
        }
        out[(c * oh + y) * ow + x] = acc;
      }
    }
  }
}

template void conv2d_forward<double>(const ConvGeom&, std::span<const double>, std::span<const double>,
                                     std::span<const double>, std::span<double>);
template void conv2d_forward<std::int64_t>(const ConvGeom&, std::span<const std::int64_t>,
                                           std::span<const std::int64_t>, std::span<const std::int64_t>,
                                           std::span<std::int64_t>);
template void conv2d_forward<__int128>(const ConvGeom&, std::span<const __int128>, std::span<const __int128>,
                                       std::span<const __int128>, std::span<__int128>);
template void dense_forward<double>(std::size_t, std::size_t, std::span<const double>, std::span<const double>,
                                    std::span<const double>, std::span<double>);
template void dense_forward<std::int64_t>(std::size_t, std::size_t, std::span<const std::int64_t>,
                                          std::span<const std::int64_t>, std::span<const std::int64_t>,
                                          std::span<std::int64_t>);
template void dense_forward<__int128>(std::size_t, std::size_t, std::span<const __int128>,
                                      std::span<const __int128>, std::span<const __int128>, std::span<__int128>);
template void sum_pool_forward<double>(const PoolGeom&, std::span<const double>, std::span<double>);
template void sum_pool_forward<std::int64_t>(const PoolGeom&, std::span<const std::int64_t>,
                                             std::span<std::int64_t>);
template void sum_pool_forward<__int128>(const PoolGeom&, std::span<const __int128>, std::span<__int128>);

}  // namespace serial

namespace omp {

template <typename T>
void conv2d_forward(const ConvGeom& g, std::span<const T> in, std::span<const T> weights,
                    std::span<const T> bias, std::span<T> out) {
  const std::size_t plane = g.h * g.w;
  const bool parallel = g.weight_size() * plane >= kParallelWork;
#pragma omp parallel for schedule(static) if (parallel)
  for (std::size_t oc = 0; oc < g.out_c; ++oc) {
    T* dst = out.data() + oc * plane;
    std::fill(dst, dst + plane, bias.empty() ? T{0} : bias[oc]);
    for (std::size_t ic = 0; ic < g.in_c; ++ic) {
      const T* src = in.data() + ic * plane;
      for (std::size_t ky = 0; ky < g.kh; ++ky) {
        std::size_t y_lo, y_hi;
        tap_range(g.h, ky, g.pad_y(), y_lo, y_hi);
        for (std::size_t kx = 0; kx < g.kw; ++kx) {
          const T wv = weights[((oc * g.in_c + ic) * g.kh + ky) * g.kw + kx];
          if (wv == T{0}) continue;
          std::size_t x_lo, x_hi;
          tap_range(g.w, kx, g.pad_x(), x_lo, x_hi);
          for (std::size_t y = y_lo; y < y_hi; ++y) {
            T* row = dst + y * g.w;
            const T* srow = src + (y + ky - g.pad_y()) * g.w + kx - g.pad_x();
            for (std::size_t x = x_lo; x < x_hi; ++x) row[x] += wv * srow[x];
          }
        }
      }
    }
  }
}

void conv2d_backward(const ConvGeom& g, std::span<const double> in, std::span<const double> weights,
                     std::span<const double> grad_out, std::span<double> grad_in,
                     std::span<double> grad_w, std::span<double> grad_b) {
  const std::size_t plane = g.h * g.w;
  const bool parallel = g.weight_size() * plane >= kParallelWork;
#pragma omp parallel for schedule(static) if (parallel)
  for (std::size_t oc = 0; oc < g.out_c; ++oc) {
    const double* go = grad_out.data() + oc * plane;
    double bsum = 0.0;
    for (std::size_t p = 0; p < plane; ++p) bsum += go[p];
    grad_b[oc] += bsum;
    for (std::size_t ic = 0; ic < g.in_c; ++ic) {
      const double* src = in.data() + ic * plane;
      for (std::size_t ky = 0; ky < g.kh; ++ky) {
        std::size_t y_lo, y_hi;
        tap_range(g.h, ky, g.pad_y(), y_lo, y_hi);
        for (std::size_t kx = 0; kx < g.kw; ++kx) {
          std::size_t x_lo, x_hi;
          tap_range(g.w, kx, g.pad_x(), x_lo, x_hi);
          double acc = 0.0;
          for (std::size_t y = y_lo; y < y_hi; ++y) {
            const double* grow = go + y * g.w;
            const double* srow = src + (y + ky - g.pad_y()) * g.w + kx - g.pad_x();
            for (std::size_t x = x_lo; x < x_hi; ++x) acc += grow[x] * srow[x];
          }
          grad_w[((oc * g.in_c + ic) * g.kh + ky) * g.kw + kx] += acc;
        }
      }
    }
  }
  if (grad_in.empty()) return;
#pragma omp parallel for schedule(static) if (parallel)
  for (std::size_t ic = 0; ic < g.in_c; ++ic) {
    double* gi = grad_in.data() + ic * plane;
    for (std::size_t oc = 0; oc < g.out_c; ++oc) {
      const double* go = grad_out.data() + oc * plane;
      for (std::size_t ky = 0; ky < g.kh; ++ky) {
        std::size_t y_lo, y_hi;
        tap_range(g.h, ky, g.pad_y(), y_lo, y_hi);
        for (std::size_t kx = 0; kx < g.kw; ++kx) {
          const double wv = weights[((oc * g.in_c + ic) * g.kh + ky) * g.kw + kx];
          std::size_t x_lo, x_hi;
          tap_range(g.w, kx, g.pad_x(), x_lo, x_hi);
          for (std::size_t y = y_lo; y < y_hi; ++y) {
            const double* grow = go + y * g.w;
            double* irow = gi + (y + ky - g.pad_y()) * g.w + kx - g.pad_x();
            for (std::size_t x = x_lo; x < x_hi; ++x) irow[x] += wv * grow[x];
          }
        }
      }
    }
  }
}

template <typename T>
void dense_forward(std::size_t n_in, std::size_t n_out, std::span<const T> in, std::span<const T> weights,
                   std::span<const T> bias, std::span<T> out) {
  const bool parallel = n_in * n_out >= kParallelWork;
#pragma omp parallel for schedule(static) if (parallel)
  for (std::size_t o = 0; o < n_out; ++o) {
    const T* row = weights.data() + o * n_in;
    T acc = bias.empty() ? T{0} : bias[o];
    for (std::size_t i = 0; i < n_in; ++i) acc += row[i] * in[i];
    out[o] = acc;
  }
}

void dense_backward(std::size_t n_in, std::size_t n_out, std::span<const double> in,
                    std::span<const double> weights, std::span<const double> grad_out,
                    std::span<double> grad_in, std::span<double> grad_w, std::span<double> grad_b) {
  const bool parallel = n_in * n_out >= kParallelWork;
#pragma omp parallel for schedule(static) if (parallel)
  for (std::size_t o = 0; o < n_out; ++o) {
    const double go = grad_out[o];
    grad_b[o] += go;
    if (go == 0.0) continue;
    double* gw = grad_w.data() + o * n_in;
    for (std::size_t i = 0; i < n_in; ++i) gw[i] += go * in[i];
  }
  if (grad_in.empty()) return;
  for (std::size_t o = 0; o < n_out; ++o) {
    const double go = grad_out[o];
    if (go == 0.0) continue;
    const double* row = weights.data() + o * n_in;
    for (std::size_t i = 0; i < n_in; ++i) grad_in[i] += go * row[i];
  }
}

template <typename T>
void sum_pool_forward(const PoolGeom& g, std::span<const T> in, std::span<T> out) {
  const std::size_t oh = g.out_h(), ow = g.out_w();
  const bool parallel = g.in_size() >= kParallelWork;
#pragma omp parallel for schedule(static) if (parallel)
  for (std::size_t c = 0; c < g.c; ++c) {
    for (std::size_t y = 0; y < oh; ++y) {
      T* dst = out.data() + (c * oh + y) * ow;
      std::fill(dst, dst + ow, T{0});
      for (std::size_t dy = 0; dy < g.window; ++dy) {
        const T* src = in.data() + (c * g.h + y * g.window + dy) * g.w;
        for (std::size_t x = 0; x < ow; ++x) {
          for (std::size_t dx = 0; dx < g.window; ++dx) dst[x] += src[x * g.window + dx];
        }
      }
    }
  }
}

template void conv2d_forward<double>(const ConvGeom&, std::span<const double>, std::span<const double>,
                                     std::span<const double>, std::span<double>);
template void conv2d_forward<std::int64_t>(const ConvGeom&, std::span<const std::int64_t>,
                                           std::span<const std::int64_t>, std::span<const std::int64_t>,
                                           std::span<std::int64_t>);
template void conv2d_forward<__int128>(const ConvGeom&, std::span<const __int128>, std::span<const __int128>,
                                       std::span<const __int128>, std::span<__int128>);
template void dense_forward<double>(std::size_t, std::size_t, std::span<const double>, std::span<const double>,
                                    std::span<const double>, std::span<double>);
template void dense_forward<std::int64_t>(std::size_t, std::size_t, std::span<const std::int64_t>,
                                          std::span<const std::int64_t>, std::span<const std::int64_t>,
                                          std::span<std::int64_t>);
template void dense_forward<__int128>(std::size_t, std::size_t, std::span<const __int128>,
                                      std::span<const __int128>, std::span<const __int128>, std::span<__int128>);
template void sum_pool_forward<double>(const PoolGeom&, std::span<const double>, std::span<double>);
template void sum_pool_forward<std::int64_t>(const PoolGeom&, std::span<const std::int64_t>,
                                             std::span<std::int64_t>);
template void sum_pool_forward<__int128>(const PoolGeom&, std::span<const __int128>, std::span<__int128>);

}  // namespace omp

void max_pool_forward(const PoolGeom& g, std::span<const double> in, std::span<double> out) {
  const std::size_t oh = g.out_h(), ow = g.out_w();
  for (std::size_t c = 0; c < g.c; ++c) {
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t x = 0; x < ow; ++x) {
        double best = in[(c * g.h + y * g.window) * g.w + x * g.window];
        for (std::size_t dy = 0; dy < g.window; ++dy) {
          for (std::size_t dx = 0; dx < g.window; ++dx) {
            best = std::max(best, in[(c * g.h + y * g.window + dy) * g.w + x * g.window + dx]);
          }
        }
        out[(c * oh + y) * ow + x] = best;
      }
    }
  }
}

void max_pool_backward(const PoolGeom& g, std::span<const double> in, std::span<const double> grad_out,
                       std::span<double> grad_in) {
  const std::size_t oh = g.out_h(), ow = g.out_w();
  for (std::size_t c = 0; c < g.c; ++c) {
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t x = 0; x < ow; ++x) {
        // first maximum in row-major window order takes the gradient
        std::size_t best_idx = (c * g.h + y * g.window) * g.w + x * g.window;
        for (std::size_t dy = 0; dy < g.window; ++dy) {
          for (std::size_t dx = 0; dx < g.window; ++dx) {
            const std::size_t idx = (c * g.h + y * g.window + dy) * g.w + x * g.window + dx;
            if (in[idx] > in[best_idx]) best_idx = idx;
          }
        }
        grad_in[best_idx] += grad_out[(c * oh + y) * ow + x];
      }
    }
  }
}

}  // namespace chainlearn::kernels
