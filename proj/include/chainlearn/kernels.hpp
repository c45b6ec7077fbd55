#pragma once

// Data-parallel inner loops shared by the plaintext network and the
// cipherspace executor. Every kernel has a serial reference in
// `kernels::serial` (textbook per-output-element loops) and an OpenMP version
// in `kernels::omp` (loop-reordered, parallel over output channels). Integer
// instantiations agree exactly; double instantiations agree to rounding.
// The OpenMP versions are deterministic: every output element is owned by
// one thread and accumulated in a fixed order.
//
// Layouts: feature maps are channel-major [c][h][w]; conv weights are
// [out_c][in_c][kh][kw]; dense weights are [out][in]. Convolutions are
// stride 1 with zero "same" padding: pad_before = (k-1)/2.

#include <cstddef>
#include <span>

namespace chainlearn::kernels {

struct ConvGeom {
  std::size_t in_c, out_c, h, w, kh, kw;

  std::size_t pad_y() const { return (kh - 1) / 2; }
  std::size_t pad_x() const { return (kw - 1) / 2; }
  std::size_t in_size() const { return in_c * h * w; }
  std::size_t out_size() const { return out_c * h * w; }
  std::size_t weight_size() const { return out_c * in_c * kh * kw; }
};

struct PoolGeom {
  std::size_t c, h, w, window = 2;

  std::size_t out_h() const { return h / window; }
  std::size_t out_w() const { return w / window; }
  std::size_t in_size() const { return c * h * w; }
  std::size_t out_size() const { return c * out_h() * out_w(); }
};

namespace serial {

template <typename T>
void conv2d_forward(const ConvGeom& g, std::span<const T> in, std::span<const T> weights,
                    std::span<const T> bias, std::span<T> out);

// Accumulates into grad_in (if non-empty), grad_w and grad_b.
void conv2d_backward(const ConvGeom& g, std::span<const double> in, std::span<const double> weights,
                     std::span<const double> grad_out, std::span<double> grad_in,
                     std::span<double> grad_w, std::span<double> grad_b);

template <typename T>
void dense_forward(std::size_t n_in, std::size_t n_out, std::span<const T> in, std::span<const T> weights,
                   std::span<const T> bias, std::span<T> out);

void dense_backward(std::size_t n_in, std::size_t n_out, std::span<const double> in,
                    std::span<const double> weights, std::span<const double> grad_out,
                    std::span<double> grad_in, std::span<double> grad_w, std::span<double> grad_b);

// Window sum; average pooling is sum pooling divided by window area.
template <typename T>
void sum_pool_forward(const PoolGeom& g, std::span<const T> in, std::span<T> out);

}  // namespace serial

namespace omp {

template <typename T>
void conv2d_forward(const ConvGeom& g, std::span<const T> in, std::span<const T> weights,
                    std::span<const T> bias, std::span<T> out);

void conv2d_backward(const ConvGeom& g, std::span<const double> in, std::span<const double> weights,
                     std::span<const double> grad_out, std::span<double> grad_in,
                     std::span<double> grad_w, std::span<double> grad_b);

template <typename T>
void dense_forward(std::size_t n_in, std::size_t n_out, std::span<const T> in, std::span<const T> weights,
                   std::span<const T> bias, std::span<T> out);

void dense_backward(std::size_t n_in, std::size_t n_out, std::span<const double> in,
                    std::span<const double> weights, std::span<const double> grad_out,
                    std::span<double> grad_in, std::span<double> grad_w, std::span<double> grad_b);

template <typename T>
void sum_pool_forward(const PoolGeom& g, std::span<const T> in, std::span<T> out);

}  // namespace omp

// Max pooling only exists in plaintext; no cipherspace counterpart.
void max_pool_forward(const PoolGeom& g, std::span<const double> in, std::span<double> out);
void max_pool_backward(const PoolGeom& g, std::span<const double> in, std::span<const double> grad_out,
                       std::span<double> grad_in);

}  // namespace chainlearn::kernels
