#include "chainlearn/ciphernet.hpp"

#include <algorithm>
#include <cmath>
#include <type_traits>

#include "chainlearn/kernels.hpp"

namespace chainlearn::cipher {

namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

constexpr long double kInt64Limit = 0x1p62L;
constexpr long double kWideLimit = 0x1p125L;

std::int64_t round_to_int(long double v) {
  if (!std::isfinite(v) || std::fabs(v) >= 0x1p63L) throw OverflowError("quantized value does not fit in 64 bits");
  return std::llroundl(v);  // halves round away from zero
}

Wide div_round_half_away_wide(Wide num, Wide den) {
  const Wide q = num / den;
  const Wide r = num % den;
  const Wide abs_r = r < 0 ? -r : r;
  if (2 * abs_r >= den) return num < 0 ? q - 1 : q + 1;
  return q;
}

std::string encode_ints(std::span<const std::int64_t> values) {
  ByteWriter w;
  for (auto v : values) w.i64(v);
  return base64_encode(w.bytes());
}

std::vector<std::int64_t> decode_ints(const std::string& text) {
  const Bytes raw = base64_decode(text);
  if (raw.size() % 8 != 0) throw FormatError("integer blob is not a whole number of int64 values");
  ByteReader r(raw);
  std::vector<std::int64_t> out(raw.size() / 8);
  for (auto& v : out) v = r.i64();
  return out;
}

bool is_weight_layer(const ScaledLayer& l) {
  return std::holds_alternative<IntDense>(l) || std::holds_alternative<IntConv>(l);
}

std::size_t first_weight_layer(const ScaledModel& sm) {
  for (std::size_t k = 0; k < sm.layers.size(); ++k) {
    if (is_weight_layer(sm.layers[k])) return k;
  }
  throw UnsupportedError("model has no dense or convolution layer to encrypt");
}

double max_row_abs_sum(std::span<const std::int64_t> w, std::size_t rows) {
  if (rows == 0 || w.empty()) return 0.0;
  const std::size_t len = w.size() / rows;
  double best = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t i = 0; i < len; ++i) s += std::fabs(static_cast<double>(w[r * len + i]));
    best = std::max(best, s);
  }
  return best;
}

double max_abs(std::span<const std::int64_t> v) {
  double m = 0.0;
  for (auto x : v) m = std::max(m, std::fabs(static_cast<double>(x)));
  return m;
}

kernels::PoolGeom pool_geom(const nn::Pool& p, const nn::Shape& in) { return {in.c, in.h, in.w, p.window}; }

std::int64_t pool_area(const nn::Pool& p) { return static_cast<std::int64_t>(p.window * p.window); }

template <typename T>
std::span<const T> view(const std::vector<std::int64_t>& v, std::vector<T>& scratch) {
  if constexpr (std::is_same_v<T, std::int64_t>) {
    return v;
  } else {
    scratch.assign(v.begin(), v.end());
    return scratch;
  }
}

long double product(const std::vector<std::int64_t>& ledger) {
  long double s = 1.0L;
  for (auto f : ledger) s *= static_cast<long double>(f);
  return s;
}

// The two-lane executor. Runs layers [0, last) of the encrypted model on an
// already quantized input.
template <typename T>
CipherLanes run_lanes(const EncryptedModel& em, std::span<const std::int64_t> xq, std::size_t last) {
  const ScaledModel& sm = em.plain;
  const auto shapes = sm.shapes();
  const T w = static_cast<T>(em.params.w);
  const std::size_t enc = em.encrypted_layer;
  std::vector<T> s1, s2;  // scratch for widened weights

  std::vector<std::int64_t> ledger{sm.q};
  nn::Shape shape = sm.input;
  std::vector<T> x(xq.begin(), xq.end());

  // Plaintext prefix (pooling / flatten ahead of the first weight layer).
  for (std::size_t k = 0; k < std::min(enc, last); ++k) {
    const auto& layer = sm.layers[k];
    if (const auto* p = std::get_if<nn::Pool>(&layer)) {
      std::vector<T> out(shapes[k].size());
      kernels::omp::sum_pool_forward<T>(pool_geom(*p, shape), x, out);
      if (p->kind == nn::PoolKind::Avg) ledger.push_back(pool_area(*p));
      x = std::move(out);
    } else if (const auto* a = std::get_if<nn::Activation>(&layer)) {
      if (a->kind != nn::ActivationKind::Relu) throw UnsupportedError("sigmoid ahead of the encrypted layer");
      for (auto& v : x) v = v < 0 ? T{0} : v;
    }
    shape = shapes[k];
  }

  CipherLanes out;
  out.w = em.params.w;
  out.wide = !std::is_same_v<T, std::int64_t>;
  std::vector<T> l1, l2;
  std::size_t next = enc + 1;

  if (last <= enc) {
    l1.resize(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) l1[i] = x[i] * w;
    l2.assign(x.size(), T{0});
  } else if (em.strategy == Strategy::ElementWise) {
    const auto& layer = sm.layers[enc];
    const std::size_t n_w = em.enc_weights.size() / 2;
    const std::size_t n_b = em.enc_bias.size() / 2;
    auto ew = view<T>(em.enc_weights, s1);
    auto eb = view<T>(em.enc_bias, s2);
    l1.resize(shapes[enc].size());
    l2.resize(shapes[enc].size());
    for (int lane = 0; lane < 2; ++lane) {
      auto wk = ew.subspan(static_cast<std::size_t>(lane) * n_w, n_w);
      auto bk = eb.subspan(static_cast<std::size_t>(lane) * n_b, n_b);
      std::span<T> dst = lane == 0 ? std::span<T>(l1) : std::span<T>(l2);
      if (const auto* d = std::get_if<IntDense>(&layer)) {
        kernels::omp::dense_forward<T>(d->in, d->out, x, wk, bk, dst);
      } else {
        const auto& c = std::get<IntConv>(layer);
        kernels::omp::conv2d_forward<T>({c.in_c, c.out_c, shape.h, shape.w, c.kh, c.kw}, x, wk, bk, dst);
      }
    }
    ledger.push_back(sm.p);
    shape = shapes[enc];
  } else {
    // conv1 on the encrypted tap vectors gives r+1 ciphertext channels.
    const auto& c1 = std::get<IntConv>(sm.layers[enc]);
    const std::size_t comps = c1.out_c + 1;
    std::vector<T> ch(comps * shape.h * shape.w);
    kernels::omp::conv2d_forward<T>({c1.in_c, comps, shape.h, shape.w, c1.kh, c1.kw}, x,
                                    view<T>(em.enc_weights, s1), view<T>(em.enc_bias, s2), ch);
    ledger.push_back(sm.p);
    nn::Shape ch_shape{comps, shape.h, shape.w};
    for (std::size_t k = enc + 1; k < em.pair_layer; ++k) {
      const auto& p = std::get<nn::Pool>(sm.layers[k]);
      const auto g = pool_geom(p, ch_shape);
      std::vector<T> pooled(g.out_size());
      kernels::omp::sum_pool_forward<T>(g, ch, pooled);
      if (p.kind == nn::PoolKind::Avg) ledger.push_back(pool_area(p));
      ch = std::move(pooled);
      ch_shape = {comps, g.out_h(), g.out_w()};
    }
    // conv2 widened to r+1 inputs: slices 0..r-1 feed lane 1, slice r lane 2.
    const auto& c2 = std::get<IntConv>(sm.layers[em.pair_layer]);
    const std::size_t r = comps - 1, taps = c2.kh * c2.kw, plane = ch_shape.h * ch_shape.w;
    std::vector<T> w_main(c2.out_c * r * taps), w_extra(c2.out_c * taps), bias(c2.out_c), zero(c2.out_c, T{0});
    for (std::size_t o = 0; o < c2.out_c; ++o) {
      for (std::size_t c = 0; c < comps; ++c) {
        for (std::size_t t = 0; t < taps; ++t) {
          const T v = static_cast<T>(em.pair_weights[(o * comps + c) * taps + t]);
          if (c < r) {
            w_main[(o * r + c) * taps + t] = v;
          } else {
            w_extra[o * taps + t] = v;
          }
        }
      }
      bias[o] = static_cast<T>(c2.bias[o]) * w;
    }
    l1.resize(c2.out_c * plane);
    l2.resize(c2.out_c * plane);
    std::span<const T> chs(ch);
    kernels::omp::conv2d_forward<T>({r, c2.out_c, ch_shape.h, ch_shape.w, c2.kh, c2.kw}, chs.first(r * plane),
                                    w_main, bias, l1);
    kernels::omp::conv2d_forward<T>({1, c2.out_c, ch_shape.h, ch_shape.w, c2.kh, c2.kw}, chs.subspan(r * plane),
                                    w_extra, zero, l2);
    ledger.push_back(sm.p);
    shape = shapes[em.pair_layer];
    next = em.pair_layer + 1;
  }

  for (std::size_t k = next; k < last; ++k) {
    const auto& layer = sm.layers[k];
    const nn::Shape out_shape = shapes[k];
    std::visit(
        Overloaded{
            [&](const IntDense& d) {
              std::vector<T> b1(d.out), b0(d.out, T{0}), o1(d.out), o2(d.out);
              for (std::size_t i = 0; i < d.out; ++i) b1[i] = static_cast<T>(d.bias[i]) * w;
              auto wt = view<T>(d.weights, s1);
              kernels::omp::dense_forward<T>(d.in, d.out, l1, wt, b1, o1);
              kernels::omp::dense_forward<T>(d.in, d.out, l2, wt, b0, o2);
              l1 = std::move(o1);
              l2 = std::move(o2);
              ledger.push_back(sm.p);
            },
            [&](const IntConv& c) {
              std::vector<T> b1(c.out_c), b0(c.out_c, T{0}), o1(out_shape.size()), o2(out_shape.size());
              for (std::size_t i = 0; i < c.out_c; ++i) b1[i] = static_cast<T>(c.bias[i]) * w;
              auto wt = view<T>(c.weights, s1);
              const kernels::ConvGeom g{c.in_c, c.out_c, shape.h, shape.w, c.kh, c.kw};
              kernels::omp::conv2d_forward<T>(g, l1, wt, b1, o1);
              kernels::omp::conv2d_forward<T>(g, l2, wt, b0, o2);
              l1 = std::move(o1);
              l2 = std::move(o2);
              ledger.push_back(sm.p);
            },
            [&](const nn::Pool& p) {
              const auto g = pool_geom(p, shape);
              std::vector<T> o1(g.out_size()), o2(g.out_size());
              kernels::omp::sum_pool_forward<T>(g, l1, o1);
              kernels::omp::sum_pool_forward<T>(g, l2, o2);
              l1 = std::move(o1);
              l2 = std::move(o2);
              if (p.kind == nn::PoolKind::Avg) ledger.push_back(pool_area(p));
            },
            [&](const nn::Activation& a) {
              if (a.kind == nn::ActivationKind::Relu) {
                for (auto& v : l1) v = v < 0 ? T{0} : v;
                for (auto& v : l2) v = v < 0 ? T{0} : v;
                return;
              }
              // Polynomial on lane 1, its linear part on lane 2.
              const auto c = sm.sigmoid.coefficients();
              const long double denom = static_cast<long double>(em.params.w) * product(ledger);
              const long double out_scale = static_cast<long double>(em.params.w) *
                                            static_cast<long double>(sm.sigmoid_scale);
              for (std::size_t i = 0; i < l1.size(); ++i) {
                const long double z1 = static_cast<long double>(l1[i]) / denom;
                const long double z2 = static_cast<long double>(l2[i]) / denom;
                const long double y1 = c[0] + z1 * (c[1] + z1 * (c[2] + z1 * c[3]));
                l1[i] = static_cast<T>(std::llroundl(out_scale * y1));
                l2[i] = static_cast<T>(std::llroundl(out_scale * c[1] * z2));
              }
              ledger.assign(1, sm.sigmoid_scale);
            },
            [&](const nn::Flatten&) {},
            [&](const nn::Softmax&) { out.softmax = true; },
        },
        layer);
    shape = out_shape;
  }

  out.lane1.assign(l1.begin(), l1.end());
  out.lane2.assign(l2.begin(), l2.end());
  out.scales = std::move(ledger);
  return out;
}

// Worst-case lane magnitude over layers [0, last) for inputs bounded by xmax
// (quantized units).
long double lane_bound(const EncryptedModel& em, long double xmax, std::size_t last) {
  const ScaledModel& sm = em.plain;
  const long double w = static_cast<long double>(em.params.w);
  long double b = xmax, worst = xmax * w;
  std::vector<std::int64_t> ledger{sm.q};
  const std::size_t enc = em.encrypted_layer;
  for (std::size_t k = 0; k < last; ++k) {
    const auto& layer = sm.layers[k];
    if (k < enc) {
      if (const auto* p = std::get_if<nn::Pool>(&layer)) b *= static_cast<long double>(pool_area(*p));
      continue;
    }
    if (k == enc) {
      b = em.gain[k] * b + em.bias_mag[k];
    } else if (is_weight_layer(layer)) {
      b = em.gain[k] * b + w * em.bias_mag[k];
    } else if (const auto* p = std::get_if<nn::Pool>(&layer)) {
      b *= static_cast<long double>(pool_area(*p));
      if (p->kind == nn::PoolKind::Avg) ledger.push_back(pool_area(*p));
    } else if (const auto* a = std::get_if<nn::Activation>(&layer); a && a->kind == nn::ActivationKind::Sigmoid) {
      const auto c = sm.sigmoid.coefficients();
      const long double z = b / (w * product(ledger));
      b = w * static_cast<long double>(sm.sigmoid_scale) *
              (std::fabs(c[0]) + z * (std::fabs(c[1]) + z * (std::fabs(c[2]) + z * std::fabs(c[3])))) +
          1.0L;
      ledger.assign(1, sm.sigmoid_scale);
    }
    if (is_weight_layer(layer)) ledger.push_back(sm.p);
    worst = std::max(worst, b);
  }
  return worst;
}

CipherLanes run(const EncryptedModel& em, std::span<const double> input, std::size_t last) {
  const ScaledModel& sm = em.plain;
  if (input.size() != sm.input.size()) {
    throw ShapeError("cipher forward: input has " + std::to_string(input.size()) + " values, expected " +
                     std::to_string(sm.input.size()));
  }
  if (!em.params.non_negative) {
    for (std::size_t k = em.encrypted_layer; k < last; ++k) {
      const auto* a = std::get_if<nn::Activation>(&sm.layers[k]);
      if (a && a->kind == nn::ActivationKind::Relu) {
        throw ModeError("cipherspace ReLU needs a non-negative key (layer " + std::to_string(k) + ")");
      }
    }
  }
  const auto xq = quantize_input(input, sm.q);
  const long double xmax = static_cast<long double>(max_abs(xq));
  if (em.noise_policy == NoisePolicy::Exact && xmax > static_cast<long double>(em.input_bound)) {
    throw BudgetError("input exceeds the bound the model was encrypted for");
  }
  const long double bound = lane_bound(em, xmax, last);
  if (bound < kInt64Limit) return run_lanes<std::int64_t>(em, xq, last);
  if (bound < kWideLimit) return run_lanes<Wide>(em, xq, last);
  throw OverflowError("cipherspace lanes would exceed 125 bits; lower p, q or w");
}

std::int64_t secret_t(const ivhe::SecretKey& sk) {
  if (sk.t.empty()) return 0;
  for (auto v : sk.t) {
    if (v != sk.t[0]) throw ParameterError("lane recombination needs a secret vector with identical entries");
  }
  return sk.t[0];
}

void refresh_bounds(EncryptedModel& em) {
  const auto& layers = em.plain.layers;
  em.gain.assign(layers.size(), 0.0);
  em.bias_mag.assign(layers.size(), 0.0);
  for (std::size_t k = 0; k < layers.size(); ++k) {
    if (k == em.encrypted_layer) {
      std::size_t rows = 0;
      if (em.strategy == Strategy::ElementWise) {
        if (const auto* d = std::get_if<IntDense>(&layers[k])) {
          rows = 2 * d->out;
        } else {
          rows = 2 * std::get<IntConv>(layers[k]).out_c;
        }
      } else {
        rows = std::get<IntConv>(layers[k]).out_c + 1;
      }
      em.gain[k] = max_row_abs_sum(em.enc_weights, rows);
      em.bias_mag[k] = max_abs(em.enc_bias);
    } else if (em.strategy == Strategy::MatrixPair && k == em.pair_layer) {
      const auto& c = std::get<IntConv>(layers[k]);
      const std::size_t comps = em.pair_weights.size() / (c.out_c * c.kh * c.kw);
      const std::size_t taps = c.kh * c.kw;
      double g = 0.0;
      for (std::size_t o = 0; o < c.out_c; ++o) {
        double main = 0.0, extra = 0.0;
        for (std::size_t ch = 0; ch < comps; ++ch) {
          for (std::size_t t = 0; t < taps; ++t) {
            const double v = std::fabs(static_cast<double>(em.pair_weights[(o * comps + ch) * taps + t]));
            (ch + 1 < comps ? main : extra) += v;
          }
        }
        g = std::max({g, main, extra});
      }
      em.gain[k] = g;
      em.bias_mag[k] = max_abs(c.bias);
    } else if (const auto* d = std::get_if<IntDense>(&layers[k])) {
      em.gain[k] = max_row_abs_sum(d->weights, d->out);
      em.bias_mag[k] = max_abs(d->bias);
    } else if (const auto* c = std::get_if<IntConv>(&layers[k])) {
      em.gain[k] = max_row_abs_sum(c->weights, c->out_c);
      em.bias_mag[k] = max_abs(c->bias);
    }
  }
}

void check_tail(const ScaledModel& sm, std::size_t from, const EncryptOptions& opts) {
  for (std::size_t k = from; k < sm.layers.size(); ++k) {
    const auto* a = std::get_if<nn::Activation>(&sm.layers[k]);
    if (a && a->kind == nn::ActivationKind::Sigmoid && !opts.approximate_sigmoid) {
      throw ModeError("lane-wise sigmoid is approximate; enable approximate_sigmoid to encrypt this model");
    }
  }
}

void check_prefix(const ScaledModel& sm, std::size_t enc) {
  for (std::size_t k = 0; k < enc; ++k) {
    const auto* a = std::get_if<nn::Activation>(&sm.layers[k]);
    if (a && a->kind == nn::ActivationKind::Sigmoid) throw UnsupportedError("sigmoid ahead of the encrypted layer");
  }
}

void finish(EncryptedModel& em, const ivhe::SwitchKey& key, const EncryptOptions& opts) {
  em.key_id = key.id();
  em.params = key.params;
  em.noise_policy = opts.noise;
  em.approximate_sigmoid = opts.approximate_sigmoid;
  em.input_bound = round_to_int(static_cast<long double>(opts.max_abs_input) * em.plain.q);
  refresh_bounds(em);
  if (opts.noise == NoisePolicy::Exact) {
    const double nb = noise_bound_scores(em, opts.max_abs_input);
    if (nb >= 0.5) {
      throw BudgetError("worst-case decryption noise " + std::to_string(nb) +
                        " reaches half a quantization step; use e_bound = 0 or a larger w");
    }
  }
}

const char* noise_policy_name(NoisePolicy p) { return p == NoisePolicy::Exact ? "exact" : "report"; }

}  // namespace

// ---------------------------------------------------------------------------
// Sigmoid approximation and quantization
// ---------------------------------------------------------------------------

double SigmoidApprox::operator()(double x) const {
  const auto c = coefficients();
  return c[0] + x * (c[1] + x * (c[2] + x * c[3]));
}

std::vector<double> SigmoidApprox::coefficients() const {
  if (order != 1 && order != 3) throw ParameterError("sigmoid approximation order must be 1 or 3");
  if (order == 3 && cubic_divisor == 0.0) throw ParameterError("sigmoid cubic divisor must be nonzero");
  return {0.5, 0.25, 0.0, order == 3 ? -1.0 / cubic_divisor : 0.0};
}

std::int64_t ScaledModel::output_scale() const {
  std::int64_t s = 1;
  for (auto f : scale_ledger) s = checked_mul(s, f);
  return s;
}

std::size_t ScaledModel::output_layer_index() const {
  for (std::size_t k = layers.size(); k-- > 0;) {
    if (is_weight_layer(layers[k])) return k;
  }
  throw ShapeError("model has no dense or convolution layer");
}

bool ScaledModel::has_softmax() const {
  return !layers.empty() && std::holds_alternative<nn::Softmax>(layers.back());
}

std::vector<nn::Shape> ScaledModel::shapes() const {
  std::vector<nn::Shape> out;
  nn::Shape cur = input;
  for (std::size_t k = 0; k < layers.size(); ++k) {
    const auto fail = [&](const std::string& what) {
      throw ShapeError("scaled layer " + std::to_string(k) + ": " + what);
    };
    std::visit(Overloaded{
                   [&](const IntDense& d) {
                     if (cur.size() != d.in) fail("input size mismatch");
                     cur = {d.out, 1, 1};
                   },
                   [&](const IntConv& c) {
                     if (cur.c != c.in_c) fail("channel mismatch");
                     cur = {c.out_c, cur.h, cur.w};
                   },
                   [&](const nn::Pool& p) {
                     if (p.window == 0 || cur.h < p.window || cur.w < p.window) fail("pool window too large");
                     cur = {cur.c, cur.h / p.window, cur.w / p.window};
                   },
                   [&](const nn::Activation&) {},
                   [&](const nn::Flatten&) { cur = {cur.size(), 1, 1}; },
                   [&](const nn::Softmax&) {},
               },
               layers[k]);
    out.push_back(cur);
  }
  return out;
}

ScaledModel quantize(const nn::LayeredModel& model, std::int64_t p, std::int64_t q, std::int64_t sigmoid_scale,
                     SigmoidApprox sigmoid) {
  if (p < 1 || q < 1) throw ParameterError("quantize: p and q must be >= 1");
  if (sigmoid_scale < 1) throw ParameterError("quantize: sigmoid scale must be >= 1");
  sigmoid.coefficients();
  model.validate();

  ScaledModel sm;
  sm.input = model.input;
  sm.p = p;
  sm.q = q;
  sm.sigmoid_scale = sigmoid_scale;
  sm.sigmoid = sigmoid;
  std::vector<std::int64_t> ledger{q};
  std::int64_t scale = q;
  const auto scale_ints = [&](const std::vector<double>& w, long double factor) {
    std::vector<std::int64_t> out(w.size());
    for (std::size_t i = 0; i < w.size(); ++i) out[i] = round_to_int(static_cast<long double>(w[i]) * factor);
    return out;
  };

  for (std::size_t k = 0; k < model.layers.size(); ++k) {
    const auto& layer = model.layers[k];
    if (const auto* d = std::get_if<nn::Dense>(&layer)) {
      sm.layers.emplace_back(IntDense{d->in, d->out, scale_ints(d->weights, p),
                                      scale_ints(d->bias, static_cast<long double>(scale) * p)});
      scale = checked_mul(scale, p);
      ledger.push_back(p);
    } else if (const auto* c = std::get_if<nn::Conv2d>(&layer)) {
      sm.layers.emplace_back(IntConv{c->in_c, c->out_c, c->kh, c->kw, scale_ints(c->weights, p),
                                     scale_ints(c->bias, static_cast<long double>(scale) * p)});
      scale = checked_mul(scale, p);
      ledger.push_back(p);
    } else if (const auto* pl = std::get_if<nn::Pool>(&layer)) {
      if (pl->kind == nn::PoolKind::Max) {
        throw UnsupportedError("layer " + std::to_string(k) +
                               ": max pooling has no cipherspace counterpart; use avg or sum pooling");
      }
      if (pl->kind == nn::PoolKind::Avg) {
        scale = checked_mul(scale, pool_area(*pl));
        ledger.push_back(pool_area(*pl));
      }
      sm.layers.emplace_back(*pl);
    } else if (const auto* a = std::get_if<nn::Activation>(&layer)) {
      if (a->kind == nn::ActivationKind::Sigmoid) {
        scale = sigmoid_scale;
        ledger.assign(1, sigmoid_scale);
      }
      sm.layers.emplace_back(*a);
    } else if (std::holds_alternative<nn::Flatten>(layer)) {
      sm.layers.emplace_back(nn::Flatten{});
    } else {
      sm.layers.emplace_back(nn::Softmax{});
    }
    sm.layer_scale.push_back(scale);
  }
  sm.scale_ledger = std::move(ledger);
  return sm;
}

nn::LayeredModel dequantize(const ScaledModel& sm) {
  nn::LayeredModel m;
  m.input = sm.input;
  long double scale = static_cast<long double>(sm.q);
  const long double p = static_cast<long double>(sm.p);
  const auto descale = [](const std::vector<std::int64_t>& v, long double f) {
    std::vector<double> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<double>(static_cast<long double>(v[i]) / f);
    return out;
  };
  for (const auto& layer : sm.layers) {
    std::visit(Overloaded{
                   [&](const IntDense& d) {
                     m.layers.emplace_back(nn::Dense{d.in, d.out, descale(d.weights, p), descale(d.bias, scale * p)});
                     scale *= p;
                   },
                   [&](const IntConv& c) {
                     m.layers.emplace_back(nn::Conv2d{c.in_c, c.out_c, c.kh, c.kw, descale(c.weights, p),
                                                      descale(c.bias, scale * p)});
                     scale *= p;
                   },
                   [&](const nn::Pool& pl) {
                     if (pl.kind == nn::PoolKind::Avg) scale *= static_cast<long double>(pool_area(pl));
                     m.layers.emplace_back(pl);
                   },
                   [&](const nn::Activation& a) {
                     if (a.kind == nn::ActivationKind::Sigmoid) scale = static_cast<long double>(sm.sigmoid_scale);
                     m.layers.emplace_back(a);
                   },
                   [&](const nn::Flatten&) { m.layers.emplace_back(nn::Flatten{}); },
                   [&](const nn::Softmax&) { m.layers.emplace_back(nn::Softmax{}); },
               },
               layer);
  }
  m.validate();
  return m;
}

std::vector<std::int64_t> quantize_input(std::span<const double> input, std::int64_t q) {
  std::vector<std::int64_t> out(input.size());
  for (std::size_t i = 0; i < input.size(); ++i) {
    out[i] = round_to_int(static_cast<long double>(input[i]) * static_cast<long double>(q));
  }
  return out;
}

// Reference integer forward on the serial kernels, always 128-bit.
std::vector<Wide> forward_quantized(const ScaledModel& sm, std::span<const double> input) {
  if (input.size() != sm.input.size()) throw ShapeError("quantized forward: input shape mismatch");
  const auto shapes = sm.shapes();
  const auto xq = quantize_input(input, sm.q);
  std::vector<Wide> cur(xq.begin(), xq.end());
  nn::Shape shape = sm.input;
  Wide scale = sm.q;
  const auto widen = [](const std::vector<std::int64_t>& v) { return std::vector<Wide>(v.begin(), v.end()); };
  for (std::size_t k = 0; k < sm.layers.size(); ++k) {
    std::vector<Wide> out(shapes[k].size());
    std::visit(Overloaded{
                   [&](const IntDense& d) {
                     kernels::serial::dense_forward<Wide>(d.in, d.out, cur, widen(d.weights), widen(d.bias), out);
                     scale *= sm.p;
                   },
                   [&](const IntConv& c) {
                     kernels::serial::conv2d_forward<Wide>({c.in_c, c.out_c, shape.h, shape.w, c.kh, c.kw}, cur,
                                                           widen(c.weights), widen(c.bias), out);
                     scale *= sm.p;
                   },
                   [&](const nn::Pool& p) {
                     kernels::serial::sum_pool_forward<Wide>(pool_geom(p, shape), cur, out);
                     if (p.kind == nn::PoolKind::Avg) scale *= pool_area(p);
                   },
                   [&](const nn::Activation& a) {
                     for (std::size_t i = 0; i < cur.size(); ++i) {
                       if (a.kind == nn::ActivationKind::Relu) {
                         out[i] = cur[i] < 0 ? Wide{0} : cur[i];
                       } else {
                         const double z = static_cast<double>(static_cast<long double>(cur[i]) /
                                                              static_cast<long double>(scale));
                         out[i] = std::llroundl(static_cast<long double>(sm.sigmoid_scale) * sm.sigmoid(z));
                       }
                     }
                     if (a.kind == nn::ActivationKind::Sigmoid) scale = sm.sigmoid_scale;
                   },
                   [&](const nn::Flatten&) { out = cur; },
                   [&](const nn::Softmax&) { out = cur; },
               },
               sm.layers[k]);
    cur = std::move(out);
    shape = shapes[k];
  }
  return cur;
}

std::vector<double> forward_quantized_real(const ScaledModel& sm, std::span<const double> input) {
  const auto ints = forward_quantized(sm, input);
  const long double scale = static_cast<long double>(sm.output_scale());
  std::vector<double> out(ints.size());
  for (std::size_t i = 0; i < ints.size(); ++i) out[i] = static_cast<double>(static_cast<long double>(ints[i]) / scale);
  return sm.has_softmax() ? nn::softmax(out) : out;
}

// ---------------------------------------------------------------------------
// Encryption strategies
// ---------------------------------------------------------------------------

std::string strategy_name(Strategy s) { return s == Strategy::ElementWise ? "element-wise" : "matrix-pair"; }

Strategy strategy_from(const std::string& s) {
  if (s == "element-wise") return Strategy::ElementWise;
  if (s == "matrix-pair") return Strategy::MatrixPair;
  throw ConfigError("unknown encryption strategy '" + s + "'");
}

std::vector<std::size_t> EncryptedModel::encrypted_shape() const {
  const auto& layer = plain.layers.at(encrypted_layer);
  if (strategy == Strategy::ElementWise) {
    if (const auto* d = std::get_if<IntDense>(&layer)) return {d->out, d->in, 2};
    const auto& c = std::get<IntConv>(layer);
    return {c.out_c, c.in_c, c.kh, c.kw, 2};
  }
  const auto& c = std::get<IntConv>(layer);
  return {c.out_c + 1, c.in_c, c.kh, c.kw};
}

std::vector<std::size_t> EncryptedModel::pair_shape() const {
  if (strategy != Strategy::MatrixPair) return {};
  const auto& c1 = std::get<IntConv>(plain.layers.at(encrypted_layer));
  const auto& c2 = std::get<IntConv>(plain.layers.at(pair_layer));
  return {c2.out_c, c1.out_c + 1, c2.kh, c2.kw};
}

EncryptedModel encrypt_elementwise(const ScaledModel& sm, const ivhe::SwitchKey& key, EncryptOptions opts) {
  if (key.params.n != 1) throw ParameterError("element-wise encryption needs a scalar key (n = 1)");
  sm.shapes();
  EncryptedModel em;
  em.strategy = Strategy::ElementWise;
  em.plain = sm;
  em.encrypted_layer = first_weight_layer(sm);
  check_prefix(sm, em.encrypted_layer);
  check_tail(sm, em.encrypted_layer, opts);

  auto& layer = em.plain.layers[em.encrypted_layer];
  std::vector<std::int64_t>* weights = nullptr;
  std::vector<std::int64_t>* bias = nullptr;
  if (auto* d = std::get_if<IntDense>(&layer)) {
    weights = &d->weights;
    bias = &d->bias;
  } else {
    auto& c = std::get<IntConv>(layer);
    weights = &c.weights;
    bias = &c.bias;
  }
  const auto encrypt_into = [&](const std::vector<std::int64_t>& src, std::vector<std::int64_t>& dst) {
    dst.assign(2 * src.size(), 0);
    for (std::size_t i = 0; i < src.size(); ++i) {
      const auto digits = ivhe::encrypt_digits(std::span<const std::int64_t>(&src[i], 1), key);
      dst[i] = digits[0];
      dst[src.size() + i] = digits[1];
    }
  };
  encrypt_into(*weights, em.enc_weights);
  encrypt_into(*bias, em.enc_bias);
  weights->clear();
  bias->clear();
  finish(em, key, opts);
  return em;
}

EncryptedModel encrypt_matrixpair(const ScaledModel& sm, const ivhe::SwitchKey& key, EncryptOptions opts) {
  sm.shapes();
  const std::size_t first = first_weight_layer(sm);
  const auto* c1 = std::get_if<IntConv>(&sm.layers[first]);
  if (c1 == nullptr) throw UnsupportedError("matrix-pair encryption needs the model to start with two convolutions");
  std::size_t second = first + 1;
  for (; second < sm.layers.size(); ++second) {
    const auto& l = sm.layers[second];
    if (std::holds_alternative<IntConv>(l)) break;
    if (!std::holds_alternative<nn::Pool>(l)) {
      throw UnsupportedError("matrix-pair encryption allows only pooling between the two convolutions");
    }
  }
  if (second == sm.layers.size()) {
    throw UnsupportedError("matrix-pair encryption needs the model to start with two convolutions");
  }
  const auto& c2 = std::get<IntConv>(sm.layers[second]);
  const std::size_t r = c1->out_c;
  if (key.params.n != r) {
    throw ParameterError("matrix-pair key length " + std::to_string(key.params.n) + " does not match the " +
                         std::to_string(r) + " first-layer filters");
  }
  if (!key.params.uniform_secret && r > 1) {
    throw ParameterError("matrix-pair encryption needs a key with a uniform secret vector");
  }
  check_prefix(sm, first);
  check_tail(sm, first, opts);

  EncryptedModel em;
  em.strategy = Strategy::MatrixPair;
  em.plain = sm;
  em.encrypted_layer = first;
  em.pair_layer = second;

  const std::size_t comps = r + 1, taps = c1->kh * c1->kw, in_c = c1->in_c;
  em.enc_weights.assign(comps * in_c * taps, 0);
  std::vector<std::int64_t> v(r);
  for (std::size_t c = 0; c < in_c; ++c) {
    for (std::size_t t = 0; t < taps; ++t) {
      for (std::size_t j = 0; j < r; ++j) v[j] = c1->weights[(j * in_c + c) * taps + t];
      const auto digits = ivhe::encrypt_digits(v, key);
      for (std::size_t k = 0; k < comps; ++k) em.enc_weights[(k * in_c + c) * taps + t] = digits[k];
    }
  }
  em.enc_bias = ivhe::encrypt_digits(c1->bias, key);

  const std::size_t taps2 = c2.kh * c2.kw;
  em.pair_weights.assign(c2.out_c * comps * taps2, 0);
  for (std::size_t o = 0; o < c2.out_c; ++o) {
    for (std::size_t t = 0; t < taps2; ++t) {
      std::int64_t sum = 0;
      for (std::size_t c = 0; c < r; ++c) {
        const std::int64_t wv = c2.weights[(o * r + c) * taps2 + t];
        em.pair_weights[(o * comps + c) * taps2 + t] = wv;
        sum = checked_add(sum, wv);
      }
      em.pair_weights[(o * comps + r) * taps2 + t] = sum;
    }
  }

  auto& p1 = std::get<IntConv>(em.plain.layers[first]);
  p1.weights.clear();
  p1.bias.clear();
  std::get<IntConv>(em.plain.layers[second]).weights.clear();
  finish(em, key, opts);
  return em;
}

// ---------------------------------------------------------------------------
// Execution and decryption
// ---------------------------------------------------------------------------

Wide CipherLanes::total_scale() const {
  Wide s = 1;
  for (auto f : scales) s *= f;
  return s;
}

CipherLanes forward_cipher(const EncryptedModel& em, std::span<const double> input) {
  return run(em, input, em.plain.layers.size());
}

CipherLanes feature_lanes(const EncryptedModel& em, std::span<const double> input) {
  return run(em, input, em.plain.output_layer_index());
}

std::vector<double> normalized_lane_features(const CipherLanes& lanes) {
  const long double denom = static_cast<long double>(lanes.w) * static_cast<long double>(lanes.total_scale());
  std::vector<double> out(lanes.lane1.size() + lanes.lane2.size());
  for (std::size_t i = 0; i < lanes.lane1.size(); ++i) {
    out[i] = static_cast<double>(static_cast<long double>(lanes.lane1[i]) / denom);
  }
  for (std::size_t i = 0; i < lanes.lane2.size(); ++i) {
    out[lanes.lane1.size() + i] = static_cast<double>(static_cast<long double>(lanes.lane2[i]) / denom);
  }
  return out;
}

std::vector<Wide> decrypt_scores_exact(const CipherLanes& lanes, const ivhe::SecretKey& sk) {
  if (lanes.lane1.size() != lanes.lane2.size()) throw ShapeError("decrypt: lane lengths differ");
  if (lanes.w < 1) throw ParameterError("decrypt: w must be positive");
  const Wide t = secret_t(sk);
  std::vector<Wide> out(lanes.lane1.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = div_round_half_away_wide(lanes.lane1[i] + t * lanes.lane2[i], lanes.w);
  }
  return out;
}

std::vector<double> decrypt_scores(const CipherLanes& lanes, const ivhe::SecretKey& sk) {
  const Wide scale = lanes.total_scale();
  if (scale == 0) throw ParameterError("decrypt: zero scale");
  const auto ints = decrypt_scores_exact(lanes, sk);
  std::vector<double> out(ints.size());
  for (std::size_t i = 0; i < ints.size(); ++i) {
    out[i] = static_cast<double>(static_cast<long double>(ints[i]) / static_cast<long double>(scale));
  }
  return lanes.softmax ? nn::softmax(out) : out;
}

ScaledModel decrypt_model(const EncryptedModel& em, const ivhe::SecretKey& sk) {
  ScaledModel sm = em.plain;
  const std::size_t comps = sk.ciphertext_len();
  if (comps != em.params.n + 1) throw ShapeError("decrypt_model: secret key does not match the model's key length");
  const auto decrypt_one = [&](std::span<const std::int64_t> digits) {
    return ivhe::decrypt(digits, sk, em.params);
  };

  if (em.strategy == Strategy::ElementWise) {
    const auto split = [&](const std::vector<std::int64_t>& enc) {
      const std::size_t n = enc.size() / 2;
      std::vector<std::int64_t> out(n);
      for (std::size_t i = 0; i < n; ++i) {
        const std::int64_t d[2] = {enc[i], enc[n + i]};
        out[i] = decrypt_one(d)[0];
      }
      return out;
    };
    auto& layer = sm.layers[em.encrypted_layer];
    if (auto* d = std::get_if<IntDense>(&layer)) {
      d->weights = split(em.enc_weights);
      d->bias = split(em.enc_bias);
    } else {
      auto& c = std::get<IntConv>(layer);
      c.weights = split(em.enc_weights);
      c.bias = split(em.enc_bias);
    }
    return sm;
  }

  auto& c1 = std::get<IntConv>(sm.layers[em.encrypted_layer]);
  const std::size_t r = c1.out_c, taps = c1.kh * c1.kw, in_c = c1.in_c;
  c1.weights.assign(r * in_c * taps, 0);
  std::vector<std::int64_t> digits(comps);
  for (std::size_t c = 0; c < in_c; ++c) {
    for (std::size_t t = 0; t < taps; ++t) {
      for (std::size_t k = 0; k < comps; ++k) digits[k] = em.enc_weights[(k * in_c + c) * taps + t];
      const auto v = decrypt_one(digits);
      for (std::size_t j = 0; j < r; ++j) c1.weights[(j * in_c + c) * taps + t] = v[j];
    }
  }
  c1.bias = decrypt_one(em.enc_bias);
  auto& c2 = std::get<IntConv>(sm.layers[em.pair_layer]);
  const std::size_t taps2 = c2.kh * c2.kw;
  c2.weights.assign(c2.out_c * r * taps2, 0);
  for (std::size_t o = 0; o < c2.out_c; ++o) {
    for (std::size_t c = 0; c < r; ++c) {
      for (std::size_t t = 0; t < taps2; ++t) {
        c2.weights[(o * r + c) * taps2 + t] = em.pair_weights[(o * comps + c) * taps2 + t];
      }
    }
  }
  return sm;
}

double noise_bound_scores(const EncryptedModel& em, double max_abs_input) {
  const ScaledModel& sm = em.plain;
  const long double fresh = static_cast<long double>(em.params.fresh_noise_bound());
  if (fresh == 0.0L) return 0.0;
  long double xmax = std::fabs(static_cast<long double>(max_abs_input)) * static_cast<long double>(sm.q);
  const long double w = static_cast<long double>(em.params.w);
  long double noise = 0.0L;
  std::vector<std::int64_t> ledger{sm.q};
  for (std::size_t k = 0; k < sm.layers.size(); ++k) {
    const auto& layer = sm.layers[k];
    if (k < em.encrypted_layer) {
      if (const auto* p = std::get_if<nn::Pool>(&layer)) xmax *= static_cast<long double>(pool_area(*p));
      continue;
    }
    if (k == em.encrypted_layer) {
      std::size_t fan_in = 0;
      if (const auto* d = std::get_if<IntDense>(&layer)) {
        fan_in = d->in;
      } else {
        const auto& c = std::get<IntConv>(layer);
        fan_in = c.in_c * c.kh * c.kw;
      }
      noise = (static_cast<long double>(fan_in) * xmax + 1.0L) * fresh;
    } else if (is_weight_layer(layer)) {
      noise *= em.gain[k];
    } else if (const auto* p = std::get_if<nn::Pool>(&layer)) {
      noise *= static_cast<long double>(pool_area(*p));
    } else if (const auto* a = std::get_if<nn::Activation>(&layer); a && a->kind == nn::ActivationKind::Sigmoid) {
      // Only the linear part of the lane-wise polynomial sees the noise term.
      noise = noise / product(ledger) * std::fabs(sm.sigmoid.coefficients()[1]) *
              static_cast<long double>(sm.sigmoid_scale);
      ledger.assign(1, sm.sigmoid_scale);
      continue;
    }
    if (is_weight_layer(layer)) ledger.push_back(sm.p);
    if (const auto* p = std::get_if<nn::Pool>(&layer); p && p->kind == nn::PoolKind::Avg) {
      ledger.push_back(pool_area(*p));
    }
  }
  return static_cast<double>(noise / w);
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

nlohmann::json to_json(const ScaledModel& sm) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& layer : sm.layers) {
    layers.push_back(std::visit(
        Overloaded{
            [](const IntDense& d) -> nlohmann::json {
              return {{"type", "dense"}, {"in", d.in}, {"out", d.out},
                      {"weights", encode_ints(d.weights)}, {"bias", encode_ints(d.bias)}};
            },
            [](const IntConv& c) -> nlohmann::json {
              return {{"type", "conv2d"}, {"in_c", c.in_c}, {"out_c", c.out_c}, {"kh", c.kh}, {"kw", c.kw},
                      {"weights", encode_ints(c.weights)}, {"bias", encode_ints(c.bias)}};
            },
            [](const nn::Pool& p) -> nlohmann::json {
              return {{"type", "pool"}, {"kind", p.kind == nn::PoolKind::Avg ? "avg" : "sum"}, {"window", p.window}};
            },
            [](const nn::Activation& a) -> nlohmann::json {
              return {{"type", "activation"}, {"kind", a.kind == nn::ActivationKind::Relu ? "relu" : "sigmoid"}};
            },
            [](const nn::Flatten&) -> nlohmann::json { return {{"type", "flatten"}}; },
            [](const nn::Softmax&) -> nlohmann::json { return {{"type", "softmax"}}; },
        },
        layer));
  }
  return {{"format", "chainlearn.scaled-model"},
          {"version", 1},
          {"input", nn::shape_to_json(sm.input)},
          {"p", sm.p},
          {"q", sm.q},
          {"sigmoid_scale", sm.sigmoid_scale},
          {"sigmoid", {{"order", sm.sigmoid.order}, {"cubic_divisor", sm.sigmoid.cubic_divisor}}},
          {"layer_scale", sm.layer_scale},
          {"scale_ledger", sm.scale_ledger},
          {"layers", layers}};
}

ScaledModel scaled_model_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "chainlearn.scaled-model") throw FormatError("not a scaled model document");
  if (j.value("version", 0) != 1) throw FormatError("unsupported scaled model version");
  ScaledModel sm;
  sm.input = nn::shape_from_json(j.at("input"));
  sm.p = j.at("p").get<std::int64_t>();
  sm.q = j.at("q").get<std::int64_t>();
  sm.sigmoid_scale = j.at("sigmoid_scale").get<std::int64_t>();
  sm.sigmoid.order = j.at("sigmoid").at("order").get<int>();
  sm.sigmoid.cubic_divisor = j.at("sigmoid").at("cubic_divisor").get<double>();
  sm.layer_scale = j.at("layer_scale").get<std::vector<std::int64_t>>();
  sm.scale_ledger = j.at("scale_ledger").get<std::vector<std::int64_t>>();
  for (const auto& l : j.at("layers")) {
    const auto type = l.at("type").get<std::string>();
    if (type == "dense") {
      sm.layers.emplace_back(IntDense{l.at("in").get<std::size_t>(), l.at("out").get<std::size_t>(),
                                      decode_ints(l.at("weights").get<std::string>()),
                                      decode_ints(l.at("bias").get<std::string>())});
    } else if (type == "conv2d") {
      sm.layers.emplace_back(IntConv{l.at("in_c").get<std::size_t>(), l.at("out_c").get<std::size_t>(),
                                     l.at("kh").get<std::size_t>(), l.at("kw").get<std::size_t>(),
                                     decode_ints(l.at("weights").get<std::string>()),
                                     decode_ints(l.at("bias").get<std::string>())});
    } else if (type == "pool") {
      const auto kind = l.at("kind").get<std::string>();
      if (kind != "avg" && kind != "sum") throw FormatError("unsupported pool kind '" + kind + "' in scaled model");
      sm.layers.emplace_back(nn::Pool{kind == "avg" ? nn::PoolKind::Avg : nn::PoolKind::Sum,
                                      l.at("window").get<std::size_t>()});
    } else if (type == "activation") {
      const auto kind = l.at("kind").get<std::string>();
      if (kind != "relu" && kind != "sigmoid") throw FormatError("unknown activation '" + kind + "'");
      sm.layers.emplace_back(nn::Activation{kind == "relu" ? nn::ActivationKind::Relu : nn::ActivationKind::Sigmoid});
    } else if (type == "flatten") {
      sm.layers.emplace_back(nn::Flatten{});
    } else if (type == "softmax") {
      sm.layers.emplace_back(nn::Softmax{});
    } else {
      throw FormatError("unknown layer type '" + type + "'");
    }
  }
  if (sm.layer_scale.size() != sm.layers.size()) throw FormatError("scaled model: layer_scale length mismatch");
  sm.shapes();
  return sm;
}

nlohmann::json to_json(const EncryptedModel& em) {
  // Element-wise tensors go out with the lane axis last.
  std::vector<std::int64_t> weights = em.enc_weights, bias = em.enc_bias;
  if (em.strategy == Strategy::ElementWise) {
    const auto interleave = [](const std::vector<std::int64_t>& v) {
      const std::size_t n = v.size() / 2;
      std::vector<std::int64_t> out(v.size());
      for (std::size_t i = 0; i < n; ++i) {
        out[2 * i] = v[i];
        out[2 * i + 1] = v[n + i];
      }
      return out;
    };
    weights = interleave(em.enc_weights);
    bias = interleave(em.enc_bias);
  }
  nlohmann::json params;
  ivhe::to_json(params, em.params);
  return {{"format", "chainlearn.encrypted-model"},
          {"version", 1},
          {"strategy", strategy_name(em.strategy)},
          {"model", to_json(em.plain)},
          {"encrypted_layer", em.encrypted_layer},
          {"encrypted_shape", em.encrypted_shape()},
          {"enc_weights", encode_ints(weights)},
          {"enc_bias", encode_ints(bias)},
          {"pair_layer", em.pair_layer},
          {"pair_shape", em.pair_shape()},
          {"pair_weights", encode_ints(em.pair_weights)},
          {"key_id", em.key_id},
          {"params", params},
          {"noise_policy", noise_policy_name(em.noise_policy)},
          {"input_bound", em.input_bound},
          {"approximate_sigmoid", em.approximate_sigmoid}};
}

EncryptedModel encrypted_model_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "chainlearn.encrypted-model") throw FormatError("not an encrypted model document");
  if (j.value("version", 0) != 1) throw FormatError("unsupported encrypted model version");
  EncryptedModel em;
  em.strategy = strategy_from(j.at("strategy").get<std::string>());
  em.plain = scaled_model_from_json(j.at("model"));
  em.encrypted_layer = j.at("encrypted_layer").get<std::size_t>();
  em.pair_layer = j.at("pair_layer").get<std::size_t>();
  em.pair_weights = decode_ints(j.at("pair_weights").get<std::string>());
  em.key_id = j.at("key_id").get<std::string>();
  ivhe::from_json(j.at("params"), em.params);
  const auto policy = j.at("noise_policy").get<std::string>();
  if (policy != "exact" && policy != "report") throw FormatError("unknown noise policy '" + policy + "'");
  em.noise_policy = policy == "exact" ? NoisePolicy::Exact : NoisePolicy::Report;
  em.input_bound = j.at("input_bound").get<std::int64_t>();
  em.approximate_sigmoid = j.at("approximate_sigmoid").get<bool>();

  auto weights = decode_ints(j.at("enc_weights").get<std::string>());
  auto bias = decode_ints(j.at("enc_bias").get<std::string>());
  if (em.strategy == Strategy::ElementWise) {
    const auto split = [](const std::vector<std::int64_t>& v) {
      const std::size_t n = v.size() / 2;
      std::vector<std::int64_t> out(v.size());
      for (std::size_t i = 0; i < n; ++i) {
        out[i] = v[2 * i];
        out[n + i] = v[2 * i + 1];
      }
      return out;
    };
    weights = split(weights);
    bias = split(bias);
  }
  em.enc_weights = std::move(weights);
  em.enc_bias = std::move(bias);

  // Structural checks: a malformed blob must fail here, not inside a kernel.
  if (em.encrypted_layer >= em.plain.layers.size() || !is_weight_layer(em.plain.layers[em.encrypted_layer])) {
    throw FormatError("encrypted model: encrypted_layer does not name a weight layer");
  }
  const auto shape = em.encrypted_shape();
  std::size_t expect = 1;
  for (auto d : shape) expect *= d;
  if (em.enc_weights.size() != expect) throw FormatError("encrypted model: encrypted tensor size mismatch");
  if (em.strategy == Strategy::ElementWise) {
    const auto& layer = em.plain.layers[em.encrypted_layer];
    const std::size_t out =
        std::holds_alternative<IntDense>(layer) ? std::get<IntDense>(layer).out : std::get<IntConv>(layer).out_c;
    if (em.enc_bias.size() != 2 * out) throw FormatError("encrypted model: encrypted bias size mismatch");
    if (em.params.n != 1) throw FormatError("encrypted model: element-wise model with a vector key");
  } else {
    if (!std::holds_alternative<IntConv>(em.plain.layers[em.encrypted_layer]) ||
        em.pair_layer >= em.plain.layers.size() || !std::holds_alternative<IntConv>(em.plain.layers[em.pair_layer]) ||
        em.pair_layer <= em.encrypted_layer) {
      throw FormatError("encrypted model: matrix-pair layers are not convolutions");
    }
    for (std::size_t k = em.encrypted_layer + 1; k < em.pair_layer; ++k) {
      if (!std::holds_alternative<nn::Pool>(em.plain.layers[k])) {
        throw FormatError("encrypted model: only pooling may sit between the paired convolutions");
      }
    }
    const auto ps = em.pair_shape();
    if (em.pair_weights.size() != ps[0] * ps[1] * ps[2] * ps[3]) {
      throw FormatError("encrypted model: pair tensor size mismatch");
    }
    const auto& c1 = std::get<IntConv>(em.plain.layers[em.encrypted_layer]);
    if (em.enc_bias.size() != c1.out_c + 1 || em.params.n != c1.out_c) {
      throw FormatError("encrypted model: matrix-pair bias or key length mismatch");
    }
    if (std::get<IntConv>(em.plain.layers[em.pair_layer]).in_c != c1.out_c) {
      throw FormatError("encrypted model: paired convolutions do not compose");
    }
  }
  for (std::size_t k = 0; k < em.plain.layers.size(); ++k) {
    if (k == em.encrypted_layer) continue;
    if (const auto* d = std::get_if<IntDense>(&em.plain.layers[k])) {
      if (d->weights.size() != d->in * d->out || d->bias.size() != d->out) {
        throw FormatError("encrypted model: plaintext layer weight size mismatch");
      }
    } else if (const auto* c = std::get_if<IntConv>(&em.plain.layers[k])) {
      const bool pair = em.strategy == Strategy::MatrixPair && k == em.pair_layer;
      if ((!pair && c->weights.size() != c->out_c * c->in_c * c->kh * c->kw) || c->bias.size() != c->out_c) {
        throw FormatError("encrypted model: plaintext layer weight size mismatch");
      }
    }
  }
  refresh_bounds(em);
  return em;
}

Bytes serialize(const EncryptedModel& em) {
  const std::string text = to_json(em).dump();
  return {text.begin(), text.end()};
}

EncryptedModel deserialize_encrypted_model(std::span<const std::uint8_t> bytes) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(bytes.begin(), bytes.end());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("encrypted model is not valid JSON: ") + e.what());
  }
  try {
    return encrypted_model_from_json(j);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("encrypted model document malformed: ") + e.what());
  }
}

}  // namespace chainlearn::cipher
