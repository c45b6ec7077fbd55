#include "chainlearn/neuralnet.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>

#include "chainlearn/kernels.hpp"

namespace chainlearn::nn {

namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

kernels::ConvGeom conv_geom(const Conv2d& c, const Shape& in) {
  return {c.in_c, c.out_c, in.h, in.w, c.kh, c.kw};
}

kernels::PoolGeom pool_geom(const Pool& p, const Shape& in) { return {in.c, in.h, in.w, p.window}; }

Shape layer_output(const Layer& layer, const Shape& in, std::size_t index) {
  auto fail = [&](const std::string& what) {
    throw ShapeError("layer " + std::to_string(index) + " (" + layer_name(layer) + "): " + what);
  };
  return std::visit(
      Overloaded{
          [&](const Dense& d) -> Shape {
            if (in.size() != d.in) fail("expects " + std::to_string(d.in) + " inputs, got " + std::to_string(in.size()));
            if (d.weights.size() != d.in * d.out || d.bias.size() != d.out) fail("weight buffer size mismatch");
            return {d.out, 1, 1};
          },
          [&](const Conv2d& c) -> Shape {
            if (in.c != c.in_c) fail("expects " + std::to_string(c.in_c) + " channels, got " + std::to_string(in.c));
            if (c.weights.size() != c.out_c * c.in_c * c.kh * c.kw || c.bias.size() != c.out_c) {
              fail("weight buffer size mismatch");
            }
            return {c.out_c, in.h, in.w};
          },
          [&](const Pool& p) -> Shape {
            if (p.window == 0 || in.h < p.window || in.w < p.window) fail("pooling window larger than input");
            return {in.c, in.h / p.window, in.w / p.window};
          },
          [&](const Activation&) -> Shape { return in; },
          [&](const Flatten&) -> Shape { return {in.size(), 1, 1}; },
          [&](const Softmax&) -> Shape { return in; },
      },
      layer);
}

// Forward through layers [first, last), returning every intermediate activation.
void run_layers(const LayeredModel& model, const std::vector<Shape>& shapes, std::size_t first, std::size_t last,
                std::vector<std::vector<double>>& acts) {
  for (std::size_t k = first; k < last; ++k) {
    const Shape in_shape = k == 0 ? model.input : shapes[k - 1];
    const std::vector<double>& in = acts.back();
    std::vector<double> out(shapes[k].size());
    std::visit(Overloaded{
                   [&](const Dense& d) {
                     kernels::omp::dense_forward<double>(d.in, d.out, in, d.weights, d.bias, out);
                   },
                   [&](const Conv2d& c) {
                     kernels::omp::conv2d_forward<double>(conv_geom(c, in_shape), in, c.weights, c.bias, out);
                   },
                   [&](const Pool& p) {
                     const auto g = pool_geom(p, in_shape);
                     if (p.kind == PoolKind::Max) {
                       kernels::max_pool_forward(g, in, out);
                       return;
                     }
                     kernels::omp::sum_pool_forward<double>(g, in, out);
                     if (p.kind == PoolKind::Avg) {
                       const double inv = 1.0 / static_cast<double>(p.window * p.window);
                       for (auto& v : out) v *= inv;
                     }
                   },
                   [&](const Activation& a) {
                     for (std::size_t i = 0; i < in.size(); ++i) {
                       out[i] = a.kind == ActivationKind::Relu ? std::max(0.0, in[i]) : sigmoid(in[i]);
                     }
                   },
                   [&](const Flatten&) { out = in; },
                   [&](const Softmax&) { out = softmax(in); },
               },
               model.layers[k]);
    acts.push_back(std::move(out));
  }
}

struct LossGrad {
  double loss;
  std::vector<double> grad;  // w.r.t. the model output (or pre-softmax logits when skip_softmax)
  bool skip_softmax;
};

LossGrad output_loss(const LayeredModel& model, std::span<const double> output, const Example& ex, LossKind kind,
                     int num_classes) {
  LossGrad r{0.0, std::vector<double>(output.size(), 0.0), false};
  if (kind == LossKind::CrossEntropy) {
    const bool has_sm = model.has_softmax();
    const std::vector<double> p = has_sm ? std::vector<double>(output.begin(), output.end()) : softmax(output);
    const auto label = static_cast<std::size_t>(ex.label);
    if (label >= p.size()) throw ShapeError("label " + std::to_string(ex.label) + " outside model output");
    r.loss = -std::log(std::max(p[label], 1e-300));
    for (std::size_t i = 0; i < p.size(); ++i) r.grad[i] = p[i] - (i == label ? 1.0 : 0.0);
    r.skip_softmax = has_sm;
    (void)num_classes;
    return r;
  }
  std::vector<double> target = ex.target;
  if (target.empty()) {
    target.assign(output.size(), 0.0);
    target.at(static_cast<std::size_t>(ex.label)) = 1.0;
  }
  if (target.size() != output.size()) throw ShapeError("regression target length mismatch");
  for (std::size_t i = 0; i < output.size(); ++i) {
    const double d = output[i] - target[i];
    r.loss += 0.5 * d * d;
    r.grad[i] = d;
  }
  return r;
}

// Backprop one example, accumulating scaled gradients into grads (aligned with parameters()).
double accumulate(const LayeredModel& model, const std::vector<Shape>& shapes, const Example& ex, LossKind kind,
                  double scale, std::vector<std::vector<double>>& grads) {
  std::vector<std::vector<double>> acts;
  acts.reserve(model.layers.size() + 1);
  acts.push_back(ex.input);
  run_layers(model, shapes, 0, model.layers.size(), acts);

  LossGrad lg = output_loss(model, acts.back(), ex, kind, 0);
  std::vector<double> g = std::move(lg.grad);
  for (auto& v : g) v *= scale;

  // parameter buffer index for each layer
  std::vector<std::size_t> buf_index(model.layers.size(), 0);
  std::size_t next = 0;
  for (std::size_t k = 0; k < model.layers.size(); ++k) {
    buf_index[k] = next;
    if (std::holds_alternative<Dense>(model.layers[k]) || std::holds_alternative<Conv2d>(model.layers[k])) next += 2;
  }

  std::size_t k = model.layers.size();
  if (lg.skip_softmax) --k;  // gradient already w.r.t. the softmax input
  while (k-- > 0) {
    const Shape in_shape = k == 0 ? model.input : shapes[k - 1];
    const std::vector<double>& in = acts[k];
    const std::vector<double>& out = acts[k + 1];
    const bool need_in = k > 0;
    std::vector<double> gin(need_in ? in.size() : 0, 0.0);
    std::visit(Overloaded{
                   [&](const Dense& d) {
                     kernels::omp::dense_backward(d.in, d.out, in, d.weights, g, gin, grads[buf_index[k]],
                                                  grads[buf_index[k] + 1]);
                   },
                   [&](const Conv2d& c) {
                     kernels::omp::conv2d_backward(conv_geom(c, in_shape), in, c.weights, g, gin,
                                                   grads[buf_index[k]], grads[buf_index[k] + 1]);
                   },
                   [&](const Pool& p) {
                     if (!need_in) return;
                     const auto geom = pool_geom(p, in_shape);
                     if (p.kind == PoolKind::Max) {
                       kernels::max_pool_backward(geom, in, g, gin);
                       return;
                     }
                     const double f = p.kind == PoolKind::Avg ? 1.0 / static_cast<double>(p.window * p.window) : 1.0;
                     const std::size_t oh = geom.out_h(), ow = geom.out_w();
                     for (std::size_t c = 0; c < geom.c; ++c)
                       for (std::size_t y = 0; y < oh; ++y)
                         for (std::size_t x = 0; x < ow; ++x) {
                           const double v = g[(c * oh + y) * ow + x] * f;
                           for (std::size_t dy = 0; dy < p.window; ++dy)
                             for (std::size_t dx = 0; dx < p.window; ++dx)
                               gin[(c * geom.h + y * p.window + dy) * geom.w + x * p.window + dx] += v;
                         }
                   },
                   [&](const Activation& a) {
                     if (!need_in) return;
                     for (std::size_t i = 0; i < in.size(); ++i) {
                       gin[i] = a.kind == ActivationKind::Relu ? (in[i] > 0.0 ? g[i] : 0.0)
                                                               : g[i] * out[i] * (1.0 - out[i]);
                     }
                   },
                   [&](const Flatten&) {
                     if (need_in) gin = g;
                   },
                   [&](const Softmax&) {
                     if (!need_in) return;
                     double dot = 0.0;
                     for (std::size_t i = 0; i < out.size(); ++i) dot += out[i] * g[i];
                     for (std::size_t i = 0; i < out.size(); ++i) gin[i] = out[i] * (g[i] - dot);
                   },
               },
               model.layers[k]);
    g = std::move(gin);
  }
  return lg.loss;
}

void check_finite(double v) {
  if (!std::isfinite(v)) throw DivergenceError("training diverged: non-finite loss");
}

}  // namespace

std::string layer_name(const Layer& layer) {
  return std::visit(Overloaded{
                        [](const Dense&) { return std::string("dense"); },
                        [](const Conv2d&) { return std::string("conv2d"); },
                        [](const Pool&) { return std::string("pool"); },
                        [](const Activation&) { return std::string("activation"); },
                        [](const Flatten&) { return std::string("flatten"); },
                        [](const Softmax&) { return std::string("softmax"); },
                    },
                    layer);
}

std::vector<Shape> LayeredModel::shapes() const {
  std::vector<Shape> out;
  out.reserve(layers.size());
  Shape cur = input;
  for (std::size_t k = 0; k < layers.size(); ++k) {
    cur = layer_output(layers[k], cur, k);
    out.push_back(cur);
  }
  return out;
}

Shape LayeredModel::output_shape() const {
  auto s = shapes();
  return s.empty() ? input : s.back();
}

void LayeredModel::validate() const {
  if (input.size() == 0) throw ShapeError("model input shape is empty");
  for (std::size_t k = 0; k < layers.size(); ++k) {
    if (std::holds_alternative<Softmax>(layers[k]) && k + 1 != layers.size()) {
      throw ShapeError("softmax output must be the last layer");
    }
  }
  const std::vector<double> zeros(input.size(), 0.0);
  (void)forward(*this, zeros);
}

std::size_t LayeredModel::output_layer_index() const {
  for (std::size_t k = layers.size(); k-- > 0;) {
    if (std::holds_alternative<Dense>(layers[k]) || std::holds_alternative<Conv2d>(layers[k])) return k;
  }
  throw ShapeError("model has no parameterised output layer");
}

std::size_t LayeredModel::feature_length() const {
  const std::size_t k = output_layer_index();
  return k == 0 ? input.size() : shapes()[k - 1].size();
}

std::size_t LayeredModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters(*this)) n += p.size();
  return n;
}

bool LayeredModel::has_softmax() const {
  return !layers.empty() && std::holds_alternative<Softmax>(layers.back());
}

std::vector<std::span<double>> parameters(LayeredModel& model) {
  std::vector<std::span<double>> out;
  for (auto& layer : model.layers) {
    if (auto* d = std::get_if<Dense>(&layer)) {
      out.emplace_back(d->weights);
      out.emplace_back(d->bias);
    } else if (auto* c = std::get_if<Conv2d>(&layer)) {
      out.emplace_back(c->weights);
      out.emplace_back(c->bias);
    }
  }
  return out;
}

std::vector<std::span<const double>> parameters(const LayeredModel& model) {
  std::vector<std::span<const double>> out;
  for (const auto& layer : model.layers) {
    if (const auto* d = std::get_if<Dense>(&layer)) {
      out.emplace_back(d->weights);
      out.emplace_back(d->bias);
    } else if (const auto* c = std::get_if<Conv2d>(&layer)) {
      out.emplace_back(c->weights);
      out.emplace_back(c->bias);
    }
  }
  return out;
}

Dense make_dense(std::size_t in, std::size_t out) {
  return Dense{in, out, std::vector<double>(in * out, 0.0), std::vector<double>(out, 0.0)};
}

Conv2d make_conv(std::size_t in_c, std::size_t out_c, std::size_t kh, std::size_t kw) {
  return Conv2d{in_c, out_c, kh, kw, std::vector<double>(out_c * in_c * kh * kw, 0.0),
                std::vector<double>(out_c, 0.0)};
}

void init_weights(LayeredModel& model, std::uint64_t seed) {
  Rng rng(seed);
  for (auto& layer : model.layers) {
    if (auto* d = std::get_if<Dense>(&layer)) {
      const double lim = std::sqrt(6.0 / static_cast<double>(d->in + d->out));
      for (auto& v : d->weights) v = rng.uniform(-lim, lim);
      std::fill(d->bias.begin(), d->bias.end(), 0.0);
    } else if (auto* c = std::get_if<Conv2d>(&layer)) {
      const double taps = static_cast<double>(c->kh * c->kw);
      const double lim = std::sqrt(6.0 / (taps * static_cast<double>(c->in_c + c->out_c)));
      for (auto& v : c->weights) v = rng.uniform(-lim, lim);
      std::fill(c->bias.begin(), c->bias.end(), 0.0);
    }
  }
}

std::vector<double> forward_range(const LayeredModel& model, std::span<const double> input, std::size_t first,
                                  std::size_t last) {
  const auto shapes = model.shapes();
  const Shape in_shape = first == 0 ? model.input : shapes[first - 1];
  if (input.size() != in_shape.size()) {
    throw ShapeError("input has " + std::to_string(input.size()) + " values, expected " +
                     std::to_string(in_shape.size()));
  }
  std::vector<std::vector<double>> acts;
  acts.emplace_back(input.begin(), input.end());
  run_layers(model, shapes, first, last, acts);
  return std::move(acts.back());
}

std::vector<double> forward(const LayeredModel& model, std::span<const double> input) {
  return forward_range(model, input, 0, model.layers.size());
}

std::vector<double> feature_vector(const LayeredModel& model, std::span<const double> input) {
  const std::size_t k = model.output_layer_index();
  if (k == 0) {
    if (input.size() != model.input.size()) throw ShapeError("input shape mismatch");
    return {input.begin(), input.end()};
  }
  return forward_range(model, input, 0, k);
}

std::size_t argmax(std::span<const double> scores) {
  return static_cast<std::size_t>(std::max_element(scores.begin(), scores.end()) - scores.begin());
}

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> out(logits.size());
  if (logits.empty()) return out;
  const double m = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) sum += out[i] = std::exp(logits[i] - m);
  for (auto& v : out) v /= sum;
  return out;
}

LabeledDataset LabeledDataset::subset(Split split) const {
  LabeledDataset out{shape, num_classes, {}, {}};
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const Split s = splits.empty() ? Split::Train : splits[i];
    if (s == split) out.append(examples[i], split);
  }
  return out;
}

void LabeledDataset::validate() const {
  if (!splits.empty() && splits.size() != examples.size()) throw ShapeError("dataset split tags misaligned");
  for (const auto& ex : examples) {
    if (ex.input.size() != shape.size()) throw ShapeError("dataset example has wrong input size");
    if (ex.label < 0 || ex.label >= num_classes) throw ShapeError("dataset label out of range");
  }
}

void LabeledDataset::append(Example ex, Split split) {
  if (splits.empty() && !examples.empty() && split != Split::Train) splits.assign(examples.size(), Split::Train);
  examples.push_back(std::move(ex));
  if (!splits.empty() || split != Split::Train) splits.push_back(split);
}

void TrainConfig::validate(std::size_t dataset_size) const {
  if (dataset_size == 0) throw ParameterError("train: dataset is empty");
  if (batch_size == 0 || batch_size > dataset_size) {
    throw ParameterError("train: batch size " + std::to_string(batch_size) + " must be in [1, " +
                         std::to_string(dataset_size) + "]");
  }
  if (!(learning_rate > 0.0)) throw ParameterError("train: learning rate must be positive");
}

Gradients compute_gradients(const LayeredModel& model, std::span<const Example> batch, LossKind loss) {
  const auto shapes = model.shapes();
  Gradients g;
  for (const auto& p : parameters(model)) g.buffers.emplace_back(p.size(), 0.0);
  const double scale = 1.0 / static_cast<double>(batch.size());
  for (const auto& ex : batch) g.loss += accumulate(model, shapes, ex, loss, scale, g.buffers) * scale;
  return g;
}

double loss_value(const LayeredModel& model, std::span<const Example> batch, LossKind loss) {
  double total = 0.0;
  for (const auto& ex : batch) total += output_loss(model, forward(model, ex.input), ex, loss, 0).loss;
  return total / static_cast<double>(batch.size());
}

TrainResult train(LayeredModel model, const LabeledDataset& data, const TrainConfig& cfg) {
  std::vector<const Example*> train_set, verify_set;
  for (std::size_t i = 0; i < data.examples.size(); ++i) {
    const Split s = data.splits.empty() ? Split::Train : data.splits[i];
    if (s == Split::Train) train_set.push_back(&data.examples[i]);
    if (s == Split::Verify) verify_set.push_back(&data.examples[i]);
  }
  cfg.validate(train_set.size());
  model.validate();
  const auto shapes = model.shapes();
  const auto& stop_set = verify_set.empty() ? train_set : verify_set;

  auto params = parameters(model);
  std::vector<std::vector<double>> m1, m2;
  for (const auto& p : params) {
    m1.emplace_back(p.size(), 0.0);
    m2.emplace_back(p.size(), 0.0);
  }

  Rng rng(cfg.seed);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t step = 0;
  TrainResult result;

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const double scale = 1.0 / static_cast<double>(end - start);
      std::vector<std::vector<double>> grads;
      for (const auto& p : params) grads.emplace_back(p.size(), 0.0);
      double batch_loss = 0.0;
      for (std::size_t i = start; i < end; ++i) {
        batch_loss += accumulate(model, shapes, *train_set[order[i]], cfg.loss, scale, grads);
      }
      check_finite(batch_loss);
      epoch_loss += batch_loss;
      ++step;
      if (cfg.optimizer == OptimizerKind::Sgd) {
        for (std::size_t b = 0; b < params.size(); ++b)
          for (std::size_t i = 0; i < params[b].size(); ++i) params[b][i] -= cfg.learning_rate * grads[b][i];
      } else {
        const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
        const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
        for (std::size_t b = 0; b < params.size(); ++b) {
          for (std::size_t i = 0; i < params[b].size(); ++i) {
            const double gi = grads[b][i];
            m1[b][i] = cfg.beta1 * m1[b][i] + (1.0 - cfg.beta1) * gi;
            m2[b][i] = cfg.beta2 * m2[b][i] + (1.0 - cfg.beta2) * gi * gi;
            params[b][i] -= cfg.learning_rate * (m1[b][i] / c1) / (std::sqrt(m2[b][i] / c2) + cfg.epsilon);
          }
        }
      }
    }
    check_finite(epoch_loss);
    std::size_t correct = 0;
    for (const auto* ex : stop_set) {
      if (argmax(forward(model, ex->input)) == static_cast<std::size_t>(ex->label)) ++correct;
    }
    const double acc = stop_set.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(stop_set.size());
    result.history.push_back({epoch, epoch_loss / static_cast<double>(train_set.size()), acc});
    if (acc >= cfg.stop_accuracy) break;
  }
  result.model = std::move(model);
  return result;
}

double evaluate(const LayeredModel& model, std::span<const Example> examples) {
  if (examples.empty()) return 0.0;
  std::size_t correct = 0;
  for (const auto& ex : examples) {
    if (argmax(forward(model, ex.input)) == static_cast<std::size_t>(ex.label)) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(examples.size());
}

double evaluate(const LayeredModel& model, const LabeledDataset& data) { return evaluate(model, data.examples); }

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

std::string encode_doubles(std::span<const double> values) {
  ByteWriter w;
  for (double v : values) w.f64(v);
  return base64_encode(w.bytes());
}

std::vector<double> decode_doubles(const std::string& text) {
  const Bytes raw = base64_decode(text);
  if (raw.size() % 8 != 0) throw FormatError("weight blob is not a whole number of float64 values");
  ByteReader r(raw);
  std::vector<double> out(raw.size() / 8);
  for (auto& v : out) v = r.f64();
  return out;
}

nlohmann::json shape_to_json(const Shape& s) { return nlohmann::json::array({s.c, s.h, s.w}); }

Shape shape_from_json(const nlohmann::json& j) {
  return {j.at(0).get<std::size_t>(), j.at(1).get<std::size_t>(), j.at(2).get<std::size_t>()};
}

namespace {

const char* pool_kind_name(PoolKind k) {
  switch (k) {
    case PoolKind::Max: return "max";
    case PoolKind::Avg: return "avg";
    case PoolKind::Sum: return "sum";
  }
  return "?";
}

PoolKind pool_kind_from(const std::string& s) {
  if (s == "max") return PoolKind::Max;
  if (s == "avg") return PoolKind::Avg;
  if (s == "sum") return PoolKind::Sum;
  throw FormatError("unknown pool kind '" + s + "'");
}

}  // namespace

nlohmann::json to_json(const LayeredModel& model) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& layer : model.layers) {
    layers.push_back(std::visit(
        Overloaded{
            [](const Dense& d) -> nlohmann::json {
              return {{"type", "dense"}, {"in", d.in}, {"out", d.out},
                      {"weights", encode_doubles(d.weights)}, {"bias", encode_doubles(d.bias)}};
            },
            [](const Conv2d& c) -> nlohmann::json {
              return {{"type", "conv2d"}, {"in_c", c.in_c}, {"out_c", c.out_c}, {"kh", c.kh}, {"kw", c.kw},
                      {"weights", encode_doubles(c.weights)}, {"bias", encode_doubles(c.bias)}};
            },
            [](const Pool& p) -> nlohmann::json {
              return {{"type", "pool"}, {"kind", pool_kind_name(p.kind)}, {"window", p.window}};
            },
            [](const Activation& a) -> nlohmann::json {
              return {{"type", "activation"}, {"kind", a.kind == ActivationKind::Relu ? "relu" : "sigmoid"}};
            },
            [](const Flatten&) -> nlohmann::json { return {{"type", "flatten"}}; },
            [](const Softmax&) -> nlohmann::json { return {{"type", "softmax"}}; },
        },
        layer));
  }
  return {{"format", "chainlearn.model"}, {"version", 1}, {"input", shape_to_json(model.input)}, {"layers", layers}};
}

LayeredModel model_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "chainlearn.model") throw FormatError("not a chainlearn model document");
  if (j.value("version", 0) != 1) throw FormatError("unsupported model version");
  LayeredModel m;
  m.input = shape_from_json(j.at("input"));
  for (const auto& l : j.at("layers")) {
    const auto type = l.at("type").get<std::string>();
    if (type == "dense") {
      Dense d{l.at("in").get<std::size_t>(), l.at("out").get<std::size_t>(),
              decode_doubles(l.at("weights").get<std::string>()), decode_doubles(l.at("bias").get<std::string>())};
      m.layers.emplace_back(std::move(d));
    } else if (type == "conv2d") {
      Conv2d c{l.at("in_c").get<std::size_t>(), l.at("out_c").get<std::size_t>(), l.at("kh").get<std::size_t>(),
               l.at("kw").get<std::size_t>(), decode_doubles(l.at("weights").get<std::string>()),
               decode_doubles(l.at("bias").get<std::string>())};
      m.layers.emplace_back(std::move(c));
    } else if (type == "pool") {
      m.layers.emplace_back(Pool{pool_kind_from(l.at("kind").get<std::string>()), l.at("window").get<std::size_t>()});
    } else if (type == "activation") {
      const auto kind = l.at("kind").get<std::string>();
      if (kind != "relu" && kind != "sigmoid") throw FormatError("unknown activation '" + kind + "'");
      m.layers.emplace_back(Activation{kind == "relu" ? ActivationKind::Relu : ActivationKind::Sigmoid});
    } else if (type == "flatten") {
      m.layers.emplace_back(Flatten{});
    } else if (type == "softmax") {
      m.layers.emplace_back(Softmax{});
    } else {
      throw FormatError("unknown layer type '" + type + "'");
    }
  }
  m.validate();
  return m;
}

Bytes serialize(const LayeredModel& model) {
  const std::string text = to_json(model).dump();
  return {text.begin(), text.end()};
}

LayeredModel deserialize_model(std::span<const std::uint8_t> bytes) {
  return model_from_json(nlohmann::json::parse(bytes.begin(), bytes.end()));
}

}  // namespace chainlearn::nn
