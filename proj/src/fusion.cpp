#include "chainlearn/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace chainlearn::fusion {

namespace {

void check_finite(double v) {
  if (!std::isfinite(v)) throw DivergenceError("fusion head training produced a non-finite loss");
}

FusionWeights blank(std::span<const std::size_t> feature_lengths, std::size_t d) {
  if (feature_lengths.empty()) throw ParameterError("fusion needs at least one model");
  if (d == 0) throw ParameterError("fusion needs at least one class");
  FusionWeights fw;
  fw.feature_spans = spans_from_lengths(feature_lengths);
  std::vector<std::size_t> label_lengths(feature_lengths.size(), d);
  fw.label_spans = spans_from_lengths(label_lengths);
  fw.f_len = fw.feature_spans.back().offset + fw.feature_spans.back().length;
  fw.h_len = d * feature_lengths.size();
  fw.d = d;
  fw.a.assign(fw.f_len * fw.h_len, 0.0);
  fw.b.assign(fw.h_len * d, 0.0);
  return fw;
}

}  // namespace

void FeatureSet::push(std::span<const double> f, int label) {
  if (labels.empty() && dim == 0) dim = f.size();
  if (f.size() != dim) throw ShapeError("feature row has " + std::to_string(f.size()) + " values, expected " +
                                        std::to_string(dim));
  x.insert(x.end(), f.begin(), f.end());
  labels.push_back(label);
}

std::vector<Span> spans_from_lengths(std::span<const std::size_t> lengths) {
  std::vector<Span> out;
  std::size_t off = 0;
  for (auto len : lengths) {
    out.push_back({off, len});
    off += len;
  }
  return out;
}

std::vector<double> FusionWeights::hidden(std::span<const double> f) const {
  if (f.size() != f_len) {
    throw ShapeError("fusion head expects " + std::to_string(f_len) + " features, got " + std::to_string(f.size()));
  }
  std::vector<double> h(h_len, 0.0);
  for (std::size_t i = 0; i < f_len; ++i) {
    const double fi = f[i];
    if (fi == 0.0) continue;
    const double* row = a.data() + i * h_len;
    for (std::size_t j = 0; j < h_len; ++j) h[j] += row[j] * fi;
  }
  return h;
}

std::vector<double> FusionWeights::scores(std::span<const double> f) const {
  const auto h = hidden(f);
  std::vector<double> z(d, 0.0);
  for (std::size_t j = 0; j < h_len; ++j) {
    const double* row = b.data() + j * d;
    for (std::size_t k = 0; k < d; ++k) z[k] += row[k] * h[j];
  }
  return nn::softmax(z);
}

bool FusionWeights::a_in_block(std::size_t i, std::size_t j) const {
  for (std::size_t m = 0; m < feature_spans.size(); ++m) {
    const auto& fs = feature_spans[m];
    if (i >= fs.offset && i < fs.offset + fs.length) {
      const auto& ls = label_spans[m];
      return j >= ls.offset && j < ls.offset + ls.length;
    }
  }
  return false;
}

bool FusionWeights::b_on_identity(std::size_t j, std::size_t k) const { return j % d == k; }

FusionWeights init_strategy1(std::span<const std::size_t> feature_lengths, std::size_t d, std::uint64_t seed) {
  FusionWeights fw = blank(feature_lengths, d);
  Rng rng(seed);
  const double la = std::sqrt(6.0 / static_cast<double>(fw.f_len + fw.h_len));
  const double lb = std::sqrt(6.0 / static_cast<double>(fw.h_len + d));
  for (auto& v : fw.a) v = rng.uniform(-la, la);
  for (auto& v : fw.b) v = rng.uniform(-lb, lb);
  return fw;
}

FusionWeights init_strategy2(std::span<const std::size_t> feature_lengths, std::size_t d, std::uint64_t seed) {
  FusionWeights fw = blank(feature_lengths, d);
  Rng rng(seed);
  for (std::size_t m = 0; m < fw.feature_spans.size(); ++m) {
    const auto& fs = fw.feature_spans[m];
    const auto& ls = fw.label_spans[m];
    const double lim = std::sqrt(6.0 / static_cast<double>(fs.length + ls.length));
    for (std::size_t i = fs.offset; i < fs.offset + fs.length; ++i) {
      for (std::size_t j = ls.offset; j < ls.offset + ls.length; ++j) fw.a[i * fw.h_len + j] = rng.uniform(-lim, lim);
    }
  }
  for (std::size_t j = 0; j < fw.h_len; ++j) fw.b[j * d + j % d] = 1.0;
  fw.gamma = 0;
  return fw;
}

HeadGradients head_gradients(const FusionWeights& fw, const FeatureSet& data, std::span<const std::size_t> rows) {
  HeadGradients g{std::vector<double>(fw.a.size(), 0.0), std::vector<double>(fw.b.size(), 0.0), 0.0};
  if (rows.empty()) return g;
  const double scale = 1.0 / static_cast<double>(rows.size());
  std::vector<double> dh(fw.h_len);
  for (auto r : rows) {
    const auto f = data.row(r);
    const auto h = fw.hidden(f);
    std::vector<double> z(fw.d, 0.0);
    for (std::size_t j = 0; j < fw.h_len; ++j) {
      for (std::size_t k = 0; k < fw.d; ++k) z[k] += fw.b[j * fw.d + k] * h[j];
    }
    auto p = nn::softmax(z);
    const auto label = static_cast<std::size_t>(data.labels[r]);
    if (label >= fw.d) throw ShapeError("label " + std::to_string(label) + " outside the fusion head");
    g.loss -= std::log(std::max(p[label], 1e-300)) * scale;
    p[label] -= 1.0;
    for (std::size_t j = 0; j < fw.h_len; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < fw.d; ++k) {
        g.b[j * fw.d + k] += h[j] * p[k] * scale;
        acc += fw.b[j * fw.d + k] * p[k];
      }
      dh[j] = acc * scale;
    }
    for (std::size_t i = 0; i < fw.f_len; ++i) {
      const double fi = f[i];
      if (fi == 0.0) continue;
      double* row = g.a.data() + i * fw.h_len;
      for (std::size_t j = 0; j < fw.h_len; ++j) row[j] += fi * dh[j];
    }
  }
  return g;
}

void train_head(FusionWeights& fw, const FeatureSet& data, const nn::TrainConfig& cfg, std::size_t epochs,
                HeadSelection* selection) {
  if (epochs == 0) return;
  if (data.size() == 0) throw ParameterError("fusion head: no training examples");
  if (data.dim != fw.f_len) throw ShapeError("fusion head: feature width does not match the head");
  if (!(cfg.learning_rate > 0.0)) throw ParameterError("fusion head: learning rate must be positive");

  // Trainable index lists; under gamma = 0 only the block entries.
  std::vector<std::size_t> a_idx, b_idx;
  for (std::size_t i = 0; i < fw.f_len; ++i) {
    for (std::size_t j = 0; j < fw.h_len; ++j) {
      if (fw.gamma == 1 || fw.a_in_block(i, j)) a_idx.push_back(i * fw.h_len + j);
    }
  }
  for (std::size_t j = 0; j < fw.h_len; ++j) {
    for (std::size_t k = 0; k < fw.d; ++k) {
      if (fw.gamma == 1 || fw.b_on_identity(j, k)) b_idx.push_back(j * fw.d + k);
    }
  }

  std::vector<double> ma(fw.a.size(), 0.0), va(fw.a.size(), 0.0), mb(fw.b.size(), 0.0), vb(fw.b.size(), 0.0);
  const std::size_t batch = std::max<std::size_t>(1, std::min(cfg.batch_size, data.size()));
  Rng rng(cfg.seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t step = 0;

  const auto update = [&](std::vector<double>& p, const std::vector<double>& g, std::vector<double>& m,
                          std::vector<double>& v, const std::vector<std::size_t>& idx) {
    if (cfg.optimizer == nn::OptimizerKind::Sgd) {
      for (auto i : idx) p[i] -= cfg.learning_rate * g[i];
      return;
    }
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
    for (auto i : idx) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      p[i] -= cfg.learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg.epsilon);
    }
  };

  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t end = std::min(order.size(), start + batch);
      const auto g = head_gradients(fw, data, std::span<const std::size_t>(order).subspan(start, end - start));
      check_finite(g.loss);
      ++step;
      update(fw.a, g.a, ma, va, a_idx);
      update(fw.b, g.b, mb, vb, b_idx);
    }
    if (selection != nullptr && selection->holdout != nullptr) {
      ++selection->epochs_seen;
      const double acc = head_accuracy(fw, *selection->holdout);
      if (acc > selection->best_accuracy) {
        selection->best_accuracy = acc;
        selection->best_epoch = selection->epochs_seen;
        selection->best = fw;
      }
    }
  }
}

double head_accuracy(const FusionWeights& fw, const FeatureSet& data) {
  if (data.size() == 0) return 0.0;
  std::size_t correct = 0;
  for (std::size_t r = 0; r < data.size(); ++r) {
    if (nn::argmax(fw.scores(data.row(r))) == static_cast<std::size_t>(data.labels[r])) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

// ---------------------------------------------------------------------------

std::string strategy_name(Strategy s) { return s == Strategy::I ? "I" : "II"; }

Strategy strategy_from(const std::string& s) {
  if (s == "I" || s == "1") return Strategy::I;
  if (s == "II" || s == "2") return Strategy::II;
  throw ConfigError("unknown fusion strategy '" + s + "'");
}

std::vector<double> concat_features(std::span<const nn::LayeredModel> models, std::span<const double> input) {
  std::vector<double> out;
  for (const auto& m : models) {
    const auto f = nn::feature_vector(m, input);
    out.insert(out.end(), f.begin(), f.end());
  }
  return out;
}

std::vector<double> MetaModel::scores(std::span<const double> input) const {
  return head.scores(concat_features(models, input));
}

FeatureSet extract_features(std::span<const nn::LayeredModel> models, const nn::LabeledDataset& data) {
  FeatureSet fs;
  for (const auto& m : models) fs.dim += m.feature_length();
  fs.x.reserve(fs.dim * data.size());
  for (const auto& ex : data.examples) fs.push(concat_features(models, ex.input), ex.label);
  return fs;
}

namespace {

std::vector<std::size_t> feature_lengths(std::span<const nn::LayeredModel> models) {
  std::vector<std::size_t> out;
  for (const auto& m : models) out.push_back(m.feature_length());
  return out;
}

struct HeadData {
  FeatureSet train, holdout;
  bool select = false;
  std::vector<double> column_scale;  // 1 / RMS of each training column
};

// Training runs on RMS-normalized columns; folding the scales into the rows
// of A afterwards gives the same h = A^T f on raw features.
void normalize_columns(HeadData& hd) {
  const std::size_t dim = hd.train.dim;
  std::vector<double> ss(dim, 0.0);
  for (std::size_t r = 0; r < hd.train.size(); ++r) {
    const auto row = hd.train.row(r);
    for (std::size_t i = 0; i < dim; ++i) ss[i] += row[i] * row[i];
  }
  hd.column_scale.assign(dim, 1.0);
  for (std::size_t i = 0; i < dim; ++i) {
    const double rms = std::sqrt(ss[i] / static_cast<double>(std::max<std::size_t>(1, hd.train.size())));
    if (rms > 1e-12) hd.column_scale[i] = 1.0 / rms;
  }
  for (auto* fs : {&hd.train, &hd.holdout}) {
    for (std::size_t k = 0; k < fs->x.size(); ++k) fs->x[k] *= hd.column_scale[k % dim];
  }
}

void fold_scales(FusionWeights& fw, std::span<const double> scale) {
  for (std::size_t i = 0; i < fw.f_len; ++i) {
    for (std::size_t j = 0; j < fw.h_len; ++j) fw.a[i * fw.h_len + j] *= scale[i];
  }
}

HeadData head_data(std::span<const nn::LayeredModel> models, const nn::LabeledDataset& data) {
  HeadData hd;
  const auto holdout = data.subset(nn::Split::Verify);
  if (holdout.size() == 0) {
    hd.train = extract_features(models, data);
    normalize_columns(hd);
    return hd;
  }
  hd.train = extract_features(models, data.subset(nn::Split::Train));
  hd.holdout = extract_features(models, holdout);
  hd.select = hd.train.size() > 0;
  if (!hd.select) hd.train = extract_features(models, data);
  normalize_columns(hd);
  return hd;
}

void check_models(std::span<const nn::LayeredModel> models, const nn::LabeledDataset& data) {
  if (models.empty()) throw ParameterError("fusion needs at least one model");
  for (const auto& m : models) {
    if (!(m.input == data.shape)) throw ShapeError("fusion: model input shape differs from the data shape");
  }
}

}  // namespace

MetaModel fuse_strategy1(std::span<const nn::LayeredModel> models, const nn::LabeledDataset& data,
                         const nn::TrainConfig& cfg) {
  check_models(models, data);
  MetaModel meta;
  meta.models.assign(models.begin(), models.end());
  meta.strategy = Strategy::I;
  meta.head = init_strategy1(feature_lengths(models), static_cast<std::size_t>(data.num_classes), cfg.seed);
  const auto hd = head_data(models, data);
  HeadSelection sel;
  if (hd.select) sel.holdout = &hd.holdout;
  train_head(meta.head, hd.train, cfg, cfg.max_epochs, &sel);
  if (sel.best_epoch > 0) meta.head = sel.best;
  fold_scales(meta.head, hd.column_scale);
  return meta;
}

MetaModel fuse_strategy2(std::span<const nn::LayeredModel> models, const nn::LabeledDataset& data,
                         const nn::TrainConfig& cfg, std::size_t e0, std::size_t e1) {
  check_models(models, data);
  MetaModel meta;
  meta.models.assign(models.begin(), models.end());
  meta.strategy = Strategy::II;
  meta.head = init_strategy2(feature_lengths(models), static_cast<std::size_t>(data.num_classes), cfg.seed);
  const auto hd = head_data(models, data);
  HeadSelection sel;
  if (hd.select) sel.holdout = &hd.holdout;
  meta.head.gamma = 0;
  train_head(meta.head, hd.train, cfg, e0, &sel);
  meta.head.gamma = 1;
  nn::TrainConfig second = cfg;
  second.seed = Rng::derive(cfg.seed, 1);
  train_head(meta.head, hd.train, second, e1, &sel);
  if (sel.best_epoch > 0) meta.head = sel.best;
  fold_scales(meta.head, hd.column_scale);
  return meta;
}

double evaluate(const MetaModel& meta, const nn::LabeledDataset& data) {
  if (data.size() == 0) return 0.0;
  std::size_t correct = 0;
  for (const auto& ex : data.examples) {
    if (nn::argmax(meta.scores(ex.input)) == static_cast<std::size_t>(ex.label)) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

// ---------------------------------------------------------------------------

FedAvgResult fedavg_baseline(std::span<const nn::LabeledDataset> local_datasets, const nn::LayeredModel& arch,
                             std::size_t rounds, std::size_t local_epochs, const nn::TrainConfig& cfg,
                             const nn::LabeledDataset* monitor) {
  if (local_datasets.empty()) throw ParameterError("fedavg: no contributors");
  FedAvgResult result;
  result.model = arch;
  result.model.validate();
  const std::uint64_t model_bytes = static_cast<std::uint64_t>(arch.parameter_count()) * 8;

  for (std::size_t round = 0; round < rounds; ++round) {
    std::vector<nn::LayeredModel> locals;
    for (std::size_t c = 0; c < local_datasets.size(); ++c) {
      nn::TrainConfig local = cfg;
      local.max_epochs = local_epochs;
      local.stop_accuracy = 1.1;
      local.seed = Rng::derive(cfg.seed, round * 1000003 + c);
      locals.push_back(nn::train(result.model, local_datasets[c], local).model);
      result.bytes_transferred += 2 * model_bytes;  // broadcast down, weights up
    }
    auto global = parameters(result.model);
    const double inv = 1.0 / static_cast<double>(locals.size());
    for (std::size_t b = 0; b < global.size(); ++b) {
      for (std::size_t i = 0; i < global[b].size(); ++i) {
        double s = 0.0;
        for (const auto& m : locals) s += parameters(m)[b][i];
        global[b][i] = s * inv;
      }
    }
    if (monitor != nullptr) result.round_accuracy.push_back(nn::evaluate(result.model, *monitor));
  }
  return result;
}

// ---------------------------------------------------------------------------

nlohmann::json to_json(const FusionWeights& fw) {
  const auto spans = [](const std::vector<Span>& v) {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& s : v) out.push_back({s.offset, s.length});
    return out;
  };
  return {{"f_len", fw.f_len},
          {"h_len", fw.h_len},
          {"d", fw.d},
          {"gamma", fw.gamma},
          {"a", nn::encode_doubles(fw.a)},
          {"b", nn::encode_doubles(fw.b)},
          {"feature_spans", spans(fw.feature_spans)},
          {"label_spans", spans(fw.label_spans)}};
}

FusionWeights fusion_weights_from_json(const nlohmann::json& j) {
  FusionWeights fw;
  fw.f_len = j.at("f_len").get<std::size_t>();
  fw.h_len = j.at("h_len").get<std::size_t>();
  fw.d = j.at("d").get<std::size_t>();
  fw.gamma = j.at("gamma").get<int>();
  fw.a = nn::decode_doubles(j.at("a").get<std::string>());
  fw.b = nn::decode_doubles(j.at("b").get<std::string>());
  for (const auto& s : j.at("feature_spans")) fw.feature_spans.push_back({s.at(0).get<std::size_t>(), s.at(1).get<std::size_t>()});
  for (const auto& s : j.at("label_spans")) fw.label_spans.push_back({s.at(0).get<std::size_t>(), s.at(1).get<std::size_t>()});
  if (fw.a.size() != fw.f_len * fw.h_len || fw.b.size() != fw.h_len * fw.d) {
    throw FormatError("fusion weights: matrix sizes do not match the declared dimensions");
  }
  return fw;
}

nlohmann::json to_manifest(const MetaModel& meta) {
  if (meta.model_refs.size() != meta.models.size()) {
    throw ParameterError("metamodel manifest needs a content ref for every private model");
  }
  return {{"format", "chainlearn.metamodel-manifest"},
          {"version", 1},
          {"strategy", strategy_name(meta.strategy)},
          {"models", meta.model_refs},
          {"head", to_json(meta.head)}};
}

MetaModel from_manifest(const nlohmann::json& j,
                        const std::function<nn::LayeredModel(const std::string& ref)>& fetch) {
  if (j.value("format", "") != "chainlearn.metamodel-manifest") throw FormatError("not a metamodel manifest");
  if (j.value("version", 0) != 1) throw FormatError("unsupported manifest version");
  MetaModel meta;
  meta.strategy = strategy_from(j.at("strategy").get<std::string>());
  meta.model_refs = j.at("models").get<std::vector<std::string>>();
  for (const auto& ref : meta.model_refs) meta.models.push_back(fetch(ref));
  meta.head = fusion_weights_from_json(j.at("head"));
  std::size_t total = 0;
  for (const auto& m : meta.models) total += m.feature_length();
  if (total != meta.head.f_len) throw FormatError("manifest head width does not match the listed models");
  return meta;
}

}  // namespace chainlearn::fusion
