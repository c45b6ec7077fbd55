#include "chainlearn/datasets.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numeric>

namespace chainlearn::data {

namespace {

struct Pt {
  double x, y;
};

using Stroke = std::vector<Pt>;

std::vector<Stroke> ellipse(double cx, double cy, double rx, double ry, int segments = 14) {
  Stroke s;
  for (int i = 0; i <= segments; ++i) {
    const double a = 2.0 * M_PI * i / segments;
    s.push_back({cx + rx * std::sin(a), cy - ry * std::cos(a)});
  }
  return {s};
}

// Stroke skeletons in a unit box, y pointing down.
std::vector<Stroke> glyph(int label) {
  switch (label) {
    case 0: return ellipse(0.5, 0.5, 0.21, 0.32);
    case 1: return {{{0.38, 0.30}, {0.52, 0.17}, {0.52, 0.83}}};
    case 2:
      return {{{0.30, 0.32}, {0.38, 0.20}, {0.50, 0.16}, {0.63, 0.20}, {0.70, 0.32}, {0.65, 0.46}, {0.30, 0.83},
               {0.73, 0.83}}};
    case 3:
      return {{{0.30, 0.20}, {0.58, 0.16}, {0.70, 0.28}, {0.63, 0.44}, {0.45, 0.50}, {0.64, 0.56}, {0.72, 0.69},
               {0.62, 0.82}, {0.30, 0.81}}};
    case 4: return {{{0.63, 0.83}, {0.63, 0.17}, {0.27, 0.60}, {0.76, 0.60}}};
    case 5:
      return {{{0.71, 0.17}, {0.34, 0.17}, {0.31, 0.47}, {0.55, 0.44}, {0.70, 0.57}, {0.69, 0.74}, {0.55, 0.84},
               {0.30, 0.80}}};
    case 6:
      return {{{0.66, 0.18}, {0.46, 0.28}, {0.34, 0.48}, {0.32, 0.70}, {0.45, 0.84}, {0.62, 0.81}, {0.69, 0.66},
               {0.59, 0.53}, {0.41, 0.53}, {0.33, 0.63}}};
    case 7: return {{{0.27, 0.17}, {0.73, 0.17}, {0.46, 0.84}}, {{0.40, 0.50}, {0.64, 0.50}}};
    case 8: {
      auto a = ellipse(0.5, 0.33, 0.16, 0.15);
      auto b = ellipse(0.5, 0.67, 0.20, 0.17);
      a.push_back(b.front());
      return a;
    }
    case 9: {
      auto a = ellipse(0.48, 0.35, 0.18, 0.17);
      a.push_back({{0.66, 0.36}, {0.60, 0.84}});
      return a;
    }
    default: throw ParameterError("render_digit: label must be 0..9");
  }
}

double segment_distance(Pt p, Pt a, Pt b) {
  const double vx = b.x - a.x, vy = b.y - a.y;
  const double len2 = vx * vx + vy * vy;
  double t = len2 > 0 ? ((p.x - a.x) * vx + (p.y - a.y) * vy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double dx = p.x - (a.x + t * vx), dy = p.y - (a.y + t * vy);
  return std::sqrt(dx * dx + dy * dy);
}

void read_be32(std::ifstream& in, std::uint32_t& v) {
  std::array<unsigned char, 4> b{};
  in.read(reinterpret_cast<char*>(b.data()), 4);
  if (!in) throw FormatError("IDX: truncated header");
  v = (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) | b[3];
}

void write_be32(std::ofstream& out, std::uint32_t v) {
  const std::array<char, 4> b{static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8),
                              static_cast<char>(v)};
  out.write(b.data(), 4);
}

}  // namespace

nn::Example render_digit(int label, Rng& rng) {
  constexpr std::size_t kSide = 28;
  auto strokes = glyph(label);

  // per-sample style
  const double angle = rng.uniform(-0.2, 0.2);
  const double scale = rng.uniform(0.85, 1.1);
  const double shear = rng.uniform(-0.2, 0.2);
  const double tx = rng.uniform(-1.0, 1.0);
  const double ty = rng.uniform(-1.0, 1.0);
  const double width = rng.uniform(1.1, 2.4);
  const double jitter = 0.035;
  const double noise = 0.12;

  const double ca = std::cos(angle), sa = std::sin(angle);
  for (auto& s : strokes) {
    for (auto& p : s) {
      double x = p.x - 0.5 + rng.normal(0.0, jitter);
      double y = p.y - 0.5 + rng.normal(0.0, jitter);
      x += shear * y;
      const double rx = (ca * x - sa * y) * scale;
      const double ry = (sa * x + ca * y) * scale;
      p = {rx * 22.0 + 14.0 + tx, ry * 22.0 + 14.0 + ty};
    }
  }
  // occasional stray mark
  if (rng.bernoulli(0.15)) {
    const Pt a{rng.uniform(2, 26), rng.uniform(2, 26)};
    const Pt b{a.x + rng.uniform(-6, 6), a.y + rng.uniform(-6, 6)};
    strokes.push_back({a, b});
  }

  nn::Example ex;
  ex.label = label;
  ex.input.assign(kSide * kSide, 0.0);
  for (std::size_t py = 0; py < kSide; ++py) {
    for (std::size_t px = 0; px < kSide; ++px) {
      const Pt p{static_cast<double>(px) + 0.5, static_cast<double>(py) + 0.5};
      double d = 1e9;
      for (const auto& s : strokes) {
        for (std::size_t i = 0; i + 1 < s.size(); ++i) d = std::min(d, segment_distance(p, s[i], s[i + 1]));
      }
      const double ink = std::clamp(1.0 - (d - width * 0.5), 0.0, 1.0);
      ex.input[py * kSide + px] = std::clamp(ink + rng.normal(0.0, noise), 0.0, 1.0);
    }
  }
  return ex;
}

nn::LabeledDataset synthetic_digits(std::size_t per_class, std::uint64_t seed) {
  nn::LabeledDataset ds;
  ds.shape = {1, 28, 28};
  ds.num_classes = 10;
  Rng rng(seed);
  for (std::size_t i = 0; i < per_class; ++i) {
    for (int label = 0; label < 10; ++label) ds.examples.push_back(render_digit(label, rng));
  }
  return ds;
}

nn::LabeledDataset gen_fading_data(std::uint64_t seed, std::size_t n_train, std::size_t n_test,
                                   const FadingParams& fp) {
  if (n_train < 1 || n_test < 1) throw ParameterError("gen_fading_data: counts must be >= 1");
  nn::LabeledDataset ds;
  ds.shape = {1, 1, fp.length};
  ds.num_classes = 2;
  Rng rng(seed);
  auto window = [&](int label) {
    nn::Example ex;
    ex.label = label;
    ex.input.resize(fp.length);
    const double innov = fp.shadow_sigma_db * std::sqrt(1.0 - fp.shadow_rho * fp.shadow_rho);
    double shadow = rng.normal(0.0, fp.shadow_sigma_db);
    const double offset = rng.normal(0.0, 2.0);
    std::vector<double> power(fp.length);
    for (std::size_t t = 0; t < fp.length; ++t) {
      shadow = fp.shadow_rho * shadow + rng.normal(0.0, innov);
      power[t] = fp.base_dbm + offset + shadow + rng.normal(0.0, fp.noise_sigma_db);
    }
    if (label == 1) {
      const auto len = static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(fp.fade_len_min),
                                                                static_cast<std::int64_t>(fp.fade_len_max)));
      const auto start = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(fp.length - len)));
      const double depth = rng.uniform(fp.fade_depth_min_db, fp.fade_depth_max_db);
      for (std::size_t k = 0; k < len; ++k) {
        // raised-cosine dip
        const double shape = 0.5 - 0.5 * std::cos(2.0 * M_PI * (static_cast<double>(k) + 0.5) / static_cast<double>(len));
        power[start + k] -= depth * shape;
      }
    }
    for (std::size_t t = 0; t < fp.length; ++t) ex.input[t] = (power[t] - fp.base_dbm) / fp.scale_db;
    return ex;
  };
  for (std::size_t i = 0; i < n_train; ++i) ds.append(window(static_cast<int>(i % 2)), nn::Split::Train);
  for (std::size_t i = 0; i < n_test; ++i) ds.append(window(static_cast<int>(i % 2)), nn::Split::Test);
  return ds;
}

nn::LabeledDataset ingest_idx(const std::filesystem::path& images, const std::filesystem::path& labels) {
  std::ifstream img(images, std::ios::binary);
  std::ifstream lab(labels, std::ios::binary);
  if (!img) throw NotFoundError("IDX: cannot open " + images.string());
  if (!lab) throw NotFoundError("IDX: cannot open " + labels.string());
  std::uint32_t magic, count, rows, cols, lmagic, lcount;
  read_be32(img, magic);
  if (magic != 0x00000803) throw FormatError("IDX: bad image magic");
  read_be32(img, count);
  read_be32(img, rows);
  read_be32(img, cols);
  read_be32(lab, lmagic);
  if (lmagic != 0x00000801) throw FormatError("IDX: bad label magic");
  read_be32(lab, lcount);
  if (count != lcount) throw FormatError("IDX: image and label counts differ");

  nn::LabeledDataset ds;
  ds.shape = {1, rows, cols};
  ds.num_classes = 10;
  std::vector<unsigned char> buf(static_cast<std::size_t>(rows) * cols);
  for (std::uint32_t i = 0; i < count; ++i) {
    img.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    char label = 0;
    lab.read(&label, 1);
    if (!img || !lab) throw FormatError("IDX: truncated data");
    nn::Example ex;
    ex.label = static_cast<unsigned char>(label);
    if (ex.label > 9) throw FormatError("IDX: label out of range");
    ex.input.resize(buf.size());
    for (std::size_t p = 0; p < buf.size(); ++p) ex.input[p] = buf[p] / 255.0;
    ds.examples.push_back(std::move(ex));
  }
  return ds;
}

void write_idx(const nn::LabeledDataset& data, const std::filesystem::path& images,
               const std::filesystem::path& labels) {
  std::ofstream img(images, std::ios::binary);
  std::ofstream lab(labels, std::ios::binary);
  if (!img || !lab) throw NotFoundError("IDX: cannot create output files");
  const auto n = static_cast<std::uint32_t>(data.size());
  write_be32(img, 0x00000803);
  write_be32(img, n);
  write_be32(img, static_cast<std::uint32_t>(data.shape.h));
  write_be32(img, static_cast<std::uint32_t>(data.shape.w * data.shape.c));
  write_be32(lab, 0x00000801);
  write_be32(lab, n);
  for (const auto& ex : data.examples) {
    for (double v : ex.input) {
      const auto b = static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
      img.put(static_cast<char>(b));
    }
    lab.put(static_cast<char>(ex.label));
  }
}

std::vector<nn::LabeledDataset> partition(const nn::LabeledDataset& pool, const std::vector<PartitionSpec>& specs,
                                          std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::vector<std::size_t>> by_label(static_cast<std::size_t>(pool.num_classes));
  for (std::size_t i = 0; i < pool.examples.size(); ++i) {
    by_label[static_cast<std::size_t>(pool.examples[i].label)].push_back(i);
  }
  for (auto& v : by_label) rng.shuffle(v);
  std::vector<std::size_t> cursor(by_label.size(), 0);

  std::vector<nn::LabeledDataset> out;
  for (std::size_t s = 0; s < specs.size(); ++s) {
    const auto& spec = specs[s];
    if (spec.labels.empty()) throw ConfigError("partition " + std::to_string(s) + ": empty label set");
    for (int l : spec.labels) {
      if (l < 0 || l >= pool.num_classes) throw ConfigError("partition " + std::to_string(s) + ": label out of range");
    }
    std::vector<double> weights = spec.weights;
    if (weights.empty()) weights.assign(spec.labels.size(), 1.0);
    if (weights.size() != spec.labels.size()) throw ConfigError("partition: weights/labels length mismatch");

    nn::LabeledDataset share{pool.shape, pool.num_classes, {}, {}};
    auto draw = [&](nn::Split split) {
      std::vector<double> w = weights;
      for (std::size_t k = 0; k < w.size(); ++k) {
        if (cursor[static_cast<std::size_t>(spec.labels[k])] >= by_label[static_cast<std::size_t>(spec.labels[k])].size()) w[k] = 0;
      }
      const double total = std::accumulate(w.begin(), w.end(), 0.0);
      if (total <= 0.0) {
        throw ConfigError("partition " + std::to_string(s) + ": pool exhausted for its label set");
      }
      double u = rng.uniform01() * total;
      std::size_t k = w.size();
      std::size_t last_live = 0;
      for (std::size_t i = 0; i < w.size(); ++i) {
        if (w[i] <= 0.0) continue;
        last_live = i;
        if (u < w[i]) {
          k = i;
          break;
        }
        u -= w[i];
      }
      if (k == w.size()) k = last_live;
      const auto label = static_cast<std::size_t>(spec.labels[k]);
      share.append(pool.examples[by_label[label][cursor[label]++]], split);
    };
    for (std::size_t i = 0; i < spec.n_train; ++i) draw(nn::Split::Train);
    for (std::size_t i = 0; i < spec.n_verify; ++i) draw(nn::Split::Verify);
    out.push_back(std::move(share));
  }
  return out;
}

Bytes serialize(const nn::LabeledDataset& data) {
  ByteWriter w;
  w.raw(as_bytes("CLDS"));
  w.u8(1);
  w.u32(static_cast<std::uint32_t>(data.shape.c));
  w.u32(static_cast<std::uint32_t>(data.shape.h));
  w.u32(static_cast<std::uint32_t>(data.shape.w));
  w.u32(static_cast<std::uint32_t>(data.num_classes));
  w.u64(data.examples.size());
  for (std::size_t i = 0; i < data.examples.size(); ++i) {
    const auto& ex = data.examples[i];
    if (ex.input.size() != data.shape.size()) throw ShapeError("dataset example does not match the dataset shape");
    w.u32(static_cast<std::uint32_t>(ex.label));
    w.u8(static_cast<std::uint8_t>(data.splits.empty() ? nn::Split::Train : data.splits[i]));
    for (double v : ex.input) w.f64(v);
  }
  return w.take();
}

nn::LabeledDataset deserialize_dataset(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  auto magic = r.raw(4);
  if (std::string(magic.begin(), magic.end()) != "CLDS") throw FormatError("not a dataset container");
  if (r.u8() != 1) throw FormatError("unsupported dataset container version");
  nn::LabeledDataset data;
  data.shape.c = r.u32();
  data.shape.h = r.u32();
  data.shape.w = r.u32();
  data.num_classes = static_cast<int>(r.u32());
  const std::uint64_t n = r.u64();
  const std::size_t per = data.shape.size();
  if (per == 0 || data.num_classes < 1) throw FormatError("dataset container: empty shape or no classes");
  if (n > r.remaining() / (5 + 8 * per)) throw FormatError("dataset container: truncated");
  for (std::uint64_t i = 0; i < n; ++i) {
    nn::Example ex;
    ex.label = static_cast<int>(r.u32());
    const auto split = r.u8();
    if (split > 2) throw FormatError("dataset container: bad split tag");
    if (ex.label < 0 || ex.label >= data.num_classes) throw FormatError("dataset container: label out of range");
    ex.input.resize(per);
    for (auto& v : ex.input) v = r.f64();
    data.append(std::move(ex), static_cast<nn::Split>(split));
  }
  if (!r.done()) throw FormatError("dataset container: trailing bytes");
  return data;
}

std::vector<std::size_t> label_counts(const nn::LabeledDataset& data) {
  std::vector<std::size_t> counts(static_cast<std::size_t>(data.num_classes), 0);
  for (const auto& ex : data.examples) ++counts[static_cast<std::size_t>(ex.label)];
  return counts;
}

}  // namespace chainlearn::data
