#include "chainlearn/ivhe.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace chainlearn::ivhe {

namespace {

constexpr char kMagic[4] = {'I', 'V', 'H', 'E'};

void write_header(ByteWriter& out, ContainerKind kind) {
  out.raw(as_bytes(std::string_view(kMagic, 4)));
  out.u8(kContainerVersion);
  out.u8(static_cast<std::uint8_t>(kind));
}

void read_header(ByteReader& in, ContainerKind expected) {
  auto magic = in.raw(4);
  if (std::memcmp(magic.data(), kMagic, 4) != 0) throw FormatError("bad IVHE magic");
  if (in.u8() != kContainerVersion) throw FormatError("unsupported IVHE container version");
  if (in.u8() != static_cast<std::uint8_t>(expected)) throw FormatError("unexpected IVHE container kind");
}

void write_matrix(ByteWriter& out, const IntMatrix& m) {
  out.u32(static_cast<std::uint32_t>(m.rows));
  out.u32(static_cast<std::uint32_t>(m.cols));
  for (auto v : m.data) out.i64(v);
}

IntMatrix read_matrix(ByteReader& in) {
  IntMatrix m;
  m.rows = in.u32();
  m.cols = in.u32();
  if (m.rows * m.cols * 8 > in.remaining()) throw FormatError("matrix larger than container");
  m.data.resize(m.rows * m.cols);
  for (auto& v : m.data) v = in.i64();
  return m;
}

void write_params(ByteWriter& out, const HEParams& p) {
  out.u32(static_cast<std::uint32_t>(p.n));
  out.i64(p.w);
  out.u32(static_cast<std::uint32_t>(p.l));
  out.i64(p.a_bound);
  out.i64(p.e_bound);
  out.i64(p.t_bound);
  out.u8(static_cast<std::uint8_t>((p.non_negative ? 1 : 0) | (p.uniform_secret ? 2 : 0)));
}

HEParams read_params(ByteReader& in) {
  HEParams p;
  p.n = in.u32();
  p.w = in.i64();
  p.l = static_cast<int>(in.u32());
  p.a_bound = in.i64();
  p.e_bound = in.i64();
  p.t_bound = in.i64();
  const auto flags = in.u8();
  p.non_negative = (flags & 1) != 0;
  p.uniform_secret = (flags & 2) != 0;
  return p;
}

void require_compatible(const Ciphertext& a, const Ciphertext& b) {
  if (a.key_id != b.key_id) throw IncompatibleError("ciphertexts under different keys");
  if (a.scales != b.scales) throw IncompatibleError("ciphertexts carry different scale ledgers");
  if (a.digits.size() != b.digits.size()) throw IncompatibleError("ciphertext length mismatch");
}

}  // namespace

IntMatrix IntMatrix::identity(std::size_t n) {
  IntMatrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1;
  return m;
}

std::vector<std::int64_t> matvec(const IntMatrix& m, std::span<const std::int64_t> v) {
  if (m.cols != v.size()) throw ShapeError("matvec: matrix has " + std::to_string(m.cols) +
                                           " columns, vector has " + std::to_string(v.size()));
  std::vector<std::int64_t> out(m.rows, 0);
  for (std::size_t r = 0; r < m.rows; ++r) {
    std::int64_t acc = 0;
    for (std::size_t c = 0; c < m.cols; ++c) {
      if (v[c] == 0) continue;
      acc = checked_add(acc, checked_mul(m(r, c), v[c]));
    }
    out[r] = acc;
  }
  return out;
}

void HEParams::validate() const {
  if (n < 1) throw ParameterError("HE params: n must be >= 1");
  if (w < 2) throw ParameterError("HE params: w must be >= 2");
  if (l < 1) throw ParameterError("HE params: l must be >= 1");
  if (l > 62) throw ParameterError("HE params: l must be <= 62 for 64-bit digits");
  if (a_bound < 0 || e_bound < 0 || t_bound < 0) throw ParameterError("HE params: bounds must be >= 0");
  if (non_negative && t_bound < 1) throw ParameterError("HE params: non-negative keys need t_bound >= 1");
}

std::int64_t HEParams::fresh_noise_bound() const {
  return checked_mul(checked_mul(e_bound, static_cast<std::int64_t>(n)), l);
}

void to_json(nlohmann::json& j, const HEParams& p) {
  j = nlohmann::json{{"n", p.n},
                     {"w", p.w},
                     {"l", p.l},
                     {"a_bound", p.a_bound},
                     {"e_bound", p.e_bound},
                     {"t_bound", p.t_bound},
                     {"non_negative", p.non_negative},
                     {"uniform_secret", p.uniform_secret}};
}

void from_json(const nlohmann::json& j, HEParams& p) {
  p.n = j.at("n").get<std::size_t>();
  p.w = j.at("w").get<std::int64_t>();
  p.l = j.at("l").get<int>();
  p.a_bound = j.at("a_bound").get<std::int64_t>();
  p.e_bound = j.at("e_bound").get<std::int64_t>();
  p.t_bound = j.at("t_bound").get<std::int64_t>();
  p.non_negative = j.at("non_negative").get<bool>();
  p.uniform_secret = j.value("uniform_secret", false);
}

SecretKey SecretKey::identity(std::size_t n) { return SecretKey{IntMatrix::identity(n), {}}; }

std::string SwitchKey::id() const { return sha256_hex(serialize(*this)); }

SwitchKey make_switch_key(const HEParams& params, std::span<const std::int64_t> t,
                          const IntMatrix& a, const IntMatrix& e) {
  params.validate();
  const std::size_t n = params.n;
  const std::size_t nl = n * static_cast<std::size_t>(params.l);
  if (t.size() != n) throw ShapeError("switch key: T must have length n");
  if (a.rows != 1 || a.cols != nl) throw ShapeError("switch key: A must be 1 x n*l");
  if (e.rows != n || e.cols != nl) throw ShapeError("switch key: E must be n x n*l");

  const IntMatrix s_star = star_expand(IntMatrix::identity(n), params.l);
  SwitchKey key;
  key.params = params;
  key.m = IntMatrix(n + 1, nl);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < nl; ++j) {
      key.m(i, j) = checked_add(checked_add(s_star(i, j), -checked_mul(t[i], a(0, j))), e(i, j));
    }
  }
  for (std::size_t j = 0; j < nl; ++j) key.m(n, j) = a(0, j);
  if (params.non_negative &&
      std::any_of(key.m.data.begin(), key.m.data.end(), [](std::int64_t v) { return v < 0; })) {
    throw ParameterError("switch key: non-negative mode produced a negative entry in M");
  }
  return key;
}

KeyMaterial gen_keys(const HEParams& params, std::uint64_t seed) {
  params.validate();
  Rng rng(seed);
  const std::size_t n = params.n;
  const auto l = static_cast<std::size_t>(params.l);
  const std::size_t nl = n * l;

  std::vector<std::int64_t> t(n);
  // t = 0 leaves lane 2 unkeyed and lane 1 alone reveals the plaintext.
  const std::int64_t t_lo = params.non_negative ? 1 : -params.t_bound;
  if (params.uniform_secret) {
    std::fill(t.begin(), t.end(), rng.uniform_int(t_lo, params.t_bound));
  } else {
    for (auto& v : t) v = rng.uniform_int(t_lo, params.t_bound);
  }

  KeyWitness witness{IntMatrix(1, nl), IntMatrix(n, nl)};
  for (std::size_t j = 0; j < nl; ++j) {
    if (!params.non_negative) {
      witness.a(0, j) = rng.uniform_int(-params.a_bound, params.a_bound);
      continue;
    }
    // Keep S* - T*A >= 0 in every row: column j only carries 2^(l-1-k) in its own block row.
    const std::size_t block = j / l;
    const std::int64_t power = std::int64_t{1} << (l - 1 - j % l);
    std::int64_t cap = params.a_bound;
    for (std::size_t i = 0; i < n; ++i) {
      if (t[i] <= 0) continue;
      cap = std::min(cap, i == block ? power / t[i] : std::int64_t{0});
    }
    witness.a(0, j) = rng.uniform_int(0, cap);
  }
  const std::int64_t e_lo = params.non_negative ? 0 : -params.e_bound;
  for (auto& v : witness.e.data) v = rng.uniform_int(e_lo, params.e_bound);

  SecretKey sk;
  sk.t = t;
  sk.s = IntMatrix(n, n + 1);
  for (std::size_t i = 0; i < n; ++i) {
    sk.s(i, i) = 1;
    sk.s(i, n) = t[i];
  }
  SwitchKey key = make_switch_key(params, t, witness.a, witness.e);
  return KeyMaterial{std::move(sk), std::move(key), std::move(witness)};
}

bool self_consistent(const SwitchKey& key, const SecretKey& sk, const KeyWitness& witness) {
  const std::size_t n = key.params.n;
  if (key.m.rows != n + 1 || key.m.cols != n * static_cast<std::size_t>(key.params.l)) return false;
  try {
    return make_switch_key(key.params, sk.t, witness.a, witness.e).m == key.m;
  } catch (const Error&) {
    return false;
  }
}

std::vector<std::int64_t> bit_decompose(std::span<const std::int64_t> c, int l) {
  if (l < 1 || l > 62) throw ParameterError("bit_decompose: l out of range");
  const std::int64_t limit = std::int64_t{1} << l;
  std::vector<std::int64_t> out(c.size() * static_cast<std::size_t>(l), 0);
  for (std::size_t i = 0; i < c.size(); ++i) {
    const std::int64_t v = c[i];
    if (v <= -limit || v >= limit) {
      throw OverflowError("bit_decompose: |c[" + std::to_string(i) + "]| = " + std::to_string(v) +
                          " does not fit in " + std::to_string(l) + " bits");
    }
    const std::int64_t sign = v < 0 ? -1 : 1;
    const std::uint64_t mag = static_cast<std::uint64_t>(v < 0 ? -v : v);
    for (int b = 0; b < l; ++b) {
      const std::uint64_t bit = (mag >> (l - 1 - b)) & 1U;
      out[i * static_cast<std::size_t>(l) + static_cast<std::size_t>(b)] = bit ? sign : 0;
    }
  }
  return out;
}

IntMatrix star_expand(const IntMatrix& s, int l) {
  if (l < 1 || l > 62) throw ParameterError("star_expand: l out of range");
  const auto lz = static_cast<std::size_t>(l);
  IntMatrix out(s.rows, s.cols * lz);
  for (std::size_t r = 0; r < s.rows; ++r) {
    for (std::size_t c = 0; c < s.cols; ++c) {
      for (std::size_t b = 0; b < lz; ++b) {
        out(r, c * lz + b) = checked_mul(s(r, c), std::int64_t{1} << (lz - 1 - b));
      }
    }
  }
  return out;
}

std::int64_t Ciphertext::total_scale() const {
  std::int64_t s = 1;
  for (auto f : scales) s = checked_mul(s, f);
  return s;
}

std::vector<std::int64_t> encrypt_digits(std::span<const std::int64_t> x, const SwitchKey& key) {
  const HEParams& p = key.params;
  if (x.size() != p.n) throw ShapeError("encrypt: plaintext length " + std::to_string(x.size()) +
                                        " does not match key length " + std::to_string(p.n));
  std::vector<std::int64_t> c(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) c[i] = checked_mul(p.w, x[i]);
  return matvec(key.m, bit_decompose(c, p.l));
}

Ciphertext encrypt(std::span<const std::int64_t> x, const SwitchKey& key) {
  Ciphertext out;
  out.digits = encrypt_digits(x, key);
  out.key_id = key.id();
  out.noise_bound = key.params.fresh_noise_bound();
  return out;
}

std::vector<std::int64_t> decrypt(std::span<const std::int64_t> digits, const SecretKey& sk,
                                  const HEParams& params) {
  if (sk.s.cols != digits.size()) {
    throw ShapeError("decrypt: key expects ciphertext length " + std::to_string(sk.s.cols) +
                     ", got " + std::to_string(digits.size()));
  }
  auto sc = matvec(sk.s, digits);
  for (auto& v : sc) v = div_round_half_away(v, params.w);
  return sc;
}

std::vector<std::int64_t> decrypt(const Ciphertext& c, const SecretKey& sk, const HEParams& params) {
  return decrypt(std::span<const std::int64_t>(c.digits), sk, params);
}

std::vector<double> decrypt_scaled(const Ciphertext& c, const SecretKey& sk, const HEParams& params) {
  const auto x = decrypt(c, sk, params);
  const double scale = static_cast<double>(c.total_scale());
  if (scale == 0.0) throw ParameterError("decrypt_scaled: zero scale");
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = static_cast<double>(x[i]) / scale;
  return out;
}

Ciphertext he_add(const Ciphertext& a, const Ciphertext& b, const HEParams& params) {
  require_compatible(a, b);
  Ciphertext out;
  out.key_id = a.key_id;
  out.scales = a.scales;
  out.noise_bound = checked_add(a.noise_bound, b.noise_bound);
  if (2 * out.noise_bound >= params.w) throw BudgetError("he_add: noise bound reaches w/2");
  out.digits.resize(a.digits.size());
  for (std::size_t i = 0; i < a.digits.size(); ++i) out.digits[i] = checked_add(a.digits[i], b.digits[i]);
  return out;
}

Ciphertext he_weighted_sum(std::span<const std::int64_t> weights, std::span<const Ciphertext> cts,
                           const HEParams& params, std::optional<std::int64_t> declared_scale) {
  if (cts.empty()) throw ParameterError("he_weighted_sum: no ciphertexts");
  if (weights.size() != cts.size()) throw ShapeError("he_weighted_sum: weight/ciphertext count mismatch");
  for (std::size_t i = 1; i < cts.size(); ++i) require_compatible(cts[0], cts[i]);

  std::int64_t noise = 0;
  for (std::size_t i = 0; i < cts.size(); ++i) {
    noise = checked_add(noise, checked_mul(weights[i] < 0 ? -weights[i] : weights[i], cts[i].noise_bound));
  }
  if (2 * noise >= params.w) {
    throw BudgetError("he_weighted_sum: worst-case noise " + std::to_string(noise) +
                      " reaches w/2 = " + std::to_string(params.w / 2));
  }

  Ciphertext out;
  out.key_id = cts[0].key_id;
  out.scales = cts[0].scales;
  if (declared_scale) out.scales.push_back(*declared_scale);
  out.noise_bound = noise;
  out.digits.assign(cts[0].digits.size(), 0);
  for (std::size_t i = 0; i < cts.size(); ++i) {
    if (weights[i] == 0) continue;
    for (std::size_t d = 0; d < out.digits.size(); ++d) {
      out.digits[d] = checked_add(out.digits[d], checked_mul(weights[i], cts[i].digits[d]));
    }
  }
  return out;
}

Bytes serialize(const Ciphertext& c) {
  ByteWriter out;
  write_header(out, ContainerKind::Ciphertext);
  out.u32(static_cast<std::uint32_t>(c.digits.size()));
  for (auto v : c.digits) out.i64(v);
  out.str(c.key_id);
  out.u32(static_cast<std::uint32_t>(c.scales.size()));
  for (auto v : c.scales) out.i64(v);
  out.i64(c.noise_bound);
  return out.take();
}

Bytes serialize(const SwitchKey& k) {
  ByteWriter out;
  write_header(out, ContainerKind::SwitchKey);
  write_params(out, k.params);
  write_matrix(out, k.m);
  out.str(k.source);
  out.str(k.target);
  return out.take();
}

Bytes serialize(const SecretKey& k) {
  ByteWriter out;
  write_header(out, ContainerKind::SecretKey);
  write_matrix(out, k.s);
  out.u32(static_cast<std::uint32_t>(k.t.size()));
  for (auto v : k.t) out.i64(v);
  return out.take();
}

Ciphertext deserialize_ciphertext(std::span<const std::uint8_t> bytes) {
  ByteReader in(bytes);
  read_header(in, ContainerKind::Ciphertext);
  Ciphertext c;
  const auto n = in.u32();
  if (static_cast<std::size_t>(n) * 8 > in.remaining()) throw FormatError("ciphertext larger than container");
  c.digits.resize(n);
  for (auto& v : c.digits) v = in.i64();
  c.key_id = in.str();
  c.scales.resize(in.u32());
  for (auto& v : c.scales) v = in.i64();
  c.noise_bound = in.i64();
  if (!in.done()) throw FormatError("trailing bytes after ciphertext");
  return c;
}

SwitchKey deserialize_switch_key(std::span<const std::uint8_t> bytes) {
  ByteReader in(bytes);
  read_header(in, ContainerKind::SwitchKey);
  SwitchKey k;
  k.params = read_params(in);
  k.m = read_matrix(in);
  k.source = in.str();
  k.target = in.str();
  if (!in.done()) throw FormatError("trailing bytes after switch key");
  return k;
}

SecretKey deserialize_secret_key(std::span<const std::uint8_t> bytes) {
  ByteReader in(bytes);
  read_header(in, ContainerKind::SecretKey);
  SecretKey k;
  k.s = read_matrix(in);
  k.t.resize(in.u32());
  for (auto& v : k.t) v = in.i64();
  if (!in.done()) throw FormatError("trailing bytes after secret key");
  return k;
}

nlohmann::json to_debug_json(const Ciphertext& c) {
  return {{"kind", "ciphertext"},
          {"digits", c.digits},
          {"key_id", c.key_id},
          {"scales", c.scales},
          {"noise_bound", c.noise_bound}};
}

nlohmann::json to_debug_json(const SwitchKey& k) {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t r = 0; r < k.m.rows; ++r) {
    rows.push_back(std::vector<std::int64_t>(k.m.data.begin() + static_cast<std::ptrdiff_t>(r * k.m.cols),
                                             k.m.data.begin() + static_cast<std::ptrdiff_t>((r + 1) * k.m.cols)));
  }
  return {{"kind", "switch_key"}, {"params", k.params}, {"m", rows}, {"source", k.source}, {"target", k.target}};
}

}  // namespace chainlearn::ivhe
