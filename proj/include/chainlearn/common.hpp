#pragma once

// Shared plumbing: error types, the seeded RNG, SHA-256 digests and a few
// byte/string helpers used across every module.

#include <array>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace chainlearn {

using Bytes = std::vector<std::uint8_t>;

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParameterError : public Error { using Error::Error; };
class ShapeError : public Error { using Error::Error; };
class OverflowError : public Error { using Error::Error; };
class IncompatibleError : public Error { using Error::Error; };
// Noise budget violations signal parameter misconfiguration.
class BudgetError : public ParameterError { using ParameterError::ParameterError; };
class ModeError : public Error { using Error::Error; };
class UnsupportedError : public Error { using Error::Error; };
class DivergenceError : public Error { using Error::Error; };
class IntegrityError : public Error { using Error::Error; };
class NotFoundError : public Error { using Error::Error; };
class ConsensusError : public Error { using Error::Error; };
class ConfigError : public Error { using Error::Error; };
class FormatError : public Error { using Error::Error; };

// ---------------------------------------------------------------------------
// Deterministic RNG
// ---------------------------------------------------------------------------

// mt19937_64 with hand-rolled range mapping, so streams are identical across
// standard library implementations (std::uniform_*_distribution is not).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform integer in [lo, hi], inclusive. Rejection sampling, no modulo bias.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);

  // Uniform real in [0, 1).
  double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Box-Muller; one draw per call.
  double normal(double mean = 0.0, double stddev = 1.0);

  bool bernoulli(double p) { return uniform01() < p; }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      auto j = static_cast<std::size_t>(uniform_int(0, static_cast<std::int64_t>(i - 1)));
      std::swap(v[i - 1], v[j]);
    }
  }

  // Derive an independent child seed; used to give every actor/model its own stream.
  static std::uint64_t derive(std::uint64_t seed, std::uint64_t salt);

 private:
  std::mt19937_64 engine_;
};

// ---------------------------------------------------------------------------
// Digests and encodings
// ---------------------------------------------------------------------------

using Digest = std::array<std::uint8_t, 32>;

Digest sha256(std::span<const std::uint8_t> data);
std::string sha256_hex(std::span<const std::uint8_t> data);
std::string sha256_hex(std::string_view text);

std::string to_hex(std::span<const std::uint8_t> data);
Bytes from_hex(std::string_view hex);

std::string base64_encode(std::span<const std::uint8_t> data);
Bytes base64_decode(std::string_view text);

inline std::span<const std::uint8_t> as_bytes(std::string_view s) {
  return {reinterpret_cast<const std::uint8_t*>(s.data()), s.size()};
}

// ---------------------------------------------------------------------------
// Little-endian byte writer/reader for the binary containers
// ---------------------------------------------------------------------------

class ByteWriter {
 public:
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void i64(std::int64_t v) { u64(static_cast<std::uint64_t>(v)); }
  void f64(double v);
  void raw(std::span<const std::uint8_t> data) { out_.insert(out_.end(), data.begin(), data.end()); }
  void str(std::string_view s);

  Bytes take() { return std::move(out_); }
  const Bytes& bytes() const { return out_; }

 private:
  Bytes out_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> data) : data_(data) {}

  std::uint8_t u8();
  std::uint32_t u32();
  std::uint64_t u64();
  std::int64_t i64() { return static_cast<std::int64_t>(u64()); }
  double f64();
  std::span<const std::uint8_t> raw(std::size_t n);
  std::string str();

  bool done() const { return pos_ == data_.size(); }
  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  void need(std::size_t n) const;
  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
};

// ---------------------------------------------------------------------------
// Checked 64-bit arithmetic
// ---------------------------------------------------------------------------

inline std::int64_t checked_add(std::int64_t a, std::int64_t b) {
  std::int64_t r;
  if (__builtin_add_overflow(a, b, &r)) throw OverflowError("int64 addition overflow");
  return r;
}

inline std::int64_t checked_mul(std::int64_t a, std::int64_t b) {
  std::int64_t r;
  if (__builtin_mul_overflow(a, b, &r)) throw OverflowError("int64 multiplication overflow");
  return r;
}

// round(num / den) with ties away from zero; den > 0.
std::int64_t div_round_half_away(std::int64_t num, std::int64_t den);

}  // namespace chainlearn
