#pragma once

// Integer-vector homomorphic encryption.
//
// A plaintext vector x is held under the identity key as c = w*x. Key
// switching to S' = [I, T] goes through the public matrix
//
//     M = [ S* - T*A + E ]
//         [       A      ]
//
// where S* is the bit-expanded identity and c* the signed bit decomposition
// of c, so that S'*M*c* = S*c* + E*c* = w*x + noise. Decryption rounds
// S'*c / w half away from zero, which is exact while |noise| < w/2.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "chainlearn/common.hpp"

#include <json.hpp>

namespace chainlearn::ivhe {

// Dense row-major int64 matrix.
struct IntMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::int64_t> data;

  IntMatrix() = default;
  IntMatrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0) {}

  std::int64_t& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  std::int64_t operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  static IntMatrix identity(std::size_t n);

  bool operator==(const IntMatrix&) const = default;
};

// Checked matrix-vector product.
std::vector<std::int64_t> matvec(const IntMatrix& m, std::span<const std::int64_t> v);

struct HEParams {
  std::size_t n = 1;             // plaintext vector length
  std::int64_t w = 1 << 10;      // plaintext-to-noise ratio
  int l = 32;                    // bits per ciphertext digit
  std::int64_t a_bound = 1 << 4;
  std::int64_t e_bound = 1;
  std::int64_t t_bound = 1 << 4;
  // Non-negative keys: T, A, E and M all >= 0. Required for cipherspace ReLU.
  bool non_negative = false;
  // Every entry of T takes the same value. Used by the matrix-pair strategy,
  // whose second layer folds the extra ciphertext channel into one lane.
  bool uniform_secret = false;

  void validate() const;

  // Worst-case |E*c*| per coordinate of a freshly encrypted vector.
  std::int64_t fresh_noise_bound() const;

  bool operator==(const HEParams&) const = default;
};

void to_json(nlohmann::json& j, const HEParams& p);
void from_json(const nlohmann::json& j, HEParams& p);

struct SecretKey {
  IntMatrix s;                     // n x (n+1) for S' = [I, T]; n x n for the identity key
  std::vector<std::int64_t> t;     // the secret column T (empty for the identity key)

  static SecretKey identity(std::size_t n);
  std::size_t plaintext_len() const { return s.rows; }
  std::size_t ciphertext_len() const { return s.cols; }
};

struct SwitchKey {
  IntMatrix m;                     // (n+1) x (n*l)
  HEParams params;
  std::string source = "identity";
  std::string target = "S'=[I,T]";

  // SHA-256 over the binary form; ciphertexts record it to detect key mixing.
  std::string id() const;
};

// Randomness behind M. Held by the key owner only; lets it re-derive M.
struct KeyWitness {
  IntMatrix a;  // 1 x (n*l)
  IntMatrix e;  // n x (n*l)
};

struct KeyMaterial {
  SecretKey secret;
  SwitchKey switch_key;
  KeyWitness witness;
};

// Build M from explicit components. T has length n, A is 1 x (n*l), E is n x (n*l).
SwitchKey make_switch_key(const HEParams& params, std::span<const std::int64_t> t,
                          const IntMatrix& a, const IntMatrix& e);

KeyMaterial gen_keys(const HEParams& params, std::uint64_t seed);

// True when M reconstructs from (T, A, E) and has the declared shape.
bool self_consistent(const SwitchKey& key, const SecretKey& sk, const KeyWitness& witness);

// Signed-digit binary expansion, most significant bit first. Length c.size()*l.
std::vector<std::int64_t> bit_decompose(std::span<const std::int64_t> c, int l);

// Replace every S_ij by [2^(l-1) S_ij, ..., 2 S_ij, S_ij].
IntMatrix star_expand(const IntMatrix& s, int l);

struct Ciphertext {
  std::vector<std::int64_t> digits;
  std::string key_id;
  std::vector<std::int64_t> scales;  // propagated scaling factors, in application order
  std::int64_t noise_bound = 0;      // analytic worst case of |S'c - w x| per coordinate

  std::int64_t total_scale() const;
};

Ciphertext encrypt(std::span<const std::int64_t> x, const SwitchKey& key);

// Digits of encrypt(x, key) without the bookkeeping (key id, noise bound).
std::vector<std::int64_t> encrypt_digits(std::span<const std::int64_t> x, const SwitchKey& key);

std::vector<std::int64_t> decrypt(const Ciphertext& c, const SecretKey& sk, const HEParams& params);
std::vector<std::int64_t> decrypt(std::span<const std::int64_t> digits, const SecretKey& sk,
                                  const HEParams& params);

// Decrypt and divide by the ciphertext's propagated scale.
std::vector<double> decrypt_scaled(const Ciphertext& c, const SecretKey& sk, const HEParams& params);

Ciphertext he_add(const Ciphertext& a, const Ciphertext& b, const HEParams& params);

// sum_i weights[i] * cts[i]. When declared_scale is set it is appended to the
// scale ledger of the result.
Ciphertext he_weighted_sum(std::span<const std::int64_t> weights, std::span<const Ciphertext> cts,
                           const HEParams& params,
                           std::optional<std::int64_t> declared_scale = std::nullopt);

// ---------------------------------------------------------------------------
// Serialization. Binary container: "IVHE", version byte, kind byte, then a
// kind-specific little-endian body of u32 dimensions and raw i64 digits.
// ---------------------------------------------------------------------------

inline constexpr std::uint8_t kContainerVersion = 1;

enum class ContainerKind : std::uint8_t { Ciphertext = 1, SwitchKey = 2, SecretKey = 3 };

Bytes serialize(const Ciphertext& c);
Bytes serialize(const SwitchKey& k);
Bytes serialize(const SecretKey& k);
Ciphertext deserialize_ciphertext(std::span<const std::uint8_t> bytes);
SwitchKey deserialize_switch_key(std::span<const std::uint8_t> bytes);
SecretKey deserialize_secret_key(std::span<const std::uint8_t> bytes);

nlohmann::json to_debug_json(const Ciphertext& c);
nlohmann::json to_debug_json(const SwitchKey& k);

}  // namespace chainlearn::ivhe
