#pragma once

// Dataset sources: IDX image/label files, a deterministic synthetic digit
// renderer, a synthetic fading-channel generator, and label-subset
// partitioning into per-contributor shares.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "chainlearn/neuralnet.hpp"

namespace chainlearn::data {

// 28x28 rendered digit glyphs (stroke skeletons under a random affine
// transform, random stroke width, pixel noise). Pixel values in [0, 1].
nn::Example render_digit(int label, Rng& rng);

// Balanced pool: `per_class` examples of each digit, interleaved by label.
nn::LabeledDataset synthetic_digits(std::size_t per_class, std::uint64_t seed);

struct FadingParams {
  std::size_t length = 64;        // samples per window
  double base_dbm = -60.0;        // mean received link power
  double shadow_sigma_db = 1.5;   // slow AR(1) shadowing
  double shadow_rho = 0.9;
  double noise_sigma_db = 1.0;    // per-sample measurement noise
  double fade_depth_min_db = 3.0;
  double fade_depth_max_db = 14.0;
  std::size_t fade_len_min = 4;
  std::size_t fade_len_max = 14;
  double scale_db = 10.0;         // inputs are (power - base) / scale
};

// Class 1 windows carry one multiplicative deep-fade segment (a dip in dB),
// class 0 windows do not. Balanced; train examples first, then test.
nn::LabeledDataset gen_fading_data(std::uint64_t seed, std::size_t n_train, std::size_t n_test,
                                   const FadingParams& params = {});

// Reads an IDX3 image file and IDX1 label file; pixels scaled to [0, 1].
nn::LabeledDataset ingest_idx(const std::filesystem::path& images, const std::filesystem::path& labels);

// Writes the IDX pair back out (pixels quantized to bytes).
void write_idx(const nn::LabeledDataset& data, const std::filesystem::path& images,
               const std::filesystem::path& labels);

struct PartitionSpec {
  std::vector<int> labels;
  std::vector<double> weights;  // optional per-label sampling weights; empty = uniform
  std::size_t n_train = 0;
  std::size_t n_verify = 0;
};

// Draws each share without replacement from `pool`. Labels are chosen per
// draw by the spec's weights, falling back to other spec labels when a label
// is exhausted. Throws ConfigError if the pool cannot cover a share.
std::vector<nn::LabeledDataset> partition(const nn::LabeledDataset& pool, const std::vector<PartitionSpec>& specs,
                                          std::uint64_t seed);

// Binary container for shipping datasets through the content store:
// "CLDS", version byte, shape, class count, then label / split / inputs per example.
Bytes serialize(const nn::LabeledDataset& data);
nn::LabeledDataset deserialize_dataset(std::span<const std::uint8_t> bytes);

// Label histogram, for reports.
std::vector<std::size_t> label_counts(const nn::LabeledDataset& data);

}  // namespace chainlearn::data
