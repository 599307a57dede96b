#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "conceptmem/episode.hpp"

namespace cmem {

struct OmniglotSplit {
  Dataset train;
  Dataset eval;
};

inline constexpr std::size_t kOmniglotTrainClasses = 1200;
inline constexpr std::size_t kOmniglotSide = 28;

/// Decodes a PNG into a [1 x side x side] array with ink = 1, resized by area
/// averaging. Throws LoadError naming the file on any decode failure.
Array load_glyph(const std::filesystem::path& file, std::size_t side = kOmniglotSide);

/// Reads every character directory under images_background/ and
/// images_evaluation/ (alphabet/character/*.png), sorted by path. The first
/// 1,200 characters form the training split, the rest the evaluation split.
OmniglotSplit load_omniglot(const std::filesystem::path& root, std::size_t side = kOmniglotSide);

/// Each class becomes four classes: its samples rotated by 0, 90, 180 and 270
/// degrees. Throws ConfigError for non-square samples.
Dataset augment_rotations(const Dataset& dataset);

/// Rotates a [C x H x H] (or [H x H]) array by 90 degrees counter-clockwise.
Array rotate90(const Array& image);

struct SyntheticSpec {
  std::size_t n_classes = 40;
  std::size_t dimension = 16;
  /// Class centers are center_scale * N(0, I).
  double center_scale = 1.0;
  /// Within-class noise standard deviation.
  double noise_sigma = 0.1;
  std::size_t samples_per_class = 20;
  std::uint64_t seed = 1;

  /// Throws ConfigError for an invalid field.
  void validate() const;

  friend bool operator==(const SyntheticSpec&, const SyntheticSpec&) = default;
};

struct SyntheticData {
  Dataset dataset;
  /// Class centers, one per class.
  std::vector<Array> centers;
  /// Minimum pairwise center distance divided by noise_sigma.
  double separability = 0.0;
};

SyntheticData make_synthetic(const SyntheticSpec& spec);

/// min_{i<j} |c_i - c_j| / sigma.
double separability_ratio(const std::vector<Array>& centers, double sigma);

/// Writes one CSV per class (a row per sample) plus meta.json into `dir`.
void write_synthetic(const SyntheticData& data, const SyntheticSpec& spec, const std::filesystem::path& dir);

}  // namespace cmem
