#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "conceptmem/array.hpp"
#include "conceptmem/labels.hpp"

namespace cmem {

/// Samples grouped by class. Class ids are the dense indices into `classes`.
struct Dataset {
  Shape input_shape;
  std::vector<std::vector<Array>> classes;
  /// Optional human-readable class names (e.g. glyph directory paths).
  std::vector<std::string> names;

  std::size_t num_classes() const { return classes.size(); }
  std::size_t num_samples() const;
  /// Throws SamplingError for an empty class or a sample of the wrong shape.
  void validate() const;
};

/// Keeps classes [begin, end) of `source`, renumbered from 0.
Dataset subset_classes(const Dataset& source, std::size_t begin, std::size_t end);

/// How labels are revealed inside an episode: every step, only at each class's
/// first occurrence, or never.
enum class Labeling { Full, Seed, None };

std::string to_string(Labeling labeling);
Labeling labeling_from_string(const std::string& s);

struct EpisodeSpec {
  std::size_t n_classes = 2;
  std::size_t length = 3;
  Labeling labeling = Labeling::Full;
  LabelScheme scheme = LabelScheme::OneHot;
  std::size_t label_length = 10;
  /// Episode-local label ids are drawn without replacement from
  /// [pool_begin, pool_end); pool_end = 0 means the scheme's full capacity.
  std::uint64_t pool_begin = 0;
  std::uint64_t pool_end = 0;
  /// Resample the class sequence until every chosen class appears.
  bool require_all_classes = false;
  std::uint64_t seed = 0;
};

struct EpisodeStep {
  Array sample;
  /// What the model is shown: the true label vector or zeros.
  LabelVector label;
  /// The true label vector, kept for bookkeeping and evaluation storage.
  LabelVector true_label;
  std::size_t class_id = 0;
  std::uint64_t label_id = 0;
};

struct Episode {
  EpisodeSpec spec;
  std::vector<EpisodeStep> steps;
  /// Dataset class ids chosen for this episode.
  std::vector<std::size_t> classes;

  std::size_t size() const { return steps.size(); }
  std::vector<std::size_t> class_sequence() const;
};

/// Draws N classes without replacement, assigns each step a class uniformly at
/// random, and draws each class's samples without replacement. A pure function
/// of (dataset, spec).
Episode sample_episode(const Dataset& dataset, const EpisodeSpec& spec);

struct NwayEpisode {
  std::vector<EpisodeStep> support;
  EpisodeStep query;
};

/// k labeled samples from each of N classes in random order, plus one
/// unlabeled query from a uniformly chosen support class.
NwayEpisode nway_kshot_episode(const Dataset& dataset, std::size_t n_classes, std::size_t k_shot,
                               LabelScheme scheme, std::size_t label_length, std::uint64_t seed,
                               std::uint64_t pool_begin = 0, std::uint64_t pool_end = 0);

}  // namespace cmem
