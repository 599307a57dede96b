#include "conceptmem/episode.hpp"

#include <algorithm>
#include <numeric>
#include <unordered_set>

#include "conceptmem/error.hpp"
#include "conceptmem/rng.hpp"

namespace cmem {

std::size_t Dataset::num_samples() const {
  std::size_t n = 0;
  for (const auto& c : classes) n += c.size();
  return n;
}

void Dataset::validate() const {
  for (std::size_t c = 0; c < classes.size(); ++c) {
    if (classes[c].empty()) throw SamplingError("dataset class " + std::to_string(c) + " has no samples");
    for (const auto& s : classes[c]) {
      if (s.shape() != input_shape) {
        throw SamplingError("dataset class " + std::to_string(c) + " holds a sample of shape " +
                            to_string(s.shape()) + ", expected " + to_string(input_shape));
      }
    }
  }
}

Dataset subset_classes(const Dataset& source, std::size_t begin, std::size_t end) {
  if (begin > end || end > source.num_classes()) throw SamplingError("subset_classes: range out of bounds");
  Dataset out;
  out.input_shape = source.input_shape;
  out.classes.assign(source.classes.begin() + static_cast<long>(begin), source.classes.begin() + static_cast<long>(end));
  if (source.names.size() == source.num_classes()) {
    out.names.assign(source.names.begin() + static_cast<long>(begin), source.names.begin() + static_cast<long>(end));
  }
  return out;
}

std::string to_string(Labeling labeling) {
  switch (labeling) {
    case Labeling::Full:
      return "full";
    case Labeling::Seed:
      return "seed";
    case Labeling::None:
      return "none";
  }
  return "?";
}

Labeling labeling_from_string(const std::string& s) {
  if (s == "full") return Labeling::Full;
  if (s == "seed") return Labeling::Seed;
  if (s == "none") return Labeling::None;
  throw ConfigError("labeling: unknown mode '" + s + "' (expected full, seed or none)");
}

std::vector<std::size_t> Episode::class_sequence() const {
  std::vector<std::size_t> seq;
  seq.reserve(steps.size());
  for (const auto& s : steps) seq.push_back(s.class_id);
  return seq;
}

namespace {

// k distinct values from [0, n) in random order.
std::vector<std::size_t> choose_distinct(std::size_t n, std::size_t k, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(n - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(k);
  return idx;
}

std::vector<std::uint64_t> draw_label_ids(std::size_t count, LabelScheme scheme, std::size_t length,
                                          std::uint64_t pool_begin, std::uint64_t pool_end, Rng& rng) {
  const std::uint64_t capacity = label_capacity(scheme, length);
  const std::uint64_t end = pool_end == 0 ? capacity : pool_end;
  if (end > capacity || pool_begin >= end) {
    throw EncodingError("label pool [" + std::to_string(pool_begin) + ", " + std::to_string(end) +
                        ") does not fit a " + to_string(scheme) + " vector of length " + std::to_string(length));
  }
  if (end - pool_begin < count) throw SamplingError("label pool smaller than the number of episode classes");
  std::vector<std::uint64_t> ids;
  std::unordered_set<std::uint64_t> seen;
  while (ids.size() < count) {
    const std::uint64_t id = pool_begin + rng.below(end - pool_begin);
    if (seen.insert(id).second) ids.push_back(id);
  }
  return ids;
}

}  // namespace

Episode sample_episode(const Dataset& dataset, const EpisodeSpec& spec) {
  if (spec.n_classes == 0 || spec.length == 0) throw SamplingError("episode needs at least one class and one step");
  if (dataset.num_classes() < spec.n_classes) {
    throw SamplingError("episode needs " + std::to_string(spec.n_classes) + " classes, dataset has " +
                        std::to_string(dataset.num_classes()));
  }
  if (spec.require_all_classes && spec.length < spec.n_classes) {
    throw SamplingError("episode length " + std::to_string(spec.length) + " cannot cover " +
                        std::to_string(spec.n_classes) + " classes");
  }
  Rng rng(spec.seed);
  Episode ep;
  ep.spec = spec;
  ep.classes = choose_distinct(dataset.num_classes(), spec.n_classes, rng);
  const auto label_ids =
      draw_label_ids(spec.n_classes, spec.scheme, spec.label_length, spec.pool_begin, spec.pool_end, rng);

  std::vector<std::size_t> assignment(spec.length);
  bool ok = false;
  for (int attempt = 0; attempt < 1000 && !ok; ++attempt) {
    std::vector<std::size_t> counts(spec.n_classes, 0);
    for (auto& a : assignment) {
      a = static_cast<std::size_t>(rng.below(spec.n_classes));
      ++counts[a];
    }
    ok = true;
    for (std::size_t c = 0; c < spec.n_classes; ++c) {
      if (counts[c] > dataset.classes[ep.classes[c]].size()) ok = false;
      if (spec.require_all_classes && counts[c] == 0) ok = false;
    }
  }
  if (!ok) throw SamplingError("not enough samples per class for an episode of length " + std::to_string(spec.length));

  std::vector<std::vector<std::size_t>> order(spec.n_classes);
  std::vector<std::size_t> next(spec.n_classes, 0);
  for (std::size_t c = 0; c < spec.n_classes; ++c) {
    const std::size_t n = dataset.classes[ep.classes[c]].size();
    order[c] = choose_distinct(n, n, rng);
  }
  std::vector<bool> seen(spec.n_classes, false);
  ep.steps.reserve(spec.length);
  for (std::size_t a : assignment) {
    EpisodeStep step;
    step.class_id = ep.classes[a];
    step.label_id = label_ids[a];
    step.sample = dataset.classes[step.class_id][order[a][next[a]++]];
    step.true_label = encode_label(step.label_id, spec.scheme, spec.label_length);
    const bool reveal = spec.labeling == Labeling::Full || (spec.labeling == Labeling::Seed && !seen[a]);
    step.label = reveal ? step.true_label : unknown_label(spec.label_length);
    seen[a] = true;
    ep.steps.push_back(std::move(step));
  }
  return ep;
}

NwayEpisode nway_kshot_episode(const Dataset& dataset, std::size_t n_classes, std::size_t k_shot,
                               LabelScheme scheme, std::size_t label_length, std::uint64_t seed,
                               std::uint64_t pool_begin, std::uint64_t pool_end) {
  if (n_classes == 0 || k_shot == 0) throw SamplingError("N-way k-shot needs N >= 1 and k >= 1");
  if (dataset.num_classes() < n_classes) {
    throw SamplingError("N-way episode needs " + std::to_string(n_classes) + " classes, dataset has " +
                        std::to_string(dataset.num_classes()));
  }
  Rng rng(seed);
  const auto classes = choose_distinct(dataset.num_classes(), n_classes, rng);
  const auto label_ids = draw_label_ids(n_classes, scheme, label_length, pool_begin, pool_end, rng);
  const std::size_t query_pos = static_cast<std::size_t>(rng.below(n_classes));

  NwayEpisode ep;
  for (std::size_t c = 0; c < n_classes; ++c) {
    const auto& samples = dataset.classes[classes[c]];
    if (samples.size() < k_shot + 1) {
      throw SamplingError("class " + std::to_string(classes[c]) + " has " + std::to_string(samples.size()) +
                          " samples, N-way k-shot needs k + 1 = " + std::to_string(k_shot + 1));
    }
    const auto picks = choose_distinct(samples.size(), k_shot + 1, rng);
    const LabelVector label = encode_label(label_ids[c], scheme, label_length);
    for (std::size_t j = 0; j < k_shot; ++j) {
      ep.support.push_back(EpisodeStep{samples[picks[j]], label, label, classes[c], label_ids[c]});
    }
    if (c == query_pos) {
      ep.query = EpisodeStep{samples[picks[k_shot]], unknown_label(label_length), label, classes[c], label_ids[c]};
    }
  }
  rng.shuffle(std::span<EpisodeStep>(ep.support));
  return ep;
}

}  // namespace cmem
