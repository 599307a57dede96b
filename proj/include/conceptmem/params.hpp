#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "conceptmem/array.hpp"
#include "conceptmem/rng.hpp"

namespace cmem {

/// One named array of a network. Non-trainable entries are state buffers such
/// as batch-normalization running statistics.
struct Parameter {
  std::string name;
  Array value;
  bool trainable = true;
};

/// Named parameters of one network, in insertion order.
class ParamSet {
 public:
  ParamSet() = default;
  explicit ParamSet(std::uint64_t seed) : seed_(seed) {}

  Parameter& add(std::string name, Array value, bool trainable = true);

  Parameter& at(std::string_view name);
  const Parameter& at(std::string_view name) const;
  bool contains(std::string_view name) const;

  std::vector<Parameter>& entries() { return params_; }
  const std::vector<Parameter>& entries() const { return params_; }
  std::size_t size() const { return params_.size(); }
  /// Number of scalar values across trainable parameters.
  std::size_t trainable_count() const;

  std::uint64_t seed() const { return seed_; }

  friend bool operator==(const ParamSet&, const ParamSet&);

 private:
  std::vector<Parameter> params_;
  std::uint64_t seed_ = 0;
};

bool operator==(const Parameter& a, const Parameter& b);

/// Uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
Array glorot_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng);

/// Checkpoint container: several ParamSets under distinct namespaces plus a
/// free-form metadata string. Layout is documented in docs/checkpoint_format.md.
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  std::string metadata;
  std::vector<std::pair<std::string, ParamSet>> sections;

  ParamSet* find(std::string_view ns);
  const ParamSet* find(std::string_view ns) const;
};

std::vector<std::uint8_t> serialize(const Checkpoint& checkpoint);
Checkpoint deserialize(std::span<const std::uint8_t> bytes);

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace cmem
