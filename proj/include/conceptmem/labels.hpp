#pragma once

#include <cstdint>
#include <string>

#include "conceptmem/array.hpp"

namespace cmem {

enum class LabelScheme { OneHot, Binary };

std::string to_string(LabelScheme scheme);
LabelScheme label_scheme_from_string(const std::string& s);

/// Fixed-length encoding of a class id. `Zero` marks an unknown label.
struct LabelVector {
  enum class Kind { OneHot, Binary, Zero };

  Array values;
  Kind kind = Kind::Zero;

  std::size_t size() const { return values.size(); }
};

/// one-hot sets position `id`; binary writes the base-2 digits of `id`
/// most-significant first, left-padded with zeros. Throws EncodingError if the
/// id does not fit in `length` positions.
LabelVector encode_label(std::uint64_t id, LabelScheme scheme, std::size_t length);
/// All-zero vector of the given length.
LabelVector unknown_label(std::size_t length);

/// Number of distinct ids representable by the scheme at this length.
std::uint64_t label_capacity(LabelScheme scheme, std::size_t length);

/// Inverse of encode_label for slot label aggregates: one-hot takes the argmax
/// (ties to the lowest index), binary rounds each entry at 0.5.
std::uint64_t decode_label(const Array& values, LabelScheme scheme);

}  // namespace cmem
