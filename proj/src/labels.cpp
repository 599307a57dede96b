#include "conceptmem/labels.hpp"

#include "conceptmem/error.hpp"

namespace cmem {

std::string to_string(LabelScheme scheme) { return scheme == LabelScheme::OneHot ? "one-hot" : "binary"; }

LabelScheme label_scheme_from_string(const std::string& s) {
  if (s == "one-hot") return LabelScheme::OneHot;
  if (s == "binary") return LabelScheme::Binary;
  throw ConfigError("label.scheme: unknown scheme '" + s + "' (expected one-hot or binary)");
}

std::uint64_t label_capacity(LabelScheme scheme, std::size_t length) {
  if (scheme == LabelScheme::OneHot) return length;
  return length >= 63 ? (std::uint64_t{1} << 63) : (std::uint64_t{1} << length);
}

LabelVector encode_label(std::uint64_t id, LabelScheme scheme, std::size_t length) {
  if (length == 0) throw EncodingError("label length must be positive");
  if (id >= label_capacity(scheme, length)) {
    throw EncodingError("label id " + std::to_string(id) + " does not fit a " + to_string(scheme) +
                        " vector of length " + std::to_string(length));
  }
  LabelVector out{Array({length}), scheme == LabelScheme::OneHot ? LabelVector::Kind::OneHot
                                                                 : LabelVector::Kind::Binary};
  if (scheme == LabelScheme::OneHot) {
    out.values[id] = 1.0;
  } else {
    for (std::size_t bit = 0; bit < length && bit < 64; ++bit) {
      if ((id >> bit) & 1U) out.values[length - 1 - bit] = 1.0;
    }
  }
  return out;
}

LabelVector unknown_label(std::size_t length) {
  if (length == 0) throw EncodingError("label length must be positive");
  return LabelVector{Array({length}), LabelVector::Kind::Zero};
}

std::uint64_t decode_label(const Array& values, LabelScheme scheme) {
  if (scheme == LabelScheme::OneHot) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < values.size(); ++i) {
      if (values[i] > values[best]) best = i;
    }
    return best;
  }
  std::uint64_t id = 0;
  for (std::size_t i = 0; i < values.size(); ++i) id = (id << 1) | (values[i] >= 0.5 ? 1U : 0U);
  return id;
}

}  // namespace cmem
