#pragma once

#include <cstdint>

#include "conceptmem/ops.hpp"
#include "conceptmem/params.hpp"

namespace cmem {

/// Learned label-channel attention: a GRU reads the difference of two label
/// vectors one element at a time (input size 1, zero initial state) and a
/// linear readout of the final state gives a scalar consistency score. Because
/// the input is consumed element by element, the same parameters accept label
/// vectors of any length.
class LabelAttention {
 public:
  static constexpr std::size_t kDefaultHidden = 32;

  /// Glorot-uniform weights, zero biases.
  explicit LabelAttention(std::size_t hidden_size = kDefaultHidden, std::uint64_t seed = 0);
  /// Restores stored parameters; the hidden size is read from their shapes.
  explicit LabelAttention(ParamSet params);

  /// Every weight and bias zero except the readout bias.
  static LabelAttention zeros(std::size_t hidden_size, double readout_bias = 0.0);

  std::size_t hidden_size() const { return hidden_; }
  const ParamSet& params() const { return params_; }
  ParamSet& params() { return params_; }

  /// Parameter leaves placed on one tape; bind once per tape and reuse.
  struct Bound {
    ops::GruWeights gru;
    Var readout_w;
    Var readout_b;
  };
  Bound bind(Tape& tape) const;

  /// Score node for the difference vector y - m_y.
  Var score(Tape& tape, const Bound& bound, const Array& difference) const;
  /// Score of (y, m_y); throws DimensionError if the lengths differ.
  double score(const Array& y, const Array& m_y) const;

 private:
  void check_layout() const;

  std::size_t hidden_ = kDefaultHidden;
  ParamSet params_;
};

/// y - m_y, checking both are vectors of equal length.
Array label_difference(const Array& y, const Array& m_y);

}  // namespace cmem
