#pragma once

#include <iosfwd>
#include <span>
#include <vector>

#include "conceptmem/label_attention.hpp"
#include "conceptmem/labels.hpp"
#include "conceptmem/rng.hpp"
#include "conceptmem/tape.hpp"

namespace cmem {

/// One memory cell: running means of the embeddings (prototype) and label
/// vectors written to it, plus the write count.
struct Slot {
  Array hidden;
  Array label;
  std::size_t count = 0;

  bool empty() const { return count == 0; }
};

/// L slots, reset at episode boundaries. Empty slots hold zero vectors and take
/// part in attention like any other slot.
class Memory {
 public:
  Memory(std::size_t slots, std::size_t hidden_size, std::size_t label_size);

  std::size_t size() const { return slots_.size(); }
  std::size_t hidden_size() const { return hidden_size_; }
  std::size_t label_size() const { return label_size_; }
  const Slot& slot(std::size_t i) const { return slots_.at(i); }
  const std::vector<Slot>& slots() const { return slots_; }
  std::size_t occupied() const;
  std::size_t total_count() const;

  void reset();
  /// m <- (m * c + v) / (c + 1) for both channels, c <- c + 1. Throws
  /// ContractError for an out-of-range index, DimensionError for bad lengths.
  void write(std::size_t index, const Array& hidden, const Array& label);

  /// Table with slot index, count, label entries and the first 8 prototype
  /// entries.
  void dump(std::ostream& out) const;

 private:
  std::size_t hidden_size_;
  std::size_t label_size_;
  std::vector<Slot> slots_;
};

/// 0 for the all-zero label vector, 1 otherwise.
int lambda_switch(const Array& y);

/// Negated Euclidean distance, so nearer prototypes score higher.
double att_h(const Array& h, const Array& m_h);

/// Slot scores (1 - lambda) * att_h + lambda * att_y as a node of length L.
/// `prototypes[i]` is slot i's prototype as a node, which lets gradients flow
/// through earlier writes; label aggregates are taken from `memory`. The
/// channel whose weight is zero is not evaluated.
Var attention_logits(Tape& tape, const Memory& memory, std::span<const Var> prototypes, Var h, const Array& y,
                     const LabelAttention& att_y, const LabelAttention::Bound& bound);

/// Softmax of the slot scores for sample (h, y).
std::vector<double> attend(const Memory& memory, const Array& h, const Array& y, const LabelAttention& att_y);

enum class Selection { Sample, Greedy };

/// Draws a slot from `probabilities` (Sample) or takes the argmax with ties to
/// the lowest index (Greedy). Throws ContractError if the probabilities do not
/// sum to 1 within 1e-9.
std::size_t choose_slot(std::span<const double> probabilities, Selection mode, Rng& rng);

struct Prediction {
  std::size_t slot = 0;
  std::uint64_t label = 0;
};

/// Routes an unlabeled sample (lambda = 0) to the best occupied slot and reads
/// the class from that slot's label aggregate. Throws NoPrototypeError when all
/// slots are empty.
Prediction classify(const Memory& memory, const Array& h, LabelScheme scheme = LabelScheme::OneHot);

}  // namespace cmem
