#include "conceptmem/memory.hpp"

#include <cmath>
#include <iomanip>
#include <map>
#include <ostream>

#include "conceptmem/error.hpp"
#include "conceptmem/ops.hpp"

namespace cmem {

Memory::Memory(std::size_t slots, std::size_t hidden_size, std::size_t label_size)
    : hidden_size_(hidden_size), label_size_(label_size) {
  if (slots == 0) throw ConfigError("memory.slots: must be at least 1");
  if (hidden_size == 0 || label_size == 0) throw ConfigError("memory: slot vector lengths must be positive");
  slots_.resize(slots);
  reset();
}

std::size_t Memory::occupied() const {
  std::size_t n = 0;
  for (const auto& s : slots_) n += s.empty() ? 0 : 1;
  return n;
}

std::size_t Memory::total_count() const {
  std::size_t n = 0;
  for (const auto& s : slots_) n += s.count;
  return n;
}

void Memory::reset() {
  for (auto& s : slots_) {
    s.hidden = Array({hidden_size_});
    s.label = Array({label_size_});
    s.count = 0;
  }
}

void Memory::write(std::size_t index, const Array& hidden, const Array& label) {
  if (index >= slots_.size()) {
    throw ContractError("memory write: slot " + std::to_string(index) + " out of range (L = " +
                        std::to_string(slots_.size()) + ")");
  }
  if (hidden.shape() != Shape{hidden_size_}) {
    throw DimensionError("memory write: embedding " + to_string(hidden.shape()) + ", slot expects [" +
                         std::to_string(hidden_size_) + "]");
  }
  if (label.shape() != Shape{label_size_}) {
    throw DimensionError("memory write: label " + to_string(label.shape()) + ", slot expects [" +
                         std::to_string(label_size_) + "]");
  }
  Slot& s = slots_[index];
  const double c = static_cast<double>(s.count);
  for (std::size_t i = 0; i < hidden_size_; ++i) s.hidden[i] = (s.hidden[i] * c + hidden[i]) / (c + 1.0);
  for (std::size_t i = 0; i < label_size_; ++i) s.label[i] = (s.label[i] * c + label[i]) / (c + 1.0);
  ++s.count;
}

void Memory::dump(std::ostream& out) const {
  out << "slot  count  m_y | m_h[0..8)\n";
  for (std::size_t i = 0; i < slots_.size(); ++i) {
    const Slot& s = slots_[i];
    out << std::setw(4) << i << "  " << std::setw(5) << s.count << "  [";
    out << std::fixed << std::setprecision(3);
    for (std::size_t j = 0; j < s.label.size(); ++j) out << (j ? " " : "") << s.label[j];
    out << "] | [";
    for (std::size_t j = 0; j < s.hidden.size() && j < 8; ++j) out << (j ? " " : "") << s.hidden[j];
    out << "]\n";
    out.unsetf(std::ios::floatfield);
  }
}

int lambda_switch(const Array& y) {
  for (double v : y.data()) {
    if (v != 0.0) return 1;
  }
  return 0;
}

double att_h(const Array& h, const Array& m_h) {
  require_same_shape(h, m_h, "att_h");
  double s = 0.0;
  for (std::size_t i = 0; i < h.size(); ++i) {
    const double d = h[i] - m_h[i];
    s += d * d;
  }
  return -std::sqrt(s);
}

Var attention_logits(Tape& tape, const Memory& memory, std::span<const Var> prototypes, Var h, const Array& y,
                     const LabelAttention& att_y, const LabelAttention::Bound& bound) {
  const std::size_t L = memory.size();
  if (prototypes.size() != L) throw ContractError("attention: one prototype node per slot required");
  if (y.shape() != Shape{memory.label_size()}) {
    throw DimensionError("attention: label " + to_string(y.shape()) + " does not match slot label length " +
                         std::to_string(memory.label_size()));
  }
  const int lambda = lambda_switch(y);
  std::vector<Var> scores;
  scores.reserve(L);
  if (lambda == 0) {
    for (std::size_t i = 0; i < L; ++i) scores.push_back(ops::scale(ops::euclidean_distance(h, prototypes[i]), -1.0));
  } else {
    // Slots with identical label aggregates (typically the empty ones) share
    // one att_y evaluation.
    std::map<std::vector<double>, Var> cache;
    for (std::size_t i = 0; i < L; ++i) {
      const auto& key = memory.slot(i).label.values();
      auto it = cache.find(key);
      if (it == cache.end()) {
        it = cache.emplace(key, att_y.score(tape, bound, label_difference(y, memory.slot(i).label))).first;
      }
      scores.push_back(it->second);
    }
  }
  return ops::stack(scores);
}

std::vector<double> attend(const Memory& memory, const Array& h, const Array& y, const LabelAttention& att_y) {
  Tape tape(false);
  std::vector<Var> protos;
  protos.reserve(memory.size());
  for (const auto& s : memory.slots()) protos.push_back(tape.constant(s.hidden));
  const Var hv = tape.constant(h);
  const auto bound = att_y.bind(tape);
  const Var p = ops::softmax(attention_logits(tape, memory, protos, hv, y, att_y, bound));
  return p.value().values();
}

std::size_t choose_slot(std::span<const double> probabilities, Selection mode, Rng& rng) {
  if (probabilities.empty()) throw ContractError("choose_slot: empty distribution");
  double total = 0.0;
  for (double p : probabilities) {
    if (!(p >= 0.0)) throw ContractError("choose_slot: negative or NaN probability");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw ContractError("choose_slot: probabilities sum to " + std::to_string(total) + ", not 1");
  }
  if (mode == Selection::Greedy) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < probabilities.size(); ++i) {
      if (probabilities[i] > probabilities[best]) best = i;
    }
    return best;
  }
  const double u = rng.uniform() * total;
  double acc = 0.0;
  std::size_t last_positive = 0;
  for (std::size_t i = 0; i < probabilities.size(); ++i) {
    if (probabilities[i] > 0.0) last_positive = i;
    acc += probabilities[i];
    if (u < acc && probabilities[i] > 0.0) return i;
  }
  return last_positive;
}

Prediction classify(const Memory& memory, const Array& h, LabelScheme scheme) {
  if (h.shape() != Shape{memory.hidden_size()}) {
    throw DimensionError("classify: embedding " + to_string(h.shape()) + " does not match slot length " +
                         std::to_string(memory.hidden_size()));
  }
  bool found = false;
  Prediction best;
  double best_score = 0.0;
  for (std::size_t i = 0; i < memory.size(); ++i) {
    const Slot& s = memory.slot(i);
    if (s.empty()) continue;
    const double score = att_h(h, s.hidden);
    if (!found || score > best_score) {
      found = true;
      best_score = score;
      best.slot = i;
    }
  }
  if (!found) throw NoPrototypeError("classify: every memory slot is empty");
  best.label = decode_label(memory.slot(best.slot).label, scheme);
  return best;
}

}  // namespace cmem
