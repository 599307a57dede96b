#include "conceptmem/tape.hpp"

#include "conceptmem/error.hpp"

namespace cmem {

const Array& Var::value() const { return tape->value(*this); }

void Tape::check_owner(Var v) const {
  if (v.tape != this || v.id >= nodes_.size()) throw ContractError("Var does not belong to this tape");
}

Var Tape::constant(Array value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var{this, nodes_.size() - 1};
}

Var Tape::parameter(const Parameter& p) {
  Node n;
  n.param = &p;
  n.needs_grad = record_ && p.trainable;
  nodes_.push_back(std::move(n));
  return Var{this, nodes_.size() - 1};
}

Var Tape::push(Array value, std::initializer_list<Var> parents, Backward backward) {
  return push_impl(std::move(value), parents.begin(), parents.size(), std::move(backward));
}

Var Tape::push(Array value, const std::vector<Var>& parents, Backward backward) {
  return push_impl(std::move(value), parents.data(), parents.size(), std::move(backward));
}

Var Tape::push_impl(Array value, const Var* parents, std::size_t n_parents, Backward backward) {
  bool needs = false;
  for (std::size_t i = 0; i < n_parents; ++i) {
    check_owner(parents[i]);
    needs = needs || nodes_[parents[i].id].needs_grad;
  }
  if (!value.all_finite()) throw NumericError("operation produced a non-finite value");
  Node n;
  n.value = std::move(value);
  n.needs_grad = record_ && needs;
  if (n.needs_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{this, nodes_.size() - 1};
}

const Array& Tape::value(Var v) const {
  check_owner(v);
  const Node& n = nodes_[v.id];
  return n.param != nullptr ? n.param->value : n.value;
}

Array& Tape::grad_buffer(Var v) {
  check_owner(v);
  Node& n = nodes_[v.id];
  if (!n.has_grad) {
    n.grad = Array(value(v).shape());
    n.has_grad = true;
  }
  return n.grad;
}

void Tape::accumulate(Var v, const Array& g) {
  if (!needs_grad(v)) return;
  grad_buffer(v).add_inplace(g);
}

const Array* Tape::grad(Var v) const {
  check_owner(v);
  const Node& n = nodes_[v.id];
  return n.has_grad ? &n.grad : nullptr;
}

void Tape::backward(Var root) { backward(root, Array::filled(value(root).shape(), 1.0)); }

void Tape::backward(Var root, const Array& seed) {
  check_owner(root);
  if (!record_) throw ContractError("backward() on a tape built without recording");
  require_same_shape(value(root), seed, "backward seed");
  for (auto& n : nodes_) {
    n.has_grad = false;
    n.grad = Array();
  }
  if (!nodes_[root.id].needs_grad) return;
  grad_buffer(root) = seed;
  for (std::size_t i = root.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.has_grad || !n.backward) continue;
    // The callback may grow other nodes' gradients but never this one's.
    n.backward(*this, n.grad);
  }
}

}  // namespace cmem
