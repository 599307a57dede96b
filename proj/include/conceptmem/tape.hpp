#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <vector>

#include "conceptmem/array.hpp"
#include "conceptmem/params.hpp"

namespace cmem {

class Tape;

/// Handle to one node of a Tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Array& value() const;
  const Shape& shape() const { return value().shape(); }
};

/// Computation record for reverse-mode differentiation. Nodes are appended in
/// evaluation order, so reverse insertion order is a reverse topological order
/// and backward() visits each node once. Gradients of nodes consumed more than
/// once accumulate.
///
/// A tape built with `record = false` keeps values only; it is the cheap path
/// for inference.
class Tape {
 public:
  /// Receives the node's output gradient and pushes contributions to parents
  /// through Tape::grad_buffer / Tape::accumulate.
  using Backward = std::function<void(Tape&, const Array& out_grad)>;

  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  bool recording() const { return record_; }
  std::size_t size() const { return nodes_.size(); }

  Var constant(Array value);
  /// Leaf referencing a parameter without copying it. The parameter must
  /// outlive the tape and stay unmodified while the tape is in use.
  Var parameter(const Parameter& p);
  /// Appends an operation result. `backward` is dropped when no parent needs a
  /// gradient or the tape does not record.
  Var push(Array value, std::initializer_list<Var> parents, Backward backward);
  Var push(Array value, const std::vector<Var>& parents, Backward backward);

  const Array& value(Var v) const;
  bool needs_grad(Var v) const { return nodes_[v.id].needs_grad; }

  /// Zero-initialized gradient storage of `v`, allocated on first use.
  Array& grad_buffer(Var v);
  void accumulate(Var v, const Array& g);
  /// Gradient of `v` after backward(), or nullptr if none reached it.
  const Array* grad(Var v) const;

  /// Seeds d(root)/d(root) = 1; root must hold a single value.
  void backward(Var root);
  void backward(Var root, const Array& seed);

  /// Calls f(parameter, gradient) for every parameter leaf that received a
  /// gradient during the last backward().
  template <class F>
  void for_each_parameter_grad(F&& f) const {
    for (const auto& n : nodes_) {
      if (n.param != nullptr && n.has_grad) f(*n.param, n.grad);
    }
  }

 private:
  struct Node {
    Array value;
    const Parameter* param = nullptr;
    Array grad;
    bool has_grad = false;
    bool needs_grad = false;
    Backward backward;
  };

  Var push_impl(Array value, const Var* parents, std::size_t n_parents, Backward backward);
  void check_owner(Var v) const;

  bool record_;
  std::vector<Node> nodes_;
};

}  // namespace cmem
