#include "conceptmem/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "conceptmem/error.hpp"
#include "conceptmem/ops.hpp"

namespace cmem {

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), kGradCheckFloor});
  return std::abs(analytic - numeric) / denom;
}

namespace {

double evaluate(const ScalarFunction& f, const std::vector<Array>& point) {
  Tape tape(false);
  std::vector<Var> leaves;
  leaves.reserve(point.size());
  for (const auto& a : point) leaves.push_back(tape.constant(a));
  const Var out = f(tape, leaves);
  if (out.value().size() != 1) {
    throw UsageError("grad_check: function must be scalar-valued, got shape " + to_string(out.shape()));
  }
  return out.value()[0];
}

}  // namespace

GradCheckReport grad_check(const ScalarFunction& f, const std::vector<Array>& point, double tolerance, double step) {
  if (!(tolerance > 0.0)) throw UsageError("grad_check: tolerance must be positive");

  // Inputs become trainable parameters so the tape tracks their gradients.
  std::vector<Parameter> params;
  params.reserve(point.size());
  for (std::size_t i = 0; i < point.size(); ++i) params.push_back(Parameter{"in" + std::to_string(i), point[i]});
  Tape tape(true);
  std::vector<Var> leaves;
  for (const auto& p : params) leaves.push_back(tape.parameter(p));
  const Var out = f(tape, leaves);
  if (out.value().size() != 1) {
    throw UsageError("grad_check: function must be scalar-valued, got shape " + to_string(out.shape()));
  }
  tape.backward(out);

  GradCheckReport report;
  report.tolerance = tolerance;
  std::vector<Array> probe = point;
  for (std::size_t i = 0; i < point.size(); ++i) {
    const Array* analytic = tape.grad(leaves[i]);
    for (std::size_t j = 0; j < point[i].size(); ++j) {
      const double orig = probe[i][j];
      probe[i][j] = orig + step;
      const double up = evaluate(f, probe);
      probe[i][j] = orig - step;
      const double down = evaluate(f, probe);
      probe[i][j] = orig;
      const double numeric = (up - down) / (2.0 * step);
      const double a = analytic != nullptr ? (*analytic)[j] : 0.0;
      const double err = relative_error(a, numeric);
      if (err > report.max_rel_error) {
        report.max_rel_error = err;
        report.worst_input = i;
        report.worst_element = j;
      }
    }
  }
  report.passed = report.max_rel_error < tolerance;
  return report;
}

namespace {

Array random_array(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Array a(std::move(shape));
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = rng.uniform(lo, hi);
  return a;
}

// Values bounded away from zero so kinks (relu) are not straddled by the step.
Array away_from_zero(Shape shape, Rng& rng) {
  Array a(std::move(shape));
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double mag = rng.uniform(0.05, 1.0);
    a[i] = rng.uniform() < 0.5 ? -mag : mag;
  }
  return a;
}

// Distinct values separated by at least 0.01 so maxpool windows have a strict
// maximum.
Array distinct_values(Shape shape, Rng& rng) {
  Array a(std::move(shape));
  std::vector<double> vals(a.size());
  for (std::size_t i = 0; i < vals.size(); ++i) vals[i] = 0.01 * static_cast<double>(i) - 0.5;
  rng.shuffle(std::span<double>(vals));
  for (std::size_t i = 0; i < vals.size(); ++i) a[i] = vals[i];
  return a;
}

std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) { return lo + rng.below(hi - lo + 1); }

// Reduces an arbitrary node to a scalar with fixed random weights so every
// output entry contributes a distinct sensitivity.
Var weighted_sum(Tape& t, Var v, const Array& weights) { return ops::sum(ops::mul(v, t.constant(weights))); }

struct OpCase {
  std::string name;
  // Produces the inputs and the function for one seed.
  std::function<std::pair<std::vector<Array>, ScalarFunction>(Rng&)> make;
};

std::vector<OpCase> op_cases() {
  std::vector<OpCase> cases;
  cases.push_back({"matmul", [](Rng& rng) {
                     const std::size_t m = pick(rng, 1, 4), k = pick(rng, 1, 4), n = pick(rng, 1, 4);
                     Array w = random_array({m, n}, rng);
                     ScalarFunction f = [w](Tape& t, std::span<const Var> in) {
                       return weighted_sum(t, ops::matmul(in[0], in[1]), w);
                     };
                     return std::pair{std::vector<Array>{random_array({m, k}, rng), random_array({k, n}, rng)}, f};
                   }});
  cases.push_back({"add/sub/mul/scale", [](Rng& rng) {
                     const std::size_t n = pick(rng, 1, 6);
                     Array w = random_array({n}, rng);
                     ScalarFunction f = [w](Tape& t, std::span<const Var> in) {
                       Var s = ops::add(in[0], in[1]);
                       Var d = ops::sub(s, ops::scale(in[1], 0.5));
                       return weighted_sum(t, ops::mul(d, in[0]), w);
                     };
                     return std::pair{std::vector<Array>{random_array({n}, rng), random_array({n}, rng)}, f};
                   }});
  cases.push_back({"add_row_bias", [](Rng& rng) {
                     const std::size_t b = pick(rng, 1, 4), f_ = pick(rng, 1, 5);
                     Array w = random_array({b, f_}, rng);
                     ScalarFunction f = [w](Tape& t, std::span<const Var> in) {
                       return weighted_sum(t, ops::add_row_bias(in[0], in[1]), w);
                     };
                     return std::pair{std::vector<Array>{random_array({b, f_}, rng), random_array({f_}, rng)}, f};
                   }});
  cases.push_back({"relu", [](Rng& rng) {
                     const std::size_t n = pick(rng, 1, 8);
                     Array w = random_array({n}, rng);
                     ScalarFunction f = [w](Tape& t, std::span<const Var> in) {
                       return weighted_sum(t, ops::relu(in[0]), w);
                     };
                     return std::pair{std::vector<Array>{away_from_zero({n}, rng)}, f};
                   }});
  cases.push_back({"sigmoid/tanh", [](Rng& rng) {
                     const std::size_t n = pick(rng, 1, 8);
                     Array w = random_array({n}, rng);
                     ScalarFunction f = [w](Tape& t, std::span<const Var> in) {
                       return weighted_sum(t, ops::add(ops::sigmoid(in[0]), ops::tanh(in[0])), w);
                     };
                     return std::pair{std::vector<Array>{random_array({n}, rng, -3.0, 3.0)}, f};
                   }});
  cases.push_back({"reshape/row/select/stack", [](Rng& rng) {
                     const std::size_t b = pick(rng, 2, 4), n = pick(rng, 2, 4);
                     Array w = random_array({n, b}, rng);
                     ScalarFunction f = [w, b, n](Tape& t, std::span<const Var> in) {
                       Var r = ops::reshape(in[0], {n, b});
                       Var first = ops::row(in[0], 0);
                       std::vector<Var> picks{ops::select(first, 0), ops::select(in[0], b * n - 1)};
                       Var st = ops::stack(picks);
                       return ops::add(weighted_sum(t, r, w), ops::sum(ops::mul(st, st)));
                     };
                     return std::pair{std::vector<Array>{random_array({b, n}, rng)}, f};
                   }});
  cases.push_back({"conv2d_3x3", [](Rng& rng) {
                     const std::size_t ci = pick(rng, 1, 2), co = pick(rng, 1, 3);
                     const std::size_t h = pick(rng, 3, 5), wd = pick(rng, 3, 5);
                     const bool batched = rng.uniform() < 0.5;
                     Shape in_shape = batched ? Shape{2, ci, h, wd} : Shape{ci, h, wd};
                     Shape out_shape = batched ? Shape{2, co, h, wd} : Shape{co, h, wd};
                     Array w = random_array(out_shape, rng);
                     ScalarFunction f = [w](Tape& t, std::span<const Var> in) {
                       return weighted_sum(t, ops::conv2d_3x3(in[0], in[1], in[2]), w);
                     };
                     return std::pair{std::vector<Array>{random_array(in_shape, rng), random_array({co, ci, 3, 3}, rng),
                                                         random_array({co}, rng)},
                                      f};
                   }});
  cases.push_back({"maxpool2", [](Rng& rng) {
                     const std::size_t c = pick(rng, 1, 3), h = 2 * pick(rng, 1, 3), wd = 2 * pick(rng, 1, 3);
                     Array w = random_array({c, h / 2, wd / 2}, rng);
                     ScalarFunction f = [w](Tape& t, std::span<const Var> in) {
                       return weighted_sum(t, ops::maxpool2(in[0]), w);
                     };
                     return std::pair{std::vector<Array>{distinct_values({c, h, wd}, rng)}, f};
                   }});
  cases.push_back({"batchnorm(train)", [](Rng& rng) {
                     const bool spatial = rng.uniform() < 0.5;
                     const std::size_t b = pick(rng, 2, 4), c = pick(rng, 1, 3);
                     Shape xs = spatial ? Shape{b, c, 2, 2} : Shape{b, c};
                     Array w = random_array(xs, rng);
                     Array rm(Shape{c}), rv = Array::filled({c}, 1.0);
                     ScalarFunction f = [w, rm, rv](Tape& t, std::span<const Var> in) {
                       return weighted_sum(t, ops::batchnorm(in[0], in[1], in[2], ops::NormMode::Train, rm, rv), w);
                     };
                     return std::pair{std::vector<Array>{random_array(xs, rng, -2.0, 2.0),
                                                         random_array({c}, rng, 0.5, 1.5), random_array({c}, rng)},
                                      f};
                   }});
  cases.push_back({"batchnorm(eval)", [](Rng& rng) {
                     const std::size_t b = pick(rng, 1, 3), c = pick(rng, 1, 4);
                     Array w = random_array({b, c}, rng);
                     Array rm = random_array({c}, rng), rv = random_array({c}, rng, 0.5, 2.0);
                     ScalarFunction f = [w, rm, rv](Tape& t, std::span<const Var> in) {
                       return weighted_sum(t, ops::batchnorm(in[0], in[1], in[2], ops::NormMode::Eval, rm, rv), w);
                     };
                     return std::pair{std::vector<Array>{random_array({b, c}, rng), random_array({c}, rng),
                                                         random_array({c}, rng)},
                                      f};
                   }});
  cases.push_back({"gru_cell", [](Rng& rng) {
                     const std::size_t din = pick(rng, 1, 3), dh = pick(rng, 1, 4);
                     const std::size_t steps = pick(rng, 1, 3);
                     std::vector<Array> in;
                     for (std::size_t s = 0; s < steps; ++s) in.push_back(random_array({din}, rng));
                     in.push_back(random_array({dh}, rng));
                     for (int gate = 0; gate < 3; ++gate) {
                       in.push_back(random_array({dh, din}, rng));
                       in.push_back(random_array({dh, dh}, rng));
                       in.push_back(random_array({dh}, rng));
                     }
                     Array w = random_array({dh}, rng);
                     ScalarFunction f = [w, steps](Tape& t, std::span<const Var> v) {
                       const std::size_t o = steps + 1;
                       ops::GruWeights gw{v[o], v[o + 1], v[o + 2], v[o + 3], v[o + 4], v[o + 5],
                                          v[o + 6], v[o + 7], v[o + 8]};
                       Var h = v[steps];
                       for (std::size_t s = 0; s < steps; ++s) h = ops::gru_cell(v[s], h, gw);
                       return weighted_sum(t, h, w);
                     };
                     return std::pair{std::move(in), f};
                   }});
  cases.push_back({"softmax", [](Rng& rng) {
                     const std::size_t n = pick(rng, 1, 6);
                     Array w = random_array({n}, rng);
                     ScalarFunction f = [w](Tape& t, std::span<const Var> in) {
                       return weighted_sum(t, ops::softmax(in[0]), w);
                     };
                     return std::pair{std::vector<Array>{random_array({n}, rng, -3.0, 3.0)}, f};
                   }});
  cases.push_back({"log_softmax", [](Rng& rng) {
                     const std::size_t n = pick(rng, 1, 6);
                     Array w = random_array({n}, rng);
                     ScalarFunction f = [w](Tape& t, std::span<const Var> in) {
                       return weighted_sum(t, ops::log_softmax(in[0]), w);
                     };
                     return std::pair{std::vector<Array>{random_array({n}, rng, -3.0, 3.0)}, f};
                   }});
  cases.push_back({"euclidean_distance", [](Rng& rng) {
                     const std::size_t n = pick(rng, 1, 6);
                     ScalarFunction f = [](Tape&, std::span<const Var> in) {
                       return ops::euclidean_distance(in[0], in[1]);
                     };
                     return std::pair{std::vector<Array>{random_array({n}, rng), random_array({n}, rng, 1.5, 2.5)}, f};
                   }});
  cases.push_back({"running_mean", [](Rng& rng) {
                     const std::size_t n = pick(rng, 1, 6);
                     const std::size_t count = pick(rng, 0, 5);
                     const Array w = random_array({n}, rng);
                     ScalarFunction f = [count, w](Tape& t, std::span<const Var> in) {
                       return ops::sum(ops::mul(ops::running_mean(in[0], in[1], count), t.constant(w)));
                     };
                     return std::pair{std::vector<Array>{random_array({n}, rng), random_array({n}, rng)}, f};
                   }});
  return cases;
}

}  // namespace

std::vector<OpCheckSummary> run_gradient_suite(int seeds, double tolerance, std::uint64_t base_seed) {
  std::vector<OpCheckSummary> out;
  const auto cases = op_cases();
  for (std::size_t c = 0; c < cases.size(); ++c) {
    OpCheckSummary s;
    s.op = cases[c].name;
    s.passed = true;
    for (int seed = 0; seed < seeds; ++seed) {
      Rng rng(mix_seed(base_seed, c * 100003 + static_cast<std::uint64_t>(seed)));
      auto [point, f] = cases[c].make(rng);
      const GradCheckReport r = grad_check(f, point, tolerance);
      s.worst_rel_error = std::max(s.worst_rel_error, r.max_rel_error);
      s.passed = s.passed && r.passed;
      ++s.seeds;
    }
    out.push_back(s);
  }
  return out;
}

}  // namespace cmem
