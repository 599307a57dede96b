#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "conceptmem/tape.hpp"

namespace cmem {

struct GradCheckReport {
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  bool passed = false;
  /// Location of the worst entry: input index and flat element index.
  std::size_t worst_input = 0;
  std::size_t worst_element = 0;
};

/// Builds a scalar node from leaf inputs placed on the tape.
using ScalarFunction = std::function<Var(Tape&, std::span<const Var>)>;

inline constexpr double kGradCheckStep = 1e-5;
/// Gradients smaller than this are compared absolutely rather than relatively,
/// so finite-difference round-off on near-zero entries does not dominate.
inline constexpr double kGradCheckFloor = 1e-4;

double relative_error(double analytic, double numeric);

/// Compares the tape gradient of `f` at `point` against central differences.
/// Throws UsageError if `f` is not scalar-valued or tolerance <= 0.
GradCheckReport grad_check(const ScalarFunction& f, const std::vector<Array>& point, double tolerance,
                           double step = kGradCheckStep);

struct OpCheckSummary {
  std::string op;
  int seeds = 0;
  double worst_rel_error = 0.0;
  bool passed = false;
};

/// Runs every differentiable op on randomized small shapes, one grad_check per
/// seed.
std::vector<OpCheckSummary> run_gradient_suite(int seeds, double tolerance, std::uint64_t base_seed = 1);

}  // namespace cmem
