#pragma once

#include <string>
#include <vector>

#include "sdda/autodiff.hpp"

namespace sdda {

struct LeafCheck {
  std::string name;
  double max_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;  // at worst_index
  double numeric = 0.0;
  bool passed = true;
};

struct GradCheckReport {
  std::vector<LeafCheck> leaves;
  double tolerance = 0.0;
  bool passed = true;

  std::vector<std::string> failing_leaves() const;
  std::string summary() const;
};

// Errors are |analytic - numeric| / max(|analytic|, |numeric|, kGradCheckFloor).
inline constexpr double kGradCheckFloor = 1e-3;

// Compares backward() against central differences for every parameter leaf of `graph`.
// Runs in 64-bit precision only.
GradCheckReport grad_check(Graph<double>& graph, Var<double> root, const Bindings<double>& bindings, double step,
                           double tol);

}  // namespace sdda
