#include "sdda/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace sdda {

std::vector<std::string> GradCheckReport::failing_leaves() const {
  std::vector<std::string> out;
  for (const auto& leaf : leaves) {
    if (!leaf.passed) out.push_back(leaf.name);
  }
  return out;
}

std::string GradCheckReport::summary() const {
  std::ostringstream os;
  os.precision(3);
  for (const auto& leaf : leaves) {
    os << (leaf.passed ? "ok   " : "FAIL ") << leaf.name << " max_err=" << std::scientific << leaf.max_error;
    if (!leaf.passed) {
      os << " at [" << leaf.worst_index << "] analytic=" << leaf.analytic << " numeric=" << leaf.numeric;
    }
    os << '\n';
  }
  return os.str();
}

GradCheckReport grad_check(Graph<double>& graph, Var<double> root, const Bindings<double>& bindings, double step,
                           double tol) {
  if (!std::isfinite(step) || !(step > 0.0) || !std::isnormal(step)) {
    throw GraphError("grad_check step must be a positive normal number");
  }
  graph.forward(root, bindings);
  const Gradients<double> analytic = graph.backward();

  GradCheckReport report;
  report.tolerance = tol;
  Bindings<double> probe = bindings;
  for (const auto& [name, grad] : analytic) {
    auto bound = bindings.find(name);
    const Tensor<double> base = bound != bindings.end() ? bound->second : graph.parameter_default(name);
    LeafCheck check;
    check.name = name;
    for (std::size_t i = 0; i < base.size(); ++i) {
      Tensor<double> shifted = base;
      shifted[i] = base[i] + step;
      probe[name] = shifted;
      const double up = graph.forward(root, probe).item();
      shifted[i] = base[i] - step;
      probe[name] = shifted;
      const double down = graph.forward(root, probe).item();
      const double numeric = (up - down) / (2.0 * step);
      const double a = grad[i];
      const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), kGradCheckFloor});
      if (i == 0 || err > check.max_error || std::isnan(err)) {
        check.max_error = err;
        check.worst_index = i;
        check.analytic = a;
        check.numeric = numeric;
      }
    }
    probe[name] = base;
    check.passed = check.max_error <= tol;  // NaN fails
    report.passed = report.passed && check.passed;
    report.leaves.push_back(check);
  }
  // leave the graph in its unperturbed state
  graph.forward(root, bindings);
  return report;
}

}  // namespace sdda
