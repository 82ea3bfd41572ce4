#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mtdqn/tensor.hpp"

namespace mtdqn {

// Central finite differences of a scalar function, one coordinate at a time:
// (f(x + eps*e_i) - f(x - eps*e_i)) / (2*eps).
std::vector<double> finite_diff_grad(
    const std::function<double(std::span<const double>)>& f,
    std::span<const double> x, double eps);

struct GradCheckCase {
  std::string name;
  double worst_rel_error = 0.0;
  bool passed = false;
};

struct GradCheckReport {
  std::vector<GradCheckCase> cases;
  bool all_passed() const;
};

// Compares analytic gradients against central finite differences for every
// differentiable operation and for the composed module forwards. Each case
// uses >= 10 random probe points; deterministic under the given seed.
GradCheckReport run_gradcheck(std::uint64_t seed);

// Relative-error comparison used by the report and by tests:
// |a - b| / max(1, |a|, |b|).
double relative_error(double a, double b);

}  // namespace mtdqn
