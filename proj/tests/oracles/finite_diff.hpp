#pragma once

// Central finite differences over arbitrary scalar-valued closures. Test-only
// reference; shares no code with the tape's adjoints.

#include <cmath>
#include <functional>

#include "augmult/tensor.hpp"

namespace oracles {

// d f / d x[i] with x mutated in place and restored.
inline double central_diff(const std::function<double()>& f, augmult::Tensor& x, int64_t i,
                           double h) {
  double orig = x[i];
  x[i] = orig + h;
  double fp = f();
  x[i] = orig - h;
  double fm = f();
  x[i] = orig;
  return (fp - fm) / (2.0 * h);
}

inline double rel_error(double a, double b) {
  double denom = std::max({std::abs(a), std::abs(b), 1e-6});
  return std::abs(a - b) / denom;
}

}  // namespace oracles
