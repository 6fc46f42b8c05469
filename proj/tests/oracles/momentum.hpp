#pragma once

// Hand-unrolled 1-D SGD-with-momentum recurrence on a quadratic loss
// 0.5*a*theta^2 (gradient a*theta). Reference for the optimizer step.

#include <vector>

namespace oracles {

struct MomentumTrace {
  std::vector<double> theta;
  std::vector<double> velocity;
};

inline MomentumTrace momentum_recurrence_1d(double theta0, double a, double lr, double momentum,
                                            double weight_decay, int steps) {
  MomentumTrace t;
  double theta = theta0, v = 0.0;
  t.theta.push_back(theta);
  t.velocity.push_back(v);
  for (int s = 0; s < steps; ++s) {
    double g = a * theta;
    v = momentum * v + (g + weight_decay * theta);
    theta = theta - lr * v;
    t.theta.push_back(theta);
    t.velocity.push_back(v);
  }
  return t;
}

}  // namespace oracles
