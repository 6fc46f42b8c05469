#pragma once

// Multinomial logistic-regression probe trained with plain gradient descent
// on flattened pixels. Oracle for dataset separability; no tape involved.

#include <cmath>
#include <vector>

#include "augmult/data.hpp"

namespace oracles {

inline double linear_probe_test_accuracy(const augmult::Dataset& train,
                                         const augmult::Dataset& test, int iters = 400,
                                         double lr = 0.5) {
  int64_t n = train.size();
  int64_t d = train.images.numel() / n;
  int classes = train.classes;
  std::vector<double> w(static_cast<size_t>(classes * d), 0.0);
  std::vector<double> b(static_cast<size_t>(classes), 0.0);
  std::vector<double> logits(static_cast<size_t>(classes));

  for (int it = 0; it < iters; ++it) {
    std::vector<double> gw(w.size(), 0.0), gb(b.size(), 0.0);
    for (int64_t i = 0; i < n; ++i) {
      const double* x = &train.images.data[static_cast<size_t>(i * d)];
      double mx = -1e300;
      for (int k = 0; k < classes; ++k) {
        double acc = b[static_cast<size_t>(k)];
        for (int64_t j = 0; j < d; ++j) acc += w[static_cast<size_t>(k * d + j)] * x[j];
        logits[static_cast<size_t>(k)] = acc;
        mx = std::max(mx, acc);
      }
      double sum = 0.0;
      for (int k = 0; k < classes; ++k) sum += std::exp(logits[static_cast<size_t>(k)] - mx);
      for (int k = 0; k < classes; ++k) {
        double p = std::exp(logits[static_cast<size_t>(k)] - mx) / sum;
        double delta = p - (train.labels[static_cast<size_t>(i)] == k ? 1.0 : 0.0);
        gb[static_cast<size_t>(k)] += delta;
        for (int64_t j = 0; j < d; ++j) gw[static_cast<size_t>(k * d + j)] += delta * x[j];
      }
    }
    for (size_t j = 0; j < w.size(); ++j) w[j] -= lr * gw[j] / static_cast<double>(n);
    for (size_t j = 0; j < b.size(); ++j) b[j] -= lr * gb[j] / static_cast<double>(n);
  }

  int64_t hits = 0;
  int64_t tn = test.size();
  for (int64_t i = 0; i < tn; ++i) {
    const double* x = &test.images.data[static_cast<size_t>(i * d)];
    int best = 0;
    double bestv = -1e300;
    for (int k = 0; k < classes; ++k) {
      double acc = b[static_cast<size_t>(k)];
      for (int64_t j = 0; j < d; ++j) acc += w[static_cast<size_t>(k * d + j)] * x[j];
      if (acc > bestv) {
        bestv = acc;
        best = k;
      }
    }
    if (best == test.labels[static_cast<size_t>(i)]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(tn);
}

}  // namespace oracles
