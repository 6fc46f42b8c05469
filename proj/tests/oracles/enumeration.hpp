#pragma once

// Exhaustive reference computations for the variance and dropout analyses:
// exact minibatch-gradient variance by enumerating every (batch composition x
// augmentation assignment) outcome, and full dropout-mask enumeration.
// Test-only; independent of the estimators it checks.

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "augmult/model.hpp"

namespace oracles {

// A finite explicit augmentation space: gradient of one example under one
// augmentation outcome, as a flat per-layer vector.
using LayerVec = std::map<std::string, std::vector<double>>;

struct EnumerableAugSpace {
  // per_example[id][aug] -> gradient vector per layer
  std::vector<std::vector<LayerVec>> per_example;
  size_t num_augs() const { return per_example.empty() ? 0 : per_example[0].size(); }
};

namespace detail {

inline void accumulate(LayerVec& acc, const LayerVec& v, double scale) {
  for (const auto& [k, vec] : v) {
    auto& a = acc[k];
    if (a.empty()) a.assign(vec.size(), 0.0);
    for (size_t i = 0; i < vec.size(); ++i) a[i] += scale * vec[i];
  }
}

// All U-subsets of {0..N-1}, lexicographic.
inline std::vector<std::vector<int>> subsets(int n, int u) {
  std::vector<std::vector<int>> out;
  std::vector<int> cur(static_cast<size_t>(u));
  for (int i = 0; i < u; ++i) cur[static_cast<size_t>(i)] = i;
  while (true) {
    out.push_back(cur);
    int i = u - 1;
    while (i >= 0 && cur[static_cast<size_t>(i)] == n - u + i) --i;
    if (i < 0) break;
    ++cur[static_cast<size_t>(i)];
    for (int j = i + 1; j < u; ++j) cur[static_cast<size_t>(j)] = cur[static_cast<size_t>(j - 1)] + 1;
  }
  return out;
}

struct Moments {
  LayerVec mean, sq_mean;
  double weight = 0.0;
};

inline void add_outcome(Moments& m, const LayerVec& grad, double prob) {
  accumulate(m.mean, grad, prob);
  LayerVec sq;
  for (const auto& [k, vec] : grad) {
    auto& s = sq[k];
    s.resize(vec.size());
    for (size_t i = 0; i < vec.size(); ++i) s[i] = vec[i] * vec[i];
  }
  accumulate(m.sq_mean, sq, prob);
  m.weight += prob;
}

// Population variance collapsed the same two-level way as the estimator:
// per-parameter variance, mean within layer, mean across layers. Written
// independently of VarianceReport on purpose.
struct ExactVariance {
  std::map<std::string, double> per_layer;
  double overall = 0.0;
};

inline ExactVariance finish(const Moments& m) {
  if (std::abs(m.weight - 1.0) > 1e-9)
    throw std::logic_error("enumeration probabilities do not sum to 1");
  ExactVariance out;
  double total = 0.0;
  for (const auto& [k, sq] : m.sq_mean) {
    const auto& mean = m.mean.at(k);
    double layer = 0.0;
    for (size_t i = 0; i < sq.size(); ++i) layer += sq[i] - mean[i] * mean[i];
    layer /= static_cast<double>(sq.size());
    out.per_layer[k] = layer;
    total += layer;
  }
  out.overall = total / static_cast<double>(out.per_layer.size());
  return out;
}

}  // namespace detail

// Exact variance of the minibatch gradient when a batch is a uniform
// U-subset of examples and each of the n slots of an example draws an
// augmentation independently and uniformly from the space. Outcome count is
// C(N,U) * |A|^(U*n); the caller keeps the toy small.
inline detail::ExactVariance exact_grad_variance(const EnumerableAugSpace& space, int unique,
                                                 int n, int64_t max_outcomes = 1000000) {
  int num_examples = static_cast<int>(space.per_example.size());
  int num_augs = static_cast<int>(space.num_augs());
  auto combos = detail::subsets(num_examples, unique);

  int slots = unique * n;
  double assigns = 1.0;
  for (int s = 0; s < slots; ++s) assigns *= num_augs;
  if (static_cast<double>(combos.size()) * assigns > static_cast<double>(max_outcomes))
    throw std::invalid_argument("augmentation space too large to enumerate");

  detail::Moments m;
  double p_subset = 1.0 / static_cast<double>(combos.size());
  std::vector<int> assign(static_cast<size_t>(slots), 0);
  for (const auto& subset : combos) {
    std::fill(assign.begin(), assign.end(), 0);
    double p_assign = p_subset / assigns;
    while (true) {
      LayerVec grad;
      for (int u = 0; u < unique; ++u)
        for (int s = 0; s < n; ++s)
          detail::accumulate(grad,
                             space.per_example[static_cast<size_t>(subset[static_cast<size_t>(u)])]
                                              [static_cast<size_t>(assign[static_cast<size_t>(u * n + s)])],
                             1.0 / slots);
      detail::add_outcome(m, grad, p_assign);
      int i = slots - 1;
      while (i >= 0 && assign[static_cast<size_t>(i)] == num_augs - 1) {
        assign[static_cast<size_t>(i)] = 0;
        --i;
      }
      if (i < 0) break;
      ++assign[static_cast<size_t>(i)];
    }
  }
  return detail::finish(m);
}

// Variance when every example contributes its exact augmentation
// expectation (each augmentation exactly once per image): only the
// subsampling term survives.
inline detail::ExactVariance exact_subsampling_variance(const EnumerableAugSpace& space,
                                                        int unique) {
  int num_examples = static_cast<int>(space.per_example.size());
  int num_augs = static_cast<int>(space.num_augs());
  auto combos = detail::subsets(num_examples, unique);
  detail::Moments m;
  double p = 1.0 / static_cast<double>(combos.size());
  for (const auto& subset : combos) {
    LayerVec grad;
    for (int id : subset)
      for (int a = 0; a < num_augs; ++a)
        detail::accumulate(grad, space.per_example[static_cast<size_t>(id)][static_cast<size_t>(a)],
                           1.0 / (static_cast<double>(unique) * num_augs));
    detail::add_outcome(m, grad, p);
  }
  return detail::finish(m);
}

// All 2^d keep-masks over d units.
inline std::vector<augmult::DropoutMask> all_masks(int d, double drop_p) {
  std::vector<augmult::DropoutMask> masks;
  masks.reserve(size_t{1} << d);
  for (uint32_t bits = 0; bits < (uint32_t{1} << d); ++bits) {
    augmult::DropoutMask m;
    m.drop_p = drop_p;
    m.seed = bits;
    m.keep.resize(static_cast<size_t>(d));
    for (int i = 0; i < d; ++i) m.keep[static_cast<size_t>(i)] = (bits >> i) & 1u;
    masks.push_back(std::move(m));
  }
  return masks;
}

}  // namespace oracles
