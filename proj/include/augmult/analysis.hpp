#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "augmult/augment.hpp"
#include "augmult/batching.hpp"
#include "augmult/data.hpp"
#include "augmult/model.hpp"

namespace augmult {

// Two-level gradient variance summary: unbiased per-parameter variance
// across sampled minibatch gradients, averaged within each layer, then
// averaged across layers.
struct VarianceReport {
  std::map<std::string, double> per_layer;  // sorted keys, stable serialization
  double overall = 0.0;
  int64_t sample_count = 0;
  std::string size_mode;
  std::string placement;
  int n = 0;
  int64_t b_or_u = 0;

  std::string to_json() const;
  static VarianceReport from_json(const std::string& text);
};

using GradSample = std::map<std::string, Tensor>;
using GradSampleFn = std::function<GradSample(int64_t batch_index)>;

// Core estimator over any gradient source; the toy enumeration oracle in the
// tests drives this with hand-built samplers.
VarianceReport estimate_variance(const GradSampleFn& sample, int64_t num_batches);

// Production sampler: num_batches independent minibatch gradients at the
// given (freshly initialized) parameters, fresh id draws and fresh
// augmentation noise per batch, ids drawn with replacement across batches
// and without replacement within a batch. Weight decay never enters the raw
// gradient, so the L2-free precondition holds by construction.
VarianceReport grad_variance(const SmallResNet& model, const ParamSet& init_params,
                             const Dataset& data, const Scheme& scheme, int n, int64_t b_or_u,
                             int64_t num_batches, uint64_t seed, const AugPolicy& policy,
                             bool parallel = true);

// Mean gradient over explicit dropout masks; the enumeration tests pass all
// 2^d masks here.
std::vector<Tensor> average_gradient_over_masks(
    const std::function<std::vector<Tensor>(const DropoutMask&)>& grad_of_mask,
    const std::vector<DropoutMask>& masks);

// Appendix-style dropout multiplicity: the mean of n_masks minibatch
// gradients, one independent mask each, identical inputs each time
// (augmentation multiplicity pinned to 1).
std::vector<Tensor> dropout_avg_gradient(const SmallResNet& model, const ParamSet& params,
                                         const Dataset& data, const std::vector<Slot>& batch,
                                         const AugPolicy& policy, int n_masks, double drop_p,
                                         uint64_t seed, double label_smoothing = 0.0,
                                         bool parallel = true);

struct EvalMetrics {
  double loss = 0.0;
  double accuracy = 0.0;
};

// Deterministic full-split pass in eval mode: no augmentation, no dropout.
// Mean cross entropy and top-1 accuracy; argmax ties go to the lowest class
// index.
EvalMetrics eval_raw(const SmallResNet& model, const ParamSet& params, const Dataset& data,
                     bool parallel = true);

}  // namespace augmult
