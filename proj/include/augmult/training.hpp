#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "augmult/augment.hpp"
#include "augmult/batching.hpp"
#include "augmult/data.hpp"
#include "augmult/model.hpp"

namespace augmult {

enum class SchedKind { kStepHalving, kCosine, kConstant };

std::string schedule_name(SchedKind s);
SchedKind schedule_from_name(const std::string& s);

struct TrainConfig {
  Scheme scheme;
  int n = 1;
  int64_t b_or_u = 64;  // U for the growing scheme, B for the fixed schemes
  double base_lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  SchedKind schedule = SchedKind::kConstant;
  int64_t epoch_budget = 1;
  double label_smoothing = 0.0;
  double dropout_p = 0.0;
  uint64_t run_seed = 1;
};

void validate_config(const TrainConfig& cfg);

// Learning rate at an epoch. Step halving holds the base rate for the first
// half of the budget, then halves every budget/20 epochs, at most 10 times
// (so the budget must be divisible by 20).
double lr_at(SchedKind schedule, double base_lr, int64_t epoch, int64_t budget);

// The collapse variable of the temperature sweeps: base_lr * n.
double temperature(const TrainConfig& cfg);

struct GradOptions {
  double label_smoothing = 0.0;
  double dropout_p = 0.0;                   // per-slot counter-seeded masks when > 0
  const DropoutMask* fixed_mask = nullptr;  // same mask for every slot (overrides dropout_p)
  bool parallel = true;
};

struct ImageGrad {
  double loss = 0.0;
  std::vector<Tensor> grads;  // one per model parameter
};

// Loss and gradient for one slot: augment, forward, backward.
ImageGrad slot_loss_grad(const SmallResNet& model, const ParamSet& params, const Tensor& image,
                         int label, uint64_t aug_seed_value, const AugPolicy& policy,
                         double label_smoothing, const DropoutMask* mask);

// The multi-sample average: mean loss and mean gradient over the n
// augmented copies of one image (one slot seed each).
ImageGrad averaged_image_loss_grad(const SmallResNet& model, const ParamSet& params,
                                   const Tensor& image, int label,
                                   const std::vector<uint64_t>& aug_seeds,
                                   const AugPolicy& policy, const GradOptions& opts);

struct BatchGradient {
  double loss = 0.0;
  std::vector<Tensor> grads;
  bool finite = true;
};

// Minibatch gradient: per-image averages first, then the mean over unique
// images, both via fixed-order pairwise trees so the result is identical
// whether the per-image evaluations ran serially or across OpenMP threads.
BatchGradient batch_gradient(const SmallResNet& model, const ParamSet& params,
                             const Dataset& data, const std::vector<Slot>& batch,
                             const AugPolicy& policy, const GradOptions& opts);

// v <- momentum*v + (g + weight_decay*theta); theta <- theta - lr*v.
// Throws NumericalError when the update produces non-finite parameters.
void sgd_step(ParamSet& params, std::vector<Tensor>& velocity,
              const std::vector<Tensor>& grads, double lr, double momentum,
              double weight_decay);

std::vector<Tensor> zero_velocity(const ParamSet& params);

enum class RunStatus { kRunning, kFinal, kDiverged };
std::string status_name(RunStatus s);

struct EvalPoint {
  int64_t step = 0;
  int64_t epoch = 0;           // epochs completed
  int64_t dataset_passes = 0;  // epoch plans re-visit ids n times under neighbouring placement
  double train_loss_raw = 0.0;
  double test_acc = 0.0;
  int64_t wall_ms = 0;
  RunStatus status = RunStatus::kRunning;
};

struct TrainOutcome {
  RunStatus final_status = RunStatus::kFinal;
  int64_t steps = 0;
  ParamSet params;
};

// Full training run: plan_epoch per epoch, batch_gradient per batch,
// sgd_step per update. Emits an EvalPoint (raw train loss, test accuracy)
// at every epoch boundary; the last one is FINAL, or DIVERGED on a
// non-finite loss or update.
TrainOutcome train(const SmallResNet& model, const TrainConfig& cfg, const AugPolicy& policy,
                   const Dataset& train_data, const Dataset& test_data,
                   const std::function<void(const EvalPoint&)>& emit, bool parallel = true,
                   bool record_wall = true);

}  // namespace augmult
