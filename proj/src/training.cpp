#include "augmult/training.hpp"

#include <atomic>
#include <chrono>
#include <cmath>

#include "augmult/analysis.hpp"
#include "augmult/errors.hpp"
#include "augmult/rng.hpp"

namespace augmult {

namespace {
constexpr uint64_t kParamStream = 0x706172616dULL;  // "param"
constexpr uint64_t kDropStream = 0x64726f70ULL;     // "drop"
}  // namespace

std::string schedule_name(SchedKind s) {
  switch (s) {
    case SchedKind::kStepHalving: return "STEP_HALVING";
    case SchedKind::kCosine: return "COSINE";
    case SchedKind::kConstant: return "CONSTANT";
  }
  return "?";
}

SchedKind schedule_from_name(const std::string& s) {
  if (s == "STEP_HALVING") return SchedKind::kStepHalving;
  if (s == "COSINE") return SchedKind::kCosine;
  if (s == "CONSTANT") return SchedKind::kConstant;
  throw ConfigError("unknown schedule '" + s + "'");
}

void validate_config(const TrainConfig& cfg) {
  if (!scheme_valid(cfg.scheme)) throw ConfigError("invalid scheme");
  if (cfg.n < 1) throw ConfigError("n must be >= 1");
  if (cfg.base_lr <= 0.0) throw ConfigError("base_lr must be > 0");
  if (cfg.weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
  if (cfg.momentum < 0.0 || cfg.momentum >= 1.0) throw ConfigError("momentum must be in [0,1)");
  if (cfg.epoch_budget < 1) throw ConfigError("epoch_budget must be >= 1");
  if (cfg.label_smoothing < 0.0 || cfg.label_smoothing > 1.0)
    throw ConfigError("label_smoothing must be in [0,1]");
  if (cfg.dropout_p < 0.0 || cfg.dropout_p >= 1.0) throw ConfigError("dropout_p must be in [0,1)");
  if (cfg.schedule == SchedKind::kStepHalving && cfg.epoch_budget % 20 != 0)
    throw ConfigError("step-halving schedule requires the epoch budget to be divisible by 20");
}

double lr_at(SchedKind schedule, double base_lr, int64_t epoch, int64_t budget) {
  if (epoch < 0 || epoch > budget) throw ConfigError("epoch out of range for schedule");
  switch (schedule) {
    case SchedKind::kConstant:
      return base_lr;
    case SchedKind::kCosine:
      return base_lr * (1.0 + std::cos(M_PI * static_cast<double>(epoch) / static_cast<double>(budget))) / 2.0;
    case SchedKind::kStepHalving: {
      if (budget % 20 != 0)
        throw ConfigError("step-halving schedule requires the epoch budget to be divisible by 20");
      int64_t half = budget / 2;
      if (epoch < half) return base_lr;
      int64_t interval = budget / 20;
      int64_t halvings = 1 + (epoch - half) / interval;
      if (halvings > 10) halvings = 10;
      return base_lr / static_cast<double>(int64_t{1} << halvings);
    }
  }
  throw ConfigError("unknown schedule");
}

double temperature(const TrainConfig& cfg) { return cfg.base_lr * cfg.n; }

ImageGrad slot_loss_grad(const SmallResNet& model, const ParamSet& params, const Tensor& image,
                         int label, uint64_t aug_seed_value, const AugPolicy& policy,
                         double label_smoothing, const DropoutMask* mask) {
  Tensor aug = apply(image, draw_sample(policy, aug_seed_value), policy);
  Tape tape;
  std::vector<Tape::NodeId> pn = model.bind(tape, params);
  Tape::NodeId img = tape.leaf(std::move(aug));
  Tape::NodeId logits = model.forward_one(tape, pn, img, mask);
  Tape::NodeId loss = tape.softmax_cross_entropy(logits, label, label_smoothing);
  std::vector<Tensor> all = tape.backward(loss);

  ImageGrad out;
  out.loss = tape.value(loss)[0];
  out.grads.reserve(pn.size());
  // bind() creates the parameter leaves first, so their ids are 0..P-1.
  for (Tape::NodeId id : pn) out.grads.push_back(std::move(all[static_cast<size_t>(id)]));
  return out;
}

ImageGrad averaged_image_loss_grad(const SmallResNet& model, const ParamSet& params,
                                   const Tensor& image, int label,
                                   const std::vector<uint64_t>& aug_seeds,
                                   const AugPolicy& policy, const GradOptions& opts) {
  if (aug_seeds.empty()) throw ConfigError("averaged_image_loss_grad: no augmentation seeds");
  std::vector<std::vector<Tensor>> slot_grads;
  std::vector<double> slot_losses;
  slot_grads.reserve(aug_seeds.size());
  slot_losses.reserve(aug_seeds.size());
  for (uint64_t seed : aug_seeds) {
    DropoutMask local;
    const DropoutMask* mask = opts.fixed_mask;
    if (!mask && opts.dropout_p > 0.0) {
      local = draw_dropout_mask(model.feature_width(), opts.dropout_p,
                                hash_combine(seed, kDropStream));
      mask = &local;
    }
    ImageGrad sg = slot_loss_grad(model, params, image, label, seed, policy,
                                  opts.label_smoothing, mask);
    slot_losses.push_back(sg.loss);
    slot_grads.push_back(std::move(sg.grads));
  }
  ImageGrad out;
  out.loss = pairwise_mean_values(slot_losses);
  out.grads = pairwise_mean_lists(slot_grads);
  return out;
}

BatchGradient batch_gradient(const SmallResNet& model, const ParamSet& params,
                             const Dataset& data, const std::vector<Slot>& batch,
                             const AugPolicy& policy, const GradOptions& opts) {
  if (batch.empty()) throw ConfigError("batch_gradient: empty batch");

  // Consecutive slots with the same id are the augmentation group of one
  // unique image.
  struct Group {
    int32_t id;
    size_t begin, end;
  };
  std::vector<Group> groups;
  size_t i = 0;
  while (i < batch.size()) {
    size_t j = i;
    while (j < batch.size() && batch[j].image_id == batch[i].image_id) ++j;
    groups.push_back({batch[i].image_id, i, j});
    i = j;
  }

  std::vector<std::vector<Tensor>> image_grads(groups.size());
  std::vector<double> image_losses(groups.size(), 0.0);
  std::atomic<bool> failed{false};

  GradOptions serial_opts = opts;
  serial_opts.parallel = false;

  auto eval_group = [&](size_t g) {
    if (failed.load(std::memory_order_relaxed)) return;
    try {
      const Group& grp = groups[g];
      std::vector<uint64_t> seeds;
      seeds.reserve(grp.end - grp.begin);
      for (size_t s = grp.begin; s < grp.end; ++s) seeds.push_back(batch[s].aug_seed);
      Tensor image = data.image(grp.id);
      int label = data.labels[static_cast<size_t>(grp.id)];
      ImageGrad ig =
          averaged_image_loss_grad(model, params, image, label, seeds, policy, serial_opts);
      image_losses[g] = ig.loss;
      image_grads[g] = std::move(ig.grads);
    } catch (const NumericalError&) {
      failed.store(true, std::memory_order_relaxed);
    }
  };

  if (opts.parallel) {
#pragma omp parallel for schedule(dynamic)
    for (int64_t g = 0; g < static_cast<int64_t>(groups.size()); ++g)
      eval_group(static_cast<size_t>(g));
  } else {
    for (size_t g = 0; g < groups.size(); ++g) eval_group(g);
  }

  BatchGradient out;
  if (failed.load()) {
    out.finite = false;
    return out;
  }
  out.loss = pairwise_mean_values(image_losses);
  out.grads = pairwise_mean_lists(image_grads);
  for (const Tensor& t : out.grads)
    if (!t.all_finite()) out.finite = false;
  if (!std::isfinite(out.loss)) out.finite = false;
  return out;
}

void sgd_step(ParamSet& params, std::vector<Tensor>& velocity,
              const std::vector<Tensor>& grads, double lr, double momentum,
              double weight_decay) {
  if (velocity.size() != params.params.size() || grads.size() != params.params.size())
    throw ShapeError("sgd_step: parameter/velocity/gradient arity mismatch");
  for (size_t p = 0; p < params.params.size(); ++p) {
    Tensor& theta = params.params[p].value;
    Tensor& v = velocity[p];
    const Tensor& g = grads[p];
    if (!same_shape(theta, v) || !same_shape(theta, g))
      throw ShapeError("sgd_step: shape mismatch at parameter " + params.params[p].name);
    for (size_t i = 0; i < theta.data.size(); ++i) {
      v.data[i] = momentum * v.data[i] + (g.data[i] + weight_decay * theta.data[i]);
      theta.data[i] -= lr * v.data[i];
    }
    if (!theta.all_finite())
      throw NumericalError("sgd_step: non-finite parameters in " + params.params[p].name);
  }
}

std::vector<Tensor> zero_velocity(const ParamSet& params) {
  std::vector<Tensor> v;
  v.reserve(params.params.size());
  for (const Param& p : params.params) v.emplace_back(p.value.shape);
  return v;
}

std::string status_name(RunStatus s) {
  switch (s) {
    case RunStatus::kRunning: return "RUNNING";
    case RunStatus::kFinal: return "FINAL";
    case RunStatus::kDiverged: return "DIVERGED";
  }
  return "?";
}

TrainOutcome train(const SmallResNet& model, const TrainConfig& cfg, const AugPolicy& policy,
                   const Dataset& train_data, const Dataset& test_data,
                   const std::function<void(const EvalPoint&)>& emit, bool parallel,
                   bool record_wall) {
  validate_config(cfg);
  auto start = std::chrono::steady_clock::now();
  auto wall_ms = [&]() -> int64_t {
    if (!record_wall) return 0;
    return std::chrono::duration_cast<std::chrono::milliseconds>(
               std::chrono::steady_clock::now() - start)
        .count();
  };

  TrainOutcome out;
  out.params = model.init(hash_combine(cfg.run_seed, kParamStream));
  std::vector<Tensor> velocity = zero_velocity(out.params);

  GradOptions opts;
  opts.label_smoothing = cfg.label_smoothing;
  opts.dropout_p = cfg.dropout_p;
  opts.parallel = parallel;

  int64_t passes_per_epoch = cfg.scheme.placement == Placement::kNeighbouring ? cfg.n : 1;
  int64_t step = 0;

  auto emit_point = [&](int64_t epochs_done, RunStatus status, double loss, double acc) {
    EvalPoint pt;
    pt.step = step;
    pt.epoch = epochs_done;
    pt.dataset_passes = epochs_done * passes_per_epoch;
    pt.train_loss_raw = loss;
    pt.test_acc = acc;
    pt.status = status;
    pt.wall_ms = wall_ms();
    emit(pt);
  };

  for (int64_t epoch = 0; epoch < cfg.epoch_budget; ++epoch) {
    double lr = lr_at(cfg.schedule, cfg.base_lr, epoch, cfg.epoch_budget);
    BatchPlan plan =
        plan_epoch(cfg.scheme, cfg.n, cfg.b_or_u, train_data.size(), epoch, cfg.run_seed);
    for (const std::vector<Slot>& batch : plan.batches) {
      BatchGradient bg = batch_gradient(model, out.params, train_data, batch, policy, opts);
      bool ok = bg.finite;
      if (ok) {
        try {
          sgd_step(out.params, velocity, bg.grads, lr, cfg.momentum, cfg.weight_decay);
        } catch (const NumericalError&) {
          ok = false;
        }
      }
      if (!ok) {
        out.final_status = RunStatus::kDiverged;
        out.steps = step;
        emit_point(epoch, RunStatus::kDiverged, std::nan(""), 0.0);
        return out;
      }
      ++step;
    }
    EvalMetrics train_m = eval_raw(model, out.params, train_data, parallel);
    EvalMetrics test_m = eval_raw(model, out.params, test_data, parallel);
    bool last = epoch + 1 == cfg.epoch_budget;
    emit_point(epoch + 1, last ? RunStatus::kFinal : RunStatus::kRunning, train_m.loss,
               test_m.accuracy);
  }
  out.final_status = RunStatus::kFinal;
  out.steps = step;
  return out;
}

}  // namespace augmult
