#include "augmult/analysis.hpp"

#include <atomic>
#include <cmath>

#include <nlohmann/json.hpp>

#include "augmult/errors.hpp"
#include "augmult/rng.hpp"
#include "augmult/training.hpp"

namespace augmult {

namespace {
constexpr uint64_t kVarIdStream = 0x766172696473ULL;   // "varids"
constexpr uint64_t kVarAugStream = 0x766172617567ULL;  // "varaug"
constexpr uint64_t kDropMaskStream = 0x646d61736bULL;  // "dmask"
}  // namespace

std::string VarianceReport::to_json() const {
  nlohmann::json j;
  j["per_layer"] = per_layer;  // std::map keeps keys sorted
  j["overall"] = overall;
  j["sample_count"] = sample_count;
  j["size_mode"] = size_mode;
  j["placement"] = placement;
  j["n"] = n;
  j["b_or_u"] = b_or_u;
  return j.dump();
}

VarianceReport VarianceReport::from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  VarianceReport r;
  r.per_layer = j.at("per_layer").get<std::map<std::string, double>>();
  r.overall = j.at("overall").get<double>();
  r.sample_count = j.at("sample_count").get<int64_t>();
  r.size_mode = j.value("size_mode", "");
  r.placement = j.value("placement", "");
  r.n = j.value("n", 0);
  r.b_or_u = j.value("b_or_u", int64_t{0});
  return r;
}

VarianceReport estimate_variance(const GradSampleFn& sample, int64_t num_batches) {
  if (num_batches < 2) throw ConfigError("variance estimation needs at least two batches");

  // Welford accumulators per parameter entry, keyed by layer.
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> acc;  // mean, M2
  int64_t count = 0;
  for (int64_t b = 0; b < num_batches; ++b) {
    GradSample g = sample(b);
    if (g.empty()) throw ConfigError("gradient sample is empty");
    ++count;
    for (const auto& [layer, grad] : g) {
      if (!grad.all_finite()) throw NumericalError("non-finite gradient sample in " + layer);
      auto it = acc.find(layer);
      if (it == acc.end()) {
        if (count != 1) throw ConfigError("layer set changed between samples: " + layer);
        it = acc.emplace(layer, std::make_pair(std::vector<double>(grad.data.size(), 0.0),
                                               std::vector<double>(grad.data.size(), 0.0)))
                 .first;
      }
      auto& [mean, m2] = it->second;
      if (mean.size() != grad.data.size())
        throw ShapeError("gradient shape changed between samples: " + layer);
      for (size_t i = 0; i < grad.data.size(); ++i) {
        double delta = grad.data[i] - mean[i];
        mean[i] += delta / static_cast<double>(count);
        m2[i] += delta * (grad.data[i] - mean[i]);
      }
    }
  }

  VarianceReport report;
  report.sample_count = count;
  double layer_sum = 0.0;
  for (const auto& [layer, pair] : acc) {
    const auto& m2 = pair.second;
    double sum = 0.0;
    for (double v : m2) sum += v / static_cast<double>(count - 1);
    double layer_mean = sum / static_cast<double>(m2.size());
    report.per_layer[layer] = layer_mean;
    layer_sum += layer_mean;
  }
  report.overall = layer_sum / static_cast<double>(report.per_layer.size());
  return report;
}

VarianceReport grad_variance(const SmallResNet& model, const ParamSet& init_params,
                             const Dataset& data, const Scheme& scheme, int n, int64_t b_or_u,
                             int64_t num_batches, uint64_t seed, const AugPolicy& policy,
                             bool parallel) {
  int64_t unique;
  int slots_per_id;
  if (scheme.placement == Placement::kNeighbouring) {
    unique = b_or_u;
    slots_per_id = 1;
  } else {
    unique = scheme.size_mode == SizeMode::kGrowing ? b_or_u : b_or_u / n;
    slots_per_id = n;
    if (scheme.size_mode == SizeMode::kFixed && b_or_u % n != 0)
      throw ConfigError("fixed-within scheme requires B divisible by n");
  }
  if (unique < 1 || unique > data.size())
    throw ConfigError("unique-images-per-batch out of range for dataset");

  GradOptions opts;
  opts.parallel = parallel;

  GradSampleFn sampler = [&, unique, slots_per_id](int64_t b) -> GradSample {
    // Fresh U-subset per batch (without replacement inside the batch).
    Rng rng(hash_combine(seed, kVarIdStream, static_cast<uint64_t>(b)));
    std::vector<int32_t> ids(static_cast<size_t>(data.size()));
    for (size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<int32_t>(i);
    for (int64_t i = 0; i < unique; ++i) {
      int64_t j = i + rng.next_below(static_cast<int>(data.size() - i));
      std::swap(ids[static_cast<size_t>(i)], ids[static_cast<size_t>(j)]);
    }
    std::vector<Slot> batch;
    batch.reserve(static_cast<size_t>(unique * slots_per_id));
    for (int64_t u = 0; u < unique; ++u) {
      int32_t id = ids[static_cast<size_t>(u)];
      for (int s = 0; s < slots_per_id; ++s)
        batch.push_back({id, hash_combine(seed, kVarAugStream, static_cast<uint64_t>(b),
                                          static_cast<uint64_t>(id), static_cast<uint64_t>(s))});
    }
    BatchGradient bg = batch_gradient(model, init_params, data, batch, policy, opts);
    if (!bg.finite) throw NumericalError("non-finite minibatch gradient while sampling variance");
    GradSample out;
    for (size_t p = 0; p < bg.grads.size(); ++p)
      out.emplace(init_params.params[p].name, std::move(bg.grads[p]));
    return out;
  };

  VarianceReport report = estimate_variance(sampler, num_batches);
  report.size_mode = size_mode_name(scheme.size_mode);
  report.placement = placement_name(scheme.placement);
  report.n = n;
  report.b_or_u = b_or_u;
  return report;
}

std::vector<Tensor> average_gradient_over_masks(
    const std::function<std::vector<Tensor>(const DropoutMask&)>& grad_of_mask,
    const std::vector<DropoutMask>& masks) {
  if (masks.empty()) throw ConfigError("average_gradient_over_masks: no masks");
  std::vector<std::vector<Tensor>> per_mask;
  per_mask.reserve(masks.size());
  for (const DropoutMask& m : masks) per_mask.push_back(grad_of_mask(m));
  return pairwise_mean_lists(per_mask);
}

std::vector<Tensor> dropout_avg_gradient(const SmallResNet& model, const ParamSet& params,
                                         const Dataset& data, const std::vector<Slot>& batch,
                                         const AugPolicy& policy, int n_masks, double drop_p,
                                         uint64_t seed, double label_smoothing, bool parallel) {
  if (n_masks < 1) throw ConfigError("dropout_avg_gradient: n_masks must be >= 1");
  std::vector<DropoutMask> masks;
  masks.reserve(static_cast<size_t>(n_masks));
  for (int k = 0; k < n_masks; ++k)
    masks.push_back(draw_dropout_mask(model.feature_width(), drop_p,
                                      hash_combine(seed, kDropMaskStream, static_cast<uint64_t>(k))));
  return average_gradient_over_masks(
      [&](const DropoutMask& m) {
        GradOptions opts;
        opts.label_smoothing = label_smoothing;
        opts.fixed_mask = &m;
        opts.parallel = parallel;
        BatchGradient bg = batch_gradient(model, params, data, batch, policy, opts);
        if (!bg.finite) throw NumericalError("non-finite gradient in dropout averaging");
        return bg.grads;
      },
      masks);
}

EvalMetrics eval_raw(const SmallResNet& model, const ParamSet& params, const Dataset& data,
                     bool parallel) {
  int64_t n = data.size();
  if (n == 0) throw ConfigError("eval_raw: empty dataset");
  std::vector<double> losses(static_cast<size_t>(n), 0.0);
  std::vector<uint8_t> correct(static_cast<size_t>(n), 0);
  std::atomic<bool> failed{false};

  auto eval_one = [&](int64_t i) {
    if (failed.load(std::memory_order_relaxed)) return;
    try {
      Tape tape;
      std::vector<Tape::NodeId> pn = model.bind(tape, params);
      Tape::NodeId logits = model.forward_one(tape, pn, tape.leaf(data.image(i)), nullptr);
      int label = data.labels[static_cast<size_t>(i)];
      Tape::NodeId loss = tape.softmax_cross_entropy(logits, label, 0.0);
      losses[static_cast<size_t>(i)] = tape.value(loss)[0];
      const Tensor& lg = tape.value(logits);
      int best = 0;
      for (int k = 1; k < lg.dim(0); ++k)
        if (lg[k] > lg[best]) best = k;  // ties keep the lowest index
      correct[static_cast<size_t>(i)] = best == label ? 1 : 0;
    } catch (const NumericalError&) {
      failed.store(true, std::memory_order_relaxed);
    }
  };

  if (parallel) {
#pragma omp parallel for schedule(dynamic)
    for (int64_t i = 0; i < n; ++i) eval_one(i);
  } else {
    for (int64_t i = 0; i < n; ++i) eval_one(i);
  }
  if (failed.load()) throw NumericalError("eval_raw: non-finite forward pass");

  EvalMetrics m;
  m.loss = pairwise_mean_values(losses);
  int64_t hits = 0;
  for (uint8_t c : correct) hits += c;
  m.accuracy = static_cast<double>(hits) / static_cast<double>(n);
  return m;
}

}  // namespace augmult
