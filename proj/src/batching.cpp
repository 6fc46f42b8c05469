#include "augmult/batching.hpp"

#include <numeric>
#include <sstream>

#include "augmult/augment.hpp"
#include "augmult/errors.hpp"
#include "augmult/rng.hpp"

namespace augmult {

namespace {
constexpr uint64_t kShuffleStream = 0x736875666c65ULL;  // "shufle"

std::vector<int32_t> epoch_permutation(int64_t dataset_size, int64_t epoch, uint64_t run_seed) {
  std::vector<int32_t> ids(static_cast<size_t>(dataset_size));
  std::iota(ids.begin(), ids.end(), 0);
  Rng rng(hash_combine(run_seed, kShuffleStream, static_cast<uint64_t>(epoch)));
  rng.shuffle(ids);
  return ids;
}

void validate(const Scheme& scheme, int n, int64_t b_or_u) {
  if (!scheme_valid(scheme))
    throw ConfigError("growing batches are only defined with within-batch placement");
  if (n < 1) throw ConfigError("augmentation multiplicity must be >= 1");
  if (b_or_u < 1) throw ConfigError("batch size parameter must be >= 1");
  if (scheme.size_mode == SizeMode::kFixed && scheme.placement == Placement::kWithin &&
      b_or_u % n != 0)
    throw ConfigError("fixed-within scheme requires B divisible by n (B=" +
                      std::to_string(b_or_u) + ", n=" + std::to_string(n) + ")");
}

}  // namespace

bool scheme_valid(const Scheme& s) {
  return !(s.size_mode == SizeMode::kGrowing && s.placement == Placement::kNeighbouring);
}

std::string size_mode_name(SizeMode m) {
  return m == SizeMode::kGrowing ? "GROWING" : "FIXED";
}

std::string placement_name(Placement p) {
  return p == Placement::kWithin ? "WITHIN" : "NEIGHBOURING";
}

SizeMode size_mode_from_name(const std::string& s) {
  if (s == "GROWING") return SizeMode::kGrowing;
  if (s == "FIXED") return SizeMode::kFixed;
  throw ConfigError("unknown size_mode '" + s + "' (expected GROWING or FIXED)");
}

Placement placement_from_name(const std::string& s) {
  if (s == "WITHIN") return Placement::kWithin;
  if (s == "NEIGHBOURING") return Placement::kNeighbouring;
  throw ConfigError("unknown placement '" + s + "' (expected WITHIN or NEIGHBOURING)");
}

BatchPlan plan_epoch(const Scheme& scheme, int n, int64_t b_or_u, int64_t dataset_size,
                     int64_t epoch, uint64_t run_seed) {
  validate(scheme, n, b_or_u);
  if (dataset_size < 1) throw ConfigError("dataset is empty");

  BatchPlan plan;
  plan.scheme = scheme;
  plan.n = n;

  std::vector<int32_t> perm = epoch_permutation(dataset_size, epoch, run_seed);

  if (scheme.placement == Placement::kWithin) {
    int64_t unique = scheme.size_mode == SizeMode::kGrowing ? b_or_u : b_or_u / n;
    plan.unique_per_batch = unique;
    plan.batch_size = unique * n;
    int64_t num_batches = dataset_size / unique;  // remainder dropped
    plan.batches.reserve(static_cast<size_t>(num_batches));
    for (int64_t bi = 0; bi < num_batches; ++bi) {
      std::vector<Slot> batch;
      batch.reserve(static_cast<size_t>(plan.batch_size));
      for (int64_t u = 0; u < unique; ++u) {
        int32_t id = perm[static_cast<size_t>(bi * unique + u)];
        for (int slot = 0; slot < n; ++slot)
          batch.push_back({id, aug_seed(run_seed, id, epoch, slot)});
      }
      plan.batches.push_back(std::move(batch));
    }
  } else {
    // Neighbouring: each id set fills n consecutive batches, one slot per
    // image per batch, with a fresh seed per run index.
    int64_t batch_size = b_or_u;
    plan.unique_per_batch = batch_size;
    plan.batch_size = batch_size;
    int64_t num_groups = dataset_size / batch_size;  // remainder dropped
    plan.batches.reserve(static_cast<size_t>(num_groups * n));
    for (int64_t g = 0; g < num_groups; ++g) {
      for (int run = 0; run < n; ++run) {
        std::vector<Slot> batch;
        batch.reserve(static_cast<size_t>(batch_size));
        for (int64_t u = 0; u < batch_size; ++u) {
          int32_t id = perm[static_cast<size_t>(g * batch_size + u)];
          batch.push_back({id, aug_seed(run_seed, id, epoch, run)});
        }
        plan.batches.push_back(std::move(batch));
      }
    }
  }
  return plan;
}

int64_t updates_per_epoch(const Scheme& scheme, int n, int64_t b_or_u, int64_t dataset_size) {
  validate(scheme, n, b_or_u);
  if (scheme.placement == Placement::kWithin) {
    int64_t unique = scheme.size_mode == SizeMode::kGrowing ? b_or_u : b_or_u / n;
    return dataset_size / unique;
  }
  return (dataset_size / b_or_u) * n;
}

int64_t gradient_evals_per_update(const Scheme& scheme, int n, int64_t b_or_u) {
  validate(scheme, n, b_or_u);
  if (scheme.size_mode == SizeMode::kGrowing) return b_or_u * n;
  return b_or_u;
}

std::string plan_debug_lines(const BatchPlan& plan, int64_t epoch) {
  std::ostringstream os;
  for (size_t bi = 0; bi < plan.batches.size(); ++bi) {
    os << epoch << " " << bi << " [";
    const auto& batch = plan.batches[bi];
    for (size_t i = 0; i < batch.size(); ++i) {
      if (i) os << " ";
      os << batch[i].image_id << ":" << batch[i].aug_seed;
    }
    os << "]\n";
  }
  return os.str();
}

}  // namespace augmult
