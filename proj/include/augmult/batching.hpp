#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace augmult {

enum class SizeMode { kGrowing, kFixed };
enum class Placement { kWithin, kNeighbouring };

// Growing batches are only defined with within-batch placement: the batch
// grows to hold the extra augmentation slots.
struct Scheme {
  SizeMode size_mode = SizeMode::kFixed;
  Placement placement = Placement::kWithin;
};

bool scheme_valid(const Scheme& s);
std::string size_mode_name(SizeMode m);
std::string placement_name(Placement p);
SizeMode size_mode_from_name(const std::string& s);
Placement placement_from_name(const std::string& s);

struct Slot {
  int32_t image_id = 0;
  uint64_t aug_seed = 0;
};

// One epoch's full schedule of minibatches. For within-placement schemes the
// n slots of an image are consecutive inside its batch; the neighbouring
// scheme instead repeats an id set across n consecutive batches with fresh
// seeds per run index.
struct BatchPlan {
  std::vector<std::vector<Slot>> batches;
  Scheme scheme;
  int n = 1;
  int64_t batch_size = 0;    // B: slots per batch
  int64_t unique_per_batch = 0;  // U: distinct image ids per batch
};

// b_or_u is U (unique images per batch) for the growing scheme and B (total
// batch size) for the fixed schemes. The final partial batch of an epoch is
// dropped so every batch satisfies the scheme invariants exactly.
BatchPlan plan_epoch(const Scheme& scheme, int n, int64_t b_or_u, int64_t dataset_size,
                     int64_t epoch, uint64_t run_seed);

int64_t updates_per_epoch(const Scheme& scheme, int n, int64_t b_or_u, int64_t dataset_size);

// Per-example forward/backward evaluations per parameter update.
int64_t gradient_evals_per_update(const Scheme& scheme, int n, int64_t b_or_u);

// Debug format, one batch per line: "epoch batch_idx [id:seed ...]".
std::string plan_debug_lines(const BatchPlan& plan, int64_t epoch);

}  // namespace augmult
