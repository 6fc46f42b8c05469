#pragma once

#include <cstdint>

#include "augmult/tensor.hpp"

namespace augmult {

// The realized randomness of one augmentation draw. Regenerating from the
// stored seed reproduces the same fields.
struct AugSample {
  bool flip = false;
  int crop_dy = 0;  // offsets into the zero-padded image, in [0, 2*pad]
  int crop_dx = 0;
  uint64_t seed = 0;
};

struct AugPolicy {
  int pad = 4;
  double flip_prob = 0.5;
  bool enabled = true;
};

bool policy_valid(const AugPolicy& p);

// Counter-based seeding: one stream per (run, image, epoch, slot) so the n
// slots of an image draw independent noise and every draw is reproducible.
uint64_t aug_seed(uint64_t run_seed, int64_t image_id, int64_t epoch, int64_t slot_index);

// Deterministic function of (policy, seed). A disabled policy yields the
// identity sample.
AugSample draw_sample(const AugPolicy& policy, uint64_t seed);

// Zero-pad by policy.pad, crop an HxW window at (crop_dy, crop_dx), then
// mirror horizontally iff flip. Output shape always equals input shape.
Tensor apply(const Tensor& x, const AugSample& s, const AugPolicy& policy);

}  // namespace augmult
