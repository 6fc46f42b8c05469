#include "augmult/augment.hpp"

#include <string>

#include "augmult/errors.hpp"
#include "augmult/rng.hpp"

namespace augmult {

namespace {
// Distinct stream tags keep the augmentation draws decoupled from every
// other consumer of the run seed.
constexpr uint64_t kAugStream = 0x61756773616d70ULL;  // "augsamp"
}  // namespace

bool policy_valid(const AugPolicy& p) {
  return p.pad >= 0 && p.flip_prob >= 0.0 && p.flip_prob <= 1.0;
}

uint64_t aug_seed(uint64_t run_seed, int64_t image_id, int64_t epoch, int64_t slot_index) {
  return hash_combine(run_seed, kAugStream, static_cast<uint64_t>(image_id),
                      static_cast<uint64_t>(epoch), static_cast<uint64_t>(slot_index));
}

AugSample draw_sample(const AugPolicy& policy, uint64_t seed) {
  if (!policy_valid(policy)) throw ConfigError("invalid AugPolicy");
  AugSample s;
  s.seed = seed;
  if (!policy.enabled) {
    s.crop_dy = policy.pad;
    s.crop_dx = policy.pad;
    return s;
  }
  Rng rng(seed);
  s.flip = rng.next_bernoulli(policy.flip_prob);
  s.crop_dy = rng.next_below(2 * policy.pad + 1);
  s.crop_dx = rng.next_below(2 * policy.pad + 1);
  return s;
}

Tensor apply(const Tensor& x, const AugSample& s, const AugPolicy& policy) {
  if (!policy_valid(policy)) throw ConfigError("invalid AugPolicy");
  if (x.ndim() != 3) throw ShapeError("augment apply: image must be (H,W,C)");
  if (!policy.enabled) return x;
  int pad = policy.pad;
  if (s.crop_dy < 0 || s.crop_dy > 2 * pad || s.crop_dx < 0 || s.crop_dx > 2 * pad)
    throw ConfigError("augment apply: crop offsets out of range for pad " + std::to_string(pad));

  int h = x.dim(0), w = x.dim(1), c = x.dim(2);
  Tensor out(x.shape);
  for (int y = 0; y < h; ++y) {
    int yi = y + s.crop_dy - pad;
    if (yi < 0 || yi >= h) continue;  // zero padding
    for (int xx = 0; xx < w; ++xx) {
      int xsrc = s.flip ? (w - 1 - xx) : xx;
      int xi = xsrc + s.crop_dx - pad;
      if (xi < 0 || xi >= w) continue;
      for (int ch = 0; ch < c; ++ch) out.at3(y, xx, ch) = x.at3(yi, xi, ch);
    }
  }
  return out;
}

}  // namespace augmult
