#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "augmult/tape.hpp"
#include "augmult/tensor.hpp"

namespace augmult {

struct ModelConfig {
  int blocks_per_stage = 2;  // k
  int base_width = 8;        // w
  int classes = 10;
  int in_channels = 3;
};

struct Param {
  std::string name;
  Tensor value;
};

struct ParamSet {
  std::vector<Param> params;
  int64_t total_size() const;
  int index_of(const std::string& name) const;  // -1 if absent
};

// Boolean keep-mask over the classifier's input features, regenerable from
// its seed. Applied multiplicatively with 1/(1-p) rescaling of kept units.
struct DropoutMask {
  std::vector<uint8_t> keep;
  double drop_p = 0.0;
  uint64_t seed = 0;
};

DropoutMask draw_dropout_mask(int width, double drop_p, uint64_t seed);

// Three-stage pre-activation residual CNN without normalization. Every
// residual branch is scaled by a trainable scalar alpha initialized to zero,
// so a fresh network computes only its shortcut path. Classifier is global
// average pool -> optional dropout -> dense.
class SmallResNet {
 public:
  struct ParamSpec {
    enum class Init { kHeConv, kHeDense, kZero };
    std::string name;
    Shape shape;
    Init init;
  };

  explicit SmallResNet(ModelConfig cfg);

  const ModelConfig& config() const { return cfg_; }
  const std::vector<ParamSpec>& layout() const { return layout_; }
  int feature_width() const { return cfg_.base_width << 2; }

  // He fan-in for conv/dense weights, exact zeros for biases and alphas.
  // Deterministic in seed.
  ParamSet init(uint64_t seed) const;

  // Creates one borrowed leaf per parameter, in layout order.
  std::vector<Tape::NodeId> bind(Tape& tape, const ParamSet& params) const;

  // Graph for a single (H,W,C) image; returns the logits node. TRAIN mode
  // passes a mask, EVAL passes nullptr (no dropout, no rescaling).
  Tape::NodeId forward_one(Tape& tape, const std::vector<Tape::NodeId>& param_nodes,
                           Tape::NodeId image, const DropoutMask* mask) const;

  // (N,H,W,C) -> (N,classes). Convenience wrapper over per-example tapes.
  Tensor forward_batch(const ParamSet& params, const Tensor& batch,
                       const DropoutMask* mask) const;

 private:
  struct BlockDesc {
    int in_ch, out_ch, stride;
    bool has_shortcut;
    int first_param;  // index into layout_
  };

  ModelConfig cfg_;
  std::vector<ParamSpec> layout_;
  std::vector<BlockDesc> blocks_;
  int stem_param_ = 0, fc_param_ = 0;
};

// Checkpoint: text manifest (names and shapes) followed by the raw 64-bit
// little-endian values in manifest order. Round-trips bit-exactly.
void save_checkpoint(const ParamSet& params, const std::string& path);
ParamSet load_checkpoint(const std::string& path);

}  // namespace augmult
