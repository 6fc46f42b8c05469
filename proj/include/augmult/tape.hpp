#pragma once

#include <cstdint>
#include <vector>

#include "augmult/tensor.hpp"

namespace augmult {

// Reverse-mode tape over the closed op set a small residual convnet needs:
// conv2d 3x3 (stride 1/2, zero pad 1), dense, relu, add, scalar multiply,
// global average pool, softmax cross entropy, dropout with a given mask.
//
// Record order is execution order; backward() walks it in reverse. A tape is
// single-threaded by construction, but many tapes may run concurrently.
// backward() does not consume the tape: re-running it on the same inputs
// yields bit-identical gradients.
class Tape {
 public:
  using NodeId = int32_t;

  // Owned leaf (inputs such as augmented images).
  NodeId leaf(Tensor value);
  // Borrowed leaf; caller keeps `value` alive for the tape's lifetime.
  // Used for parameters so each per-example tape avoids copying them.
  NodeId leaf_ref(const Tensor& value);

  NodeId relu(NodeId x);
  NodeId add(NodeId a, NodeId b);
  // Constant scale: out = c * x, no gradient to c.
  NodeId scale(NodeId x, double c);
  // Trainable scalar multiply: out = s * x where s has shape (1).
  // Both s and x receive gradients (this is the SkipInit alpha).
  NodeId scalar_mul(NodeId s, NodeId x);
  // x: (H,W,C), w: (OC,3,3,C), b: (OC) -> (H',W',OC); zero padding 1.
  NodeId conv2d(NodeId x, NodeId w, NodeId b, int stride);
  // x: (D), w: (K,D), b: (K) -> (K)
  NodeId dense(NodeId x, NodeId w, NodeId b);
  // (H,W,C) -> (C), mean over spatial positions.
  NodeId global_avg_pool(NodeId x);
  // keep[i]==1 passes x[i] scaled by 1/(1-drop_p); keep[i]==0 zeroes it.
  NodeId dropout(NodeId x, std::vector<uint8_t> keep, double drop_p);
  // logits: (K); scalar loss. Smoothed target (1-s)*onehot + s/K.
  NodeId softmax_cross_entropy(NodeId logits, int label, double label_smoothing = 0.0);

  const Tensor& value(NodeId id) const;
  int size() const { return static_cast<int>(nodes_.size()); }

  // Gradients for every node reachable from `loss` (zeros for unreachable
  // leaves, empty tensors for unreachable interior nodes). `loss` must be
  // scalar.
  std::vector<Tensor> backward(NodeId loss) const;

 private:
  enum class Op : uint8_t {
    kLeaf,
    kRelu,
    kAdd,
    kScale,
    kScalarMul,
    kConv2d,
    kDense,
    kGap,
    kDropout,
    kSoftmaxXent,
  };

  struct Node {
    Op op = Op::kLeaf;
    NodeId a = -1, b = -1, c = -1;
    Tensor value;                     // owned output (or owned leaf value)
    const Tensor* external = nullptr; // borrowed leaf value
    double scalar = 0.0;              // kScale factor / kDropout drop_p
    int stride = 1;                   // kConv2d
    int label = -1;                   // kSoftmaxXent
    double smoothing = 0.0;           // kSoftmaxXent
    std::vector<uint8_t> mask;        // kDropout
    Tensor softmax;                   // kSoftmaxXent cached probabilities
  };

  const Tensor& val(NodeId id) const {
    const Node& n = nodes_[static_cast<size_t>(id)];
    return n.external ? *n.external : n.value;
  }

  NodeId push(Node n);
  void check_id(NodeId id) const;

  std::vector<Node> nodes_;
};

}  // namespace augmult
