#include "augmult/tape.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "augmult/errors.hpp"

namespace augmult {

namespace {

void require_finite(const Tensor& t, const char* op) {
  if (!t.all_finite()) throw NumericalError(std::string(op) + ": non-finite output");
}

int conv_out_dim(int in, int stride) {
  // kernel 3, pad 1: padded = in + 2, windows = padded - 2.
  return (in - 1) / stride + 1;
}

}  // namespace

Tape::NodeId Tape::push(Node n) {
  nodes_.push_back(std::move(n));
  return static_cast<NodeId>(nodes_.size() - 1);
}

void Tape::check_id(NodeId id) const {
  if (id < 0 || static_cast<size_t>(id) >= nodes_.size())
    throw ShapeError("invalid tape node id " + std::to_string(id));
}

const Tensor& Tape::value(NodeId id) const {
  check_id(id);
  return val(id);
}

Tape::NodeId Tape::leaf(Tensor value) {
  Node n;
  n.op = Op::kLeaf;
  n.value = std::move(value);
  return push(std::move(n));
}

Tape::NodeId Tape::leaf_ref(const Tensor& value) {
  Node n;
  n.op = Op::kLeaf;
  n.external = &value;
  return push(std::move(n));
}

Tape::NodeId Tape::relu(NodeId x) {
  check_id(x);
  const Tensor& in = val(x);
  Node n;
  n.op = Op::kRelu;
  n.a = x;
  n.value = Tensor(in.shape);
  for (size_t i = 0; i < in.data.size(); ++i)
    n.value.data[i] = in.data[i] > 0.0 ? in.data[i] : 0.0;
  require_finite(n.value, "relu");
  return push(std::move(n));
}

Tape::NodeId Tape::add(NodeId a, NodeId b) {
  check_id(a);
  check_id(b);
  const Tensor& ta = val(a);
  const Tensor& tb = val(b);
  if (!same_shape(ta, tb))
    throw ShapeError("add shape mismatch " + shape_str(ta.shape) + " vs " + shape_str(tb.shape));
  Node n;
  n.op = Op::kAdd;
  n.a = a;
  n.b = b;
  n.value = Tensor(ta.shape);
  for (size_t i = 0; i < ta.data.size(); ++i) n.value.data[i] = ta.data[i] + tb.data[i];
  require_finite(n.value, "add");
  return push(std::move(n));
}

Tape::NodeId Tape::scale(NodeId x, double c) {
  check_id(x);
  const Tensor& in = val(x);
  Node n;
  n.op = Op::kScale;
  n.a = x;
  n.scalar = c;
  n.value = Tensor(in.shape);
  for (size_t i = 0; i < in.data.size(); ++i) n.value.data[i] = c * in.data[i];
  require_finite(n.value, "scale");
  return push(std::move(n));
}

Tape::NodeId Tape::scalar_mul(NodeId s, NodeId x) {
  check_id(s);
  check_id(x);
  const Tensor& ts = val(s);
  if (ts.numel() != 1) throw ShapeError("scalar_mul: multiplier must have one element");
  const Tensor& in = val(x);
  Node n;
  n.op = Op::kScalarMul;
  n.a = s;
  n.b = x;
  n.value = Tensor(in.shape);
  double c = ts.data[0];
  for (size_t i = 0; i < in.data.size(); ++i) n.value.data[i] = c * in.data[i];
  require_finite(n.value, "scalar_mul");
  return push(std::move(n));
}

Tape::NodeId Tape::conv2d(NodeId x, NodeId w, NodeId b, int stride) {
  check_id(x);
  check_id(w);
  check_id(b);
  if (stride != 1 && stride != 2) throw ShapeError("conv2d: stride must be 1 or 2");
  const Tensor& in = val(x);
  const Tensor& wt = val(w);
  const Tensor& bt = val(b);
  if (in.ndim() != 3) throw ShapeError("conv2d: input must be (H,W,C), got " + shape_str(in.shape));
  if (wt.ndim() != 4 || wt.dim(1) != 3 || wt.dim(2) != 3 || wt.dim(3) != in.dim(2))
    throw ShapeError("conv2d: weight must be (OC,3,3,C) matching input, got " +
                     shape_str(wt.shape) + " for input " + shape_str(in.shape));
  int oc = wt.dim(0);
  if (bt.ndim() != 1 || bt.dim(0) != oc)
    throw ShapeError("conv2d: bias must be (OC), got " + shape_str(bt.shape));

  int h = in.dim(0), wd = in.dim(1), cin = in.dim(2);
  int ho = conv_out_dim(h, stride), wo = conv_out_dim(wd, stride);

  Node n;
  n.op = Op::kConv2d;
  n.a = x;
  n.b = w;
  n.c = b;
  n.stride = stride;
  n.value = Tensor(Shape{ho, wo, oc});
  for (int yo = 0; yo < ho; ++yo) {
    for (int xo = 0; xo < wo; ++xo) {
      for (int o = 0; o < oc; ++o) {
        double acc = bt.data[static_cast<size_t>(o)];
        for (int ky = 0; ky < 3; ++ky) {
          int yi = yo * stride - 1 + ky;
          if (yi < 0 || yi >= h) continue;
          for (int kx = 0; kx < 3; ++kx) {
            int xi = xo * stride - 1 + kx;
            if (xi < 0 || xi >= wd) continue;
            const double* ip = &in.data[static_cast<size_t>((static_cast<int64_t>(yi) * wd + xi) * cin)];
            const double* wp = &wt.data[static_cast<size_t>(((static_cast<int64_t>(o) * 3 + ky) * 3 + kx) * cin)];
            for (int c = 0; c < cin; ++c) acc += ip[c] * wp[c];
          }
        }
        n.value.at3(yo, xo, o) = acc;
      }
    }
  }
  require_finite(n.value, "conv2d");
  return push(std::move(n));
}

Tape::NodeId Tape::dense(NodeId x, NodeId w, NodeId b) {
  check_id(x);
  check_id(w);
  check_id(b);
  const Tensor& in = val(x);
  const Tensor& wt = val(w);
  const Tensor& bt = val(b);
  if (in.ndim() != 1) throw ShapeError("dense: input must be (D), got " + shape_str(in.shape));
  if (wt.ndim() != 2 || wt.dim(1) != in.dim(0))
    throw ShapeError("dense: weight must be (K,D) matching input, got " + shape_str(wt.shape));
  int k = wt.dim(0), d = wt.dim(1);
  if (bt.ndim() != 1 || bt.dim(0) != k)
    throw ShapeError("dense: bias must be (K), got " + shape_str(bt.shape));

  Node n;
  n.op = Op::kDense;
  n.a = x;
  n.b = w;
  n.c = b;
  n.value = Tensor(Shape{k});
  for (int i = 0; i < k; ++i) {
    double acc = bt.data[static_cast<size_t>(i)];
    const double* wp = &wt.data[static_cast<size_t>(static_cast<int64_t>(i) * d)];
    for (int j = 0; j < d; ++j) acc += wp[j] * in.data[static_cast<size_t>(j)];
    n.value.data[static_cast<size_t>(i)] = acc;
  }
  require_finite(n.value, "dense");
  return push(std::move(n));
}

Tape::NodeId Tape::global_avg_pool(NodeId x) {
  check_id(x);
  const Tensor& in = val(x);
  if (in.ndim() != 3) throw ShapeError("global_avg_pool: input must be (H,W,C)");
  int h = in.dim(0), w = in.dim(1), c = in.dim(2);
  Node n;
  n.op = Op::kGap;
  n.a = x;
  n.value = Tensor(Shape{c});
  double inv = 1.0 / (static_cast<double>(h) * w);
  for (int y = 0; y < h; ++y)
    for (int xx = 0; xx < w; ++xx)
      for (int ch = 0; ch < c; ++ch) n.value.data[static_cast<size_t>(ch)] += in.at3(y, xx, ch);
  for (int ch = 0; ch < c; ++ch) n.value.data[static_cast<size_t>(ch)] *= inv;
  require_finite(n.value, "global_avg_pool");
  return push(std::move(n));
}

Tape::NodeId Tape::dropout(NodeId x, std::vector<uint8_t> keep, double drop_p) {
  check_id(x);
  const Tensor& in = val(x);
  if (drop_p < 0.0 || drop_p >= 1.0) throw ConfigError("dropout: drop_p must be in [0,1)");
  if (static_cast<int64_t>(keep.size()) != in.numel())
    throw ShapeError("dropout: mask length " + std::to_string(keep.size()) +
                     " does not match input " + shape_str(in.shape));
  Node n;
  n.op = Op::kDropout;
  n.a = x;
  n.scalar = drop_p;
  n.mask = std::move(keep);
  n.value = Tensor(in.shape);
  double inv = 1.0 / (1.0 - drop_p);
  for (size_t i = 0; i < in.data.size(); ++i)
    n.value.data[i] = n.mask[i] ? in.data[i] * inv : 0.0;
  require_finite(n.value, "dropout");
  return push(std::move(n));
}

Tape::NodeId Tape::softmax_cross_entropy(NodeId logits, int label, double label_smoothing) {
  check_id(logits);
  const Tensor& in = val(logits);
  if (in.ndim() != 1) throw ShapeError("softmax_cross_entropy: logits must be (K)");
  int k = in.dim(0);
  if (label < 0 || label >= k)
    throw ShapeError("softmax_cross_entropy: label " + std::to_string(label) + " out of range");
  if (label_smoothing < 0.0 || label_smoothing > 1.0)
    throw ConfigError("softmax_cross_entropy: smoothing must be in [0,1]");

  double mx = in.data[0];
  for (int i = 1; i < k; ++i) mx = std::max(mx, in.data[static_cast<size_t>(i)]);
  double sum = 0.0;
  for (int i = 0; i < k; ++i) sum += std::exp(in.data[static_cast<size_t>(i)] - mx);
  double lse = mx + std::log(sum);

  Node n;
  n.op = Op::kSoftmaxXent;
  n.a = logits;
  n.label = label;
  n.smoothing = label_smoothing;
  n.softmax = Tensor(Shape{k});
  for (int i = 0; i < k; ++i)
    n.softmax.data[static_cast<size_t>(i)] = std::exp(in.data[static_cast<size_t>(i)] - lse);

  // loss = sum_i t_i * (lse - l_i), t = (1-s)*onehot + s/K
  double uniform = label_smoothing / k;
  double loss = 0.0;
  for (int i = 0; i < k; ++i) {
    double t = uniform + (i == label ? 1.0 - label_smoothing : 0.0);
    if (t != 0.0) loss += t * (lse - in.data[static_cast<size_t>(i)]);
  }
  n.value = Tensor::scalar(loss);
  require_finite(n.value, "softmax_cross_entropy");
  return push(std::move(n));
}

std::vector<Tensor> Tape::backward(NodeId loss) const {
  check_id(loss);
  if (val(loss).numel() != 1)
    throw ShapeError("backward: loss node must be scalar, got " + shape_str(val(loss).shape));

  std::vector<Tensor> grads(nodes_.size());
  std::vector<uint8_t> touched(nodes_.size(), 0);

  auto touch = [&](NodeId id) -> Tensor& {
    size_t i = static_cast<size_t>(id);
    if (!touched[i]) {
      grads[i] = Tensor(val(id).shape);
      touched[i] = 1;
    }
    return grads[i];
  };

  touch(loss).data[0] = 1.0;

  // Record order is topological, so a single reverse sweep visits every
  // node after all of its consumers.
  for (NodeId id = loss; id >= 0; --id) {
    size_t i = static_cast<size_t>(id);
    if (!touched[i]) continue;
    const Node& n = nodes_[i];
    const Tensor& g = grads[i];
    switch (n.op) {
      case Op::kLeaf:
        break;
      case Op::kRelu: {
        const Tensor& in = val(n.a);
        Tensor& ga = touch(n.a);
        for (size_t j = 0; j < in.data.size(); ++j)
          if (in.data[j] > 0.0) ga.data[j] += g.data[j];
        break;
      }
      case Op::kAdd: {
        Tensor& ga = touch(n.a);
        for (size_t j = 0; j < g.data.size(); ++j) ga.data[j] += g.data[j];
        Tensor& gb = touch(n.b);
        for (size_t j = 0; j < g.data.size(); ++j) gb.data[j] += g.data[j];
        break;
      }
      case Op::kScale: {
        Tensor& ga = touch(n.a);
        for (size_t j = 0; j < g.data.size(); ++j) ga.data[j] += n.scalar * g.data[j];
        break;
      }
      case Op::kScalarMul: {
        const Tensor& x = val(n.b);
        double s = val(n.a).data[0];
        Tensor& gs = touch(n.a);
        double acc = 0.0;
        for (size_t j = 0; j < g.data.size(); ++j) acc += g.data[j] * x.data[j];
        gs.data[0] += acc;
        Tensor& gx = touch(n.b);
        for (size_t j = 0; j < g.data.size(); ++j) gx.data[j] += s * g.data[j];
        break;
      }
      case Op::kConv2d: {
        const Tensor& in = val(n.a);
        const Tensor& wt = val(n.b);
        int h = in.dim(0), wd = in.dim(1), cin = in.dim(2);
        int ho = n.value.dim(0), wo = n.value.dim(1), oc = n.value.dim(2);
        Tensor& gx = touch(n.a);
        Tensor& gw = touch(n.b);
        Tensor& gb = touch(n.c);
        for (int yo = 0; yo < ho; ++yo) {
          for (int xo = 0; xo < wo; ++xo) {
            for (int o = 0; o < oc; ++o) {
              double go = g.at3(yo, xo, o);
              if (go == 0.0) continue;
              gb.data[static_cast<size_t>(o)] += go;
              for (int ky = 0; ky < 3; ++ky) {
                int yi = yo * n.stride - 1 + ky;
                if (yi < 0 || yi >= h) continue;
                for (int kx = 0; kx < 3; ++kx) {
                  int xi = xo * n.stride - 1 + kx;
                  if (xi < 0 || xi >= wd) continue;
                  size_t ibase = static_cast<size_t>((static_cast<int64_t>(yi) * wd + xi) * cin);
                  size_t wbase =
                      static_cast<size_t>(((static_cast<int64_t>(o) * 3 + ky) * 3 + kx) * cin);
                  for (int c = 0; c < cin; ++c) {
                    gw.data[wbase + static_cast<size_t>(c)] += go * in.data[ibase + static_cast<size_t>(c)];
                    gx.data[ibase + static_cast<size_t>(c)] += go * wt.data[wbase + static_cast<size_t>(c)];
                  }
                }
              }
            }
          }
        }
        break;
      }
      case Op::kDense: {
        const Tensor& in = val(n.a);
        const Tensor& wt = val(n.b);
        int k = wt.dim(0), d = wt.dim(1);
        Tensor& gx = touch(n.a);
        Tensor& gw = touch(n.b);
        Tensor& gb = touch(n.c);
        for (int i2 = 0; i2 < k; ++i2) {
          double go = g.data[static_cast<size_t>(i2)];
          if (go == 0.0) continue;
          gb.data[static_cast<size_t>(i2)] += go;
          size_t wbase = static_cast<size_t>(static_cast<int64_t>(i2) * d);
          for (int j = 0; j < d; ++j) {
            gw.data[wbase + static_cast<size_t>(j)] += go * in.data[static_cast<size_t>(j)];
            gx.data[static_cast<size_t>(j)] += go * wt.data[wbase + static_cast<size_t>(j)];
          }
        }
        break;
      }
      case Op::kGap: {
        const Tensor& in = val(n.a);
        int h = in.dim(0), w = in.dim(1), c = in.dim(2);
        double inv = 1.0 / (static_cast<double>(h) * w);
        Tensor& gx = touch(n.a);
        for (int y = 0; y < h; ++y)
          for (int xx = 0; xx < w; ++xx)
            for (int ch = 0; ch < c; ++ch)
              gx.at3(y, xx, ch) += g.data[static_cast<size_t>(ch)] * inv;
        break;
      }
      case Op::kDropout: {
        double inv = 1.0 / (1.0 - n.scalar);
        Tensor& gx = touch(n.a);
        for (size_t j = 0; j < g.data.size(); ++j)
          if (n.mask[j]) gx.data[j] += g.data[j] * inv;
        break;
      }
      case Op::kSoftmaxXent: {
        int k = n.softmax.dim(0);
        double go = g.data[0];
        double uniform = n.smoothing / k;
        Tensor& gl = touch(n.a);
        for (int j = 0; j < k; ++j) {
          double t = uniform + (j == n.label ? 1.0 - n.smoothing : 0.0);
          gl.data[static_cast<size_t>(j)] += go * (n.softmax.data[static_cast<size_t>(j)] - t);
        }
        break;
      }
    }
  }

  // Unreachable leaves still get well-formed zero gradients.
  for (size_t i = 0; i < nodes_.size(); ++i)
    if (!touched[i] && nodes_[i].op == Op::kLeaf) grads[i] = Tensor(val(static_cast<NodeId>(i)).shape);

  return grads;
}

}  // namespace augmult
