#include "augmult/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "augmult/errors.hpp"
#include "augmult/rng.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

namespace augmult {

namespace {
constexpr uint64_t kInitStream = 0x696e6974ULL;  // "init"
constexpr uint64_t kMaskStream = 0x6d61736bULL;  // "mask"
}  // namespace

int64_t ParamSet::total_size() const {
  int64_t n = 0;
  for (const Param& p : params) n += p.value.numel();
  return n;
}

int ParamSet::index_of(const std::string& name) const {
  for (size_t i = 0; i < params.size(); ++i)
    if (params[i].name == name) return static_cast<int>(i);
  return -1;
}

DropoutMask draw_dropout_mask(int width, double drop_p, uint64_t seed) {
  if (drop_p < 0.0 || drop_p >= 1.0) throw ConfigError("drop_p must be in [0,1)");
  DropoutMask m;
  m.drop_p = drop_p;
  m.seed = seed;
  m.keep.resize(static_cast<size_t>(width));
  Rng rng(hash_combine(seed, kMaskStream));
  for (int i = 0; i < width; ++i) m.keep[static_cast<size_t>(i)] = rng.next_bernoulli(drop_p) ? 0 : 1;
  return m;
}

SmallResNet::SmallResNet(ModelConfig cfg) : cfg_(cfg) {
  if (cfg_.blocks_per_stage < 1 || cfg_.base_width < 1 || cfg_.classes < 1 ||
      cfg_.in_channels < 1)
    throw ConfigError("SmallResNet: k, w, classes, in_channels must all be >= 1");

  auto conv = [&](const std::string& name, int out_ch, int in_ch) {
    layout_.push_back({name + ".w", Shape{out_ch, 3, 3, in_ch}, ParamSpec::Init::kHeConv});
    layout_.push_back({name + ".b", Shape{out_ch}, ParamSpec::Init::kZero});
  };

  stem_param_ = 0;
  conv("stem", cfg_.base_width, cfg_.in_channels);

  int prev = cfg_.base_width;
  for (int stage = 0; stage < 3; ++stage) {
    int width = cfg_.base_width << stage;
    for (int b = 0; b < cfg_.blocks_per_stage; ++b) {
      BlockDesc d;
      d.in_ch = b == 0 ? prev : width;
      d.out_ch = width;
      d.stride = (stage > 0 && b == 0) ? 2 : 1;
      d.has_shortcut = d.stride != 1 || d.in_ch != d.out_ch;
      d.first_param = static_cast<int>(layout_.size());
      std::ostringstream name;
      name << "s" << stage << ".b" << b;
      conv(name.str() + ".conv1", d.out_ch, d.in_ch);
      conv(name.str() + ".conv2", d.out_ch, d.out_ch);
      if (d.has_shortcut) conv(name.str() + ".sc", d.out_ch, d.in_ch);
      layout_.push_back({name.str() + ".alpha", Shape{1}, ParamSpec::Init::kZero});
      blocks_.push_back(d);
    }
    prev = width;
  }

  fc_param_ = static_cast<int>(layout_.size());
  layout_.push_back({"fc.w", Shape{cfg_.classes, feature_width()}, ParamSpec::Init::kHeDense});
  layout_.push_back({"fc.b", Shape{cfg_.classes}, ParamSpec::Init::kZero});
}

ParamSet SmallResNet::init(uint64_t seed) const {
  ParamSet set;
  set.params.reserve(layout_.size());
  for (size_t i = 0; i < layout_.size(); ++i) {
    const ParamSpec& spec = layout_[i];
    Param p;
    p.name = spec.name;
    p.value = Tensor(spec.shape);
    if (spec.init != ParamSpec::Init::kZero) {
      int64_t fan_in;
      if (spec.init == ParamSpec::Init::kHeConv)
        fan_in = 9LL * spec.shape[3];
      else
        fan_in = spec.shape[1];
      double std = std::sqrt(2.0 / static_cast<double>(fan_in));
      Rng rng(hash_combine(seed, kInitStream, static_cast<uint64_t>(i)));
      for (double& x : p.value.data) x = std * rng.next_normal();
    }
    set.params.push_back(std::move(p));
  }
  return set;
}

std::vector<Tape::NodeId> SmallResNet::bind(Tape& tape, const ParamSet& params) const {
  if (params.params.size() != layout_.size())
    throw ShapeError("parameter set does not match model layout");
  std::vector<Tape::NodeId> nodes;
  nodes.reserve(layout_.size());
  for (size_t i = 0; i < layout_.size(); ++i) {
    if (params.params[i].value.shape != layout_[i].shape)
      throw ShapeError("parameter " + layout_[i].name + " has shape " +
                       shape_str(params.params[i].value.shape) + ", expected " +
                       shape_str(layout_[i].shape));
    nodes.push_back(tape.leaf_ref(params.params[i].value));
  }
  return nodes;
}

Tape::NodeId SmallResNet::forward_one(Tape& tape, const std::vector<Tape::NodeId>& pn,
                                      Tape::NodeId image, const DropoutMask* mask) const {
  Tape::NodeId x = tape.conv2d(image, pn[static_cast<size_t>(stem_param_)],
                               pn[static_cast<size_t>(stem_param_ + 1)], 1);
  for (const BlockDesc& d : blocks_) {
    int p = d.first_param;
    Tape::NodeId h = tape.relu(x);
    Tape::NodeId y = tape.conv2d(h, pn[static_cast<size_t>(p)], pn[static_cast<size_t>(p + 1)], d.stride);
    y = tape.relu(y);
    y = tape.conv2d(y, pn[static_cast<size_t>(p + 2)], pn[static_cast<size_t>(p + 3)], 1);
    Tape::NodeId alpha_id;
    Tape::NodeId sc;
    if (d.has_shortcut) {
      sc = tape.conv2d(h, pn[static_cast<size_t>(p + 4)], pn[static_cast<size_t>(p + 5)], d.stride);
      alpha_id = pn[static_cast<size_t>(p + 6)];
    } else {
      sc = x;
      alpha_id = pn[static_cast<size_t>(p + 4)];
    }
    x = tape.add(sc, tape.scalar_mul(alpha_id, y));
  }
  Tape::NodeId f = tape.global_avg_pool(tape.relu(x));
  if (mask) {
    if (static_cast<int>(mask->keep.size()) != feature_width())
      throw ShapeError("dropout mask width " + std::to_string(mask->keep.size()) +
                       " does not match feature width " + std::to_string(feature_width()));
    f = tape.dropout(f, mask->keep, mask->drop_p);
  }
  return tape.dense(f, pn[static_cast<size_t>(fc_param_)], pn[static_cast<size_t>(fc_param_ + 1)]);
}

Tensor SmallResNet::forward_batch(const ParamSet& params, const Tensor& batch,
                                  const DropoutMask* mask) const {
  if (batch.ndim() != 4) throw ShapeError("forward_batch: input must be (N,H,W,C)");
  int n = batch.dim(0), h = batch.dim(1), w = batch.dim(2), c = batch.dim(3);
  Tensor logits(Shape{n, cfg_.classes});
  int64_t img_sz = static_cast<int64_t>(h) * w * c;
  for (int i = 0; i < n; ++i) {
    Tensor img(Shape{h, w, c});
    std::copy(batch.data.begin() + i * img_sz, batch.data.begin() + (i + 1) * img_sz,
              img.data.begin());
    Tape tape;
    std::vector<Tape::NodeId> pn = bind(tape, params);
    Tape::NodeId out = forward_one(tape, pn, tape.leaf(std::move(img)), mask);
    const Tensor& v = tape.value(out);
    std::copy(v.data.begin(), v.data.end(),
              logits.data.begin() + static_cast<int64_t>(i) * cfg_.classes);
  }
  return logits;
}

void save_checkpoint(const ParamSet& params, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint for writing: " + path);
  f << "AUGMULT-CKPT 1\n" << params.params.size() << "\n";
  for (const Param& p : params.params) {
    f << p.name << " " << p.value.ndim();
    for (int d : p.value.shape) f << " " << d;
    f << "\n";
  }
  f << "DATA\n";
  for (const Param& p : params.params)
    f.write(reinterpret_cast<const char*>(p.value.data.data()),
            static_cast<std::streamsize>(p.value.data.size() * sizeof(double)));
  if (!f) throw IoError("checkpoint write failed: " + path);
}

ParamSet load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint: " + path);
  std::string line;
  if (!std::getline(f, line) || line != "AUGMULT-CKPT 1")
    throw IoError("bad checkpoint magic in " + path);
  size_t count = 0;
  if (!std::getline(f, line)) throw IoError("truncated checkpoint header");
  count = std::stoul(line);
  ParamSet set;
  set.params.resize(count);
  for (size_t i = 0; i < count; ++i) {
    if (!std::getline(f, line)) throw IoError("truncated checkpoint manifest");
    std::istringstream is(line);
    int nd = 0;
    if (!(is >> set.params[i].name >> nd)) throw IoError("bad manifest line: " + line);
    Shape shape(static_cast<size_t>(nd));
    for (int d = 0; d < nd; ++d)
      if (!(is >> shape[static_cast<size_t>(d)])) throw IoError("bad manifest line: " + line);
    set.params[i].value = Tensor(std::move(shape));
  }
  if (!std::getline(f, line) || line != "DATA") throw IoError("missing DATA marker");
  for (size_t i = 0; i < count; ++i) {
    auto& v = set.params[i].value.data;
    f.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
    if (!f) throw IoError("truncated checkpoint data");
  }
  return set;
}

}  // namespace augmult
