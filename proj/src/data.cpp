#include "augmult/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "augmult/errors.hpp"
#include "augmult/rng.hpp"

namespace augmult {

namespace {
constexpr uint64_t kSynthStream = 0x73796e7468ULL;  // "synth"

int label_bytes(int classes) { return classes == 100 ? 2 : 1; }

// Fills images (N,H,W,C) from planar bytes, scaled to [0,1].
void pixels_from_bytes(Dataset& d) {
  int64_t n = d.size();
  int h = d.height(), w = d.width(), c = d.channels();
  int64_t plane = static_cast<int64_t>(h) * w;
  int64_t rec = plane * c;
  for (int64_t i = 0; i < n; ++i) {
    const uint8_t* px = d.raw_pixels.data() + i * rec;
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          d.images.data[static_cast<size_t>(((i * h + y) * w + x) * c + ch)] =
              static_cast<double>(px[ch * plane + y * w + x]) / 255.0;
  }
}
}  // namespace

Tensor Dataset::image(int64_t i) const {
  int h = height(), w = width(), c = channels();
  int64_t sz = static_cast<int64_t>(h) * w * c;
  Tensor out(Shape{h, w, c});
  std::copy(images.data.begin() + i * sz, images.data.begin() + (i + 1) * sz, out.data.begin());
  return out;
}

Dataset load_cifar_raw(const std::string& path, const CifarLayout& layout) {
  std::ifstream f(path, std::ios::binary | std::ios::ate);
  if (!f) throw IoError("cannot open dataset file: " + path);
  int64_t file_size = static_cast<int64_t>(f.tellg());
  f.seekg(0);

  int lb = label_bytes(layout.classes);
  int64_t pix = static_cast<int64_t>(layout.height) * layout.width * layout.channels;
  int64_t rec = lb + pix;
  if (file_size == 0 || file_size % rec != 0)
    throw IoError("truncated dataset file: " + path + " (" + std::to_string(file_size) +
                  " bytes is not a multiple of record length " + std::to_string(rec) + ")");
  int64_t n = file_size / rec;

  Dataset d;
  d.classes = layout.classes;
  d.images = Tensor(Shape{static_cast<int>(n), layout.height, layout.width, layout.channels});
  d.labels.resize(static_cast<size_t>(n));
  d.raw_pixels.resize(static_cast<size_t>(n * pix));

  std::vector<uint8_t> record(static_cast<size_t>(rec));
  for (int64_t i = 0; i < n; ++i) {
    f.read(reinterpret_cast<char*>(record.data()), rec);
    if (!f) throw IoError("read failed: " + path);
    int label = record[static_cast<size_t>(lb - 1)];  // fine label for the 100-class variant
    if (label >= layout.classes)
      throw IoError("label " + std::to_string(label) + " out of range in " + path);
    d.labels[static_cast<size_t>(i)] = label;
    std::copy(record.begin() + lb, record.end(), d.raw_pixels.begin() + i * pix);
  }
  pixels_from_bytes(d);
  return d;
}

void standardize(Dataset& d, bool compute_constants) {
  int c = d.channels();
  int64_t per_channel = d.images.numel() / c;
  if (compute_constants) {
    d.channel_mean.assign(static_cast<size_t>(c), 0.0);
    d.channel_std.assign(static_cast<size_t>(c), 0.0);
    for (int64_t i = 0; i < d.images.numel(); ++i)
      d.channel_mean[static_cast<size_t>(i % c)] += d.images.data[static_cast<size_t>(i)];
    for (int ch = 0; ch < c; ++ch) d.channel_mean[static_cast<size_t>(ch)] /= static_cast<double>(per_channel);
    for (int64_t i = 0; i < d.images.numel(); ++i) {
      double v = d.images.data[static_cast<size_t>(i)] - d.channel_mean[static_cast<size_t>(i % c)];
      d.channel_std[static_cast<size_t>(i % c)] += v * v;
    }
    for (int ch = 0; ch < c; ++ch) {
      double s = std::sqrt(d.channel_std[static_cast<size_t>(ch)] / static_cast<double>(per_channel));
      d.channel_std[static_cast<size_t>(ch)] = s > 1e-12 ? s : 1.0;
    }
  }
  if (d.channel_mean.size() != static_cast<size_t>(c) || d.channel_std.size() != static_cast<size_t>(c))
    throw ConfigError("standardize: missing normalization constants");
  for (int64_t i = 0; i < d.images.numel(); ++i) {
    size_t ch = static_cast<size_t>(i % c);
    d.images.data[static_cast<size_t>(i)] =
        (d.images.data[static_cast<size_t>(i)] - d.channel_mean[ch]) / d.channel_std[ch];
  }
}

std::pair<Dataset, Dataset> load_cifar(const std::vector<std::string>& train_paths,
                                       const std::string& test_path, const CifarLayout& layout) {
  if (train_paths.empty()) throw ConfigError("load_cifar: no train files given");
  Dataset train = load_cifar_raw(train_paths[0], layout);
  for (size_t i = 1; i < train_paths.size(); ++i) {
    Dataset part = load_cifar_raw(train_paths[i], layout);
    int64_t n0 = train.size(), n1 = part.size();
    Tensor merged(Shape{static_cast<int>(n0 + n1), layout.height, layout.width, layout.channels});
    std::copy(train.images.data.begin(), train.images.data.end(), merged.data.begin());
    std::copy(part.images.data.begin(), part.images.data.end(),
              merged.data.begin() + train.images.numel());
    train.images = std::move(merged);
    train.labels.insert(train.labels.end(), part.labels.begin(), part.labels.end());
    train.raw_pixels.insert(train.raw_pixels.end(), part.raw_pixels.begin(), part.raw_pixels.end());
  }
  Dataset test = load_cifar_raw(test_path, layout);
  train.split = "train";
  test.split = "test";
  standardize(train, true);
  test.channel_mean = train.channel_mean;
  test.channel_std = train.channel_std;
  standardize(test, false);
  return {std::move(train), std::move(test)};
}

namespace {

Dataset make_synth_split(int classes, int per_class, int h, int w, int c, uint64_t seed,
                         const std::string& split_tag) {
  int64_t n = static_cast<int64_t>(classes) * per_class;
  Dataset d;
  d.classes = classes;
  d.split = split_tag;
  d.images = Tensor(Shape{static_cast<int>(n), h, w, c});
  d.labels.resize(static_cast<size_t>(n));
  int64_t pix = static_cast<int64_t>(h) * w * c;
  d.raw_pixels.resize(static_cast<size_t>(n * pix));

  int64_t plane = static_cast<int64_t>(h) * w;
  for (int64_t i = 0; i < n; ++i) {
    int label = static_cast<int>(i % classes);
    d.labels[static_cast<size_t>(i)] = label;
    Rng rng(hash_combine(seed, kSynthStream, static_cast<uint64_t>(i)));

    // Blob center depends on the class only; position is the class signal.
    double cy = h * (0.30 + 0.40 * ((label / 2) % 2)) + rng.next_normal() * 0.4;
    double cx = w * (0.30 + 0.40 * (label % 2)) + rng.next_normal() * 0.4;
    double amp = 0.55 + 0.35 * rng.next_unit();
    double sigma = 0.12 * std::min(h, w) + 0.02 * std::min(h, w) * rng.next_unit();

    for (int ch = 0; ch < c; ++ch) {
      double chan_scale = 1.0 - 0.15 * ch / std::max(1, c - 1);
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          double dy = (y - cy) / sigma, dx = (x - cx) / sigma;
          double v = amp * chan_scale * std::exp(-0.5 * (dy * dy + dx * dx));
          v += 0.06 * rng.next_normal();
          v = std::clamp(v, 0.0, 1.0);
          uint8_t byte = static_cast<uint8_t>(std::lround(v * 255.0));
          d.raw_pixels[static_cast<size_t>(i * pix + ch * plane + y * w + x)] = byte;
        }
      }
    }
  }
  pixels_from_bytes(d);
  return d;
}

}  // namespace

std::pair<Dataset, Dataset> synth_dataset(int classes, int per_class, int h, int w, int c,
                                          uint64_t seed) {
  if (classes < 1 || per_class < 1 || h < 1 || w < 1 || c < 1)
    throw ConfigError("synth_dataset: all counts must be >= 1");
  Dataset train = make_synth_split(classes, per_class, h, w, c,
                                   hash_combine(seed, uint64_t{1}), "train");
  Dataset test = make_synth_split(classes, per_class, h, w, c,
                                  hash_combine(seed, uint64_t{2}), "test");
  standardize(train, true);
  test.channel_mean = train.channel_mean;
  test.channel_std = train.channel_std;
  standardize(test, false);
  return {std::move(train), std::move(test)};
}

void export_cifar_binary(const Dataset& d, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for writing: " + path);
  int lb = label_bytes(d.classes);
  int64_t pix = static_cast<int64_t>(d.height()) * d.width() * d.channels();
  for (int64_t i = 0; i < d.size(); ++i) {
    uint8_t label = static_cast<uint8_t>(d.labels[static_cast<size_t>(i)]);
    if (lb == 2) {
      uint8_t coarse = 0;  // the loader reads only the fine label
      f.write(reinterpret_cast<const char*>(&coarse), 1);
    }
    f.write(reinterpret_cast<const char*>(&label), 1);
    f.write(reinterpret_cast<const char*>(d.raw_pixels.data() + i * pix),
            static_cast<std::streamsize>(pix));
  }
  if (!f) throw IoError("write failed: " + path);
}

}  // namespace augmult
