#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "augmult/tensor.hpp"

namespace augmult {

// Images are stored standardized (per-channel mean/std computed from the
// train split and reused for test); the raw bytes are kept alongside so a
// dataset can be exported back to the binary layout unchanged.
struct Dataset {
  Tensor images;  // (N,H,W,C)
  std::vector<int> labels;
  int classes = 0;
  std::string split;
  std::vector<double> channel_mean;  // constants actually applied
  std::vector<double> channel_std;
  std::vector<uint8_t> raw_pixels;  // planar, as in the binary layout

  int64_t size() const { return images.ndim() == 4 ? images.dim(0) : 0; }
  int height() const { return images.dim(1); }
  int width() const { return images.dim(2); }
  int channels() const { return images.dim(3); }
  Tensor image(int64_t i) const;
};

// CIFAR-style binary record: for classes==100 a coarse then a fine label
// byte, otherwise a single label byte, followed by H*W*C pixel bytes in
// channel-planar order. Defaults match the CIFAR files.
struct CifarLayout {
  int classes = 10;
  int height = 32;
  int width = 32;
  int channels = 3;
};

// Loads and standardizes the train split, then the test split with the
// train split's constants.
std::pair<Dataset, Dataset> load_cifar(const std::vector<std::string>& train_paths,
                                       const std::string& test_path, const CifarLayout& layout);

// Raw (unstandardized) single-file load; used by the pair loader and tests.
Dataset load_cifar_raw(const std::string& path, const CifarLayout& layout);

// Standardize in place: scale bytes to [0,1], subtract mean, divide by std.
// Computes the constants when compute_constants is true, otherwise applies
// the ones already present in `d`.
void standardize(Dataset& d, bool compute_constants);

// Class-conditional blob images whose class signal is spatial position, so
// crops and flips move the optimum and augmentation bias is measurable.
// Returns (train, test), per_class examples of each class in each split.
std::pair<Dataset, Dataset> synth_dataset(int classes, int per_class, int h, int w, int c,
                                          uint64_t seed);

// Writes the dataset's raw bytes in the binary layout above.
void export_cifar_binary(const Dataset& d, const std::string& path);

}  // namespace augmult
