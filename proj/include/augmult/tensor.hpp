#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace augmult {

using Shape = std::vector<int>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

// Dense n-dimensional array of doubles, row-major. The single carrier for
// images, activations, parameters and gradients.
struct Tensor {
  Shape shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(Shape s) : shape(std::move(s)), data(shape_numel(shape), 0.0) {}
  Tensor(Shape s, std::vector<double> d);

  static Tensor zeros(Shape s) { return Tensor(std::move(s)); }
  static Tensor full(Shape s, double v);
  static Tensor scalar(double v);

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  int ndim() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape[static_cast<size_t>(i)]; }

  double& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }
  double operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }

  // (H, W, C) indexing, the layout images and conv activations use.
  double& at3(int y, int x, int c) {
    return data[static_cast<size_t>((static_cast<int64_t>(y) * shape[1] + x) * shape[2] + c)];
  }
  double at3(int y, int x, int c) const {
    return data[static_cast<size_t>((static_cast<int64_t>(y) * shape[1] + x) * shape[2] + c)];
  }

  bool all_finite() const;
};

bool same_shape(const Tensor& a, const Tensor& b);

// Elementwise a += b. Shapes must match.
void add_inplace(Tensor& a, const Tensor& b);
void scale_inplace(Tensor& a, double c);

// Pairwise (binary-tree) sum of tensors[begin, end). Splitting at the
// midpoint keeps the reduction order fixed and makes sums of identical
// values exact whenever the count is a power of two.
Tensor pairwise_sum(const std::vector<Tensor>& tensors, size_t begin, size_t end);
Tensor pairwise_mean(const std::vector<Tensor>& tensors);

// Same tree over parameter lists (one vector<Tensor> per contributor).
std::vector<Tensor> pairwise_sum_lists(const std::vector<std::vector<Tensor>>& lists,
                                       size_t begin, size_t end);
std::vector<Tensor> pairwise_mean_lists(const std::vector<std::vector<Tensor>>& lists);

double pairwise_sum_values(const std::vector<double>& v, size_t begin, size_t end);
double pairwise_mean_values(const std::vector<double>& v);

}  // namespace augmult
