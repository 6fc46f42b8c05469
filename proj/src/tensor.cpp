#include "augmult/tensor.hpp"

#include <cmath>
#include <sstream>

#include "augmult/errors.hpp"

namespace augmult {

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int d : s) {
    if (d <= 0) throw ShapeError("non-positive dimension in shape " + shape_str(s));
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ")";
  return os.str();
}

Tensor::Tensor(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
  if (shape_numel(shape) != static_cast<int64_t>(data.size()))
    throw ShapeError("data length does not match shape " + shape_str(shape));
}

Tensor Tensor::full(Shape s, double v) {
  Tensor t(std::move(s));
  for (double& x : t.data) x = v;
  return t;
}

Tensor Tensor::scalar(double v) {
  Tensor t(Shape{1});
  t.data[0] = v;
  return t;
}

bool Tensor::all_finite() const {
  for (double x : data)
    if (!std::isfinite(x)) return false;
  return true;
}

bool same_shape(const Tensor& a, const Tensor& b) { return a.shape == b.shape; }

void add_inplace(Tensor& a, const Tensor& b) {
  if (!same_shape(a, b))
    throw ShapeError("add_inplace shape mismatch " + shape_str(a.shape) + " vs " +
                     shape_str(b.shape));
  for (size_t i = 0; i < a.data.size(); ++i) a.data[i] += b.data[i];
}

void scale_inplace(Tensor& a, double c) {
  for (double& x : a.data) x *= c;
}

Tensor pairwise_sum(const std::vector<Tensor>& tensors, size_t begin, size_t end) {
  if (begin >= end) throw ShapeError("pairwise_sum over empty range");
  if (end - begin == 1) return tensors[begin];
  size_t mid = begin + (end - begin) / 2;
  Tensor left = pairwise_sum(tensors, begin, mid);
  Tensor right = pairwise_sum(tensors, mid, end);
  add_inplace(left, right);
  return left;
}

Tensor pairwise_mean(const std::vector<Tensor>& tensors) {
  Tensor s = pairwise_sum(tensors, 0, tensors.size());
  scale_inplace(s, 1.0 / static_cast<double>(tensors.size()));
  return s;
}

std::vector<Tensor> pairwise_sum_lists(const std::vector<std::vector<Tensor>>& lists,
                                       size_t begin, size_t end) {
  if (begin >= end) throw ShapeError("pairwise_sum_lists over empty range");
  if (end - begin == 1) return lists[begin];
  size_t mid = begin + (end - begin) / 2;
  std::vector<Tensor> left = pairwise_sum_lists(lists, begin, mid);
  std::vector<Tensor> right = pairwise_sum_lists(lists, mid, end);
  if (left.size() != right.size()) throw ShapeError("pairwise_sum_lists arity mismatch");
  for (size_t i = 0; i < left.size(); ++i) add_inplace(left[i], right[i]);
  return left;
}

std::vector<Tensor> pairwise_mean_lists(const std::vector<std::vector<Tensor>>& lists) {
  std::vector<Tensor> s = pairwise_sum_lists(lists, 0, lists.size());
  double inv = 1.0 / static_cast<double>(lists.size());
  for (Tensor& t : s) scale_inplace(t, inv);
  return s;
}

double pairwise_sum_values(const std::vector<double>& v, size_t begin, size_t end) {
  if (begin >= end) throw ShapeError("pairwise_sum_values over empty range");
  if (end - begin == 1) return v[begin];
  size_t mid = begin + (end - begin) / 2;
  return pairwise_sum_values(v, begin, mid) + pairwise_sum_values(v, mid, end);
}

double pairwise_mean_values(const std::vector<double>& v) {
  return pairwise_sum_values(v, 0, v.size()) / static_cast<double>(v.size());
}

}  // namespace augmult
