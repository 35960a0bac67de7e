#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace diffedit {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

// Dense row-major f64 array. product(shape) == size() always holds; rank 0
// (shape {}) is a scalar with one element.
class Tensor {
 public:
  Tensor() : shape_{}, data_(1, 0.0) {}
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double value) { return Tensor(Shape{}, {value}); }
  // 1-D tensor from a list of values.
  static Tensor vector(std::initializer_list<double> values);
  static Tensor vector(std::vector<double> values);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_.size(); }
  bool is_scalar() const { return data_.size() == 1 && shape_.empty(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  const std::vector<double>& values() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  // Value of a one-element tensor.
  double item() const;

  // Same data, new shape of equal element count.
  Tensor reshaped(Shape shape) const;
  // Row `r` of a rank-2 tensor, as shape {1, cols}.
  Tensor row(std::size_t r) const;

  bool all_finite() const;

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<double> data_;
};

// Stack equally shaped rank-2 {1, d} rows (or rank-1 {d} vectors) into {n, d}.
Tensor stack_rows(std::span<const Tensor> rows);

double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace diffedit
