#include "diffedit/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "diffedit/error.hpp"

namespace diffedit {

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i > 0) out += ",";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_numel(shape_) != data_.size()) {
    throw ShapeError("tensor: shape " + shape_string(shape_) + " needs " +
                     std::to_string(shape_numel(shape_)) + " values, got " +
                     std::to_string(data_.size()));
  }
}

Tensor Tensor::vector(std::initializer_list<double> values) {
  return vector(std::vector<double>(values));
}

Tensor Tensor::vector(std::vector<double> values) {
  Shape shape{values.size()};
  return Tensor(std::move(shape), std::move(values));
}

double Tensor::item() const {
  if (data_.size() != 1) {
    throw ShapeError("item() on tensor of shape " + shape_string(shape_));
  }
  return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const {
  return Tensor(std::move(shape), data_);
}

Tensor Tensor::row(std::size_t r) const {
  if (rank() != 2 || r >= shape_[0]) {
    throw ShapeError("row " + std::to_string(r) + " of tensor " +
                     shape_string(shape_));
  }
  const std::size_t cols = shape_[1];
  const auto first = data_.begin() + static_cast<std::ptrdiff_t>(r * cols);
  return Tensor({1, cols}, std::vector<double>(first, first + static_cast<std::ptrdiff_t>(cols)));
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(),
                     [](double v) { return std::isfinite(v); });
}

Tensor stack_rows(std::span<const Tensor> rows) {
  if (rows.empty()) throw ShapeError("stack_rows: no rows");
  const std::size_t d = rows.front().size();
  std::vector<double> data;
  data.reserve(d * rows.size());
  for (const Tensor& r : rows) {
    if (r.size() != d) {
      throw ShapeError("stack_rows: row " + shape_string(r.shape()) +
                       " does not match width " + std::to_string(d));
    }
    data.insert(data.end(), r.values().begin(), r.values().end());
  }
  return Tensor({rows.size(), d}, std::move(data));
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.size() != b.size()) {
    throw ShapeError("max_abs_diff: " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    m = std::max(m, std::fabs(a[i] - b[i]));
  }
  return m;
}

}  // namespace diffedit
