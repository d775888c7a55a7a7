// SPDX-License-Identifier: Apache-2.0
#include "naepro/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "naepro/error.hpp"

namespace naepro {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kDimension: return "dimension";
    case ErrorKind::kParse: return "parse";
    case ErrorKind::kValidation: return "validation";
    case ErrorKind::kConfig: return "config";
    case ErrorKind::kNumeric: return "numeric";
    case ErrorKind::kIo: return "io";
  }
  return "unknown";
}

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_size(shape_) != data_.size()) {
    throw DimensionError("tensor shape " + shape_string(shape_) + " holds " +
                         std::to_string(shape_size(shape_)) + " values but " +
                         std::to_string(data_.size()) + " were given");
  }
}

Tensor Tensor::vector(std::initializer_list<double> values) {
  return Tensor(Shape{values.size()}, std::vector<double>(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::initializer_list<double> values) {
  return Tensor(Shape{rows, cols}, std::vector<double>(values));
}

std::size_t Tensor::rows() const noexcept {
  std::size_t r = 1;
  for (std::size_t i = 0; i + 1 < shape_.size(); ++i) r *= shape_[i];
  return r;
}

std::size_t Tensor::cols() const noexcept { return shape_.empty() ? 1 : shape_.back(); }

double Tensor::item() const {
  if (data_.size() != 1) {
    throw DimensionError("item() needs a single-element tensor, got " + shape_string(shape_));
  }
  return data_[0];
}

bool Tensor::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void Tensor::fill(double value) noexcept { std::fill(data_.begin(), data_.end(), value); }

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_size(shape) != data_.size()) {
    throw DimensionError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  }
  return Tensor(std::move(shape), data_);
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("max_abs_diff shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

}  // namespace naepro
