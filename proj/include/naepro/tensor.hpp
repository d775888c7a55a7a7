// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace naepro {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major array of doubles. Rank 0 is a scalar.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double value) { return Tensor(Shape{}, std::vector<double>{value}); }
  static Tensor vector(std::initializer_list<double> values);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::initializer_list<double> values);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  bool empty() const noexcept { return data_.empty(); }

  // For rank-2 tensors; rank-1 tensors are treated as a single row.
  std::size_t rows() const noexcept;
  std::size_t cols() const noexcept;

  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }
  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }

  double& operator[](std::size_t i) noexcept { return data_[i]; }
  double operator[](std::size_t i) const noexcept { return data_[i]; }
  double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols() + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols() + c]; }

  double item() const;
  bool all_finite() const noexcept;
  void fill(double value) noexcept;

  Tensor reshaped(Shape shape) const;

  friend bool operator==(const Tensor& a, const Tensor& b) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

/// Largest absolute entry of a - b; shapes must match.
double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace naepro
