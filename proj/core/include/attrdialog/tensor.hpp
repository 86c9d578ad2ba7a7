// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <initializer_list>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace attrdialog {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major array of doubles with an optional gradient buffer of the
/// same shape. Every extent is positive.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor matrix(std::size_t rows, std::size_t cols,
                       std::initializer_list<double> values);
  static Tensor row(std::span<const double> values);
  static Tensor scalar(double value);

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return values_.size(); }
  std::size_t rank() const { return shape_.size(); }
  /// Leading extent; 1 for scalars.
  std::size_t rows() const;
  /// Product of the trailing extents; the row stride.
  std::size_t cols() const;

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }
  double& at(std::size_t r, std::size_t c) { return values_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return values_[r * cols() + c]; }

  bool has_grad() const { return grad_.has_value(); }
  /// Allocates a zero gradient buffer if none exists.
  std::span<double> grad();
  std::span<const double> grad() const;
  void zero_grad();
  void drop_grad() { grad_.reset(); }

  void fill(double value);
  bool all_finite() const;

 private:
  Shape shape_;
  std::vector<double> values_;
  std::optional<std::vector<double>> grad_;
};

/// Throws NumericError naming `what` if any entry is NaN or infinite.
void require_finite(std::span<const double> values, const char* what);

}  // namespace attrdialog
