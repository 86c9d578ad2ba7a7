// SPDX-License-Identifier: Apache-2.0
#include "attrdialog/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

#include "attrdialog/error.hpp"

namespace attrdialog {

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    out << (i ? "x" : "") << shape[i];
  }
  out << ']';
  return out.str();
}

namespace {

void check_extents(const Shape& shape) {
  for (std::size_t extent : shape) {
    if (extent == 0) {
      throw ShapeError("tensor extents must be positive, got " +
                       shape_string(shape));
    }
  }
}

}  // namespace

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), values_(shape_size(shape_), fill) {
  check_extents(shape_);
}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
  check_extents(shape_);
  if (values_.size() != shape_size(shape_)) {
    throw ShapeError("value count " + std::to_string(values_.size()) +
                     " does not match shape " + shape_string(shape_));
  }
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols,
                      std::initializer_list<double> values) {
  return Tensor({rows, cols}, std::vector<double>(values));
}

Tensor Tensor::row(std::span<const double> values) {
  return Tensor({1, values.size()},
                std::vector<double>(values.begin(), values.end()));
}

Tensor Tensor::scalar(double value) { return Tensor({1, 1}, {value}); }

std::size_t Tensor::rows() const { return shape_.empty() ? 1 : shape_[0]; }

std::size_t Tensor::cols() const {
  if (shape_.size() <= 1) return 1;
  return values_.size() / shape_[0];
}

std::span<double> Tensor::grad() {
  if (!grad_) grad_.emplace(values_.size(), 0.0);
  return *grad_;
}

std::span<const double> Tensor::grad() const {
  if (!grad_) return {};
  return *grad_;
}

void Tensor::zero_grad() {
  if (grad_) std::fill(grad_->begin(), grad_->end(), 0.0);
}

void Tensor::fill(double value) {
  std::fill(values_.begin(), values_.end(), value);
}

bool Tensor::all_finite() const {
  return std::all_of(values_.begin(), values_.end(),
                     [](double v) { return std::isfinite(v); });
}

void require_finite(std::span<const double> values, const char* what) {
  for (double v : values) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string("non-finite value in ") + what);
    }
  }
}

}  // namespace attrdialog
