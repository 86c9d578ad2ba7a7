// SPDX-License-Identifier: Apache-2.0
#include "attrdialog/parameters.hpp"

#include <cmath>

#include "attrdialog/error.hpp"

namespace attrdialog {

Tensor& ParameterSet::add(const std::string& name, Shape shape) {
  if (index_.count(name)) throw ArgumentError("duplicate parameter name " + name);
  index_.emplace(name, tensors_.size());
  names_.push_back(name);
  tensors_.emplace_back(std::move(shape));
  return tensors_.back();
}

Tensor& ParameterSet::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ArgumentError("unknown parameter " + name);
  return tensors_[it->second];
}

const Tensor& ParameterSet::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ArgumentError("unknown parameter " + name);
  return tensors_[it->second];
}

std::size_t ParameterSet::entry_count() const {
  std::size_t total = 0;
  for (const Tensor& t : tensors_) total += t.size();
  return total;
}

void ParameterSet::zero_grad() {
  for (Tensor& t : tensors_) t.zero_grad();
}

double ParameterSet::grad_norm() const {
  double total = 0.0;
  for (const Tensor& t : tensors_) {
    for (double g : t.grad()) total += g * g;
  }
  return std::sqrt(total);
}

double ParameterSet::clip_grad_norm(double max_norm) {
  const double norm = grad_norm();
  if (norm > max_norm && norm > 0.0) {
    const double factor = max_norm / norm;
    for (Tensor& t : tensors_) {
      if (!t.has_grad()) continue;
      for (double& g : t.grad()) g *= factor;
    }
  }
  return norm;
}

std::vector<Tensor> ParameterSet::snapshot() const {
  std::vector<Tensor> out;
  out.reserve(tensors_.size());
  for (const Tensor& t : tensors_) {
    out.emplace_back(t.shape(),
                     std::vector<double>(t.values().begin(), t.values().end()));
  }
  return out;
}

void ParameterSet::restore(const std::vector<Tensor>& values) {
  if (values.size() != tensors_.size()) {
    throw ShapeError("restore: snapshot has " + std::to_string(values.size()) +
                     " tensors, set has " + std::to_string(tensors_.size()));
  }
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (values[i].shape() != tensors_[i].shape()) {
      throw ShapeError("restore: shape mismatch for " + names_[i]);
    }
    std::copy(values[i].values().begin(), values[i].values().end(),
              tensors_[i].values().begin());
  }
}

double squared_distance(const ParameterSet& params,
                        const std::vector<Tensor>& reference) {
  if (reference.size() != params.size()) {
    throw ShapeError("squared_distance: snapshot size mismatch");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto a = params.tensor(i).values();
    auto b = reference[i].values();
    if (a.size() != b.size()) throw ShapeError("squared_distance: shape mismatch");
    for (std::size_t j = 0; j < a.size(); ++j) {
      const double d = a[j] - b[j];
      total += d * d;
    }
  }
  return total;
}

}  // namespace attrdialog
