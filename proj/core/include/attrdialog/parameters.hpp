// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <deque>
#include <map>
#include <string>
#include <vector>

#include "attrdialog/tensor.hpp"

namespace attrdialog {

/// Ordered, named collection of parameter tensors. Element addresses are
/// stable for the lifetime of the set, so layers may hold plain pointers.
class ParameterSet {
 public:
  ParameterSet() = default;
  ParameterSet(const ParameterSet&) = delete;
  ParameterSet& operator=(const ParameterSet&) = delete;

  /// Registers a zero tensor; names must be unique.
  Tensor& add(const std::string& name, Shape shape);

  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  std::size_t size() const { return tensors_.size(); }
  const std::string& name(std::size_t i) const { return names_[i]; }
  Tensor& tensor(std::size_t i) { return tensors_[i]; }
  const Tensor& tensor(std::size_t i) const { return tensors_[i]; }
  const std::vector<std::string>& names() const { return names_; }
  std::size_t entry_count() const;

  void zero_grad();
  double grad_norm() const;
  /// Rescales all gradients so their global L2 norm is at most `max_norm`.
  /// Returns the norm before clipping.
  double clip_grad_norm(double max_norm);

  /// Copies of every value tensor, in registration order.
  std::vector<Tensor> snapshot() const;
  void restore(const std::vector<Tensor>& values);

 private:
  std::deque<Tensor> tensors_;
  std::vector<std::string> names_;
  std::map<std::string, std::size_t> index_;
};

/// Squared L2 distance between current values and a snapshot.
double squared_distance(const ParameterSet& params,
                        const std::vector<Tensor>& reference);

}  // namespace attrdialog
