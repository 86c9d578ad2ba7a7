// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "attrdialog/graph.hpp"
#include "attrdialog/parameters.hpp"

namespace attrdialog {

struct NamedTensor {
  std::string name;
  Tensor* tensor;
};

struct GradientCheckEntry {
  std::string name;
  std::size_t entries = 0;
  double max_relative_error = 0.0;
  double max_absolute_error = 0.0;
};

struct GradientCheckReport {
  std::vector<GradientCheckEntry> entries;
  double max_relative_error = 0.0;

  bool passed(double tolerance) const { return max_relative_error < tolerance; }
  const GradientCheckEntry* find(const std::string& name) const;
  std::string summary() const;
};

/// Builds the scalar to be differentiated on a fresh graph. Must bind the
/// checked tensors through Graph::parameter and be deterministic.
using Computation = std::function<ad::Expr(ad::Graph&)>;

/// Relative error |a - n| / max(|a|, |n|, floor). The floor keeps entries
/// whose true gradient is ~0 from dividing roundoff by roundoff.
double gradient_relative_error(double analytic, double numeric,
                               double floor = 1e-6);

/// Compares reverse-mode gradients of `computation` against central
/// differences with step `eps` for every entry of every tensor in `params`.
/// Values are restored exactly afterwards; gradient buffers are reset.
GradientCheckReport check_gradients(const Computation& computation,
                                    std::span<const NamedTensor> params,
                                    double eps = 1e-5, double floor = 1e-6);

GradientCheckReport check_gradients(const Computation& computation,
                                    ParameterSet& params, double eps = 1e-5,
                                    double floor = 1e-6);

}  // namespace attrdialog
