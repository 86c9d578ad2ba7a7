// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "attrdialog/parameters.hpp"

namespace attrdialog {

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// First and second moment buffers for each parameter tensor, plus the
/// shared step counter.
struct AdamState {
  AdamConfig config;
  std::uint64_t step = 0;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
};

/// One bias-corrected Adam update of `param` given `grad`, using moment
/// buffers `m` and `v` at step `t` (already incremented, so t >= 1).
void adam_update(std::span<double> param, std::span<const double> grad,
                 std::span<double> m, std::span<double> v, std::uint64_t t,
                 const AdamConfig& config);

/// Applies one Adam step to every tensor of `params` using its gradient
/// buffer (tensors without one are treated as zero-gradient). Moment buffers
/// are created on the first call. Increments state.step by exactly one.
void adam_step(ParameterSet& params, AdamState& state);

/// Same update over explicit parameter/gradient pairs.
void adam_step(std::span<Tensor* const> params,
               std::span<const std::span<const double>> grads, AdamState& state);

}  // namespace attrdialog
