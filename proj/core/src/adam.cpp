// SPDX-License-Identifier: Apache-2.0
#include "attrdialog/adam.hpp"

#include <cmath>
#include <utility>

#include "attrdialog/error.hpp"

namespace attrdialog {

void adam_update(std::span<double> param, std::span<const double> grad,
                 std::span<double> m, std::span<double> v, std::uint64_t t,
                 const AdamConfig& config) {
  if (grad.size() != param.size() || m.size() != param.size() ||
      v.size() != param.size()) {
    throw ShapeError("adam_update: parameter, gradient and moment sizes differ");
  }
  const double correction1 = 1.0 - std::pow(config.beta1, static_cast<double>(t));
  const double correction2 = 1.0 - std::pow(config.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < param.size(); ++i) {
    m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * grad[i];
    v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * grad[i] * grad[i];
    const double m_hat = m[i] / correction1;
    const double v_hat = v[i] / correction2;
    param[i] -= config.learning_rate * m_hat / (std::sqrt(v_hat) + config.epsilon);
  }
  require_finite(param, "adam update");
}

namespace {

void ensure_moments(AdamState& state, std::span<Tensor* const> params) {
  if (state.first_moment.empty() && state.step == 0) {
    for (Tensor* p : params) {
      state.first_moment.emplace_back(p->size(), 0.0);
      state.second_moment.emplace_back(p->size(), 0.0);
    }
  }
  if (state.first_moment.size() != params.size() ||
      state.second_moment.size() != params.size()) {
    throw ShapeError("adam_step: state tracks " +
                     std::to_string(state.first_moment.size()) +
                     " tensors, got " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (state.first_moment[i].size() != params[i]->size() ||
        state.second_moment[i].size() != params[i]->size()) {
      throw ShapeError("adam_step: moment buffer shape mismatch at tensor " +
                       std::to_string(i));
    }
  }
}

}  // namespace

void adam_step(std::span<Tensor* const> params,
               std::span<const std::span<const double>> grads, AdamState& state) {
  if (grads.size() != params.size()) {
    throw ShapeError("adam_step: " + std::to_string(grads.size()) +
                     " gradients for " + std::to_string(params.size()) +
                     " parameters");
  }
  ensure_moments(state, params);
  const std::uint64_t t = state.step + 1;
  for (std::size_t i = 0; i < params.size(); ++i) {
    std::span<const double> g = grads[i];
    std::vector<double> zero_fill;
    if (g.empty()) {
      zero_fill.assign(params[i]->size(), 0.0);
      g = zero_fill;
    }
    adam_update(params[i]->values(), g, state.first_moment[i],
                state.second_moment[i], t, state.config);
  }
  state.step = t;
}

void adam_step(ParameterSet& params, AdamState& state) {
  std::vector<Tensor*> tensors;
  std::vector<std::span<const double>> grads;
  tensors.reserve(params.size());
  grads.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& t = params.tensor(i);
    tensors.push_back(&t);
    grads.push_back(std::as_const(t).grad());
  }
  adam_step(tensors, grads, state);
}

}  // namespace attrdialog
