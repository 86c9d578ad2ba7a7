// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>

namespace attrdialog {

/// The single generator type threaded through every stochastic operation.
using Rng = std::mt19937_64;

inline double uniform01(Rng& rng) {
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

}  // namespace attrdialog
