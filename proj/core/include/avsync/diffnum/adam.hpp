#pragma once

#include <cstdint>
#include <vector>

#include "avsync/diffnum/nn.hpp"

namespace avsync::diff {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.0;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Moment accumulators, one pair per store entry in store order.
struct AdamState {
  AdamConfig config;
  std::uint64_t step = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;

  static AdamState for_store(const ParameterStore& store, AdamConfig config);
};

/// One bias-corrected Adam update of every parameter in `store`.
/// Parameters absent from `grads` see a zero gradient. Throws
/// NonFiniteError naming the offending parameter before any write happens,
/// and std::logic_error on a frozen store.
void adam_step(ParameterStore& store, const GradientMap& grads, AdamState& state);

}  // namespace avsync::diff
