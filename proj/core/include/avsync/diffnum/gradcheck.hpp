#pragma once

#include <functional>
#include <string>
#include <vector>

#include "avsync/diffnum/tensor.hpp"

namespace avsync::diff {

struct GradCheckOptions {
  double step = 1e-5;
  /// Denominator floor of the per-entry relative error
  /// |analytic - numeric| / max(|analytic|, |numeric|, floor).
  double floor = 1e-6;
  /// Entries probed per tensor; 0 checks every entry.
  std::size_t max_entries_per_tensor = 0;
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t entries_checked = 0;
  std::string worst;  // "<tensor #>[index]: analytic vs numeric"
};

/// Compares reverse-mode gradients of `loss_fn` w.r.t. the leaf tensors in
/// `wrt` against central finite differences. `loss_fn` is invoked once under
/// a fresh tape and then repeatedly with recording disabled while entries of
/// `wrt` are perturbed in place (and restored).
GradCheckResult gradcheck(const std::function<Tensor()>& loss_fn, std::vector<Tensor> wrt,
                          const GradCheckOptions& options = {});

}  // namespace avsync::diff
