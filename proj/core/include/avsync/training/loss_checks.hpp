#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace avsync::training {

struct LossCheckResult {
  std::string name;
  std::size_t instances = 0;
  std::size_t entries = 0;  // finite-difference probes over all instances
  double max_rel_error = 0.0;
  std::string worst;
  bool passed = false;
};

/// infonce, triplet, ms_av, d_hinge, g_adv, rec.
std::vector<std::string> registered_losses();

/// Central finite-difference check of every registered loss on `instances`
/// random small problems each, at f64.
std::vector<LossCheckResult> run_loss_checks(std::size_t instances = 5, std::uint64_t seed = 0,
                                             double tolerance = 1e-4);

}  // namespace avsync::training
