#include "avsync/diffnum/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

namespace avsync::diff {

GradCheckResult gradcheck(const std::function<Tensor()>& loss_fn, std::vector<Tensor> wrt,
                          const GradCheckOptions& options) {
  std::vector<std::vector<double>> analytic;
  {
    Tape tape;
    TapeScope scope(tape);
    Tensor loss = loss_fn();
    GradientMap g = tape.backward(loss);
    for (const auto& t : wrt) analytic.push_back(g.get(t));
  }

  std::mt19937_64 rng(options.seed);
  GradCheckResult result;
  NoGradScope no_grad;
  for (std::size_t k = 0; k < wrt.size(); ++k) {
    auto data = wrt[k].mutable_data();
    std::vector<std::size_t> idx(data.size());
    std::iota(idx.begin(), idx.end(), 0);
    if (options.max_entries_per_tensor && idx.size() > options.max_entries_per_tensor) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(options.max_entries_per_tensor);
    }
    for (auto i : idx) {
      const double orig = data[i];
      data[i] = orig + options.step;
      const double up = loss_fn().item();
      data[i] = orig - options.step;
      const double down = loss_fn().item();
      data[i] = orig;
      const double numeric = (up - down) / (2.0 * options.step);
      const double a = analytic[k][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), options.floor});
      const double rel = std::abs(a - numeric) / denom;
      ++result.entries_checked;
      if (rel > result.max_rel_error || !std::isfinite(rel)) {
        result.max_rel_error = std::isfinite(rel) ? rel : INFINITY;
        std::ostringstream os;
        os << "tensor " << k << '[' << i << "]: analytic " << a << " vs numeric " << numeric;
        result.worst = os.str();
      }
    }
  }
  return result;
}

}  // namespace avsync::diff
