#include "avsync/diffnum/adam.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace avsync::diff {

AdamState AdamState::for_store(const ParameterStore& store, AdamConfig config) {
  if (!(config.learning_rate >= 0.0)) throw std::invalid_argument("adam: negative learning rate");
  AdamState s;
  s.config = config;
  for (const auto& e : store.entries()) {
    s.m.emplace_back(e.second.size(), 0.0);
    s.v.emplace_back(e.second.size(), 0.0);
  }
  return s;
}

void adam_step(ParameterStore& store, const GradientMap& grads, AdamState& state) {
  if (store.frozen()) throw std::logic_error("adam: refusing to update a frozen parameter store");
  const auto& entries = store.entries();
  if (state.m.size() != entries.size()) {
    throw ShapeError("adam: state tracks " + std::to_string(state.m.size()) +
                     " parameters, store has " + std::to_string(entries.size()));
  }
  std::vector<std::vector<double>> g(entries.size());
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& [name, p] = entries[i];
    if (state.m[i].size() != p.size()) {
      throw ShapeError("adam: moment shape mismatch for " + name);
    }
    g[i] = grads.get(p);
    for (std::size_t j = 0; j < g[i].size(); ++j) {
      if (!std::isfinite(g[i][j])) {
        std::ostringstream os;
        os << "adam: non-finite gradient " << g[i][j] << " in parameter '" << name
           << "' at index " << j << " (step " << state.step << ")";
        throw NonFiniteError(os.str());
      }
    }
  }

  ++state.step;
  const auto& c = state.config;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < entries.size(); ++i) {
    Tensor p = entries[i].second;
    auto data = p.mutable_data();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t j = 0; j < data.size(); ++j) {
      m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g[i][j];
      v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g[i][j] * g[i][j];
      const double m_hat = m[j] / bc1;
      const double v_hat = v[j] / bc2;
      data[j] -= c.learning_rate * m_hat / (std::sqrt(v_hat) + c.epsilon);
    }
  }
}

}  // namespace avsync::diff
