#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "avsync/diffnum/nn.hpp"

namespace avsync::generator {

using diff::Tensor;

inline constexpr std::size_t kBranches = 4;

struct GeneratorConfig {
  std::size_t dim = 64;
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t ff_mult = 2;
  /// Attention context in frames. Rollouts longer than this attend to the
  /// most recent `context` frames, re-indexed from position 0, so positions
  /// never exceed those seen in training. 0 = unlimited.
  std::size_t context = 40;
  /// Zero the last layer of every branch so training starts from x_{t+1} = x_t.
  bool zero_init_output = true;

  static GeneratorConfig desk() { return {}; }
  static GeneratorConfig paper() { return {512, 4, 8, 4, 40, true}; }
};

struct StepOutput {
  Tensor velocity;                  // [B, 60]
  std::vector<Tensor> branch_v;     // kBranches x [B, 60]
  Tensor mask_weights;              // [B, 10, kBranches], softmax over branches
};

struct RolloutTrace {
  /// Per generated step: [B, 10, kBranches] branch weights.
  std::vector<Tensor> mask_weights;
};

class RolloutError : public std::runtime_error {
 public:
  RolloutError(const std::string& what, std::size_t step) : std::runtime_error(what), step_(step) {}
  /// Index of the first frame that failed.
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

/// Sinusoidal position code [len, dim].
Tensor positional_encoding(std::size_t len, std::size_t dim, std::size_t offset = 0);

/// v = sum_i softmax_i(w^i) * v^i, one weight per keypoint broadcast over its
/// six values. v: kBranches x [B, 60]; w: kBranches x [B, 10].
StepOutput merge_branches(const std::vector<Tensor>& v, const std::vector<Tensor>& w);

class GeneratorModel {
 public:
  GeneratorModel(const GeneratorConfig& config, std::uint64_t seed);
  GeneratorModel(GeneratorModel&&) = default;
  GeneratorModel& operator=(GeneratorModel&&) = default;
  GeneratorModel(const GeneratorModel&) = delete;
  GeneratorModel& operator=(const GeneratorModel&) = delete;

  /// audio [B, 4T, 26] (or [4T, 26]) -> kBranches maps [B, T, dim]. When
  /// `native` is given it receives the maps before upsampling.
  std::vector<Tensor> audio_fpn(const Tensor& audio, std::size_t T, std::vector<Tensor>* native = nullptr) const;

  /// Full causal encoding: x [B, T, 60] -> h [B, T, dim]; h_t sees x_0..x_t.
  Tensor encode(const Tensor& x) const;

  /// One velocity prediction from h_t, x_t and the audio maps at t+1.
  StepOutput step(const Tensor& h, const Tensor& x, const std::vector<Tensor>& audio_next) const;

  /// Free-running generation: x0 [B, 60], audio [B, 4T, 26] -> [B, T, 60]
  /// with row 0 = x0 and x_{t+1} = x_t + v_{t+1}. Unbatched inputs give
  /// [T, 60]. Throws RolloutError at the first non-finite frame.
  Tensor rollout(const Tensor& x0, const Tensor& audio, std::size_t T, RolloutTrace* trace = nullptr) const;

  const GeneratorConfig& config() const { return config_; }
  diff::ParameterStore& params() { return store_; }
  const diff::ParameterStore& params() const { return store_; }

 private:
  struct Layer {
    diff::LayerNorm ln1, ln2;
    diff::Linear q, k, v, o, ff1, ff2;
  };
  struct Branch {
    diff::Linear l1, l2, out;
  };

  Tensor attend(const Layer& layer, const Tensor& q, const Tensor& k, const Tensor& v, const Tensor* mask) const;
  Tensor block(const Layer& layer, const Tensor& h, const Tensor& mask) const;

  GeneratorConfig config_;
  diff::ParameterStore store_;
  diff::Linear embed_;
  std::vector<Layer> layers_;
  diff::LayerNorm final_ln_;
  diff::Linear stem_;
  std::vector<diff::Conv1d> fpn_;
  std::vector<Branch> branches_;
};

}  // namespace avsync::generator
