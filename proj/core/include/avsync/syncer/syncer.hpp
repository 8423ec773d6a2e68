#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "avsync/diffnum/nn.hpp"
#include "avsync/features/clip.hpp"
#include "avsync/pyramid/pyramid.hpp"

namespace avsync::syncer {

using diff::Tensor;

struct SyncerConfig {
  std::size_t level = 1;  // 1-based pyramid level
  std::size_t embed_dim = 64;
  std::size_t conv_channels = 32;
  /// Subtract the per-window temporal mean from keypoint segments so the
  /// embedding sees motion rather than face layout.
  bool center_keypoints = true;
  bool positions_only = false;
  double logit_scale_init = 10.0;
};

/// Two-tower embedding model for one pyramid level.
///   e_a: [n, 20, 26] -> conv(k3, s2) -> GELU -> conv(k3, s2) -> GELU -> MLP -> [n, E]
///   e_x: [n, 5, 60]  -> MLP with layer norm -> [n, E]
class SyncerModel {
 public:
  SyncerModel(const SyncerConfig& config, std::uint64_t seed);
  SyncerModel(SyncerModel&&) = default;
  SyncerModel& operator=(SyncerModel&&) = default;
  SyncerModel(const SyncerModel&) = delete;
  SyncerModel& operator=(const SyncerModel&) = delete;

  Tensor embed_audio(const Tensor& audio) const;
  Tensor embed_keypoints(const Tensor& keypoints) const;
  /// Cosine score of paired segments; accepts single ([20,26], [5,60]) or
  /// batched ([n,20,26], [n,5,60]) inputs.
  Tensor score(const Tensor& audio, const Tensor& keypoints) const;
  const Tensor& logit_scale() const { return logit_scale_; }

  const SyncerConfig& config() const { return config_; }
  diff::ParameterStore& params() { return store_; }
  const diff::ParameterStore& params() const { return store_; }
  void freeze() { store_.freeze(); }
  bool frozen() const { return store_.frozen(); }

 private:
  SyncerConfig config_;
  diff::ParameterStore store_;
  diff::Conv1d conv1_, conv2_;
  diff::Linear a1_, a2_;
  diff::Linear x1_, x2_, x3_;
  diff::LayerNorm n1_, n2_;
  Tensor logit_scale_;
};

/// Cosine over the last axis with the 1e-8 norm guard.
Tensor cosine_score(const Tensor& ea, const Tensor& ex);

/// pos: [B], neg: [B, N], scale: scalar. Log form:
///   mean_b -log(exp(s*pos) / (exp(s*pos) + sum_n exp(s*neg)))
/// literal form drops the log: mean_b -(ratio).
Tensor infonce_from_scores(const Tensor& pos, const Tensor& neg, const Tensor& scale, bool literal = false);
/// mean_b max(0, margin - pos + neg); pos, neg: [B].
Tensor triplet_from_scores(const Tensor& pos, const Tensor& neg, double margin = 0.2);

enum class Mining { Hard, CrossSample };

struct ContrastiveBatch {
  std::size_t level = 1;
  Mining provenance = Mining::Hard;
  Tensor anchors;    // [B, 20, 26]
  Tensor positives;  // [B, 5, 60]
  Tensor negatives;  // [B, N, 5, 60]
  std::vector<std::string> warnings;

  std::size_t size() const { return anchors.valid() ? anchors.dim(0) : 0; }
  std::size_t negatives_per_anchor() const { return negatives.valid() ? negatives.dim(1) : 0; }
};

Tensor infonce_loss(const SyncerModel& m, const ContrastiveBatch& b, bool literal = false);
/// anchor [B,20,26], pos/neg [B,5,60].
Tensor triplet_loss(const SyncerModel& m, const Tensor& anchor, const Tensor& pos, const Tensor& neg,
                    double margin = 0.2);

/// Hard negatives must sit at least this many level-frames from the anchor.
inline constexpr std::size_t kMinNegativeDistance = 2;

/// Samples `batch` anchors across `corpus` and N negatives each. Hard mode
/// draws same-clip windows with |dt| >= 2; when a clip cannot supply N it
/// falls back to cross-sample with a warning. Cross-sample mode needs >= 2
/// clips and throws std::invalid_argument otherwise.
ContrastiveBatch mine_batch(const std::vector<pyramid::AvPyramid>& corpus, std::size_t level, std::size_t n_neg,
                            Mining mode, std::size_t batch, diff::Rng& rng);

/// Default mining for a level: hard with N=12 below the top, cross-sample
/// with N=48 at level 4.
Mining default_mining(std::size_t level);
std::size_t default_negatives(std::size_t level);

enum class Objective { InfoNce, Triplet };

struct SyncerTrainConfig {
  SyncerConfig model;
  Objective objective = Objective::InfoNce;
  bool literal_infonce = false;
  double margin = 0.2;
  double learning_rate = 1e-3;
  std::size_t batch = 32;
  std::size_t max_steps = 600;
  std::size_t min_steps = 200;
  std::size_t eval_every = 50;
  std::size_t patience = 5;  // evaluations without improvement
  std::size_t warmup = 100;
  std::size_t val_batches = 4;
  /// Empty: per-level defaults.
  std::optional<Mining> mining;
  std::optional<std::size_t> negatives;
  std::uint64_t seed = 1;
  /// When set, each level is saved as syncer_l<i>.avpc (+ .json sidecar).
  std::string checkpoint_dir;

  static SyncerTrainConfig desk();
  static SyncerTrainConfig paper();
};

struct SyncerTrainReport {
  std::size_t level = 1;
  std::size_t steps = 0;
  bool plateaued = false;
  double final_train_loss = 0.0;
  std::vector<std::pair<std::size_t, double>> validation;  // (step, loss)
  std::vector<std::string> warnings;
};

class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::vector<pyramid::AvPyramid> build_pyramids(const std::vector<features::AvClip>& clips,
                                               bool positions_only = false);

/// Trains one level; the returned model is frozen.
SyncerModel train_syncer(const std::vector<pyramid::AvPyramid>& train, const std::vector<pyramid::AvPyramid>& val,
                         std::size_t level, const SyncerTrainConfig& config, SyncerTrainReport* report = nullptr);

/// Trains the requested levels (default 1..4); `val` may be empty, in which
/// case every fifth training clip is held out.
std::vector<SyncerModel> train_syncer_pyramid(const std::vector<features::AvClip>& train,
                                              const std::vector<features::AvClip>& val,
                                              const SyncerTrainConfig& config,
                                              const std::vector<std::size_t>& levels = {1, 2, 3, 4},
                                              std::vector<SyncerTrainReport>* reports = nullptr);

void save_syncer(const SyncerModel& m, const std::string& path);
/// Reads the checkpoint and its .json sidecar; the model comes back frozen.
SyncerModel load_syncer(const std::string& path);

}  // namespace avsync::syncer
