#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "avsync/diffnum/adam.hpp"
#include "avsync/discriminator/discriminator.hpp"
#include "avsync/features/clip.hpp"
#include "avsync/generator/generator.hpp"
#include "avsync/syncer/syncer.hpp"

namespace avsync::training {

using diff::Tensor;

/// Scores paired windows: audio [n, 20, 26], keypoints [n, 5, 60] -> [n].
using SegmentScorer = std::function<Tensor(const Tensor&, const Tensor&)>;

struct AvLoss {
  Tensor total;                        // sum over the selected levels
  std::array<double, 4> per_level{};   // -mean score at every level, for logging
};

/// Multi-scale AV loss on generated keypoints x [B, T, 60] against audio
/// [B, 4T, 26]: sum over `levels` of -mean_t S^i at stride-1 interior
/// centres. `scorers[i]` serves level i+1.
AvLoss ms_av_loss(const std::vector<SegmentScorer>& scorers, const Tensor& x, const Tensor& audio,
                  const std::vector<std::size_t>& levels = {1, 2, 3, 4});
/// Same with trained syncers; every syncer must be frozen (std::logic_error
/// otherwise). syncers[i] must be the level i+1 model.
AvLoss ms_av_loss(const std::vector<const syncer::SyncerModel*>& syncers, const Tensor& x, const Tensor& audio,
                  const std::vector<std::size_t>& levels = {1, 2, 3, 4});

/// Squared L2 over the whole sequence, averaged over the batch.
Tensor rec_loss(const Tensor& x_gen, const Tensor& x_gt);

struct TrainConfig {
  double lambda_av = 8.0;
  double lambda_adv = 0.1;
  double lambda_rec = 1.0;
  double lr_gen = 2e-5;
  double lr_disc = 1e-5;
  double beta1 = 0.0;
  double beta2 = 0.999;
  std::size_t seq_len = 40;
  std::size_t batch = 16;
  /// Iterations at the base rate, followed by `decay_iterations` at 0.1x.
  std::size_t iterations = 70000;
  std::size_t decay_iterations = 5000;
  std::vector<std::size_t> av_levels{1, 2, 3, 4};
  std::uint64_t seed = 1;
  /// Validation every K iterations (and after the last); 0 disables.
  std::size_t val_every = 100;
  std::size_t val_clips = 8;
  /// Rollout length for validation confidences; long enough for the
  /// offset search at level 4.
  std::size_t val_frames = 320;
  std::size_t val_range = 15;
  std::size_t checkpoint_every = 0;
  /// Log and checkpoints go here when set.
  std::string out_dir;
  generator::GeneratorConfig generator;
  discriminator::DiscriminatorConfig discriminator;

  static TrainConfig desk();
  static TrainConfig paper();

  std::size_t total_iterations() const { return iterations + decay_iterations; }
  /// Multiplier on both learning rates at 0-based iteration `it`.
  double lr_factor(std::size_t it) const { return it >= iterations ? 0.1 : 1.0; }
  void check() const;

  nlohmann::ordered_json to_json() const;
  /// Missing keys keep the values already in `base`.
  static TrainConfig from_json(const nlohmann::json& j, TrainConfig base = desk());
};

/// Every generator-side term of one iteration, kept on the tape.
struct GeneratorLosses {
  AvLoss av;
  Tensor gf, gs, rec, total;
};

/// lambda_av * av + lambda_adv * (gf + gs) + lambda_rec * rec.
Tensor weighted_total(const TrainConfig& c, const Tensor& av, const Tensor& gf, const Tensor& gs, const Tensor& rec);

struct ValidationStats {
  std::array<double, 4> confidence{};
  std::array<double, 4> abs_offset{};
  double rec = 0.0;  // rec_loss on seq_len windows from each clip's start
};

struct LogRecord {
  std::size_t iter = 0;  // 1-based
  double l_d = 0, l_df = 0, l_ds = 0;
  double l_gf = 0, l_gs = 0, l_rec = 0, l_total = 0;
  std::array<double, 4> l_av{};
  double lr_gen = 0, lr_disc = 0;
  std::optional<ValidationStats> val;

  nlohmann::ordered_json to_json() const;
};

class TrainingError : public std::runtime_error {
 public:
  TrainingError(const std::string& what, std::string component, std::size_t iter)
      : std::runtime_error(what), component_(std::move(component)), iter_(iter) {}
  const std::string& component() const { return component_; }
  std::size_t iteration() const { return iter_; }

 private:
  std::string component_;
  std::size_t iter_;
};

class Trainer {
 public:
  /// `syncers` must be the four frozen level models and outlive the trainer.
  Trainer(const std::vector<features::AvClip>& train, const std::vector<features::AvClip>& val,
          std::vector<const syncer::SyncerModel*> syncers, const TrainConfig& config);

  /// One alternation: discriminator step, then generator step.
  LogRecord step();
  /// Runs the remaining iterations; `on_record` sees every record.
  void run(const std::function<void(const LogRecord&)>& on_record = {});
  ValidationStats validate() const;

  /// Batch of real windows drawn from the training split.
  struct Batch {
    Tensor x;      // [B, T, 60]
    Tensor audio;  // [B, 4T, 26]
  };
  Batch sample_batch();
  GeneratorLosses generator_losses(const Tensor& fake, const Batch& b) const;

  void save(const std::string& dir) const;
  /// Extra factor on both learning rates (0 freezes every update).
  void set_lr_scale(double s) { lr_scale_ = s; }

  std::size_t iteration() const { return iter_; }
  const std::vector<LogRecord>& log() const { return log_; }
  const TrainConfig& config() const { return config_; }
  generator::GeneratorModel& generator() { return gen_; }
  discriminator::FrameDiscriminator& frame_critic() { return df_; }
  discriminator::SequenceDiscriminator& sequence_critic() { return ds_; }

 private:
  void guard(const Tensor& t, const std::string& component);

  const std::vector<features::AvClip>& train_;
  const std::vector<features::AvClip>& val_;
  std::vector<const syncer::SyncerModel*> syncers_;
  TrainConfig config_;
  generator::GeneratorModel gen_;
  discriminator::FrameDiscriminator df_;
  discriminator::SequenceDiscriminator ds_;
  diff::AdamState opt_g_, opt_df_, opt_ds_;
  diff::Rng rng_;
  std::size_t iter_ = 0;
  double lr_scale_ = 1.0;
  std::vector<LogRecord> log_;
};

/// JSON-lines text of a log, one record per line.
std::string log_to_jsonl(const std::vector<LogRecord>& log);

// Ablations.

struct AblationRun {
  std::string name;
  std::vector<std::size_t> levels;
  std::uint64_t seed = 0;
  double lambda_rec = 0, lambda_adv = 0;
  std::vector<LogRecord> log;
  ValidationStats final;
};

struct AblationReport {
  std::string kind;
  std::vector<AblationRun> runs;

  nlohmann::ordered_json to_json() const;
  std::string to_csv() const;
  /// Per-level confidence-vs-iteration series of every run:
  /// <dir>/<run>_seed<s>_level<i>.csv.
  std::vector<std::string> export_curves(const std::string& dir) const;
};

/// Full multi-scale AV loss against the finest level only, one pair of
/// runs per seed, otherwise identical.
AblationReport ablation_ms_vs_finest(const std::vector<features::AvClip>& train,
                                     const std::vector<features::AvClip>& val,
                                     const std::vector<const syncer::SyncerModel*>& syncers,
                                     const TrainConfig& config, const std::vector<std::uint64_t>& seeds);

/// (lambda_rec, lambda_adv) rows of the loss-weight ablation.
std::vector<std::pair<double, double>> loss_weight_grid();

AblationReport ablation_loss_weights(const std::vector<features::AvClip>& train,
                                     const std::vector<features::AvClip>& val,
                                     const std::vector<const syncer::SyncerModel*>& syncers,
                                     const TrainConfig& config);

}  // namespace avsync::training
