#pragma once

#include <string>
#include <vector>

#include "avsync/features/clip.hpp"
#include "avsync/syncer/syncer.hpp"

namespace avsync::eval {

inline constexpr std::size_t kDefaultRange = 15;

/// E|argmax| for an argmax uniform over [-R, R]: 2 * (1 + ... + R) / (2R + 1).
constexpr double random_baseline(std::size_t R) {
  return static_cast<double>(R * (R + 1)) / static_cast<double>(2 * R + 1);
}

struct OffsetResult {
  std::size_t level = 1;
  long offset = 0;  // level-local frames; audio content lags the motion by `offset`
  std::size_t abs_offset = 0;
  double confidence = 0.0;  // max - median of the shift curve
  std::size_t search_range = kDefaultRange;
  std::vector<double> curve;  // score for shifts -R..R
};

/// Level-1 frames a clip needs so `level` can slide +-R with one common
/// centre: (2R + 1) * 2^(level-1).
std::size_t min_frames_for_offset(std::size_t level, std::size_t R = kDefaultRange);

/// Offset of pre-pyramided tracks at the syncer's level. Centres t in
/// [R, L-1-R] are shared by every shift; curve(d) = mean_t S(a_{t+d}, x_t).
/// Ties go to the smallest |d|, then the negative shift.
OffsetResult av_offset(const syncer::SyncerModel& syncer, const diff::Tensor& keypoints, const diff::Tensor& audio,
                       std::size_t R = kDefaultRange);
OffsetResult av_offset(const syncer::SyncerModel& syncer, const features::AvClip& clip, std::size_t R = kDefaultRange);

/// Picks the shift from a curve indexed -R..R with the tie rule above.
long argmax_shift(const std::vector<double>& curve);
/// max - median.
double curve_confidence(const std::vector<double>& curve);

struct LevelStats {
  std::size_t level = 1;
  std::size_t clips = 0;
  double mean_abs_offset = 0, std_abs_offset = 0;
  double mean_confidence = 0, std_confidence = 0;
};

struct ReportRow {
  std::string name;  // "Random", "Ground truth", "Generated"
  std::vector<LevelStats> levels;
};

struct Report {
  std::size_t range = kDefaultRange;
  double random_baseline = 0.0;
  std::vector<ReportRow> rows;

  std::string to_json() const;
  std::string to_csv() const;
  const ReportRow* row(const std::string& name) const;
};

/// Table-style report. `syncers` are frozen models, one per level. Clips are
/// processed in clip_id order, so the result does not depend on input order.
/// The Random row pairs each clip's motion with the next clip's audio (its
/// own audio rolled by half its length when there is only one clip).
/// `generated`, when given, carries motion produced for the same clip ids.
Report evaluate_corpus(const std::vector<const syncer::SyncerModel*>& syncers,
                       const std::vector<features::AvClip>& ground_truth, std::size_t R = kDefaultRange,
                       const std::vector<features::AvClip>* generated = nullptr);

struct ConfidencePoint {
  std::size_t iteration = 0;
  std::size_t level = 1;
  double confidence = 0.0;
};

/// Reads validation confidences from a JSON-lines training log (records
/// carrying a "val_conf" object keyed by level).
std::vector<ConfidencePoint> read_confidence_log(const std::string& path);

/// Writes <out_dir>/<prefix>_level<i>.csv ("iteration,confidence") for every
/// level present, or header-only files for levels 1..4 when the log is
/// empty. Returns the written paths.
std::vector<std::string> plot_export(const std::vector<ConfidencePoint>& log, const std::string& out_dir,
                                     const std::string& prefix = "confidence");

/// Shortest round-trip decimal form of a double.
std::string format_double(double v);

}  // namespace avsync::eval
