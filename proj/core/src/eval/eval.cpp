#include "avsync/eval/eval.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "avsync/diffnum/ops.hpp"
#include "avsync/pyramid/pyramid.hpp"
#include "avsync/parallel.hpp"
#include "json.hpp"

namespace avsync::eval {

namespace F = features;
using diff::Tensor;

std::string format_double(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, r.ptr);
}

std::size_t min_frames_for_offset(std::size_t level, std::size_t R) {
  return (2 * R + 1) << (level - 1);
}

long argmax_shift(const std::vector<double>& curve) {
  const long R = static_cast<long>(curve.size() / 2);
  long best = 0;
  double best_v = curve[static_cast<std::size_t>(R)];
  for (long d = 1; d <= R; ++d) {
    for (long s : {-d, d}) {
      const double v = curve[static_cast<std::size_t>(s + R)];
      if (v > best_v) {
        best_v = v;
        best = s;
      }
    }
  }
  return best;
}

double curve_confidence(const std::vector<double>& curve) {
  std::vector<double> s = curve;
  std::sort(s.begin(), s.end());
  const std::size_t n = s.size();
  const double median = n % 2 ? s[n / 2] : 0.5 * (s[n / 2 - 1] + s[n / 2]);
  return s.back() - median;
}

namespace {

std::vector<double> unit_rows(const Tensor& e) {
  const std::size_t n = e.dim(0), d = e.dim(1);
  std::vector<double> out(e.data().begin(), e.data().end());
  for (std::size_t r = 0; r < n; ++r) {
    double s = 0;
    for (std::size_t i = 0; i < d; ++i) s += out[r * d + i] * out[r * d + i];
    const double inv = 1.0 / std::max(std::sqrt(s), 1e-8);
    for (std::size_t i = 0; i < d; ++i) out[r * d + i] *= inv;
  }
  return out;
}

}  // namespace

OffsetResult av_offset(const syncer::SyncerModel& syncer, const Tensor& keypoints, const Tensor& audio,
                       std::size_t R) {
  const std::size_t L = keypoints.dim(0);
  const std::size_t level = syncer.config().level;
  if (L < 2 * R + 1) {
    throw F::DataError("av_offset: level-" + std::to_string(level) + " track of " + std::to_string(L) +
                       " frames is too short for range " + std::to_string(R) + "; need at least " +
                       std::to_string(2 * R + 1) + " level frames (" +
                       std::to_string(min_frames_for_offset(level, R)) + " video frames)");
  }
  diff::NoGradScope ng;
  std::vector<std::size_t> centers(L);
  std::iota(centers.begin(), centers.end(), 0);
  const std::size_t E = syncer.config().embed_dim;
  const auto ea = unit_rows(syncer.embed_audio(pyramid::audio_windows(audio, centers)));
  const auto ex = unit_rows(syncer.embed_keypoints(pyramid::keypoint_windows(keypoints, centers)));

  OffsetResult r;
  r.level = level;
  r.search_range = R;
  r.curve.assign(2 * R + 1, 0.0);
  const long Rl = static_cast<long>(R);
  for (long d = -Rl; d <= Rl; ++d) {
    double s = 0;
    for (std::size_t t = R; t + R < L; ++t) {
      const double* a = &ea[static_cast<std::size_t>(static_cast<long>(t) + d) * E];
      const double* x = &ex[t * E];
      double dot = 0;
      for (std::size_t i = 0; i < E; ++i) dot += a[i] * x[i];
      s += dot;
    }
    r.curve[static_cast<std::size_t>(d + Rl)] = s / static_cast<double>(L - 2 * R);
  }
  r.offset = argmax_shift(r.curve);
  r.abs_offset = static_cast<std::size_t>(std::labs(r.offset));
  r.confidence = curve_confidence(r.curve);
  return r;
}

OffsetResult av_offset(const syncer::SyncerModel& syncer, const F::AvClip& clip, std::size_t R) {
  const std::size_t level = syncer.config().level;
  pyramid::PyramidOptions o;
  o.levels = level;
  diff::NoGradScope ng;
  const auto kp = pyramid::build_pyramid(clip.keypoints.to_tensor(), level, o.k, 1);
  const auto au = pyramid::build_pyramid(clip.audio.to_tensor(), level, o.k, 1);
  return av_offset(syncer, kp.back(), au.back(), R);
}

namespace {

LevelStats aggregate(std::size_t level, const std::vector<OffsetResult>& rs) {
  LevelStats s;
  s.level = level;
  s.clips = rs.size();
  if (rs.empty()) return s;
  const double n = static_cast<double>(rs.size());
  for (const auto& r : rs) {
    s.mean_abs_offset += static_cast<double>(r.abs_offset);
    s.mean_confidence += r.confidence;
  }
  s.mean_abs_offset /= n;
  s.mean_confidence /= n;
  for (const auto& r : rs) {
    s.std_abs_offset += std::pow(static_cast<double>(r.abs_offset) - s.mean_abs_offset, 2);
    s.std_confidence += std::pow(r.confidence - s.mean_confidence, 2);
  }
  s.std_abs_offset = std::sqrt(s.std_abs_offset / n);
  s.std_confidence = std::sqrt(s.std_confidence / n);
  return s;
}

std::vector<F::AvClip> sorted_by_id(std::vector<F::AvClip> clips) {
  std::stable_sort(clips.begin(), clips.end(),
                   [](const F::AvClip& a, const F::AvClip& b) { return a.clip_id < b.clip_id; });
  return clips;
}

ReportRow evaluate_row(const std::string& name, const std::vector<const syncer::SyncerModel*>& syncers,
                       const std::vector<F::AvClip>& clips, std::size_t R) {
  ReportRow row;
  row.name = name;
  for (const auto* s : syncers) {
    std::vector<OffsetResult> rs(clips.size());
    parallel_for(clips.size(), [&](std::size_t i) { rs[i] = av_offset(*s, clips[i], R); });
    row.levels.push_back(aggregate(s->config().level, rs));
  }
  return row;
}

}  // namespace

Report evaluate_corpus(const std::vector<const syncer::SyncerModel*>& syncers,
                       const std::vector<F::AvClip>& ground_truth, std::size_t R,
                       const std::vector<F::AvClip>* generated) {
  if (ground_truth.empty()) throw std::invalid_argument("evaluate_corpus: need at least one clip");
  Report rep;
  rep.range = R;
  rep.random_baseline = random_baseline(R);
  const auto gt = sorted_by_id(ground_truth);

  std::vector<F::AvClip> shuffled = gt;
  if (gt.size() == 1) {
    const long half = static_cast<long>(gt[0].frames() / 2);
    const std::size_t L = gt[0].audio.frames();
    for (std::size_t r = 0; r < L; ++r) {
      const std::size_t src = (r + F::kAudioPerVideo * static_cast<std::size_t>(half)) % L;
      std::copy(gt[0].audio.row(src).begin(), gt[0].audio.row(src).end(), shuffled[0].audio.row(r).begin());
    }
  } else {
    for (std::size_t i = 0; i < gt.size(); ++i) {
      const auto& other = gt[(i + 1) % gt.size()];
      const std::size_t n = std::min(gt[i].frames(), other.frames());
      shuffled[i].keypoints = F::KeypointSequence(
          n, std::vector<double>(gt[i].keypoints.values().begin(),
                                 gt[i].keypoints.values().begin() + static_cast<std::ptrdiff_t>(n * F::kKeypointDim)));
      shuffled[i].audio = F::AudioFeatSequence(
          F::kAudioPerVideo * n,
          std::vector<double>(other.audio.values().begin(),
                              other.audio.values().begin() +
                                  static_cast<std::ptrdiff_t>(F::kAudioPerVideo * n * F::kMfccDim)));
    }
  }
  rep.rows.push_back(evaluate_row("Random", syncers, shuffled, R));
  rep.rows.push_back(evaluate_row("Ground truth", syncers, gt, R));
  if (generated) rep.rows.push_back(evaluate_row("Generated", syncers, sorted_by_id(*generated), R));
  return rep;
}

const ReportRow* Report::row(const std::string& name) const {
  for (const auto& r : rows)
    if (r.name == name) return &r;
  return nullptr;
}

std::string Report::to_json() const {
  nlohmann::ordered_json j;
  j["search_range"] = range;
  j["random_baseline"] = random_baseline;
  j["rows"] = nlohmann::ordered_json::array();
  for (const auto& r : rows) {
    nlohmann::ordered_json row;
    row["name"] = r.name;
    row["levels"] = nlohmann::ordered_json::array();
    for (const auto& l : r.levels) {
      row["levels"].push_back({{"level", l.level},
                               {"clips", l.clips},
                               {"abs_offset_mean", l.mean_abs_offset},
                               {"abs_offset_std", l.std_abs_offset},
                               {"confidence_mean", l.mean_confidence},
                               {"confidence_std", l.std_confidence}});
    }
    j["rows"].push_back(row);
  }
  return j.dump(2) + "\n";
}

std::string Report::to_csv() const {
  std::ostringstream os;
  os << "row,level,clips,abs_offset_mean,abs_offset_std,confidence_mean,confidence_std\n";
  for (const auto& r : rows)
    for (const auto& l : r.levels)
      os << r.name << ',' << l.level << ',' << l.clips << ',' << format_double(l.mean_abs_offset) << ','
         << format_double(l.std_abs_offset) << ',' << format_double(l.mean_confidence) << ','
         << format_double(l.std_confidence) << '\n';
  return os.str();
}

std::vector<ConfidencePoint> read_confidence_log(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw F::DataError("read_confidence_log: cannot open " + path);
  std::vector<ConfidencePoint> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    if (!j.contains("val_conf")) continue;
    const auto it = j.at("iter").get<std::size_t>();
    for (const auto& [k, v] : j.at("val_conf").items()) out.push_back({it, std::stoul(k), v.get<double>()});
  }
  return out;
}

std::vector<std::string> plot_export(const std::vector<ConfidencePoint>& log, const std::string& out_dir,
                                     const std::string& prefix) {
  std::map<std::size_t, std::vector<const ConfidencePoint*>> series;
  for (const auto& p : log) series[p.level].push_back(&p);
  if (series.empty())
    for (std::size_t l = 1; l <= pyramid::kLevels; ++l) series[l];
  std::filesystem::create_directories(out_dir);
  std::vector<std::string> paths;
  for (const auto& [level, pts] : series) {
    const auto p = (std::filesystem::path(out_dir) / (prefix + "_level" + std::to_string(level) + ".csv")).string();
    std::ofstream os(p);
    os << "iteration,confidence\n";
    for (const auto* q : pts) os << q->iteration << ',' << format_double(q->confidence) << '\n';
    paths.push_back(p);
  }
  return paths;
}

}  // namespace avsync::eval
