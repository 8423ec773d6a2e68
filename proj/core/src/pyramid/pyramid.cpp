#include "avsync/pyramid/pyramid.hpp"

#include "avsync/diffnum/ops.hpp"

namespace avsync::pyramid {

using diff::Tensor;
namespace F = features;

std::vector<Tensor> build_pyramid(const Tensor& x, std::size_t levels, std::size_t k, std::size_t min_top) {
  if (levels == 0) throw std::invalid_argument("build_pyramid: levels must be >= 1");
  if (x.rank() < 2) throw diff::ShapeError("build_pyramid: expected [..., L, C], got " + diff::to_string(x.shape()));
  const std::size_t need = (std::size_t{1} << (levels - 1)) * min_top;
  const std::size_t len = x.dim(-2);
  if (len < need) {
    throw F::DataError("build_pyramid: sequence of length " + std::to_string(len) + " too short for " +
                       std::to_string(levels) + " levels, minimum length " + std::to_string(need));
  }
  std::vector<Tensor> out{x};
  for (std::size_t i = 1; i < levels; ++i) out.push_back(diff::avg_pool_time(out.back(), 2 * k + 1, 2));
  return out;
}

Tensor apply_channel_mask(const Tensor& keypoints, bool positions_only) {
  if (!positions_only) return keypoints;
  std::vector<double> m(F::kKeypointDim, 0.0);
  for (std::size_t kp = 0; kp < F::kNumKeypoints; ++kp) {
    m[F::keypoint_index(kp, 0)] = 1.0;
    m[F::keypoint_index(kp, 1)] = 1.0;
  }
  return diff::mul(keypoints, Tensor::from({F::kKeypointDim}, std::move(m)));
}

AvPyramid build_av_pyramid(const Tensor& keypoints, const Tensor& audio, const PyramidOptions& o) {
  AvPyramid p;
  p.keypoints = build_pyramid(apply_channel_mask(keypoints, o.positions_only), o.levels, o.k, F::kVideoSegment);
  p.audio = build_pyramid(audio, o.levels, o.k, F::kAudioSegment);
  return p;
}

AvPyramid build_av_pyramid(const F::AvClip& clip, const PyramidOptions& o) {
  return build_av_pyramid(clip.keypoints.to_tensor(), clip.audio.to_tensor(), o);
}

std::vector<std::size_t> segment_centers(std::size_t length, std::size_t stride, bool interior_only) {
  if (stride == 0) throw std::invalid_argument("segment_centers: stride must be positive");
  const std::size_t half = F::kVideoSegment / 2;
  std::vector<std::size_t> c;
  if (interior_only) {
    if (length < F::kVideoSegment) return c;
    for (std::size_t t = half; t + half < length; t += stride) c.push_back(t);
  } else {
    for (std::size_t t = 0; t < length; t += stride) c.push_back(t);
  }
  return c;
}

Tensor keypoint_windows(const Tensor& keypoints, const std::vector<std::size_t>& centers) {
  const std::size_t L = keypoints.dim(-2);
  std::vector<std::size_t> idx;
  idx.reserve(centers.size() * F::kVideoSegment);
  for (auto t : centers) {
    const auto w = F::video_window(t, L);
    idx.insert(idx.end(), w.begin(), w.end());
  }
  const std::size_t B = keypoints.rank() == 3 ? keypoints.dim(0) : 1;
  return diff::reshape(diff::index_select(keypoints, -2, idx),
                       {B * centers.size(), F::kVideoSegment, keypoints.dim(-1)});
}

Tensor audio_windows(const Tensor& audio, const std::vector<std::size_t>& centers) {
  const std::size_t L = audio.dim(-2);
  std::vector<std::size_t> idx;
  idx.reserve(centers.size() * F::kAudioSegment);
  for (auto t : centers) {
    const auto w = F::audio_window(t, L);
    idx.insert(idx.end(), w.begin(), w.end());
  }
  const std::size_t B = audio.rank() == 3 ? audio.dim(0) : 1;
  return diff::reshape(diff::index_select(audio, -2, idx), {B * centers.size(), F::kAudioSegment, audio.dim(-1)});
}

std::vector<AvSegment> extract_segments(const AvPyramid& p, std::size_t level, std::size_t stride,
                                        bool interior_only) {
  if (level < 1 || level > p.levels()) {
    throw std::out_of_range("extract_segments: level " + std::to_string(level) + " outside 1.." +
                            std::to_string(p.levels()));
  }
  const auto& kp = p.keypoints[level - 1];
  const auto& au = p.audio[level - 1];
  std::vector<AvSegment> out;
  for (auto t : segment_centers(kp.dim(0), stride, interior_only)) {
    AvSegment s;
    s.level = level;
    s.center = t;
    s.keypoints = diff::reshape(keypoint_windows(kp, {t}), {F::kVideoSegment, kp.dim(1)});
    s.audio = diff::reshape(audio_windows(au, {t}), {F::kAudioSegment, au.dim(1)});
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace avsync::pyramid
