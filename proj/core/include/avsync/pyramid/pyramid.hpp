#pragma once

#include <cstddef>
#include <vector>

#include "avsync/diffnum/tensor.hpp"
#include "avsync/features/clip.hpp"

namespace avsync::pyramid {

inline constexpr std::size_t kLevels = 4;
inline constexpr std::size_t kHalfWidth = 3;  // k: 7-tap box filter

/// Shortest level-1 keypoint track that still leaves one full segment at the
/// top level.
constexpr std::size_t min_frames(std::size_t levels = kLevels) {
  return (std::size_t{1} << (levels - 1)) * features::kVideoSegment;
}

/// Blur-and-halve hierarchy over the time axis (-2) of x. Level 0 is x itself;
/// level i averages 2k+1 taps of level i-1 centred at 2t, replicate-padded.
/// Differentiable. `min_top` is the length the coarsest level must reach.
std::vector<diff::Tensor> build_pyramid(const diff::Tensor& x, std::size_t levels = kLevels,
                                        std::size_t k = kHalfWidth, std::size_t min_top = 1);

struct AvPyramid {
  std::vector<diff::Tensor> keypoints;  // level i: [floor(T/2^i), 60]
  std::vector<diff::Tensor> audio;      // level i: [floor(4T/2^i), 26]

  std::size_t levels() const { return keypoints.size(); }
};

struct PyramidOptions {
  std::size_t levels = kLevels;
  std::size_t k = kHalfWidth;
  /// Zero the Jacobian channels so only positions reach the syncers.
  bool positions_only = false;
};

/// Multiplies keypoints by the positions-only mask when requested.
diff::Tensor apply_channel_mask(const diff::Tensor& keypoints, bool positions_only);

AvPyramid build_av_pyramid(const diff::Tensor& keypoints, const diff::Tensor& audio,
                           const PyramidOptions& options = {});
AvPyramid build_av_pyramid(const features::AvClip& clip, const PyramidOptions& options = {});

struct AvSegment {
  std::size_t level = 1;   // 1-based
  std::size_t center = 0;  // level-local frame
  diff::Tensor keypoints;  // [5, 60]
  diff::Tensor audio;      // [20, 26]
};

/// Centres t = 0, stride, 2*stride, ... (or only those whose windows need no
/// padding when interior_only). `level` is 1-based.
std::vector<std::size_t> segment_centers(std::size_t length, std::size_t stride, bool interior_only = false);

std::vector<AvSegment> extract_segments(const AvPyramid& p, std::size_t level, std::size_t stride,
                                        bool interior_only = false);

/// Batched windows, differentiable: keypoints [L, 60] -> [n, 5, 60] and
/// audio [La, 26] -> [n, 20, 26] for the given level-local centres. A leading
/// batch axis [B, L, C] gives [B*n, ...], batch-major.
diff::Tensor keypoint_windows(const diff::Tensor& keypoints, const std::vector<std::size_t>& centers);
diff::Tensor audio_windows(const diff::Tensor& audio, const std::vector<std::size_t>& centers);

}  // namespace avsync::pyramid
