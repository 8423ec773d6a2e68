#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "avsync/diffnum/tensor.hpp"

namespace avsync::features {

inline constexpr std::size_t kNumKeypoints = 10;
inline constexpr std::size_t kValuesPerKeypoint = 6;  // x, y, J11, J12, J21, J22
inline constexpr std::size_t kKeypointDim = kNumKeypoints * kValuesPerKeypoint;
inline constexpr std::size_t kMfccDim = 26;
inline constexpr std::size_t kAudioPerVideo = 4;  // 10 ms hop vs 40 ms video frame
inline constexpr double kVideoFps = 25.0;
inline constexpr double kPositionLimit = 1.5;

/// Audio frames in a 200 ms window and the matching video frames.
inline constexpr std::size_t kAudioSegment = 20;
inline constexpr std::size_t kVideoSegment = 5;

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Frames x Width matrix of f64, row-major.
template <std::size_t Width>
class Track {
 public:
  static constexpr std::size_t width = Width;

  Track() = default;
  explicit Track(std::size_t frames) : frames_(frames), values_(frames * Width, 0.0) {}
  Track(std::size_t frames, std::vector<double> values) : frames_(frames), values_(std::move(values)) {
    if (values_.size() != frames_ * Width) {
      throw DataError("track: expected " + std::to_string(frames_ * Width) + " values, got " +
                      std::to_string(values_.size()));
    }
  }

  std::size_t frames() const { return frames_; }
  bool empty() const { return frames_ == 0; }
  std::span<const double> row(std::size_t t) const { return {values_.data() + t * Width, Width}; }
  std::span<double> row(std::size_t t) { return {values_.data() + t * Width, Width}; }
  double operator()(std::size_t t, std::size_t c) const { return values_[t * Width + c]; }
  double& operator()(std::size_t t, std::size_t c) { return values_[t * Width + c]; }
  const std::vector<double>& values() const { return values_; }
  std::vector<double>& values() { return values_; }

  diff::Tensor to_tensor() const { return diff::Tensor::from({frames_, Width}, values_); }
  static Track from_tensor(const diff::Tensor& t) {
    if (t.rank() != 2 || t.dim(1) != Width) {
      throw DataError("track: tensor shape " + diff::to_string(t.shape()) + " is not [T x " +
                      std::to_string(Width) + "]");
    }
    return Track(t.dim(0), std::vector<double>(t.data().begin(), t.data().end()));
  }

  bool operator==(const Track&) const = default;

 private:
  std::size_t frames_ = 0;
  std::vector<double> values_;
};

using KeypointSequence = Track<kKeypointDim>;
using AudioFeatSequence = Track<kMfccDim>;

/// Flat offset of a keypoint field inside a 60-d frame.
constexpr std::size_t keypoint_index(std::size_t keypoint, std::size_t field) {
  return keypoint * kValuesPerKeypoint + field;
}

/// Paired keypoint track (T frames at 25 fps) and MFCC track (4T frames).
struct AvClip {
  std::string clip_id;
  std::string identity_id;
  KeypointSequence keypoints;
  AudioFeatSequence audio;

  std::size_t frames() const { return keypoints.frames(); }
  bool operator==(const AvClip&) const = default;
};

/// Empty when the clip satisfies every invariant, otherwise one message per
/// violation.
std::vector<std::string> validate(const AvClip& clip);

/// Crops an MFCC track to exactly 4*frames rows, centred, so video frame t
/// maps to audio rows [4t, 4t+3]. Throws DataError when too short.
AudioFeatSequence align(const AudioFeatSequence& audio, std::size_t frames);

/// Audio rows of the 200 ms window centred on video frame t, i.e.
/// [4t-8, 4t+12), replicate-padded at the edges.
std::vector<std::size_t> audio_window(std::size_t t, std::size_t audio_frames);
/// Video rows [t-2, t+2], replicate-padded.
std::vector<std::size_t> video_window(std::size_t t, std::size_t frames);

/// Clip whose audio lags the keypoints by `video_frames` (negative leads):
/// new_audio[r] = audio[r - 4*video_frames], replicate-padded.
AvClip shift_audio(const AvClip& clip, long video_frames);

}  // namespace avsync::features
