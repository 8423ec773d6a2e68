#include "avsync/features/clip.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace avsync::features {

namespace {

std::vector<std::size_t> clamped_range(long start, std::size_t count, std::size_t length) {
  std::vector<std::size_t> idx(count);
  const long hi = static_cast<long>(length) - 1;
  for (std::size_t i = 0; i < count; ++i)
    idx[i] = static_cast<std::size_t>(std::clamp(start + static_cast<long>(i), 0L, hi));
  return idx;
}

}  // namespace

std::vector<std::string> validate(const AvClip& clip) {
  std::vector<std::string> errors;
  const std::size_t T = clip.keypoints.frames();
  const std::size_t L = clip.audio.frames();
  if (T == 0) errors.push_back("keypoint track is empty");
  if (L != kAudioPerVideo * T) {
    std::ostringstream os;
    os << "audio has " << L << " frames, expected 4*T = " << kAudioPerVideo * T;
    errors.push_back(os.str());
  }
  auto finite = [](const std::vector<double>& v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
  };
  if (!finite(clip.keypoints.values())) errors.push_back("keypoints contain non-finite values");
  if (!finite(clip.audio.values())) errors.push_back("audio features contain non-finite values");
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t k = 0; k < kNumKeypoints; ++k) {
      for (std::size_t f = 0; f < 2; ++f) {
        const double v = clip.keypoints(t, keypoint_index(k, f));
        if (std::abs(v) > kPositionLimit) {
          std::ostringstream os;
          os << "keypoint " << k << " position " << v << " at frame " << t << " outside [-"
             << kPositionLimit << ", " << kPositionLimit << "]";
          errors.push_back(os.str());
          return errors;
        }
      }
    }
  }
  return errors;
}

AudioFeatSequence align(const AudioFeatSequence& audio, std::size_t frames) {
  const std::size_t need = kAudioPerVideo * frames;
  if (audio.frames() < need) {
    throw DataError("align: need " + std::to_string(need) + " audio frames for " +
                    std::to_string(frames) + " video frames, have " +
                    std::to_string(audio.frames()));
  }
  const std::size_t start = (audio.frames() - need) / 2;
  std::vector<double> v(audio.values().begin() + static_cast<std::ptrdiff_t>(start * kMfccDim),
                        audio.values().begin() + static_cast<std::ptrdiff_t>((start + need) * kMfccDim));
  return AudioFeatSequence(need, std::move(v));
}

std::vector<std::size_t> audio_window(std::size_t t, std::size_t audio_frames) {
  return clamped_range(static_cast<long>(kAudioPerVideo * t) - 8, kAudioSegment, audio_frames);
}

std::vector<std::size_t> video_window(std::size_t t, std::size_t frames) {
  return clamped_range(static_cast<long>(t) - 2, kVideoSegment, frames);
}

AvClip shift_audio(const AvClip& clip, long video_frames) {
  AvClip out = clip;
  const long L = static_cast<long>(clip.audio.frames());
  const long shift = static_cast<long>(kAudioPerVideo) * video_frames;
  for (long r = 0; r < L; ++r) {
    const long src = std::clamp(r - shift, 0L, L - 1);
    auto dst = out.audio.row(static_cast<std::size_t>(r));
    auto s = clip.audio.row(static_cast<std::size_t>(src));
    std::copy(s.begin(), s.end(), dst.begin());
  }
  return out;
}

}  // namespace avsync::features
