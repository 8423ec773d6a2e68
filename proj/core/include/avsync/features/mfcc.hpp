#pragma once

#include <vector>

#include "avsync/features/clip.hpp"

namespace avsync::features {

inline constexpr int kSampleRate = 16000;
inline constexpr std::size_t kWindowSamples = 400;  // 25 ms
inline constexpr std::size_t kHopSamples = 160;     // 10 ms
inline constexpr std::size_t kFftSize = 512;

struct Waveform {
  std::vector<double> samples;
  int sample_rate = kSampleRate;
};

struct MfccOptions {
  double preemphasis = 0.97;
  std::size_t mel_bands = 26;
  double low_hz = 0.0;
  double high_hz = 8000.0;
  double log_floor = 1e-10;
  /// Per-coefficient zero-mean / unit-variance over the whole track.
  bool normalize = true;
};

/// Number of frames produced for `samples` input samples.
std::size_t mfcc_frame_count(std::size_t samples);

/// Pre-emphasis, Hann window, 512-point magnitude spectrum, triangular mel
/// filterbank, log, orthonormal DCT-II (26 coefficients), optional per-track
/// normalisation. Throws DataError for a rate other than 16 kHz or fewer than
/// 400 samples.
AudioFeatSequence mfcc(const Waveform& wave, const MfccOptions& options = {});

/// Triangular filters over the kFftSize/2+1 spectrum bins, HTK mel scale.
std::vector<std::vector<double>> mel_filterbank(std::size_t bands, double low_hz, double high_hz);

/// Samples needed so that mfcc() yields exactly 4*frames rows.
std::size_t samples_for_video_frames(std::size_t frames);

}  // namespace avsync::features
