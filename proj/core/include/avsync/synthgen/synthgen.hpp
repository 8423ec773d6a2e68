#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "avsync/features/clip.hpp"
#include "avsync/features/mfcc.hpp"

namespace avsync::synthgen {

struct SynthSpec {
  std::size_t n_clips = 32;
  std::size_t frames = 320;  // T, video frames per clip
  std::vector<std::size_t> lip_keypoints{8, 9};
  double g_lip = 3.0;
  double g_head = 1.0;
  double noise = 0.15;  // sigma on positions; sigma/2 on Jacobians
  std::array<double, 2> lip_band_hz{4.0, 10.0};
  std::array<double, 2> head_band_hz{0.2, 0.8};
  double identity_jitter = 0.03;
  std::uint64_t seed = 1;
  std::string id_prefix = "synth";
};

/// Throws std::invalid_argument unless n_clips >= 1, frames >= 40 and the
/// lip keypoint indices are valid.
void check(const SynthSpec& spec);

/// One clip plus the latent drivers, kept for construction checks.
struct SynthClip {
  features::AvClip clip;
  features::Waveform wave;
  std::vector<double> lip_drive;   // per video frame, unit-variance latent
  std::vector<double> head_drive;  // per video frame
  /// Positions (T x 10 x 2) after head motion only: no lip, no noise.
  std::vector<double> head_positions;
  /// Lip displacement on y of the first lip keypoint (T values).
  std::vector<double> lip_displacement;
};

/// Clip `index` of the corpus; depends only on (spec, index).
SynthClip synthesize(const SynthSpec& spec, std::size_t index);

std::vector<features::AvClip> generate(const SynthSpec& spec);

/// Unit-variance noise band-limited to [lo, hi] Hz by FFT masking.
std::vector<double> band_noise(std::mt19937_64& rng, std::size_t n, double fs, double lo, double hi);

/// Mean-face layout (10 keypoints, x/y).
const std::array<std::array<double, 2>, features::kNumKeypoints>& base_layout();

}  // namespace avsync::synthgen
