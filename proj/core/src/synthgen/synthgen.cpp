#include "avsync/synthgen/synthgen.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <mutex>
#include <stdexcept>

#include "avsync/parallel.hpp"

namespace avsync::synthgen {

namespace F = features;

namespace {

std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

double stddev(const std::vector<double>& v) {
  double mu = 0;
  for (double x : v) mu += x;
  mu /= static_cast<double>(v.size());
  double s = 0;
  for (double x : v) s += (x - mu) * (x - mu);
  return std::sqrt(s / static_cast<double>(v.size()));
}

// Linear interpolation of `v` at fractional index p, clamped to the ends.
double sample_at(const std::vector<double>& v, double p) {
  if (p <= 0) return v.front();
  const double last = static_cast<double>(v.size() - 1);
  if (p >= last) return v.back();
  const auto i = static_cast<std::size_t>(p);
  const double f = p - static_cast<double>(i);
  return v[i] * (1 - f) + v[i + 1] * f;
}

}  // namespace

const std::array<std::array<double, 2>, F::kNumKeypoints>& base_layout() {
  static const std::array<std::array<double, 2>, F::kNumKeypoints> layout{{
      {-0.40, -0.30}, {0.40, -0.30}, {-0.20, -0.35}, {0.20, -0.35}, {0.00, 0.00},
      {-0.15, 0.05},  {0.15, 0.05},  {-0.50, 0.10},  {0.00, 0.30},  {0.00, 0.45},
  }};
  return layout;
}

void check(const SynthSpec& s) {
  if (s.n_clips < 1) throw std::invalid_argument("synth: n_clips must be >= 1");
  if (s.frames < 40) throw std::invalid_argument("synth: frames must be >= 40, got " + std::to_string(s.frames));
  for (auto k : s.lip_keypoints)
    if (k >= F::kNumKeypoints) throw std::invalid_argument("synth: lip keypoint " + std::to_string(k) + " out of range");
  if (s.noise < 0) throw std::invalid_argument("synth: noise must be >= 0");
}

std::vector<double> band_noise(std::mt19937_64& rng, std::size_t n, double fs, double lo, double hi) {
  std::normal_distribution<double> nd;
  std::vector<double> x(n);
  for (auto& v : x) v = nd(rng);
  const std::size_t bins = n / 2 + 1;
  auto* spec = static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * bins));
  fftw_plan fwd, inv;
  {
    std::lock_guard lock(planner_mutex());
    fwd = fftw_plan_dft_r2c_1d(static_cast<int>(n), x.data(), spec, FFTW_ESTIMATE);
    inv = fftw_plan_dft_c2r_1d(static_cast<int>(n), spec, x.data(), FFTW_ESTIMATE);
  }
  fftw_execute(fwd);
  for (std::size_t k = 0; k < bins; ++k) {
    const double f = static_cast<double>(k) * fs / static_cast<double>(n);
    if (f < lo || f > hi) spec[k][0] = spec[k][1] = 0.0;
  }
  fftw_execute(inv);
  {
    std::lock_guard lock(planner_mutex());
    fftw_destroy_plan(fwd);
    fftw_destroy_plan(inv);
  }
  fftw_free(spec);
  const double sd = stddev(x) + 1e-12;
  double mu = 0;
  for (double v : x) mu += v;
  mu /= static_cast<double>(n);
  for (auto& v : x) v = (v - mu) / sd;
  return x;
}

SynthClip synthesize(const SynthSpec& spec, std::size_t index) {
  check(spec);
  std::seed_seq seq{static_cast<std::uint32_t>(spec.seed), static_cast<std::uint32_t>(spec.seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  std::mt19937_64 rng(seq);
  std::normal_distribution<double> nd;

  const std::size_t T = spec.frames;
  const std::size_t La = F::kAudioPerVideo * T;
  constexpr double kLatentRate = 100.0;  // one latent sample per MFCC hop

  // Latent drivers on the MFCC clock: latent j sits at the centre of frame j.
  const auto s_lip = band_noise(rng, La, kLatentRate, spec.lip_band_hz[0], spec.lip_band_hz[1]);
  const auto s_head = band_noise(rng, La, kLatentRate, spec.head_band_hz[0], spec.head_band_hz[1]);

  SynthClip out;
  const std::size_t ns = F::samples_for_video_frames(T);
  const auto carrier = band_noise(rng, ns, F::kSampleRate, 100.0, 4000.0);
  out.wave.samples.resize(ns);
  const double half_window = F::kWindowSamples / 2.0;
  for (std::size_t i = 0; i < ns; ++i) {
    const double p = (static_cast<double>(i) - half_window) / static_cast<double>(F::kHopSamples);
    const double env = std::exp(0.5 * sample_at(s_lip, p) + 0.5 * sample_at(s_head, p));
    out.wave.samples[i] = 0.1 * env * carrier[i];
  }

  out.clip.clip_id = spec.id_prefix + "-" + std::to_string(index);
  out.clip.identity_id = spec.id_prefix + "-id-" + std::to_string(index);
  out.clip.audio = F::mfcc(out.wave);

  out.lip_drive.resize(T);
  out.head_drive.resize(T);
  for (std::size_t t = 0; t < T; ++t) {
    double a = 0, b = 0;
    for (std::size_t j = 0; j < F::kAudioPerVideo; ++j) {
      a += s_lip[F::kAudioPerVideo * t + j];
      b += s_head[F::kAudioPerVideo * t + j];
    }
    out.lip_drive[t] = a / F::kAudioPerVideo;
    out.head_drive[t] = b / F::kAudioPerVideo;
  }

  auto base = base_layout();
  for (auto& p : base)
    for (auto& c : p) c += spec.identity_jitter * nd(rng);

  out.clip.keypoints = F::KeypointSequence(T);
  out.head_positions.resize(T * F::kNumKeypoints * 2);
  out.lip_displacement.resize(T);
  const double lip_sign_first = -1.0;
  for (std::size_t t = 0; t < T; ++t) {
    const double h = spec.g_head * out.head_drive[t];
    const double th = 0.15 * h, tx = 0.05 * h, ty = 0.025 * h;
    const double c = std::cos(th), s = std::sin(th);
    const double lip = spec.g_lip * 0.05 * out.lip_drive[t];
    out.lip_displacement[t] = lip_sign_first * lip;
    std::size_t lip_rank = 0;
    for (std::size_t k = 0; k < F::kNumKeypoints; ++k) {
      double x = c * base[k][0] - s * base[k][1] + tx;
      double y = s * base[k][0] + c * base[k][1] + ty;
      out.head_positions[(t * F::kNumKeypoints + k) * 2] = x;
      out.head_positions[(t * F::kNumKeypoints + k) * 2 + 1] = y;
      double j22 = 1.0;
      const bool is_lip =
          std::find(spec.lip_keypoints.begin(), spec.lip_keypoints.end(), k) != spec.lip_keypoints.end();
      if (is_lip) {
        // Lip keypoints open and close in opposite directions.
        y += (lip_rank++ % 2 == 0 ? lip_sign_first : -lip_sign_first) * lip;
        j22 += lip;
      }
      x += spec.noise * nd(rng);
      y += spec.noise * nd(rng);
      auto& kp = out.clip.keypoints;
      kp(t, F::keypoint_index(k, 0)) = std::clamp(x, -F::kPositionLimit, F::kPositionLimit);
      kp(t, F::keypoint_index(k, 1)) = std::clamp(y, -F::kPositionLimit, F::kPositionLimit);
      const double jn = 0.5 * spec.noise;
      kp(t, F::keypoint_index(k, 2)) = 1.0 + jn * nd(rng);
      kp(t, F::keypoint_index(k, 3)) = jn * nd(rng);
      kp(t, F::keypoint_index(k, 4)) = jn * nd(rng);
      kp(t, F::keypoint_index(k, 5)) = j22 + jn * nd(rng);
    }
  }
  return out;
}

std::vector<F::AvClip> generate(const SynthSpec& spec) {
  check(spec);
  std::vector<F::AvClip> clips(spec.n_clips);
  parallel_for(spec.n_clips, [&](std::size_t i) { clips[i] = synthesize(spec, i).clip; });
  return clips;
}

}  // namespace avsync::synthgen
