#include "avsync/features/mfcc.hpp"

#include <fftw3.h>

#include <cmath>
#include <memory>
#include <mutex>
#include <numbers>

namespace avsync::features {

namespace {

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

struct FftwFree {
  void operator()(void* p) const { fftw_free(p); }
};

// FFTW planning is not thread-safe; execution with new arrays is, so one
// shared plan is created once and every call brings its own buffers.
class RealFft {
 public:
  static const RealFft& instance() {
    static RealFft fft;
    return fft;
  }

  /// |X_k| for k in [0, kFftSize/2].
  void magnitude(const double* frame, std::size_t n, std::vector<double>& out) const {
    std::unique_ptr<double, FftwFree> in(static_cast<double*>(fftw_malloc(sizeof(double) * kFftSize)));
    std::unique_ptr<fftw_complex, FftwFree> spec(
        static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * (kFftSize / 2 + 1))));
    for (std::size_t i = 0; i < kFftSize; ++i) in.get()[i] = i < n ? frame[i] : 0.0;
    fftw_execute_dft_r2c(plan_, in.get(), spec.get());
    out.resize(kFftSize / 2 + 1);
    for (std::size_t k = 0; k < out.size(); ++k)
      out[k] = std::hypot(spec.get()[k][0], spec.get()[k][1]);
  }

 private:
  RealFft() {
    std::unique_ptr<double, FftwFree> in(static_cast<double*>(fftw_malloc(sizeof(double) * kFftSize)));
    std::unique_ptr<fftw_complex, FftwFree> out(
        static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * (kFftSize / 2 + 1))));
    plan_ = fftw_plan_dft_r2c_1d(static_cast<int>(kFftSize), in.get(), out.get(), FFTW_ESTIMATE);
  }
  ~RealFft() { fftw_destroy_plan(plan_); }
  fftw_plan plan_;
};

std::vector<double> hann(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i)
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n - 1));
  return w;
}

std::vector<std::vector<double>> dct_matrix(std::size_t n) {
  std::vector<std::vector<double>> m(n, std::vector<double>(n));
  for (std::size_t k = 0; k < n; ++k) {
    const double s = k == 0 ? std::sqrt(1.0 / static_cast<double>(n)) : std::sqrt(2.0 / static_cast<double>(n));
    for (std::size_t i = 0; i < n; ++i)
      m[k][i] = s * std::cos(std::numbers::pi / static_cast<double>(n) * (static_cast<double>(i) + 0.5) *
                             static_cast<double>(k));
  }
  return m;
}

}  // namespace

std::size_t mfcc_frame_count(std::size_t samples) {
  if (samples < kWindowSamples) return 0;
  return (samples - kWindowSamples) / kHopSamples + 1;
}

std::size_t samples_for_video_frames(std::size_t frames) {
  return kHopSamples * (kAudioPerVideo * frames - 1) + kWindowSamples;
}

std::vector<std::vector<double>> mel_filterbank(std::size_t bands, double low_hz, double high_hz) {
  const std::size_t bins = kFftSize / 2 + 1;
  const double lo = hz_to_mel(low_hz), hi = hz_to_mel(high_hz);
  std::vector<double> edges(bands + 2);
  for (std::size_t i = 0; i < edges.size(); ++i) {
    const double mel = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(bands + 1);
    edges[i] = mel_to_hz(mel) / (kSampleRate / 2.0) * static_cast<double>(bins - 1);
  }
  std::vector<std::vector<double>> fb(bands, std::vector<double>(bins, 0.0));
  for (std::size_t m = 0; m < bands; ++m) {
    const double l = edges[m], c = edges[m + 1], r = edges[m + 2];
    for (std::size_t k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k);
      if (f > l && f <= c) fb[m][k] = (f - l) / (c - l);
      else if (f > c && f < r) fb[m][k] = (r - f) / (r - c);
    }
  }
  return fb;
}

AudioFeatSequence mfcc(const Waveform& wave, const MfccOptions& options) {
  if (wave.sample_rate != kSampleRate) {
    throw DataError("mfcc: sample rate " + std::to_string(wave.sample_rate) +
                    " Hz unsupported, expected 16000 Hz (resample first)");
  }
  const std::size_t n = wave.samples.size();
  if (n < kWindowSamples) {
    throw DataError("mfcc: need at least " + std::to_string(kWindowSamples) + " samples, got " +
                    std::to_string(n));
  }
  if (options.mel_bands != kMfccDim) throw DataError("mfcc: coefficient count is fixed at 26");

  std::vector<double> emph(n);
  emph[0] = wave.samples[0];
  for (std::size_t i = 1; i < n; ++i) emph[i] = wave.samples[i] - options.preemphasis * wave.samples[i - 1];

  static const auto window = hann(kWindowSamples);
  static const auto dct = dct_matrix(kMfccDim);
  const auto fb = mel_filterbank(options.mel_bands, options.low_hz, options.high_hz);
  const auto& fft = RealFft::instance();

  const std::size_t frames = mfcc_frame_count(n);
  AudioFeatSequence out(frames);
  std::vector<double> frame(kWindowSamples), spectrum, logmel(kMfccDim);
  for (std::size_t t = 0; t < frames; ++t) {
    const double* src = emph.data() + t * kHopSamples;
    for (std::size_t i = 0; i < kWindowSamples; ++i) frame[i] = src[i] * window[i];
    fft.magnitude(frame.data(), kWindowSamples, spectrum);
    for (std::size_t m = 0; m < kMfccDim; ++m) {
      double e = 0.0;
      for (std::size_t k = 0; k < spectrum.size(); ++k) e += fb[m][k] * spectrum[k];
      logmel[m] = std::log(std::max(e, options.log_floor));
    }
    for (std::size_t k = 0; k < kMfccDim; ++k) {
      double c = 0.0;
      for (std::size_t i = 0; i < kMfccDim; ++i) c += dct[k][i] * logmel[i];
      out(t, k) = c;
    }
  }

  if (options.normalize) {
    for (std::size_t k = 0; k < kMfccDim; ++k) {
      double mu = 0.0;
      for (std::size_t t = 0; t < frames; ++t) mu += out(t, k);
      mu /= static_cast<double>(frames);
      double var = 0.0;
      for (std::size_t t = 0; t < frames; ++t) var += (out(t, k) - mu) * (out(t, k) - mu);
      const double sd = std::sqrt(var / static_cast<double>(frames));
      const double inv = sd > 1e-8 ? 1.0 / sd : 0.0;  // constant tracks normalise to zero
      for (std::size_t t = 0; t < frames; ++t) out(t, k) = (out(t, k) - mu) * inv;
    }
  }
  return out;
}

}  // namespace avsync::features
