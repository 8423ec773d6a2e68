#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <numbers>

#include "avsync/synthgen/synthgen.hpp"

using namespace avsync;

namespace {

// Energy of x in [lo, hi] Hz from a direct DFT at `fs` Hz.
double band_energy(const std::vector<double>& x, double fs, double lo, double hi) {
  const std::size_t n = x.size();
  double e = 0;
  for (std::size_t k = 1; k <= n / 2; ++k) {
    const double f = static_cast<double>(k) * fs / static_cast<double>(n);
    if (f < lo || f > hi) continue;
    std::complex<double> s = 0;
    for (std::size_t i = 0; i < n; ++i)
      s += x[i] * std::polar(1.0, -2 * std::numbers::pi * static_cast<double>(k * i) / static_cast<double>(n));
    e += std::norm(s);
  }
  return e;
}

}  // namespace

TEST(Synth, ClipsSatisfyInvariants) {
  synthgen::SynthSpec s;
  s.n_clips = 4;
  s.frames = 40;
  const auto clips = synthgen::generate(s);
  ASSERT_EQ(clips.size(), 4u);
  for (const auto& c : clips) {
    EXPECT_TRUE(features::validate(c).empty());
    EXPECT_EQ(c.audio.frames(), 160u);
  }
}

TEST(Synth, Deterministic) {
  synthgen::SynthSpec s;
  s.n_clips = 2;
  s.frames = 48;
  EXPECT_EQ(synthgen::generate(s), synthgen::generate(s));
  auto t = s;
  t.seed = 2;
  EXPECT_NE(synthgen::generate(s)[0].keypoints, synthgen::generate(t)[0].keypoints);
}

TEST(Synth, ClipDependsOnlyOnIndex) {
  synthgen::SynthSpec s;
  s.n_clips = 3;
  s.frames = 40;
  const auto all = synthgen::generate(s);
  EXPECT_EQ(synthgen::synthesize(s, 2).clip, all[2]);
}

TEST(Synth, HeadChannelIsRigid) {
  synthgen::SynthSpec s;
  s.frames = 100;
  s.g_head = 2.0;
  const auto c = synthgen::synthesize(s, 0);
  auto dist = [&](std::size_t t, std::size_t i, std::size_t j) {
    const auto* p = &c.head_positions[t * 20];
    return std::hypot(p[2 * i] - p[2 * j], p[2 * i + 1] - p[2 * j + 1]);
  };
  for (std::size_t t = 1; t < 100; ++t)
    for (std::size_t i = 0; i < 8; ++i)
      for (std::size_t j = i + 1; j < 8; ++j) EXPECT_NEAR(dist(t, i, j), dist(0, i, j), 1e-12);
  // The head channel does move.
  EXPECT_GT(std::abs(c.head_positions[100 * 20 - 20] - c.head_positions[0]), 0.0);
}

TEST(Synth, LipEnergySitsInItsBand) {
  synthgen::SynthSpec s;
  s.frames = 256;
  const auto c = synthgen::synthesize(s, 1);
  const double in_band = band_energy(c.lip_displacement, 25.0, 4.0, 10.0);
  const double low = band_energy(c.lip_displacement, 25.0, 0.0, 2.0);
  EXPECT_GT(in_band, 10.0 * low);
}

TEST(Synth, HeadDriveIsSlow) {
  synthgen::SynthSpec s;
  s.frames = 256;
  const auto c = synthgen::synthesize(s, 1);
  EXPECT_GT(band_energy(c.head_drive, 25.0, 0.0, 2.0), 10.0 * band_energy(c.head_drive, 25.0, 2.0, 12.5));
}

TEST(Synth, ZeroGainsLeaveMotionFreeOfDrivers) {
  synthgen::SynthSpec s;
  s.frames = 40;
  s.g_lip = 0;
  s.g_head = 0;
  s.noise = 0;
  s.identity_jitter = 0;
  const auto c = synthgen::synthesize(s, 0).clip;
  for (std::size_t t = 1; t < 40; ++t)
    for (std::size_t k = 0; k < 60; ++k) EXPECT_EQ(c.keypoints(t, k), c.keypoints(0, k));
}

TEST(Synth, RejectsBadSpecs) {
  synthgen::SynthSpec s;
  s.frames = 39;
  EXPECT_THROW(synthgen::generate(s), std::invalid_argument);
  s.frames = 40;
  s.n_clips = 0;
  EXPECT_THROW(synthgen::generate(s), std::invalid_argument);
  s.n_clips = 1;
  s.lip_keypoints = {10};
  EXPECT_THROW(synthgen::generate(s), std::invalid_argument);
}

TEST(Synth, BandNoiseIsUnitVarianceAndBandLimited) {
  std::mt19937_64 rng(3);
  const auto x = synthgen::band_noise(rng, 400, 100.0, 4.0, 10.0);
  double mu = 0, var = 0;
  for (double v : x) mu += v;
  mu /= 400;
  for (double v : x) var += (v - mu) * (v - mu);
  EXPECT_NEAR(mu, 0.0, 1e-12);
  EXPECT_NEAR(var / 400, 1.0, 1e-9);
  EXPECT_LT(band_energy(x, 100.0, 12.0, 50.0), 1e-12 * band_energy(x, 100.0, 4.0, 10.0));
}
