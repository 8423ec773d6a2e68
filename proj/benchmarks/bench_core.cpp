#include <benchmark/benchmark.h>

#include <cmath>
#include <numbers>

#include "avsync/diffnum/ops.hpp"
#include "avsync/features/mfcc.hpp"
#include "avsync/pyramid/pyramid.hpp"
#include "avsync/synthgen/synthgen.hpp"
#include "avsync/training/training.hpp"

using namespace avsync;
using diff::Tensor;

namespace {

Tensor random(diff::Shape shape, std::uint64_t seed) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  diff::Rng rng(seed);
  return Tensor::from(shape, diff::normal_init(n, 1.0, rng));
}

std::vector<syncer::SyncerModel> untrained_syncers() {
  std::vector<syncer::SyncerModel> ms;
  for (std::size_t l = 1; l <= 4; ++l) {
    syncer::SyncerConfig c;
    c.level = l;
    ms.emplace_back(c, l);
    ms.back().freeze();
  }
  return ms;
}

}  // namespace

static void Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random({n, n}, 1), b = random({n, n}, 2);
  diff::NoGradScope ng;
  for (auto _ : state) benchmark::DoNotOptimize(diff::matmul(a, b));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(Matmul)->RangeMultiplier(2)->Range(32, 256)->Complexity();

static void MatmulBackward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto init = random({n, n}, 1);
  auto a = Tensor::parameter({n, n}, std::vector<double>(init.data().begin(), init.data().end()));
  const auto b = random({n, n}, 2);
  for (auto _ : state) {
    diff::Tape tape;
    diff::TapeScope scope(tape);
    const auto loss = diff::sum(diff::matmul(a, b));
    benchmark::DoNotOptimize(tape.backward(loss));
  }
}
BENCHMARK(MatmulBackward)->Arg(64)->Arg(128);

static void Mfcc(benchmark::State& state) {
  const auto frames = static_cast<std::size_t>(state.range(0));
  features::Waveform w;
  w.samples.resize(features::samples_for_video_frames(frames));
  for (std::size_t i = 0; i < w.samples.size(); ++i)
    w.samples[i] = 0.3 * std::sin(2 * std::numbers::pi * 220.0 * static_cast<double>(i) / 16000.0);
  for (auto _ : state) benchmark::DoNotOptimize(features::mfcc(w));
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * frames));
}
BENCHMARK(Mfcc)->Arg(40)->Arg(320);

static void Pyramid(benchmark::State& state) {
  const auto x = random({static_cast<std::size_t>(state.range(0)), 60}, 3);
  diff::NoGradScope ng;
  for (auto _ : state) benchmark::DoNotOptimize(pyramid::build_pyramid(x, 4, 3, 5));
}
BENCHMARK(Pyramid)->Arg(40)->Arg(320);

static void SyncerScore(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  syncer::SyncerModel m(syncer::SyncerConfig{}, 1);
  const auto a = random({n, 20, 26}, 4), k = random({n, 5, 60}, 5);
  diff::NoGradScope ng;
  for (auto _ : state) benchmark::DoNotOptimize(m.score(a, k));
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * n));
}
BENCHMARK(SyncerScore)->Arg(1)->Arg(64);

static void GeneratorRollout(benchmark::State& state) {
  const auto T = static_cast<std::size_t>(state.range(0));
  generator::GeneratorModel g(generator::GeneratorConfig::desk(), 1);
  const auto x0 = random({60}, 6);
  const auto audio = random({4 * T, 26}, 7);
  diff::NoGradScope ng;
  for (auto _ : state) benchmark::DoNotOptimize(g.rollout(x0, audio, T));
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * T));
}
BENCHMARK(GeneratorRollout)->Arg(40)->Arg(120)->Unit(benchmark::kMillisecond);

static void TrainingStep(benchmark::State& state) {
  synthgen::SynthSpec s;
  s.n_clips = 4;
  s.frames = 320;
  const auto clips = synthgen::generate(s);
  const auto ms = untrained_syncers();
  std::vector<const syncer::SyncerModel*> ptrs;
  for (const auto& m : ms) ptrs.push_back(&m);
  auto cfg = training::TrainConfig::desk();
  cfg.batch = static_cast<std::size_t>(state.range(0));
  cfg.val_every = 0;
  training::Trainer t(clips, clips, ptrs, cfg);
  for (auto _ : state) benchmark::DoNotOptimize(t.step());
}
BENCHMARK(TrainingStep)->Arg(4)->Arg(16)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
