#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "avsync/diffnum/gradcheck.hpp"
#include "avsync/diffnum/ops.hpp"
#include "avsync/syncer/syncer.hpp"
#include "avsync/synthgen/synthgen.hpp"

using namespace avsync;
using diff::Tensor;
using syncer::Mining;

namespace {

Tensor rnd(diff::Shape shape, diff::Rng& rng, bool param = false, double sd = 1.0) {
  const auto n = diff::numel(shape);
  auto v = diff::normal_init(n, sd, rng);
  return param ? Tensor::parameter(std::move(shape), std::move(v)) : Tensor::from(std::move(shape), std::move(v));
}

std::vector<pyramid::AvPyramid> small_corpus(std::size_t n, std::size_t T, std::uint64_t seed) {
  synthgen::SynthSpec s;
  s.n_clips = n;
  s.frames = T;
  s.seed = seed;
  return syncer::build_pyramids(synthgen::generate(s));
}

syncer::SyncerConfig tiny(std::size_t level = 1) {
  syncer::SyncerConfig c;
  c.level = level;
  c.embed_dim = 6;
  c.conv_channels = 3;
  return c;
}

}  // namespace

TEST(Score, StubbedEmbeddings) {
  const auto s = [](std::vector<double> a, std::vector<double> b) {
    return syncer::cosine_score(Tensor::from({a.size()}, a), Tensor::from({b.size()}, b)).item();
  };
  EXPECT_NEAR(s({0.3, -2, 1}, {0.3, -2, 1}), 1.0, 1e-15);
  EXPECT_NEAR(s({1, 0}, {0, 1}), 0.0, 1e-15);
  EXPECT_NEAR(s({1, 0}, {1, 1}), std::sqrt(0.5), 1e-9);
  EXPECT_EQ(s({0, 0}, {1, 1}), 0.0);
}

TEST(Score, BoundedAndScaleInvariant) {
  diff::Rng rng(1);
  for (int i = 0; i < 20; ++i) {
    auto a = rnd({8}, rng), b = rnd({8}, rng);
    const double s = syncer::cosine_score(a, b).item();
    EXPECT_LE(std::abs(s), 1.0 + 1e-15);
    EXPECT_NEAR(syncer::cosine_score(diff::scale(a, 3.7), diff::scale(b, 0.2)).item(), s, 1e-14);
  }
}

TEST(Score, ModelScoreShapesAndErrors) {
  syncer::SyncerModel m(tiny(), 3);
  diff::Rng rng(2);
  const auto s = m.score(rnd({20, 26}, rng), rnd({5, 60}, rng));
  EXPECT_EQ(s.rank(), 0u);
  EXPECT_LE(std::abs(s.item()), 1.0);
  EXPECT_EQ(m.score(rnd({4, 20, 26}, rng), rnd({4, 5, 60}, rng)).shape(), (diff::Shape{4}));
  EXPECT_THROW(m.score(rnd({19, 26}, rng), rnd({5, 60}, rng)), diff::ShapeError);
  EXPECT_THROW(m.score(rnd({20, 26}, rng), rnd({5, 59}, rng)), diff::ShapeError);
}

TEST(InfoNce, EqualScoresGiveLogNPlusOne) {
  const auto pos = Tensor::from({3}, {0.2, 0.2, 0.2});
  const auto neg = Tensor::full({3, 12}, 0.2);
  const double l = syncer::infonce_from_scores(pos, neg, Tensor::scalar(10)).item();
  EXPECT_NEAR(l, std::log(13.0), 1e-12);
  EXPECT_NEAR(l, 2.5649493574615367, 1e-12);
}

TEST(InfoNce, SaturatesToZero) {
  const auto l = syncer::infonce_from_scores(Tensor::from({1}, {1.0}), Tensor::full({1, 12}, -1.0),
                                             Tensor::scalar(50.0));
  EXPECT_LT(l.item(), 1e-40);
  EXPECT_GE(l.item(), 0.0);
}

TEST(InfoNce, LiteralFormIsNegatedRatio) {
  const auto pos = Tensor::from({1}, {0.5});
  const auto neg = Tensor::from({1, 2}, {0.1, -0.3});
  const double s = 2.0;
  const double r = std::exp(s * 0.5) / (std::exp(s * 0.5) + std::exp(s * 0.1) + std::exp(-s * 0.3));
  EXPECT_NEAR(syncer::infonce_from_scores(pos, neg, Tensor::scalar(s), true).item(), -r, 1e-14);
  EXPECT_NEAR(syncer::infonce_from_scores(pos, neg, Tensor::scalar(s)).item(), -std::log(r), 1e-14);
}

TEST(InfoNce, RandomInitNearLog13) {
  auto corpus = small_corpus(3, 40, 5);
  diff::Rng rng(6);
  const auto b = syncer::mine_batch(corpus, 1, 12, Mining::Hard, 16, rng);
  // Random cosines spread like 1/sqrt(E); at the paper width they are small
  // enough that the logit scale of 10 keeps the softmax near uniform.
  syncer::SyncerConfig c;
  c.embed_dim = 512;
  for (std::uint64_t seed : {7u, 8u, 9u}) {
    syncer::SyncerModel m(c, seed);
    EXPECT_NEAR(syncer::infonce_loss(m, b).item(), std::log(13.0), 0.3);
  }
}

TEST(InfoNce, EmptyBatchThrows) {
  EXPECT_THROW(syncer::infonce_from_scores(Tensor::zeros({0}), Tensor::zeros({0, 3}), Tensor::scalar(1)),
               std::invalid_argument);
  EXPECT_THROW(syncer::infonce_loss(syncer::SyncerModel(tiny(), 1), syncer::ContrastiveBatch{}),
               std::invalid_argument);
}

TEST(Triplet, Examples) {
  auto t = [](double p, double n) {
    return syncer::triplet_from_scores(Tensor::from({1}, {p}), Tensor::from({1}, {n}), 0.2).item();
  };
  EXPECT_EQ(t(1, -1), 0.0);
  EXPECT_NEAR(t(0.3, 0.4), 0.3, 1e-15);
  EXPECT_NEAR(t(0.25, 0.25), 0.2, 1e-15);
  EXPECT_NEAR(t(-1, 1), 2.2, 1e-15);
}

TEST(Triplet, SameSegmentGivesMargin) {
  syncer::SyncerModel m(tiny(), 2);
  diff::Rng rng(3);
  const auto a = rnd({4, 20, 26}, rng), x = rnd({4, 5, 60}, rng);
  EXPECT_NEAR(syncer::triplet_loss(m, a, x, x, 0.2).item(), 0.2, 1e-14);
}

TEST(Gradients, InfoNceMatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    diff::Rng rng(seed);
    auto corpus = small_corpus(2, 40, seed + 10);
    const auto b = syncer::mine_batch(corpus, 1, 3, Mining::Hard, 2, rng);
    syncer::SyncerModel m(tiny(), seed);
    std::vector<Tensor> wrt;
    for (const auto& [name, t] : m.params().entries()) wrt.push_back(t);
    diff::GradCheckOptions o;
    o.max_entries_per_tensor = 12;
    o.seed = seed;
    const auto r = diff::gradcheck([&] { return syncer::infonce_loss(m, b); }, wrt, o);
    EXPECT_LT(r.max_rel_error, 1e-4) << r.worst;
  }
}

TEST(Gradients, TripletMatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    diff::Rng rng(seed + 100);
    syncer::SyncerModel m(tiny(), seed);
    const auto a = rnd({3, 20, 26}, rng), p = rnd({3, 5, 60}, rng), n = rnd({3, 5, 60}, rng);
    std::vector<Tensor> wrt;
    for (const auto& [name, t] : m.params().entries()) wrt.push_back(t);
    diff::GradCheckOptions o;
    o.max_entries_per_tensor = 12;
    o.seed = seed;
    // Margin large enough that every hinge is active, away from the kink.
    const auto r = diff::gradcheck([&] { return syncer::triplet_loss(m, a, p, n, 2.5); }, wrt, o);
    EXPECT_LT(r.max_rel_error, 1e-4) << r.worst;
  }
}

TEST(Mining, HardNegativesAreFarFromAnchor) {
  // Constant-per-frame tracks let the window contents reveal their centres.
  features::AvClip c;
  c.clip_id = "ramp";
  c.keypoints = features::KeypointSequence(40);
  c.audio = features::AudioFeatSequence(160);
  for (std::size_t t = 0; t < 40; ++t)
    for (std::size_t k = 0; k < 60; ++k) c.keypoints(t, k) = static_cast<double>(t);
  for (std::size_t r = 0; r < 160; ++r)
    for (std::size_t k = 0; k < 26; ++k) c.audio(r, k) = static_cast<double>(r);
  const auto corpus = syncer::build_pyramids({c});
  diff::Rng rng(4);
  const auto b = syncer::mine_batch(corpus, 1, 12, Mining::Hard, 8, rng);
  EXPECT_EQ(b.negatives.shape(), (diff::Shape{8, 12, 5, 60}));
  EXPECT_TRUE(b.warnings.empty());
  for (std::size_t i = 0; i < 8; ++i) {
    const double t = b.positives.at({i, 2, 0});
    EXPECT_EQ(b.anchors.at({i, 8, 0}), 4 * t);  // audio row 4t sits at window slot 8
    std::set<double> seen;
    for (std::size_t n = 0; n < 12; ++n) {
      const double tn = b.negatives.at({i, n, 2, 0});
      EXPECT_GE(std::abs(tn - t), 2.0);
      EXPECT_TRUE(seen.insert(tn).second) << "negatives drawn without replacement";
    }
  }
}

TEST(Mining, CrossSampleUsesOtherClips) {
  std::vector<features::AvClip> clips(3);
  for (std::size_t i = 0; i < 3; ++i) {
    clips[i].clip_id = std::to_string(i);
    clips[i].keypoints = features::KeypointSequence(40);
    clips[i].audio = features::AudioFeatSequence(160);
    for (auto& v : clips[i].keypoints.values()) v = static_cast<double>(i);
    for (auto& v : clips[i].audio.values()) v = static_cast<double>(i);
  }
  const auto corpus = syncer::build_pyramids(clips);
  diff::Rng rng(5);
  const auto b = syncer::mine_batch(corpus, 4, 48, Mining::CrossSample, 6, rng);
  EXPECT_EQ(b.negatives_per_anchor(), 48u);
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t n = 0; n < 48; ++n) EXPECT_NE(b.negatives.at({i, n, 0, 0}), b.anchors.at({i, 0, 0}));
}

TEST(Mining, SingleClipCrossSampleThrows) {
  auto corpus = small_corpus(1, 40, 3);
  diff::Rng rng(1);
  EXPECT_THROW(syncer::mine_batch(corpus, 4, 48, Mining::CrossSample, 2, rng), std::invalid_argument);
}

TEST(Mining, ShortClipFallsBackWithWarning) {
  auto corpus = small_corpus(2, 40, 3);
  diff::Rng rng(1);
  // Level 3 of T=40 has 10 frames: interior centres 2..7 cannot give 12.
  const auto b = syncer::mine_batch(corpus, 3, 12, Mining::Hard, 4, rng);
  EXPECT_EQ(b.warnings.size(), 1u);
  EXPECT_EQ(b.negatives_per_anchor(), 12u);
}

TEST(Mining, Defaults) {
  EXPECT_EQ(syncer::default_mining(1), Mining::Hard);
  EXPECT_EQ(syncer::default_mining(3), Mining::Hard);
  EXPECT_EQ(syncer::default_mining(4), Mining::CrossSample);
  EXPECT_EQ(syncer::default_negatives(2), 12u);
  EXPECT_EQ(syncer::default_negatives(4), 48u);
}

TEST(Training, ReducesLossFreezesAndCheckpoints) {
  synthgen::SynthSpec s;
  s.n_clips = 6;
  s.frames = 80;
  const auto clips = synthgen::generate(s);
  auto cfg = syncer::SyncerTrainConfig::desk();
  cfg.max_steps = 60;
  cfg.min_steps = 60;
  cfg.eval_every = 20;
  cfg.batch = 8;
  cfg.val_batches = 2;
  cfg.checkpoint_dir = (std::filesystem::temp_directory_path() / "avsync_syncer_ckpt").string();
  std::vector<syncer::SyncerTrainReport> reps;
  auto models = syncer::train_syncer_pyramid(clips, {}, cfg, {1}, &reps);
  ASSERT_EQ(models.size(), 1u);
  EXPECT_TRUE(models[0].frozen());
  EXPECT_EQ(reps[0].steps, 60u);
  EXPECT_LT(reps[0].validation.back().second, std::log(13.0));

  const auto sum_before = models[0].params().checksum();
  auto loaded = syncer::load_syncer(cfg.checkpoint_dir + "/syncer_l1.avpc");
  EXPECT_TRUE(loaded.frozen());
  EXPECT_EQ(loaded.params().checksum(), sum_before);

  // A frozen model takes no gradient.
  diff::Tape tape;
  diff::GradientMap g;
  {
    diff::TapeScope scope(tape);
    diff::Rng rng(1);
    auto x = rnd({5, 60}, rng, true);
    auto loss = models[0].score(rnd({20, 26}, rng), x);
    g = tape.backward(loss);
  }
  for (const auto& [name, t] : models[0].params().entries()) {
    for (double v : g.get(t)) EXPECT_EQ(v, 0.0) << name;
  }
}

TEST(Training, DeterministicUnderSeed) {
  synthgen::SynthSpec s;
  s.n_clips = 3;
  s.frames = 40;
  const auto clips = synthgen::generate(s);
  auto cfg = syncer::SyncerTrainConfig::desk();
  cfg.max_steps = 10;
  cfg.min_steps = 10;
  cfg.eval_every = 5;
  cfg.batch = 4;
  cfg.model.embed_dim = 8;
  const auto a = syncer::train_syncer_pyramid(clips, {}, cfg, {2});
  const auto b = syncer::train_syncer_pyramid(clips, {}, cfg, {2});
  EXPECT_EQ(a[0].params().checksum(), b[0].params().checksum());
}
