#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>

#include "avsync/eval/eval.hpp"
#include "avsync/synthgen/synthgen.hpp"

using namespace avsync;
namespace fs = std::filesystem;

namespace {

// One level-1 syncer trained on a small lip-coupled corpus, shared by the
// tests that need a working model.
class TrainedSyncer : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    synthgen::SynthSpec s;
    s.n_clips = 24;
    s.frames = 160;
    s.seed = 21;
    auto cfg = syncer::SyncerTrainConfig::desk();
    cfg.max_steps = 400;
    cfg.min_steps = 400;
    model_ = new syncer::SyncerModel(std::move(syncer::train_syncer_pyramid(synthgen::generate(s), {}, cfg, {1})[0]));
    s.n_clips = 10;
    s.seed = 22;
    s.id_prefix = "held";
    held_ = new std::vector<features::AvClip>(synthgen::generate(s));
  }
  static void TearDownTestSuite() {
    delete model_;
    delete held_;
  }
  static syncer::SyncerModel* model_;
  static std::vector<features::AvClip>* held_;
};

syncer::SyncerModel* TrainedSyncer::model_ = nullptr;
std::vector<features::AvClip>* TrainedSyncer::held_ = nullptr;

}  // namespace

TEST(Offset, RandomBaseline) {
  EXPECT_NEAR(eval::random_baseline(15), 240.0 / 31.0, 1e-15);
  EXPECT_NEAR(eval::random_baseline(15), 7.74, 0.005);
  EXPECT_EQ(eval::random_baseline(1), 2.0 / 3.0);
}

TEST(Offset, ArgmaxTieRules) {
  EXPECT_EQ(eval::argmax_shift({0, 1, 0}), 0);
  EXPECT_EQ(eval::argmax_shift({1, 1, 1}), 0);
  EXPECT_EQ(eval::argmax_shift({2, 1, 2}), -1);
  EXPECT_EQ(eval::argmax_shift({0, 0, 0, 1, 3}), 2);
  EXPECT_EQ(eval::argmax_shift({3, 0, 0, 1, 3}), -2);
  EXPECT_EQ(eval::argmax_shift({3, 0, 0, 3, 0}), 1);
}

TEST(Offset, ConfidenceIsMaxMinusMedianAndShiftInvariant) {
  std::vector<double> c{0.1, 0.5, 0.2, 0.9, 0.3};
  EXPECT_NEAR(eval::curve_confidence(c), 0.9 - 0.3, 1e-15);
  auto d = c;
  for (auto& v : d) v += 4.25;
  EXPECT_NEAR(eval::curve_confidence(d), eval::curve_confidence(c), 1e-14);
  EXPECT_GE(eval::curve_confidence({1, 1, 1}), 0.0);
}

TEST(Offset, TooShortNamesMinimum) {
  EXPECT_EQ(eval::min_frames_for_offset(1), 31u);
  EXPECT_EQ(eval::min_frames_for_offset(4), 248u);
  syncer::SyncerConfig c;
  c.level = 2;
  syncer::SyncerModel m(c, 1);
  synthgen::SynthSpec s;
  s.n_clips = 1;
  s.frames = 60;
  try {
    eval::av_offset(m, synthgen::generate(s)[0]);
    FAIL();
  } catch (const features::DataError& e) {
    EXPECT_NE(std::string(e.what()).find("62"), std::string::npos) << e.what();
  }
}

TEST(Offset, UntrainedSyncerNearRandomBaseline) {
  synthgen::SynthSpec s;
  s.n_clips = 60;
  s.frames = 96;
  s.seed = 4;
  const auto clips = synthgen::generate(s);
  double sum = 0;
  for (std::size_t i = 0; i < clips.size(); ++i) {
    syncer::SyncerModel m(syncer::SyncerConfig{}, 100 + i);
    const auto r = eval::av_offset(m, clips[i]);
    EXPECT_LE(r.abs_offset, 15u);
    EXPECT_GE(r.confidence, 0.0);
    sum += static_cast<double>(r.abs_offset);
  }
  EXPECT_NEAR(sum / 60.0, eval::random_baseline(15), 0.25 * eval::random_baseline(15));
}

TEST_F(TrainedSyncer, DeterministicResult) {
  const auto a = eval::av_offset(*model_, (*held_)[0]);
  const auto b = eval::av_offset(*model_, (*held_)[0]);
  EXPECT_EQ(a.curve, b.curve);
  EXPECT_EQ(a.offset, b.offset);
}

TEST_F(TrainedSyncer, RecoversKnownShifts) {
  for (const auto& c : *held_) {
    const long base = eval::av_offset(*model_, c).offset;
    EXPECT_EQ(base, 0) << c.clip_id;
    for (long d : {-5L, -3L, 3L, 5L}) {
      const auto r = eval::av_offset(*model_, features::shift_audio(c, d));
      EXPECT_LE(std::abs(r.offset - (base + d)), 1) << c.clip_id << " shift " << d;
    }
  }
}

TEST_F(TrainedSyncer, CorpusReportStructure) {
  std::vector<const syncer::SyncerModel*> ms{model_};
  const auto rep = eval::evaluate_corpus(ms, *held_, 15, held_);
  ASSERT_EQ(rep.rows.size(), 3u);
  EXPECT_EQ(rep.rows[0].name, "Random");
  EXPECT_EQ(rep.rows[1].name, "Ground truth");
  EXPECT_EQ(rep.rows[2].name, "Generated");
  EXPECT_EQ(rep.rows[1].levels[0].clips, held_->size());
  EXPECT_LT(rep.row("Ground truth")->levels[0].mean_abs_offset, rep.row("Random")->levels[0].mean_abs_offset);
  EXPECT_NE(rep.to_json().find("\"Ground truth\""), std::string::npos);
  const auto csv = rep.to_csv();
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);
}

TEST_F(TrainedSyncer, CorpusReportIsPermutationInvariant) {
  std::vector<const syncer::SyncerModel*> ms{model_};
  auto shuffled = *held_;
  std::reverse(shuffled.begin(), shuffled.end());
  std::rotate(shuffled.begin(), shuffled.begin() + 3, shuffled.end());
  EXPECT_EQ(eval::evaluate_corpus(ms, *held_).to_json(), eval::evaluate_corpus(ms, shuffled).to_json());
}

TEST(PlotExport, OneSeriesPerLevel) {
  const auto dir = fs::temp_directory_path() / "avsync_plot3";
  fs::remove_all(dir);
  std::vector<eval::ConfidencePoint> log;
  for (std::size_t it : {100u, 200u})
    for (std::size_t l = 1; l <= 3; ++l) log.push_back({it, l, 0.1 * static_cast<double>(l) + 1e-17 * it});
  log.push_back({300, 2, 0.123456789012345678});
  const auto files = eval::plot_export(log, dir.string());
  ASSERT_EQ(files.size(), 3u);
  std::ifstream is(dir / "confidence_level2.csv");
  std::string header, l1, l2, l3;
  std::getline(is, header);
  std::getline(is, l1);
  std::getline(is, l2);
  std::getline(is, l3);
  EXPECT_EQ(header, "iteration,confidence");
  EXPECT_EQ(l3.substr(0, 4), "300,");
  EXPECT_EQ(std::stod(l3.substr(4)), 0.123456789012345678);
}

TEST(PlotExport, EmptyLogWritesHeaders) {
  const auto dir = fs::temp_directory_path() / "avsync_plot0";
  fs::remove_all(dir);
  const auto files = eval::plot_export({}, dir.string());
  EXPECT_EQ(files.size(), 4u);
  for (const auto& f : files) EXPECT_EQ(fs::file_size(f), std::string("iteration,confidence\n").size());
}

TEST(PlotExport, ReadsTrainingLog) {
  const auto p = fs::temp_directory_path() / "avsync_log.jsonl";
  std::ofstream(p) << "{\"iter\":1,\"L_D\":0.5}\n{\"iter\":100,\"val_conf\":{\"1\":0.25,\"3\":0.5}}\n";
  const auto pts = eval::read_confidence_log(p.string());
  ASSERT_EQ(pts.size(), 2u);
  EXPECT_EQ(pts[0].iteration, 100u);
  EXPECT_EQ(pts[1].level, 3u);
  EXPECT_EQ(pts[1].confidence, 0.5);
}
