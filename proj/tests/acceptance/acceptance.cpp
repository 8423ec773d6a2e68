// Acceptance run: one PASS/FAIL line per criterion.
//
//   avsync_acceptance [--work DIR] [N ...]
//
// With no numbers every criterion runs. Exit status is 0 iff all selected
// criteria pass.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>

#include "avsync/diffnum/checkpoint.hpp"
#include "avsync/diffnum/ops.hpp"
#include "avsync/eval/eval.hpp"
#include "avsync/parallel.hpp"
#include "avsync/pyramid/pyramid.hpp"
#include "avsync/synthgen/synthgen.hpp"
#include "avsync/training/loss_checks.hpp"
#include "avsync/training/training.hpp"

using namespace avsync;
using diff::Tensor;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int prec = 3) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(prec);
  os << v;
  return os.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::vector<features::AvClip> corpus(std::size_t n, std::uint64_t seed, const std::string& prefix,
                                     double g_lip = 3.0, double g_head = 1.0, std::size_t frames = 320) {
  synthgen::SynthSpec s;
  s.n_clips = n;
  s.seed = seed;
  s.id_prefix = prefix;
  s.g_lip = g_lip;
  s.g_head = g_head;
  s.frames = frames;
  return synthgen::generate(s);
}

std::vector<const syncer::SyncerModel*> pointers(const std::vector<syncer::SyncerModel>& ms) {
  std::vector<const syncer::SyncerModel*> p;
  for (const auto& m : ms) p.push_back(&m);
  return p;
}

double mean_abs_offset(const syncer::SyncerModel& m, const std::vector<features::AvClip>& clips) {
  std::vector<double> off(clips.size());
  parallel_for(clips.size(), [&](std::size_t i) { off[i] = static_cast<double>(eval::av_offset(m, clips[i]).abs_offset); });
  double s = 0;
  for (double v : off) s += v;
  return s / static_cast<double>(clips.size());
}

// Resources shared between criteria, built on first use.
class Workspace {
 public:
  explicit Workspace(fs::path dir) : dir_(std::move(dir)) { fs::create_directories(dir_); }

  const fs::path& dir() const { return dir_; }

  const std::vector<features::AvClip>& train() {
    if (!train_) train_ = corpus(48, 11, "train");
    return *train_;
  }
  const std::vector<features::AvClip>& test() {
    if (!test_) test_ = corpus(60, 12, "test");
    return *test_;
  }
  const std::vector<features::AvClip>& val() {
    if (!val_) val_ = corpus(16, 12, "val");
    return *val_;
  }

  // Four-level pyramid trained on the lip+head corpus.
  const std::vector<syncer::SyncerModel>& syncers() {
    if (syncers_.empty()) {
      auto c = syncer::SyncerTrainConfig::desk();
      c.seed = 1;
      syncers_ = syncer::train_syncer_pyramid(train(), {}, c);
      for (const auto& m : syncers_) checksums_.push_back(m.params().checksum());
    }
    return syncers_;
  }
  const std::vector<std::uint64_t>& syncer_checksums() {
    syncers();
    return checksums_;
  }

  training::TrainConfig gen_config() const {
    auto c = training::TrainConfig::desk();
    c.out_dir = (dir_ / "ablation_ms").string();
    return c;
  }

  const training::AblationReport& ms_ablation() {
    if (!ms_) ms_ = training::ablation_ms_vs_finest(train(), val(), pointers(syncers()), gen_config(), {1, 2, 3});
    return *ms_;
  }

 private:
  fs::path dir_;
  std::optional<std::vector<features::AvClip>> train_, test_, val_;
  std::vector<syncer::SyncerModel> syncers_;
  std::vector<std::uint64_t> checksums_;
  std::optional<training::AblationReport> ms_;
};

// 1 ------------------------------------------------------------------------

Outcome gradient_integrity(Workspace&) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto results = training::run_loss_checks(5, 0, 1e-4);
  const double secs = seconds_since(t0);
  Outcome o{secs < 120.0, ""};
  double worst = 0;
  for (const auto& r : results) {
    o.pass = o.pass && r.passed && r.instances >= 5;
    worst = std::max(worst, r.max_rel_error);
    if (!r.passed) o.detail += r.name + " failed (" + r.worst + "); ";
  }
  o.detail += std::to_string(results.size()) + " losses, worst rel err " + fmt(worst * 1e6, 2) + "e-6, " +
              fmt(secs, 1) + " s";
  return o;
}

// 2 ------------------------------------------------------------------------

double box_direct(const std::vector<double>& x, long t) {
  const long L = static_cast<long>(x.size());
  double s = 0;
  for (long tau = -3; tau <= 3; ++tau) s += x[static_cast<std::size_t>(std::clamp(2 * t + tau, 0L, L - 1))];
  return s / 7.0;
}

Outcome pyramid_suite(Workspace&) {
  bool ok = true;
  std::string why;
  auto fail = [&](const std::string& m) {
    if (ok) why = m;
    ok = false;
  };
  diff::NoGradScope ng;
  for (std::size_t T : {40u, 41u, 64u, 83u, 320u, 333u}) {
    const auto c = pyramid::build_pyramid(Tensor::full({T, 60}, -0.37), 4, 3, 5);
    for (std::size_t i = 0; i < 4; ++i) {
      if (c[i].dim(0) != T / (std::size_t{1} << i)) fail("length at T=" + std::to_string(T));
      for (double v : c[i].data())
        if (v != -0.37) fail("constant not exact at T=" + std::to_string(T));
    }
    diff::Rng rng(T);
    const auto x = Tensor::from({T, 3}, diff::normal_init(3 * T, 1.0, rng));
    const auto y = Tensor::from({T, 3}, diff::normal_init(3 * T, 1.0, rng));
    const auto px = pyramid::build_pyramid(x), py = pyramid::build_pyramid(y);
    const auto pz = pyramid::build_pyramid(diff::add(diff::scale(x, 1.7), diff::scale(y, -0.4)));
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < pz[i].size(); ++j)
        if (std::abs(pz[i].data()[j] - (1.7 * px[i].data()[j] - 0.4 * py[i].data()[j])) > 1e-12) fail("linearity");
    for (std::size_t i = 1; i < 4; ++i) {
      std::vector<double> prev(px[i - 1].dim(0));
      for (std::size_t t = 0; t < prev.size(); ++t) prev[t] = px[i - 1].at({t, 1});
      for (std::size_t t = 0; t < px[i].dim(0); ++t)
        if (std::abs(px[i].at({t, 1}) - box_direct(prev, static_cast<long>(t))) > 1e-12) fail("direct evaluation");
    }
  }
  for (std::size_t pos : {0u, 1u, 10u, 25u, 39u}) {
    std::vector<double> v(40, 0.0);
    v[pos] = 1.0;
    const auto p = pyramid::build_pyramid(Tensor::from({40, 1}, v));
    for (std::size_t t = 0; t < p[1].dim(0); ++t) {
      const double expect = box_direct(v, static_cast<long>(t));
      if (std::abs(p[1].at({t, 0}) - expect) > 1e-15) fail("impulse vs direct");
      const long d = 2 * static_cast<long>(t) - static_cast<long>(pos);
      if (pos >= 3 && pos <= 36 && std::abs(d) <= 3 && std::abs(p[1].at({t, 0}) - 1.0 / 7.0) > 1e-15)
        fail("impulse value");
    }
  }
  return {ok, ok ? "lengths, exact constants, linearity 1e-12, impulse 1/7 on 6 lengths" : why};
}

// 3 ------------------------------------------------------------------------

Outcome mask_weights(Workspace&) {
  generator::GeneratorConfig gc;
  gc.zero_init_output = false;
  generator::GeneratorModel g(gc, 5);
  diff::Rng rng(6);
  const std::size_t B = 3, T = 60;
  const auto x0 = Tensor::from({B, 60}, diff::normal_init(B * 60, 0.5, rng));
  const auto audio = Tensor::from({B, 4 * T, 26}, diff::normal_init(B * 4 * T * 26, 1.0, rng));
  generator::RolloutTrace trace;
  diff::NoGradScope ng;
  g.rollout(x0, audio, T, &trace);
  double worst = 0;
  for (const auto& w : trace.mask_weights)
    for (std::size_t r = 0; r < w.size() / generator::kBranches; ++r) {
      double s = 0;
      for (std::size_t i = 0; i < generator::kBranches; ++i) s += w.data()[r * generator::kBranches + i];
      worst = std::max(worst, std::abs(s - 1.0));
    }
  const bool sums = trace.mask_weights.size() == T - 1 && worst < 1e-6;

  std::vector<Tensor> v, w;
  for (std::size_t i = 0; i < generator::kBranches; ++i) {
    v.push_back(Tensor::from({B, 60}, diff::normal_init(B * 60, 1.0, rng)));
    w.push_back(Tensor::full({B, 10}, 0.83));
  }
  const auto merged = generator::merge_branches(v, w).velocity;
  bool mean_exact = true;
  for (std::size_t j = 0; j < merged.size(); ++j) {
    double m = 0;
    for (const auto& vi : v) m += vi.data()[j];
    m /= static_cast<double>(generator::kBranches);
    if (std::abs(merged.data()[j] - m) > 1e-15) mean_exact = false;
  }
  return {sums && mean_exact, std::to_string(trace.mask_weights.size()) + " steps, max |sum-1| " +
                                  fmt(worst * 1e15, 2) + "e-15, equal weights give mean: " +
                                  (mean_exact ? "yes" : "no")};
}

// 4 ------------------------------------------------------------------------

Outcome scale_selectivity(Workspace& ws) {
  const auto t0 = std::chrono::steady_clock::now();
  const double base = eval::random_baseline(15);
  auto trained = [&](double g_lip, double g_head) {
    auto c = syncer::SyncerTrainConfig::desk();
    c.seed = 1;
    return syncer::train_syncer_pyramid(corpus(48, 11, "train", g_lip, g_head), {}, c);
  };
  auto offsets = [&](const std::vector<syncer::SyncerModel>& ms, double g_lip, double g_head) {
    const auto test = corpus(60, 12, "test", g_lip, g_head);
    std::array<double, 4> o{};
    for (std::size_t l = 0; l < 4; ++l) o[l] = mean_abs_offset(ms[l], test);
    return o;
  };
  const auto both = offsets(ws.syncers(), 3.0, 1.0);
  const auto head = offsets(trained(0.0, 1.0), 0.0, 1.0);
  const auto zero = offsets(trained(0.0, 0.0), 0.0, 0.0);
  const bool a = both[0] < 2.0;
  const bool b = head[2] <= 0.5 * base && head[3] <= 0.5 * base && std::abs(head[0] - base) <= 0.15 * base;
  bool c = true;
  for (double v : zero) c = c && std::abs(v - base) <= 0.15 * base;
  const double secs = seconds_since(t0);
  auto row = [](const std::array<double, 4>& o) {
    return fmt(o[0], 2) + "/" + fmt(o[1], 2) + "/" + fmt(o[2], 2) + "/" + fmt(o[3], 2);
  };
  return {a && b && c && secs <= 1800.0, std::string("(a)") + (a ? "ok" : "FAIL") + " lip+head " + row(both) +
                                            "; (b)" + (b ? "ok" : "FAIL") + " head-only " + row(head) + "; (c)" +
                                            (c ? "ok" : "FAIL") + " zero " + row(zero) + "; baseline " +
                                            fmt(base, 2) + ", " + fmt(secs, 0) + " s"};
}

// 5 ------------------------------------------------------------------------

Outcome known_shift(Workspace& ws) {
  const auto& m = ws.syncers()[0];
  const auto& test = ws.test();
  std::vector<int> ok(test.size(), 0);
  parallel_for(test.size(), [&](std::size_t i) {
    bool all = true;
    for (long d : {-5L, -3L, 3L, 5L})
      all = all && std::abs(eval::av_offset(m, features::shift_audio(test[i], d)).offset - d) <= 1;
    ok[i] = all;
  });
  const auto n = static_cast<std::size_t>(std::count(ok.begin(), ok.end(), 1));
  return {10 * n >= 9 * test.size(),
          std::to_string(n) + "/" + std::to_string(test.size()) + " clips recover all four shifts within 1 frame"};
}

// 6 ------------------------------------------------------------------------

Outcome multi_scale_ablation(Workspace& ws) {
  ws.syncers();
  const auto t0 = std::chrono::steady_clock::now();
  const auto& rep = ws.ms_ablation();
  const double secs = seconds_since(t0);
  std::ofstream(ws.dir() / "ablation_ms.csv") << rep.to_csv();
  rep.export_curves((ws.dir() / "ablation_ms_curves").string());
  bool ok = secs <= 7200.0;
  std::string d;
  std::size_t seeds = 0;
  for (std::size_t i = 0; i + 1 < rep.runs.size(); i += 2) {
    const auto& ms = rep.runs[i].final;
    const auto& fine = rep.runs[i + 1].final;
    const bool win = ms.confidence[2] > fine.confidence[2] && ms.confidence[3] > fine.confidence[3];
    ok = ok && win;
    ++seeds;
    d += "seed " + std::to_string(rep.runs[i].seed) + " L3 " + fmt(ms.confidence[2]) + " vs " +
         fmt(fine.confidence[2]) + ", L4 " + fmt(ms.confidence[3]) + " vs " + fmt(fine.confidence[3]) +
         (win ? "" : " (lost)") + "; ";
  }
  ok = ok && seeds >= 3;
  return {ok, d + fmt(secs / 60.0, 1) + " min"};
}

// 7 ------------------------------------------------------------------------

Outcome rollout_generalization(Workspace& ws) {
  ws.ms_ablation();
  const auto dir = fs::path(ws.gen_config().out_dir) / "multi_scale_seed1";
  const auto cfg = training::TrainConfig::from_json(nlohmann::json::parse(std::ifstream(dir / "train_config.json")));
  generator::GeneratorModel g(cfg.generator, 0);
  diff::load_checkpoint(g.params(), (dir / "generator.avpc").string());

  // Per position channel: training range widened by half its width.
  std::array<double, 20> lo, hi;
  lo.fill(std::numeric_limits<double>::infinity());
  hi.fill(-std::numeric_limits<double>::infinity());
  for (const auto& c : ws.train())
    for (std::size_t t = 0; t < c.frames(); ++t)
      for (std::size_t k = 0; k < 10; ++k)
        for (std::size_t j = 0; j < 2; ++j) {
          const double v = c.keypoints(t, 6 * k + j);
          lo[2 * k + j] = std::min(lo[2 * k + j], v);
          hi[2 * k + j] = std::max(hi[2 * k + j], v);
        }
  for (std::size_t i = 0; i < 20; ++i) {
    const double w = hi[i] - lo[i];
    lo[i] -= 0.5 * w;
    hi[i] += 0.5 * w;
  }

  const std::size_t T = 3 * cfg.seq_len;
  const auto held = corpus(100, 13, "held", 3.0, 1.0, T);
  std::vector<int> good(held.size(), 0);
  parallel_for(held.size(), [&](std::size_t i) {
    diff::NoGradScope ng;
    const auto& c = held[i];
    const auto x0 = Tensor::from({60}, std::vector<double>(c.keypoints.row(0).begin(), c.keypoints.row(0).end()));
    const auto audio = Tensor::from({4 * T, 26}, c.audio.values());
    Tensor x;
    try {
      x = g.rollout(x0, audio, T);
    } catch (const generator::RolloutError&) {
      return;
    }
    bool ok = x.dim(0) == T;
    for (std::size_t t = 0; t < T && ok; ++t)
      for (std::size_t ch = 0; ch < 60 && ok; ++ch) {
        const double v = x.at({t, ch});
        if (!std::isfinite(v)) ok = false;
        if (ch % 6 < 2) {
          const std::size_t p = 2 * (ch / 6) + ch % 6;
          if (v < lo[p] || v > hi[p]) ok = false;
        }
      }
    good[i] = ok;
  });
  const auto n = static_cast<std::size_t>(std::count(good.begin(), good.end(), 1));
  return {n == held.size(), std::to_string(n) + "/100 rollouts of " + std::to_string(T) +
                                " frames finite and inside the widened training range"};
}

// 8 ------------------------------------------------------------------------

Outcome loss_assembly(Workspace& ws) {
  const auto ptrs = pointers(ws.syncers());
  auto cfg = training::TrainConfig::desk();
  cfg.batch = 4;
  cfg.iterations = 3;
  cfg.decay_iterations = 0;
  cfg.val_every = 0;
  training::Trainer t(ws.train(), ws.val(), ptrs, cfg);
  for (int i = 0; i < 3; ++i) t.step();
  double worst = 0;
  for (int rep = 0; rep < 3; ++rep) {
    const auto b = t.sample_batch();
    const auto x0 = diff::reshape(diff::slice(b.x, 1, 0, 1), {cfg.batch, 60});
    diff::NoGradScope ng;
    const auto fake = t.generator().rollout(x0, b.audio, cfg.seq_len);
    const auto g = t.generator_losses(fake, b);
    const double av = training::ms_av_loss(ptrs, fake, b.audio).total.item();
    const double gf = -diff::mean(discriminator::frame_scores_after_first(t.frame_critic(), fake)).item();
    const double gs = -diff::mean(t.sequence_critic().score(fake)).item();
    const double rec = training::rec_loss(fake, b.x).item();
    worst = std::max(worst, std::abs(g.total.item() - (8.0 * av + 0.1 * (gf + gs) + 1.0 * rec)));
  }
  const bool weights = cfg.lambda_av == 8.0 && cfg.lambda_adv == 0.1 && cfg.lambda_rec == 1.0;
  bool unchanged = true;
  for (std::size_t l = 0; l < 4; ++l)
    unchanged = unchanged && ws.syncers()[l].params().checksum() == ws.syncer_checksums()[l];
  return {worst <= 1e-12 && weights && unchanged,
          "max |total - weighted sum| " + fmt(worst * 1e15, 2) + "e-15; syncer checksums " +
              (unchanged ? "unchanged" : "CHANGED") + " after all generator training in this run"};
}

// 9 ------------------------------------------------------------------------

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

Outcome determinism(Workspace& ws) {
  set_num_threads(1);
  auto run = [&](const std::string& tag) {
    const auto dir = ws.dir() / ("determinism_" + tag);
    fs::remove_all(dir);
    auto c = syncer::SyncerTrainConfig::desk();
    c.max_steps = c.min_steps = 40;
    c.seed = 9;
    const auto train = corpus(12, 21, "det");
    const auto val = corpus(4, 22, "detval");
    auto ms = syncer::train_syncer_pyramid(train, {}, c);
    auto g = training::TrainConfig::desk();
    g.batch = 4;
    g.iterations = 6;
    g.decay_iterations = 2;
    g.val_every = 4;
    g.val_clips = 2;
    g.seed = 9;
    g.out_dir = dir.string();
    training::Trainer t(train, val, pointers(ms), g);
    t.run();
    std::ofstream(dir / "report.json") << eval::evaluate_corpus(pointers(ms), val).to_json();
    return std::pair{slurp(dir / "train_log.jsonl"), slurp(dir / "report.json")};
  };
  const auto a = run("a"), b = run("b");
  const bool ok = !a.first.empty() && !a.second.empty() && a == b;
  return {ok, "training log " + std::to_string(a.first.size()) + " bytes, report " +
                  std::to_string(a.second.size()) + " bytes, " + (ok ? "identical" : "DIFFERENT") + " across runs"};
}

// 10 -----------------------------------------------------------------------

Outcome loss_weight_ablation(Workspace& ws) {
  auto cfg = training::TrainConfig::desk();
  cfg.batch = 4;
  cfg.iterations = 8;
  cfg.decay_iterations = 2;
  cfg.val_every = 5;
  cfg.val_clips = 2;
  cfg.out_dir = (ws.dir() / "ablation_weights").string();
  const auto rep = training::ablation_loss_weights(ws.train(), ws.val(), pointers(ws.syncers()), cfg);
  const auto csv = rep.to_csv();
  std::ofstream(ws.dir() / "ablation_weights.csv") << csv;
  std::ofstream(ws.dir() / "ablation_weights.json") << rep.to_json().dump(2);
  bool ok = rep.runs.size() == 5;
  const auto grid = training::loss_weight_grid();
  for (std::size_t i = 0; ok && i < rep.runs.size(); ++i) {
    const auto& r = rep.runs[i];
    ok = r.lambda_rec == grid[i].first && r.lambda_adv == grid[i].second && r.log.size() == cfg.total_iterations();
    for (double v : r.final.confidence) ok = ok && std::isfinite(v);
    ok = ok && std::isfinite(r.final.rec);
  }
  ok = ok && static_cast<std::size_t>(std::count(csv.begin(), csv.end(), '\n')) == 6;
  return {ok, std::to_string(rep.runs.size()) + " configurations reported in " +
                  (ws.dir() / "ablation_weights.csv").string()};
}

}  // namespace

int main(int argc, char** argv) {
  fs::path work = fs::temp_directory_path() / "avsync_acceptance";
  std::vector<int> selected;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--work" && i + 1 < argc) work = argv[++i];
    else selected.push_back(std::stoi(a));
  }
  const std::map<int, std::pair<std::string, std::function<Outcome(Workspace&)>>> criteria{
      {1, {"gradient integrity", gradient_integrity}},
      {2, {"pyramid suite", pyramid_suite}},
      {3, {"branch mask weights", mask_weights}},
      {4, {"syncer scale selectivity", scale_selectivity}},
      {5, {"known-shift detection", known_shift}},
      {6, {"multi-scale ablation", multi_scale_ablation}},
      {7, {"rollout generalization", rollout_generalization}},
      {8, {"loss assembly exactness", loss_assembly}},
      {9, {"determinism", determinism}},
      {10, {"loss-weight ablation", loss_weight_ablation}},
  };
  if (selected.empty())
    for (const auto& [n, c] : criteria) selected.push_back(n);

  Workspace ws(work);
  bool all = true;
  for (int n : selected) {
    const auto it = criteria.find(n);
    if (it == criteria.end()) {
      std::fprintf(stderr, "unknown criterion %d\n", n);
      return 2;
    }
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = it->second.second(ws);
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    all = all && o.pass;
    std::printf("%s %2d %s: %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", n, it->second.first.c_str(), o.detail.c_str(),
                seconds_since(t0));
    std::fflush(stdout);
  }
  return all ? 0 : 1;
}
