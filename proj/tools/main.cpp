#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "avsync/diffnum/checkpoint.hpp"
#include "avsync/eval/eval.hpp"
#include "avsync/features/corpus.hpp"
#include "avsync/parallel.hpp"
#include "avsync/training/loss_checks.hpp"
#include "config.hpp"

namespace fs = std::filesystem;
using namespace avsync;
using avsync::tools::json;
using avsync::tools::ordered_json;

namespace {

// Thrown for bad inputs; maps to exit code 1.
struct UsageError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct Global {
  std::uint64_t seed = 1;
  std::size_t threads = 1;
  std::string preset = "desk";
  std::string out = "out";
  std::string config;
};

// Overrides `field` from a flag only when the flag was given.
template <class T>
void flag(const CLI::Option* opt, const T& value, T& field) {
  if (opt->count() > 0) field = value;
}

ordered_json header(const std::string& command, const Global& g) {
  ordered_json j;
  j["command"] = command;
  j["seed"] = g.seed;
  j["threads"] = g.threads;
  j["preset"] = g.preset;
  j["out"] = g.out;
  return j;
}

std::vector<features::AvClip> load(const std::string& manifest) {
  auto r = features::load_clips(manifest);
  for (const auto& w : r.warnings) std::cerr << "warning: " << w << "\n";
  for (const auto& w : r.rejected) std::cerr << "rejected: " << w << "\n";
  if (r.clips.empty()) throw features::DataError("no valid clips in " + manifest);
  return std::move(r.clips);
}

std::vector<syncer::SyncerModel> load_syncers(const std::string& dir) {
  std::vector<syncer::SyncerModel> out;
  for (std::size_t l = 1; l <= 4; ++l) {
    const auto p = fs::path(dir) / ("syncer_l" + std::to_string(l) + ".avpc");
    if (!fs::exists(p)) throw UsageError("missing syncer checkpoint " + p.string());
    out.push_back(syncer::load_syncer(p.string()));
  }
  return out;
}

std::vector<const syncer::SyncerModel*> pointers(const std::vector<syncer::SyncerModel>& ms) {
  std::vector<const syncer::SyncerModel*> p;
  for (const auto& m : ms) p.push_back(&m);
  return p;
}

// Every fifth clip goes to validation when no split is given.
void split(std::vector<features::AvClip>& train, std::vector<features::AvClip>& val) {
  std::vector<features::AvClip> t;
  for (std::size_t i = 0; i < train.size(); ++i) (i % 5 == 4 ? val : t).push_back(std::move(train[i]));
  train = std::move(t);
  if (train.empty() || val.empty()) throw features::DataError("corpus too small to split off validation clips");
}

std::string out_file(const Global& g, const std::string& name) { return (fs::path(g.out) / name).string(); }

// ---------------------------------------------------------------------------

struct SynthArgs {
  std::string spec;
  std::size_t clips = 32, frames = 320;
  double g_lip = 3, g_head = 1, noise = 0.15;
  std::string prefix = "synth";
  CLI::Option *o_clips, *o_frames, *o_glip, *o_ghead, *o_noise, *o_prefix;
};

int run_synth(const Global& g, const SynthArgs& a) {
  auto spec = tools::synth_from_json(tools::read_json(a.spec.empty() ? g.config : a.spec));
  flag(a.o_clips, a.clips, spec.n_clips);
  flag(a.o_frames, a.frames, spec.frames);
  flag(a.o_glip, a.g_lip, spec.g_lip);
  flag(a.o_ghead, a.g_head, spec.g_head);
  flag(a.o_noise, a.noise, spec.noise);
  flag(a.o_prefix, a.prefix, spec.id_prefix);
  spec.seed = g.seed;
  synthgen::check(spec);
  const auto clips = synthgen::generate(spec);
  features::write_corpus(out_file(g, "corpus.json"), clips);
  auto cfg = header("synth", g);
  cfg["spec"] = tools::to_json(spec);
  tools::write_json(out_file(g, "synth_config.json"), cfg);
  std::cout << "wrote " << clips.size() << " clips to " << out_file(g, "corpus.json") << "\n";
  return 0;
}

struct FeaturesArgs {
  std::vector<std::string> wavs, keypoints, ids;
  bool no_normalize = false;
};

int run_features(const Global& g, const FeaturesArgs& a) {
  if (a.wavs.size() != a.keypoints.size()) throw UsageError("--wav and --keypoints must pair up");
  if (!a.ids.empty() && a.ids.size() != a.wavs.size()) throw UsageError("--id count must match --wav count");
  features::MfccOptions opt;
  opt.normalize = !a.no_normalize;
  std::vector<features::AvClip> clips;
  for (std::size_t i = 0; i < a.wavs.size(); ++i) {
    const auto rows = features::read_matrix_text(a.keypoints[i]);
    std::vector<double> v;
    for (const auto& r : rows) {
      if (r.size() != features::kKeypointDim) {
        throw features::DataError(a.keypoints[i] + ": expected 60 values per row, got " + std::to_string(r.size()));
      }
      v.insert(v.end(), r.begin(), r.end());
    }
    features::AvClip c;
    c.clip_id = a.ids.empty() ? fs::path(a.wavs[i]).stem().string() : a.ids[i];
    c.identity_id = c.clip_id;
    c.keypoints = features::KeypointSequence(rows.size(), std::move(v));
    c.audio = features::align(features::mfcc(features::read_wav(a.wavs[i]), opt), rows.size());
    const auto problems = features::validate(c);
    if (!problems.empty()) throw features::DataError(c.clip_id + ": " + problems.front());
    clips.push_back(std::move(c));
  }
  features::write_corpus(out_file(g, "corpus.json"), clips);
  auto cfg = header("features", g);
  cfg["wav"] = a.wavs;
  cfg["keypoints"] = a.keypoints;
  cfg["normalize"] = opt.normalize;
  tools::write_json(out_file(g, "features_config.json"), cfg);
  std::cout << "wrote " << clips.size() << " clips to " << out_file(g, "corpus.json") << "\n";
  return 0;
}

struct SyncerArgs {
  std::string corpus, val, levels = "1,2,3,4", objective = "infonce";
  std::size_t steps = 600, batch = 32;
  double lr = 1e-3;
  bool positions_only = false;
  CLI::Option *o_steps, *o_batch, *o_lr, *o_objective, *o_positions;
};

int run_train_syncers(const Global& g, const SyncerArgs& a) {
  auto base = g.preset == "paper" ? syncer::SyncerTrainConfig::paper() : syncer::SyncerTrainConfig::desk();
  auto c = tools::syncer_from_json(tools::read_json(g.config), base);
  flag(a.o_steps, a.steps, c.max_steps);
  if (a.o_steps->count() && c.min_steps > c.max_steps) c.min_steps = c.max_steps;
  flag(a.o_batch, a.batch, c.batch);
  flag(a.o_lr, a.lr, c.learning_rate);
  if (a.o_objective->count()) c = tools::syncer_from_json(json{{"objective", a.objective}}, c);
  flag(a.o_positions, a.positions_only, c.model.positions_only);
  c.seed = g.seed;
  c.checkpoint_dir = g.out;
  const auto levels = tools::parse_levels(a.levels);
  auto train = load(a.corpus);
  std::vector<features::AvClip> val;
  if (!a.val.empty()) val = load(a.val);
  std::vector<syncer::SyncerTrainReport> reports;
  syncer::train_syncer_pyramid(train, val, c, levels, &reports);
  ordered_json rep = ordered_json::array();
  for (const auto& r : reports) {
    ordered_json o{{"level", r.level}, {"steps", r.steps}, {"plateaued", r.plateaued},
                   {"final_train_loss", r.final_train_loss}};
    o["validation"] = ordered_json::array();
    for (const auto& [step, loss] : r.validation) o["validation"].push_back({step, loss});
    o["warnings"] = r.warnings;
    rep.push_back(std::move(o));
    std::cout << "level " << r.level << ": " << r.steps << " steps, train loss " << r.final_train_loss << "\n";
  }
  tools::write_json(out_file(g, "syncer_report.json"), rep);
  auto cfg = header("train-syncers", g);
  cfg["corpus"] = a.corpus;
  cfg["val"] = a.val;
  cfg["levels"] = levels;
  cfg["train"] = tools::to_json(c);
  tools::write_json(out_file(g, "train_syncers_config.json"), cfg);
  return 0;
}

struct GenArgs {
  std::string corpus, val, syncers, av_levels = "1,2,3,4", kind = "ms", seeds = "1,2,3";
  std::size_t iterations = 0, decay = 0, batch = 16, val_every = 0, val_clips = 8;
  double lr_gen = 0, lr_disc = 0, lambda_av = 8, lambda_adv = 0.1, lambda_rec = 1;
  CLI::Option *o_iterations, *o_decay, *o_batch, *o_val_every, *o_val_clips, *o_lr_gen, *o_lr_disc, *o_lambda_av,
      *o_lambda_adv, *o_lambda_rec, *o_av_levels;
};

training::TrainConfig gen_config(const Global& g, const GenArgs& a) {
  auto base = g.preset == "paper" ? training::TrainConfig::paper() : training::TrainConfig::desk();
  auto c = training::TrainConfig::from_json(tools::read_json(g.config), base);
  flag(a.o_iterations, a.iterations, c.iterations);
  flag(a.o_decay, a.decay, c.decay_iterations);
  flag(a.o_batch, a.batch, c.batch);
  flag(a.o_val_every, a.val_every, c.val_every);
  flag(a.o_val_clips, a.val_clips, c.val_clips);
  flag(a.o_lr_gen, a.lr_gen, c.lr_gen);
  flag(a.o_lr_disc, a.lr_disc, c.lr_disc);
  flag(a.o_lambda_av, a.lambda_av, c.lambda_av);
  flag(a.o_lambda_adv, a.lambda_adv, c.lambda_adv);
  flag(a.o_lambda_rec, a.lambda_rec, c.lambda_rec);
  if (a.o_av_levels->count()) c.av_levels = tools::parse_levels(a.av_levels);
  c.seed = g.seed;
  c.out_dir = g.out;
  c.check();
  return c;
}

void load_split(const GenArgs& a, std::vector<features::AvClip>& train, std::vector<features::AvClip>& val) {
  train = load(a.corpus);
  if (!a.val.empty()) val = load(a.val);
  else split(train, val);
}

int run_train_gen(const Global& g, const GenArgs& a) {
  const auto c = gen_config(g, a);
  std::vector<features::AvClip> train, val;
  load_split(a, train, val);
  const auto ms = load_syncers(a.syncers);
  auto cfg = header("train-gen", g);
  cfg["corpus"] = a.corpus;
  cfg["val"] = a.val;
  cfg["syncers"] = a.syncers;
  cfg["train"] = c.to_json();
  tools::write_json(out_file(g, "train_gen_config.json"), cfg);
  training::Trainer t(train, val, pointers(ms), c);
  t.run([](const training::LogRecord& r) {
    if (r.val) {
      std::cout << "iter " << r.iter << " L_rec " << r.l_rec << " val_conf";
      for (double v : r.val->confidence) std::cout << " " << v;
      std::cout << "\n";
    }
  });
  std::vector<eval::ConfidencePoint> pts;
  for (const auto& r : t.log())
    if (r.val)
      for (std::size_t l = 0; l < 4; ++l) pts.push_back({r.iter, l + 1, r.val->confidence[l]});
  eval::plot_export(pts, g.out);
  return 0;
}

generator::GeneratorModel load_generator(const std::string& dir) {
  const auto cfg = training::TrainConfig::from_json(tools::read_json((fs::path(dir) / "train_config.json").string()));
  generator::GeneratorModel m(cfg.generator, 0);
  diff::load_checkpoint(m.params(), (fs::path(dir) / "generator.avpc").string());
  return m;
}

struct RolloutArgs {
  std::string generator, corpus;
  std::size_t frames = 0;
};

int run_rollout(const Global& g, const RolloutArgs& a) {
  const auto gen = load_generator(a.generator);
  const auto clips = load(a.corpus);
  std::vector<features::AvClip> out(clips.size());
  std::vector<std::size_t> clamped(clips.size(), 0);
  parallel_for(clips.size(), [&](std::size_t i) {
    diff::NoGradScope ng;
    const auto& c = clips[i];
    const std::size_t T = a.frames ? a.frames : c.frames();
    if (T > c.frames()) throw features::DataError(c.clip_id + ": fewer frames than --frames");
    const auto& av = c.audio.values();
    std::vector<double> audio(av.begin(), av.begin() + static_cast<long>(4 * T * features::kMfccDim));
    const auto x0 = diff::Tensor::from({features::kKeypointDim},
                                       std::vector<double>(c.keypoints.row(0).begin(), c.keypoints.row(0).end()));
    const auto roll = gen.rollout(x0, diff::Tensor::from({4 * T, features::kMfccDim}, audio), T);
    out[i].clip_id = c.clip_id;
    out[i].identity_id = c.identity_id;
    out[i].keypoints = features::KeypointSequence::from_tensor(roll);
    // Position channels are clamped to the range the corpus loader accepts.
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t k = 0; k < features::kKeypointDim; k += 6)
        for (std::size_t j = k; j < k + 2; ++j) {
          double& v = out[i].keypoints(t, j);
          if (std::abs(v) > 1.5) {
            v = std::clamp(v, -1.5, 1.5);
            ++clamped[i];
          }
        }
    out[i].audio = features::AudioFeatSequence(4 * T, std::move(audio));
  });
  for (std::size_t i = 0; i < out.size(); ++i)
    if (clamped[i]) std::cerr << "warning: " << out[i].clip_id << ": clamped " << clamped[i] << " positions to [-1.5, 1.5]\n";
  features::write_corpus(out_file(g, "generated.json"), out);
  auto cfg = header("rollout", g);
  cfg["generator"] = a.generator;
  cfg["corpus"] = a.corpus;
  cfg["frames"] = a.frames;
  tools::write_json(out_file(g, "rollout_config.json"), cfg);
  std::cout << "wrote " << out.size() << " generated clips to " << out_file(g, "generated.json") << "\n";
  return 0;
}

struct EvalArgs {
  std::string syncers, corpus, generated;
  std::size_t range = eval::kDefaultRange;
};

int run_eval(const Global& g, const EvalArgs& a) {
  const auto ms = load_syncers(a.syncers);
  const auto gt = load(a.corpus);
  std::vector<features::AvClip> gen;
  if (!a.generated.empty()) gen = load(a.generated);
  const auto rep = eval::evaluate_corpus(pointers(ms), gt, a.range, a.generated.empty() ? nullptr : &gen);
  std::ofstream(out_file(g, "report.json")) << rep.to_json() << "\n";
  std::ofstream(out_file(g, "report.csv")) << rep.to_csv();
  auto cfg = header("eval", g);
  cfg["syncers"] = a.syncers;
  cfg["corpus"] = a.corpus;
  cfg["generated"] = a.generated;
  cfg["range"] = a.range;
  tools::write_json(out_file(g, "eval_config.json"), cfg);
  std::cout << rep.to_csv();
  return 0;
}

int run_ablate(const Global& g, const GenArgs& a) {
  if (a.kind != "ms" && a.kind != "weights") throw UsageError("--kind must be ms or weights");
  auto c = gen_config(g, a);
  c.checkpoint_every = 0;
  std::vector<features::AvClip> train, val;
  load_split(a, train, val);
  const auto ms = load_syncers(a.syncers);
  auto cfg = header("ablate", g);
  cfg["kind"] = a.kind;
  cfg["train"] = c.to_json();
  training::AblationReport rep;
  if (a.kind == "ms") {
    std::vector<std::uint64_t> seeds;
    std::stringstream ss(a.seeds);
    std::string item;
    while (std::getline(ss, item, ',')) seeds.push_back(std::stoull(item));
    if (seeds.empty()) throw UsageError("--seeds is empty");
    cfg["seeds"] = seeds;
    tools::write_json(out_file(g, "ablate_config.json"), cfg);
    rep = training::ablation_ms_vs_finest(train, val, pointers(ms), c, seeds);
  } else {
    tools::write_json(out_file(g, "ablate_config.json"), cfg);
    rep = training::ablation_loss_weights(train, val, pointers(ms), c);
  }
  tools::write_json(out_file(g, "ablation.json"), rep.to_json());
  std::ofstream(out_file(g, "ablation.csv")) << rep.to_csv();
  rep.export_curves((fs::path(g.out) / "curves").string());
  std::cout << rep.to_csv();
  return 0;
}

struct GradArgs {
  std::size_t instances = 5;
  double tolerance = 1e-4;
};

int run_gradcheck(const Global& g, const GradArgs& a) {
  const auto results = training::run_loss_checks(a.instances, g.seed, a.tolerance);
  ordered_json j = ordered_json::array();
  bool ok = true;
  for (const auto& r : results) {
    std::cout << (r.passed ? "PASS " : "FAIL ") << r.name << " max_rel_error " << r.max_rel_error << " ("
              << r.instances << " instances, " << r.entries << " probes)\n";
    j.push_back({{"loss", r.name}, {"instances", r.instances}, {"entries", r.entries},
                 {"max_rel_error", r.max_rel_error}, {"worst", r.worst}, {"passed", r.passed}});
    ok = ok && r.passed;
  }
  tools::write_json(out_file(g, "gradcheck.json"), j);
  auto cfg = header("gradcheck", g);
  cfg["instances"] = a.instances;
  cfg["tolerance"] = a.tolerance;
  tools::write_json(out_file(g, "gradcheck_config.json"), cfg);
  return ok ? 0 : 1;
}

void report_error(const std::string& type, const std::string& message) {
  ordered_json e;
  e["error"] = {{"type", type}, {"message", message}};
  std::cerr << e.dump() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-scale audio-visual synchrony toolkit", "avsync"};
  app.require_subcommand(1);
  app.fallthrough();
  Global g;
  app.add_option("--seed", g.seed, "Seed for every random draw")->capture_default_str();
  app.add_option("--threads", g.threads, "Worker threads (1 = bit-exact)")->capture_default_str()->check(
      CLI::PositiveNumber);
  app.add_option("--preset", g.preset, "Model and schedule preset")->check(CLI::IsMember({"desk", "paper"}))
      ->capture_default_str();
  app.add_option("--out", g.out, "Output directory")->capture_default_str();
  app.add_option("--config", g.config, "JSON config; flags override its values")->check(CLI::ExistingFile);

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic coupled corpus");
  synth->add_option("--spec", sa.spec, "Synth spec JSON")->check(CLI::ExistingFile);
  sa.o_clips = synth->add_option("--clips", sa.clips, "Number of clips");
  sa.o_frames = synth->add_option("--frames", sa.frames, "Video frames per clip");
  sa.o_glip = synth->add_option("--g-lip", sa.g_lip, "Lip coupling gain");
  sa.o_ghead = synth->add_option("--g-head", sa.g_head, "Head coupling gain");
  sa.o_noise = synth->add_option("--noise", sa.noise, "Noise floor sigma");
  sa.o_prefix = synth->add_option("--prefix", sa.prefix, "Clip id prefix");

  FeaturesArgs fa;
  auto* feats = app.add_subcommand("features", "Build a corpus from WAV files and keypoint tracks");
  feats->add_option("--wav", fa.wavs, "16 kHz mono PCM16 WAV (repeatable)")->required()->check(CLI::ExistingFile);
  feats->add_option("--keypoints", fa.keypoints, "Keypoint text file, T rows x 60 (repeatable)")
      ->required()
      ->check(CLI::ExistingFile);
  feats->add_option("--id", fa.ids, "Clip ids (default: WAV stem)");
  feats->add_flag("--no-normalize", fa.no_normalize, "Skip per-track MFCC normalisation");

  SyncerArgs ya;
  auto* tsync = app.add_subcommand("train-syncers", "Train the per-level syncers");
  tsync->add_option("--corpus", ya.corpus, "Training corpus manifest")->required()->check(CLI::ExistingFile);
  tsync->add_option("--val", ya.val, "Validation corpus manifest")->check(CLI::ExistingFile);
  tsync->add_option("--levels", ya.levels, "Comma-separated levels")->capture_default_str();
  ya.o_steps = tsync->add_option("--steps", ya.steps, "Maximum optimizer steps per level");
  ya.o_batch = tsync->add_option("--batch", ya.batch, "Anchors per batch");
  ya.o_lr = tsync->add_option("--lr", ya.lr, "Adam learning rate");
  ya.o_objective = tsync->add_option("--objective", ya.objective, "infonce or triplet")
                       ->check(CLI::IsMember({"infonce", "triplet"}));
  ya.o_positions = tsync->add_flag("--positions-only", ya.positions_only, "Mask Jacobian channels");

  GenArgs ga, aa;
  auto add_gen = [](CLI::App* c, GenArgs& ga) {
    c->add_option("--corpus", ga.corpus, "Training corpus manifest")->required()->check(CLI::ExistingFile);
    c->add_option("--val", ga.val, "Validation corpus manifest")->check(CLI::ExistingFile);
    c->add_option("--syncers", ga.syncers, "Directory with syncer_l1..4.avpc")->required()->check(
        CLI::ExistingDirectory);
    ga.o_iterations = c->add_option("--iterations", ga.iterations, "Iterations at the base rate");
    ga.o_decay = c->add_option("--decay", ga.decay, "Iterations at 0.1x rate");
    ga.o_batch = c->add_option("--batch", ga.batch, "Sequences per batch");
    ga.o_val_every = c->add_option("--val-every", ga.val_every, "Validation period (0 = off)");
    ga.o_val_clips = c->add_option("--val-clips", ga.val_clips, "Validation clips");
    ga.o_lr_gen = c->add_option("--lr-gen", ga.lr_gen, "Generator learning rate");
    ga.o_lr_disc = c->add_option("--lr-disc", ga.lr_disc, "Critic learning rate");
    ga.o_lambda_av = c->add_option("--lambda-av", ga.lambda_av, "Weight of the AV loss");
    ga.o_lambda_adv = c->add_option("--lambda-adv", ga.lambda_adv, "Weight of the adversarial losses");
    ga.o_lambda_rec = c->add_option("--lambda-rec", ga.lambda_rec, "Weight of the reconstruction loss");
    ga.o_av_levels = c->add_option("--av-levels", ga.av_levels, "Levels in the AV loss");
  };
  auto* tgen = app.add_subcommand("train-gen", "Train the keypoint generator against frozen syncers");
  add_gen(tgen, ga);
  auto* ablate = app.add_subcommand("ablate", "Multi-scale or loss-weight ablation");
  add_gen(ablate, aa);
  ablate->add_option("--kind", aa.kind, "ms (multi-scale vs finest) or weights")->check(
      CLI::IsMember({"ms", "weights"}));
  ablate->add_option("--seeds", aa.seeds, "Comma-separated seeds for --kind ms")->capture_default_str();

  RolloutArgs ra;
  auto* roll = app.add_subcommand("rollout", "Generate keypoints from audio with a trained generator");
  roll->add_option("--generator", ra.generator, "Directory with generator.avpc and train_config.json")
      ->required()
      ->check(CLI::ExistingDirectory);
  roll->add_option("--corpus", ra.corpus, "Corpus supplying first frames and audio")->required()->check(
      CLI::ExistingFile);
  roll->add_option("--frames", ra.frames, "Frames to generate (default: clip length)");

  EvalArgs ea;
  auto* ev = app.add_subcommand("eval", "Multi-scale offset and confidence report");
  ev->add_option("--syncers", ea.syncers, "Directory with syncer_l1..4.avpc")->required()->check(
      CLI::ExistingDirectory);
  ev->add_option("--corpus", ea.corpus, "Ground-truth corpus manifest")->required()->check(CLI::ExistingFile);
  ev->add_option("--generated", ea.generated, "Generated corpus manifest")->check(CLI::ExistingFile);
  ev->add_option("--range", ea.range, "Offset search range in frames")->capture_default_str();

  GradArgs gra;
  auto* grad = app.add_subcommand("gradcheck", "Finite-difference check of every loss");
  grad->add_option("--instances", gra.instances, "Random instances per loss")->capture_default_str();
  grad->add_option("--tolerance", gra.tolerance, "Maximum relative error")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << app.help() << "\n";
    report_error("usage", e.what());
    return 2;
  }

  try {
    set_num_threads(g.threads);
    fs::create_directories(g.out);
    if (synth->parsed()) return run_synth(g, sa);
    if (feats->parsed()) return run_features(g, fa);
    if (tsync->parsed()) return run_train_syncers(g, ya);
    if (tgen->parsed()) return run_train_gen(g, ga);
    if (ablate->parsed()) return run_ablate(g, aa);
    if (roll->parsed()) return run_rollout(g, ra);
    if (ev->parsed()) return run_eval(g, ea);
    if (grad->parsed()) return run_gradcheck(g, gra);
  } catch (const features::DataError& e) {
    report_error("data", e.what());
    return 1;
  } catch (const training::TrainingError& e) {
    report_error("training:" + e.component(), e.what());
    return 1;
  } catch (const std::exception& e) {
    report_error("validation", e.what());
    return 1;
  }
  return 2;
}
