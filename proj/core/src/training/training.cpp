#include "avsync/training/training.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "avsync/diffnum/checkpoint.hpp"
#include "avsync/diffnum/ops.hpp"
#include "avsync/eval/eval.hpp"
#include "avsync/parallel.hpp"
#include "avsync/pyramid/pyramid.hpp"

namespace avsync::training {

namespace F = features;
namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Losses

AvLoss ms_av_loss(const std::vector<SegmentScorer>& scorers, const Tensor& x, const Tensor& audio,
                  const std::vector<std::size_t>& levels) {
  if (scorers.size() != pyramid::kLevels) throw std::invalid_argument("ms_av_loss: need one scorer per level");
  if (x.rank() != 3 || x.dim(2) != F::kKeypointDim) {
    throw diff::ShapeError("ms_av_loss: keypoints must be [B, T, 60], got " + diff::to_string(x.shape()));
  }
  if (audio.rank() != 3 || audio.dim(0) != x.dim(0) || audio.dim(1) != F::kAudioPerVideo * x.dim(1) ||
      audio.dim(2) != F::kMfccDim) {
    throw diff::ShapeError("ms_av_loss: audio must be [B, 4T, 26], got " + diff::to_string(audio.shape()));
  }
  for (std::size_t l : levels)
    if (l < 1 || l > pyramid::kLevels) throw std::invalid_argument("ms_av_loss: level out of range");

  const auto kp = pyramid::build_pyramid(x, pyramid::kLevels, pyramid::kHalfWidth, F::kVideoSegment);
  std::vector<Tensor> au;
  {
    diff::NoGradScope ng;
    au = pyramid::build_pyramid(audio.detach(), pyramid::kLevels, pyramid::kHalfWidth, F::kAudioSegment);
  }
  AvLoss out;
  out.total = Tensor::scalar(0.0);
  for (std::size_t i = 0; i < pyramid::kLevels; ++i) {
    const bool used = std::find(levels.begin(), levels.end(), i + 1) != levels.end();
    std::optional<diff::NoGradScope> ng;
    if (!used) ng.emplace();
    const auto centers = pyramid::segment_centers(kp[i].dim(1), 1, true);
    const Tensor s = scorers[i](pyramid::audio_windows(au[i], centers), pyramid::keypoint_windows(kp[i], centers));
    const Tensor term = diff::neg(diff::mean(s));
    out.per_level[i] = term.item();
    if (used) out.total = diff::add(out.total, term);
  }
  return out;
}

AvLoss ms_av_loss(const std::vector<const syncer::SyncerModel*>& syncers, const Tensor& x, const Tensor& audio,
                  const std::vector<std::size_t>& levels) {
  if (syncers.size() != pyramid::kLevels) throw std::invalid_argument("ms_av_loss: need four syncers");
  std::vector<SegmentScorer> scorers;
  for (std::size_t i = 0; i < syncers.size(); ++i) {
    const auto* s = syncers[i];
    if (!s->frozen()) {
      throw std::logic_error("ms_av_loss: level " + std::to_string(i + 1) + " syncer is not frozen");
    }
    if (s->config().level != i + 1) {
      throw std::invalid_argument("ms_av_loss: syncer " + std::to_string(i) + " was trained for level " +
                                  std::to_string(s->config().level));
    }
    scorers.push_back([s](const Tensor& a, const Tensor& k) { return s->score(a, k); });
  }
  return ms_av_loss(scorers, x, audio, levels);
}

Tensor rec_loss(const Tensor& x_gen, const Tensor& x_gt) {
  if (x_gen.shape() != x_gt.shape()) {
    throw diff::ShapeError("rec_loss: shapes differ: " + diff::to_string(x_gen.shape()) + " vs " +
                           diff::to_string(x_gt.shape()));
  }
  const double B = x_gen.rank() == 3 ? static_cast<double>(x_gen.dim(0)) : 1.0;
  return diff::scale(diff::sum(diff::square(diff::sub(x_gen, x_gt))), 1.0 / B);
}

Tensor weighted_total(const TrainConfig& c, const Tensor& av, const Tensor& gf, const Tensor& gs, const Tensor& rec) {
  return diff::add(diff::add(diff::scale(av, c.lambda_av), diff::scale(diff::add(gf, gs), c.lambda_adv)),
                   diff::scale(rec, c.lambda_rec));
}

// ---------------------------------------------------------------------------
// Config

TrainConfig TrainConfig::desk() {
  TrainConfig c;
  c.lr_gen = 2e-4;
  c.lr_disc = 1e-4;
  c.iterations = 400;
  c.decay_iterations = 50;
  c.val_every = 50;
  c.val_clips = 8;
  c.generator = generator::GeneratorConfig::desk();
  c.discriminator = discriminator::DiscriminatorConfig::desk();
  return c;
}

TrainConfig TrainConfig::paper() {
  TrainConfig c;
  c.val_every = 1000;
  c.val_clips = 32;
  c.checkpoint_every = 5000;
  c.generator = generator::GeneratorConfig::paper();
  c.discriminator = discriminator::DiscriminatorConfig::paper();
  return c;
}

void TrainConfig::check() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("train config: " + m); };
  if (lambda_av < 0 || lambda_adv < 0 || lambda_rec < 0) fail("loss weights must be >= 0");
  if (!(lr_gen > 0) || !(lr_disc > 0)) fail("learning rates must be > 0");
  if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1) fail("betas must lie in [0, 1)");
  if (seq_len < pyramid::min_frames()) fail("seq_len must be at least " + std::to_string(pyramid::min_frames()));
  if (batch == 0) fail("batch must be positive");
  for (std::size_t l : av_levels)
    if (l < 1 || l > pyramid::kLevels) fail("av_levels entries must lie in 1..4");
  if (val_every > 0 && val_frames < eval::min_frames_for_offset(pyramid::kLevels, val_range)) {
    fail("val_frames must be at least " + std::to_string(eval::min_frames_for_offset(pyramid::kLevels, val_range)) +
         " for range " + std::to_string(val_range));
  }
}

ordered_json TrainConfig::to_json() const {
  ordered_json j;
  j["lambda_av"] = lambda_av;
  j["lambda_adv"] = lambda_adv;
  j["lambda_rec"] = lambda_rec;
  j["lr_gen"] = lr_gen;
  j["lr_disc"] = lr_disc;
  j["beta1"] = beta1;
  j["beta2"] = beta2;
  j["seq_len"] = seq_len;
  j["batch"] = batch;
  j["iterations"] = iterations;
  j["decay_iterations"] = decay_iterations;
  j["av_levels"] = av_levels;
  j["seed"] = seed;
  j["val_every"] = val_every;
  j["val_clips"] = val_clips;
  j["val_frames"] = val_frames;
  j["val_range"] = val_range;
  j["checkpoint_every"] = checkpoint_every;
  j["out_dir"] = out_dir;
  j["generator"] = {{"dim", generator.dim},         {"layers", generator.layers},
                    {"heads", generator.heads},     {"ff_mult", generator.ff_mult},
                    {"context", generator.context}, {"zero_init_output", generator.zero_init_output}};
  j["discriminator"] = {{"dim", discriminator.dim}, {"windows", discriminator.windows}};
  return j;
}

TrainConfig TrainConfig::from_json(const json& j, TrainConfig c) {
  auto get = [&j](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  get("lambda_av", c.lambda_av);
  get("lambda_adv", c.lambda_adv);
  get("lambda_rec", c.lambda_rec);
  get("lr_gen", c.lr_gen);
  get("lr_disc", c.lr_disc);
  get("beta1", c.beta1);
  get("beta2", c.beta2);
  get("seq_len", c.seq_len);
  get("batch", c.batch);
  get("iterations", c.iterations);
  get("decay_iterations", c.decay_iterations);
  get("av_levels", c.av_levels);
  get("seed", c.seed);
  get("val_every", c.val_every);
  get("val_clips", c.val_clips);
  get("val_frames", c.val_frames);
  get("val_range", c.val_range);
  get("checkpoint_every", c.checkpoint_every);
  get("out_dir", c.out_dir);
  if (j.contains("generator")) {
    const auto& g = j.at("generator");
    auto gget = [&g](const char* key, auto& field) {
      if (g.contains(key)) field = g.at(key).get<std::decay_t<decltype(field)>>();
    };
    gget("dim", c.generator.dim);
    gget("layers", c.generator.layers);
    gget("heads", c.generator.heads);
    gget("ff_mult", c.generator.ff_mult);
    gget("context", c.generator.context);
    gget("zero_init_output", c.generator.zero_init_output);
  }
  if (j.contains("discriminator")) {
    const auto& d = j.at("discriminator");
    if (d.contains("dim")) c.discriminator.dim = d.at("dim").get<std::size_t>();
    if (d.contains("windows")) c.discriminator.windows = d.at("windows").get<std::vector<std::size_t>>();
  }
  return c;
}

// ---------------------------------------------------------------------------
// Log

namespace {

ordered_json per_level(const std::array<double, 4>& v) {
  ordered_json j;
  for (std::size_t i = 0; i < 4; ++i) j[std::to_string(i + 1)] = v[i];
  return j;
}

}  // namespace

ordered_json LogRecord::to_json() const {
  ordered_json j;
  j["iter"] = iter;
  j["L_D"] = l_d;
  j["L_Df"] = l_df;
  j["L_Ds"] = l_ds;
  j["L_Gf"] = l_gf;
  j["L_Gs"] = l_gs;
  j["L_rec"] = l_rec;
  j["L_AV"] = per_level(l_av);
  j["L_G"] = l_total;
  j["lr"] = lr_gen;
  j["lr_disc"] = lr_disc;
  if (val) {
    j["val_conf"] = per_level(val->confidence);
    j["val_abs_off"] = per_level(val->abs_offset);
    j["val_rec"] = val->rec;
  }
  return j;
}

std::string log_to_jsonl(const std::vector<LogRecord>& log) {
  std::string s;
  for (const auto& r : log) s += r.to_json().dump() + "\n";
  return s;
}

// ---------------------------------------------------------------------------
// Trainer

namespace {

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream)};
  std::array<std::uint32_t, 2> out{};
  seq.generate(out.begin(), out.end());
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

diff::AdamConfig adam(double lr, const TrainConfig& c) { return {lr, c.beta1, c.beta2, 1e-8}; }

}  // namespace

Trainer::Trainer(const std::vector<F::AvClip>& train, const std::vector<F::AvClip>& val,
                 std::vector<const syncer::SyncerModel*> syncers, const TrainConfig& config)
    : train_(train),
      val_(val),
      syncers_(std::move(syncers)),
      config_(config),
      gen_((config.check(), config.generator), derive_seed(config.seed, 1)),
      df_(config.discriminator.dim, derive_seed(config.seed, 2)),
      ds_(config.discriminator, derive_seed(config.seed, 3)),
      opt_g_(diff::AdamState::for_store(gen_.params(), adam(config.lr_gen, config))),
      opt_df_(diff::AdamState::for_store(df_.params(), adam(config.lr_disc, config))),
      opt_ds_(diff::AdamState::for_store(ds_.params(), adam(config.lr_disc, config))),
      rng_(derive_seed(config.seed, 4)) {
  if (syncers_.size() != pyramid::kLevels) throw std::invalid_argument("trainer: need four syncers");
  for (std::size_t i = 0; i < syncers_.size(); ++i) {
    if (!syncers_[i] || !syncers_[i]->frozen()) {
      throw std::logic_error("trainer: level " + std::to_string(i + 1) + " syncer is not frozen");
    }
  }
  if (train_.empty()) throw F::DataError("trainer: empty training split");
  for (const auto& c : train_) {
    if (c.frames() < config_.seq_len) {
      throw F::DataError("trainer: clip " + c.clip_id + " has " + std::to_string(c.frames()) +
                         " frames, fewer than seq_len " + std::to_string(config_.seq_len));
    }
  }
  if (config_.val_every > 0) {
    if (val_.empty()) throw F::DataError("trainer: validation requested but the validation split is empty");
    const std::size_t n = std::min(config_.val_clips, val_.size());
    for (std::size_t i = 0; i < n; ++i) {
      if (val_[i].frames() < config_.val_frames) {
        throw F::DataError("trainer: validation clip " + val_[i].clip_id + " is shorter than val_frames " +
                           std::to_string(config_.val_frames));
      }
    }
  }
}

Trainer::Batch Trainer::sample_batch() {
  const std::size_t B = config_.batch, T = config_.seq_len;
  std::vector<double> x, a;
  x.reserve(B * T * F::kKeypointDim);
  a.reserve(B * 4 * T * F::kMfccDim);
  for (std::size_t b = 0; b < B; ++b) {
    const auto& c = train_[std::uniform_int_distribution<std::size_t>(0, train_.size() - 1)(rng_)];
    const std::size_t s = std::uniform_int_distribution<std::size_t>(0, c.frames() - T)(rng_);
    const auto& kv = c.keypoints.values();
    const auto& av = c.audio.values();
    x.insert(x.end(), kv.begin() + static_cast<long>(s * F::kKeypointDim),
             kv.begin() + static_cast<long>((s + T) * F::kKeypointDim));
    a.insert(a.end(), av.begin() + static_cast<long>(4 * s * F::kMfccDim),
             av.begin() + static_cast<long>(4 * (s + T) * F::kMfccDim));
  }
  return {Tensor::from({B, T, F::kKeypointDim}, std::move(x)), Tensor::from({B, 4 * T, F::kMfccDim}, std::move(a))};
}

GeneratorLosses Trainer::generator_losses(const Tensor& fake, const Batch& b) const {
  GeneratorLosses g;
  {
    std::optional<diff::NoGradScope> ng;
    if (config_.lambda_av == 0) ng.emplace();
    g.av = ms_av_loss(syncers_, fake, b.audio, config_.av_levels);
  }
  {
    std::optional<diff::NoGradScope> ng;
    if (config_.lambda_adv == 0) ng.emplace();
    g.gf = diff::neg(diff::mean(discriminator::frame_scores_after_first(df_, fake)));
    g.gs = diff::neg(diff::mean(ds_.score(fake)));
  }
  g.rec = rec_loss(fake, b.x);
  g.total = weighted_total(config_, g.av.total, g.gf, g.gs, g.rec);
  return g;
}

void Trainer::guard(const Tensor& t, const std::string& component) {
  if (t.all_finite()) return;
  if (!config_.out_dir.empty()) save((fs::path(config_.out_dir) / "nan_checkpoint").string());
  throw TrainingError("training: non-finite " + component + " at iteration " + std::to_string(iter_ + 1), component,
                      iter_ + 1);
}

LogRecord Trainer::step() {
  const double f = config_.lr_factor(iter_) * lr_scale_;
  opt_g_.config.learning_rate = config_.lr_gen * f;
  opt_df_.config.learning_rate = config_.lr_disc * f;
  opt_ds_.config.learning_rate = config_.lr_disc * f;

  const Batch b = sample_batch();
  const std::size_t B = config_.batch, T = config_.seq_len;
  const Tensor x0 = diff::reshape(diff::slice(b.x, 1, 0, 1), {B, F::kKeypointDim});

  diff::Tape gtape;
  Tensor fake;
  try {
    diff::TapeScope scope(gtape);
    fake = gen_.rollout(x0, b.audio, T);
  } catch (const generator::RolloutError& e) {
    if (!config_.out_dir.empty()) save((fs::path(config_.out_dir) / "nan_checkpoint").string());
    throw TrainingError(std::string("training: generator rollout failed at iteration ") + std::to_string(iter_ + 1) +
                            ": " + e.what(),
                        "generator", iter_ + 1);
  }

  LogRecord rec;
  rec.iter = iter_ + 1;
  rec.lr_gen = opt_g_.config.learning_rate;
  rec.lr_disc = opt_df_.config.learning_rate;

  // Critic step on detached samples.
  {
    const Tensor fd = fake.detach();
    diff::Tape tape;
    diff::GradientMap grads;
    {
      diff::TapeScope scope(tape);
      const Tensor l_df = discriminator::d_hinge_loss(discriminator::frame_scores_after_first(df_, b.x),
                                                      discriminator::frame_scores_after_first(df_, fd));
      const Tensor l_ds = discriminator::d_hinge_loss(ds_.score(b.x), ds_.score(fd));
      guard(l_df, "L_Df");
      guard(l_ds, "L_Ds");
      const Tensor l_d = diff::add(l_df, l_ds);
      rec.l_df = l_df.item();
      rec.l_ds = l_ds.item();
      rec.l_d = l_d.item();
      grads = tape.backward(l_d);
    }
    try {
      diff::adam_step(df_.params(), grads, opt_df_);
      diff::adam_step(ds_.params(), grads, opt_ds_);
    } catch (const diff::NonFiniteError& e) {
      throw TrainingError(std::string("training: discriminator gradient: ") + e.what(), "discriminator", iter_ + 1);
    }
  }

  // Generator step against the updated critics.
  {
    diff::GradientMap grads;
    {
      diff::TapeScope scope(gtape);
      const auto g = generator_losses(fake, b);
      for (std::size_t i = 0; i < 4; ++i)
        if (!std::isfinite(g.av.per_level[i])) guard(Tensor::scalar(g.av.per_level[i]), "L_AV level " + std::to_string(i + 1));
      guard(g.gf, "L_Gf");
      guard(g.gs, "L_Gs");
      guard(g.rec, "L_rec");
      guard(g.total, "L_G");
      rec.l_av = g.av.per_level;
      rec.l_gf = g.gf.item();
      rec.l_gs = g.gs.item();
      rec.l_rec = g.rec.item();
      rec.l_total = g.total.item();
      grads = gtape.backward(g.total);
    }
    try {
      diff::adam_step(gen_.params(), grads, opt_g_);
    } catch (const diff::NonFiniteError& e) {
      throw TrainingError(std::string("training: generator gradient: ") + e.what(), "generator", iter_ + 1);
    }
  }

  ++iter_;
  if (config_.val_every > 0 && (iter_ % config_.val_every == 0 || iter_ == config_.total_iterations())) {
    rec.val = validate();
  }
  if (config_.checkpoint_every > 0 && !config_.out_dir.empty() && iter_ % config_.checkpoint_every == 0) {
    save((fs::path(config_.out_dir) / ("iter_" + std::to_string(iter_))).string());
  }
  log_.push_back(rec);
  return rec;
}

void Trainer::run(const std::function<void(const LogRecord&)>& on_record) {
  std::ofstream log_file;
  if (!config_.out_dir.empty()) {
    fs::create_directories(config_.out_dir);
    log_file.open(fs::path(config_.out_dir) / "train_log.jsonl", iter_ == 0 ? std::ios::trunc : std::ios::app);
  }
  while (iter_ < config_.total_iterations()) {
    const auto r = step();
    if (log_file) log_file << r.to_json().dump() << "\n" << std::flush;
    if (on_record) on_record(r);
  }
  if (!config_.out_dir.empty()) save(config_.out_dir);
}

ValidationStats Trainer::validate() const {
  ValidationStats st;
  const std::size_t n = std::min(config_.val_clips, val_.size());
  if (n == 0) return st;
  const std::size_t T = config_.val_frames;
  std::vector<ValidationStats> per(n);
  parallel_for(n, [&](std::size_t i) {
    diff::NoGradScope ng;
    const auto& c = val_[i];
    const Tensor x0 = Tensor::from({F::kKeypointDim}, std::vector<double>(c.keypoints.row(0).begin(),
                                                                           c.keypoints.row(0).end()));
    const auto& av = c.audio.values();
    std::vector<double> a(av.begin(), av.begin() + static_cast<long>(4 * T * F::kMfccDim));
    const Tensor roll = gen_.rollout(x0, Tensor::from({4 * T, F::kMfccDim}, a), T);
    F::AvClip g;
    g.clip_id = c.clip_id;
    g.identity_id = c.identity_id;
    g.keypoints = F::KeypointSequence::from_tensor(roll);
    g.audio = F::AudioFeatSequence(4 * T, std::move(a));
    for (std::size_t l = 0; l < pyramid::kLevels; ++l) {
      const auto r = eval::av_offset(*syncers_[l], g, config_.val_range);
      per[i].confidence[l] = r.confidence;
      per[i].abs_offset[l] = static_cast<double>(r.abs_offset);
    }
    const std::size_t Tr = std::min(config_.seq_len, T);
    const Tensor gt = Tensor::from(
        {Tr, F::kKeypointDim},
        std::vector<double>(c.keypoints.values().begin(),
                            c.keypoints.values().begin() + static_cast<long>(Tr * F::kKeypointDim)));
    per[i].rec = rec_loss(diff::slice(roll, 0, 0, Tr), gt).item();
  });
  const double inv = 1.0 / static_cast<double>(n);
  for (const auto& p : per) {
    for (std::size_t l = 0; l < pyramid::kLevels; ++l) {
      st.confidence[l] += p.confidence[l] * inv;
      st.abs_offset[l] += p.abs_offset[l] * inv;
    }
    st.rec += p.rec * inv;
  }
  return st;
}

void Trainer::save(const std::string& dir) const {
  fs::create_directories(dir);
  diff::save_checkpoint(gen_.params(), (fs::path(dir) / "generator.avpc").string());
  diff::save_checkpoint(df_.params(), (fs::path(dir) / "d_frame.avpc").string());
  diff::save_checkpoint(ds_.params(), (fs::path(dir) / "d_seq.avpc").string());
  std::ofstream(fs::path(dir) / "train_config.json") << config_.to_json().dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// Ablations

namespace {

AblationRun run_one(const std::vector<F::AvClip>& train, const std::vector<F::AvClip>& val,
                    const std::vector<const syncer::SyncerModel*>& syncers, const TrainConfig& cfg, std::string name) {
  Trainer t(train, val, syncers, cfg);
  t.run();
  AblationRun r;
  r.name = std::move(name);
  r.levels = cfg.av_levels;
  r.seed = cfg.seed;
  r.lambda_rec = cfg.lambda_rec;
  r.lambda_adv = cfg.lambda_adv;
  r.log = t.log();
  r.final = !r.log.empty() && r.log.back().val ? *r.log.back().val : t.validate();
  return r;
}

std::string run_dir(const TrainConfig& c, const std::string& name) {
  return c.out_dir.empty() ? std::string() : (fs::path(c.out_dir) / name).string();
}

}  // namespace

AblationReport ablation_ms_vs_finest(const std::vector<F::AvClip>& train, const std::vector<F::AvClip>& val,
                                     const std::vector<const syncer::SyncerModel*>& syncers,
                                     const TrainConfig& config, const std::vector<std::uint64_t>& seeds) {
  AblationReport rep;
  rep.kind = "ms_vs_finest";
  for (std::uint64_t seed : seeds) {
    for (const auto& [name, levels] : {std::pair<std::string, std::vector<std::size_t>>{"multi_scale", {1, 2, 3, 4}},
                                       {"finest_only", {1}}}) {
      TrainConfig c = config;
      c.seed = seed;
      c.av_levels = levels;
      c.out_dir = run_dir(config, name + "_seed" + std::to_string(seed));
      rep.runs.push_back(run_one(train, val, syncers, c, name));
    }
  }
  return rep;
}

std::vector<std::pair<double, double>> loss_weight_grid() { return {{1, 0}, {1, 0.01}, {1, 1}, {0.01, 1}, {1, 0.1}}; }

AblationReport ablation_loss_weights(const std::vector<F::AvClip>& train, const std::vector<F::AvClip>& val,
                                     const std::vector<const syncer::SyncerModel*>& syncers,
                                     const TrainConfig& config) {
  AblationReport rep;
  rep.kind = "loss_weights";
  for (const auto& [lr, la] : loss_weight_grid()) {
    TrainConfig c = config;
    c.lambda_rec = lr;
    c.lambda_adv = la;
    std::ostringstream name;
    name << "rec" << lr << "_adv" << la;
    c.out_dir = run_dir(config, name.str());
    rep.runs.push_back(run_one(train, val, syncers, c, name.str()));
  }
  return rep;
}

ordered_json AblationReport::to_json() const {
  ordered_json j;
  j["kind"] = kind;
  j["runs"] = ordered_json::array();
  for (const auto& r : runs) {
    ordered_json o;
    o["name"] = r.name;
    o["seed"] = r.seed;
    o["av_levels"] = r.levels;
    o["lambda_rec"] = r.lambda_rec;
    o["lambda_adv"] = r.lambda_adv;
    o["final"] = {{"val_conf", per_level(r.final.confidence)},
                  {"val_abs_off", per_level(r.final.abs_offset)},
                  {"val_rec", r.final.rec}};
    ordered_json curve = ordered_json::array();
    for (const auto& l : r.log)
      if (l.val) curve.push_back({{"iter", l.iter}, {"val_conf", per_level(l.val->confidence)}});
    o["curve"] = std::move(curve);
    if (!r.log.empty()) {
      const auto& last = r.log.back();
      o["final_losses"] = {{"L_D", last.l_d}, {"L_Gf", last.l_gf}, {"L_Gs", last.l_gs}, {"L_rec", last.l_rec},
                           {"L_AV", per_level(last.l_av)}};
    }
    j["runs"].push_back(std::move(o));
  }
  return j;
}

std::string AblationReport::to_csv() const {
  std::string s = "run,seed,lambda_rec,lambda_adv,conf_l1,conf_l2,conf_l3,conf_l4,off_l1,off_l2,off_l3,off_l4,val_rec\n";
  for (const auto& r : runs) {
    s += r.name + "," + std::to_string(r.seed) + "," + eval::format_double(r.lambda_rec) + "," +
         eval::format_double(r.lambda_adv);
    for (double v : r.final.confidence) s += "," + eval::format_double(v);
    for (double v : r.final.abs_offset) s += "," + eval::format_double(v);
    s += "," + eval::format_double(r.final.rec) + "\n";
  }
  return s;
}

std::vector<std::string> AblationReport::export_curves(const std::string& dir) const {
  std::vector<std::string> files;
  for (const auto& r : runs) {
    std::vector<eval::ConfidencePoint> pts;
    for (const auto& l : r.log)
      if (l.val)
        for (std::size_t i = 0; i < 4; ++i) pts.push_back({l.iter, i + 1, l.val->confidence[i]});
    const auto f = eval::plot_export(pts, dir, r.name + "_seed" + std::to_string(r.seed));
    files.insert(files.end(), f.begin(), f.end());
  }
  return files;
}

}  // namespace avsync::training
