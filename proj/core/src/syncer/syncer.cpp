#include "avsync/syncer/syncer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "avsync/diffnum/adam.hpp"
#include "avsync/diffnum/checkpoint.hpp"
#include "avsync/diffnum/ops.hpp"
#include "json.hpp"

namespace avsync::syncer {

namespace F = features;
using diff::Shape;

SyncerModel::SyncerModel(const SyncerConfig& config, std::uint64_t seed) : config_(config) {
  if (config.level < 1 || config.level > pyramid::kLevels) {
    throw std::invalid_argument("syncer: level " + std::to_string(config.level) + " outside 1..4");
  }
  diff::Rng rng(seed);
  const std::size_t C = config.conv_channels, E = config.embed_dim;
  conv1_ = diff::Conv1d(store_, "e_a.conv1", F::kMfccDim, C, 3, 2, rng);
  conv2_ = diff::Conv1d(store_, "e_a.conv2", C, C, 3, 2, rng);
  const std::size_t flat = conv2_.output_length(conv1_.output_length(F::kAudioSegment)) * C;
  a1_ = diff::Linear(store_, "e_a.fc1", flat, E, rng);
  a2_ = diff::Linear(store_, "e_a.fc2", E, E, rng);
  x1_ = diff::Linear(store_, "e_x.fc1", F::kVideoSegment * F::kKeypointDim, E, rng);
  n1_ = diff::LayerNorm(store_, "e_x.ln1", E);
  x2_ = diff::Linear(store_, "e_x.fc2", E, E, rng);
  n2_ = diff::LayerNorm(store_, "e_x.ln2", E);
  x3_ = diff::Linear(store_, "e_x.fc3", E, E, rng);
  logit_scale_ = store_.add("logit_scale", {}, {config.logit_scale_init});
}

Tensor SyncerModel::embed_audio(const Tensor& audio) const {
  const bool single = audio.rank() == 2;
  const Tensor a = single ? diff::reshape(audio, {1, audio.dim(0), audio.dim(1)}) : audio;
  if (a.rank() != 3 || a.dim(1) != F::kAudioSegment || a.dim(2) != F::kMfccDim) {
    throw diff::ShapeError("syncer e_a: expected [n, 20, 26], got " + diff::to_string(audio.shape()));
  }
  Tensor h = diff::gelu(conv1_(a));
  h = diff::gelu(conv2_(h));
  h = diff::reshape(h, {a.dim(0), h.dim(1) * h.dim(2)});
  h = a2_(diff::gelu(a1_(h)));
  return single ? diff::reshape(h, {config_.embed_dim}) : h;
}

Tensor SyncerModel::embed_keypoints(const Tensor& keypoints) const {
  const bool single = keypoints.rank() == 2;
  Tensor x = single ? diff::reshape(keypoints, {1, keypoints.dim(0), keypoints.dim(1)}) : keypoints;
  if (x.rank() != 3 || x.dim(1) != F::kVideoSegment || x.dim(2) != F::kKeypointDim) {
    throw diff::ShapeError("syncer e_x: expected [n, 5, 60], got " + diff::to_string(keypoints.shape()));
  }
  if (config_.positions_only) x = pyramid::apply_channel_mask(x, true);
  if (config_.center_keypoints) x = diff::sub(x, diff::mean_axis(x, 1, true));
  Tensor h = diff::reshape(x, {x.dim(0), x.dim(1) * x.dim(2)});
  h = diff::gelu(n1_(x1_(h)));
  h = diff::gelu(n2_(x2_(h)));
  h = x3_(h);
  return single ? diff::reshape(h, {config_.embed_dim}) : h;
}

Tensor SyncerModel::score(const Tensor& audio, const Tensor& keypoints) const {
  return cosine_score(embed_audio(audio), embed_keypoints(keypoints));
}

Tensor cosine_score(const Tensor& ea, const Tensor& ex) { return diff::cosine_similarity(ea, ex, 1e-8); }

Tensor infonce_from_scores(const Tensor& pos, const Tensor& neg, const Tensor& scale, bool literal) {
  if (pos.rank() != 1 || neg.rank() != 2 || neg.dim(0) != pos.dim(0)) {
    throw diff::ShapeError("infonce: expected pos [B] and neg [B, N], got " + diff::to_string(pos.shape()) +
                           " and " + diff::to_string(neg.shape()));
  }
  if (pos.dim(0) == 0) throw std::invalid_argument("infonce: empty batch");
  if (neg.dim(1) == 0) throw std::invalid_argument("infonce: need at least one negative");
  const std::size_t B = pos.dim(0);
  Tensor logits = diff::mul(diff::concat({diff::reshape(pos, {B, 1}), neg}, 1), scale);
  if (literal) return diff::neg(diff::mean(diff::slice(diff::softmax(logits), 1, 0, 1)));
  return diff::neg(diff::mean(diff::slice(diff::log_softmax(logits), 1, 0, 1)));
}

Tensor triplet_from_scores(const Tensor& pos, const Tensor& neg, double margin) {
  if (pos.shape() != neg.shape()) {
    throw diff::ShapeError("triplet: score shapes differ " + diff::to_string(pos.shape()) + " vs " +
                           diff::to_string(neg.shape()));
  }
  return diff::mean(diff::relu(diff::add_scalar(diff::sub(neg, pos), margin)));
}

Tensor infonce_loss(const SyncerModel& m, const ContrastiveBatch& b, bool literal) {
  const std::size_t B = b.size();
  if (B == 0) throw std::invalid_argument("infonce: empty batch");
  const std::size_t N = b.negatives_per_anchor();
  if (N == 0) throw std::invalid_argument("infonce: need at least one negative");
  const Tensor ea = m.embed_audio(b.anchors);
  const Tensor all = diff::concat({diff::reshape(b.positives, {B, 1, F::kVideoSegment, F::kKeypointDim}),
                                   b.negatives},
                                  1);
  const Tensor ex =
      diff::reshape(m.embed_keypoints(diff::reshape(all, {B * (N + 1), F::kVideoSegment, F::kKeypointDim})),
                    {B, N + 1, m.config().embed_dim});
  std::vector<std::size_t> rep(B * (N + 1));
  for (std::size_t i = 0; i < rep.size(); ++i) rep[i] = i / (N + 1);
  const Tensor ea_rep = diff::reshape(diff::index_select(ea, 0, rep), {B, N + 1, m.config().embed_dim});
  const Tensor s = cosine_score(ea_rep, ex);  // [B, N+1]
  return infonce_from_scores(diff::reshape(diff::slice(s, 1, 0, 1), {B}), diff::slice(s, 1, 1, N),
                             m.logit_scale(), literal);
}

Tensor triplet_loss(const SyncerModel& m, const Tensor& anchor, const Tensor& pos, const Tensor& neg,
                    double margin) {
  const Tensor ea = m.embed_audio(anchor);
  return triplet_from_scores(cosine_score(ea, m.embed_keypoints(pos)), cosine_score(ea, m.embed_keypoints(neg)),
                             margin);
}

Mining default_mining(std::size_t level) { return level >= pyramid::kLevels ? Mining::CrossSample : Mining::Hard; }
std::size_t default_negatives(std::size_t level) { return level >= pyramid::kLevels ? 48 : 12; }

namespace {

// Valid anchor/negative centres: interior when the track allows it.
std::pair<std::size_t, std::size_t> center_range(std::size_t length) {
  const std::size_t half = F::kVideoSegment / 2;
  if (length >= F::kVideoSegment) return {half, length - half - 1};
  return {0, length - 1};
}

void copy_window(const Tensor& src, const std::vector<std::size_t>& rows, std::vector<double>& dst) {
  const std::size_t C = src.dim(1);
  const auto d = src.data();
  for (auto r : rows) dst.insert(dst.end(), d.begin() + static_cast<std::ptrdiff_t>(r * C),
                                 d.begin() + static_cast<std::ptrdiff_t>((r + 1) * C));
}

std::size_t uniform(diff::Rng& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

}  // namespace

ContrastiveBatch mine_batch(const std::vector<pyramid::AvPyramid>& corpus, std::size_t level, std::size_t n_neg,
                            Mining mode, std::size_t batch, diff::Rng& rng) {
  if (corpus.empty()) throw std::invalid_argument("mine_batch: empty corpus");
  if (level < 1 || level > corpus.front().levels()) {
    throw std::out_of_range("mine_batch: level " + std::to_string(level) + " out of range");
  }
  if (n_neg == 0 || batch == 0) throw std::invalid_argument("mine_batch: need N >= 1 and batch >= 1");
  if (mode == Mining::CrossSample && corpus.size() < 2) {
    throw std::invalid_argument("mine_batch: cross-sample negatives need at least 2 clips, corpus has 1");
  }
  const std::size_t li = level - 1;
  ContrastiveBatch b;
  b.level = level;
  b.provenance = mode;
  std::vector<double> anchors, positives, negatives;
  anchors.reserve(batch * F::kAudioSegment * F::kMfccDim);
  positives.reserve(batch * F::kVideoSegment * F::kKeypointDim);
  negatives.reserve(batch * n_neg * F::kVideoSegment * F::kKeypointDim);
  bool warned = false;

  auto cross_negative = [&](std::size_t ci) {
    std::size_t cj = uniform(rng, 0, corpus.size() - 2);
    if (cj >= ci) ++cj;
    const auto& kp = corpus[cj].keypoints[li];
    const auto [lo, hi] = center_range(kp.dim(0));
    copy_window(kp, F::video_window(uniform(rng, lo, hi), kp.dim(0)), negatives);
  };

  for (std::size_t bi = 0; bi < batch; ++bi) {
    const std::size_t ci = uniform(rng, 0, corpus.size() - 1);
    const auto& kp = corpus[ci].keypoints[li];
    const auto& au = corpus[ci].audio[li];
    const std::size_t L = kp.dim(0);
    const auto [lo, hi] = center_range(L);
    const std::size_t t = uniform(rng, lo, hi);
    copy_window(au, F::audio_window(t, au.dim(0)), anchors);
    copy_window(kp, F::video_window(t, L), positives);

    if (mode == Mining::Hard) {
      std::vector<std::size_t> cand;
      for (std::size_t c = lo; c <= hi; ++c)
        if ((c > t ? c - t : t - c) >= kMinNegativeDistance) cand.push_back(c);
      if (cand.size() >= n_neg) {
        for (std::size_t n = 0; n < n_neg; ++n) {
          std::swap(cand[n], cand[uniform(rng, n, cand.size() - 1)]);
          copy_window(kp, F::video_window(cand[n], L), negatives);
        }
        continue;
      }
      if (corpus.size() < 2) {
        throw std::invalid_argument("mine_batch: clip too short for " + std::to_string(n_neg) +
                                    " hard negatives and no other clip to fall back on");
      }
      if (!warned) {
        b.warnings.push_back("mine_batch: level " + std::to_string(level) + " clip of length " +
                             std::to_string(L) + " cannot supply " + std::to_string(n_neg) +
                             " hard negatives; using cross-sample negatives");
        warned = true;
      }
    }
    for (std::size_t n = 0; n < n_neg; ++n) cross_negative(ci);
  }
  b.anchors = Tensor::from({batch, F::kAudioSegment, F::kMfccDim}, std::move(anchors));
  b.positives = Tensor::from({batch, F::kVideoSegment, F::kKeypointDim}, std::move(positives));
  b.negatives = Tensor::from({batch, n_neg, F::kVideoSegment, F::kKeypointDim}, std::move(negatives));
  return b;
}

SyncerTrainConfig SyncerTrainConfig::desk() { return {}; }

SyncerTrainConfig SyncerTrainConfig::paper() {
  SyncerTrainConfig c;
  c.model.embed_dim = 512;
  c.model.conv_channels = 128;
  c.batch = 64;
  c.max_steps = 100000;
  c.min_steps = 5000;
  c.eval_every = 1000;
  c.warmup = 2000;
  c.learning_rate = 1e-4;
  return c;
}

std::vector<pyramid::AvPyramid> build_pyramids(const std::vector<F::AvClip>& clips, bool positions_only) {
  pyramid::PyramidOptions o;
  o.positions_only = positions_only;
  std::vector<pyramid::AvPyramid> out;
  out.reserve(clips.size());
  diff::NoGradScope ng;
  for (const auto& c : clips) out.push_back(pyramid::build_av_pyramid(c, o));
  return out;
}

namespace {

Tensor batch_loss(const SyncerModel& m, const ContrastiveBatch& b, const SyncerTrainConfig& c) {
  if (c.objective == Objective::InfoNce) return infonce_loss(m, b, c.literal_infonce);
  const std::size_t B = b.size();
  const Tensor neg0 = diff::reshape(diff::slice(b.negatives, 1, 0, 1), {B, F::kVideoSegment, F::kKeypointDim});
  return triplet_loss(m, b.anchors, b.positives, neg0, c.margin);
}

}  // namespace

SyncerModel train_syncer(const std::vector<pyramid::AvPyramid>& train, const std::vector<pyramid::AvPyramid>& val,
                         std::size_t level, const SyncerTrainConfig& config, SyncerTrainReport* report) {
  SyncerConfig mc = config.model;
  mc.level = level;
  SyncerModel model(mc, config.seed * 1000003ULL + level);
  const Mining mode = config.mining.value_or(default_mining(level));
  const std::size_t n_neg = config.objective == Objective::Triplet ? 1 : config.negatives.value_or(default_negatives(level));
  SyncerTrainReport rep;
  rep.level = level;

  diff::Rng rng(config.seed * 7919ULL + level);
  diff::Rng val_rng(config.seed * 104729ULL + level);
  const auto& val_src = val.empty() ? train : val;
  std::vector<ContrastiveBatch> val_batches;
  for (std::size_t i = 0; i < config.val_batches; ++i) {
    val_batches.push_back(mine_batch(val_src, level, n_neg, mode, config.batch, val_rng));
  }

  auto adam = diff::AdamState::for_store(model.params(), {config.learning_rate, 0.0, 0.999, 1e-8});
  const double diverge_at =
      config.objective == Objective::InfoNce ? std::log(static_cast<double>(n_neg) + 1.0) + 1.0 : config.margin + 1.0;

  double best = INFINITY, window_sum = 0.0;
  std::size_t since_best = 0, window_n = 0;
  for (std::size_t step = 1; step <= config.max_steps; ++step) {
    auto batch = mine_batch(train, level, n_neg, mode, config.batch, rng);
    for (auto& w : batch.warnings)
      if (rep.warnings.empty()) rep.warnings.push_back(w);
    diff::Tape tape;
    double loss_value;
    {
      diff::TapeScope scope(tape);
      const Tensor loss = batch_loss(model, batch, config);
      loss_value = loss.item();
      if (!std::isfinite(loss_value)) {
        throw DivergenceError("syncer level " + std::to_string(level) + ": non-finite loss at step " +
                              std::to_string(step));
      }
      diff::adam_step(model.params(), tape.backward(loss), adam);
    }
    window_sum += loss_value;
    ++window_n;
    rep.steps = step;
    rep.final_train_loss = loss_value;

    if (step % config.eval_every == 0 || step == config.max_steps) {
      const double train_mean = window_sum / static_cast<double>(window_n);
      window_sum = 0.0;
      window_n = 0;
      if (step > config.warmup && !config.literal_infonce && train_mean > diverge_at) {
        throw DivergenceError("syncer level " + std::to_string(level) + " diverged: mean training loss " +
                              std::to_string(train_mean) + " exceeds " + std::to_string(diverge_at) +
                              " at step " + std::to_string(step));
      }
      double v = 0.0;
      {
        diff::NoGradScope ng;
        for (const auto& vb : val_batches) v += batch_loss(model, vb, config).item();
      }
      v /= static_cast<double>(val_batches.size());
      rep.validation.emplace_back(step, v);
      if (v < best - 1e-4) {
        best = v;
        since_best = 0;
      } else if (++since_best >= config.patience && step >= config.min_steps) {
        rep.plateaued = true;
        break;
      }
    }
  }
  model.freeze();
  if (!config.checkpoint_dir.empty()) {
    std::filesystem::create_directories(config.checkpoint_dir);
    save_syncer(model, (std::filesystem::path(config.checkpoint_dir) / ("syncer_l" + std::to_string(level) + ".avpc")).string());
  }
  if (report) *report = std::move(rep);
  return model;
}

std::vector<SyncerModel> train_syncer_pyramid(const std::vector<F::AvClip>& train, const std::vector<F::AvClip>& val,
                                              const SyncerTrainConfig& config, const std::vector<std::size_t>& levels,
                                              std::vector<SyncerTrainReport>* reports) {
  std::vector<F::AvClip> tr, va = val;
  for (std::size_t i = 0; i < train.size(); ++i) {
    const auto errors = F::validate(train[i]);
    if (!errors.empty()) throw F::DataError("train_syncer_pyramid: clip " + train[i].clip_id + ": " + errors.front());
    if (val.empty() && train.size() >= 5 && i % 5 == 4) va.push_back(train[i]);
    else tr.push_back(train[i]);
  }
  const auto ptr = build_pyramids(tr, config.model.positions_only);
  const auto pva = build_pyramids(va, config.model.positions_only);
  std::vector<SyncerModel> models;
  for (auto level : levels) {
    SyncerTrainReport rep;
    models.push_back(train_syncer(ptr, pva, level, config, &rep));
    if (reports) reports->push_back(std::move(rep));
  }
  return models;
}

void save_syncer(const SyncerModel& m, const std::string& path) {
  diff::save_checkpoint(m.params(), path);
  const auto& c = m.config();
  nlohmann::json j{{"level", c.level},
                   {"embed_dim", c.embed_dim},
                   {"conv_channels", c.conv_channels},
                   {"center_keypoints", c.center_keypoints},
                   {"positions_only", c.positions_only}};
  std::ofstream(path + ".json") << j.dump(2) << '\n';
}

SyncerModel load_syncer(const std::string& path) {
  std::ifstream is(path + ".json");
  if (!is) throw diff::CheckpointError("load_syncer: missing sidecar " + path + ".json");
  nlohmann::json j;
  is >> j;
  SyncerConfig c;
  c.level = j.at("level");
  c.embed_dim = j.at("embed_dim");
  c.conv_channels = j.at("conv_channels");
  c.center_keypoints = j.at("center_keypoints");
  c.positions_only = j.value("positions_only", false);
  SyncerModel m(c, 0);
  diff::load_checkpoint(m.params(), path);
  m.freeze();
  return m;
}

}  // namespace avsync::syncer
