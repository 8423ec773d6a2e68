#include "avsync/generator/generator.hpp"

#include <cmath>

#include "avsync/diffnum/ops.hpp"
#include "avsync/features/clip.hpp"

namespace avsync::generator {

namespace F = features;
using diff::Shape;

Tensor positional_encoding(std::size_t len, std::size_t dim, std::size_t offset) {
  std::vector<double> pe(len * dim);
  for (std::size_t p = 0; p < len; ++p) {
    for (std::size_t i = 0; i < dim; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(i - i % 2) / static_cast<double>(dim));
      const double a = static_cast<double>(p + offset) * freq;
      pe[p * dim + i] = i % 2 == 0 ? std::sin(a) : std::cos(a);
    }
  }
  return Tensor::from({len, dim}, std::move(pe));
}

StepOutput merge_branches(const std::vector<Tensor>& v, const std::vector<Tensor>& w) {
  if (v.size() != kBranches || w.size() != kBranches) {
    throw diff::ShapeError("merge_branches: expected " + std::to_string(kBranches) + " branches");
  }
  const std::size_t B = v[0].dim(0);
  std::vector<Tensor> cols;
  for (const auto& wi : w) cols.push_back(diff::reshape(wi, {B, F::kNumKeypoints, 1}));
  StepOutput out;
  out.branch_v = v;
  out.mask_weights = diff::softmax(diff::concat(cols, -1));
  Tensor acc;
  for (std::size_t i = 0; i < kBranches; ++i) {
    const Tensor term = diff::mul(diff::slice(out.mask_weights, -1, i, 1),
                                  diff::reshape(v[i], {B, F::kNumKeypoints, F::kValuesPerKeypoint}));
    acc = i == 0 ? term : diff::add(acc, term);
  }
  out.velocity = diff::reshape(acc, {B, F::kKeypointDim});
  return out;
}

GeneratorModel::GeneratorModel(const GeneratorConfig& config, std::uint64_t seed) : config_(config) {
  if (config.dim % config.heads != 0) throw std::invalid_argument("generator: dim must be divisible by heads");
  diff::Rng rng(seed);
  const std::size_t D = config.dim;
  embed_ = diff::Linear(store_, "temporal.embed", F::kKeypointDim, D, rng);
  for (std::size_t l = 0; l < config.layers; ++l) {
    const std::string p = "temporal.layer" + std::to_string(l);
    Layer layer;
    layer.ln1 = diff::LayerNorm(store_, p + ".ln1", D);
    layer.q = diff::Linear(store_, p + ".q", D, D, rng);
    layer.k = diff::Linear(store_, p + ".k", D, D, rng);
    layer.v = diff::Linear(store_, p + ".v", D, D, rng);
    layer.o = diff::Linear(store_, p + ".o", D, D, rng);
    layer.ln2 = diff::LayerNorm(store_, p + ".ln2", D);
    layer.ff1 = diff::Linear(store_, p + ".ff1", D, config.ff_mult * D, rng);
    layer.ff2 = diff::Linear(store_, p + ".ff2", config.ff_mult * D, D, rng);
    layers_.push_back(std::move(layer));
  }
  final_ln_ = diff::LayerNorm(store_, "temporal.ln", D);
  stem_ = diff::Linear(store_, "fpn.stem", F::kAudioPerVideo * F::kMfccDim, D, rng);
  for (std::size_t i = 1; i < kBranches; ++i)
    fpn_.emplace_back(store_, "fpn.conv" + std::to_string(i), D, D, 3, 2, rng);
  for (std::size_t i = 0; i < kBranches; ++i) {
    const std::string p = "branch" + std::to_string(i + 1);
    Branch b;
    b.l1 = diff::Linear(store_, p + ".l1", 2 * D + F::kKeypointDim, D, rng);
    b.l2 = diff::Linear(store_, p + ".l2", D, D, rng);
    b.out = diff::Linear(store_, p + ".out", D, F::kKeypointDim + F::kNumKeypoints, rng, config.zero_init_output);
    branches_.push_back(std::move(b));
  }
}

std::vector<Tensor> GeneratorModel::audio_fpn(const Tensor& audio, std::size_t T, std::vector<Tensor>* native) const {
  const Tensor a = audio.rank() == 2 ? diff::reshape(audio, {1, audio.dim(0), audio.dim(1)}) : audio;
  if (a.rank() != 3 || a.dim(2) != F::kMfccDim || a.dim(1) != F::kAudioPerVideo * T) {
    throw diff::ShapeError("audio_fpn: expected [B, " + std::to_string(F::kAudioPerVideo * T) + ", 26], got " +
                           diff::to_string(audio.shape()));
  }
  const std::size_t B = a.dim(0);
  Tensor level = diff::gelu(stem_(diff::reshape(a, {B, T, F::kAudioPerVideo * F::kMfccDim})));
  std::vector<Tensor> maps{level};
  if (native) native->assign(1, level);
  for (std::size_t i = 0; i + 1 < kBranches; ++i) {
    const std::size_t L = level.dim(1);
    std::vector<std::size_t> idx{0};
    for (std::size_t t = 0; t < L; ++t) idx.push_back(t);
    idx.push_back(L - 1);
    level = diff::gelu(fpn_[i](diff::index_select(level, 1, idx)));
    if (native) native->push_back(level);
    maps.push_back(diff::interpolate_time(level, T, static_cast<double>(std::size_t{2} << i)));
  }
  return maps;
}

Tensor GeneratorModel::attend(const Layer& layer, const Tensor& q, const Tensor& k, const Tensor& v,
                              const Tensor* mask) const {
  const std::size_t H = config_.heads, dh = config_.dim / H;
  const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Tensor> heads;
  for (std::size_t h = 0; h < H; ++h) {
    Tensor s = diff::scale(diff::matmul(diff::slice(q, -1, h * dh, dh), diff::slice(k, -1, h * dh, dh), true), inv);
    if (mask) s = diff::add(s, *mask);
    heads.push_back(diff::matmul(diff::softmax(s), diff::slice(v, -1, h * dh, dh)));
  }
  return layer.o(H == 1 ? heads[0] : diff::concat(heads, -1));
}

Tensor GeneratorModel::block(const Layer& layer, const Tensor& h, const Tensor& mask) const {
  const Tensor n = layer.ln1(h);
  Tensor out = diff::add(h, attend(layer, layer.q(n), layer.k(n), layer.v(n), &mask));
  return diff::add(out, layer.ff2(diff::gelu(layer.ff1(layer.ln2(out)))));
}

Tensor GeneratorModel::encode(const Tensor& x) const {
  const Tensor xb = x.rank() == 2 ? diff::reshape(x, {1, x.dim(0), x.dim(1)}) : x;
  const std::size_t T = xb.dim(1);
  std::vector<double> m(T * T, 0.0);
  for (std::size_t i = 0; i < T; ++i)
    for (std::size_t j = i + 1; j < T; ++j) m[i * T + j] = -1e9;
  const Tensor mask = Tensor::from({T, T}, std::move(m));
  Tensor h = diff::add(embed_(xb), positional_encoding(T, config_.dim));
  for (const auto& layer : layers_) h = block(layer, h, mask);
  h = final_ln_(h);
  return x.rank() == 2 ? diff::reshape(h, {T, config_.dim}) : h;
}

StepOutput GeneratorModel::step(const Tensor& h, const Tensor& x, const std::vector<Tensor>& audio_next) const {
  if (audio_next.size() != kBranches) throw diff::ShapeError("generator step: need 4 audio maps");
  std::vector<Tensor> v, w;
  for (std::size_t i = 0; i < kBranches; ++i) {
    const auto& b = branches_[i];
    const Tensor in = diff::concat({h, x, audio_next[i]}, -1);
    const Tensor out = b.out(diff::gelu(b.l2(diff::gelu(b.l1(in)))));
    out.check_finite("generator branch " + std::to_string(i + 1) + " output");
    v.push_back(diff::slice(out, -1, 0, F::kKeypointDim));
    w.push_back(diff::slice(out, -1, F::kKeypointDim, F::kNumKeypoints));
  }
  return merge_branches(v, w);
}

Tensor GeneratorModel::rollout(const Tensor& x0, const Tensor& audio, std::size_t T, RolloutTrace* trace) const {
  if (T == 0) throw std::invalid_argument("rollout: T must be positive");
  const bool single = x0.rank() == 1;
  const Tensor X0 = single ? diff::reshape(x0, {1, x0.dim(0)}) : x0;
  const Tensor A = audio.rank() == 2 ? diff::reshape(audio, {1, audio.dim(0), audio.dim(1)}) : audio;
  if (X0.rank() != 2 || X0.dim(1) != F::kKeypointDim) {
    throw diff::ShapeError("rollout: x0 must be [B, 60], got " + diff::to_string(x0.shape()));
  }
  X0.check_finite("rollout x0");
  const std::size_t B = X0.dim(0), D = config_.dim;
  const auto maps = audio_fpn(A, T);
  for (std::size_t i = 0; i < maps.size(); ++i) maps[i].check_finite("audio_fpn level " + std::to_string(i + 1));

  std::vector<Tensor> xs{X0};
  std::vector<Tensor> K(layers_.size()), V(layers_.size());
  const std::size_t ctx = config_.context;
  for (std::size_t t = 0; t + 1 < T; ++t) {
    const Tensor& xt = xs.back();
    Tensor ht;
    if (ctx == 0 || t < ctx) {
      Tensor h = diff::reshape(diff::add(embed_(xt), diff::reshape(positional_encoding(1, D, t), {D})), {B, 1, D});
      for (std::size_t l = 0; l < layers_.size(); ++l) {
        const auto& layer = layers_[l];
        const Tensor n = layer.ln1(h);
        const Tensor k = layer.k(n), v = layer.v(n);
        K[l] = t == 0 ? k : diff::concat({K[l], k}, 1);
        V[l] = t == 0 ? v : diff::concat({V[l], v}, 1);
        h = diff::add(h, attend(layer, layer.q(n), K[l], V[l], nullptr));
        h = diff::add(h, layer.ff2(diff::gelu(layer.ff1(layer.ln2(h)))));
      }
      ht = diff::reshape(final_ln_(h), {B, D});
    } else {
      std::vector<Tensor> win;
      for (std::size_t s = t + 1 - ctx; s <= t; ++s) win.push_back(diff::reshape(xs[s], {B, 1, F::kKeypointDim}));
      ht = diff::reshape(diff::slice(encode(diff::concat(win, 1)), 1, ctx - 1, 1), {B, D});
    }
    std::vector<Tensor> a_next;
    for (const auto& m : maps) a_next.push_back(diff::reshape(diff::slice(m, 1, t + 1, 1), {B, D}));
    StepOutput out;
    try {
      ht.check_finite("temporal module output");
      out = step(ht, xt, a_next);
    } catch (const diff::NonFiniteError& e) {
      throw RolloutError("rollout: frame " + std::to_string(t + 1) + ": " + e.what(), t + 1);
    }
    Tensor next = diff::add(xt, out.velocity);
    if (!next.all_finite()) {
      throw RolloutError("rollout: non-finite keypoints at frame " + std::to_string(t + 1), t + 1);
    }
    if (trace) trace->mask_weights.push_back(out.mask_weights.detach());
    xs.push_back(std::move(next));
  }
  std::vector<Tensor> rows;
  for (const auto& x : xs) rows.push_back(diff::reshape(x, {B, 1, F::kKeypointDim}));
  Tensor out = rows.size() == 1 ? rows[0] : diff::concat(rows, 1);
  return single ? diff::reshape(out, {T, F::kKeypointDim}) : out;
}

}  // namespace avsync::generator
