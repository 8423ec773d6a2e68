#include "avsync/discriminator/discriminator.hpp"

#include <algorithm>
#include <stdexcept>

#include "avsync/diffnum/ops.hpp"
#include "avsync/features/clip.hpp"

namespace avsync::discriminator {

namespace {

Tensor as_batch(const Tensor& x) {
  if (x.rank() == 2) return diff::reshape(x, {1, x.dim(0), x.dim(1)});
  if (x.rank() != 3 || x.dim(2) != features::kKeypointDim) {
    throw diff::ShapeError("discriminator: expected [B, T, 60], got " + diff::to_string(x.shape()));
  }
  return x;
}

}  // namespace

FrameDiscriminator::FrameDiscriminator(std::size_t dim, std::uint64_t seed) {
  diff::Rng rng(seed);
  l1_ = diff::Linear(store_, "d_f.l1", features::kKeypointDim, dim, rng);
  l2_ = diff::Linear(store_, "d_f.l2", dim, dim, rng);
  l3_ = diff::Linear(store_, "d_f.l3", dim, dim, rng);
  out_ = diff::Linear(store_, "d_f.out", dim, 1, rng);
}

Tensor FrameDiscriminator::score(const Tensor& x) const {
  if (x.rank() == 0 || x.dim(-1) != features::kKeypointDim) {
    throw diff::ShapeError("frame discriminator: last axis must be 60, got " + diff::to_string(x.shape()));
  }
  const Tensor s = out_(diff::gelu(l3_(diff::gelu(l2_(diff::gelu(l1_(x)))))));
  diff::Shape shape(x.shape().begin(), x.shape().end() - 1);
  return diff::reshape(s, shape);
}

SequenceDiscriminator::SequenceDiscriminator(const DiscriminatorConfig& config, std::uint64_t seed)
    : config_(config) {
  if (config.windows.empty()) throw std::invalid_argument("sequence discriminator: no window lengths");
  for (std::size_t w : config.windows)
    if (w < 1) throw std::invalid_argument("sequence discriminator: window length must be positive");
  std::sort(config_.windows.begin(), config_.windows.end());
  diff::Rng rng(seed);
  const std::size_t D = config.dim;
  embed_ = diff::Linear(store_, "d_s.embed", features::kKeypointDim, D, rng);
  wz_ = diff::Linear(store_, "d_s.gru.wz", D, D, rng);
  wr_ = diff::Linear(store_, "d_s.gru.wr", D, D, rng);
  wn_ = diff::Linear(store_, "d_s.gru.wn", D, D, rng);
  uz_ = diff::Linear(store_, "d_s.gru.uz", D, D, rng);
  ur_ = diff::Linear(store_, "d_s.gru.ur", D, D, rng);
  un_ = diff::Linear(store_, "d_s.gru.un", D, D, rng);
  out_ = diff::Linear(store_, "d_s.out", D, 1, rng);
}

std::vector<std::size_t> SequenceDiscriminator::window_starts(std::size_t T, std::size_t w) {
  std::vector<std::size_t> s;
  const std::size_t stride = std::max<std::size_t>(1, w / 2);
  for (std::size_t t = 0; t + w <= T; t += stride) s.push_back(t);
  return s;
}

Tensor SequenceDiscriminator::score(const Tensor& x) const {
  const Tensor xb = as_batch(x);
  const std::size_t B = xb.dim(0), T = xb.dim(1), D = config_.dim;
  if (T < config_.windows.front()) {
    throw diff::ShapeError("sequence discriminator: needs at least " + std::to_string(config_.windows.front()) +
                           " frames, got " + std::to_string(T));
  }
  const Tensor e = diff::gelu(embed_(xb));
  std::vector<Tensor> per_length;
  for (std::size_t w : config_.windows) {
    const auto starts = window_starts(T, w);
    if (starts.empty()) continue;
    std::vector<std::size_t> idx;
    for (std::size_t s : starts)
      for (std::size_t k = 0; k < w; ++k) idx.push_back(s + k);
    const std::size_t n = B * starts.size();
    const Tensor win = diff::reshape(diff::index_select(e, 1, idx), {n, w, D});
    Tensor h = Tensor::zeros({n, D});
    for (std::size_t k = 0; k < w; ++k) {
      const Tensor xk = diff::reshape(diff::slice(win, 1, k, 1), {n, D});
      const Tensor z = diff::sigmoid(diff::add(wz_(xk), uz_(h)));
      const Tensor r = diff::sigmoid(diff::add(wr_(xk), ur_(h)));
      const Tensor c = diff::tanh(diff::add(wn_(xk), diff::mul(r, un_(h))));
      // h = (1 - z) * c + z * h
      h = diff::add(c, diff::mul(z, diff::sub(h, c)));
    }
    const Tensor s = diff::reshape(out_(h), {B, starts.size()});
    per_length.push_back(diff::reshape(diff::mean_axis(s, 1, true), {B, 1}));
  }
  Tensor all = per_length.size() == 1 ? per_length[0] : diff::concat(per_length, 1);
  Tensor out = diff::mean_axis(all, 1);
  return x.rank() == 2 ? diff::reshape(out, {}) : out;
}

Tensor d_hinge_loss(const Tensor& real_scores, const Tensor& fake_scores) {
  if (real_scores.size() == 0 || fake_scores.size() == 0) throw diff::ShapeError("d_hinge_loss: empty batch");
  return diff::add(diff::mean(diff::relu(diff::add_scalar(fake_scores, 1.0))),
                   diff::mean(diff::relu(diff::add_scalar(diff::neg(real_scores), 1.0))));
}

Tensor g_adv_from_scores(const Tensor& frame_scores, const Tensor& seq_scores) {
  const Tensor f = frame_scores.rank() == 1 ? diff::reshape(frame_scores, {1, frame_scores.dim(0)}) : frame_scores;
  if (f.rank() != 2 || f.dim(1) < 2) {
    throw diff::ShapeError("g_adv: frame scores must be [B, T] with T >= 2, got " +
                           diff::to_string(frame_scores.shape()));
  }
  const Tensor later = diff::slice(f, 1, 1, f.dim(1) - 1);
  return diff::neg(diff::add(diff::mean(later), diff::mean(seq_scores)));
}

Tensor frame_scores_after_first(const FrameDiscriminator& df, const Tensor& x) {
  const Tensor xb = as_batch(x);
  return df.score(diff::slice(xb, 1, 1, xb.dim(1) - 1));
}

Tensor g_adv_loss(const FrameDiscriminator& df, const SequenceDiscriminator& ds, const Tensor& fake) {
  const Tensor xb = as_batch(fake);
  return g_adv_from_scores(df.score(xb), ds.score(xb));
}

}  // namespace avsync::discriminator
