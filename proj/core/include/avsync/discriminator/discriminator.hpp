#pragma once

#include <cstdint>
#include <vector>

#include "avsync/diffnum/nn.hpp"

namespace avsync::discriminator {

using diff::Tensor;

struct DiscriminatorConfig {
  std::size_t dim = 64;
  std::vector<std::size_t> windows{4, 8, 16, 32};

  static DiscriminatorConfig desk() { return {}; }
  static DiscriminatorConfig paper() { return {512, {4, 8, 16, 32}}; }
};

/// Frame critic D_f: 60 -> D -> D -> D -> 1 with GELU, raw score.
class FrameDiscriminator {
 public:
  FrameDiscriminator(std::size_t dim, std::uint64_t seed);
  FrameDiscriminator(FrameDiscriminator&&) = default;
  FrameDiscriminator& operator=(FrameDiscriminator&&) = default;

  /// [..., 60] -> [...]
  Tensor score(const Tensor& x) const;

  diff::ParameterStore& params() { return store_; }
  const diff::ParameterStore& params() const { return store_; }

 private:
  diff::ParameterStore store_;
  diff::Linear l1_, l2_, l3_, out_;
};

/// Sequence critic D_s. Frames are embedded, then a GRU reads every sliding
/// window of each configured length (stride w/2, lengths above T skipped);
/// the final hidden state of each window is projected to a score. Output is
/// the mean over lengths of the per-length window means.
class SequenceDiscriminator {
 public:
  SequenceDiscriminator(const DiscriminatorConfig& config, std::uint64_t seed);
  SequenceDiscriminator(SequenceDiscriminator&&) = default;
  SequenceDiscriminator& operator=(SequenceDiscriminator&&) = default;

  /// [B, T, 60] or [T, 60] with T >= smallest window -> [B] (or scalar).
  Tensor score(const Tensor& x) const;
  /// Window start frames used for length `w` on a sequence of length T.
  static std::vector<std::size_t> window_starts(std::size_t T, std::size_t w);

  const DiscriminatorConfig& config() const { return config_; }
  diff::ParameterStore& params() { return store_; }
  const diff::ParameterStore& params() const { return store_; }

 private:
  DiscriminatorConfig config_;
  diff::ParameterStore store_;
  diff::Linear embed_;
  diff::Linear wz_, wr_, wn_, uz_, ur_, un_;
  diff::Linear out_;
};

/// mean relu(1 + fake) + mean relu(1 - real) over all entries.
Tensor d_hinge_loss(const Tensor& real_scores, const Tensor& fake_scores);

/// frame_scores [B, T] (or [T]), seq_scores [B] (or scalar):
///   -mean_{b, t>=1} frame_scores - mean_b seq_scores
Tensor g_adv_from_scores(const Tensor& frame_scores, const Tensor& seq_scores);

/// Generator adversarial loss on a fake batch [B, T, 60].
Tensor g_adv_loss(const FrameDiscriminator& df, const SequenceDiscriminator& ds, const Tensor& fake);

/// Frame scores from t = 1 onwards; frame 0 is the given seed pose in both
/// real and generated sequences.
Tensor frame_scores_after_first(const FrameDiscriminator& df, const Tensor& x);

}  // namespace avsync::discriminator
