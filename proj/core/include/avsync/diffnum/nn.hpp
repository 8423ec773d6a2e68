#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "avsync/diffnum/ops.hpp"
#include "avsync/diffnum/tensor.hpp"

namespace avsync::diff {

using Rng = std::mt19937_64;

/// Named, ordered collection of trainable tensors. Paths are the keys used
/// in checkpoints, e.g. "e_x.l0.w".
class ParameterStore {
 public:
  Tensor add(const std::string& path, Shape shape, std::vector<double> init);
  const Tensor& get(const std::string& path) const;
  bool contains(const std::string& path) const;

  const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
  std::size_t count() const { return entries_.size(); }
  std::size_t total_size() const;

  /// Frozen stores refuse optimizer steps and stop taking gradients.
  void freeze();
  void unfreeze();
  bool frozen() const { return frozen_; }

  /// FNV-1a over names and raw value bytes.
  std::uint64_t checksum() const;

  /// Copies values from `other` (matching paths and shapes).
  void copy_values_from(const ParameterStore& other);

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
  bool frozen_ = false;
};

std::vector<double> normal_init(std::size_t n, double stddev, Rng& rng);

class Linear {
 public:
  Linear() = default;
  /// Weights drawn N(0, 1/in) unless zero_init.
  Linear(ParameterStore& store, const std::string& path, std::size_t in, std::size_t out, Rng& rng,
         bool zero_init = false);
  Tensor operator()(const Tensor& x) const;
  std::size_t in() const { return in_; }
  std::size_t out() const { return out_; }

 private:
  Tensor w_, b_;
  std::size_t in_ = 0, out_ = 0;
};

class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(ParameterStore& store, const std::string& path, std::size_t dim);
  Tensor operator()(const Tensor& x) const;

 private:
  Tensor gamma_, beta_;
};

/// Conv over time on [B, L, C] inputs via unfold + matmul, no padding.
class Conv1d {
 public:
  Conv1d() = default;
  Conv1d(ParameterStore& store, const std::string& path, std::size_t in_ch, std::size_t out_ch,
         std::size_t kernel, std::size_t stride, Rng& rng);
  Tensor operator()(const Tensor& x) const;
  std::size_t output_length(std::size_t len) const { return (len - kernel_) / stride_ + 1; }

 private:
  Linear proj_;
  std::size_t kernel_ = 1, stride_ = 1;
};

}  // namespace avsync::diff
