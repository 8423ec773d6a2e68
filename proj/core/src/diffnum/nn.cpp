#include "avsync/diffnum/nn.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

namespace avsync::diff {

Tensor ParameterStore::add(const std::string& path, Shape shape, std::vector<double> init) {
  if (contains(path)) throw std::invalid_argument("parameter store: duplicate path " + path);
  Tensor t = Tensor::parameter(std::move(shape), std::move(init));
  t.set_requires_grad(!frozen_);
  entries_.emplace_back(path, t);
  return t;
}

const Tensor& ParameterStore::get(const std::string& path) const {
  for (const auto& [name, t] : entries_)
    if (name == path) return t;
  throw std::out_of_range("parameter store: no parameter " + path);
}

bool ParameterStore::contains(const std::string& path) const {
  for (const auto& e : entries_)
    if (e.first == path) return true;
  return false;
}

std::size_t ParameterStore::total_size() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.second.size();
  return n;
}

void ParameterStore::freeze() {
  frozen_ = true;
  for (auto& e : entries_) e.second.set_requires_grad(false);
}

void ParameterStore::unfreeze() {
  frozen_ = false;
  for (auto& e : entries_) e.second.set_requires_grad(true);
}

std::uint64_t ParameterStore::checksum() const {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 1099511628211ULL;
    }
  };
  for (const auto& [name, t] : entries_) {
    mix(name.data(), name.size());
    const auto d = t.data();
    mix(d.data(), d.size() * sizeof(double));
  }
  return h;
}

void ParameterStore::copy_values_from(const ParameterStore& other) {
  for (auto& [name, t] : entries_) {
    const Tensor& src = other.get(name);
    if (src.shape() != t.shape()) {
      throw ShapeError("parameter store: shape mismatch for " + name + ": " +
                       to_string(src.shape()) + " vs " + to_string(t.shape()));
    }
    auto dst = t.mutable_data();
    std::copy(src.data().begin(), src.data().end(), dst.begin());
  }
}

std::vector<double> normal_init(std::size_t n, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> v(n);
  for (auto& x : v) x = dist(rng);
  return v;
}

Linear::Linear(ParameterStore& store, const std::string& path, std::size_t in, std::size_t out,
               Rng& rng, bool zero_init)
    : in_(in), out_(out) {
  w_ = store.add(path + ".w", {in, out},
                 zero_init ? std::vector<double>(in * out, 0.0)
                           : normal_init(in * out, 1.0 / std::sqrt(static_cast<double>(in)), rng));
  b_ = store.add(path + ".b", {out}, std::vector<double>(out, 0.0));
}

Tensor Linear::operator()(const Tensor& x) const {
  if (x.rank() == 0 || x.dim(-1) != in_) {
    throw ShapeError("linear: expected last dim " + std::to_string(in_) + ", got shape " +
                     to_string(x.shape()));
  }
  if (x.rank() == 1) {
    return reshape(add(matmul(reshape(x, {1, in_}), w_), b_), {out_});
  }
  return add(matmul(x, w_), b_);
}

LayerNorm::LayerNorm(ParameterStore& store, const std::string& path, std::size_t dim) {
  gamma_ = store.add(path + ".gamma", {dim}, std::vector<double>(dim, 1.0));
  beta_ = store.add(path + ".beta", {dim}, std::vector<double>(dim, 0.0));
}

Tensor LayerNorm::operator()(const Tensor& x) const {
  return add(mul(layer_norm(x), gamma_), beta_);
}

Conv1d::Conv1d(ParameterStore& store, const std::string& path, std::size_t in_ch,
               std::size_t out_ch, std::size_t kernel, std::size_t stride, Rng& rng)
    : proj_(store, path, kernel * in_ch, out_ch, rng), kernel_(kernel), stride_(stride) {}

Tensor Conv1d::operator()(const Tensor& x) const {
  return proj_(unfold_time(x, kernel_, stride_));
}

}  // namespace avsync::diff
