#pragma once

#include <cstddef>
#include <vector>

#include "avsync/diffnum/tensor.hpp"

// Differentiable primitives. Every op computes its value eagerly and, when a
// tape is active and any input requires grad, records its reverse rule.
// Axis arguments accept negative values counted from the back.
namespace avsync::diff {

// Elementwise arithmetic with numpy-style broadcasting.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, double c);
Tensor scale(const Tensor& a, double c);
Tensor neg(const Tensor& a);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(const Tensor& a, double c) { return scale(a, c); }
inline Tensor operator*(double c, const Tensor& a) { return scale(a, c); }
inline Tensor operator+(const Tensor& a, double c) { return add_scalar(a, c); }
inline Tensor operator-(const Tensor& a) { return neg(a); }

// Pointwise nonlinearities.
Tensor relu(const Tensor& x);
Tensor gelu(const Tensor& x);  // tanh approximation
Tensor tanh(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor square(const Tensor& x);

/// a: [..., M, K]; b: [K, N] shared across the batch, or [..., K, N] with the
/// same leading extents as a. With transpose_b, b is read as [..., N, K].
Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_b = false);

// Reductions.
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor sum_axis(const Tensor& x, int axis, bool keepdim = false);
Tensor mean_axis(const Tensor& x, int axis, bool keepdim = false);

// Last-axis normalisers.
Tensor softmax(const Tensor& x);
Tensor log_softmax(const Tensor& x);
/// (x - mean) / sqrt(var + eps) over the last axis; no affine part.
Tensor layer_norm(const Tensor& x, double eps = 1e-5);
/// Euclidean norm over the last axis.
Tensor l2_norm(const Tensor& x);
/// Cosine of a and b over the last axis; norms are guarded by eps.
Tensor cosine_similarity(const Tensor& a, const Tensor& b, double eps = 1e-8);

// Structural ops.
Tensor reshape(const Tensor& x, Shape shape);
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& x, int axis, std::size_t start, std::size_t length);
/// Gathers entries along `axis`; indices may repeat (gradients accumulate).
Tensor index_select(const Tensor& x, int axis, const std::vector<std::size_t>& indices);

// Temporal ops on [..., L, C] tensors (time on axis -2).
/// Sliding windows without padding: [B, L, C] -> [B, Lout, kernel*C],
/// Lout = (L - kernel) / stride + 1.
Tensor unfold_time(const Tensor& x, std::size_t kernel, std::size_t stride);
/// Box filter of `width` taps centred on stride*t, replicate-padded,
/// output length floor(L / stride).
Tensor avg_pool_time(const Tensor& x, std::size_t width, std::size_t stride);
/// Linear interpolation to `out_len` frames; output frame t samples input
/// position t / factor, clamped to the last frame.
Tensor interpolate_time(const Tensor& x, std::size_t out_len, double factor);

}  // namespace avsync::diff
