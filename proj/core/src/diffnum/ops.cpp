#include "avsync/diffnum/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace avsync::diff {

namespace {

using detail::grad_of;
using detail::Node;
using detail::NodePtr;

bool recording(std::initializer_list<const Tensor*> inputs) {
  if (!Tape::current()) return false;
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor* t) { return t->requires_grad(); });
}

Tensor make(Shape shape, std::vector<double> values) {
  return Tensor::from(std::move(shape), std::move(values));
}

std::size_t norm_axis(const Tensor& x, int axis, const char* op) {
  const int r = static_cast<int>(x.rank());
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) +
                     " out of range for shape " + to_string(x.shape()));
  }
  return static_cast<std::size_t>(a);
}

// outer x n x inner decomposition around `axis`.
struct AxisSplit {
  std::size_t outer = 1, n = 1, inner = 1;
};

AxisSplit split_at(const Shape& s, std::size_t axis) {
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.n = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

std::size_t last_dim(const Tensor& x, const char* op) {
  if (x.rank() == 0) throw ShapeError(std::string(op) + ": needs rank >= 1, got scalar");
  return x.shape().back();
}

// ---------------------------------------------------------------- broadcast

enum class BcastKind { same, b_scalar, a_scalar, b_suffix, a_suffix, general };

struct Bcast {
  BcastKind kind = BcastKind::general;
  Shape out;
  std::vector<std::size_t> stride_a, stride_b;  // per out axis, 0 if broadcast
};

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

Bcast plan_broadcast(const Tensor& a, const Tensor& b, const char* op) {
  Bcast p;
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  if (sa == sb) {
    p.kind = BcastKind::same;
    p.out = sa;
    return p;
  }
  if (b.size() == 1 && sb.size() <= sa.size()) {
    p.kind = BcastKind::b_scalar;
    p.out = sa;
    return p;
  }
  if (a.size() == 1 && sa.size() <= sb.size()) {
    p.kind = BcastKind::a_scalar;
    p.out = sb;
    return p;
  }
  if (is_suffix(sb, sa)) {
    p.kind = BcastKind::b_suffix;
    p.out = sa;
    return p;
  }
  if (is_suffix(sa, sb)) {
    p.kind = BcastKind::a_suffix;
    p.out = sb;
    return p;
  }
  const std::size_t r = std::max(sa.size(), sb.size());
  p.out.assign(r, 1);
  p.stride_a.assign(r, 0);
  p.stride_b.assign(r, 0);
  std::size_t st_a = 1, st_b = 1;
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t da = i < sa.size() ? sa[sa.size() - 1 - i] : 1;
    const std::size_t db = i < sb.size() ? sb[sb.size() - 1 - i] : 1;
    if (da != db && da != 1 && db != 1) {
      throw ShapeError(std::string(op) + ": cannot broadcast " + to_string(sa) + " with " +
                       to_string(sb));
    }
    const std::size_t ax = r - 1 - i;
    p.out[ax] = std::max(da, db);
    p.stride_a[ax] = da == 1 ? 0 : st_a;
    p.stride_b[ax] = db == 1 ? 0 : st_b;
    st_a *= da;
    st_b *= db;
  }
  return p;
}

template <class F>
void for_each_pair(const Bcast& p, std::size_t na, std::size_t nb, F&& f) {
  const std::size_t n = numel(p.out);
  switch (p.kind) {
    case BcastKind::same:
      for (std::size_t i = 0; i < n; ++i) f(i, i, i);
      return;
    case BcastKind::b_scalar:
      for (std::size_t i = 0; i < n; ++i) f(i, i, std::size_t{0});
      return;
    case BcastKind::a_scalar:
      for (std::size_t i = 0; i < n; ++i) f(i, std::size_t{0}, i);
      return;
    case BcastKind::b_suffix:
      for (std::size_t i = 0; i < n; ++i) f(i, i, i % nb);
      return;
    case BcastKind::a_suffix:
      for (std::size_t i = 0; i < n; ++i) f(i, i % na, i);
      return;
    case BcastKind::general: {
      const std::size_t r = p.out.size();
      std::vector<std::size_t> idx(r, 0);
      std::size_t ia = 0, ib = 0;
      for (std::size_t i = 0; i < n; ++i) {
        f(i, ia, ib);
        for (std::size_t ax = r; ax-- > 0;) {
          ++idx[ax];
          ia += p.stride_a[ax];
          ib += p.stride_b[ax];
          if (idx[ax] < p.out[ax]) break;
          ia -= p.stride_a[ax] * idx[ax];
          ib -= p.stride_b[ax] * idx[ax];
          idx[ax] = 0;
        }
      }
      return;
    }
  }
}

enum class BinOp { add, sub, mul };

Tensor binary(const Tensor& a, const Tensor& b, BinOp op, const char* name) {
  const Bcast p = plan_broadcast(a, b, name);
  const auto av = a.data();
  const auto bv = b.data();
  std::vector<double> out(numel(p.out));
  switch (op) {
    case BinOp::add:
      for_each_pair(p, av.size(), bv.size(),
                    [&](std::size_t i, std::size_t ia, std::size_t ib) { out[i] = av[ia] + bv[ib]; });
      break;
    case BinOp::sub:
      for_each_pair(p, av.size(), bv.size(),
                    [&](std::size_t i, std::size_t ia, std::size_t ib) { out[i] = av[ia] - bv[ib]; });
      break;
    case BinOp::mul:
      for_each_pair(p, av.size(), bv.size(),
                    [&](std::size_t i, std::size_t ia, std::size_t ib) { out[i] = av[ia] * bv[ib]; });
      break;
  }
  Tensor y = make(p.out, std::move(out));
  if (recording({&a, &b})) {
    NodePtr an = a.node(), bn = b.node();
    Node* yn = y.node().get();
    Tape::current()->record(y.node(), [an, bn, yn, p, op]() {
      const double* g = yn->grad.data();
      double* ga = grad_of(an);
      double* gb = grad_of(bn);
      const auto& av = an->value;
      const auto& bv = bn->value;
      for_each_pair(p, av.size(), bv.size(), [&](std::size_t i, std::size_t ia, std::size_t ib) {
        switch (op) {
          case BinOp::add:
            if (ga) ga[ia] += g[i];
            if (gb) gb[ib] += g[i];
            break;
          case BinOp::sub:
            if (ga) ga[ia] += g[i];
            if (gb) gb[ib] -= g[i];
            break;
          case BinOp::mul:
            if (ga) ga[ia] += g[i] * bv[ib];
            if (gb) gb[ib] += g[i] * av[ia];
            break;
        }
      });
    });
  }
  return y;
}

// Pointwise op with derivative expressed through input x and output y.
template <class F, class D>
Tensor pointwise(const Tensor& x, F f, D dfdx) {
  const auto xv = x.data();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  Tensor y = make(x.shape(), std::move(out));
  if (recording({&x})) {
    NodePtr xn = x.node();
    Node* yn = y.node().get();
    Tape::current()->record(y.node(), [xn, yn, dfdx]() {
      double* gx = grad_of(xn);
      if (!gx) return;
      const double* g = yn->grad.data();
      for (std::size_t i = 0; i < xn->value.size(); ++i) {
        gx[i] += g[i] * dfdx(xn->value[i], yn->value[i]);
      }
    });
  }
  return y;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::add, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::sub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::mul, "mul"); }

Tensor add_scalar(const Tensor& a, double c) {
  return pointwise(
      a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

Tensor scale(const Tensor& a, double c) {
  return pointwise(
      a, [c](double x) { return x * c; }, [c](double, double) { return c; });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor relu(const Tensor& x) {
  return pointwise(
      x, [](double v) { return v < 0.0 ? 0.0 : v; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor gelu(const Tensor& x) {
  constexpr double k = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double c = 0.044715;
  return pointwise(
      x,
      [](double v) { return 0.5 * v * (1.0 + std::tanh(k * (v + c * v * v * v))); },
      [](double v, double) {
        const double u = k * (v + c * v * v * v);
        const double t = std::tanh(u);
        const double du = k * (1.0 + 3.0 * c * v * v);
        return 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du;
      });
}

Tensor tanh(const Tensor& x) {
  return pointwise(
      x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& x) {
  return pointwise(
      x,
      [](double v) {
        if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor exp(const Tensor& x) {
  return pointwise(
      x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  return pointwise(
      x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor square(const Tensor& x) {
  return pointwise(
      x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

// ------------------------------------------------------------------ matmul

Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_b) {
  if (a.rank() < 2 || b.rank() < 2) {
    throw ShapeError("matmul: operands need rank >= 2, got " + to_string(a.shape()) + " and " +
                     to_string(b.shape()));
  }
  const std::size_t M = a.dim(-2), K = a.dim(-1);
  const std::size_t bk = transpose_b ? b.dim(-1) : b.dim(-2);
  const std::size_t N = transpose_b ? b.dim(-2) : b.dim(-1);
  const std::size_t batch = a.size() / (M * K);
  const bool shared_b = b.rank() == 2;
  bool ok = bk == K;
  if (!shared_b) {
    ok = ok && b.rank() == a.rank() &&
         std::equal(a.shape().begin(), a.shape().end() - 2, b.shape().begin());
  }
  if (!ok) {
    throw ShapeError("matmul: incompatible shapes " + to_string(a.shape()) + " and " +
                     to_string(b.shape()) + (transpose_b ? " (b transposed)" : ""));
  }
  Shape out_shape(a.shape().begin(), a.shape().end() - 1);
  out_shape.push_back(N);
  std::vector<double> out(batch * M * N, 0.0);
  const double* A = a.data().data();
  const double* B = b.data().data();
  const std::size_t b_stride = shared_b ? 0 : K * N;
  // A shared right operand lets the whole batch be treated as one tall matrix.
  const std::size_t rows = shared_b ? batch * M : M;
  const std::size_t loops = shared_b ? 1 : batch;
  for (std::size_t bi = 0; bi < loops; ++bi) {
    const double* Ab = A + bi * rows * K;
    const double* Bb = B + bi * b_stride;
    double* Cb = out.data() + bi * rows * N;
    for (std::size_t m = 0; m < rows; ++m) {
      double* crow = Cb + m * N;
      const double* arow = Ab + m * K;
      if (!transpose_b) {
        for (std::size_t k = 0; k < K; ++k) {
          const double av = arow[k];
          const double* brow = Bb + k * N;
          for (std::size_t n = 0; n < N; ++n) crow[n] += av * brow[n];
        }
      } else {
        for (std::size_t n = 0; n < N; ++n) {
          const double* brow = Bb + n * K;
          double s = 0.0;
          for (std::size_t k = 0; k < K; ++k) s += arow[k] * brow[k];
          crow[n] = s;
        }
      }
    }
  }
  Tensor y = make(std::move(out_shape), std::move(out));
  if (recording({&a, &b})) {
    NodePtr an = a.node(), bn = b.node();
    Node* yn = y.node().get();
    Tape::current()->record(y.node(), [=]() {
      const double* G = yn->grad.data();
      double* gA = grad_of(an);
      double* gB = grad_of(bn);
      const double* A = an->value.data();
      const double* B = bn->value.data();
      for (std::size_t bi = 0; bi < loops; ++bi) {
        const double* Ab = A + bi * rows * K;
        const double* Bb = B + bi * b_stride;
        const double* Gb = G + bi * rows * N;
        if (gA) {
          double* gAb = gA + bi * rows * K;
          for (std::size_t m = 0; m < rows; ++m) {
            const double* grow = Gb + m * N;
            double* garow = gAb + m * K;
            if (!transpose_b) {
              for (std::size_t k = 0; k < K; ++k) {
                const double* brow = Bb + k * N;
                double s = 0.0;
                for (std::size_t n = 0; n < N; ++n) s += grow[n] * brow[n];
                garow[k] += s;
              }
            } else {
              for (std::size_t n = 0; n < N; ++n) {
                const double gv = grow[n];
                const double* brow = Bb + n * K;
                for (std::size_t k = 0; k < K; ++k) garow[k] += gv * brow[k];
              }
            }
          }
        }
        if (gB) {
          double* gBb = gB + bi * b_stride;
          for (std::size_t m = 0; m < rows; ++m) {
            const double* grow = Gb + m * N;
            const double* arow = Ab + m * K;
            if (!transpose_b) {
              for (std::size_t k = 0; k < K; ++k) {
                const double av = arow[k];
                double* gbrow = gBb + k * N;
                for (std::size_t n = 0; n < N; ++n) gbrow[n] += av * grow[n];
              }
            } else {
              for (std::size_t n = 0; n < N; ++n) {
                const double gv = grow[n];
                double* gbrow = gBb + n * K;
                for (std::size_t k = 0; k < K; ++k) gbrow[k] += gv * arow[k];
              }
            }
          }
        }
      }
    });
  }
  return y;
}

// --------------------------------------------------------------- reductions

Tensor sum(const Tensor& x) {
  const auto xv = x.data();
  double s = 0.0;
  for (double v : xv) s += v;
  Tensor y = Tensor::scalar(s);
  if (recording({&x})) {
    NodePtr xn = x.node();
    Node* yn = y.node().get();
    Tape::current()->record(y.node(), [xn, yn]() {
      double* gx = grad_of(xn);
      if (!gx) return;
      const double g = yn->grad[0];
      for (std::size_t i = 0; i < xn->value.size(); ++i) gx[i] += g;
    });
  }
  return y;
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.size())); }

Tensor sum_axis(const Tensor& x, int axis, bool keepdim) {
  const std::size_t ax = norm_axis(x, axis, "sum_axis");
  const AxisSplit s = split_at(x.shape(), ax);
  Shape out_shape = x.shape();
  if (keepdim) {
    out_shape[ax] = 1;
  } else {
    out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(ax));
  }
  std::vector<double> out(s.outer * s.inner, 0.0);
  const auto xv = x.data();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t j = 0; j < s.n; ++j)
      for (std::size_t i = 0; i < s.inner; ++i)
        out[o * s.inner + i] += xv[(o * s.n + j) * s.inner + i];
  Tensor y = make(std::move(out_shape), std::move(out));
  if (recording({&x})) {
    NodePtr xn = x.node();
    Node* yn = y.node().get();
    Tape::current()->record(y.node(), [xn, yn, s]() {
      double* gx = grad_of(xn);
      if (!gx) return;
      const double* g = yn->grad.data();
      for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t j = 0; j < s.n; ++j)
          for (std::size_t i = 0; i < s.inner; ++i)
            gx[(o * s.n + j) * s.inner + i] += g[o * s.inner + i];
    });
  }
  return y;
}

Tensor mean_axis(const Tensor& x, int axis, bool keepdim) {
  const std::size_t n = x.shape()[norm_axis(x, axis, "mean_axis")];
  return scale(sum_axis(x, axis, keepdim), 1.0 / static_cast<double>(n));
}

// ----------------------------------------------------------- normalisers

Tensor softmax(const Tensor& x) {
  const std::size_t n = last_dim(x, "softmax");
  const std::size_t rows = x.size() / n;
  const auto xv = x.data();
  std::vector<double> out(xv.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xv.data() + r * n;
    double* o = out.data() + r * n;
    const double mx = *std::max_element(in, in + n);
    double z = 0.0;
    for (std::size_t i = 0; i < n; ++i) z += (o[i] = std::exp(in[i] - mx));
    for (std::size_t i = 0; i < n; ++i) o[i] /= z;
  }
  Tensor y = make(x.shape(), std::move(out));
  if (recording({&x})) {
    NodePtr xn = x.node();
    Node* yn = y.node().get();
    Tape::current()->record(y.node(), [xn, yn, n, rows]() {
      double* gx = grad_of(xn);
      if (!gx) return;
      const double* g = yn->grad.data();
      const double* yv = yn->value.data();
      for (std::size_t r = 0; r < rows; ++r) {
        double dot = 0.0;
        for (std::size_t i = 0; i < n; ++i) dot += g[r * n + i] * yv[r * n + i];
        for (std::size_t i = 0; i < n; ++i) gx[r * n + i] += yv[r * n + i] * (g[r * n + i] - dot);
      }
    });
  }
  return y;
}

Tensor log_softmax(const Tensor& x) {
  const std::size_t n = last_dim(x, "log_softmax");
  const std::size_t rows = x.size() / n;
  const auto xv = x.data();
  std::vector<double> out(xv.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xv.data() + r * n;
    double* o = out.data() + r * n;
    const double mx = *std::max_element(in, in + n);
    double z = 0.0;
    for (std::size_t i = 0; i < n; ++i) z += std::exp(in[i] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t i = 0; i < n; ++i) o[i] = in[i] - lse;
  }
  Tensor y = make(x.shape(), std::move(out));
  if (recording({&x})) {
    NodePtr xn = x.node();
    Node* yn = y.node().get();
    Tape::current()->record(y.node(), [xn, yn, n, rows]() {
      double* gx = grad_of(xn);
      if (!gx) return;
      const double* g = yn->grad.data();
      const double* yv = yn->value.data();
      for (std::size_t r = 0; r < rows; ++r) {
        double gs = 0.0;
        for (std::size_t i = 0; i < n; ++i) gs += g[r * n + i];
        for (std::size_t i = 0; i < n; ++i)
          gx[r * n + i] += g[r * n + i] - std::exp(yv[r * n + i]) * gs;
      }
    });
  }
  return y;
}

Tensor layer_norm(const Tensor& x, double eps) {
  const std::size_t n = last_dim(x, "layer_norm");
  const std::size_t rows = x.size() / n;
  const auto xv = x.data();
  std::vector<double> out(xv.size());
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xv.data() + r * n;
    double mu = 0.0;
    for (std::size_t i = 0; i < n; ++i) mu += in[i];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) var += (in[i] - mu) * (in[i] - mu);
    var /= static_cast<double>(n);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t i = 0; i < n; ++i) out[r * n + i] = (in[i] - mu) * inv_std[r];
  }
  Tensor y = make(x.shape(), std::move(out));
  if (recording({&x})) {
    NodePtr xn = x.node();
    Node* yn = y.node().get();
    Tape::current()->record(y.node(), [xn, yn, n, rows, inv_std = std::move(inv_std)]() {
      double* gx = grad_of(xn);
      if (!gx) return;
      const double* g = yn->grad.data();
      const double* yv = yn->value.data();
      const double inv_n = 1.0 / static_cast<double>(n);
      for (std::size_t r = 0; r < rows; ++r) {
        double gm = 0.0, gy = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          gm += g[r * n + i];
          gy += g[r * n + i] * yv[r * n + i];
        }
        gm *= inv_n;
        gy *= inv_n;
        for (std::size_t i = 0; i < n; ++i)
          gx[r * n + i] += inv_std[r] * (g[r * n + i] - gm - yv[r * n + i] * gy);
      }
    });
  }
  return y;
}

Tensor l2_norm(const Tensor& x) {
  const std::size_t n = last_dim(x, "l2_norm");
  const std::size_t rows = x.size() / n;
  const auto xv = x.data();
  std::vector<double> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += xv[r * n + i] * xv[r * n + i];
    out[r] = std::sqrt(s);
  }
  Shape shape(x.shape().begin(), x.shape().end() - 1);
  Tensor y = make(std::move(shape), std::move(out));
  if (recording({&x})) {
    NodePtr xn = x.node();
    Node* yn = y.node().get();
    Tape::current()->record(y.node(), [xn, yn, n, rows]() {
      double* gx = grad_of(xn);
      if (!gx) return;
      for (std::size_t r = 0; r < rows; ++r) {
        const double nr = yn->value[r];
        if (nr == 0.0) continue;
        const double g = yn->grad[r] / nr;
        for (std::size_t i = 0; i < n; ++i) gx[r * n + i] += g * xn->value[r * n + i];
      }
    });
  }
  return y;
}

Tensor cosine_similarity(const Tensor& a, const Tensor& b, double eps) {
  if (a.shape() != b.shape()) {
    throw ShapeError("cosine_similarity: shape mismatch " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
  }
  const std::size_t n = last_dim(a, "cosine_similarity");
  const std::size_t rows = a.size() / n;
  const auto av = a.data();
  const auto bv = b.data();
  std::vector<double> out(rows), na(rows), nb(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double dot = 0.0, sa = 0.0, sb = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double x = av[r * n + i], y = bv[r * n + i];
      dot += x * y;
      sa += x * x;
      sb += y * y;
    }
    na[r] = std::max(std::sqrt(sa), eps);
    nb[r] = std::max(std::sqrt(sb), eps);
    out[r] = dot / (na[r] * nb[r]);
  }
  Shape shape(a.shape().begin(), a.shape().end() - 1);
  Tensor y = make(std::move(shape), std::move(out));
  if (recording({&a, &b})) {
    NodePtr an = a.node(), bn = b.node();
    Node* yn = y.node().get();
    Tape::current()->record(y.node(), [an, bn, yn, n, rows, eps, na = std::move(na),
                                       nb = std::move(nb)]() {
      double* ga = grad_of(an);
      double* gb = grad_of(bn);
      const double* A = an->value.data();
      const double* B = bn->value.data();
      for (std::size_t r = 0; r < rows; ++r) {
        const double g = yn->grad[r];
        const double c = yn->value[r];
        const double inv = 1.0 / (na[r] * nb[r]);
        // Below eps the norm is a constant, so only the dot term survives.
        const double ca = na[r] > eps ? c / (na[r] * na[r]) : 0.0;
        const double cb = nb[r] > eps ? c / (nb[r] * nb[r]) : 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          const double x = A[r * n + i], z = B[r * n + i];
          if (ga) ga[r * n + i] += g * (z * inv - x * ca);
          if (gb) gb[r * n + i] += g * (x * inv - z * cb);
        }
      }
    });
  }
  return y;
}

// ------------------------------------------------------------- structural

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.size()) {
    throw ShapeError("reshape: cannot view " + to_string(x.shape()) + " as " + to_string(shape));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  Tensor y = make(std::move(shape), std::move(out));
  if (recording({&x})) {
    NodePtr xn = x.node();
    Node* yn = y.node().get();
    Tape::current()->record(y.node(), [xn, yn]() {
      double* gx = grad_of(xn);
      if (!gx) return;
      for (std::size_t i = 0; i < yn->grad.size(); ++i) gx[i] += yn->grad[i];
    });
  }
  return y;
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const std::size_t ax = norm_axis(parts[0], axis, "concat");
  Shape out_shape = parts[0].shape();
  std::size_t total = 0;
  for (const auto& p : parts) {
    bool ok = p.rank() == out_shape.size();
    for (std::size_t i = 0; ok && i < out_shape.size(); ++i)
      if (i != ax && p.shape()[i] != out_shape[i]) ok = false;
    if (!ok) {
      throw ShapeError("concat: shape " + to_string(p.shape()) + " incompatible with " +
                       to_string(parts[0].shape()) + " along axis " + std::to_string(ax));
    }
    total += p.shape()[ax];
  }
  out_shape[ax] = total;
  const AxisSplit s = split_at(out_shape, ax);
  std::vector<double> out(numel(out_shape));
  std::size_t offset = 0;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    offsets.push_back(offset);
    const std::size_t pn = p.shape()[ax];
    const auto pv = p.data();
    for (std::size_t o = 0; o < s.outer; ++o)
      std::copy_n(pv.data() + o * pn * s.inner, pn * s.inner,
                  out.data() + (o * total + offset) * s.inner);
    offset += pn;
  }
  Tensor y = make(std::move(out_shape), std::move(out));
  bool any = false;
  if (Tape::current())
    for (const auto& p : parts) any = any || p.requires_grad();
  if (any) {
    std::vector<NodePtr> nodes;
    for (const auto& p : parts) nodes.push_back(p.node());
    Node* yn = y.node().get();
    Tape::current()->record(y.node(), [nodes, yn, s, total, offsets, ax]() {
      for (std::size_t k = 0; k < nodes.size(); ++k) {
        double* gp = grad_of(nodes[k]);
        if (!gp) continue;
        const std::size_t pn = nodes[k]->shape[ax];
        for (std::size_t o = 0; o < s.outer; ++o) {
          const double* src = yn->grad.data() + (o * total + offsets[k]) * s.inner;
          double* dst = gp + o * pn * s.inner;
          for (std::size_t i = 0; i < pn * s.inner; ++i) dst[i] += src[i];
        }
      }
    });
  }
  return y;
}

Tensor slice(const Tensor& x, int axis, std::size_t start, std::size_t length) {
  const std::size_t ax = norm_axis(x, axis, "slice");
  const AxisSplit s = split_at(x.shape(), ax);
  if (start + length > s.n || length == 0) {
    throw ShapeError("slice: range [" + std::to_string(start) + ", " +
                     std::to_string(start + length) + ") invalid for shape " +
                     to_string(x.shape()) + " axis " + std::to_string(ax));
  }
  Shape out_shape = x.shape();
  out_shape[ax] = length;
  std::vector<double> out(s.outer * length * s.inner);
  const auto xv = x.data();
  for (std::size_t o = 0; o < s.outer; ++o)
    std::copy_n(xv.data() + (o * s.n + start) * s.inner, length * s.inner,
                out.data() + o * length * s.inner);
  Tensor y = make(std::move(out_shape), std::move(out));
  if (recording({&x})) {
    NodePtr xn = x.node();
    Node* yn = y.node().get();
    Tape::current()->record(y.node(), [xn, yn, s, start, length]() {
      double* gx = grad_of(xn);
      if (!gx) return;
      for (std::size_t o = 0; o < s.outer; ++o) {
        const double* src = yn->grad.data() + o * length * s.inner;
        double* dst = gx + (o * s.n + start) * s.inner;
        for (std::size_t i = 0; i < length * s.inner; ++i) dst[i] += src[i];
      }
    });
  }
  return y;
}

Tensor index_select(const Tensor& x, int axis, const std::vector<std::size_t>& indices) {
  const std::size_t ax = norm_axis(x, axis, "index_select");
  const AxisSplit s = split_at(x.shape(), ax);
  if (indices.empty()) throw ShapeError("index_select: empty index list");
  for (auto i : indices) {
    if (i >= s.n) {
      throw ShapeError("index_select: index " + std::to_string(i) + " out of range for shape " +
                       to_string(x.shape()) + " axis " + std::to_string(ax));
    }
  }
  const std::size_t m = indices.size();
  Shape out_shape = x.shape();
  out_shape[ax] = m;
  std::vector<double> out(s.outer * m * s.inner);
  const auto xv = x.data();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t j = 0; j < m; ++j)
      std::copy_n(xv.data() + (o * s.n + indices[j]) * s.inner, s.inner,
                  out.data() + (o * m + j) * s.inner);
  Tensor y = make(std::move(out_shape), std::move(out));
  if (recording({&x})) {
    NodePtr xn = x.node();
    Node* yn = y.node().get();
    Tape::current()->record(y.node(), [xn, yn, s, m, indices]() {
      double* gx = grad_of(xn);
      if (!gx) return;
      for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t j = 0; j < m; ++j) {
          const double* src = yn->grad.data() + (o * m + j) * s.inner;
          double* dst = gx + (o * s.n + indices[j]) * s.inner;
          for (std::size_t i = 0; i < s.inner; ++i) dst[i] += src[i];
        }
    });
  }
  return y;
}

// ------------------------------------------------------------- temporal

Tensor unfold_time(const Tensor& x, std::size_t kernel, std::size_t stride) {
  if (x.rank() != 3) throw ShapeError("unfold_time: expected [B, L, C], got " + to_string(x.shape()));
  const std::size_t B = x.dim(0), L = x.dim(1), C = x.dim(2);
  if (kernel == 0 || stride == 0 || L < kernel) {
    throw ShapeError("unfold_time: kernel " + std::to_string(kernel) + " does not fit length " +
                     std::to_string(L));
  }
  const std::size_t Lo = (L - kernel) / stride + 1;
  const std::size_t row = kernel * C;
  std::vector<double> out(B * Lo * row);
  const auto xv = x.data();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t t = 0; t < Lo; ++t)
      std::copy_n(xv.data() + (b * L + t * stride) * C, row, out.data() + (b * Lo + t) * row);
  Tensor y = make({B, Lo, row}, std::move(out));
  if (recording({&x})) {
    NodePtr xn = x.node();
    Node* yn = y.node().get();
    Tape::current()->record(y.node(), [xn, yn, B, L, C, Lo, row, stride]() {
      double* gx = grad_of(xn);
      if (!gx) return;
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t t = 0; t < Lo; ++t) {
          const double* src = yn->grad.data() + (b * Lo + t) * row;
          double* dst = gx + (b * L + t * stride) * C;
          for (std::size_t i = 0; i < row; ++i) dst[i] += src[i];
        }
    });
  }
  return y;
}

Tensor avg_pool_time(const Tensor& x, std::size_t width, std::size_t stride) {
  if (x.rank() < 2) throw ShapeError("avg_pool_time: expected [..., L, C], got " + to_string(x.shape()));
  if (width % 2 == 0 || stride == 0) throw ShapeError("avg_pool_time: width must be odd, stride > 0");
  const std::size_t L = x.dim(-2), C = x.dim(-1);
  const std::size_t outer = x.size() / (L * C);
  const std::size_t Lo = L / stride;
  if (Lo == 0) {
    throw ShapeError("avg_pool_time: length " + std::to_string(L) + " too short for stride " +
                     std::to_string(stride));
  }
  const long half = static_cast<long>(width / 2);
  const double w = 1.0 / static_cast<double>(width);
  Shape out_shape = x.shape();
  out_shape[out_shape.size() - 2] = Lo;
  std::vector<double> out(outer * Lo * C, 0.0);
  const auto xv = x.data();
  auto src_index = [L](long i) {
    return static_cast<std::size_t>(std::clamp(i, 0L, static_cast<long>(L) - 1));
  };
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t t = 0; t < Lo; ++t) {
      double* dst = out.data() + (o * Lo + t) * C;
      const long centre = static_cast<long>(stride * t);
      // Mean taken as centre plus mean deviation so constants pass through exactly.
      const double* mid = xv.data() + (o * L + src_index(centre)) * C;
      for (long tau = -half; tau <= half; ++tau) {
        const double* src = xv.data() + (o * L + src_index(centre + tau)) * C;
        for (std::size_t c = 0; c < C; ++c) dst[c] += src[c] - mid[c];
      }
      for (std::size_t c = 0; c < C; ++c) dst[c] = mid[c] + w * dst[c];
    }
  Tensor y = make(std::move(out_shape), std::move(out));
  if (recording({&x})) {
    NodePtr xn = x.node();
    Node* yn = y.node().get();
    Tape::current()->record(y.node(), [=]() {
      double* gx = grad_of(xn);
      if (!gx) return;
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t t = 0; t < Lo; ++t) {
          const double* g = yn->grad.data() + (o * Lo + t) * C;
          const long centre = static_cast<long>(stride * t);
          for (long tau = -half; tau <= half; ++tau) {
            double* dst = gx + (o * L + src_index(centre + tau)) * C;
            for (std::size_t c = 0; c < C; ++c) dst[c] += w * g[c];
          }
        }
    });
  }
  return y;
}

Tensor interpolate_time(const Tensor& x, std::size_t out_len, double factor) {
  if (x.rank() < 2) {
    throw ShapeError("interpolate_time: expected [..., L, C], got " + to_string(x.shape()));
  }
  if (out_len == 0 || !(factor > 0.0)) throw ShapeError("interpolate_time: bad target");
  const std::size_t L = x.dim(-2), C = x.dim(-1);
  const std::size_t outer = x.size() / (L * C);
  std::vector<std::size_t> i0(out_len);
  std::vector<double> frac(out_len);
  for (std::size_t t = 0; t < out_len; ++t) {
    const double pos = std::min(static_cast<double>(t) / factor, static_cast<double>(L - 1));
    i0[t] = static_cast<std::size_t>(std::floor(pos));
    frac[t] = pos - static_cast<double>(i0[t]);
    if (i0[t] + 1 >= L) {
      i0[t] = L - 1;
      frac[t] = 0.0;
    }
  }
  Shape out_shape = x.shape();
  out_shape[out_shape.size() - 2] = out_len;
  std::vector<double> out(outer * out_len * C);
  const auto xv = x.data();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t t = 0; t < out_len; ++t) {
      const double* s0 = xv.data() + (o * L + i0[t]) * C;
      const double* s1 = frac[t] > 0.0 ? s0 + C : s0;
      double* dst = out.data() + (o * out_len + t) * C;
      for (std::size_t c = 0; c < C; ++c) dst[c] = (1.0 - frac[t]) * s0[c] + frac[t] * s1[c];
    }
  Tensor y = make(std::move(out_shape), std::move(out));
  if (recording({&x})) {
    NodePtr xn = x.node();
    Node* yn = y.node().get();
    Tape::current()->record(y.node(), [=]() {
      double* gx = grad_of(xn);
      if (!gx) return;
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t t = 0; t < out_len; ++t) {
          const double* g = yn->grad.data() + (o * out_len + t) * C;
          double* d0 = gx + (o * L + i0[t]) * C;
          for (std::size_t c = 0; c < C; ++c) d0[c] += (1.0 - frac[t]) * g[c];
          if (frac[t] > 0.0) {
            double* d1 = d0 + C;
            for (std::size_t c = 0; c < C; ++c) d1[c] += frac[t] * g[c];
          }
        }
    });
  }
  return y;
}

}  // namespace avsync::diff
