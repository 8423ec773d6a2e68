#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace avsync::diff {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class GradientMap;
class Tape;

namespace detail {

// Storage behind a Tensor handle. Gradients are stamped with the id of the
// backward pass that produced them so stale values are never read.
struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  std::uint64_t grad_epoch = 0;
  bool requires_grad = false;
  bool leaf = true;
  std::uint64_t tape_id = 0;
  std::size_t tape_pos = 0;
};

using NodePtr = std::shared_ptr<Node>;

}  // namespace detail

/// Dense row-major f64 array with optional participation in reverse-mode
/// differentiation. Copies share storage; use clone() for a deep copy.
class Tensor {
 public:
  Tensor();

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor from(Shape shape, std::vector<double> values);
  static Tensor scalar(double value);
  /// Leaf tensor that receives gradients.
  static Tensor parameter(Shape shape, std::vector<double> values);

  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->value.size(); }
  /// Extent along `axis`; negative axes count from the back.
  std::size_t dim(int axis) const;

  std::span<const double> data() const { return node_->value; }
  /// Writable view. Only valid on leaves (parameters and constants).
  std::span<double> mutable_data();
  double item() const;
  double at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on);
  bool is_leaf() const { return node_->leaf; }

  /// Same values, cut from any tape.
  Tensor detach() const;
  Tensor clone() const;

  bool all_finite() const;
  /// Throws NonFiniteError naming `what` when any entry is NaN/Inf.
  void check_finite(const std::string& what) const;

  const void* id() const { return node_.get(); }
  bool valid() const { return static_cast<bool>(node_); }

  // Internal access for the op library.
  explicit Tensor(detail::NodePtr node) : node_(std::move(node)) {}
  const detail::NodePtr& node() const { return node_; }

 private:
  detail::NodePtr node_;
};

/// Gradients produced by one backward pass, keyed by tensor identity.
class GradientMap {
 public:
  /// Gradient of `t`; zeros when `t` did not influence the loss.
  std::vector<double> get(const Tensor& t) const;
  bool contains(const Tensor& t) const;
  std::size_t size() const { return grads_.size(); }

 private:
  friend class Tape;
  std::unordered_map<const void*, std::vector<double>> grads_;
};

/// Ordered record of differentiable operations. Ops executed while a Tape is
/// active on the current thread (see TapeScope) and touching a tensor that
/// requires grad are appended here; backward() replays them in reverse.
class Tape {
 public:
  using Backward = std::function<void()>;

  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  std::uint64_t id() const { return id_; }
  std::size_t size() const { return entries_.size(); }

  /// Reverse pass from a scalar loss. Gradients are returned for every leaf
  /// with requires_grad that the loss depends on.
  GradientMap backward(const Tensor& loss);

  void clear();

  // Op-library hooks.
  void record(const detail::NodePtr& out, Backward fn);
  static Tape* current();

 private:
  friend class TapeScope;
  struct Entry {
    detail::NodePtr out;
    Backward fn;
  };
  std::uint64_t id_;
  std::vector<Entry> entries_;
};

/// Activates a tape on the calling thread for the lifetime of the scope.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

/// Suspends recording on the calling thread (inference inside training code).
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape* previous_;
};

namespace detail {

/// Gradient buffer of `node` for the running backward pass, or nullptr when
/// the node does not take gradients.
double* grad_of(const NodePtr& node);
std::uint64_t active_epoch();

}  // namespace detail

}  // namespace avsync::diff
