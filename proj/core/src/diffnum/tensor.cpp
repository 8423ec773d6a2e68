#include "avsync/diffnum/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>

namespace avsync::diff {

namespace {

std::atomic<std::uint64_t> g_tape_ids{0};
std::atomic<std::uint64_t> g_epochs{0};

thread_local Tape* t_current = nullptr;
thread_local std::uint64_t t_epoch = 0;
thread_local std::vector<detail::NodePtr>* t_leaves = nullptr;

detail::NodePtr make_node(Shape shape, std::vector<double> values) {
  if (numel(shape) != values.size()) {
    throw ShapeError("tensor: shape " + to_string(shape) + " holds " +
                     std::to_string(numel(shape)) + " values, got " +
                     std::to_string(values.size()));
  }
  auto n = std::make_shared<detail::Node>();
  n->shape = std::move(shape);
  n->value = std::move(values);
  return n;
}

}  // namespace

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor() : node_(make_node({}, {0.0})) {}

Tensor Tensor::zeros(Shape shape) {
  auto n = numel(shape);
  return Tensor(make_node(std::move(shape), std::vector<double>(n, 0.0)));
}

Tensor Tensor::full(Shape shape, double value) {
  auto n = numel(shape);
  return Tensor(make_node(std::move(shape), std::vector<double>(n, value)));
}

Tensor Tensor::from(Shape shape, std::vector<double> values) {
  return Tensor(make_node(std::move(shape), std::move(values)));
}

Tensor Tensor::scalar(double value) { return Tensor(make_node({}, {value})); }

Tensor Tensor::parameter(Shape shape, std::vector<double> values) {
  Tensor t(make_node(std::move(shape), std::move(values)));
  t.node_->requires_grad = true;
  return t;
}

std::size_t Tensor::dim(int axis) const {
  const int r = static_cast<int>(rank());
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw ShapeError("tensor: axis " + std::to_string(axis) +
                     " out of range for shape " + to_string(shape()));
  }
  return node_->shape[static_cast<std::size_t>(a)];
}

std::span<double> Tensor::mutable_data() {
  if (!node_->leaf) {
    throw std::logic_error("tensor: cannot mutate the output of a recorded op");
  }
  return node_->value;
}

double Tensor::item() const {
  if (size() != 1) {
    throw ShapeError("tensor: item() on shape " + to_string(shape()));
  }
  return node_->value[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  if (index.size() != rank()) {
    throw ShapeError("tensor: index rank mismatch for shape " + to_string(shape()));
  }
  std::size_t flat = 0;
  std::size_t i = 0;
  for (auto v : index) {
    if (v >= node_->shape[i]) throw std::out_of_range("tensor: index out of range");
    flat = flat * node_->shape[i] + v;
    ++i;
  }
  return node_->value[flat];
}

void Tensor::set_requires_grad(bool on) {
  if (!node_->leaf) {
    throw std::logic_error("tensor: requires_grad can only be toggled on leaves");
  }
  node_->requires_grad = on;
}

Tensor Tensor::detach() const { return Tensor(make_node(node_->shape, node_->value)); }

Tensor Tensor::clone() const {
  Tensor t(make_node(node_->shape, node_->value));
  t.node_->requires_grad = node_->leaf && node_->requires_grad;
  return t;
}

bool Tensor::all_finite() const {
  return std::all_of(node_->value.begin(), node_->value.end(),
                     [](double v) { return std::isfinite(v); });
}

void Tensor::check_finite(const std::string& what) const {
  for (std::size_t i = 0; i < node_->value.size(); ++i) {
    if (!std::isfinite(node_->value[i])) {
      std::ostringstream os;
      os << what << ": non-finite value " << node_->value[i] << " at flat index " << i
         << " of shape " << to_string(shape());
      throw NonFiniteError(os.str());
    }
  }
}

std::vector<double> GradientMap::get(const Tensor& t) const {
  auto it = grads_.find(t.id());
  if (it == grads_.end()) return std::vector<double>(t.size(), 0.0);
  return it->second;
}

bool GradientMap::contains(const Tensor& t) const { return grads_.count(t.id()) != 0; }

Tape::Tape() : id_(++g_tape_ids) {}

Tape::~Tape() {
  if (t_current == this) t_current = nullptr;
}

void Tape::record(const detail::NodePtr& out, Backward fn) {
  out->leaf = false;
  out->requires_grad = true;
  out->tape_id = id_;
  out->tape_pos = entries_.size();
  entries_.push_back({out, std::move(fn)});
}

Tape* Tape::current() { return t_current; }

void Tape::clear() { entries_.clear(); }

GradientMap Tape::backward(const Tensor& loss) {
  if (loss.size() != 1) {
    throw ShapeError("backward: loss must be scalar, got shape " + to_string(loss.shape()));
  }
  const auto& ln = loss.node();
  if (ln->leaf || ln->tape_id != id_ || ln->tape_pos >= entries_.size() ||
      entries_[ln->tape_pos].out != ln) {
    throw std::logic_error("backward: loss was not recorded on this tape (detached graph)");
  }

  const std::uint64_t epoch = ++g_epochs;
  const std::uint64_t saved_epoch = t_epoch;
  auto* saved_leaves = t_leaves;
  std::vector<detail::NodePtr> leaves;
  t_epoch = epoch;
  t_leaves = &leaves;

  struct Restore {
    std::uint64_t e;
    std::vector<detail::NodePtr>* l;
    ~Restore() {
      t_epoch = e;
      t_leaves = l;
    }
  } restore{saved_epoch, saved_leaves};

  detail::grad_of(ln)[0] = 1.0;
  for (std::size_t i = ln->tape_pos + 1; i-- > 0;) {
    auto& e = entries_[i];
    if (e.out->grad_epoch != epoch) continue;
    e.fn();
  }

  GradientMap result;
  for (auto& leaf : leaves) {
    result.grads_[leaf.get()] = std::move(leaf->grad);
    leaf->grad.clear();
    leaf->grad_epoch = 0;
  }
  for (auto& e : entries_) {
    if (e.out->grad_epoch == epoch) {
      std::vector<double>().swap(e.out->grad);
      e.out->grad_epoch = 0;
    }
  }
  return result;
}

TapeScope::TapeScope(Tape& tape) : previous_(t_current) { t_current = &tape; }
TapeScope::~TapeScope() { t_current = previous_; }

NoGradScope::NoGradScope() : previous_(t_current) { t_current = nullptr; }
NoGradScope::~NoGradScope() { t_current = previous_; }

namespace detail {

double* grad_of(const NodePtr& node) {
  if (!node->requires_grad || t_epoch == 0) return nullptr;
  if (node->grad_epoch != t_epoch) {
    node->grad.assign(node->value.size(), 0.0);
    node->grad_epoch = t_epoch;
    if (node->leaf && t_leaves) t_leaves->push_back(node);
  }
  return node->grad.data();
}

std::uint64_t active_epoch() { return t_epoch; }

}  // namespace detail

}  // namespace avsync::diff
