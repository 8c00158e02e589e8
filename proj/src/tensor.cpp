#include "cwt/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

namespace cwt {

namespace {
thread_local bool g_grad_enabled = true;
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t extent : shape) n *= extent;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

namespace detail {

std::vector<double>& Node::ensure_grad() {
  if (grad.empty()) grad.assign(data.size(), 0.0);
  return grad;
}

void Node::accumulate(std::span<const double> g) {
  auto& dst = ensure_grad();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i];
}

}  // namespace detail

namespace {

std::shared_ptr<detail::Node> make_leaf(Shape shape, std::vector<double> values) {
  for (std::size_t extent : shape) {
    if (extent == 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
  }
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("shape " + shape_str(shape) + " does not match " +
                     std::to_string(values.size()) + " values");
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->data = std::move(values);
  return node;
}

const detail::Node& checked(const std::shared_ptr<detail::Node>& node) {
  if (!node) throw Error("use of an undefined tensor");
  return *node;
}

}  // namespace

Tensor::Tensor(Shape shape, double fill) {
  const std::size_t n = shape_numel(shape);
  node_ = make_leaf(std::move(shape), std::vector<double>(n, fill));
}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : node_(make_leaf(std::move(shape), std::move(values))) {}

Tensor Tensor::scalar(double value) { return Tensor(Shape{1}, std::vector<double>{value}); }

Tensor Tensor::randn(Shape shape, CounterRng& rng, double stddev) {
  std::vector<double> values(shape_numel(shape));
  for (double& v : values) v = stddev * rng.normal();
  return Tensor(std::move(shape), std::move(values));
}

const Shape& Tensor::shape() const { return checked(node_).shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  const Shape& s = shape();
  if (axis >= s.size()) throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  return s[axis];
}

std::size_t Tensor::numel() const { return checked(node_).data.size(); }

std::span<const double> Tensor::data() const { return checked(node_).data; }

std::span<double> Tensor::mutable_data() {
  checked(node_);
  if (node_->frozen) throw FrozenError("attempt to modify a frozen tensor");
  if (!node_->is_leaf) throw Error("only leaf tensors may be modified in place");
  return node_->data;
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return node_->data[0];
}

double Tensor::at(std::size_t row, std::size_t col) const {
  if (rank() != 2) throw ShapeError("at(row, col) needs a matrix, got " + shape_str(shape()));
  return node_->data[row * node_->shape[1] + col];
}

bool Tensor::requires_grad() const { return checked(node_).requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
  checked(node_);
  if (on && node_->frozen) throw FrozenError("cannot enable gradients on a frozen tensor");
  node_->requires_grad = on;
  return *this;
}

bool Tensor::has_grad() const { return !checked(node_).grad.empty(); }

std::span<const double> Tensor::grad() const { return checked(node_).grad; }

std::span<double> Tensor::mutable_grad() {
  checked(node_);
  return node_->ensure_grad();
}

void Tensor::zero_grad() {
  checked(node_);
  node_->grad.clear();
}

bool Tensor::frozen() const { return checked(node_).frozen; }

void Tensor::freeze() {
  checked(node_);
  node_->frozen = true;
  node_->requires_grad = false;
  node_->grad.clear();
}

bool Tensor::is_leaf() const { return checked(node_).is_leaf; }

const char* Tensor::op_name() const { return checked(node_).op; }

Tensor Tensor::detach() const {
  const auto& n = checked(node_);
  return Tensor(n.shape, n.data);
}

Tensor Tensor::from_node(std::shared_ptr<detail::Node> node) {
  Tensor t;
  t.node_ = std::move(node);
  return t;
}

void backward(const Tensor& loss) {
  if (!loss.defined()) throw Error("backward on an undefined tensor");
  if (loss.numel() != 1) throw ShapeError("backward needs a scalar loss, got " + shape_str(loss.shape()));
  if (!loss.requires_grad()) throw Error("loss does not depend on any tensor requiring gradients");

  // Iterative post-order DFS gives a topological order (parents first).
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* parent = node->parents[next++].get();
      if (parent->requires_grad && !visited.count(parent)) {
        visited.insert(parent);
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (detail::Node* node : order) {
    if (!node->is_leaf) node->grad.assign(node->data.size(), 0.0);
  }
  loss.node()->ensure_grad()[0] += 1.0;

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* node = *it;
    if (!node->is_leaf && node->backward_fn) node->backward_fn(*node);
  }
}

bool grad_enabled() { return g_grad_enabled; }

GradModeGuard::GradModeGuard(bool enabled) : previous_(g_grad_enabled) { g_grad_enabled = enabled; }

GradModeGuard::~GradModeGuard() { g_grad_enabled = previous_; }

}  // namespace cwt
