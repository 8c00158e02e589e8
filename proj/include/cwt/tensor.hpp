#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cwt/rng.hpp"

namespace cwt {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

// Invalid user-supplied configuration or input data.
class ConfigError : public Error {
 public:
  using Error::Error;
};

class FrozenError : public Error {
 public:
  using Error::Error;
};

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until a backward pass reaches this node
  bool requires_grad = false;
  bool frozen = false;
  bool is_leaf = true;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  // Adds g into grad, allocating a zero buffer on first use.
  void accumulate(std::span<const double> g);
  std::vector<double>& ensure_grad();
};

}  // namespace detail

// Dense row-major array of doubles with optional participation in the
// reverse-mode tape. Copies share the underlying storage.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double value);
  static Tensor randn(Shape shape, CounterRng& rng, double stddev);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  // Writable view for leaves (parameters, inputs). Throws on frozen or
  // op-produced tensors.
  std::span<double> mutable_data();
  double item() const;
  double at(std::size_t i) const { return data()[i]; }
  double at(std::size_t row, std::size_t col) const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool on);
  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  bool frozen() const;
  // Permanently excludes this tensor from differentiation and updates.
  void freeze();

  bool is_leaf() const;
  const char* op_name() const;

  // Fresh leaf holding a copy of the values; no tape history.
  Tensor detach() const;

  const std::shared_ptr<detail::Node>& node() const { return node_; }
  static Tensor from_node(std::shared_ptr<detail::Node> node);

 private:
  std::shared_ptr<detail::Node> node_;
};

// Reverse-mode accumulation from a scalar loss. Leaf gradients accumulate;
// intermediate gradients are recomputed on every call.
void backward(const Tensor& loss);

bool grad_enabled();

// Sets tape recording on the current thread for its lifetime.
class GradModeGuard {
 public:
  explicit GradModeGuard(bool enabled);
  ~GradModeGuard();
  GradModeGuard(const GradModeGuard&) = delete;
  GradModeGuard& operator=(const GradModeGuard&) = delete;

 private:
  bool previous_;
};

class NoGradGuard : public GradModeGuard {
 public:
  NoGradGuard() : GradModeGuard(false) {}
};

}  // namespace cwt
