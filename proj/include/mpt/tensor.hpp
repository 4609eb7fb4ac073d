#pragma once

// Dense f64 tensors with reverse-mode automatic differentiation.
//
// A Tensor is a shared handle to a node. Operations whose inputs require
// gradients record their output node on the thread-local tape; backward()
// replays the tape in reverse recorded order. Leaves (parameters, inputs)
// are never recorded and accumulate gradients across backward calls until
// zero_grad().

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace mpt {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  bool recorded = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  std::vector<double>& grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t numel() const { return node_->data.size(); }

  std::span<const double> data() const { return node_->data; }
  /// Direct write access; only meaningful for leaves (parameters/inputs).
  std::span<double> mutable_data() { return node_->data; }
  double item() const;
  double operator[](std::size_t flat) const { return node_->data[flat]; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  bool has_grad() const { return !node_->grad.empty(); }
  /// Gradient buffer (zeros if nothing has been accumulated yet).
  std::span<const double> grad() const { return node_->grad_buffer(); }
  std::span<double> mutable_grad() { return node_->grad_buffer(); }
  void zero_grad() { node_->grad.clear(); }

  /// Copy with no autodiff history.
  Tensor detach() const;

  const std::shared_ptr<detail::Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Thread-local operation tape.
class Tape {
 public:
  static Tape& current();

  bool grad_enabled() const { return grad_enabled_; }
  void set_grad_enabled(bool on) { grad_enabled_ = on; }
  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

  /// Creates the output node of an op. It is recorded (and requires grad)
  /// only when recording is enabled and some input requires grad.
  Tensor record(Shape shape, std::vector<double> data, std::vector<Tensor> inputs,
                std::function<void(detail::Node&)> backward);

  /// Runs reverse accumulation from `loss`. Leaf gradients accumulate.
  void backward(const Tensor& loss, bool retain_tape);

 private:
  std::vector<std::shared_ptr<detail::Node>> nodes_;
  bool grad_enabled_ = true;
};

/// Disables recording for the enclosing scope (inference paths).
class NoGradGuard {
 public:
  NoGradGuard() : previous_(Tape::current().grad_enabled()) {
    Tape::current().set_grad_enabled(false);
  }
  ~NoGradGuard() { Tape::current().set_grad_enabled(previous_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Clears the tape on entry and exit.
class TapeScope {
 public:
  TapeScope() { Tape::current().clear(); }
  ~TapeScope() { Tape::current().clear(); }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;
};

/// Populates gradients of every requires_grad tensor reachable from `loss`.
/// `loss` must be a recorded scalar. The tape is freed afterwards unless
/// `retain_tape` is set; calling again on a retained tape accumulates.
void backward(const Tensor& loss, bool retain_tape = false);

}  // namespace mpt
