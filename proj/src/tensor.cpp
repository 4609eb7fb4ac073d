#include "mpt/tensor.hpp"

#include <algorithm>
#include <sstream>

#include "mpt/error.hpp"

namespace mpt {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  std::vector<double> v(shape_numel(shape), value);
  return from(std::move(shape), std::move(v), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("tensor shape " + shape_str(shape) + " does not match " +
                         std::to_string(values.size()) + " values");
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->data = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({1}, {value}, requires_grad); }

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
  return node_->data[0];
}

Tensor Tensor::detach() const { return from(shape(), node_->data, false); }

Tape& Tape::current() {
  thread_local Tape tape;
  return tape;
}

Tensor Tape::record(Shape shape, std::vector<double> data, std::vector<Tensor> inputs,
                    std::function<void(detail::Node&)> backward) {
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  bool any = false;
  if (grad_enabled_) {
    for (const auto& t : inputs) any = any || t.requires_grad();
  }
  if (any) {
    node->requires_grad = true;
    node->recorded = true;
    node->inputs.reserve(inputs.size());
    for (auto& t : inputs) node->inputs.push_back(t.node());
    node->backward = std::move(backward);
    nodes_.push_back(node);
  }
  return Tensor(std::move(node));
}

void Tape::backward(const Tensor& loss, bool retain_tape) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " +
                        (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  }
  const auto& root = loss.node();
  if (!root->recorded) throw ContractError("backward() on a loss that is not on the tape");
  auto it = std::find(nodes_.begin(), nodes_.end(), root);
  if (it == nodes_.end()) throw ContractError("backward() on a loss from a freed tape");

  // Intermediate gradients are per-pass; only leaves accumulate.
  for (auto& n : nodes_) n->grad.clear();
  root->grad_buffer()[0] = 1.0;
  for (auto rit = std::make_reverse_iterator(it + 1); rit != nodes_.rend(); ++rit) {
    auto& n = **rit;
    if (n.grad.empty()) continue;  // not downstream of the loss
    n.backward(n);
  }
  if (!retain_tape) clear();
}

void backward(const Tensor& loss, bool retain_tape) { Tape::current().backward(loss, retain_tape); }

}  // namespace mpt
