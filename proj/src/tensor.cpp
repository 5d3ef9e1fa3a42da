// SPDX-License-Identifier: Apache-2.0
#include "r2g/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "r2g/errors.hpp"

namespace r2g {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace detail {

std::vector<double>& Node::grad_buffer() {
  if (grad.empty()) grad.assign(value.size(), 0.0);
  return grad;
}

}  // namespace detail

namespace {
thread_local bool g_grad_enabled = true;

std::shared_ptr<detail::Node> make_leaf(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("tensor payload of " + std::to_string(values.size()) +
                         " values does not match shape " + shape_str(shape));
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  return node;
}
}  // namespace

bool GradMode::enabled() { return g_grad_enabled; }
void GradMode::set_enabled(bool on) { g_grad_enabled = on; }

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double fill, bool requires_grad) {
  std::vector<double> v(shape_numel(shape), fill);
  return Tensor(make_leaf(std::move(shape), std::move(v), requires_grad));
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  return Tensor(make_leaf(std::move(shape), std::move(values), requires_grad));
}

Tensor Tensor::scalar(double v, bool requires_grad) { return from({}, {v}, requires_grad); }

Tensor Tensor::randn(Shape shape, CounterRng& rng, double stddev, bool requires_grad) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = stddev * rng.normal();
  return from(std::move(shape), std::move(v), requires_grad);
}

Tensor Tensor::uniform(Shape shape, CounterRng& rng, double lo, double hi, bool requires_grad) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return from(std::move(shape), std::move(v), requires_grad);
}

const detail::Node& Tensor::checked() const {
  if (!node_) throw ContractError("use of an undefined tensor");
  return *node_;
}

const Shape& Tensor::shape() const { return checked().shape; }

std::size_t Tensor::dim(int axis) const {
  const auto& s = shape();
  const int r = static_cast<int>(s.size());
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(s));
  }
  return s[static_cast<std::size_t>(a)];
}

std::size_t Tensor::numel() const { return checked().value.size(); }

std::span<const double> Tensor::values() const { return checked().value; }

std::span<double> Tensor::mutable_values() {
  checked();
  if (!node_->is_leaf) throw ContractError(std::string("cannot mutate the output of op ") + node_->op);
  return node_->value;
}

double Tensor::item() const {
  const auto& n = checked();
  if (n.value.size() != 1) throw ContractError("item() on tensor of shape " + shape_str(n.shape));
  return n.value[0];
}

bool Tensor::requires_grad() const { return checked().requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
  checked();
  if (!node_->is_leaf) throw ContractError("requires_grad can only be set on leaves");
  node_->requires_grad = on;
  if (!on) node_->grad.clear();
  return *this;
}

bool Tensor::is_leaf() const { return checked().is_leaf; }
bool Tensor::has_grad() const { return !checked().grad.empty(); }

std::span<const double> Tensor::grad() const {
  const auto& n = checked();
  if (n.grad.empty()) throw ContractError("tensor has no gradient");
  return n.grad;
}

void Tensor::zero_grad() { checked(), node_->grad.clear(); }

Tensor Tensor::detach() const { return from(shape(), checked().value, false); }

const char* Tensor::op_name() const { return checked().op; }

Tensor Tensor::make_result(Shape shape, std::vector<double> values, const char* op,
                           const std::vector<Tensor>& parents,
                           std::function<void(detail::Node&)> backward) {
  bool inputs_finite = true;
  bool needs_grad = false;
  for (const auto& p : parents) {
    const auto& pn = p.checked();
    needs_grad = needs_grad || pn.requires_grad;
    if (inputs_finite) {
      inputs_finite = std::all_of(pn.value.begin(), pn.value.end(), [](double v) { return std::isfinite(v); });
    }
  }
  if (inputs_finite) {
    for (double v : values) {
      if (!std::isfinite(v)) {
        throw NumericError(std::string("op ") + op + " produced a non-finite value from finite inputs");
      }
    }
  }
  auto node = make_leaf(std::move(shape), std::move(values), false);
  node->op = op;
  node->is_leaf = false;
  if (needs_grad && GradMode::enabled()) {
    node->requires_grad = true;
    node->parents.reserve(parents.size());
    for (const auto& p : parents) node->parents.push_back(p.node_);
    node->backward_fn = std::move(backward);
  }
  return Tensor(std::move(node));
}

void Tensor::backward() const {
  const auto& root = checked();
  if (root.value.size() != 1 || !root.shape.empty()) {
    throw ContractError("backward() requires a scalar loss, got shape " + shape_str(root.shape));
  }
  if (!root.requires_grad) throw ContractError("backward() on a tensor that does not require grad");

  // Iterative post-order DFS for a topological order.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      detail::Node* p = n->parents[next++].get();
      if (p->requires_grad && !p->is_leaf && seen.insert(p).second) stack.emplace_back(p, 0);
      continue;
    }
    order.push_back(n);
    stack.pop_back();
  }

  for (auto* n : order) n->grad.clear();
  node_->grad_buffer()[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (n->grad.empty() || !n->backward_fn) continue;
    n->backward_fn(*n);
  }
  // Intermediate buffers are not part of the contract; release them.
  for (auto* n : order) {
    if (n != node_.get()) n->grad.clear();
  }
}

double CounterRng::normal() {
  // Box-Muller; u1 in (0, 1] so the log is finite.
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

}  // namespace r2g
