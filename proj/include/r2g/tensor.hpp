// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major f64 tensors with a dynamic reverse-mode tape.
//
// A Tensor is a cheap handle onto a shared node. Forward ops build new nodes
// whose parents are the inputs; Tensor::backward() walks the graph in reverse
// topological order and accumulates gradients. Only nodes whose ancestry
// contains a requires_grad leaf are recorded, so frozen inputs (encoder
// features) never receive a gradient buffer.
#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "r2g/rng.hpp"

namespace r2g {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until something is accumulated
  bool requires_grad = false;
  bool is_leaf = true;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  std::vector<double>& grad_buffer();
};

}  // namespace detail

/// Process-wide (per-thread) recording switch used by evaluation and
/// finite-difference probes.
class GradMode {
 public:
  static bool enabled();
  static void set_enabled(bool on);
};

class NoGradGuard {
 public:
  NoGradGuard() : prev_(GradMode::enabled()) { GradMode::set_enabled(false); }
  ~NoGradGuard() { GradMode::set_enabled(prev_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double fill, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);
  static Tensor randn(Shape shape, CounterRng& rng, double stddev = 1.0, bool requires_grad = false);
  static Tensor uniform(Shape shape, CounterRng& rng, double lo, double hi, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  /// Extent along `axis`; negative axes count from the back.
  std::size_t dim(int axis) const;
  std::size_t numel() const;

  std::span<const double> values() const;
  /// Writable payload. Only leaves may be mutated (optimizer, probes).
  std::span<double> mutable_values();
  double item() const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool on);
  bool is_leaf() const;
  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad();

  /// Reverse-mode sweep from this scalar.
  void backward() const;

  /// Same values, no history.
  Tensor detach() const;

  const char* op_name() const;
  const std::shared_ptr<detail::Node>& node() const { return node_; }

  /// Builds an op result. `backward` receives the result node; its grad is
  /// populated and it must accumulate into parents that require grad.
  static Tensor make_result(Shape shape, std::vector<double> values, const char* op,
                            const std::vector<Tensor>& parents,
                            std::function<void(detail::Node&)> backward);

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  const detail::Node& checked() const;

  std::shared_ptr<detail::Node> node_;
};

/// Boolean validity flags along a single axis (true = keep).
using Mask = std::vector<bool>;

}  // namespace r2g
