// SPDX-License-Identifier: Apache-2.0
//
// Parameterized layers on top of the op library. Layers own leaf tensors
// (shared handles) and register them into a ParamList under dotted names.
#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "r2g/gradcheck.hpp"
#include "r2g/ops.hpp"
#include "r2g/rng.hpp"

namespace r2g {

enum class Activation { Gelu, Relu };

Activation parse_activation(std::string_view name);
std::string_view activation_name(Activation act);
Tensor activate(const Tensor& x, Activation act);

class ParamList {
 public:
  void add(std::string name, const Tensor& t) { items_.emplace_back(std::move(name), t); }
  const std::vector<NamedTensor>& items() const { return items_; }
  std::size_t scalar_count() const;

 private:
  std::vector<NamedTensor> items_;
};

/// Xavier-uniform trainable weight.
Tensor xavier(Shape shape, std::size_t fan_in, std::size_t fan_out, CounterRng& rng);

struct Linear {
  Tensor weight;  // [in, out]
  Tensor bias;    // [out] or undefined

  Linear() = default;
  Linear(std::size_t in, std::size_t out, CounterRng& rng, bool with_bias = true);
  /// Applies to the last axis of x.
  Tensor operator()(const Tensor& x) const;
  void collect(ParamList& out, const std::string& prefix) const;
};

struct LayerNorm {
  Tensor gain, bias;

  LayerNorm() = default;
  explicit LayerNorm(std::size_t dim);
  Tensor operator()(const Tensor& x) const { return layer_norm(x, gain, bias); }
  void collect(ParamList& out, const std::string& prefix) const;
};

/// affine -> activation -> affine -> LayerNorm
struct Mlp {
  Linear fc1, fc2;
  LayerNorm norm;
  Activation act = Activation::Gelu;

  Mlp() = default;
  Mlp(std::size_t in, std::size_t hidden, std::size_t out, Activation act, CounterRng& rng);
  Tensor operator()(const Tensor& x) const;
  void collect(ParamList& out, const std::string& prefix) const;
};

struct MultiHeadAttention {
  Linear q, k, v, o;
  std::size_t heads = 1;

  MultiHeadAttention() = default;
  MultiHeadAttention(std::size_t dim, std::size_t heads, CounterRng& rng);
  /// query [Tq, C], memory [Tk, C]; keys with key_valid[j] == false are ignored.
  Tensor operator()(const Tensor& query, const Tensor& memory, const Mask& key_valid) const;
  void collect(ParamList& out, const std::string& prefix) const;
};

struct FeedForward {
  Linear fc1, fc2;
  Activation act = Activation::Gelu;

  FeedForward() = default;
  FeedForward(std::size_t dim, std::size_t expansion, Activation act, CounterRng& rng);
  Tensor operator()(const Tensor& x) const { return fc2(activate(fc1(x), act)); }
  void collect(ParamList& out, const std::string& prefix) const;
};

struct Conv1d {
  Tensor weight;  // [kernel, in, out]
  Tensor bias;    // [out]
  std::size_t stride = 1, padding = 0;

  Conv1d() = default;
  Conv1d(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride, std::size_t padding,
         CounterRng& rng);
  Tensor operator()(const Tensor& x) const { return conv1d(x, weight, bias, stride, padding); }
  void collect(ParamList& out, const std::string& prefix) const;
};

/// Residual-branch skip: in training, zero the whole branch with
/// probability p and rescale survivors by 1/(1-p). Identity at eval time,
/// when p == 0, when rng is null, or inside a DeterministicScope.
Tensor drop_path(const Tensor& branch, double p, bool train, CounterRng* rng);

enum class AttnOrder { CrossFirst, SelfFirst };

AttnOrder parse_attn_order(std::string_view name);
std::string_view attn_order_name(AttnOrder order);

/// One post-norm transformer layer: cross-attention over a memory sequence,
/// self-attention, then a feed-forward network, each as
/// x = LayerNorm(x + DropPath(sublayer(x))).
struct TransformerLayer {
  MultiHeadAttention cross, self;
  FeedForward ffn;
  LayerNorm norm_cross, norm_self, norm_ffn;
  AttnOrder order = AttnOrder::CrossFirst;

  TransformerLayer() = default;
  TransformerLayer(std::size_t dim, std::size_t heads, Activation act, AttnOrder order, CounterRng& rng);
  Tensor operator()(const Tensor& x, const Tensor& memory, const Mask& memory_valid, bool train,
                    double droppath_p, CounterRng* rng) const;
  void collect(ParamList& out, const std::string& prefix) const;
};

}  // namespace r2g
