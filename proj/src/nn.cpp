// SPDX-License-Identifier: Apache-2.0
#include "r2g/nn.hpp"

#include <cmath>

#include "r2g/errors.hpp"

namespace r2g {

Activation parse_activation(std::string_view name) {
  if (name == "gelu") return Activation::Gelu;
  if (name == "relu") return Activation::Relu;
  throw ConfigError("unknown activation '" + std::string(name) + "'");
}

std::string_view activation_name(Activation act) { return act == Activation::Gelu ? "gelu" : "relu"; }

Tensor activate(const Tensor& x, Activation act) { return act == Activation::Gelu ? gelu(x) : relu(x); }

std::size_t ParamList::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : items_) n += t.numel();
  return n;
}

Tensor xavier(Shape shape, std::size_t fan_in, std::size_t fan_out, CounterRng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  return Tensor::uniform(std::move(shape), rng, -bound, bound, true);
}

Linear::Linear(std::size_t in, std::size_t out, CounterRng& rng, bool with_bias)
    : weight(xavier({in, out}, in, out, rng)) {
  if (with_bias) bias = Tensor::zeros({out}, true);
}

Tensor Linear::operator()(const Tensor& x) const {
  const std::size_t in = weight.dim(0), out = weight.dim(1);
  if (x.rank() == 0 || x.dim(-1) != in) {
    throw DimensionError("linear layer expects last extent " + std::to_string(in) + ", got " + shape_str(x.shape()));
  }
  Tensor y;
  if (x.rank() == 2) {
    y = matmul(x, weight);
  } else {
    Shape out_shape = x.shape();
    out_shape.back() = out;
    y = reshape(matmul(reshape(x, {x.numel() / in, in}), weight), std::move(out_shape));
  }
  return bias.defined() ? add(y, bias) : y;
}

void Linear::collect(ParamList& out, const std::string& prefix) const {
  out.add(prefix + ".weight", weight);
  if (bias.defined()) out.add(prefix + ".bias", bias);
}

LayerNorm::LayerNorm(std::size_t dim) : gain(Tensor::full({dim}, 1.0, true)), bias(Tensor::zeros({dim}, true)) {}

void LayerNorm::collect(ParamList& out, const std::string& prefix) const {
  out.add(prefix + ".gain", gain);
  out.add(prefix + ".bias", bias);
}

Mlp::Mlp(std::size_t in, std::size_t hidden, std::size_t out, Activation act, CounterRng& rng)
    : fc1(in, hidden, rng), fc2(hidden, out, rng), norm(out), act(act) {}

Tensor Mlp::operator()(const Tensor& x) const { return norm(fc2(activate(fc1(x), act))); }

void Mlp::collect(ParamList& out, const std::string& prefix) const {
  fc1.collect(out, prefix + ".fc1");
  fc2.collect(out, prefix + ".fc2");
  norm.collect(out, prefix + ".norm");
}

MultiHeadAttention::MultiHeadAttention(std::size_t dim, std::size_t heads, CounterRng& rng)
    : q(dim, dim, rng), k(dim, dim, rng), v(dim, dim, rng), o(dim, dim, rng), heads(heads) {
  if (heads == 0 || dim % heads != 0) {
    throw ConfigError("hidden size " + std::to_string(dim) + " is not divisible by " + std::to_string(heads) +
                      " heads");
  }
}

Tensor MultiHeadAttention::operator()(const Tensor& query, const Tensor& memory, const Mask& key_valid) const {
  const std::size_t C = q.weight.dim(0);
  const std::size_t Tq = query.dim(0), Tk = memory.dim(0), dh = C / heads;
  auto split = [&](const Tensor& x, std::size_t len) { return permute(reshape(x, {len, heads, dh}), {1, 0, 2}); };
  const Tensor qh = split(q(query), Tq);
  const Tensor kh = split(k(memory), Tk);
  const Tensor vh = split(v(memory), Tk);
  const Tensor scores = scale(matmul(qh, transpose(kh, 1, 2)), 1.0 / std::sqrt(static_cast<double>(dh)));
  const Tensor attn = softmax(scores, -1, key_valid);
  const Tensor ctx = reshape(permute(matmul(attn, vh), {1, 0, 2}), {Tq, C});
  return o(ctx);
}

void MultiHeadAttention::collect(ParamList& out, const std::string& prefix) const {
  q.collect(out, prefix + ".q");
  k.collect(out, prefix + ".k");
  v.collect(out, prefix + ".v");
  o.collect(out, prefix + ".o");
}

FeedForward::FeedForward(std::size_t dim, std::size_t expansion, Activation act, CounterRng& rng)
    : fc1(dim, dim * expansion, rng), fc2(dim * expansion, dim, rng), act(act) {}

void FeedForward::collect(ParamList& out, const std::string& prefix) const {
  fc1.collect(out, prefix + ".fc1");
  fc2.collect(out, prefix + ".fc2");
}

Conv1d::Conv1d(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride, std::size_t padding,
               CounterRng& rng)
    : weight(xavier({kernel, in, out}, kernel * in, kernel * out, rng)),
      bias(Tensor::zeros({out}, true)),
      stride(stride),
      padding(padding) {}

void Conv1d::collect(ParamList& out, const std::string& prefix) const {
  out.add(prefix + ".weight", weight);
  out.add(prefix + ".bias", bias);
}

Tensor drop_path(const Tensor& branch, double p, bool train, CounterRng* rng) {
  if (!train || p <= 0.0 || rng == nullptr || DeterministicScope::active()) return branch;
  if (rng->uniform() < p) return scale(branch, 0.0);
  return scale(branch, 1.0 / (1.0 - p));
}

AttnOrder parse_attn_order(std::string_view name) {
  if (name == "cross_first") return AttnOrder::CrossFirst;
  if (name == "self_first") return AttnOrder::SelfFirst;
  throw ConfigError("unknown attn_order '" + std::string(name) + "'");
}

std::string_view attn_order_name(AttnOrder order) {
  return order == AttnOrder::CrossFirst ? "cross_first" : "self_first";
}

TransformerLayer::TransformerLayer(std::size_t dim, std::size_t heads, Activation act, AttnOrder order,
                                   CounterRng& rng)
    : cross(dim, heads, rng),
      self(dim, heads, rng),
      ffn(dim, 4, act, rng),
      norm_cross(dim),
      norm_self(dim),
      norm_ffn(dim),
      order(order) {}

namespace {
template <class F>
Tensor labelled(const char* sublayer, F&& f) {
  try {
    return f();
  } catch (const NumericError& e) {
    throw NumericError(std::string(sublayer) + ": " + e.what());
  }
}
}  // namespace

Tensor TransformerLayer::operator()(const Tensor& x, const Tensor& memory, const Mask& memory_valid, bool train,
                                    double droppath_p, CounterRng* rng) const {
  const Mask all(x.dim(0), true);
  auto cross_step = [&](const Tensor& h) {
    return labelled("cross-attention", [&] {
      return norm_cross(add(h, drop_path(cross(h, memory, memory_valid), droppath_p, train, rng)));
    });
  };
  auto self_step = [&](const Tensor& h) {
    return labelled("self-attention",
                    [&] { return norm_self(add(h, drop_path(self(h, h, all), droppath_p, train, rng))); });
  };
  Tensor h = order == AttnOrder::CrossFirst ? self_step(cross_step(x)) : cross_step(self_step(x));
  return labelled("feed-forward", [&] { return norm_ffn(add(h, drop_path(ffn(h), droppath_p, train, rng))); });
}

void TransformerLayer::collect(ParamList& out, const std::string& prefix) const {
  cross.collect(out, prefix + ".cross");
  self.collect(out, prefix + ".self");
  ffn.collect(out, prefix + ".ffn");
  norm_cross.collect(out, prefix + ".norm_cross");
  norm_self.collect(out, prefix + ".norm_self");
  norm_ffn.collect(out, prefix + ".norm_ffn");
}

}  // namespace r2g
