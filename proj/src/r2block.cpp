// SPDX-License-Identifier: Apache-2.0
#include "r2g/r2block.hpp"

#include <algorithm>
#include <cmath>

#include "r2g/errors.hpp"

namespace r2g {

void R2StepParams::collect(ParamList& out, const std::string& prefix) const {
  visual_mlp.collect(out, prefix + ".visual_mlp");
  query_mlp.collect(out, prefix + ".query_mlp");
  w_q.collect(out, prefix + ".w_q");
  w_v.collect(out, prefix + ".w_v");
  for (std::size_t i = 0; i < layers.size(); ++i) layers[i].collect(out, prefix + ".layer" + std::to_string(i));
}

R2Block::R2Block(const ModelConfig& cfg, CounterRng& rng)
    : K_(cfg.K), reversed_(cfg.reversed), droppath_p_(cfg.droppath_p) {
  cfg.validate();
  const std::size_t C = cfg.hidden_size;
  const std::size_t sets = cfg.share_params ? 1 : K_;
  for (std::size_t s = 0; s < sets; ++s) {
    R2StepParams p;
    p.visual_mlp = Mlp(cfg.visual_dim, cfg.mlp_width(), C, cfg.activation, rng);
    p.query_mlp = Mlp(cfg.query_dim, cfg.mlp_width(), C, cfg.activation, rng);
    p.w_q = Linear(C, C, rng, false);
    p.w_v = Linear(C, C, rng, false);
    for (std::size_t l = 0; l < cfg.num_temporal_layers; ++l) {
      p.layers.emplace_back(C, cfg.num_heads, cfg.activation, cfg.attn_order, rng);
    }
    sets_.push_back(std::move(p));
  }
  for (std::size_t k = 0; k < K_; ++k) {
    gamma_.push_back(Tensor::scalar(0.0, true));
    psi_.push_back(Tensor::scalar(0.0, true));
  }
}

std::size_t R2Block::slab_for_step(std::size_t k, std::size_t num_layers) const {
  if (k == 0 || k > K_) throw ContractError("step index " + std::to_string(k) + " outside [1, K]");
  if (num_layers < K_) {
    throw ConfigError("features carry " + std::to_string(num_layers) + " layers but K = " + std::to_string(K_));
  }
  return reversed_ ? k - 1 : K_ - k;
}

const R2StepParams& R2Block::params_for_step(std::size_t k) const {
  if (k == 0 || k > K_) throw ContractError("step index " + std::to_string(k) + " outside [1, K]");
  return sets_.size() == 1 ? sets_.front() : sets_[k - 1];
}

Tensor R2Block::spatial_gate(std::size_t k) const { return tanh(gamma(k)); }
Tensor R2Block::temporal_gate(std::size_t k) const { return sigmoid(psi(k)); }

SpatialPoolResult R2Block::spatial_pool(const Tensor& e_v, const Tensor& e_q, const Mask& query_mask,
                                        std::size_t k) const {
  const auto& p = params_for_step(k);
  if (e_v.rank() != 3 || e_q.rank() != 2) {
    throw DimensionError("spatial_pool expects e_v [T, P+1, D_v] and e_q [L, D_q], got " + shape_str(e_v.shape()) +
                         " and " + shape_str(e_q.shape()));
  }
  const std::size_t T = e_v.dim(0), P = e_v.dim(1) - 1, L = e_q.dim(0);
  if (P == 0) throw DimensionError("spatial_pool needs at least one patch token besides [CLS]");
  if (query_mask.size() != L) {
    throw DimensionError("query mask covers " + std::to_string(query_mask.size()) + " tokens, query has " +
                         std::to_string(L));
  }
  if (std::none_of(query_mask.begin(), query_mask.end(), [](bool b) { return b; })) {
    throw DegenerateError("query has no unmasked tokens");
  }

  const Tensor ev = p.visual_mlp(e_v);  // [T, P+1, C]
  const std::size_t C = ev.dim(-1);
  const Tensor eq = p.query_mlp(e_q);  // [L, C]
  const Tensor cls = reshape(slice(ev, 1, 0, 1), {T, C});
  const Tensor patches = slice(ev, 1, 1, P);  // [T, P, C]

  const Tensor keys = p.w_v(patches);                                // [T, P, C]
  const Tensor qry = p.w_q(eq);                                      // [L, C], broadcast over T
  const Tensor scores = scale(matmul(qry, transpose(keys, 1, 2)),   // [T, L, P]
                              1.0 / std::sqrt(static_cast<double>(C)));
  const Tensor attn = softmax(scores, -1);
  const Tensor tokens = add(matmul(attn, patches), eq);  // [T, L, C]
  const Tensor e_token = max(tokens, 1, query_mask);     // [T, C]
  const Tensor e_pool = add(cls, mul(spatial_gate(k), e_token));
  return {e_pool, cls, eq, attn};
}

Tensor R2Block::fuse(const Tensor& e_pool, const Tensor& h_prev, std::size_t k) const {
  const Tensor phi = temporal_gate(k);
  return add(mul(phi, e_pool), mul(add_scalar(neg(phi), 1.0), h_prev));
}

Tensor R2Block::temporal_refine(const Tensor& e_pool, const Tensor& query, const Tensor& h_prev,
                                const Mask& query_mask, std::size_t k, bool train, CounterRng* rng) const {
  if (e_pool.shape() != h_prev.shape()) {
    throw DimensionError("temporal_refine: e_pool " + shape_str(e_pool.shape()) + " vs h " +
                         shape_str(h_prev.shape()));
  }
  Tensor x = fuse(e_pool, h_prev, k);
  for (const auto& layer : params_for_step(k).layers) x = layer(x, query, query_mask, train, droppath_p_, rng);
  return x;
}

R2Output R2Block::run(const LayerFeatureSet& fs, bool train, CounterRng* rng) const {
  const std::size_t N = fs.num_layers(), T = fs.num_frames();
  const std::size_t C = sets_.front().w_q.weight.dim(0);
  R2Output out;
  Tensor h = Tensor::zeros({T, C});
  std::vector<Tensor> cls, queries;
  for (std::size_t k = 1; k <= K_; ++k) {
    const std::size_t n = slab_for_step(k, N);
    const Tensor e_v = reshape(slice(fs.visual, 0, n, 1), {T, fs.num_patches() + 1, fs.visual_dim()});
    const Tensor e_q = reshape(slice(fs.query, 0, n, 1), {fs.num_tokens(), fs.query_dim()});
    auto sp = spatial_pool(e_v, e_q, fs.query_mask, k);
    h = temporal_refine(sp.e_pool, sp.query, h, fs.query_mask, k, train, rng);
    cls.push_back(sp.cls);
    queries.push_back(sp.query);
    out.e_pools.push_back(sp.e_pool);
    out.slabs.push_back(n);
  }
  out.h = h;
  out.cls_steps = stack(cls);
  out.query_steps = stack(queries);
  return out;
}

void R2Block::collect(ParamList& out, const std::string& prefix) const {
  if (sets_.size() == 1) {
    sets_.front().collect(out, prefix + ".shared");
  } else {
    for (std::size_t s = 0; s < sets_.size(); ++s) sets_[s].collect(out, prefix + ".step" + std::to_string(s + 1));
  }
  for (std::size_t k = 0; k < K_; ++k) {
    out.add(prefix + ".gamma" + std::to_string(k + 1), gamma_[k]);
    out.add(prefix + ".psi" + std::to_string(k + 1), psi_[k]);
  }
}

std::size_t R2Block::operator_param_count() const {
  ParamList pl;
  for (std::size_t s = 0; s < sets_.size(); ++s) sets_[s].collect(pl, "s");
  return pl.scalar_count();
}

}  // namespace r2g
