// SPDX-License-Identifier: Apache-2.0
//
// The recurrent refinement block. Each step k = 1..K reads one encoder layer
// slab, pools patch tokens under query guidance into a per-frame feature,
// blends it into the running hidden state and refines the state with a
// small transformer stack. Steps walk the encoder from the last layer
// backwards (reversed = true) or over the same K layers front to back.
#pragma once

#include <vector>

#include "r2g/config.hpp"
#include "r2g/features.hpp"
#include "r2g/nn.hpp"

namespace r2g {

/// The operator shared across steps (one copy when sharing is on, K copies
/// otherwise).
struct R2StepParams {
  Mlp visual_mlp;  // D_v -> C
  Mlp query_mlp;   // D_q -> C
  Linear w_q, w_v;  // C -> C, no bias
  std::vector<TransformerLayer> layers;

  void collect(ParamList& out, const std::string& prefix) const;
};

struct SpatialPoolResult {
  Tensor e_pool;  // [T, C]
  Tensor cls;     // [T, C] projected [CLS] tokens
  Tensor query;   // [L, C] projected query tokens
  Tensor attn;    // [T, L, P]
};

struct R2Output {
  Tensor h;                     // [T, C]
  Tensor cls_steps;             // [K, T, C]
  Tensor query_steps;           // [K, L, C]
  std::vector<Tensor> e_pools;  // K x [T, C]
  std::vector<std::size_t> slabs;  // feature slab read at each step
};

class R2Block {
 public:
  R2Block() = default;
  R2Block(const ModelConfig& cfg, CounterRng& rng);

  std::size_t steps() const { return K_; }
  bool reversed() const { return reversed_; }
  /// Slab of the layer axis consumed by step k (1-based).
  std::size_t slab_for_step(std::size_t k, std::size_t num_layers) const;

  const R2StepParams& params_for_step(std::size_t k) const;
  const Tensor& gamma(std::size_t k) const { return gamma_.at(k - 1); }
  const Tensor& psi(std::size_t k) const { return psi_.at(k - 1); }
  /// g^k = tanh(gamma_k), in (-1, 1).
  Tensor spatial_gate(std::size_t k) const;
  /// phi^k = sigmoid(psi_k), in (0, 1).
  Tensor temporal_gate(std::size_t k) const;

  /// e_v: [T, P+1, D_v] with [CLS] at patch 0; e_q: [L, D_q].
  SpatialPoolResult spatial_pool(const Tensor& e_v, const Tensor& e_q, const Mask& query_mask, std::size_t k) const;
  /// phi * e_pool + (1 - phi) * h_prev.
  Tensor fuse(const Tensor& e_pool, const Tensor& h_prev, std::size_t k) const;
  Tensor temporal_refine(const Tensor& e_pool, const Tensor& query, const Tensor& h_prev, const Mask& query_mask,
                         std::size_t k, bool train, CounterRng* rng) const;
  R2Output run(const LayerFeatureSet& fs, bool train, CounterRng* rng) const;

  void collect(ParamList& out, const std::string& prefix) const;
  /// Scalars in the step operator(s), excluding the per-step gates.
  std::size_t operator_param_count() const;

 private:
  std::size_t K_ = 0;
  bool reversed_ = true;
  double droppath_p_ = 0.0;
  std::vector<R2StepParams> sets_;
  std::vector<Tensor> gamma_, psi_;
};

}  // namespace r2g
