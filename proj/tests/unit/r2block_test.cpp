// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "r2g/diagnostics.hpp"
#include "r2g/errors.hpp"
#include "r2g/model.hpp"
#include "r2g/r2block.hpp"

namespace r2g {
namespace {

using oracle::Rows;
using oracle::Vec;

ModelConfig small_config(std::size_t K, std::size_t C = 4, std::size_t Dv = 5, std::size_t Dq = 3) {
  ModelConfig cfg;
  cfg.visual_dim = Dv;
  cfg.query_dim = Dq;
  cfg.hidden_size = C;
  cfg.num_heads = 2;
  cfg.K = K;
  cfg.droppath_p = 0.0;
  cfg.pyramid_levels = 2;
  return cfg;
}

void set_scalar(const Tensor& t, double v) {
  Tensor h = t;
  h.mutable_values()[0] = v;
}

// Non-zero biases and norm parameters so the oracle sees every term.
void randomize(const ParamList& pl, std::uint64_t seed) {
  CounterRng rng(seed);
  for (const auto& [name, t] : pl.items()) {
    Tensor h = t;
    for (auto& v : h.mutable_values()) v += 0.2 * rng.normal();
  }
}

LayerFeatureSet random_features(std::size_t N, std::size_t T, std::size_t P, std::size_t L, std::size_t Dv,
                                std::size_t Dq, std::uint64_t seed) {
  CounterRng rng(seed);
  LayerFeatureSet fs;
  fs.visual = Tensor::randn({N, T, P + 1, Dv}, rng);
  fs.query = Tensor::randn({N, L, Dq}, rng);
  fs.query_mask.assign(L, true);
  for (std::size_t n = 0; n < N; ++n) fs.layer_indices.push_back(static_cast<int>(N - 1 - n));
  return fs;
}

struct PoolOracle {
  Rows e_pool;  // [T][C]
  Vec attn;     // [T, L, P]
};

// Straight-line transcription of the query-modulated pooling.
PoolOracle pool_oracle(const R2StepParams& p, double gamma, const Vec& ev, const Vec& eq, const Mask& mask,
                       std::size_t T, std::size_t P, std::size_t L, std::size_t Dv, std::size_t Dq) {
  const std::size_t C = p.w_q.weight.dim(0);
  std::vector<Rows> vis(T);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t j = 0; j <= P; ++j) {
      vis[t].push_back(oracle::mlp_row(Vec(ev.begin() + (t * (P + 1) + j) * Dv, ev.begin() + (t * (P + 1) + j + 1) * Dv),
                                       p.visual_mlp));
    }
  Rows qry;
  for (std::size_t l = 0; l < L; ++l) qry.push_back(oracle::mlp_row(Vec(eq.begin() + l * Dq, eq.begin() + (l + 1) * Dq), p.query_mlp));

  PoolOracle out;
  out.attn.assign(T * L * P, 0.0);
  const double g = std::tanh(gamma);
  for (std::size_t t = 0; t < T; ++t) {
    Vec e_token(C, -INFINITY);
    for (std::size_t l = 0; l < L; ++l) {
      const Vec wq = oracle::linear_row(qry[l], p.w_q);
      Vec s(P);
      for (std::size_t j = 0; j < P; ++j) {
        const Vec wv = oracle::linear_row(vis[t][j + 1], p.w_v);
        double d = 0.0;
        for (std::size_t c = 0; c < C; ++c) d += wq[c] * wv[c];
        s[j] = d / std::sqrt(static_cast<double>(C));
      }
      const Vec a = oracle::softmax(s);
      for (std::size_t j = 0; j < P; ++j) out.attn[(t * L + l) * P + j] = a[j];
      if (!mask[l]) continue;
      for (std::size_t c = 0; c < C; ++c) {
        double v = qry[l][c];
        for (std::size_t j = 0; j < P; ++j) v += a[j] * vis[t][j + 1][c];
        e_token[c] = std::max(e_token[c], v);
      }
    }
    Vec row(C);
    for (std::size_t c = 0; c < C; ++c) row[c] = vis[t][0][c] + g * e_token[c];
    out.e_pool.push_back(row);
  }
  return out;
}

Tensor slab(const Tensor& x, std::size_t n) {
  Shape s(x.shape().begin() + 1, x.shape().end());
  return reshape(slice(x, 0, n, 1), s);
}

TEST(SpatialPool, ZeroGateGivesProjectedClsExactly) {
  CounterRng rng(1);
  const auto cfg = small_config(2);
  R2Block block(cfg, rng);
  const auto fs = random_features(2, 3, 4, 3, 5, 3, 2);
  const auto other = random_features(2, 3, 4, 3, 5, 3, 3);
  for (std::size_t k = 1; k <= 2; ++k) {
    const auto a = block.spatial_pool(slab(fs.visual, k - 1), slab(fs.query, k - 1), fs.query_mask, k);
    const auto b = block.spatial_pool(slab(fs.visual, k - 1), slab(other.query, k - 1), fs.query_mask, k);
    EXPECT_EQ(oracle::values(a.e_pool), oracle::values(a.cls));
    EXPECT_EQ(oracle::values(a.e_pool), oracle::values(b.e_pool));
  }
}

TEST(SpatialPool, IdenticalTokensGiveIdenticalAttentionRows) {
  CounterRng rng(4);
  const auto cfg = small_config(1);
  R2Block block(cfg, rng);
  set_scalar(block.gamma(1), 0.7);
  CounterRng r(5);
  const Tensor ev = Tensor::randn({2, 4, 5}, r);
  const Vec tok = oracle::random_vec(3, r);
  Vec q;
  for (int l = 0; l < 3; ++l) q.insert(q.end(), tok.begin(), tok.end());
  const auto out = block.spatial_pool(ev, Tensor::from({3, 3}, q), Mask(3, true), 1);
  const Vec attn = oracle::values(out.attn);  // [T, L, P]
  for (std::size_t t = 0; t < 2; ++t)
    for (std::size_t l = 1; l < 3; ++l)
      for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(attn[(t * 3 + l) * 3 + j], attn[(t * 3) * 3 + j]);

  // max over identical rows equals the single-row value
  const auto single = block.spatial_pool(ev, Tensor::from({1, 3}, tok), Mask(1, true), 1);
  EXPECT_LT(oracle::max_abs_diff(oracle::values(out.e_pool), oracle::values(single.e_pool)), 1e-15);
}

TEST(SpatialPool, MatchesScalarOracle) {
  const std::size_t T = 2, P = 2, L = 2, C = 4, Dv = 5, Dq = 3;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    CounterRng rng(10 + seed);
    const auto cfg = small_config(1, C, Dv, Dq);
    R2Block block(cfg, rng);
    ParamList pl;
    block.collect(pl, "b");
    randomize(pl, 20 + seed);
    CounterRng r(30 + seed);
    const Vec ev = oracle::random_vec(T * (P + 1) * Dv, r), eq = oracle::random_vec(L * Dq, r);
    const Mask mask = seed % 2 == 0 ? Mask{true, true} : Mask{false, true};
    const auto got = block.spatial_pool(Tensor::from({T, P + 1, Dv}, ev), Tensor::from({L, Dq}, eq), mask, 1);
    const auto ref = pool_oracle(block.params_for_step(1), block.gamma(1).item(), ev, eq, mask, T, P, L, Dv, Dq);
    EXPECT_LT(oracle::max_abs_diff(oracle::values(got.e_pool), oracle::flatten(ref.e_pool)), 1e-10);
    EXPECT_LT(oracle::max_abs_diff(oracle::values(got.attn), ref.attn), 1e-10);
  }
}

TEST(SpatialPool, FullyMaskedQueryIsDegenerate) {
  CounterRng rng(6);
  R2Block block(small_config(1), rng);
  CounterRng r(7);
  EXPECT_THROW(block.spatial_pool(Tensor::randn({2, 3, 5}, r), Tensor::randn({2, 3}, r), Mask{false, false}, 1),
               DegenerateError);
}

TEST(TemporalRefine, SaturatedGateSelectsPooledFeatures) {
  CounterRng rng(8);
  R2Block block(small_config(1), rng);
  CounterRng r(9);
  const Tensor e = Tensor::randn({3, 4}, r), h = Tensor::randn({3, 4}, r);
  set_scalar(block.psi(1), 40.0);
  EXPECT_EQ(oracle::values(block.fuse(e, h, 1)), oracle::values(e));
  set_scalar(block.psi(1), -40.0);
  EXPECT_LT(oracle::max_abs_diff(oracle::values(block.fuse(e, h, 1)), oracle::values(h)), 1e-15);
}

TEST(TemporalRefine, GateRanges) {
  CounterRng rng(10);
  R2Block block(small_config(1), rng);
  for (double v : {-10.0, -3.0, -0.5, 0.0, 0.5, 3.0, 10.0}) {
    set_scalar(block.gamma(1), v);
    set_scalar(block.psi(1), v);
    const double g = block.spatial_gate(1).item(), phi = block.temporal_gate(1).item();
    EXPECT_GT(g, -1.0);
    EXPECT_LT(g, 1.0);
    EXPECT_GT(phi, 0.0);
    EXPECT_LT(phi, 1.0);
  }
  set_scalar(block.gamma(1), 0.0);
  set_scalar(block.psi(1), 0.0);
  EXPECT_EQ(block.spatial_gate(1).item(), 0.0);
  EXPECT_EQ(block.temporal_gate(1).item(), 0.5);
}

TEST(TemporalRefine, MatchesScalarOracle) {
  const std::size_t T = 3, L = 2, C = 4;
  for (AttnOrder order : {AttnOrder::CrossFirst, AttnOrder::SelfFirst}) {
    for (std::size_t layers : {std::size_t{1}, std::size_t{2}}) {
      auto cfg = small_config(1, C);
      cfg.attn_order = order;
      cfg.num_temporal_layers = layers;
      CounterRng rng(11);
      R2Block block(cfg, rng);
      ParamList pl;
      block.collect(pl, "b");
      randomize(pl, 12);
      CounterRng r(13);
      const Vec e = oracle::random_vec(T * C, r), q = oracle::random_vec(L * C, r), h = oracle::random_vec(T * C, r);
      const Mask mask{true, false};
      const Tensor got = block.temporal_refine(Tensor::from({T, C}, e), Tensor::from({L, C}, q),
                                               Tensor::from({T, C}, h), mask, 1, false, nullptr);
      const double phi = 1.0 / (1.0 + std::exp(-block.psi(1).item()));
      Rows x(T, Vec(C));
      for (std::size_t t = 0; t < T; ++t)
        for (std::size_t c = 0; c < C; ++c) x[t][c] = phi * e[t * C + c] + (1.0 - phi) * h[t * C + c];
      const Rows mem = oracle::to_rows(q, L, C);
      for (const auto& layer : block.params_for_step(1).layers) x = oracle::transformer_layer(x, mem, mask, layer);
      EXPECT_LT(oracle::max_abs_diff(oracle::values(got), oracle::flatten(x)), 1e-10);
    }
  }
}

TEST(TemporalRefine, NonFiniteAttentionNamesTheSublayer) {
  CounterRng rng(14);
  R2Block block(small_config(1), rng);
  // Query and key magnitudes near 1e200 overflow the score product.
  for (Tensor w : {block.params_for_step(1).layers[0].cross.q.weight, block.params_for_step(1).layers[0].cross.k.weight})
    for (auto& v : w.mutable_values()) v = 1e200;
  CounterRng r(15);
  try {
    block.temporal_refine(Tensor::randn({2, 4}, r), Tensor::randn({2, 4}, r), Tensor::zeros({2, 4}), Mask(2, true),
                          1, false, nullptr);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("cross-attention"), std::string::npos) << e.what();
  }
}

TEST(Recurrence, StepsWalkTheLayersInConfiguredOrder) {
  CounterRng rng(16);
  auto cfg = small_config(3);
  const R2Block rev(cfg, rng);
  cfg.reversed = false;
  const R2Block fwd(cfg, rng);
  const auto fs = random_features(5, 2, 2, 2, 5, 3, 17);
  EXPECT_EQ(rev.run(fs, false, nullptr).slabs, (std::vector<std::size_t>{0, 1, 2}));
  EXPECT_EQ(fwd.run(fs, false, nullptr).slabs, (std::vector<std::size_t>{2, 1, 0}));
}

TEST(Recurrence, SingleStepIsOrderIndependent) {
  auto cfg = small_config(1);
  const R2Model a(cfg, 3);
  cfg.reversed = false;
  const R2Model b(cfg, 3);
  const auto fs = random_features(3, 4, 2, 3, 5, 3, 18);
  const auto oa = a.forward(fs, false, nullptr), ob = b.forward(fs, false, nullptr);
  EXPECT_EQ(oracle::values(oa.r2.h), oracle::values(ob.r2.h));
  EXPECT_EQ(oracle::values(oa.heads.logits), oracle::values(ob.heads.logits));
  EXPECT_EQ(oracle::values(oa.heads.disp), oracle::values(ob.heads.disp));
  EXPECT_EQ(oracle::values(oa.heads.saliency), oracle::values(ob.heads.saliency));
}

TEST(Recurrence, InitialStateIsZeroAndPoolsEqualProjectedCls) {
  CounterRng rng(19);
  const R2Block block(small_config(3), rng);
  const auto fs = random_features(3, 4, 2, 3, 5, 3, 20);
  const auto out = block.run(fs, false, nullptr);
  ASSERT_EQ(out.e_pools.size(), 3u);
  const Vec cls = oracle::values(out.cls_steps);
  for (std::size_t k = 0; k < 3; ++k) {
    const Vec pool = oracle::values(out.e_pools[k]);
    EXPECT_EQ(pool, Vec(cls.begin() + k * pool.size(), cls.begin() + (k + 1) * pool.size()));
  }
  // h^1 from h^0 = 0: the fused input is phi * e_pool exactly.
  const Tensor first = block.temporal_refine(out.e_pools[0], slab(out.query_steps, 0), Tensor::zeros({4, 4}),
                                             fs.query_mask, 1, false, nullptr);
  const auto one = [&] {
    auto c = small_config(1);
    CounterRng r(19);
    return R2Block(c, r).run(fs, false, nullptr).h;
  }();
  EXPECT_EQ(oracle::values(first), oracle::values(one));
}

TEST(Recurrence, ZeroFeaturesGiveFiniteDeterministicState) {
  const auto cfg = small_config(3);
  CounterRng rng(21);
  const R2Block block(cfg, rng);
  LayerFeatureSet fs = random_features(3, 4, 2, 3, 5, 3, 22);
  fs.visual = Tensor::zeros(fs.visual.shape());
  fs.query = Tensor::zeros(fs.query.shape());
  const auto a = block.run(fs, false, nullptr), b = block.run(fs, false, nullptr);
  EXPECT_EQ(oracle::values(a.h), oracle::values(b.h));
  for (double v : a.h.values()) EXPECT_TRUE(std::isfinite(v));

  // Zero inputs project to zero (zero-initialized biases), so each step is the
  // transformer stack applied to (1 - phi) * h over an all-zero memory.
  Rows h(4, Vec(4, 0.0));
  const Rows mem(3, Vec(4, 0.0));
  for (std::size_t k = 1; k <= 3; ++k) {
    for (auto& row : h)
      for (auto& v : row) v *= 0.5;
    for (const auto& layer : block.params_for_step(k).layers) h = oracle::transformer_layer(h, mem, fs.query_mask, layer);
  }
  EXPECT_LT(oracle::max_abs_diff(oracle::values(a.h), oracle::flatten(h)), 1e-12);
}

TEST(Recurrence, PaddedTokensDoNotMatter) {
  const auto cfg = small_config(2);
  const R2Model model(cfg, 23);
  ParamList pl = model.params();
  randomize(pl, 24);
  for (std::size_t k = 1; k <= 2; ++k) set_scalar(model.block().gamma(k), 0.4 * static_cast<double>(k));
  LayerFeatureSet fs = random_features(2, 4, 2, 5, 5, 3, 25);
  fs.query_mask = {true, false, true, false, false};
  LayerFeatureSet permuted = fs;
  // Rotate the contents of the three padded positions and scale them.
  Vec q = oracle::values(fs.query);
  const std::size_t L = 5, D = 3;
  for (std::size_t n = 0; n < 2; ++n) {
    const std::size_t pads[3] = {1, 3, 4};
    Vec saved(q.begin() + (n * L + pads[2]) * D, q.begin() + (n * L + pads[2] + 1) * D);
    for (int i = 2; i > 0; --i)
      std::copy_n(q.begin() + (n * L + pads[i - 1]) * D, D, q.begin() + (n * L + pads[i]) * D);
    std::copy(saved.begin(), saved.end(), q.begin() + (n * L + pads[0]) * D);
    for (std::size_t p : pads)
      for (std::size_t d = 0; d < D; ++d) q[(n * L + p) * D + d] *= 7.0;
  }
  permuted.query = Tensor::from(fs.query.shape(), q);
  const auto a = model.forward(fs, false, nullptr), b = model.forward(permuted, false, nullptr);
  EXPECT_EQ(oracle::values(a.r2.h), oracle::values(b.r2.h));
  EXPECT_EQ(oracle::values(a.pooled_query), oracle::values(b.pooled_query));
  EXPECT_EQ(oracle::values(a.heads.logits), oracle::values(b.heads.logits));
  EXPECT_EQ(oracle::values(a.heads.saliency), oracle::values(b.heads.saliency));
}

TEST(Sharing, OperatorCountConstantInKWhenShared) {
  std::size_t base = 0;
  for (std::size_t K = 1; K <= 4; ++K) {
    CounterRng rng(26);
    const R2Block block(small_config(K, 8), rng);
    if (K == 1) base = block.operator_param_count();
    EXPECT_EQ(block.operator_param_count(), base);
    ParamList pl;
    block.collect(pl, "b");
    EXPECT_EQ(pl.scalar_count(), base + 2 * K);  // plus one gamma and one psi per step
  }
}

TEST(Sharing, OperatorCountLinearInKWhenNotShared) {
  CounterRng rng0(27);
  const std::size_t base = R2Block(small_config(1, 8), rng0).operator_param_count();
  for (std::size_t K = 1; K <= 4; ++K) {
    auto cfg = small_config(K, 8);
    cfg.share_params = false;
    CounterRng rng(27);
    const R2Block block(cfg, rng);
    EXPECT_EQ(block.operator_param_count(), K * base);
    if (K > 1) {
      EXPECT_NE(&block.params_for_step(1), &block.params_for_step(2));
    }
  }
}

TEST(GradCheck, BlockOnTinyInstance) {
  TinyShape shape;
  shape.frames = 2;
  shape.tokens = 2;
  shape.patches = 2;
  shape.hidden = 8;
  shape.steps = 2;
  const auto r = gradcheck_module("r2block", shape);
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst_param << "[" << r.worst_index << "]";
  EXPECT_GT(r.entries_checked, r.zero_entries);
}

}  // namespace
}  // namespace r2g
