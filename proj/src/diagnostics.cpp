// SPDX-License-Identifier: Apache-2.0
#include "r2g/diagnostics.hpp"

#include <algorithm>
#include <cctype>

#include "r2g/errors.hpp"

namespace r2g {

ModelConfig tiny_model_config(const TinyShape& s) {
  ModelConfig m;
  m.visual_dim = s.feature_dim;
  m.query_dim = s.feature_dim;
  m.hidden_size = s.hidden;
  m.num_heads = 2;
  m.K = s.steps;
  m.droppath_p = 0.0;
  std::size_t levels = 1;
  while (levels < 3 && (std::size_t{1} << levels) <= s.frames) ++levels;
  m.pyramid_levels = levels;
  return m;
}

Example tiny_example(const TinyShape& s, std::uint64_t seed) {
  SynthSpec spec;
  spec.frames = s.frames;
  spec.tokens = s.tokens;
  spec.patches = s.patches;
  spec.visual_dim = s.feature_dim;
  spec.query_dim = s.feature_dim;
  spec.num_layers = std::max<std::size_t>(s.steps, 1);
  spec.refine_depth = spec.num_layers;
  spec.min_moment_frames = 1;
  spec.max_moment_frames = std::max<std::size_t>(1, s.frames / 2);
  spec.concept_dim = 4;
  auto sample = generate_synthetic(spec, seed);
  Example ex;
  ex.id = "tiny-" + std::to_string(seed);
  ex.features = std::move(sample.features);
  ex.labels = std::move(sample.labels);
  return ex;
}

namespace {

// Moves the zero-initialized gates to generic values.
void perturb_gates(const R2Block& block) {
  for (std::size_t k = 1; k <= block.steps(); ++k) {
    Tensor g = block.gamma(k), p = block.psi(k);
    g.mutable_values()[0] = 0.35 - 0.2 * static_cast<double>(k);
    p.mutable_values()[0] = 0.25 * static_cast<double>(k) - 0.4;
  }
}

constexpr double kEps = 1e-3;

}  // namespace

std::vector<std::string> gradcheck_modules() { return {"r2block", "calibration", "heads", "full"}; }

GradCheckReport gradcheck_module(std::string_view module, const TinyShape& shape, std::uint64_t seed) {
  DeterministicScope deterministic;
  const ModelConfig cfg = tiny_model_config(shape);
  CounterRng rng(seed);

  if (module == "r2block") {
    CounterRng init = rng.fork(1);
    R2Block block(cfg, init);
    perturb_gates(block);
    const Example ex = tiny_example(shape, seed);
    CounterRng wr = rng.fork(2);
    const Tensor wh = Tensor::randn({shape.frames, shape.hidden}, wr);
    const Tensor wc = Tensor::randn({shape.steps, shape.frames, shape.hidden}, wr);
    const Tensor wq = Tensor::randn({shape.steps, shape.tokens, shape.hidden}, wr);
    ParamList pl;
    block.collect(pl, "block");
    auto loss = [&] {
      const auto out = block.run(ex.features, false, nullptr);
      return add(add(sum(mul(out.h, wh)), sum(mul(out.cls_steps, wc))), sum(mul(out.query_steps, wq)));
    };
    return finite_diff_check(loss, pl.items(), kEps, Stencil::FivePoint);
  }

  if (module == "calibration") {
    const std::size_t B = 3, K = shape.steps, C = shape.hidden, L = shape.tokens;
    CounterRng r = rng.fork(3);
    const Tensor v = Tensor::randn({B, K, C}, r, 1.0, true);
    const Tensor tokens = Tensor::randn({B, K, L, C}, r, 1.0, true);
    AdaptivePool pool(C, r);
    Mask mask(L, true);
    mask.back() = L == 1;
    ParamList pl;
    pl.add("v", v);
    pl.add("tokens", tokens);
    pool.collect(pl, "pool");
    auto loss = [&] {
      const Tensor q = pool(tokens, mask);
      auto cal = calibration_losses(v, q, cfg.lambda_video, cfg.lambda_layer, cfg.nce_temperature, cfg.symmetric_nce);
      return add(cal.video, cal.layer);
    };
    return finite_diff_check(loss, pl.items(), kEps, Stencil::FivePoint);
  }

  if (module == "heads") {
    const Example ex = tiny_example(shape, seed);
    CounterRng r = rng.fork(4);
    const Tensor h = Tensor::randn({shape.frames, shape.hidden}, r, 1.0, true);
    const Tensor q = Tensor::randn({shape.hidden}, r, 1.0, true);
    TemporalPyramid pyramid(shape.hidden, cfg.pyramid_levels, cfg.activation, r);
    PredictionHeads heads(shape.hidden, cfg.activation, r);
    ParamList pl;
    pl.add("h", h);
    pl.add("q", q);
    pyramid.collect(pl, "pyramid");
    heads.collect(pl, "heads");
    const auto positives = positive_frames(ex.labels, shape.frames, cfg.omega);
    const auto relevance = frame_relevance(ex.labels, shape.frames);
    auto loss = [&] {
      const auto pyr = pyramid(h);
      const auto targets = assign_targets(pyr.layout, ex.labels.moments, default_length_bands(pyr.layout));
      auto [logits, disp] = heads(pyr);
      Tensor total = add(focal_cls_loss_logits(logits, targets.cls, cfg.focal_alpha, cfg.focal_gamma, cfg.lambda_cls),
                         boundary_l1_loss(disp, targets.reg, targets.inside, cfg.lambda_reg));
      const Tensor s = predict_saliency(h, q);
      for (std::size_t p : positives) {
        total = add(total, saliency_loss(s, relevance, p, cfg.saliency_temperature, cfg.lambda_sal));
      }
      return total;
    };
    return finite_diff_check(loss, pl.items(), kEps, Stencil::FivePoint);
  }

  if (module == "full") {
    const R2Model model(cfg, seed);
    perturb_gates(model.block());
    const Example a = tiny_example(shape, seed), b = tiny_example(shape, seed + 1);
    const std::vector<const Example*> batch{&a, &b};
    auto loss = [&] { return compute_losses(model, batch, false, nullptr, nullptr).total; };
    return finite_diff_check(loss, model.params().items(), kEps, Stencil::FivePoint);
  }

  throw ConfigError("unknown gradcheck module '" + std::string(module) + "'");
}

std::vector<std::pair<std::string, std::size_t>> param_breakdown(const ParamList& params) {
  std::vector<std::pair<std::string, std::size_t>> out;
  for (const auto& [name, t] : params.items()) {
    const auto first = name.find('.');
    const auto second = first == std::string::npos ? first : name.find('.', first + 1);
    std::string group = name.substr(0, second);
    while (!group.empty() && std::isdigit(static_cast<unsigned char>(group.back()))) group.pop_back();
    auto it = std::find_if(out.begin(), out.end(), [&](const auto& e) { return e.first == group; });
    if (it == out.end()) it = out.emplace(out.end(), group, 0);
    it->second += t.numel();
  }
  return out;
}

}  // namespace r2g
