// SPDX-License-Identifier: Apache-2.0
#include "r2g/model.hpp"

#include "r2g/errors.hpp"

namespace r2g {

R2Model::R2Model(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  CounterRng root(seed);
  CounterRng rb = root.fork(1), rp = root.fork(2), rpy = root.fork(3), rh = root.fork(4);
  block_ = R2Block(cfg_, rb);
  pool_ = AdaptivePool(cfg_.hidden_size, rp);
  pyramid_ = TemporalPyramid(cfg_.hidden_size, cfg_.pyramid_levels, cfg_.activation, rpy);
  heads_ = PredictionHeads(cfg_.hidden_size, cfg_.activation, rh);
}

ModelOutput R2Model::forward(const LayerFeatureSet& fs, bool train, CounterRng* rng) const {
  if (fs.visual_dim() != cfg_.visual_dim || fs.query_dim() != cfg_.query_dim) {
    throw DimensionError("features have widths (" + std::to_string(fs.visual_dim()) + ", " +
                         std::to_string(fs.query_dim()) + "), model expects (" + std::to_string(cfg_.visual_dim) +
                         ", " + std::to_string(cfg_.query_dim) + ")");
  }
  ModelOutput out;
  out.r2 = block_.run(fs, train, rng);
  out.pooled_query = pool_(out.r2.query_steps, fs.query_mask);
  out.pyramid = pyramid_(out.r2.h);
  auto [logits, disp] = heads_(out.pyramid);
  out.heads.logits = logits;
  out.heads.probs = sigmoid(logits);
  out.heads.disp = disp;
  const std::size_t K = cfg_.K, C = cfg_.hidden_size;
  out.heads.saliency = predict_saliency(out.r2.h, reshape(slice(out.pooled_query, 0, K - 1, 1), {C}));
  return out;
}

ParamList R2Model::params() const {
  ParamList pl;
  block_.collect(pl, "block");
  pool_.collect(pl, "query_pool");
  pyramid_.collect(pl, "pyramid");
  heads_.collect(pl, "heads");
  return pl;
}

LengthBands R2Model::length_bands(const PyramidLayout& layout) const {
  if (cfg_.level_bands.empty()) return default_length_bands(layout);
  return cfg_.level_bands;
}

const Tensor& LossTerms::term(std::size_t i) const {
  switch (i) {
    case 0: return video;
    case 1: return layer;
    case 2: return cls;
    case 3: return reg;
    case 4: return sal;
    default: throw ContractError("loss term index out of range");
  }
}

Tensor joint_loss(const Tensor& video, const Tensor& layer, const Tensor& cls, const Tensor& reg, const Tensor& sal) {
  return add(add(add(add(video, layer), cls), reg), sal);
}

namespace {

Tensor mean_of(const std::vector<Tensor>& terms) {
  if (terms.empty()) return Tensor::scalar(0.0);
  return mean(stack(terms));
}

}  // namespace

LossTerms compute_losses(const R2Model& model, const std::vector<const Example*>& batch, bool train,
                         CounterRng* droppath_rng, CounterRng* positive_rng) {
  if (batch.empty()) throw ContractError("empty batch");
  const auto& cfg = model.config();
  LossTerms out;
  std::vector<Tensor> cls_terms, reg_terms, sal_terms, cal_v, cal_q;

  for (const Example* ex : batch) {
    const auto& fs = ex->features;
    const std::size_t T = fs.num_frames();
    ex->labels.validate(T);
    const ModelOutput mo = model.forward(fs, train, droppath_rng);

    const auto& layout = mo.pyramid.layout;
    const auto targets = assign_targets(layout, ex->labels.moments, model.length_bands(layout));
    cls_terms.push_back(
        focal_cls_loss_logits(mo.heads.logits, targets.cls, cfg.focal_alpha, cfg.focal_gamma, cfg.lambda_cls));
    reg_terms.push_back(boundary_l1_loss(mo.heads.disp, targets.reg, targets.inside, cfg.lambda_reg));

    const auto positives = positive_frames(ex->labels, T, cfg.omega);
    if (positives.empty()) {
      ++out.skipped_calibration;
      out.warnings.push_back("sample '" + ex->id + "' has no positive frame; skipped in calibration and saliency");
      continue;
    }
    cal_v.push_back(pool_positive_video(mo.r2.cls_steps, positives));
    cal_q.push_back(mo.pooled_query);

    const auto relevance = frame_relevance(ex->labels, T);
    if (positive_rng != nullptr) {
      const std::size_t p = positives[positive_rng->below(positives.size())];
      sal_terms.push_back(
          saliency_loss(mo.heads.saliency, relevance, p, cfg.saliency_temperature, cfg.lambda_sal));
    } else {
      std::vector<Tensor> per;
      for (std::size_t p : positives) {
        per.push_back(saliency_loss(mo.heads.saliency, relevance, p, cfg.saliency_temperature, cfg.lambda_sal));
      }
      sal_terms.push_back(mean_of(per));
    }
  }

  out.cls = mean_of(cls_terms);
  out.reg = mean_of(reg_terms);
  out.sal = mean_of(sal_terms);
  if (cal_v.empty()) {
    out.video = Tensor::scalar(0.0);
    out.layer = Tensor::scalar(0.0);
  } else {
    auto cal = calibration_losses(stack(cal_v), stack(cal_q), cfg.lambda_video, cfg.lambda_layer, cfg.nce_temperature,
                                  cfg.symmetric_nce);
    out.video = cal.video;
    out.layer = cal.layer;
    for (auto& w : cal.warnings) out.warnings.push_back(std::move(w));
  }
  out.total = joint_loss(out.video, out.layer, out.cls, out.reg, out.sal);
  return out;
}

}  // namespace r2g
