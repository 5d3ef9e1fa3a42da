// SPDX-License-Identifier: Apache-2.0
#include "r2g/heads.hpp"

#include <algorithm>
#include <limits>

#include "r2g/errors.hpp"

namespace r2g {

PyramidLayout PyramidLayout::make(std::size_t num_frames, std::size_t num_levels) {
  if (num_levels == 0) throw ConfigError("pyramid needs at least one level");
  if (num_levels > 32 || num_frames < (std::size_t{1} << (num_levels - 1))) {
    std::size_t fit = 1;
    while (fit < 32 && (std::size_t{1} << fit) <= num_frames) ++fit;
    throw ConfigError("pyramid depth " + std::to_string(num_levels) + " needs at least " +
                      std::to_string(std::size_t{1} << (std::min<std::size_t>(num_levels, 32) - 1)) +
                      " frames, got " + std::to_string(num_frames) + "; use pyramid_levels <= " +
                      std::to_string(fit));
  }
  PyramidLayout layout;
  layout.num_frames = num_frames;
  std::size_t offset = 0;
  for (std::size_t l = 1; l <= num_levels; ++l) {
    const std::size_t s = std::size_t{1} << (l - 1);
    const std::size_t len = (num_frames + s - 1) / s;
    layout.levels.push_back({l, s, offset, len});
    offset += len;
  }
  return layout;
}

std::size_t PyramidLayout::total() const { return levels.empty() ? 0 : levels.back().offset + levels.back().length; }

const PyramidLevel& PyramidLayout::level_of(std::size_t position) const {
  for (const auto& lv : levels) {
    if (position < lv.offset + lv.length) return lv;
  }
  throw ContractError("pyramid position " + std::to_string(position) + " out of range");
}

double PyramidLayout::center(std::size_t position) const {
  const auto& lv = level_of(position);
  const double s = static_cast<double>(lv.stride);
  return static_cast<double>(position - lv.offset) * s + (s - 1.0) / 2.0;
}

TemporalPyramid::TemporalPyramid(std::size_t dim, std::size_t levels, Activation act, CounterRng& rng) : act_(act) {
  if (levels == 0) throw ConfigError("pyramid needs at least one level");
  for (std::size_t l = 1; l < levels; ++l) convs_.emplace_back(dim, dim, 3, 2, 1, rng);
}

PyramidFeatures TemporalPyramid::operator()(const Tensor& h) const {
  PyramidFeatures out;
  out.layout = PyramidLayout::make(h.dim(0), levels());
  out.maps.push_back(h);
  for (const auto& conv : convs_) out.maps.push_back(activate(conv(out.maps.back()), act_));
  out.concat = out.maps.size() == 1 ? h : concat(out.maps, 0);
  return out;
}

void TemporalPyramid::collect(ParamList& out, const std::string& prefix) const {
  for (std::size_t i = 0; i < convs_.size(); ++i) convs_[i].collect(out, prefix + ".down" + std::to_string(i + 1));
}

PredictionHeads::PredictionHeads(std::size_t dim, Activation act, CounterRng& rng)
    : cls1_(dim, dim, 3, 1, 1, rng),
      cls2_(dim, 1, 3, 1, 1, rng),
      reg1_(dim, dim, 3, 1, 1, rng),
      reg2_(dim, 2, 3, 1, 1, rng),
      act_(act) {}

std::pair<Tensor, Tensor> PredictionHeads::operator()(const PyramidFeatures& pyr) const {
  std::vector<Tensor> logits, disp;
  for (const auto& m : pyr.maps) {
    logits.push_back(cls2_(activate(cls1_(m), act_)));
    disp.push_back(softplus(reg2_(activate(reg1_(m), act_))));
  }
  const Tensor l = logits.size() == 1 ? logits.front() : concat(logits, 0);
  const Tensor d = disp.size() == 1 ? disp.front() : concat(disp, 0);
  return {reshape(l, {l.dim(0)}), d};
}

void PredictionHeads::collect(ParamList& out, const std::string& prefix) const {
  cls1_.collect(out, prefix + ".cls1");
  cls2_.collect(out, prefix + ".cls2");
  reg1_.collect(out, prefix + ".reg1");
  reg2_.collect(out, prefix + ".reg2");
}

Tensor predict_saliency(const Tensor& h, const Tensor& q) {
  if (h.rank() != 2 || q.rank() != 1 || h.dim(1) != q.dim(0)) {
    throw DimensionError("predict_saliency expects h [T, C] and q [C], got " + shape_str(h.shape()) + " and " +
                         shape_str(q.shape()));
  }
  const std::size_t T = h.dim(0), C = h.dim(1);
  const Tensor dot = reshape(matmul(h, reshape(q, {C, 1})), {T});
  const Tensor hn = sqrt(sum(square(h), 1));
  const Tensor qn = sqrt(sum(square(q)));
  return div(dot, clamp_min(mul(hn, qn), 1e-8));
}

LengthBands default_length_bands(const PyramidLayout& layout) {
  LengthBands bands;
  for (const auto& lv : layout.levels) {
    const double s = static_cast<double>(lv.stride);
    const double lo = lv.level == 1 ? 0.0 : 2.0 * s;
    const double hi = lv.level == layout.levels.size() ? -1.0 : 16.0 * s;
    bands.emplace_back(lo, hi);
  }
  return bands;
}

std::size_t PyramidTargets::num_positive() const {
  return static_cast<std::size_t>(std::count(inside.begin(), inside.end(), true));
}

PyramidTargets assign_targets(const PyramidLayout& layout, const std::vector<Moment>& moments,
                              const LengthBands& bands) {
  if (bands.size() != layout.levels.size()) {
    throw ConfigError("need one length band per pyramid level (" + std::to_string(layout.levels.size()) + "), got " +
                      std::to_string(bands.size()));
  }
  const std::size_t M = layout.total();
  PyramidTargets t;
  t.cls.assign(M, 0.0);
  t.reg.assign(M * 2, 0.0);
  t.inside.assign(M, false);
  for (std::size_t i = 0; i < M; ++i) {
    const auto& lv = layout.level_of(i);
    const auto [lo, hi] = bands[lv.level - 1];
    const double c = layout.center(i);
    const Moment* best = nullptr;
    for (const auto& m : moments) {
      const double len = m.length();
      if (!m.contains(c) || len < lo || (hi >= 0.0 && len > hi)) continue;
      if (best == nullptr || len < best->length()) best = &m;
    }
    if (best == nullptr) continue;
    const auto [ds, de] = displacement_target(c, *best);
    const double s = static_cast<double>(lv.stride);
    t.cls[i] = 1.0;
    t.inside[i] = true;
    t.reg[2 * i] = ds / s;
    t.reg[2 * i + 1] = de / s;
  }
  return t;
}

namespace {

void check_targets(const std::vector<double>& targets, std::size_t M) {
  if (targets.size() != M) {
    throw DimensionError("focal loss: " + std::to_string(targets.size()) + " targets for " + std::to_string(M) +
                         " positions");
  }
  for (std::size_t i = 0; i < M; ++i) {
    if (targets[i] != 0.0 && targets[i] != 1.0) {
      throw LabelError("focal loss target at position " + std::to_string(i) + " is " + std::to_string(targets[i]) +
                       ", expected 0 or 1");
    }
  }
}

Tensor focal_core(const Tensor& p, const Tensor& log_p, const Tensor& log_1mp, const std::vector<double>& targets,
                  double alpha, double gamma, double lambda) {
  const std::size_t M = p.numel();
  std::vector<double> wpos(M), wneg(M);
  for (std::size_t i = 0; i < M; ++i) {
    wpos[i] = targets[i] * alpha;
    wneg[i] = (1.0 - targets[i]) * (1.0 - alpha);
  }
  const Shape shape = p.shape();
  const Tensor one_minus_p = add_scalar(neg(p), 1.0);
  const Tensor pos = mul(mul(pow(one_minus_p, gamma), log_p), Tensor::from(shape, std::move(wpos)));
  const Tensor negt = mul(mul(pow(p, gamma), log_1mp), Tensor::from(shape, std::move(wneg)));
  return scale(mean(add(pos, negt)), -lambda);
}

}  // namespace

Tensor focal_cls_loss(const Tensor& probs, const std::vector<double>& targets, double alpha, double gamma,
                      double lambda) {
  check_targets(targets, probs.numel());
  for (double v : probs.values()) {
    if (!(v > 0.0 && v < 1.0)) throw ContractError("focal loss probabilities must lie in (0, 1)");
  }
  return focal_core(probs, log(probs), log(add_scalar(neg(probs), 1.0)), targets, alpha, gamma, lambda);
}

Tensor focal_cls_loss_logits(const Tensor& logits, const std::vector<double>& targets, double alpha, double gamma,
                             double lambda) {
  check_targets(targets, logits.numel());
  return focal_core(sigmoid(logits), log_sigmoid(logits), log_sigmoid(neg(logits)), targets, alpha, gamma, lambda);
}

Tensor boundary_l1_loss(const Tensor& pred, const std::vector<double>& target, const Mask& inside, double lambda) {
  if (pred.rank() != 2 || pred.dim(1) != 2) throw DimensionError("boundary loss expects [M, 2] predictions");
  const std::size_t M = pred.dim(0);
  if (target.size() != 2 * M || inside.size() != M) throw DimensionError("boundary loss targets do not match [M, 2]");
  std::vector<std::size_t> idx;
  std::vector<double> gt;
  for (std::size_t i = 0; i < M; ++i) {
    if (!inside[i]) continue;
    idx.push_back(i);
    gt.push_back(target[2 * i]);
    gt.push_back(target[2 * i + 1]);
  }
  if (idx.empty()) return Tensor::scalar(0.0);
  const std::size_t n = idx.size();
  const Tensor diff = sub(index_select(pred, 0, idx), Tensor::from({n, 2}, std::move(gt)));
  return scale(sum(abs(diff)), lambda / static_cast<double>(n));
}

Tensor saliency_loss(const Tensor& scores, const std::vector<double>& relevance, std::size_t p, double tau,
                     double lambda) {
  if (scores.rank() != 1 || relevance.size() != scores.dim(0)) {
    throw DimensionError("saliency loss expects [T] scores with T relevance values");
  }
  if (p >= relevance.size()) throw ContractError("sampled positive frame outside the video");
  std::vector<std::size_t> idx{p};
  for (std::size_t i = 0; i < relevance.size(); ++i) {
    if (relevance[i] < relevance[p]) idx.push_back(i);
  }
  if (idx.size() == 1) return Tensor::scalar(0.0);
  const Tensor logits = scale(index_select(scores, 0, idx), 1.0 / tau);
  return scale(reshape(slice(log_softmax(logits, 0), 0, 0, 1), {}), -lambda);
}

}  // namespace r2g
