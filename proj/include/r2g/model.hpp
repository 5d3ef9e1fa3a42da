// SPDX-License-Identifier: Apache-2.0
//
// Full grounding model: refinement block, query pooling, temporal pyramid
// and heads, plus the joint training objective over a batch.
#pragma once

#include <string>
#include <vector>

#include "r2g/calibration.hpp"
#include "r2g/config.hpp"
#include "r2g/heads.hpp"
#include "r2g/r2block.hpp"

namespace r2g {

struct Example {
  std::string id;
  LayerFeatureSet features;
  GroundingLabels labels;
};

struct ModelOutput {
  R2Output r2;
  Tensor pooled_query;  // [K, C] adaptive-pooled query per step
  PyramidFeatures pyramid;
  HeadOutputs heads;
};

class R2Model {
 public:
  R2Model() = default;
  R2Model(const ModelConfig& cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  const R2Block& block() const { return block_; }
  const AdaptivePool& query_pool() const { return pool_; }

  /// Training mode enables DropPath, drawing from `rng` (may be null).
  ModelOutput forward(const LayerFeatureSet& fs, bool train, CounterRng* rng) const;
  /// Learnable tensors under stable dotted names, in a fixed order.
  ParamList params() const;
  LengthBands length_bands(const PyramidLayout& layout) const;

 private:
  ModelConfig cfg_;
  R2Block block_;
  AdaptivePool pool_;
  TemporalPyramid pyramid_;
  PredictionHeads heads_;
};

struct LossTerms {
  Tensor video, layer, cls, reg, sal;  // each already weighted
  Tensor total;
  std::size_t skipped_calibration = 0;  // samples with no positive frame
  std::vector<std::string> warnings;

  static constexpr const char* kNames[5] = {"video", "layer", "cls", "reg", "sal"};
  const Tensor& term(std::size_t i) const;
};

/// Plain sum of the five weighted terms.
Tensor joint_loss(const Tensor& video, const Tensor& layer, const Tensor& cls, const Tensor& reg, const Tensor& sal);

/// Losses over a batch. With `positive_rng` set, one positive frame per
/// sample is drawn for the saliency term; otherwise the term is averaged
/// over all positive frames (deterministic evaluation).
LossTerms compute_losses(const R2Model& model, const std::vector<const Example*>& batch, bool train,
                         CounterRng* droppath_rng, CounterRng* positive_rng);

}  // namespace r2g
