// SPDX-License-Identifier: Apache-2.0
//
// Temporal feature pyramid over the refined hidden state, the three
// prediction heads, target assignment and the head losses.
//
// Level l (1-based) has stride 2^(l-1) and ceil(T / stride) positions; it is
// reached from level 1 through l-1 stride-2 convolutions (kernel 3, pad 1).
// Position j of a level covers source frames [j*s, (j+1)*s - 1] and is
// centred at j*s + (s-1)/2.
#pragma once

#include <string>
#include <utility>
#include <vector>

#include "r2g/features.hpp"
#include "r2g/nn.hpp"

namespace r2g {

struct PyramidLevel {
  std::size_t level = 1;
  std::size_t stride = 1;
  std::size_t offset = 0;  // first index in the concatenated sequence
  std::size_t length = 0;
};

struct PyramidLayout {
  std::size_t num_frames = 0;
  std::vector<PyramidLevel> levels;

  /// Throws ConfigError when T < 2^(levels-1).
  static PyramidLayout make(std::size_t num_frames, std::size_t num_levels);
  std::size_t total() const;
  const PyramidLevel& level_of(std::size_t position) const;
  double center(std::size_t position) const;
  std::size_t stride(std::size_t position) const { return level_of(position).stride; }
};

struct PyramidFeatures {
  PyramidLayout layout;
  std::vector<Tensor> maps;  // per level [len_l, C]
  Tensor concat;             // [sum len_l, C]
};

class TemporalPyramid {
 public:
  TemporalPyramid() = default;
  TemporalPyramid(std::size_t dim, std::size_t levels, Activation act, CounterRng& rng);
  std::size_t levels() const { return convs_.size() + 1; }
  PyramidFeatures operator()(const Tensor& h) const;
  void collect(ParamList& out, const std::string& prefix) const;

 private:
  std::vector<Conv1d> convs_;  // convs_[i] maps level i+1 to level i+2
  Activation act_ = Activation::Gelu;
};

struct HeadOutputs {
  Tensor logits;    // [M] foreground logits
  Tensor probs;     // [M] sigmoid(logits)
  Tensor disp;      // [M, 2] (start, end) displacements in stride units, >= 0
  Tensor saliency;  // [T] cosine scores
};

/// Two-layer kernel-3 convolution heads shared by all pyramid levels; each
/// level is convolved separately so no kernel straddles a level boundary.
class PredictionHeads {
 public:
  PredictionHeads() = default;
  PredictionHeads(std::size_t dim, Activation act, CounterRng& rng);
  /// Foreground logits and displacements for every pyramid position.
  std::pair<Tensor, Tensor> operator()(const PyramidFeatures& pyr) const;
  void collect(ParamList& out, const std::string& prefix) const;

 private:
  Conv1d cls1_, cls2_, reg1_, reg2_;
  Activation act_ = Activation::Gelu;
};

/// cos(h_i, q) with the denominator clamped at 1e-8. h [T, C], q [C].
Tensor predict_saliency(const Tensor& h, const Tensor& q);

/// Per-level moment-length band [lo, hi] in frames; hi < 0 means unbounded.
using LengthBands = std::vector<std::pair<double, double>>;
/// Default bands: [2s, 16s] at stride s, no lower bound on level 1 and no
/// upper bound on the top level.
LengthBands default_length_bands(const PyramidLayout& layout);

struct PyramidTargets {
  std::vector<double> cls;  // [M] in {0, 1}
  std::vector<double> reg;  // [M * 2] displacements / stride (0 outside)
  Mask inside;              // [M]
  std::size_t num_positive() const;
};

/// A position is positive when its centre lies inside a moment whose length
/// is within the level's band. Among several such moments the shortest wins.
PyramidTargets assign_targets(const PyramidLayout& layout, const std::vector<Moment>& moments,
                              const LengthBands& bands);

/// Mean over positions of the alpha-balanced focal term, times lambda.
/// Targets must be 0 or 1 (LabelError otherwise).
Tensor focal_cls_loss(const Tensor& probs, const std::vector<double>& targets, double alpha, double gamma,
                      double lambda);
/// Same loss computed from logits through log-sigmoid.
Tensor focal_cls_loss_logits(const Tensor& logits, const std::vector<double>& targets, double alpha, double gamma,
                             double lambda);

/// lambda * mean over inside positions of |b_s - b^_s| + |b_e - b^_e|; 0 when
/// no position is inside. pred [M, 2], target M*2 values.
Tensor boundary_l1_loss(const Tensor& pred, const std::vector<double>& target, const Mask& inside, double lambda);

/// -lambda * log(exp(s_p/tau) / (exp(s_p/tau) + sum_{i: rel_i < rel_p} exp(s_i/tau))).
/// Returns 0 when no frame is less relevant than p.
Tensor saliency_loss(const Tensor& scores, const std::vector<double>& relevance, std::size_t p, double tau,
                     double lambda);

}  // namespace r2g
