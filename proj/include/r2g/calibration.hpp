// SPDX-License-Identifier: Apache-2.0
//
// Contrastive alignment of per-step visual and query summaries, across the
// samples of a batch (video level) and across refinement steps within one
// sample (layer level).
#pragma once

#include <string>
#include <vector>

#include "r2g/nn.hpp"

namespace r2g {

/// Mean over the frames in `positives` of e_v0 [K, T, C] -> [K, C].
/// Throws DegenerateError when `positives` is empty.
Tensor pool_positive_video(const Tensor& e_v0, const std::vector<std::size_t>& positives);

/// Token-wise learned pooling: one score per token from an affine map,
/// softmax over the unmasked tokens, weighted sum.
struct AdaptivePool {
  Linear score;  // C -> 1

  AdaptivePool() = default;
  AdaptivePool(std::size_t dim, CounterRng& rng);
  /// tokens [..., L, C] -> [..., C]
  Tensor operator()(const Tensor& tokens, const Mask& mask) const;
  void collect(ParamList& out, const std::string& prefix) const;
};

/// InfoNCE over the rows of v [M, C] and q [M, C]; row i of each is the
/// positive pair. Both sides are L2-normalized, logits are cosine / tau.
/// The symmetric form averages the v->q and q->v directions.
Tensor info_nce(const Tensor& v, const Tensor& q, double tau, bool symmetric);

struct CalibrationLosses {
  Tensor video;  // scalar
  Tensor layer;  // scalar
  std::vector<std::string> warnings;
};

/// v, q: [B, K, C]. Video loss contrasts the B samples within each step and
/// averages over steps; layer loss contrasts the K steps within each sample
/// and averages over samples. Each is scaled by its lambda. A degenerate
/// axis (B == 1 or K == 1) yields 0 and a warning.
CalibrationLosses calibration_losses(const Tensor& v, const Tensor& q, double lambda_video, double lambda_layer,
                                     double tau, bool symmetric);

}  // namespace r2g
