// SPDX-License-Identifier: Apache-2.0
#include "r2g/calibration.hpp"

#include <algorithm>

#include "r2g/errors.hpp"

namespace r2g {

Tensor pool_positive_video(const Tensor& e_v0, const std::vector<std::size_t>& positives) {
  if (e_v0.rank() != 3) throw DimensionError("pool_positive_video expects [K, T, C], got " + shape_str(e_v0.shape()));
  if (positives.empty()) throw DegenerateError("positive frame set is empty");
  const std::size_t T = e_v0.dim(1);
  for (std::size_t t : positives) {
    if (t >= T) throw ContractError("positive frame " + std::to_string(t) + " outside [0, " + std::to_string(T) + ")");
  }
  return mean(index_select(e_v0, 1, positives), 1);
}

AdaptivePool::AdaptivePool(std::size_t dim, CounterRng& rng) : score(dim, 1, rng) {}

Tensor AdaptivePool::operator()(const Tensor& tokens, const Mask& mask) const {
  if (tokens.rank() < 2) throw DimensionError("adaptive pooling expects [..., L, C]");
  const std::size_t L = tokens.dim(-2);
  if (mask.size() != L) throw DimensionError("adaptive pooling mask does not cover L");
  if (std::none_of(mask.begin(), mask.end(), [](bool b) { return b; })) {
    throw DegenerateError("query has no unmasked tokens");
  }
  const Tensor s = score(tokens);              // [..., L, 1]
  const Tensor w = softmax(s, -2, mask);       // over L
  return sum(mul(w, tokens), -2);              // [..., C]
}

void AdaptivePool::collect(ParamList& out, const std::string& prefix) const { score.collect(out, prefix + ".score"); }

Tensor info_nce(const Tensor& v, const Tensor& q, double tau, bool symmetric) {
  if (v.rank() != 2 || v.shape() != q.shape()) {
    throw DimensionError("info_nce expects two [M, C] tensors, got " + shape_str(v.shape()) + " and " +
                         shape_str(q.shape()));
  }
  if (!(tau > 0.0)) throw ContractError("temperature must be positive");
  const std::size_t M = v.dim(0);
  std::vector<double> eye(M * M, 0.0);
  for (std::size_t i = 0; i < M; ++i) eye[i * M + i] = 1.0;
  const Tensor diag = Tensor::from({M, M}, std::move(eye));

  const Tensor logits = scale(matmul(l2_normalize(v), transpose(l2_normalize(q), 0, 1)), 1.0 / tau);
  const Tensor v2q = neg(scale(sum(mul(log_softmax(logits, 1), diag)), 1.0 / static_cast<double>(M)));
  if (!symmetric) return v2q;
  const Tensor q2v = neg(scale(sum(mul(log_softmax(logits, 0), diag)), 1.0 / static_cast<double>(M)));
  return scale(add(v2q, q2v), 0.5);
}

CalibrationLosses calibration_losses(const Tensor& v, const Tensor& q, double lambda_video, double lambda_layer,
                                     double tau, bool symmetric) {
  if (v.rank() != 3 || v.shape() != q.shape()) {
    throw DimensionError("calibration expects two [B, K, C] tensors, got " + shape_str(v.shape()) + " and " +
                         shape_str(q.shape()));
  }
  const std::size_t B = v.dim(0), K = v.dim(1), C = v.dim(2);
  CalibrationLosses out;

  if (B < 2) {
    out.video = Tensor::scalar(0.0);
    out.warnings.push_back("video-level calibration skipped: batch holds a single sample");
  } else {
    std::vector<Tensor> terms;
    for (std::size_t k = 0; k < K; ++k) {
      const Tensor vk = reshape(slice(v, 1, k, 1), {B, C});
      const Tensor qk = reshape(slice(q, 1, k, 1), {B, C});
      terms.push_back(info_nce(vk, qk, tau, symmetric));
    }
    out.video = scale(mean(stack(terms)), lambda_video);
  }

  if (K < 2) {
    out.layer = Tensor::scalar(0.0);
    out.warnings.push_back("layer-wise calibration skipped: only one refinement step");
  } else {
    std::vector<Tensor> terms;
    for (std::size_t b = 0; b < B; ++b) {
      const Tensor vb = reshape(slice(v, 0, b, 1), {K, C});
      const Tensor qb = reshape(slice(q, 0, b, 1), {K, C});
      terms.push_back(info_nce(vb, qb, tau, symmetric));
    }
    out.layer = scale(mean(stack(terms)), lambda_layer);
  }
  return out;
}

}  // namespace r2g
