// SPDX-License-Identifier: Apache-2.0
#include "r2g/features.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "r2g/errors.hpp"

namespace r2g {

void LayerFeatureSet::validate() const {
  if (!visual.defined() || visual.rank() != 4) throw FormatError("features: visual must be rank 4 [N,T,P+1,D_v]");
  if (!query.defined() || query.rank() != 3) throw FormatError("features: query must be rank 3 [N,L,D_q]");
  if (visual.requires_grad() || query.requires_grad()) throw FormatError("features: encoder outputs must be frozen");
  if (query.dim(0) != visual.dim(0)) {
    throw FormatError("features: visual has " + std::to_string(visual.dim(0)) + " layers but query has " +
                      std::to_string(query.dim(0)));
  }
  if (visual.dim(1) == 0) throw FormatError("features: visual has zero frames");
  if (visual.dim(2) < 2) throw FormatError("features: visual needs a [CLS] token and at least one patch");
  if (query_mask.size() != query.dim(1)) {
    throw FormatError("features: query_mask has " + std::to_string(query_mask.size()) + " entries for " +
                      std::to_string(query.dim(1)) + " tokens");
  }
  if (std::none_of(query_mask.begin(), query_mask.end(), [](bool b) { return b; })) {
    throw FormatError("features: query_mask has no valid token");
  }
  if (layer_indices.size() != visual.dim(0)) throw FormatError("features: layer_indices length mismatch");
  for (std::size_t i = 1; i < layer_indices.size(); ++i) {
    if (layer_indices[i] >= layer_indices[i - 1]) {
      throw FormatError("features: layer_indices must be strictly decreasing (last encoder layer first)");
    }
  }
  if (!(frame_rate > 0.0) || !std::isfinite(frame_rate)) throw FormatError("features: frame_rate must be positive");
}

R2ftFile features_to_container(const LayerFeatureSet& fs) {
  fs.validate();
  R2ftFile file;
  file.dtype = fs.storage;
  auto raw = [](const Tensor& t) { return RawTensor{t.shape(), {t.values().begin(), t.values().end()}}; };
  file.tensors.push_back(raw(fs.visual));
  file.tensors.push_back(raw(fs.query));
  RawTensor mask{{fs.query_mask.size()}, {}};
  for (bool b : fs.query_mask) mask.values.push_back(b ? 1.0 : 0.0);
  file.tensors.push_back(std::move(mask));
  RawTensor layers{{fs.layer_indices.size()}, {}};
  for (int l : fs.layer_indices) layers.values.push_back(static_cast<double>(l));
  file.tensors.push_back(std::move(layers));
  file.tensors.push_back(RawTensor{{1}, {fs.frame_rate}});
  return file;
}

LayerFeatureSet features_from_container(const R2ftFile& file) {
  if (file.tensors.size() != 5) {
    throw FormatError("features: expected 5 tensors, found " + std::to_string(file.tensors.size()));
  }
  const auto& t = file.tensors;
  if (t[0].shape.size() != 4) throw FormatError("features: field 'visual' must be rank 4");
  if (t[1].shape.size() != 3) throw FormatError("features: field 'query' must be rank 3");
  if (t[2].shape.size() != 1) throw FormatError("features: field 'query_mask' must be rank 1");
  if (t[3].shape.size() != 1) throw FormatError("features: field 'layer_indices' must be rank 1");
  if (t[4].shape != Shape{1}) throw FormatError("features: field 'frame_rate' must have shape [1]");
  LayerFeatureSet fs;
  fs.storage = file.dtype;
  fs.visual = Tensor::from(t[0].shape, t[0].values);
  fs.query = Tensor::from(t[1].shape, t[1].values);
  for (double v : t[2].values) {
    if (v != 0.0 && v != 1.0) throw FormatError("features: field 'query_mask' must hold 0/1");
    fs.query_mask.push_back(v == 1.0);
  }
  for (double v : t[3].values) {
    if (v != std::floor(v)) throw FormatError("features: field 'layer_indices' must hold integers");
    fs.layer_indices.push_back(static_cast<int>(v));
  }
  fs.frame_rate = t[4].values[0];
  fs.validate();
  return fs;
}

void write_features(const LayerFeatureSet& fs, const std::filesystem::path& path) {
  write_r2ft(path, features_to_container(fs));
}

LayerFeatureSet load_features(const std::filesystem::path& path) { return features_from_container(read_r2ft(path)); }

void GroundingLabels::validate(std::size_t num_frames) const {
  const double T = static_cast<double>(num_frames);
  for (const auto& m : moments) {
    if (!(m.start <= m.end) || m.start < 0.0 || m.end >= T) {
      throw FormatError("labels: moment [" + std::to_string(m.start) + ", " + std::to_string(m.end) +
                        "] outside [0, " + std::to_string(num_frames) + ")");
    }
  }
  if (saliency) {
    if (saliency->size() != num_frames) throw FormatError("labels: saliency length differs from frame count");
    for (double s : *saliency) {
      if (!(s >= 0.0 && s <= 1.0)) throw FormatError("labels: saliency outside [0, 1]");
    }
  }
  if (summary) {
    if (summary->size() != num_frames) throw FormatError("labels: summary length differs from frame count");
    for (double f : *summary) {
      if (f != 0.0 && f != 1.0) throw FormatError("labels: summary must be 0/1");
    }
  }
}

std::vector<std::size_t> positive_frames(const GroundingLabels& labels, std::size_t num_frames, const OmegaRule& rule) {
  double cut = rule.threshold;
  if (labels.saliency && rule.mode == OmegaMode::Relative) {
    const double peak = *std::max_element(labels.saliency->begin(), labels.saliency->end());
    cut = peak > 0.0 ? rule.threshold * peak : 2.0;  // nothing salient in an all-zero curve
  }
  std::vector<std::size_t> omega;
  for (std::size_t i = 0; i < num_frames; ++i) {
    const double t = static_cast<double>(i);
    bool pos = std::any_of(labels.moments.begin(), labels.moments.end(), [t](const Moment& m) { return m.contains(t); });
    if (!pos && labels.saliency) pos = (*labels.saliency)[i] >= cut && (*labels.saliency)[i] > 0.0;
    if (!pos && labels.summary) pos = (*labels.summary)[i] == 1.0;
    if (pos) omega.push_back(i);
  }
  return omega;
}

std::vector<double> frame_relevance(const GroundingLabels& labels, std::size_t num_frames) {
  if (labels.saliency) return *labels.saliency;
  if (labels.summary) return *labels.summary;
  std::vector<double> r(num_frames, 0.0);
  for (std::size_t i = 0; i < num_frames; ++i) {
    for (const auto& m : labels.moments) {
      if (m.contains(static_cast<double>(i))) r[i] = 1.0;
    }
  }
  return r;
}

std::pair<double, double> displacement_target(double frame, const Moment& m) {
  return {frame - m.start, m.end - frame};
}

}  // namespace r2g
