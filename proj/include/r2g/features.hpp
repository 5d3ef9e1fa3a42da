// SPDX-License-Identifier: Apache-2.0
//
// Multi-layer frozen-encoder features for one video-query pair, and the
// per-frame grounding labels that go with them.
//
// Layer order: slab 0 along the layer axis is the LAST encoder layer, slab 1
// the one before it, and so on (layer_indices strictly decreasing). Patch
// index 0 of every frame is the [CLS] token. An external exporter must write
// the five tensors below in this order:
//   visual        [N, T, P+1, D_v]
//   query         [N, L, D_q]
//   query_mask    [L]      (1 = real token, 0 = padding)
//   layer_indices [N]      (encoder layer of each slab)
//   frame_rate    [1]      (frames per second)
#pragma once

#include <filesystem>
#include <optional>
#include <vector>

#include "r2g/container.hpp"
#include "r2g/tensor.hpp"

namespace r2g {

struct LayerFeatureSet {
  Tensor visual;  // [N, T, P+1, D_v], never requires grad
  Tensor query;   // [N, L, D_q], never requires grad
  Mask query_mask;
  std::vector<int> layer_indices;
  double frame_rate = 1.0;
  DType storage = DType::F64;

  std::size_t num_layers() const { return visual.dim(0); }
  std::size_t num_frames() const { return visual.dim(1); }
  std::size_t num_patches() const { return visual.dim(2) - 1; }
  std::size_t visual_dim() const { return visual.dim(3); }
  std::size_t num_tokens() const { return query.dim(1); }
  std::size_t query_dim() const { return query.dim(2); }

  /// Checks shapes, mask and layer ordering; throws FormatError.
  void validate() const;
};

void write_features(const LayerFeatureSet& fs, const std::filesystem::path& path);
LayerFeatureSet load_features(const std::filesystem::path& path);
R2ftFile features_to_container(const LayerFeatureSet& fs);
LayerFeatureSet features_from_container(const R2ftFile& file);

/// A ground-truth moment in frame units; both ends are frame positions.
struct Moment {
  double start = 0.0;
  double end = 0.0;
  double length() const { return end - start; }
  bool contains(double t) const { return t >= start && t <= end; }
};

struct GroundingLabels {
  std::vector<Moment> moments;
  std::optional<std::vector<double>> saliency;  // s_i in [0, 1]
  std::optional<std::vector<double>> summary;   // f_i in {0, 1}

  /// Throws FormatError if any moment or label array is inconsistent with T.
  void validate(std::size_t num_frames) const;
};

enum class OmegaMode { Relative, Absolute };

struct OmegaRule {
  OmegaMode mode = OmegaMode::Relative;
  /// Relative: s_i >= threshold * max(s). Absolute: s_i >= threshold.
  double threshold = 0.5;
};

/// Positive frames: inside any moment, salient by `rule`, or f_i == 1.
std::vector<std::size_t> positive_frames(const GroundingLabels& labels, std::size_t num_frames,
                                         const OmegaRule& rule = {});

/// Per-frame relevance used for saliency contrast: the saliency labels if
/// present, else the summary labels, else moment membership (1 inside).
std::vector<double> frame_relevance(const GroundingLabels& labels, std::size_t num_frames);

/// Displacement target (i - start, end - i) of a frame inside `m`.
std::pair<double, double> displacement_target(double frame, const Moment& m);

}  // namespace r2g
