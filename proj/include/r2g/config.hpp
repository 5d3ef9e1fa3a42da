// SPDX-License-Identifier: Apache-2.0
//
// Model and training configuration. Serialized as JSON:
//   {"model": {...}, "train": {...}}
// Unknown keys are rejected so typos do not silently fall back to defaults.
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "r2g/features.hpp"
#include "r2g/nn.hpp"

namespace r2g {

struct ModelConfig {
  // encoder feature widths
  std::size_t visual_dim = 768;
  std::size_t query_dim = 512;

  // refinement block
  std::size_t hidden_size = 256;
  std::size_t num_heads = 8;
  std::size_t K = 4;
  bool reversed = true;
  bool share_params = true;
  double droppath_p = 0.1;
  AttnOrder attn_order = AttnOrder::CrossFirst;
  std::size_t num_temporal_layers = 1;
  Activation activation = Activation::Gelu;
  /// Hidden width of the two-layer feature MLPs; 0 means hidden_size.
  std::size_t mlp_hidden = 0;

  // calibration
  double lambda_video = 0.1;
  double lambda_layer = 0.1;
  double nce_temperature = 0.07;
  bool symmetric_nce = true;
  OmegaRule omega;

  // pyramid and heads
  std::size_t pyramid_levels = 4;
  /// Per-level [min, max] moment length in frames for positive assignment;
  /// empty means the stride rule (see heads.hpp). max < 0 means unbounded.
  std::vector<std::pair<double, double>> level_bands;
  double lambda_cls = 1.0;
  double lambda_reg = 0.1;
  double lambda_sal = 0.1;
  double focal_alpha = 0.9;
  double focal_gamma = 2.0;
  double saliency_temperature = 0.07;
  double vs_ratio = 0.2;
  double nms_threshold = 0.7;

  std::size_t mlp_width() const { return mlp_hidden == 0 ? hidden_size : mlp_hidden; }
  void validate() const;
};

struct TrainConfig {
  std::size_t batch_size = 128;
  double lr = 5e-4;
  std::size_t warmup_iters = 500;
  /// Epoch from which the learning rate is multiplied by 0.1; 0 disables.
  std::size_t lr_drop_epoch = 20;
  std::size_t epochs = 30;
  /// Optional hard cap on optimizer steps (overrides epochs when set).
  std::optional<std::size_t> max_steps;
  std::uint64_t seed = 1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 1e-4;
  /// Global-norm clip; 0 disables.
  double grad_clip = 0.0;
  std::string optimizer = "adamw";
  std::string train_manifest;
  std::string val_manifest;
  std::string features_dir;

  void validate(std::size_t train_samples) const;
};

struct Config {
  ModelConfig model;
  TrainConfig train;
};

/// Learning-rate table defaults per dataset (QVHighlights, Ego4D-NLQ,
/// Charades-STA, TACoS, YouTube Highlights, TVSum). Throws on unknown name.
TrainConfig dataset_defaults(const std::string& dataset);

nlohmann::json to_json(const ModelConfig& m);
nlohmann::json to_json(const TrainConfig& t);
nlohmann::json to_json(const Config& c);
ModelConfig model_config_from_json(const nlohmann::json& j);
TrainConfig train_config_from_json(const nlohmann::json& j);
Config config_from_json(const nlohmann::json& j);
Config load_config(const std::string& path);

/// Hex digest over the canonical JSON of the model section; identifies
/// checkpoint/architecture compatibility.
std::string config_hash(const ModelConfig& m);

}  // namespace r2g
