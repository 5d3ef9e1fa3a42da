// SPDX-License-Identifier: Apache-2.0
#include "r2g/config.hpp"

#include <cstdio>
#include <fstream>
#include <functional>
#include <map>

#include "r2g/errors.hpp"

namespace r2g {

using json = nlohmann::json;

void ModelConfig::validate() const {
  if (visual_dim == 0 || query_dim == 0 || hidden_size == 0) throw ConfigError("model: widths must be positive");
  if (num_heads == 0 || hidden_size % num_heads != 0) {
    throw ConfigError("model: hidden_size must be divisible by num_heads");
  }
  if (K == 0) throw ConfigError("model: K must be at least 1");
  if (num_temporal_layers == 0) throw ConfigError("model: num_temporal_layers must be at least 1");
  if (droppath_p < 0.0 || droppath_p >= 1.0) throw ConfigError("model: droppath_p must be in [0, 1)");
  if (pyramid_levels == 0) throw ConfigError("model: pyramid_levels must be at least 1");
  if (!level_bands.empty() && level_bands.size() != pyramid_levels) {
    throw ConfigError("model: level_bands needs one [min, max] pair per pyramid level");
  }
  for (double l : {lambda_video, lambda_layer, lambda_cls, lambda_reg, lambda_sal}) {
    if (l < 0.0) throw ConfigError("model: loss weights must be non-negative");
  }
  if (!(nce_temperature > 0.0) || !(saliency_temperature > 0.0)) throw ConfigError("model: temperatures must be > 0");
  if (focal_alpha < 0.0 || focal_alpha > 1.0 || focal_gamma < 0.0) throw ConfigError("model: invalid focal parameters");
  if (!(vs_ratio > 0.0 && vs_ratio <= 1.0)) throw ConfigError("model: vs_ratio must be in (0, 1]");
}

void TrainConfig::validate(std::size_t train_samples) const {
  if (batch_size == 0) throw ConfigError("train: batch_size must be positive");
  if (!(lr > 0.0)) throw ConfigError("train: lr must be positive");
  if (weight_decay < 0.0 || grad_clip < 0.0) throw ConfigError("train: weight_decay and grad_clip must be >= 0");
  if (optimizer != "adamw") throw ConfigError("train: unsupported optimizer '" + optimizer + "'");
  if (train_samples > 0) {
    const std::size_t per_epoch = (train_samples + batch_size - 1) / batch_size;
    const std::size_t total = max_steps.value_or(per_epoch * epochs);
    if (total > 0 && warmup_iters >= total) {
      throw ConfigError("train: warmup (" + std::to_string(warmup_iters) + ") must be below total iterations (" +
                        std::to_string(total) + ")");
    }
  }
}

TrainConfig dataset_defaults(const std::string& dataset) {
  struct Row {
    std::size_t batch;
    double lr;
    std::size_t epochs, warmup, drop;
  };
  static const std::map<std::string, Row> table = {
      {"qvhighlights", {128, 5e-4, 30, 500, 20}}, {"ego4d", {32, 2.5e-4, 30, 500, 20}},
      {"charades", {32, 2.5e-4, 50, 500, 30}},    {"tacos", {32, 2.5e-4, 100, 500, 50}},
      {"youtube", {4, 5e-4, 200, 50, 0}},         {"tvsum", {4, 5e-4, 500, 50, 0}},
  };
  auto it = table.find(dataset);
  if (it == table.end()) throw ConfigError("no defaults for dataset '" + dataset + "'");
  TrainConfig t;
  t.batch_size = it->second.batch;
  t.lr = it->second.lr;
  t.epochs = it->second.epochs;
  t.warmup_iters = it->second.warmup;
  t.lr_drop_epoch = it->second.drop;
  return t;
}

json to_json(const ModelConfig& m) {
  json bands = json::array();
  for (const auto& [lo, hi] : m.level_bands) bands.push_back({lo, hi});
  return {
      {"visual_dim", m.visual_dim},
      {"query_dim", m.query_dim},
      {"hidden_size", m.hidden_size},
      {"num_heads", m.num_heads},
      {"K", m.K},
      {"reversed", m.reversed},
      {"share_params", m.share_params},
      {"droppath_p", m.droppath_p},
      {"attn_order", std::string(attn_order_name(m.attn_order))},
      {"num_temporal_layers", m.num_temporal_layers},
      {"activation", std::string(activation_name(m.activation))},
      {"mlp_hidden", m.mlp_hidden},
      {"lambda_video", m.lambda_video},
      {"lambda_layer", m.lambda_layer},
      {"nce_temperature", m.nce_temperature},
      {"symmetric_nce", m.symmetric_nce},
      {"omega_threshold_mode", m.omega.mode == OmegaMode::Relative ? "relative" : "absolute"},
      {"omega_threshold", m.omega.threshold},
      {"pyramid_levels", m.pyramid_levels},
      {"level_bands", bands},
      {"lambda_cls", m.lambda_cls},
      {"lambda_reg", m.lambda_reg},
      {"lambda_sal", m.lambda_sal},
      {"focal_alpha", m.focal_alpha},
      {"focal_gamma", m.focal_gamma},
      {"saliency_temperature", m.saliency_temperature},
      {"vs_ratio", m.vs_ratio},
      {"nms_threshold", m.nms_threshold},
  };
}

json to_json(const TrainConfig& t) {
  json j = {{"batch_size", t.batch_size},     {"lr", t.lr},
            {"warmup_iters", t.warmup_iters}, {"lr_drop_epoch", t.lr_drop_epoch},
            {"epochs", t.epochs},             {"seed", t.seed},
            {"beta1", t.beta1},               {"beta2", t.beta2},
            {"adam_eps", t.adam_eps},         {"weight_decay", t.weight_decay},
            {"grad_clip", t.grad_clip},       {"optimizer", t.optimizer},
            {"train_manifest", t.train_manifest}, {"val_manifest", t.val_manifest},
            {"features_dir", t.features_dir}};
  if (t.max_steps) j["max_steps"] = *t.max_steps;
  return j;
}

json to_json(const Config& c) { return {{"model", to_json(c.model)}, {"train", to_json(c.train)}}; }

namespace {

template <class T>
using Setters = std::map<std::string, std::function<void(T&, const json&)>>;

template <class T>
void apply(T& target, const json& j, const Setters<T>& setters, const char* section) {
  if (!j.is_object()) throw ConfigError(std::string(section) + ": expected an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    auto s = setters.find(it.key());
    if (s == setters.end()) throw ConfigError(std::string(section) + ": unknown key '" + it.key() + "'");
    try {
      s->second(target, it.value());
    } catch (const json::exception& e) {
      throw ConfigError(std::string(section) + "." + it.key() + ": " + e.what());
    }
  }
}

#define R2G_FIELD(T, name) {#name, [](T& t, const json& v) { v.get_to(t.name); }}

}  // namespace

ModelConfig model_config_from_json(const json& j) {
  static const Setters<ModelConfig> setters = {
      R2G_FIELD(ModelConfig, visual_dim),
      R2G_FIELD(ModelConfig, query_dim),
      R2G_FIELD(ModelConfig, hidden_size),
      R2G_FIELD(ModelConfig, num_heads),
      R2G_FIELD(ModelConfig, K),
      R2G_FIELD(ModelConfig, reversed),
      R2G_FIELD(ModelConfig, share_params),
      R2G_FIELD(ModelConfig, droppath_p),
      {"attn_order", [](ModelConfig& m, const json& v) { m.attn_order = parse_attn_order(v.get<std::string>()); }},
      R2G_FIELD(ModelConfig, num_temporal_layers),
      {"activation", [](ModelConfig& m, const json& v) { m.activation = parse_activation(v.get<std::string>()); }},
      R2G_FIELD(ModelConfig, mlp_hidden),
      R2G_FIELD(ModelConfig, lambda_video),
      R2G_FIELD(ModelConfig, lambda_layer),
      R2G_FIELD(ModelConfig, nce_temperature),
      R2G_FIELD(ModelConfig, symmetric_nce),
      {"omega_threshold_mode",
       [](ModelConfig& m, const json& v) {
         const auto s = v.get<std::string>();
         if (s == "relative") m.omega.mode = OmegaMode::Relative;
         else if (s == "absolute") m.omega.mode = OmegaMode::Absolute;
         else throw ConfigError("omega_threshold_mode must be 'relative' or 'absolute'");
       }},
      {"omega_threshold", [](ModelConfig& m, const json& v) { v.get_to(m.omega.threshold); }},
      R2G_FIELD(ModelConfig, pyramid_levels),
      {"level_bands",
       [](ModelConfig& m, const json& v) {
         m.level_bands.clear();
         for (const auto& b : v) m.level_bands.emplace_back(b.at(0).get<double>(), b.at(1).get<double>());
       }},
      R2G_FIELD(ModelConfig, lambda_cls),
      R2G_FIELD(ModelConfig, lambda_reg),
      R2G_FIELD(ModelConfig, lambda_sal),
      R2G_FIELD(ModelConfig, focal_alpha),
      R2G_FIELD(ModelConfig, focal_gamma),
      R2G_FIELD(ModelConfig, saliency_temperature),
      R2G_FIELD(ModelConfig, vs_ratio),
      R2G_FIELD(ModelConfig, nms_threshold),
  };
  ModelConfig m;
  apply(m, j, setters, "model");
  m.validate();
  return m;
}

TrainConfig train_config_from_json(const json& j) {
  static const Setters<TrainConfig> setters = {
      {"dataset_defaults", [](TrainConfig&, const json&) {}},  // consumed below
      R2G_FIELD(TrainConfig, batch_size),
      R2G_FIELD(TrainConfig, lr),
      R2G_FIELD(TrainConfig, warmup_iters),
      R2G_FIELD(TrainConfig, lr_drop_epoch),
      R2G_FIELD(TrainConfig, epochs),
      {"max_steps", [](TrainConfig& t, const json& v) { t.max_steps = v.get<std::size_t>(); }},
      R2G_FIELD(TrainConfig, seed),
      R2G_FIELD(TrainConfig, beta1),
      R2G_FIELD(TrainConfig, beta2),
      R2G_FIELD(TrainConfig, adam_eps),
      R2G_FIELD(TrainConfig, weight_decay),
      R2G_FIELD(TrainConfig, grad_clip),
      R2G_FIELD(TrainConfig, optimizer),
      R2G_FIELD(TrainConfig, train_manifest),
      R2G_FIELD(TrainConfig, val_manifest),
      R2G_FIELD(TrainConfig, features_dir),
  };
  TrainConfig t = j.contains("dataset_defaults") ? dataset_defaults(j["dataset_defaults"].get<std::string>())
                                                 : TrainConfig{};
  apply(t, j, setters, "train");
  return t;
}

#undef R2G_FIELD

Config config_from_json(const json& j) {
  Config c;
  if (!j.is_object()) throw ConfigError("config: expected an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (it.key() == "model") c.model = model_config_from_json(it.value());
    else if (it.key() == "train") c.train = train_config_from_json(it.value());
    else throw ConfigError("config: unknown section '" + it.key() + "'");
  }
  return c;
}

Config load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config " + path + ": " + e.what());
  }
  return config_from_json(j);
}

std::string config_hash(const ModelConfig& m) {
  const std::string canon = to_json(m).dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (unsigned char c : canon) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace r2g
