// SPDX-License-Identifier: Apache-2.0
//
// Optimization loop, learning-rate schedule, checkpoints, evaluation and
// inference.
//
// Checkpoint layout: one line of JSON (config, config_hash, step, parameter
// names, chunk sizes) terminated by '\n', followed by one or more R2FT
// blobs holding the parameters in the listed order.
#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "r2g/manifest.hpp"
#include "r2g/metrics.hpp"
#include "r2g/model.hpp"

namespace r2g {

/// Linear warmup from 0 over warmup_iters, then constant; multiplied by 0.1
/// from epoch lr_drop_epoch onwards (0 disables the drop).
double lr_schedule(std::size_t step, const TrainConfig& cfg, std::size_t iters_per_epoch);

/// Adam with decoupled weight decay, applied to matrices and kernels
/// (rank >= 2) only.
class AdamW {
 public:
  AdamW(std::vector<NamedTensor> params, const TrainConfig& cfg);
  void step(double lr);
  void zero_grad();
  std::size_t steps_taken() const { return t_; }

 private:
  std::vector<NamedTensor> params_;
  std::vector<std::vector<double>> m_, v_;
  double beta1_, beta2_, eps_, wd_;
  std::size_t t_ = 0;
};

/// Rescales gradients so their global L2 norm is at most max_norm. Returns
/// the norm before clipping.
double clip_grad_norm(const std::vector<NamedTensor>& params, double max_norm);
double grad_norm(const std::vector<NamedTensor>& params);

std::vector<Example> load_examples(const Manifest& manifest);

struct StepLog {
  std::size_t step = 0;
  double lr = 0.0;
  double total = 0.0;
  double terms[5] = {0, 0, 0, 0, 0};  // video, layer, cls, reg, sal
};

struct TrainOptions {
  std::function<void(const StepLog&)> on_step;
  /// Called with warnings from the loss (deduplicated per message).
  std::function<void(const std::string&)> on_warning;
};

struct TrainResult {
  R2Model model;
  std::vector<StepLog> log;
  std::size_t steps = 0;
};

/// Deterministic given (config, data): data order, DropPath and positive
/// sampling all derive from config.train.seed.
TrainResult train(const Config& config, const std::vector<Example>& data, const TrainOptions& options = {});

/// Mean joint loss in evaluation mode over consecutive batches of
/// `batch_size` (all positive frames averaged in the saliency term).
double validation_loss(const R2Model& model, const std::vector<Example>& data, std::size_t batch_size);

/// Eval-mode forward, decoding and NMS for one feature set.
PredictionRecord infer(const R2Model& model, const LayerFeatureSet& fs, const std::string& id);

MetricReport evaluate(const R2Model& model, const Manifest& manifest, const std::vector<Example>& data);

void save_checkpoint(const std::filesystem::path& path, const R2Model& model, const Config& config,
                     std::size_t step);
std::vector<std::byte> encode_checkpoint(const R2Model& model, const Config& config, std::size_t step);

struct LoadedCheckpoint {
  Config config;
  std::string config_hash;
  std::size_t step = 0;
  R2Model model;
};

/// Throws CompatibilityError when `expected_hash` is given and differs from
/// the stored one, or when the stored hash does not match the stored config.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path,
                                 const std::optional<std::string>& expected_hash = std::nullopt);

}  // namespace r2g
