// SPDX-License-Identifier: Apache-2.0
#include "r2g/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "json.hpp"
#include "r2g/errors.hpp"

namespace r2g {

using json = nlohmann::json;

double lr_schedule(std::size_t step, const TrainConfig& cfg, std::size_t iters_per_epoch) {
  double lr = cfg.lr;
  if (cfg.warmup_iters > 0 && step < cfg.warmup_iters) {
    lr *= static_cast<double>(step) / static_cast<double>(cfg.warmup_iters);
  }
  if (cfg.lr_drop_epoch > 0 && step >= cfg.lr_drop_epoch * iters_per_epoch) lr *= 0.1;
  return lr;
}

AdamW::AdamW(std::vector<NamedTensor> params, const TrainConfig& cfg)
    : params_(std::move(params)),
      beta1_(cfg.beta1),
      beta2_(cfg.beta2),
      eps_(cfg.adam_eps),
      wd_(cfg.weight_decay) {
  for (const auto& [name, t] : params_) {
    if (!t.is_leaf() || !t.requires_grad()) throw ContractError("optimizer parameter '" + name + "' is not learnable");
    m_.emplace_back(t.numel(), 0.0);
    v_.emplace_back(t.numel(), 0.0);
  }
}

void AdamW::step(double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i].second;
    auto value = p.mutable_values();
    const bool decay = p.rank() >= 2 && wd_ > 0.0;
    if (decay) {
      for (auto& x : value) x *= 1.0 - lr * wd_;
    }
    if (!p.has_grad()) continue;
    const auto g = p.grad();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < value.size(); ++j) {
      m[j] = beta1_ * m[j] + (1.0 - beta1_) * g[j];
      v[j] = beta2_ * v[j] + (1.0 - beta2_) * g[j] * g[j];
      value[j] -= lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + eps_);
    }
  }
}

void AdamW::zero_grad() {
  for (auto& [name, t] : params_) t.zero_grad();
}

double grad_norm(const std::vector<NamedTensor>& params) {
  double sq = 0.0;
  for (const auto& [name, t] : params) {
    if (!t.has_grad()) continue;
    for (double g : t.grad()) sq += g * g;
  }
  return std::sqrt(sq);
}

double clip_grad_norm(const std::vector<NamedTensor>& params, double max_norm) {
  const double norm = grad_norm(params);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (const auto& [name, t] : params) {
      if (!t.has_grad()) continue;
      auto& buf = t.node()->grad;
      for (auto& g : buf) g *= s;
    }
  }
  return norm;
}

std::vector<Example> load_examples(const Manifest& manifest) {
  std::vector<Example> out;
  out.reserve(manifest.samples.size());
  for (const auto& rec : manifest.samples) {
    Example ex;
    ex.id = rec.id;
    ex.features = load_features(manifest.resolve(rec));
    if (ex.features.num_frames() != rec.num_frames || ex.features.num_tokens() != rec.num_tokens) {
      throw FormatError("sample '" + rec.id + "': manifest says T=" + std::to_string(rec.num_frames) +
                        ", L=" + std::to_string(rec.num_tokens) + " but features hold T=" +
                        std::to_string(ex.features.num_frames()) + ", L=" + std::to_string(ex.features.num_tokens()));
    }
    ex.labels = rec.labels;
    out.push_back(std::move(ex));
  }
  return out;
}

namespace {

void check_finite(const LossTerms& terms, std::size_t step) {
  for (std::size_t i = 0; i < 5; ++i) {
    const double v = terms.term(i).item();
    if (!std::isfinite(v)) {
      throw NumericError("non-finite loss at step " + std::to_string(step) + " in term '" + LossTerms::kNames[i] +
                         "' (" + std::to_string(v) + ")");
    }
  }
}

}  // namespace

TrainResult train(const Config& config, const std::vector<Example>& data, const TrainOptions& options) {
  const auto& tc = config.train;
  if (data.empty()) throw ConfigError("training set is empty");
  tc.validate(data.size());
  TrainResult result;
  result.model = R2Model(config.model, tc.seed);
  const auto params = result.model.params().items();
  AdamW opt(params, tc);

  const std::size_t n = data.size();
  const std::size_t per_epoch = (n + tc.batch_size - 1) / tc.batch_size;
  const std::size_t total = tc.max_steps.value_or(per_epoch * tc.epochs);
  const CounterRng root(tc.seed);
  CounterRng droppath = root.fork(101), positives = root.fork(102);
  std::vector<std::size_t> order(n);
  std::set<std::string> warned;

  for (std::size_t step = 0; step < total; ++step) {
    const std::size_t epoch = step / per_epoch, slot = step % per_epoch;
    if (slot == 0) {
      std::iota(order.begin(), order.end(), 0);
      CounterRng shuffle = root.fork(1000 + epoch);
      for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[shuffle.below(i)]);
    }
    std::vector<const Example*> batch;
    for (std::size_t i = slot * tc.batch_size; i < std::min(n, (slot + 1) * tc.batch_size); ++i) {
      batch.push_back(&data[order[i]]);
    }

    const double lr = lr_schedule(step, tc, per_epoch);
    LossTerms terms;
    try {
      terms = compute_losses(result.model, batch, true, &droppath, &positives);
    } catch (const NumericError& e) {
      throw NumericError("step " + std::to_string(step) + ": " + e.what());
    }
    check_finite(terms, step);
    if (options.on_warning) {
      for (const auto& w : terms.warnings) {
        if (warned.insert(w).second) options.on_warning(w);
      }
    }

    opt.zero_grad();
    try {
      terms.total.backward();
    } catch (const NumericError& e) {
      throw NumericError("step " + std::to_string(step) + " (backward): " + e.what());
    }
    if (tc.grad_clip > 0.0) clip_grad_norm(params, tc.grad_clip);
    opt.step(lr);

    StepLog entry;
    entry.step = step;
    entry.lr = lr;
    entry.total = terms.total.item();
    for (std::size_t i = 0; i < 5; ++i) entry.terms[i] = terms.term(i).item();
    result.log.push_back(entry);
    if (options.on_step) options.on_step(entry);
  }
  opt.zero_grad();
  result.steps = total;
  return result;
}

double validation_loss(const R2Model& model, const std::vector<Example>& data, std::size_t batch_size) {
  if (data.empty()) return 0.0;
  if (batch_size == 0) throw ContractError("batch size must be positive");
  NoGradGuard no_grad;
  double total = 0.0;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    std::vector<const Example*> batch;
    for (std::size_t i = start; i < std::min(data.size(), start + batch_size); ++i) batch.push_back(&data[i]);
    const auto terms = compute_losses(model, batch, false, nullptr, nullptr);
    total += terms.total.item() * static_cast<double>(batch.size());
  }
  return total / static_cast<double>(data.size());
}

PredictionRecord infer(const R2Model& model, const LayerFeatureSet& fs, const std::string& id) {
  NoGradGuard no_grad;
  const auto out = model.forward(fs, false, nullptr);
  const auto probs = out.heads.probs.values();
  const auto disp = out.heads.disp.values();
  auto moments = decode_moments({probs.begin(), probs.end()}, {disp.begin(), disp.end()}, out.pyramid.layout);
  PredictionRecord rec;
  rec.id = id;
  rec.frame_rate = fs.frame_rate;
  rec.moments = nms(std::move(moments), model.config().nms_threshold);
  const auto sal = out.heads.saliency.values();
  rec.saliency.assign(sal.begin(), sal.end());
  return rec;
}

MetricReport evaluate(const R2Model& model, const Manifest& manifest, const std::vector<Example>& data) {
  std::vector<PredictionRecord> preds;
  preds.reserve(data.size());
  for (const auto& ex : data) preds.push_back(infer(model, ex.features, ex.id));
  return evaluate_predictions(preds, manifest, model.config().vs_ratio);
}

namespace {

constexpr const char* kCheckpointFormat = "r2ground-checkpoint";
constexpr std::size_t kChunk = 255;

}  // namespace

std::vector<std::byte> encode_checkpoint(const R2Model& model, const Config& config, std::size_t step) {
  const auto items = model.params().items();
  json names = json::array();
  std::vector<std::vector<std::byte>> chunks;
  for (std::size_t start = 0; start < items.size(); start += kChunk) {
    R2ftFile file;
    for (std::size_t i = start; i < std::min(items.size(), start + kChunk); ++i) {
      names.push_back(items[i].first);
      const auto v = items[i].second.values();
      file.tensors.push_back({items[i].second.shape(), {v.begin(), v.end()}});
    }
    chunks.push_back(encode_r2ft(file));
  }
  json sizes = json::array();
  for (const auto& c : chunks) sizes.push_back(c.size());
  Config stored = config;
  stored.model = model.config();
  const json header = {{"format", kCheckpointFormat}, {"config", to_json(stored)},
                       {"config_hash", config_hash(stored.model)}, {"step", step},
                       {"params", names}, {"chunks", sizes}};
  const std::string text = header.dump() + "\n";
  std::vector<std::byte> out;
  for (char ch : text) out.push_back(static_cast<std::byte>(ch));
  for (const auto& c : chunks) out.insert(out.end(), c.begin(), c.end());
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const R2Model& model, const Config& config,
                     std::size_t step) {
  const auto bytes = encode_checkpoint(model, config, step);
  write_file_bytes(path, bytes);
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path, const std::optional<std::string>& expected_hash) {
  const auto bytes = read_file_bytes(path);
  const auto nl = std::find(bytes.begin(), bytes.end(), static_cast<std::byte>('\n'));
  if (nl == bytes.end()) throw FormatError(path.string() + ": checkpoint header line missing");
  std::string text;
  for (auto it = bytes.begin(); it != nl; ++it) text.push_back(static_cast<char>(*it));
  json header;
  try {
    header = json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": checkpoint header: " + e.what());
  }
  if (header.value("format", std::string()) != kCheckpointFormat) {
    throw FormatError(path.string() + ": not a checkpoint (format field)");
  }

  LoadedCheckpoint out;
  try {
    out.config = config_from_json(header.at("config"));
    out.config_hash = header.at("config_hash").get<std::string>();
    out.step = header.at("step").get<std::size_t>();
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": checkpoint header: " + e.what());
  }
  if (config_hash(out.config.model) != out.config_hash) {
    throw CompatibilityError(path.string() + ": stored config hash does not match the stored config");
  }
  if (expected_hash && *expected_hash != out.config_hash) {
    throw CompatibilityError("checkpoint config hash " + out.config_hash + " differs from expected " + *expected_hash);
  }

  out.model = R2Model(out.config.model, 0);
  auto items = out.model.params().items();
  const auto names = header.at("params").get<std::vector<std::string>>();
  if (names.size() != items.size()) {
    throw CompatibilityError(path.string() + ": checkpoint holds " + std::to_string(names.size()) +
                             " tensors, model has " + std::to_string(items.size()));
  }
  std::size_t offset = static_cast<std::size_t>(nl - bytes.begin()) + 1, index = 0;
  for (const auto& size_json : header.at("chunks")) {
    const auto size = size_json.get<std::size_t>();
    if (offset + size > bytes.size()) throw FormatError(path.string() + ": checkpoint payload truncated");
    const auto file = decode_r2ft(std::span<const std::byte>(bytes.data() + offset, size));
    offset += size;
    for (const auto& raw : file.tensors) {
      if (index >= items.size()) throw FormatError(path.string() + ": more tensors than names");
      auto& [name, t] = items[index];
      if (names[index] != name || raw.shape != t.shape()) {
        throw CompatibilityError(path.string() + ": tensor " + std::to_string(index) + " is '" + names[index] + "' " +
                                 shape_str(raw.shape) + ", model expects '" + name + "' " + shape_str(t.shape()));
      }
      std::copy(raw.values.begin(), raw.values.end(), t.mutable_values().begin());
      ++index;
    }
  }
  if (index != items.size() || offset != bytes.size()) {
    throw FormatError(path.string() + ": checkpoint payload does not match its header");
  }
  return out;
}

}  // namespace r2g
