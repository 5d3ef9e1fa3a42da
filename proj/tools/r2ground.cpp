// SPDX-License-Identifier: Apache-2.0
//
// r2ground: synthetic data, training, evaluation, inference and checks.
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "r2g/diagnostics.hpp"
#include "r2g/errors.hpp"
#include "r2g/trainer.hpp"

namespace {

using namespace r2g;
using json = nlohmann::json;

std::optional<std::filesystem::path> opt_path(const std::string& s) {
  if (s.empty()) return std::nullopt;
  return std::filesystem::path(s);
}

void apply_seed_override(Config& cfg) {
  if (const char* env = std::getenv("R2G_SEED"); env != nullptr && *env != '\0') {
    try {
      cfg.train.seed = std::stoull(env);
    } catch (const std::exception&) {
      throw ConfigError(std::string("R2G_SEED is not an unsigned integer: '") + env + "'");
    }
  }
}

void print_report(const MetricReport& report) {
  json j = json::object();
  for (const auto& [k, v] : report) j[k] = v;
  std::cout << j.dump(2) << '\n';
}

int run_gen_synth(const std::string& spec_path, const std::string& out_dir) {
  const auto plan = load_synth_plan(spec_path);
  for (const auto& split : plan.splits) {
    const auto manifest = write_synthetic_split(plan.spec, split.name, split.count, split.seed, out_dir);
    std::cout << split.name << ": " << split.count << " samples -> " << manifest.string() << '\n';
  }
  return 0;
}

int run_train(const std::string& config_path, const std::string& manifest_path, const std::string& out,
              const std::string& features_dir, const std::string& val_manifest, const std::string& log_path,
              std::size_t print_every) {
  Config cfg = load_config(config_path);
  apply_seed_override(cfg);
  const auto manifest = load_manifest(manifest_path, opt_path(features_dir));
  const auto data = load_examples(manifest);

  std::ofstream log;
  if (!log_path.empty()) {
    log.open(log_path);
    if (!log) throw ConfigError("cannot write log " + log_path);
  }
  TrainOptions opts;
  opts.on_step = [&](const StepLog& s) {
    if (log) {
      log << json{{"step", s.step}, {"lr", s.lr}, {"loss", s.total},
                  {"video", s.terms[0]}, {"layer", s.terms[1]}, {"cls", s.terms[2]},
                  {"reg", s.terms[3]}, {"sal", s.terms[4]}}
                 .dump()
          << '\n';
    }
    if (print_every > 0 && s.step % print_every == 0) {
      std::printf("step %6zu  lr %.3e  loss %.6f  (video %.4f layer %.4f cls %.4f reg %.4f sal %.4f)\n", s.step, s.lr,
                  s.total, s.terms[0], s.terms[1], s.terms[2], s.terms[3], s.terms[4]);
    }
  };
  opts.on_warning = [](const std::string& w) { std::fprintf(stderr, "warning: %s\n", w.c_str()); };

  const auto result = train(cfg, data, opts);
  save_checkpoint(out, result.model, cfg, result.steps);
  std::printf("trained %zu steps; checkpoint %s (config %s)\n", result.steps, out.c_str(),
              config_hash(result.model.config()).c_str());
  if (!val_manifest.empty()) {
    const auto val = load_manifest(val_manifest, opt_path(features_dir));
    const auto val_data = load_examples(val);
    auto report = evaluate(result.model, val, val_data);
    report["val_loss"] = validation_loss(result.model, val_data, cfg.train.batch_size);
    print_report(report);
  }
  return 0;
}

int run_eval(const std::string& ckpt, const std::string& manifest_path, const std::string& features_dir,
             const std::string& pred, const std::string& gt, const std::string& expect_hash) {
  if (!pred.empty() || !gt.empty()) {
    if (pred.empty() || gt.empty()) throw ConfigError("eval: --pred and --gt go together");
    const auto manifest = load_manifest(gt, opt_path(features_dir));
    print_report(evaluate_predictions(read_predictions(pred), manifest));
    return 0;
  }
  if (ckpt.empty() || manifest_path.empty()) throw ConfigError("eval: need --ckpt and --manifest, or --pred and --gt");
  const auto loaded =
      load_checkpoint(ckpt, expect_hash.empty() ? std::nullopt : std::optional<std::string>(expect_hash));
  const auto manifest = load_manifest(manifest_path, opt_path(features_dir));
  const auto data = load_examples(manifest);
  auto report = evaluate(loaded.model, manifest, data);
  report["val_loss"] = validation_loss(loaded.model, data, loaded.config.train.batch_size);
  report["step"] = static_cast<double>(loaded.step);
  print_report(report);
  return 0;
}

int run_infer(const std::string& ckpt, const std::string& features, const std::string& id, const std::string& out) {
  const auto loaded = load_checkpoint(ckpt);
  const auto fs = load_features(features);
  const auto rec = infer(loaded.model, fs, id.empty() ? std::filesystem::path(features).stem().string() : id);
  if (out.empty()) {
    json moments = json::array();
    for (const auto& m : rec.moments) {
      moments.push_back({{"start_s", m.start / rec.frame_rate}, {"end_s", m.end / rec.frame_rate},
                         {"start", m.start}, {"end", m.end}, {"confidence", m.confidence}});
    }
    std::cout << json{{"id", rec.id}, {"moments", moments}, {"saliency", rec.saliency}}.dump(2) << '\n';
  } else {
    write_predictions(out, {rec});
  }
  return 0;
}

int run_gradcheck(const std::string& module) {
  const auto modules = module.empty() ? gradcheck_modules() : std::vector<std::string>{module};
  bool ok = true;
  for (const auto& m : modules) {
    const auto r = gradcheck_module(m);
    const bool pass = r.max_rel_error < 1e-4;
    ok = ok && pass;
    std::printf("%-12s %s  max rel error %.3e over %zu entries, %zu zero (worst %s[%zu]: analytic %.6e, numeric %.6e)\n",
                m.c_str(), pass ? "PASS" : "FAIL", r.max_rel_error, r.entries_checked, r.zero_entries,
                r.worst_param.c_str(), r.worst_index, r.worst_analytic, r.worst_numeric);
  }
  return ok ? 0 : 1;
}

int run_param_count(const std::string& config_path) {
  const Config cfg = config_path.empty() ? Config{} : load_config(config_path);
  const R2Model model(cfg.model, 0);
  const auto params = model.params();
  for (const auto& [group, n] : param_breakdown(params)) std::printf("%-24s %10zu\n", group.c_str(), n);
  std::printf("%-24s %10zu\n", "block operator", model.block().operator_param_count());
  std::printf("%-24s %10zu\n", "total", params.scalar_count());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Query-guided temporal grounding over frozen multi-layer encoder features"};
  app.require_subcommand(1);

  std::string spec, out_dir;
  auto* gen = app.add_subcommand("gen-synth", "Write synthetic splits (features + manifests)");
  gen->add_option("--spec", spec, "Generation plan (JSON)")->required()->check(CLI::ExistingFile);
  gen->add_option("--out", out_dir, "Output directory")->required();

  std::string config, manifest, out, features_dir, val_manifest, log_path;
  std::size_t print_every = 10;
  auto* tr = app.add_subcommand("train", "Train and write a checkpoint");
  tr->add_option("--config", config, "Config (JSON)")->required()->check(CLI::ExistingFile);
  tr->add_option("--manifest", manifest, "Training manifest (JSONL)")->required()->check(CLI::ExistingFile);
  tr->add_option("--out", out, "Checkpoint path")->required();
  tr->add_option("--features-dir", features_dir, "Directory holding the feature files");
  tr->add_option("--val-manifest", val_manifest, "Evaluate on this manifest after training");
  tr->add_option("--log", log_path, "Per-step loss log (JSONL)");
  tr->add_option("--print-every", print_every, "Console log interval in steps (0 = silent)");

  std::string ckpt, pred, gt, expect_hash;
  auto* ev = app.add_subcommand("eval", "Score a checkpoint on a manifest, or a predictions file");
  ev->add_option("--ckpt", ckpt, "Checkpoint");
  ev->add_option("--manifest", manifest, "Manifest to evaluate on");
  ev->add_option("--features-dir", features_dir, "Directory holding the feature files");
  ev->add_option("--pred", pred, "Predictions (JSONL)");
  ev->add_option("--gt", gt, "Ground-truth manifest for --pred");
  ev->add_option("--expect-config-hash", expect_hash, "Refuse checkpoints built from another config");

  std::string features, id;
  auto* inf = app.add_subcommand("infer", "Predict moments and saliency for one feature file");
  inf->add_option("--ckpt", ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  inf->add_option("--features", features, "Feature file (R2FT)")->required()->check(CLI::ExistingFile);
  inf->add_option("--id", id, "Sample id (default: file stem)");
  inf->add_option("--out", out, "Write a predictions JSONL line instead of printing");

  std::string module;
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
  gc->add_option("--module", module, "r2block, calibration, heads or full (default: all)");

  auto* pc = app.add_subcommand("param-count", "Learnable parameter count");
  pc->add_option("--config", config, "Config (JSON); defaults when omitted");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) return run_gen_synth(spec, out_dir);
    if (*tr) return run_train(config, manifest, out, features_dir, val_manifest, log_path, print_every);
    if (*ev) return run_eval(ckpt, manifest, features_dir, pred, gt, expect_hash);
    if (*inf) return run_infer(ckpt, features, id, out);
    if (*gc) return run_gradcheck(module);
    if (*pc) return run_param_count(config);
  } catch (const r2g::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
