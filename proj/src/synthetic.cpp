// SPDX-License-Identifier: Apache-2.0
#include "r2g/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <limits>

#include "r2g/errors.hpp"

namespace r2g {

Granularity parse_granularity(std::string_view name) {
  if (name == "coarse") return Granularity::Coarse;
  if (name == "fine") return Granularity::Fine;
  throw ConfigError("unknown granularity '" + std::string(name) + "'");
}

std::string_view granularity_name(Granularity g) { return g == Granularity::Coarse ? "coarse" : "fine"; }

void SynthSpec::validate() const {
  if (frames == 0 || tokens == 0 || patches == 0 || visual_dim == 0 || query_dim == 0 || concept_dim == 0) {
    throw ConfigError("synthetic spec: all extents must be positive");
  }
  if (refine_depth == 0 || refine_depth > num_layers) {
    throw ConfigError("synthetic spec: refine_depth must be in [1, num_layers]");
  }
  if (min_moment_frames == 0 || min_moment_frames > max_moment_frames) {
    throw ConfigError("synthetic spec: need 1 <= min_moment_frames <= max_moment_frames");
  }
  if (num_moments * min_moment_frames > frames) {
    throw ConfigError("synthetic spec: " + std::to_string(num_moments) + " moments of at least " +
                      std::to_string(min_moment_frames) + " frames cannot fit in " + std::to_string(frames) +
                      " frames");
  }
  if (!(snr > 0.0)) throw ConfigError("synthetic spec: snr must be positive");
  if (!(patch_fraction > 0.0 && patch_fraction <= 1.0)) throw ConfigError("synthetic spec: patch_fraction in (0, 1]");
}

namespace {

std::vector<double> unit_vector(std::size_t n, CounterRng& rng) {
  std::vector<double> v(n);
  double norm = 0.0;
  do {
    norm = 0.0;
    for (auto& x : v) {
      x = rng.normal();
      norm += x * x;
    }
  } while (norm == 0.0);
  norm = std::sqrt(norm);
  for (auto& x : v) x /= norm;
  return v;
}

// Maps a concept vector into a feature space with per-coordinate RMS 1.
std::vector<double> embed(const std::vector<double>& c, const std::vector<double>& proj, std::size_t dim) {
  std::vector<double> out(dim, 0.0);
  for (std::size_t i = 0; i < c.size(); ++i)
    for (std::size_t d = 0; d < dim; ++d) out[d] += c[i] * proj[i * dim + d];
  double norm = 0.0;
  for (double x : out) norm += x * x;
  const double s = norm > 0.0 ? std::sqrt(static_cast<double>(dim) / norm) : 0.0;
  for (auto& x : out) x *= s;
  return out;
}

}  // namespace

SyntheticSample generate_synthetic(const SynthSpec& spec, std::uint64_t seed) {
  spec.validate();
  const std::size_t N = spec.num_layers, T = spec.frames, P = spec.patches, L = spec.tokens;
  const std::size_t Dv = spec.visual_dim, Dq = spec.query_dim, Dc = spec.concept_dim;

  // Dataset-wide projections; shared between modalities when widths agree,
  // as for contrastively aligned encoders.
  CounterRng world(spec.world_seed);
  std::vector<double> proj_v(Dc * Dv), proj_q;
  for (auto& x : proj_v) x = world.normal();
  if (Dq == Dv) {
    proj_q = proj_v;
  } else {
    proj_q.resize(Dc * Dq);
    for (auto& x : proj_q) x = world.normal();
  }

  CounterRng rng(seed);
  const double noise = std::isinf(spec.snr) ? 0.0 : 1.0 / spec.snr;
  const auto concept_vec = unit_vector(Dc, rng);
  auto distractor = unit_vector(Dc, rng);
  {
    double dot = 0.0;
    for (std::size_t i = 0; i < Dc; ++i) dot += distractor[i] * concept_vec[i];
    for (std::size_t i = 0; i < Dc; ++i) distractor[i] -= dot * concept_vec[i];
  }
  const auto sig_v = embed(concept_vec, proj_v, Dv);
  const auto sig_q = embed(concept_vec, proj_q, Dq);
  const auto dis_v = embed(distractor, proj_v, Dv);

  // Moments: random lengths, free frames split into random gaps.
  SyntheticSample out;
  {
    std::vector<std::size_t> lens(spec.num_moments);
    std::size_t used = 0;
    for (auto& len : lens) {
      len = spec.min_moment_frames + rng.below(spec.max_moment_frames - spec.min_moment_frames + 1);
      used += len;
    }
    while (used > T) {  // shrink the longest until they fit
      auto it = std::max_element(lens.begin(), lens.end());
      --*it;
      --used;
    }
    std::vector<std::size_t> cuts(spec.num_moments);
    for (auto& c : cuts) c = rng.below(T - used + 1);
    std::sort(cuts.begin(), cuts.end());
    std::size_t cursor = 0, prev_cut = 0;
    for (std::size_t m = 0; m < lens.size(); ++m) {
      cursor += cuts[m] - prev_cut;
      prev_cut = cuts[m];
      out.labels.moments.push_back({static_cast<double>(cursor), static_cast<double>(cursor + lens[m] - 1)});
      cursor += lens[m];
    }
  }
  auto inside = [&](std::size_t t) {
    return std::any_of(out.labels.moments.begin(), out.labels.moments.end(),
                       [t](const Moment& m) { return m.contains(static_cast<double>(t)); });
  };

  std::vector<bool> signal_layer(N, false);
  if (spec.granularity == Granularity::Coarse) {
    for (std::size_t n = 0; n < (spec.refine_depth + 1) / 2; ++n) signal_layer[n] = true;
  } else {
    signal_layer[spec.refine_depth - 1] = true;
  }

  // Per-frame injection pattern, shared by all signal layers.
  struct Injection {
    const std::vector<double>* direction = nullptr;
    std::vector<double> weight;  // per patch (index 0 unused)
  };
  std::vector<Injection> plan(T);
  std::vector<double> energy(T, 0.0);
  for (std::size_t t = 0; t < T; ++t) {
    const bool pos = inside(t);
    const bool distract = !pos && rng.uniform() < spec.distractor_rate;
    if (!pos && !distract) continue;
    auto& inj = plan[t];
    inj.direction = pos ? &sig_v : &dis_v;
    inj.weight.assign(P + 1, 0.0);
    bool any = false;
    for (std::size_t p = 1; p <= P; ++p) {
      if (rng.uniform() < spec.patch_fraction) {
        inj.weight[p] = rng.uniform(0.5, 1.0);
        any = true;
      }
    }
    if (!any) inj.weight[1 + rng.below(P)] = rng.uniform(0.5, 1.0);
    double covered = 0.0;
    for (std::size_t p = 1; p <= P; ++p) covered += inj.weight[p];
    inj.weight[0] = spec.cls_gain * covered / static_cast<double>(P);
    if (pos) {
      for (double w : inj.weight) energy[t] += w * w;
    }
  }

  std::vector<double> visual(N * T * (P + 1) * Dv);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t p = 0; p <= P; ++p) {
        double* row = visual.data() + ((n * T + t) * (P + 1) + p) * Dv;
        for (std::size_t d = 0; d < Dv; ++d) row[d] = noise * rng.normal();
        const auto& inj = plan[t];
        if (signal_layer[n] && inj.direction != nullptr && inj.weight[p] > 0.0) {
          for (std::size_t d = 0; d < Dv; ++d) row[d] += inj.weight[p] * (*inj.direction)[d];
        }
      }

  // Query: a random number of real tokens, a few of them strong.
  const std::size_t real = std::max<std::size_t>(1, L - rng.below((L + 1) / 2));
  const std::size_t strong = std::max<std::size_t>(1, real / 3);
  std::vector<double> token_gain(L, 0.0);
  for (std::size_t l = 0; l < real; ++l) token_gain[l] = 0.3;
  for (std::size_t s = 0; s < strong; ++s) {
    std::size_t l = rng.below(real);
    while (token_gain[l] == 1.0) l = (l + 1) % real;
    token_gain[l] = 1.0;
  }
  std::vector<double> query(N * L * Dq);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t l = 0; l < L; ++l) {
      double* row = query.data() + (n * L + l) * Dq;
      const double pad_noise = l < real ? noise : 1.0;
      for (std::size_t d = 0; d < Dq; ++d) row[d] = pad_noise * rng.normal() + token_gain[l] * sig_q[d];
    }

  auto& fs = out.features;
  fs.visual = Tensor::from({N, T, P + 1, Dv}, std::move(visual));
  fs.query = Tensor::from({N, L, Dq}, std::move(query));
  fs.query_mask.assign(L, false);
  std::fill(fs.query_mask.begin(), fs.query_mask.begin() + static_cast<std::ptrdiff_t>(real), true);
  fs.layer_indices.resize(N);
  for (std::size_t n = 0; n < N; ++n) fs.layer_indices[n] = static_cast<int>(N - 1 - n);
  fs.frame_rate = spec.frame_rate;
  fs.storage = spec.storage;
  if (spec.storage == DType::F32) {
    // Round to what the container will hold so in-memory and on-disk agree.
    for (Tensor* t : {&fs.visual, &fs.query})
      for (auto& v : t->mutable_values()) v = static_cast<double>(static_cast<float>(v));
  }

  const double peak = *std::max_element(energy.begin(), energy.end());
  std::vector<double> sal(T, 0.0);
  if (peak > 0.0) {
    for (std::size_t t = 0; t < T; ++t) sal[t] = energy[t] / peak;
  }
  out.labels.saliency = std::move(sal);
  fs.validate();
  out.labels.validate(T);
  return out;
}

std::filesystem::path write_synthetic_split(const SynthSpec& spec, const std::string& name, std::size_t count,
                                            std::uint64_t base_seed, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  Manifest manifest;
  manifest.dataset = name;
  manifest.extractor_note = std::string("synthetic, granularity=") + std::string(granularity_name(spec.granularity));
  manifest.hd_positive_threshold = 0.5;
  manifest.features_dir = dir;
  for (std::size_t i = 0; i < count; ++i) {
    const auto sample = generate_synthetic(spec, base_seed + i);
    SampleRecord rec;
    char id[64];
    std::snprintf(id, sizeof(id), "%s-%05zu", name.c_str(), i);
    rec.id = id;
    rec.features = rec.id + ".r2ft";
    rec.num_frames = spec.frames;
    rec.num_tokens = spec.tokens;
    rec.frame_rate = spec.frame_rate;
    rec.labels = sample.labels;
    write_features(sample.features, dir / rec.features);
    manifest.samples.push_back(std::move(rec));
  }
  const auto path = dir / (name + ".jsonl");
  write_manifest(path, manifest);
  return path;
}

using json = nlohmann::json;

json to_json(const SynthSpec& s) {
  json j = {{"frames", s.frames},
            {"tokens", s.tokens},
            {"patches", s.patches},
            {"visual_dim", s.visual_dim},
            {"query_dim", s.query_dim},
            {"num_layers", s.num_layers},
            {"refine_depth", s.refine_depth},
            {"num_moments", s.num_moments},
            {"min_moment_frames", s.min_moment_frames},
            {"max_moment_frames", s.max_moment_frames},
            {"granularity", std::string(granularity_name(s.granularity))},
            {"concept_dim", s.concept_dim},
            {"patch_fraction", s.patch_fraction},
            {"cls_gain", s.cls_gain},
            {"distractor_rate", s.distractor_rate},
            {"frame_rate", s.frame_rate},
            {"world_seed", s.world_seed},
            {"storage", s.storage == DType::F32 ? "f32" : "f64"}};
  // JSON has no infinity; null means noise-free.
  if (std::isfinite(s.snr)) j["snr"] = s.snr;
  else j["snr"] = nullptr;
  return j;
}

SynthSpec synth_spec_from_json(const json& j) {
  using Setter = std::function<void(SynthSpec&, const json&)>;
#define R2G_SYNTH(name) {#name, [](SynthSpec& s, const json& v) { v.get_to(s.name); }}
  static const std::map<std::string, Setter> setters = {
      R2G_SYNTH(frames),
      R2G_SYNTH(tokens),
      R2G_SYNTH(patches),
      R2G_SYNTH(visual_dim),
      R2G_SYNTH(query_dim),
      R2G_SYNTH(num_layers),
      R2G_SYNTH(refine_depth),
      R2G_SYNTH(num_moments),
      R2G_SYNTH(min_moment_frames),
      R2G_SYNTH(max_moment_frames),
      {"snr",
       [](SynthSpec& s, const json& v) {
         s.snr = v.is_null() ? std::numeric_limits<double>::infinity() : v.get<double>();
       }},
      {"granularity", [](SynthSpec& s, const json& v) { s.granularity = parse_granularity(v.get<std::string>()); }},
      R2G_SYNTH(concept_dim),
      R2G_SYNTH(patch_fraction),
      R2G_SYNTH(cls_gain),
      R2G_SYNTH(distractor_rate),
      R2G_SYNTH(frame_rate),
      R2G_SYNTH(world_seed),
      {"storage",
       [](SynthSpec& s, const json& v) {
         const auto name = v.get<std::string>();
         if (name == "f64") s.storage = DType::F64;
         else if (name == "f32") s.storage = DType::F32;
         else throw ConfigError("storage must be 'f64' or 'f32'");
       }},
  };
#undef R2G_SYNTH
  if (!j.is_object()) throw ConfigError("synthetic spec: expected an object");
  SynthSpec spec;
  for (auto it = j.begin(); it != j.end(); ++it) {
    auto s = setters.find(it.key());
    if (s == setters.end()) throw ConfigError("synthetic spec: unknown key '" + it.key() + "'");
    try {
      s->second(spec, it.value());
    } catch (const json::exception& e) {
      throw ConfigError("synthetic spec." + it.key() + ": " + e.what());
    }
  }
  spec.validate();
  return spec;
}

SynthPlan load_synth_plan(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open synthetic plan " + path.string());
  SynthPlan plan;
  try {
    const json j = json::parse(in);
    for (auto it = j.begin(); it != j.end(); ++it) {
      if (it.key() != "synth" && it.key() != "splits") {
        throw ConfigError("synthetic plan: unknown key '" + it.key() + "'");
      }
    }
    plan.spec = synth_spec_from_json(j.at("synth"));
    for (auto it = j.at("splits").begin(); it != j.at("splits").end(); ++it) {
      plan.splits.push_back({it.key(), it.value().at("count").get<std::size_t>(),
                             it.value().value("seed", std::uint64_t{0})});
    }
  } catch (const json::exception& e) {
    throw ConfigError("synthetic plan " + path.string() + ": " + e.what());
  }
  if (plan.splits.empty()) throw ConfigError("synthetic plan lists no splits");
  return plan;
}

}  // namespace r2g
