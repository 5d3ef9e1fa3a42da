// SPDX-License-Identifier: Apache-2.0
//
// Synthetic stand-in for frozen-encoder features. Each sample draws a unit
// concept vector; the query carries it (a few tokens strongly), and frames
// inside planted moments carry it in a random subset of their patches and,
// scaled by patch coverage, in [CLS]. Where it is injected along the layer
// axis is set by the granularity: coarse = the latest layers, fine = only the
// earliest of the `refine_depth` layers a model will look at.
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "json.hpp"
#include "r2g/features.hpp"
#include "r2g/manifest.hpp"

namespace r2g {

enum class Granularity { Coarse, Fine };

Granularity parse_granularity(std::string_view name);
std::string_view granularity_name(Granularity g);

struct SynthSpec {
  std::size_t frames = 16;
  std::size_t tokens = 6;
  std::size_t patches = 4;
  std::size_t visual_dim = 16;
  std::size_t query_dim = 16;
  std::size_t num_layers = 4;
  std::size_t refine_depth = 4;
  std::size_t num_moments = 1;
  std::size_t min_moment_frames = 3;
  std::size_t max_moment_frames = 8;
  /// Signal RMS over noise RMS per coordinate; infinity means no noise.
  double snr = 2.0;
  Granularity granularity = Granularity::Fine;
  std::size_t concept_dim = 8;
  /// Fraction of patches carrying the concept in a positive frame.
  double patch_fraction = 0.5;
  /// Concept weight in [CLS] per unit of mean patch weight in the frame.
  double cls_gain = 2.0;
  /// Probability that a background frame carries an unrelated concept.
  double distractor_rate = 0.3;
  double frame_rate = 0.5;
  /// Seeds the shared concept-to-feature projections of a dataset.
  std::uint64_t world_seed = 0;
  DType storage = DType::F64;

  void validate() const;
};

struct SyntheticSample {
  LayerFeatureSet features;
  GroundingLabels labels;
};

/// Pure function of (spec, seed).
SyntheticSample generate_synthetic(const SynthSpec& spec, std::uint64_t seed);

/// Writes `count` samples with seeds base_seed, base_seed+1, ... as R2FT
/// files into `dir` plus a manifest `<dir>/<name>.jsonl`. Returns the
/// manifest path.
std::filesystem::path write_synthetic_split(const SynthSpec& spec, const std::string& name, std::size_t count,
                                            std::uint64_t base_seed, const std::filesystem::path& dir);

nlohmann::json to_json(const SynthSpec& spec);
/// Unknown keys are rejected.
SynthSpec synth_spec_from_json(const nlohmann::json& j);

/// A generation plan: the sample spec plus named splits.
///   {"synth": {...}, "splits": {"train": {"count": 200, "seed": 0}, ...}}
struct SynthPlan {
  struct Split {
    std::string name;
    std::size_t count = 0;
    std::uint64_t seed = 0;
  };
  SynthSpec spec;
  std::vector<Split> splits;
};
SynthPlan load_synth_plan(const std::filesystem::path& path);

}  // namespace r2g
