// SPDX-License-Identifier: Apache-2.0
//
// Dataset manifest: line-delimited JSON. The first record describes the
// dataset, every following record one sample:
//
//   {"kind":"dataset","name":"synth-fine","extractor_note":"...","unit":"frames",
//    "hd_positive_threshold":0.5}
//   {"kind":"sample","id":"v0001","features":"v0001.r2ft","T":16,"L":6,
//    "frame_rate":0.5,"moments":[[3,8]],"saliency":[...],"summary":[...]}
//
// Moments are in frame units. Feature paths are resolved against the
// features directory (default: the manifest's own directory).
#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "r2g/features.hpp"

namespace r2g {

struct SampleRecord {
  std::string id;
  std::filesystem::path features;  // as written in the manifest
  std::size_t num_frames = 0;
  std::size_t num_tokens = 0;
  double frame_rate = 1.0;
  GroundingLabels labels;
};

struct Manifest {
  std::string dataset;
  std::string extractor_note;
  /// Saliency at or above this marks a clip positive for HIT@1 / HD mAP.
  double hd_positive_threshold = 0.5;
  std::filesystem::path features_dir;
  std::vector<SampleRecord> samples;

  std::filesystem::path resolve(const SampleRecord& rec) const;
};

/// Parses and validates (unique ids, labels consistent with T, feature
/// files present). Throws FormatError naming the line.
Manifest load_manifest(const std::filesystem::path& path,
                       const std::optional<std::filesystem::path>& features_dir = std::nullopt);
void write_manifest(const std::filesystem::path& path, const Manifest& manifest);

}  // namespace r2g
