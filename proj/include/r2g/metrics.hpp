// SPDX-License-Identifier: Apache-2.0
//
// Moment decoding, duplicate suppression and the grounding metrics. All
// positions are in frame units; seconds appear only in reports.
#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "r2g/features.hpp"
#include "r2g/heads.hpp"
#include "r2g/manifest.hpp"

namespace r2g {

struct MomentPrediction {
  double start = 0.0;
  double end = 0.0;
  double confidence = 0.0;
};

/// start = c - b_s * stride, end = c + b_e * stride, clamped to [0, T];
/// sorted by confidence (descending, earlier start first on ties).
std::vector<MomentPrediction> decode_moments(const std::vector<double>& probs, const std::vector<double>& disp,
                                             const PyramidLayout& layout);

/// |a n b| / |a u b|, 0 when the union is empty.
double temporal_iou(double a_start, double a_end, double b_start, double b_end);
inline double temporal_iou(const MomentPrediction& a, const Moment& b) {
  return temporal_iou(a.start, a.end, b.start, b.end);
}

/// Confidence descending, earlier start first on ties.
void sort_by_confidence(std::vector<MomentPrediction>& preds);

/// Greedy suppression: keep the best remaining, drop every other with
/// IoU > threshold against it, repeat.
std::vector<MomentPrediction> nms(std::vector<MomentPrediction> preds, double threshold);

struct QueryResult {
  std::vector<MomentPrediction> preds;
  std::vector<Moment> gts;
};

/// Fraction of queries whose top-1 prediction reaches IoU >= t with some GT.
std::map<double, double> recall_at_1(const std::vector<QueryResult>& queries,
                                     const std::vector<double>& thresholds = {0.3, 0.5, 0.7});
/// Mean over queries of the top-1 prediction's best IoU (0 without predictions).
double miou(const std::vector<QueryResult>& queries);

/// 101-point interpolated AP of one query at one IoU threshold. Predictions
/// are matched in confidence order to the unmatched GT of highest IoU.
double average_precision(const QueryResult& query, double threshold);
/// Thresholds 0.5:0.05:0.95.
std::vector<double> default_map_thresholds();
/// Mean over thresholds of the per-threshold AP averaged over queries.
double mean_ap(const std::vector<QueryResult>& queries, const std::vector<double>& thresholds);

/// 1 if the highest-scored clip (first on ties) has label >= threshold.
double hit_at_1(const std::vector<double>& scores, const std::vector<double>& labels, double threshold);
/// Non-interpolated AP of the score ranking with positives label >= threshold.
double saliency_ap(const std::vector<double>& scores, const std::vector<double>& labels, double threshold);
/// Per annotator: the top-5 scored clips of that annotator are the positives,
/// and the model's top-`budget` ranking is scored with AP truncated at the
/// budget. Averaged over annotators.
double top5_map(const std::vector<double>& scores, const std::vector<std::vector<double>>& annotators,
                std::size_t budget = 5);
/// Marks the top ceil(ratio * T) frames (earlier first on ties) as 1.
std::vector<double> binarize_summary(const std::vector<double>& scores, double ratio);
/// F1 between a binary prediction and binary labels.
double summary_f1(const std::vector<double>& pred, const std::vector<double>& labels);

struct PredictionRecord {
  std::string id;
  double frame_rate = 1.0;
  std::vector<MomentPrediction> moments;  // frames, post-NMS
  std::vector<double> saliency;           // per frame
};

/// Line-delimited JSON: {"id", "frame_rate", "unit":"frames",
/// "moments":[[start, end, confidence], ...], "saliency":[...]}.
void write_predictions(const std::filesystem::path& path, const std::vector<PredictionRecord>& records);
std::vector<PredictionRecord> read_predictions(const std::filesystem::path& path);

using MetricReport = std::map<std::string, double>;

/// Every metric applicable to the label types present in the manifest.
/// Throws FormatError when a manifest sample has no prediction.
MetricReport evaluate_predictions(const std::vector<PredictionRecord>& preds, const Manifest& gt,
                                  double vs_ratio = 0.2);

}  // namespace r2g
