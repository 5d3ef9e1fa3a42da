// SPDX-License-Identifier: Apache-2.0
#include "r2g/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <unordered_map>

#include "json.hpp"
#include "r2g/errors.hpp"

namespace r2g {

using json = nlohmann::json;

void sort_by_confidence(std::vector<MomentPrediction>& preds) {
  std::stable_sort(preds.begin(), preds.end(), [](const MomentPrediction& a, const MomentPrediction& b) {
    if (a.confidence != b.confidence) return a.confidence > b.confidence;
    return a.start < b.start;
  });
}

std::vector<MomentPrediction> decode_moments(const std::vector<double>& probs, const std::vector<double>& disp,
                                             const PyramidLayout& layout) {
  const std::size_t M = layout.total();
  if (probs.size() != M || disp.size() != 2 * M) {
    throw DimensionError("decode_moments: head outputs do not match the pyramid (" + std::to_string(M) +
                         " positions)");
  }
  const double T = static_cast<double>(layout.num_frames);
  std::vector<MomentPrediction> out(M);
  for (std::size_t i = 0; i < M; ++i) {
    const double c = layout.center(i), s = static_cast<double>(layout.stride(i));
    out[i].start = std::clamp(c - disp[2 * i] * s, 0.0, T);
    out[i].end = std::clamp(c + disp[2 * i + 1] * s, 0.0, T);
    out[i].confidence = probs[i];
  }
  sort_by_confidence(out);
  return out;
}

double temporal_iou(double a_start, double a_end, double b_start, double b_end) {
  const double inter = std::max(0.0, std::min(a_end, b_end) - std::max(a_start, b_start));
  const double uni = std::max(a_end, b_end) - std::min(a_start, b_start);
  if (!(uni > 0.0)) return 0.0;
  return inter / uni;
}

std::vector<MomentPrediction> nms(std::vector<MomentPrediction> preds, double threshold) {
  sort_by_confidence(preds);
  std::vector<MomentPrediction> kept;
  std::vector<bool> dropped(preds.size(), false);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (dropped[i]) continue;
    kept.push_back(preds[i]);
    for (std::size_t j = i + 1; j < preds.size(); ++j) {
      if (!dropped[j] &&
          temporal_iou(preds[i].start, preds[i].end, preds[j].start, preds[j].end) > threshold) {
        dropped[j] = true;
      }
    }
  }
  return kept;
}

namespace {

double top1_best_iou(const QueryResult& q) {
  if (q.preds.empty()) return 0.0;
  auto preds = q.preds;
  sort_by_confidence(preds);
  double best = 0.0;
  for (const auto& g : q.gts) best = std::max(best, temporal_iou(preds.front(), g));
  return best;
}

}  // namespace

std::map<double, double> recall_at_1(const std::vector<QueryResult>& queries, const std::vector<double>& thresholds) {
  std::map<double, double> out;
  for (double t : thresholds) out[t] = 0.0;
  if (queries.empty()) return out;
  for (const auto& q : queries) {
    if (q.gts.empty()) throw ContractError("recall needs at least one ground-truth moment per query");
    const double iou = top1_best_iou(q);
    for (double t : thresholds) {
      if (iou >= t) out[t] += 1.0;
    }
  }
  for (auto& [t, v] : out) v /= static_cast<double>(queries.size());
  return out;
}

double miou(const std::vector<QueryResult>& queries) {
  if (queries.empty()) return 0.0;
  double total = 0.0;
  for (const auto& q : queries) total += top1_best_iou(q);
  return total / static_cast<double>(queries.size());
}

double average_precision(const QueryResult& query, double threshold) {
  if (query.gts.empty()) throw ContractError("AP needs at least one ground-truth moment");
  auto preds = query.preds;
  sort_by_confidence(preds);
  std::vector<bool> matched(query.gts.size(), false);
  std::vector<double> precision, recall;
  double tp = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    double best = -1.0;
    std::size_t best_g = 0;
    for (std::size_t g = 0; g < query.gts.size(); ++g) {
      if (matched[g]) continue;
      const double iou = temporal_iou(preds[i], query.gts[g]);
      if (iou >= threshold && iou > best) {
        best = iou;
        best_g = g;
      }
    }
    if (best >= 0.0) {
      matched[best_g] = true;
      tp += 1.0;
    }
    precision.push_back(tp / static_cast<double>(i + 1));
    recall.push_back(tp / static_cast<double>(query.gts.size()));
  }
  // Running max of precision from the tail gives the interpolated envelope.
  for (std::size_t i = precision.size(); i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double ap = 0.0;
  std::size_t j = 0;
  for (int r = 0; r <= 100; ++r) {
    const double level = r / 100.0;
    while (j < recall.size() && recall[j] < level) ++j;
    if (j < recall.size()) ap += precision[j];
  }
  return ap / 101.0;
}

std::vector<double> default_map_thresholds() {
  std::vector<double> t;
  for (int i = 0; i < 10; ++i) t.push_back(0.5 + 0.05 * i);
  return t;
}

double mean_ap(const std::vector<QueryResult>& queries, const std::vector<double>& thresholds) {
  if (queries.empty() || thresholds.empty()) return 0.0;
  double total = 0.0;
  for (double t : thresholds) {
    double per = 0.0;
    for (const auto& q : queries) per += average_precision(q, t);
    total += per / static_cast<double>(queries.size());
  }
  return total / static_cast<double>(thresholds.size());
}

namespace {

void check_same_length(const std::vector<double>& a, const std::vector<double>& b, const char* what) {
  if (a.size() != b.size()) {
    throw DimensionError(std::string(what) + ": " + std::to_string(a.size()) + " scores vs " +
                         std::to_string(b.size()) + " labels");
  }
}

// Indices by score descending, earlier index first on ties.
std::vector<std::size_t> ranking(const std::vector<double>& scores) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return idx;
}

}  // namespace

double hit_at_1(const std::vector<double>& scores, const std::vector<double>& labels, double threshold) {
  check_same_length(scores, labels, "hit_at_1");
  if (scores.empty()) return 0.0;
  const auto best = static_cast<std::size_t>(std::max_element(scores.begin(), scores.end()) - scores.begin());
  return labels[best] >= threshold ? 1.0 : 0.0;
}

double saliency_ap(const std::vector<double>& scores, const std::vector<double>& labels, double threshold) {
  check_same_length(scores, labels, "saliency_ap");
  double hits = 0.0, total = 0.0;
  const auto order = ranking(scores);
  for (std::size_t r = 0; r < order.size(); ++r) {
    if (labels[order[r]] >= threshold) {
      hits += 1.0;
      total += hits / static_cast<double>(r + 1);
    }
  }
  return hits > 0.0 ? total / hits : 0.0;
}

double top5_map(const std::vector<double>& scores, const std::vector<std::vector<double>>& annotators,
                std::size_t budget) {
  if (annotators.empty() || scores.empty()) return 0.0;
  const auto order = ranking(scores);
  const std::size_t depth = std::min(budget, order.size());
  double total = 0.0;
  for (const auto& ann : annotators) {
    check_same_length(scores, ann, "top5_map");
    const auto ann_order = ranking(ann);
    std::vector<bool> positive(ann.size(), false);
    const std::size_t npos = std::min<std::size_t>(5, ann.size());
    for (std::size_t i = 0; i < npos; ++i) positive[ann_order[i]] = true;
    double hits = 0.0, ap = 0.0;
    for (std::size_t r = 0; r < depth; ++r) {
      if (positive[order[r]]) {
        hits += 1.0;
        ap += hits / static_cast<double>(r + 1);
      }
    }
    total += ap / static_cast<double>(std::min(npos, depth));
  }
  return total / static_cast<double>(annotators.size());
}

std::vector<double> binarize_summary(const std::vector<double>& scores, double ratio) {
  if (!(ratio > 0.0 && ratio <= 1.0)) throw ContractError("summary ratio must be in (0, 1]");
  std::vector<double> out(scores.size(), 0.0);
  const auto order = ranking(scores);
  const auto n = static_cast<std::size_t>(std::ceil(ratio * static_cast<double>(scores.size())));
  for (std::size_t i = 0; i < n && i < order.size(); ++i) out[order[i]] = 1.0;
  return out;
}

double summary_f1(const std::vector<double>& pred, const std::vector<double>& labels) {
  check_same_length(pred, labels, "summary_f1");
  double tp = 0.0, np = 0.0, nl = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] > 0.5, l = labels[i] > 0.5;
    tp += (p && l) ? 1.0 : 0.0;
    np += p ? 1.0 : 0.0;
    nl += l ? 1.0 : 0.0;
  }
  if (np + nl == 0.0) return 0.0;
  return 2.0 * tp / (np + nl);
}

void write_predictions(const std::filesystem::path& path, const std::vector<PredictionRecord>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write predictions to " + path.string());
  for (const auto& r : records) {
    json moments = json::array();
    for (const auto& m : r.moments) moments.push_back({m.start, m.end, m.confidence});
    json line = {{"id", r.id},
                 {"frame_rate", r.frame_rate},
                 {"unit", "frames"},
                 {"moments", moments},
                 {"saliency", r.saliency}};
    out << line.dump() << '\n';
  }
  if (!out) throw FormatError("failed writing predictions to " + path.string());
}

std::vector<PredictionRecord> read_predictions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open predictions " + path.string());
  std::vector<PredictionRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      PredictionRecord r;
      r.id = j.at("id").get<std::string>();
      r.frame_rate = j.value("frame_rate", 1.0);
      if (j.value("unit", std::string("frames")) != "frames") throw FormatError("only frame units are supported");
      for (const auto& m : j.at("moments")) {
        r.moments.push_back({m.at(0).get<double>(), m.at(1).get<double>(), m.at(2).get<double>()});
      }
      if (j.contains("saliency")) r.saliency = j["saliency"].get<std::vector<double>>();
      out.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    } catch (const FormatError& e) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

MetricReport evaluate_predictions(const std::vector<PredictionRecord>& preds, const Manifest& gt, double vs_ratio) {
  std::unordered_map<std::string, const PredictionRecord*> by_id;
  for (const auto& p : preds) by_id[p.id] = &p;

  std::vector<QueryResult> queries;
  double hit = 0.0, hd_ap = 0.0, top5 = 0.0, f1 = 0.0;
  std::size_t n_sal = 0, n_sum = 0;
  for (const auto& s : gt.samples) {
    auto it = by_id.find(s.id);
    if (it == by_id.end()) throw FormatError("no prediction for sample '" + s.id + "'");
    const auto& p = *it->second;
    if (!s.labels.moments.empty()) queries.push_back({p.moments, s.labels.moments});
    const bool need_scores = s.labels.saliency.has_value() || s.labels.summary.has_value();
    if (need_scores && p.saliency.size() != s.num_frames) {
      throw FormatError("prediction '" + s.id + "' carries " + std::to_string(p.saliency.size()) +
                        " saliency scores for " + std::to_string(s.num_frames) + " frames");
    }
    if (s.labels.saliency) {
      hit += hit_at_1(p.saliency, *s.labels.saliency, gt.hd_positive_threshold);
      hd_ap += saliency_ap(p.saliency, *s.labels.saliency, gt.hd_positive_threshold);
      top5 += top5_map(p.saliency, {*s.labels.saliency});
      ++n_sal;
    }
    if (s.labels.summary) {
      f1 += summary_f1(binarize_summary(p.saliency, vs_ratio), *s.labels.summary);
      ++n_sum;
    }
  }

  MetricReport r;
  r["samples"] = static_cast<double>(gt.samples.size());
  if (!queries.empty()) {
    for (const auto& [t, v] : recall_at_1(queries)) {
      char key[32];
      std::snprintf(key, sizeof(key), "MR-R1@%.1f", t);
      r[key] = v;
    }
    r["MR-mIoU"] = miou(queries);
    r["MR-mAP"] = mean_ap(queries, default_map_thresholds());
    r["MR-mAP@0.5"] = mean_ap(queries, {0.5});
    r["MR-mAP@0.75"] = mean_ap(queries, {0.75});
  }
  if (n_sal > 0) {
    r["HD-HIT@1"] = hit / static_cast<double>(n_sal);
    r["HD-mAP"] = hd_ap / static_cast<double>(n_sal);
    r["HD-Top5-mAP"] = top5 / static_cast<double>(n_sal);
  }
  if (n_sum > 0) r["VS-F1"] = f1 / static_cast<double>(n_sum);
  return r;
}

}  // namespace r2g
