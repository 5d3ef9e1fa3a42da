// SPDX-License-Identifier: Apache-2.0
#include "r2g/manifest.hpp"

#include <fstream>
#include <set>

#include "json.hpp"
#include "r2g/errors.hpp"

namespace r2g {

using json = nlohmann::json;

std::filesystem::path Manifest::resolve(const SampleRecord& rec) const {
  return rec.features.is_absolute() ? rec.features : features_dir / rec.features;
}

namespace {

SampleRecord parse_sample(const json& j) {
  SampleRecord rec;
  rec.id = j.at("id").get<std::string>();
  rec.features = j.at("features").get<std::string>();
  rec.num_frames = j.at("T").get<std::size_t>();
  rec.num_tokens = j.at("L").get<std::size_t>();
  rec.frame_rate = j.value("frame_rate", 1.0);
  for (const auto& m : j.value("moments", json::array())) {
    if (!m.is_array() || m.size() != 2) throw FormatError("moments must be [start, end] pairs");
    rec.labels.moments.push_back({m[0].get<double>(), m[1].get<double>()});
  }
  if (j.contains("saliency")) rec.labels.saliency = j["saliency"].get<std::vector<double>>();
  if (j.contains("summary")) rec.labels.summary = j["summary"].get<std::vector<double>>();
  rec.labels.validate(rec.num_frames);
  return rec;
}

}  // namespace

Manifest load_manifest(const std::filesystem::path& path, const std::optional<std::filesystem::path>& features_dir) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open manifest " + path.string());
  Manifest m;
  m.features_dir = features_dir.value_or(path.parent_path());
  std::set<std::string> ids;
  std::string line;
  std::size_t lineno = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(lineno) + ": ";
    try {
      const json j = json::parse(line);
      const std::string kind = j.value("kind", "sample");
      if (kind == "dataset") {
        if (have_header) throw FormatError("second dataset record");
        have_header = true;
        m.dataset = j.value("name", "");
        m.extractor_note = j.value("extractor_note", "");
        m.hd_positive_threshold = j.value("hd_positive_threshold", 0.5);
        if (j.value("unit", std::string("frames")) != "frames") throw FormatError("only frame units are supported");
      } else if (kind == "sample") {
        SampleRecord rec = parse_sample(j);
        if (!ids.insert(rec.id).second) throw FormatError("duplicate sample id '" + rec.id + "'");
        if (!std::filesystem::exists(m.resolve(rec))) {
          throw FormatError("feature file " + m.resolve(rec).string() + " does not exist");
        }
        m.samples.push_back(std::move(rec));
      } else {
        throw FormatError("unknown record kind '" + kind + "'");
      }
    } catch (const json::exception& e) {
      throw FormatError(where + e.what());
    } catch (const FormatError& e) {
      throw FormatError(where + e.what());
    }
  }
  return m;
}

void write_manifest(const std::filesystem::path& path, const Manifest& manifest) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot write manifest " + path.string());
  json head = {{"kind", "dataset"},
               {"name", manifest.dataset},
               {"extractor_note", manifest.extractor_note},
               {"unit", "frames"},
               {"hd_positive_threshold", manifest.hd_positive_threshold}};
  out << head.dump() << '\n';
  for (const auto& rec : manifest.samples) {
    json j = {{"kind", "sample"},
              {"id", rec.id},
              {"features", rec.features.string()},
              {"T", rec.num_frames},
              {"L", rec.num_tokens},
              {"frame_rate", rec.frame_rate}};
    json moments = json::array();
    for (const auto& mo : rec.labels.moments) moments.push_back({mo.start, mo.end});
    j["moments"] = moments;
    if (rec.labels.saliency) j["saliency"] = *rec.labels.saliency;
    if (rec.labels.summary) j["summary"] = *rec.labels.summary;
    out << j.dump() << '\n';
  }
}

}  // namespace r2g
