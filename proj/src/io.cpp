#include "rem/io.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "rem/error.hpp"

namespace rem {

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write '" + path.string() + "'");
  out << text;
}

Json read_json_file(const std::filesystem::path& path) {
  try {
    return Json::parse(read_text_file(path));
  } catch (const Json::exception& e) {
    throw ValidationError("malformed JSON in '" + path.string() + "': " + e.what());
  }
}

void write_json_file(const std::filesystem::path& path, const Json& value) {
  write_text_file(path, value.dump(2) + "\n");
}

std::vector<Json> read_jsonl(const std::filesystem::path& path) {
  std::istringstream in(read_text_file(path));
  std::vector<Json> rows;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      rows.push_back(Json::parse(line));
    } catch (const Json::exception& e) {
      throw ValidationError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return rows;
}

void write_jsonl(const std::filesystem::path& path, const std::vector<Json>& rows) {
  std::string text;
  for (const Json& row : rows) {
    text += row.dump();
    text += '\n';
  }
  write_text_file(path, text);
}

std::string format_double(double value) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", value);
  return buf;
}

void to_json(Json& j, const Box3D& b) {
  j = Json{{"center_x", b.center_x}, {"center_y", b.center_y}, {"center_z", b.center_z},
           {"length", b.length},     {"width", b.width},       {"height", b.height},
           {"heading", b.heading}};
}

void from_json(const Json& j, Box3D& b) {
  b.center_x = j.at("center_x").get<double>();
  b.center_y = j.at("center_y").get<double>();
  b.center_z = j.value("center_z", 0.0);
  b.length = j.at("length").get<double>();
  b.width = j.at("width").get<double>();
  b.height = j.at("height").get<double>();
  b.heading = j.value("heading", 0.0);
  validate_box(b);
}

void to_json(Json& j, const DetectionRecord& d) {
  j = Json{{"detection_id", d.detection_id},
           {"segment_id", d.segment_id},
           {"frame_index", d.frame_index},
           {"track_hypothesis_id", d.track_hypothesis_id},
           {"box", d.box},
           {"score", d.score},
           {"point_count", d.point_count},
           {"range_m", d.range_m},
           {"model_id", d.model_id}};
}

void from_json(const Json& j, DetectionRecord& d) {
  d.detection_id = j.at("detection_id").get<std::string>();
  d.segment_id = j.at("segment_id").get<std::string>();
  d.frame_index = j.at("frame_index").get<int>();
  d.track_hypothesis_id = j.value("track_hypothesis_id", d.detection_id);
  d.box = j.at("box").get<Box3D>();
  d.score = j.at("score").get<double>();
  d.point_count = j.value("point_count", 0);
  d.range_m = j.value("range_m", std::hypot(d.box.center_x, d.box.center_y));
  d.model_id = j.value("model_id", 0);
  if (!(d.score >= 0.0 && d.score <= 1.0)) {
    throw ValidationError("detection '" + d.detection_id + "' has score outside [0, 1]");
  }
  if (d.frame_index < 0 || d.point_count < 0 || !(d.range_m >= 0.0)) {
    throw ValidationError("detection '" + d.detection_id + "' has a negative field");
  }
}

void to_json(Json& j, const GroundTruthTrack& t) {
  Json boxes = Json::array();
  for (const auto& [frame, box] : t.boxes) boxes.push_back(Json{{"frame_index", frame}, {"box", box}});
  j = Json{{"track_id", t.track_id},
           {"segment_id", t.segment_id},
           {"attribute_tag", t.attribute_tag},
           {"boxes", boxes}};
}

void from_json(const Json& j, GroundTruthTrack& t) {
  t.track_id = j.at("track_id").get<std::string>();
  t.segment_id = j.at("segment_id").get<std::string>();
  t.attribute_tag = j.value("attribute_tag", "");
  t.boxes.clear();
  int previous = -1;
  for (const Json& entry : j.at("boxes")) {
    const int frame = entry.at("frame_index").get<int>();
    if (frame <= previous) {
      throw ValidationError("track '" + t.track_id + "' frame indices must be strictly increasing");
    }
    previous = frame;
    t.boxes[frame] = entry.at("box").get<Box3D>();
  }
  if (t.boxes.empty()) throw ValidationError("track '" + t.track_id + "' has no boxes");
}

void to_json(Json& j, const ObjectType& t) {
  j = Json{{"name", t.name},
           {"prevalence", t.prevalence},
           {"signature", t.signature},
           {"attribute_mean", t.attribute_mean},
           {"attribute_std", t.attribute_std},
           {"unfamiliarity", t.unfamiliarity},
           {"range_min_m", t.range_min_m},
           {"range_max_m", t.range_max_m}};
}

void from_json(const Json& j, ObjectType& t) {
  t.name = j.at("name").get<std::string>();
  t.prevalence = j.at("prevalence").get<double>();
  t.signature = j.value("signature", std::vector<double>{});
  t.attribute_mean = j.at("attribute_mean").get<std::vector<double>>();
  t.attribute_std = j.at("attribute_std").get<std::vector<double>>();
  t.unfamiliarity = j.value("unfamiliarity", 0.0);
  t.range_min_m = j.value("range_min_m", -1.0);
  t.range_max_m = j.value("range_max_m", -1.0);
}

void to_json(Json& j, const CorpusSpec& s) {
  const DetectorSimConfig& d = s.detector;
  j = Json{{"segment_count", s.segment_count},
           {"frames_per_segment", s.frames_per_segment},
           {"objects_per_segment", s.objects_per_segment},
           {"object_type_mixture", s.object_type_mixture},
           {"feature_map_resolution", s.feature_map_resolution},
           {"map_half_extent_m", s.map_half_extent_m},
           {"channels", s.channels},
           {"noise_scale", s.noise_scale},
           {"sparsity_noise_gain", s.sparsity_noise_gain},
           {"min_range_m", s.min_range_m},
           {"max_range_m", s.max_range_m},
           {"max_speed_m_per_frame", s.max_speed_m_per_frame},
           {"points_per_m2", s.points_per_m2},
           {"points_reference_range_m", s.points_reference_range_m},
           {"seed", s.seed},
           {"detector",
            {{"ensemble_size", d.ensemble_size},
             {"center_jitter_m", d.center_jitter_m},
             {"size_jitter_fraction", d.size_jitter_fraction},
             {"heading_jitter_rad", d.heading_jitter_rad},
             {"base_score", d.base_score},
             {"score_spread", d.score_spread},
             {"hard_score_drop", d.hard_score_drop},
             {"hard_score_spread", d.hard_score_spread},
             {"rare_score_drop", d.rare_score_drop},
             {"rare_score_spread", d.rare_score_spread},
             {"miss_below", d.miss_below},
             {"false_positives_per_frame", d.false_positives_per_frame},
             {"hard_points_reference", d.hard_points_reference}}},
           {"autolabel",
            {{"center_sigma_m", s.autolabel.center_sigma_m},
             {"size_jitter_fraction", s.autolabel.size_jitter_fraction},
             {"drop_probability", s.autolabel.drop_probability}}}};
  if (s.feature_seed) j["feature_seed"] = *s.feature_seed;
}

void from_json(const Json& j, CorpusSpec& s) {
  s = CorpusSpec{};
  s.segment_count = j.at("segment_count").get<int>();
  s.frames_per_segment = j.at("frames_per_segment").get<int>();
  s.objects_per_segment = j.at("objects_per_segment").get<int>();
  s.object_type_mixture = j.at("object_type_mixture").get<std::vector<ObjectType>>();
  s.feature_map_resolution = j.value("feature_map_resolution", s.feature_map_resolution);
  s.map_half_extent_m = j.value("map_half_extent_m", s.map_half_extent_m);
  s.channels = j.value("channels", s.channels);
  s.noise_scale = j.value("noise_scale", s.noise_scale);
  s.sparsity_noise_gain = j.value("sparsity_noise_gain", s.sparsity_noise_gain);
  s.min_range_m = j.value("min_range_m", s.min_range_m);
  s.max_range_m = j.value("max_range_m", s.max_range_m);
  s.max_speed_m_per_frame = j.value("max_speed_m_per_frame", s.max_speed_m_per_frame);
  s.points_per_m2 = j.value("points_per_m2", s.points_per_m2);
  s.points_reference_range_m = j.value("points_reference_range_m", s.points_reference_range_m);
  s.seed = j.value("seed", s.seed);
  if (j.contains("feature_seed")) s.feature_seed = j["feature_seed"].get<std::uint64_t>();
  if (j.contains("detector")) {
    const Json& d = j["detector"];
    DetectorSimConfig& c = s.detector;
    c.ensemble_size = d.value("ensemble_size", c.ensemble_size);
    c.center_jitter_m = d.value("center_jitter_m", c.center_jitter_m);
    c.size_jitter_fraction = d.value("size_jitter_fraction", c.size_jitter_fraction);
    c.heading_jitter_rad = d.value("heading_jitter_rad", c.heading_jitter_rad);
    c.base_score = d.value("base_score", c.base_score);
    c.score_spread = d.value("score_spread", c.score_spread);
    c.hard_score_drop = d.value("hard_score_drop", c.hard_score_drop);
    c.hard_score_spread = d.value("hard_score_spread", c.hard_score_spread);
    c.rare_score_drop = d.value("rare_score_drop", c.rare_score_drop);
    c.rare_score_spread = d.value("rare_score_spread", c.rare_score_spread);
    c.miss_below = d.value("miss_below", c.miss_below);
    c.false_positives_per_frame = d.value("false_positives_per_frame", c.false_positives_per_frame);
    c.hard_points_reference = d.value("hard_points_reference", c.hard_points_reference);
  }
  if (j.contains("autolabel")) {
    const Json& a = j["autolabel"];
    s.autolabel.center_sigma_m = a.value("center_sigma_m", s.autolabel.center_sigma_m);
    s.autolabel.size_jitter_fraction = a.value("size_jitter_fraction", s.autolabel.size_jitter_fraction);
    s.autolabel.drop_probability = a.value("drop_probability", s.autolabel.drop_probability);
  }
}

std::vector<DetectionRecord> read_detections(const std::filesystem::path& path) {
  std::vector<DetectionRecord> out;
  for (const Json& row : read_jsonl(path)) {
    try {
      out.push_back(row.get<DetectionRecord>());
    } catch (const Json::exception& e) {
      throw ValidationError(path.string() + ": " + e.what());
    }
  }
  return out;
}

std::vector<GroundTruthTrack> read_tracks(const std::filesystem::path& path) {
  std::vector<GroundTruthTrack> out;
  for (const Json& row : read_jsonl(path)) {
    try {
      out.push_back(row.get<GroundTruthTrack>());
    } catch (const Json::exception& e) {
      throw ValidationError(path.string() + ": " + e.what());
    }
  }
  return out;
}

void write_tracks(const std::filesystem::path& path, const std::vector<GroundTruthTrack>& tracks) {
  std::vector<Json> rows;
  rows.reserve(tracks.size());
  for (const auto& t : tracks) rows.emplace_back(t);
  write_jsonl(path, rows);
}

}  // namespace rem
