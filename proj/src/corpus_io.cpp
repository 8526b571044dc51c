#include <algorithm>
#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>

#include "rem/error.hpp"
#include "rem/io.hpp"

namespace rem {

namespace {

constexpr std::array<char, 4> kMagic = {'R', 'E', 'M', 'F'};

void put_u32(std::ofstream& out, std::uint32_t v) {
  const unsigned char bytes[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                                  static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(bytes), 4);
}

bool get_u32(std::ifstream& in, std::uint32_t& v) {
  unsigned char bytes[4];
  if (!in.read(reinterpret_cast<char*>(bytes), 4)) return false;
  v = static_cast<std::uint32_t>(bytes[0]) | (static_cast<std::uint32_t>(bytes[1]) << 8) |
      (static_cast<std::uint32_t>(bytes[2]) << 16) | (static_cast<std::uint32_t>(bytes[3]) << 24);
  return true;
}

Json grid_to_json(const GridGeometry& g) {
  return Json{{"origin_x", g.origin_x}, {"origin_y", g.origin_y}, {"cell_size", g.cell_size},
              {"rows", g.rows},         {"cols", g.cols}};
}

GridGeometry grid_from_json(const Json& j) {
  GridGeometry g;
  g.origin_x = j.at("origin_x").get<double>();
  g.origin_y = j.at("origin_y").get<double>();
  g.cell_size = j.at("cell_size").get<double>();
  g.rows = j.at("rows").get<int>();
  g.cols = j.at("cols").get<int>();
  return g;
}

}  // namespace

void write_feature_maps(const std::filesystem::path& path, const std::vector<FeatureMap>& frames) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write '" + path.string() + "'");
  for (const FeatureMap& map : frames) {
    out.write(kMagic.data(), 4);
    put_u32(out, static_cast<std::uint32_t>(map.geometry.rows));
    put_u32(out, static_cast<std::uint32_t>(map.geometry.cols));
    put_u32(out, static_cast<std::uint32_t>(map.channels));
    for (float f : map.values) {
      std::uint32_t bits;
      std::memcpy(&bits, &f, 4);
      put_u32(out, bits);
    }
  }
}

std::vector<FeatureMap> read_feature_maps(const std::filesystem::path& path, const GridGeometry& grid) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open '" + path.string() + "'");
  std::vector<FeatureMap> frames;
  for (;;) {
    std::array<char, 4> magic{};
    if (!in.read(magic.data(), 4)) break;
    if (magic != kMagic) throw ValidationError("'" + path.string() + "' has a bad magic number");
    std::uint32_t rows = 0, cols = 0, channels = 0;
    if (!get_u32(in, rows) || !get_u32(in, cols) || !get_u32(in, channels)) {
      throw ValidationError("'" + path.string() + "' has a truncated header");
    }
    if (static_cast<int>(rows) != grid.rows || static_cast<int>(cols) != grid.cols) {
      throw ValidationError("'" + path.string() + "' grid size disagrees with grid.json");
    }
    FeatureMap map(grid, static_cast<int>(channels));
    for (float& f : map.values) {
      std::uint32_t bits;
      if (!get_u32(in, bits)) throw ValidationError("'" + path.string() + "' is truncated");
      std::memcpy(&f, &bits, 4);
    }
    frames.push_back(std::move(map));
  }
  return frames;
}

void write_corpus(const Corpus& corpus, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_json_file(dir / "corpus_spec.json", Json(corpus.spec));
  write_json_file(dir / "grid.json", grid_to_json(corpus.geometry));

  std::vector<Json> rows;
  for (const DetectionRecord& d : corpus.detections) rows.emplace_back(d);
  write_jsonl(dir / "detections.jsonl", rows);

  write_tracks(dir / "gt_tracks.jsonl", corpus.gt_tracks);

  rows.clear();
  for (const auto& [id, density] : corpus.truth_density) {
    rows.push_back(Json{{"detection_id", id}, {"density", density}});
  }
  write_jsonl(dir / "truth_density.jsonl", rows);

  rows.clear();
  for (const ObjectInstance& o : corpus.objects) {
    rows.push_back(Json{{"instance_id", instance_key(o.track_id, o.frame_index)},
                        {"track_id", o.track_id},
                        {"segment_id", o.segment_id},
                        {"frame_index", o.frame_index},
                        {"type", corpus.spec.object_type_mixture[o.type_index].name},
                        {"attributes", o.attributes},
                        {"density", o.density},
                        {"box", o.box},
                        {"point_count", o.point_count},
                        {"range_m", o.range_m},
                        {"hardness", o.hardness}});
  }
  write_jsonl(dir / "objects.jsonl", rows);

  for (const Segment& seg : corpus.segments) {
    write_feature_maps(dir / "segments" / seg.segment_id / "features.bin", seg.frames);
  }
}

Corpus read_corpus(const std::filesystem::path& dir, bool load_feature_maps) {
  Corpus corpus;
  try {
    corpus.spec = read_json_file(dir / "corpus_spec.json").get<CorpusSpec>();
    corpus.geometry = grid_from_json(read_json_file(dir / "grid.json"));
  } catch (const Json::exception& e) {
    throw ValidationError("bad corpus metadata in '" + dir.string() + "': " + e.what());
  }
  corpus.detections = read_detections(dir / "detections.jsonl");
  corpus.gt_tracks = read_tracks(dir / "gt_tracks.jsonl");
  for (const Json& row : read_jsonl(dir / "truth_density.jsonl")) {
    corpus.truth_density[row.at("detection_id").get<std::string>()] = row.at("density").get<double>();
  }
  std::map<std::string, std::size_t> type_index;
  for (std::size_t t = 0; t < corpus.spec.object_type_mixture.size(); ++t) {
    type_index[corpus.spec.object_type_mixture[t].name] = t;
  }
  if (std::filesystem::exists(dir / "objects.jsonl")) {
    for (const Json& row : read_jsonl(dir / "objects.jsonl")) {
      ObjectInstance o;
      o.track_id = row.at("track_id").get<std::string>();
      o.segment_id = row.at("segment_id").get<std::string>();
      o.frame_index = row.at("frame_index").get<int>();
      o.type_index = type_index.at(row.at("type").get<std::string>());
      o.attributes = row.at("attributes").get<std::vector<double>>();
      o.density = row.at("density").get<double>();
      o.box = row.at("box").get<Box3D>();
      o.point_count = row.at("point_count").get<int>();
      o.range_m = row.at("range_m").get<double>();
      o.hardness = row.at("hardness").get<double>();
      corpus.objects.push_back(std::move(o));
    }
  }
  std::vector<std::string> segment_ids;
  for (const GroundTruthTrack& t : corpus.gt_tracks) segment_ids.push_back(t.segment_id);
  for (const DetectionRecord& d : corpus.detections) segment_ids.push_back(d.segment_id);
  std::sort(segment_ids.begin(), segment_ids.end());
  segment_ids.erase(std::unique(segment_ids.begin(), segment_ids.end()), segment_ids.end());
  if (std::filesystem::exists(dir / "segments")) {
    for (const auto& entry : std::filesystem::directory_iterator(dir / "segments")) {
      segment_ids.push_back(entry.path().filename().string());
    }
    std::sort(segment_ids.begin(), segment_ids.end());
    segment_ids.erase(std::unique(segment_ids.begin(), segment_ids.end()), segment_ids.end());
  }
  for (const std::string& id : segment_ids) {
    Segment seg;
    seg.segment_id = id;
    const auto path = dir / "segments" / id / "features.bin";
    if (load_feature_maps && std::filesystem::exists(path)) seg.frames = read_feature_maps(path, corpus.geometry);
    corpus.segments.push_back(std::move(seg));
  }
  corpus.index_segments();
  return corpus;
}

}  // namespace rem
