#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "rem/corpus.hpp"

namespace rem {

using Json = nlohmann::json;

Json read_json_file(const std::filesystem::path& path);
/// Pretty-printed with a trailing newline.
void write_json_file(const std::filesystem::path& path, const Json& value);

std::vector<Json> read_jsonl(const std::filesystem::path& path);
void write_jsonl(const std::filesystem::path& path, const std::vector<Json>& rows);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

/// Fixed "%.17g" rendering so CSV output round-trips and is byte-stable.
std::string format_double(double value);

void to_json(Json& j, const Box3D& b);
void from_json(const Json& j, Box3D& b);
void to_json(Json& j, const DetectionRecord& d);
void from_json(const Json& j, DetectionRecord& d);
void to_json(Json& j, const GroundTruthTrack& t);
void from_json(const Json& j, GroundTruthTrack& t);
void to_json(Json& j, const ObjectType& t);
void from_json(const Json& j, ObjectType& t);
void to_json(Json& j, const CorpusSpec& s);
void from_json(const Json& j, CorpusSpec& s);

std::vector<DetectionRecord> read_detections(const std::filesystem::path& path);
std::vector<GroundTruthTrack> read_tracks(const std::filesystem::path& path);
void write_tracks(const std::filesystem::path& path, const std::vector<GroundTruthTrack>& tracks);

/// Corpus directory layout:
///   corpus_spec.json, grid.json, detections.jsonl, gt_tracks.jsonl,
///   truth_density.jsonl, objects.jsonl, segments/<id>/features.bin
/// features.bin holds one block per frame, in frame order; each block is
/// the "REMF" magic, u32 rows, u32 cols, u32 channels, then row-major
/// little-endian float32 values.
void write_corpus(const Corpus& corpus, const std::filesystem::path& dir);
Corpus read_corpus(const std::filesystem::path& dir, bool load_feature_maps = true);

void write_feature_maps(const std::filesystem::path& path, const std::vector<FeatureMap>& frames);
std::vector<FeatureMap> read_feature_maps(const std::filesystem::path& path, const GridGeometry& grid);

}  // namespace rem
