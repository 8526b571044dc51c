#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "rem/corpus.hpp"
#include "rem/io.hpp"
#include "rem/score.hpp"

namespace rem {

struct RankedDetection {
  std::string detection_id;
  std::string segment_id;
  int frame_index = 0;
  Box3D box;
  double score = 0.0;
};

/// Joins scores with their detections, drops filtered records and sorts by
/// descending score, then ascending detection_id.
std::vector<RankedDetection> rank_detections(const std::vector<ScoreRecord>& scores,
                                             const std::vector<DetectionRecord>& detections);

/// Returns the full track of the object under the detection, or nullopt
/// when the candidate is not a real object.
using Oracle = std::function<std::optional<GroundTruthTrack>(const RankedDetection&)>;

struct SelectionLogEntry {
  std::string detection_id;
  Box3D box;
  double score = 0.0;
  bool object_exists = false;
  std::string track_id;                 // empty when no object
  std::vector<std::string> discarded;   // detection ids removed by the labeled track
};

struct MiningResult {
  std::size_t budget = 0;
  std::vector<GroundTruthTrack> human_tracks;
  std::vector<GroundTruthTrack> auto_tracks_retained;
  std::vector<std::string> auto_tracks_removed;
  std::vector<GroundTruthTrack> merged;  // human tracks first, then retained auto tracks
  std::vector<SelectionLogEntry> log;
};

/// Same segment and some shared frame with BEV IoU > 0.
bool tracks_intersect(const GroundTruthTrack& a, const GroundTruthTrack& b);

/// Greedy budgeted track mining. `ranked` must be strictly ordered as
/// produced by rank_detections; otherwise ValidationError.
MiningResult mine_tracks(const std::vector<RankedDetection>& ranked, const Oracle& oracle,
                         const std::vector<GroundTruthTrack>& auto_tracks, std::size_t budget);

/// Track whose same-frame box has the largest BEV IoU (> 0) with the detection.
std::optional<GroundTruthTrack> simulate_oracle(const RankedDetection& detection,
                                                const std::vector<GroundTruthTrack>& gt_tracks);

/// Oracle bound to a fixed ground-truth set, indexed by (segment, frame).
Oracle make_simulated_oracle(const std::vector<GroundTruthTrack>& gt_tracks);

/// Jittered copies of the ground truth with whole tracks dropped at random.
/// Ids are kept; tags become "auto-labeled". Deterministic given seed.
std::vector<GroundTruthTrack> simulate_autolabels(const std::vector<GroundTruthTrack>& gt_tracks,
                                                  const AutoLabelConfig& config, std::uint64_t seed);

Json mining_result_to_json(const MiningResult& result);
MiningResult mining_result_from_json(const Json& j);

}  // namespace rem
