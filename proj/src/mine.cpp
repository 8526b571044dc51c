#include "rem/mine.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <random>
#include <set>
#include <unordered_map>

#include "rem/error.hpp"

namespace rem {

std::vector<RankedDetection> rank_detections(const std::vector<ScoreRecord>& scores,
                                             const std::vector<DetectionRecord>& detections) {
  std::unordered_map<std::string, const DetectionRecord*> by_id;
  for (const DetectionRecord& d : detections) by_id.emplace(d.detection_id, &d);
  std::vector<RankedDetection> out;
  std::set<std::string> seen;
  for (const ScoreRecord& s : scores) {
    if (!seen.insert(s.detection_id).second) {
      throw ValidationError("duplicate score for detection '" + s.detection_id + "'");
    }
    if (s.filtered) continue;
    auto it = by_id.find(s.detection_id);
    if (it == by_id.end()) throw ValidationError("scored detection '" + s.detection_id + "' not found");
    const DetectionRecord& d = *it->second;
    out.push_back({d.detection_id, d.segment_id, d.frame_index, d.box, s.score});
  }
  std::sort(out.begin(), out.end(), [](const RankedDetection& a, const RankedDetection& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.detection_id < b.detection_id;
  });
  return out;
}

bool tracks_intersect(const GroundTruthTrack& a, const GroundTruthTrack& b) {
  if (a.segment_id != b.segment_id) return false;
  for (const auto& [frame, box] : a.boxes) {
    auto it = b.boxes.find(frame);
    if (it != b.boxes.end() && bev_may_overlap(box, it->second) && bev_iou(box, it->second) > 0.0) return true;
  }
  return false;
}

namespace {

bool touches_track(const RankedDetection& d, const GroundTruthTrack& t) {
  if (d.segment_id != t.segment_id) return false;
  auto it = t.boxes.find(d.frame_index);
  return it != t.boxes.end() && bev_may_overlap(d.box, it->second) && bev_iou(d.box, it->second) > 0.0;
}

void check_ranking(const std::vector<RankedDetection>& ranked) {
  std::set<std::string> ids;
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    if (!std::isfinite(ranked[i].score)) throw ValidationError("malformed ranking: non-finite score");
    if (!ids.insert(ranked[i].detection_id).second) {
      throw ValidationError("malformed ranking: duplicate detection '" + ranked[i].detection_id + "'");
    }
    if (i == 0) continue;
    const auto& p = ranked[i - 1];
    const auto& c = ranked[i];
    if (p.score < c.score || (p.score == c.score && !(p.detection_id < c.detection_id))) {
      throw ValidationError("malformed ranking at position " + std::to_string(i));
    }
  }
}

}  // namespace

MiningResult mine_tracks(const std::vector<RankedDetection>& ranked, const Oracle& oracle,
                         const std::vector<GroundTruthTrack>& auto_tracks, std::size_t budget) {
  check_ranking(ranked);
  MiningResult result;
  result.budget = budget;
  std::vector<char> alive(ranked.size(), 1);
  std::set<std::string> labeled;

  for (std::size_t i = 0; i < ranked.size() && result.human_tracks.size() < budget; ++i) {
    if (!alive[i]) continue;
    alive[i] = 0;
    const RankedDetection& cand = ranked[i];
    SelectionLogEntry entry{cand.detection_id, cand.box, cand.score, false, {}, {}};
    std::optional<GroundTruthTrack> track = oracle(cand);
    if (track) {
      if (!labeled.insert(track->track_id).second) {
        throw ValidationError("oracle returned already-labeled track '" + track->track_id + "'");
      }
      entry.object_exists = true;
      entry.track_id = track->track_id;
      for (std::size_t j = i + 1; j < ranked.size(); ++j) {
        if (alive[j] && touches_track(ranked[j], *track)) {
          alive[j] = 0;
          entry.discarded.push_back(ranked[j].detection_id);
        }
      }
      result.human_tracks.push_back(std::move(*track));
    }
    result.log.push_back(std::move(entry));
  }

  result.merged = result.human_tracks;
  for (const GroundTruthTrack& a : auto_tracks) {
    bool removed = labeled.count(a.track_id) > 0;
    for (std::size_t h = 0; !removed && h < result.human_tracks.size(); ++h) {
      removed = tracks_intersect(a, result.human_tracks[h]);
    }
    if (removed) {
      result.auto_tracks_removed.push_back(a.track_id);
    } else {
      result.auto_tracks_retained.push_back(a);
      result.merged.push_back(a);
    }
  }
  std::set<std::string> ids;
  for (const GroundTruthTrack& t : result.merged) {
    if (!ids.insert(t.track_id).second) throw ValidationError("duplicate track id '" + t.track_id + "' in merged set");
  }
  return result;
}

std::optional<GroundTruthTrack> simulate_oracle(const RankedDetection& detection,
                                                const std::vector<GroundTruthTrack>& gt_tracks) {
  const GroundTruthTrack* best = nullptr;
  double best_iou = 0.0;
  for (const GroundTruthTrack& t : gt_tracks) {
    if (t.segment_id != detection.segment_id) continue;
    auto it = t.boxes.find(detection.frame_index);
    if (it == t.boxes.end()) continue;
    const double iou = bev_iou(detection.box, it->second);
    if (iou > best_iou) {
      best_iou = iou;
      best = &t;
    }
  }
  if (!best) return std::nullopt;
  return *best;
}

Oracle make_simulated_oracle(const std::vector<GroundTruthTrack>& gt_tracks) {
  auto index = std::make_shared<std::map<std::pair<std::string, int>, std::vector<const GroundTruthTrack*>>>();
  auto tracks = std::make_shared<std::vector<GroundTruthTrack>>(gt_tracks);
  for (const GroundTruthTrack& t : *tracks) {
    for (const auto& [frame, box] : t.boxes) (*index)[{t.segment_id, frame}].push_back(&t);
  }
  return [index, tracks](const RankedDetection& d) -> std::optional<GroundTruthTrack> {
    auto it = index->find({d.segment_id, d.frame_index});
    if (it == index->end()) return std::nullopt;
    const GroundTruthTrack* best = nullptr;
    double best_iou = 0.0;
    for (const GroundTruthTrack* t : it->second) {
      const double iou = bev_iou(d.box, t->boxes.at(d.frame_index));
      if (iou > best_iou) {
        best_iou = iou;
        best = t;
      }
    }
    if (!best) return std::nullopt;
    return *best;
  };
}

std::vector<GroundTruthTrack> simulate_autolabels(const std::vector<GroundTruthTrack>& gt_tracks,
                                                  const AutoLabelConfig& config, std::uint64_t seed) {
  if (!(config.center_sigma_m >= 0.0) || !(config.size_jitter_fraction >= 0.0) ||
      !(config.drop_probability >= 0.0 && config.drop_probability <= 1.0)) {
    throw ValidationError("invalid auto-label noise configuration");
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<GroundTruthTrack> out;
  for (const GroundTruthTrack& t : gt_tracks) {
    const double u = unit(rng);
    if (u < config.drop_probability) continue;
    GroundTruthTrack a = t;
    a.attribute_tag = "auto-labeled";
    for (auto& [frame, box] : a.boxes) {
      box.center_x += config.center_sigma_m * normal(rng);
      box.center_y += config.center_sigma_m * normal(rng);
      box.center_z += config.center_sigma_m * normal(rng);
      for (double* extent : {&box.length, &box.width, &box.height}) {
        const double factor = 1.0 + config.size_jitter_fraction * normal(rng);
        *extent *= std::max(factor, 0.1);
      }
    }
    out.push_back(std::move(a));
  }
  return out;
}

Json mining_result_to_json(const MiningResult& result) {
  Json log = Json::array();
  for (const SelectionLogEntry& e : result.log) {
    log.push_back({{"detection_id", e.detection_id},
                   {"box", e.box},
                   {"score", e.score},
                   {"object_exists", e.object_exists},
                   {"track_id", e.track_id},
                   {"discarded", e.discarded}});
  }
  Json merged = Json::array();
  const std::size_t human = result.human_tracks.size();
  for (std::size_t i = 0; i < result.merged.size(); ++i) {
    merged.push_back({{"track_id", result.merged[i].track_id}, {"source", i < human ? "human" : "auto"}});
  }
  Json retained = Json::array();
  for (const auto& t : result.auto_tracks_retained) retained.push_back(t.track_id);
  return Json{{"budget", result.budget},
              {"human_tracks", result.human_tracks},
              {"auto_tracks_retained", retained},
              {"auto_tracks_removed", result.auto_tracks_removed},
              {"merged", merged},
              {"selection_log", log}};
}

MiningResult mining_result_from_json(const Json& j) {
  MiningResult r;
  r.budget = j.at("budget").get<std::size_t>();
  r.human_tracks = j.at("human_tracks").get<std::vector<GroundTruthTrack>>();
  r.auto_tracks_removed = j.at("auto_tracks_removed").get<std::vector<std::string>>();
  // retained auto tracks are stored by id only
  std::map<std::string, const GroundTruthTrack*> human;
  for (const GroundTruthTrack& t : r.human_tracks) human[t.track_id] = &t;
  for (const Json& id : j.at("auto_tracks_retained")) {
    GroundTruthTrack t;
    t.track_id = id.get<std::string>();
    t.attribute_tag = "auto-labeled";
    r.auto_tracks_retained.push_back(std::move(t));
  }
  for (const Json& m : j.at("merged")) {
    const std::string id = m.at("track_id").get<std::string>();
    const std::string source = m.at("source").get<std::string>();
    if (source == "human") {
      auto it = human.find(id);
      if (it == human.end()) throw ValidationError("merged track '" + id + "' missing from human_tracks");
      r.merged.push_back(*it->second);
    } else if (source == "auto") {
      GroundTruthTrack t;
      t.track_id = id;
      t.attribute_tag = "auto-labeled";
      r.merged.push_back(std::move(t));
    } else {
      throw ValidationError("unknown merged track source '" + source + "'");
    }
  }
  for (const Json& e : j.at("selection_log")) {
    SelectionLogEntry s;
    s.detection_id = e.at("detection_id").get<std::string>();
    s.box = e.at("box").get<Box3D>();
    s.score = e.at("score").get<double>();
    s.object_exists = e.at("object_exists").get<bool>();
    s.track_id = e.at("track_id").get<std::string>();
    s.discarded = e.at("discarded").get<std::vector<std::string>>();
    r.log.push_back(std::move(s));
  }
  if (r.human_tracks.size() > r.budget) throw ValidationError("mined.json exceeds its budget");
  return r;
}

}  // namespace rem
