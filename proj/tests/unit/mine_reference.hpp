#pragma once

#include <algorithm>
#include <list>
#include <random>
#include <set>

#include "rem/mine.hpp"

namespace testutil {

// Straightforward list-based transcription of the mining loop.
struct ReferenceOutcome {
  std::vector<std::string> human;
  std::vector<std::string> queried;
  std::vector<std::vector<std::string>> discarded;
  std::vector<std::string> retained;
  std::vector<std::string> removed;
};

inline bool ref_touch(const rem::Box3D& a, const rem::Box3D& b) { return rem::bev_iou(a, b) > 0.0; }

inline ReferenceOutcome reference_mine(std::vector<rem::RankedDetection> pool,
                                       const std::vector<rem::GroundTruthTrack>& gt,
                                       const std::vector<rem::GroundTruthTrack>& auto_tracks, std::size_t budget) {
  std::stable_sort(pool.begin(), pool.end(), [](const auto& a, const auto& b) {
    return a.score > b.score || (a.score == b.score && a.detection_id < b.detection_id);
  });
  std::list<rem::RankedDetection> remaining(pool.begin(), pool.end());
  ReferenceOutcome out;
  std::vector<const rem::GroundTruthTrack*> human;
  while (out.human.size() < budget && !remaining.empty()) {
    const rem::RankedDetection d = remaining.front();
    remaining.pop_front();
    out.queried.push_back(d.detection_id);
    const auto t = rem::simulate_oracle(d, gt);
    std::vector<std::string> gone;
    if (t) {
      out.human.push_back(t->track_id);
      const rem::GroundTruthTrack* tp = nullptr;
      for (const auto& g : gt) {
        if (g.track_id == t->track_id) tp = &g;
      }
      human.push_back(tp);
      for (auto it = remaining.begin(); it != remaining.end();) {
        bool hit = false;
        for (const auto& [frame, box] : tp->boxes) {
          if (it->segment_id == tp->segment_id && it->frame_index == frame && ref_touch(it->box, box)) hit = true;
        }
        if (hit) {
          gone.push_back(it->detection_id);
          it = remaining.erase(it);
        } else {
          ++it;
        }
      }
    }
    out.discarded.push_back(gone);
  }
  for (const auto& a : auto_tracks) {
    bool hit = false;
    for (const auto* h : human) {
      if (h->track_id == a.track_id) hit = true;
      if (h->segment_id != a.segment_id) continue;
      for (const auto& [f1, b1] : h->boxes) {
        for (const auto& [f2, b2] : a.boxes) {
          if (f1 == f2 && ref_touch(b1, b2)) hit = true;
        }
      }
    }
    (hit ? out.removed : out.retained).push_back(a.track_id);
  }
  return out;
}

struct MiningInstance {
  std::vector<rem::GroundTruthTrack> gt;
  std::vector<rem::GroundTruthTrack> auto_tracks;
  std::vector<rem::RankedDetection> detections;
};

inline MiningInstance random_mining_instance(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto u = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  auto ui = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  MiningInstance inst;
  const int segments = ui(1, 3);
  const int frames = ui(1, 4);
  const int tracks = ui(0, 20);
  for (int t = 0; t < tracks; ++t) {
    rem::GroundTruthTrack g;
    g.track_id = "t" + std::to_string(t);
    g.segment_id = "s" + std::to_string(ui(0, segments - 1));
    g.attribute_tag = "car";
    const double x = u(-12, 12), y = u(-12, 12);
    const double vx = u(-1, 1), vy = u(-1, 1);
    const int first = ui(0, frames - 1);
    const int last = ui(first, frames - 1);
    for (int f = first; f <= last; ++f) {
      g.boxes[f] = rem::Box3D{x + vx * f, y + vy * f, 0.8, u(1.5, 5), u(1, 2.5), 1.6, u(-3.1, 3.1)};
    }
    inst.gt.push_back(g);
  }
  const int dets = ui(0, 100);
  for (int i = 0; i < dets; ++i) {
    rem::RankedDetection d;
    d.detection_id = "d" + std::to_string(i);
    if (!inst.gt.empty() && u(0, 1) < 0.75) {
      const auto& g = inst.gt[ui(0, static_cast<int>(inst.gt.size()) - 1)];
      auto it = std::next(g.boxes.begin(), ui(0, static_cast<int>(g.boxes.size()) - 1));
      d.segment_id = g.segment_id;
      d.frame_index = it->first;
      d.box = it->second;
      d.box.center_x += u(-1, 1);
      d.box.center_y += u(-1, 1);
    } else {
      d.segment_id = "s" + std::to_string(ui(0, segments - 1));
      d.frame_index = ui(0, frames - 1);
      d.box = rem::Box3D{u(-15, 15), u(-15, 15), 0.8, u(1, 4), u(1, 2), 1.5, u(-3.1, 3.1)};
    }
    d.score = static_cast<double>(ui(0, 30));  // coarse scores create ties
    inst.detections.push_back(d);
  }
  inst.auto_tracks = rem::simulate_autolabels(inst.gt, rem::AutoLabelConfig{0.5, 0.1, 0.3}, seed + 1);
  if (u(0, 1) < 0.5) {
    rem::GroundTruthTrack extra;
    extra.track_id = "auto-extra";
    extra.segment_id = "s0";
    extra.attribute_tag = "auto-labeled";
    extra.boxes[0] = rem::Box3D{u(-12, 12), u(-12, 12), 0.8, 4, 2, 1.6, 0};
    inst.auto_tracks.push_back(extra);
  }
  return inst;
}

inline std::vector<rem::RankedDetection> sorted_ranking(std::vector<rem::RankedDetection> d) {
  std::sort(d.begin(), d.end(), [](const auto& a, const auto& b) {
    return a.score > b.score || (a.score == b.score && a.detection_id < b.detection_id);
  });
  return d;
}

inline std::vector<std::string> ids_of(const std::vector<rem::GroundTruthTrack>& t) {
  std::vector<std::string> out;
  for (const auto& x : t) out.push_back(x.track_id);
  return out;
}

// Empty string when equal, otherwise a description of the first mismatch.
inline std::string compare_with_reference(const MiningInstance& inst, std::size_t budget) {
  const rem::MiningResult r = rem::mine_tracks(sorted_ranking(inst.detections), rem::make_simulated_oracle(inst.gt),
                                               inst.auto_tracks, budget);
  const ReferenceOutcome ref = reference_mine(inst.detections, inst.gt, inst.auto_tracks, budget);
  if (ids_of(r.human_tracks) != ref.human) return "human tracks";
  if (r.log.size() != ref.queried.size()) return "log length";
  for (std::size_t i = 0; i < r.log.size(); ++i) {
    if (r.log[i].detection_id != ref.queried[i]) return "query order";
    if (r.log[i].discarded != ref.discarded[i]) return "discard list";
    if (r.log[i].object_exists != !r.log[i].track_id.empty()) return "log outcome";
  }
  if (ids_of(r.auto_tracks_retained) != ref.retained) return "retained";
  if (r.auto_tracks_removed != ref.removed) return "removed";
  std::vector<std::string> merged = ref.human;
  merged.insert(merged.end(), ref.retained.begin(), ref.retained.end());
  if (ids_of(r.merged) != merged) return "merged";
  if (r.human_tracks.size() > budget) return "budget";
  if (std::set<std::string>(merged.begin(), merged.end()).size() != merged.size()) return "uniqueness";
  return {};
}

}  // namespace testutil
