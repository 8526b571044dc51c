#include "rem/score.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <tuple>

#include "rem/error.hpp"

namespace rem {

double ensemble_variance(const EnsembleGroup& group) {
  const std::size_t n = group.scores.size();
  if (n < 2) throw ValidationError("ensemble variance needs at least two members");
  for (double s : group.scores) {
    if (!(s >= 0.0 && s <= 1.0)) throw ValidationError("ensemble score outside [0, 1]");
  }
  const double mean = std::accumulate(group.scores.begin(), group.scores.end(), 0.0) / static_cast<double>(n);
  double sum = 0.0;
  for (double s : group.scores) sum += (s - mean) * (s - mean);
  return sum / static_cast<double>(n);
}

int hard_filter(int point_count, double range_m, const HardFilterConfig& config) {
  return (point_count > config.point_threshold && range_m < config.range_threshold_m) ? 1 : 0;
}

double rareness_model(int hard_bit, double variance) { return hard_bit * variance; }

std::optional<double> rareness_combined(int hard_bit, double data_rareness) {
  if (hard_bit == 0) return std::nullopt;
  return hard_bit * data_rareness;
}

double track_score(std::span<const double> per_frame_scores) {
  if (per_frame_scores.empty()) throw ValidationError("track score of an empty track");
  return std::accumulate(per_frame_scores.begin(), per_frame_scores.end(), 0.0) /
         static_cast<double>(per_frame_scores.size());
}

std::vector<EnsembleGroup> associate_ensemble(const std::vector<DetectionRecord>& detections, int ensemble_size,
                                              double iou_threshold) {
  if (ensemble_size < 2) throw ValidationError("ensemble needs at least two members");
  // (segment, frame) -> per-model detection indices
  std::map<std::pair<std::string, int>, std::vector<std::vector<std::size_t>>> frames;
  for (std::size_t i = 0; i < detections.size(); ++i) {
    const DetectionRecord& d = detections[i];
    if (d.model_id < 0 || d.model_id >= ensemble_size) {
      throw ValidationError("detection '" + d.detection_id + "' has model_id outside the ensemble");
    }
    auto& slot = frames[{d.segment_id, d.frame_index}];
    slot.resize(static_cast<std::size_t>(ensemble_size));
    slot[static_cast<std::size_t>(d.model_id)].push_back(i);
  }

  std::map<std::size_t, EnsembleGroup> by_reference;
  for (const auto& [key, per_model] : frames) {
    const auto& refs = per_model[0];
    for (std::size_t r : refs) {
      EnsembleGroup g;
      g.object_id = detections[r].detection_id;
      g.scores.assign(static_cast<std::size_t>(ensemble_size), 0.0);
      g.scores[0] = detections[r].score;
      by_reference.emplace(r, std::move(g));
    }
    for (int model = 1; model < ensemble_size; ++model) {
      const auto& others = per_model[static_cast<std::size_t>(model)];
      std::vector<std::tuple<double, std::size_t, std::size_t>> pairs;
      for (std::size_t a = 0; a < refs.size(); ++a) {
        for (std::size_t b = 0; b < others.size(); ++b) {
          const double iou = bev_iou(detections[refs[a]].box, detections[others[b]].box);
          if (iou >= iou_threshold) pairs.emplace_back(iou, a, b);
        }
      }
      std::sort(pairs.begin(), pairs.end(), [](const auto& x, const auto& y) {
        if (std::get<0>(x) != std::get<0>(y)) return std::get<0>(x) > std::get<0>(y);
        return std::tie(std::get<1>(x), std::get<2>(x)) < std::tie(std::get<1>(y), std::get<2>(y));
      });
      std::vector<bool> ref_used(refs.size(), false), other_used(others.size(), false);
      for (const auto& [iou, a, b] : pairs) {
        if (ref_used[a] || other_used[b]) continue;
        ref_used[a] = other_used[b] = true;
        by_reference[refs[a]].scores[static_cast<std::size_t>(model)] = detections[others[b]].score;
      }
    }
  }
  std::vector<EnsembleGroup> out;
  out.reserve(by_reference.size());
  for (auto& [index, group] : by_reference) out.push_back(std::move(group));
  return out;
}

const char* to_string(ScoreMethod m) {
  switch (m) {
    case ScoreMethod::d_rem:
      return "d-rem";
    case ScoreMethod::m_rem:
      return "m-rem";
    case ScoreMethod::md_rem:
      return "md-rem";
    case ScoreMethod::ensemble:
      return "ensemble";
    case ScoreMethod::random:
      return "random";
    case ScoreMethod::predict_size:
      return "predict-size";
  }
  return "unknown";
}

ScoreMethod parse_score_method(const std::string& name) {
  for (ScoreMethod m : {ScoreMethod::d_rem, ScoreMethod::m_rem, ScoreMethod::md_rem, ScoreMethod::ensemble,
                        ScoreMethod::random, ScoreMethod::predict_size}) {
    if (name == to_string(m)) return m;
  }
  throw ValidationError("unknown scoring method '" + name + "'");
}

std::vector<ScoreRecord> score_detections(ScoreMethod method, const ScoringInputs& in) {
  if (!in.detections) throw ValidationError("scoring needs detections");
  const auto& dets = *in.detections;
  const bool needs_data = method == ScoreMethod::d_rem || method == ScoreMethod::md_rem;
  const bool needs_ensemble = method == ScoreMethod::m_rem || method == ScoreMethod::ensemble;
  if (needs_data && !in.data_rareness) throw ValidationError(std::string(to_string(method)) + " needs flow rareness");

  std::map<std::string, double> variance;
  if (needs_ensemble) {
    int size = in.ensemble_size;
    if (size == 0) {
      for (const DetectionRecord& d : dets) size = std::max(size, d.model_id + 1);
    }
    for (const EnsembleGroup& g : associate_ensemble(dets, size, in.association_iou)) {
      variance[g.object_id] = ensemble_variance(g);
    }
  }

  std::mt19937_64 rng(in.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<ScoreRecord> out;
  for (const DetectionRecord& d : dets) {
    if (d.model_id != 0) continue;
    ScoreRecord r;
    r.detection_id = d.detection_id;
    r.track_hypothesis_id = d.track_hypothesis_id;
    r.method = method;
    r.hard_bit = hard_filter(d.point_count, d.range_m, in.hard_filter);
    double data = 0.0;
    if (needs_data) {
      auto it = in.data_rareness->find(d.detection_id);
      if (it == in.data_rareness->end()) {
        throw ValidationError("no flow rareness for detection '" + d.detection_id + "'");
      }
      data = it->second;
    }
    switch (method) {
      case ScoreMethod::d_rem:
        r.score = data;
        break;
      case ScoreMethod::md_rem: {
        const auto combined = rareness_combined(r.hard_bit, data);
        r.filtered = !combined.has_value();
        r.score = combined.value_or(0.0);
        break;
      }
      case ScoreMethod::m_rem:
        r.score = rareness_model(r.hard_bit, variance.at(d.detection_id));
        break;
      case ScoreMethod::ensemble:
        r.score = variance.at(d.detection_id);
        break;
      case ScoreMethod::random:
        r.score = unit(rng);
        break;
      case ScoreMethod::predict_size:
        r.score = vehicle_size(d.box);
        break;
    }
    out.push_back(std::move(r));
  }
  return out;
}

void to_json(Json& j, const ScoreRecord& r) {
  j = Json{{"detection_id", r.detection_id},
           {"track_hypothesis_id", r.track_hypothesis_id},
           {"method", to_string(r.method)},
           {"score", r.score},
           {"hard_bit", r.hard_bit},
           {"filtered", r.filtered}};
}

void from_json(const Json& j, ScoreRecord& r) {
  r.detection_id = j.at("detection_id").get<std::string>();
  r.track_hypothesis_id = j.value("track_hypothesis_id", "");
  r.method = parse_score_method(j.at("method").get<std::string>());
  r.score = j.at("score").get<double>();
  r.hard_bit = j.value("hard_bit", 1);
  r.filtered = j.value("filtered", false);
  if (!std::isfinite(r.score)) throw ValidationError("score for '" + r.detection_id + "' is not finite");
}

}  // namespace rem
