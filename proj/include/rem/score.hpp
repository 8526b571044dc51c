#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rem/corpus.hpp"
#include "rem/io.hpp"

namespace rem {

/// Scores one object received from each of N ensemble members; a miss is 0.
struct EnsembleGroup {
  std::string object_id;
  std::vector<double> scores;
};

struct HardFilterConfig {
  int point_threshold = 200;
  double range_threshold_m = 50.0;
};

/// Population variance (divisor N) of the member scores. Requires N >= 2.
double ensemble_variance(const EnsembleGroup& group);

/// 1 iff points > point_threshold and range < range_threshold_m.
int hard_filter(int point_count, double range_m, const HardFilterConfig& config);

/// h * v
double rareness_model(int hard_bit, double variance);

/// h * r_data, or nullopt when the hard filter removes the candidate.
std::optional<double> rareness_combined(int hard_bit, double data_rareness);

/// Mean of per-frame rareness scores; throws on an empty list.
double track_score(std::span<const double> per_frame_scores);

/// Groups model-0 detections with their counterparts from the other
/// ensemble members. Per (segment, frame), every other member's detections
/// are matched greedily by descending BEV IoU (>= iou_threshold); unmatched
/// reference objects score 0 for that member. Output follows model-0
/// detection order; object_id is the model-0 detection_id.
std::vector<EnsembleGroup> associate_ensemble(const std::vector<DetectionRecord>& detections, int ensemble_size,
                                              double iou_threshold = 0.3);

enum class ScoreMethod { d_rem, m_rem, md_rem, ensemble, random, predict_size };

const char* to_string(ScoreMethod m);
ScoreMethod parse_score_method(const std::string& name);

struct ScoreRecord {
  std::string detection_id;
  std::string track_hypothesis_id;
  ScoreMethod method = ScoreMethod::d_rem;
  double score = 0.0;
  int hard_bit = 1;
  bool filtered = false;  // excluded from ranking (MD-REM with hard_bit 0)
};

struct ScoringInputs {
  const std::vector<DetectionRecord>* detections = nullptr;  // every ensemble member
  const std::map<std::string, double>* data_rareness = nullptr;  // detection_id -> -log p, for d-rem / md-rem
  HardFilterConfig hard_filter;
  int ensemble_size = 0;  // 0: infer from the largest model_id
  double association_iou = 0.3;
  std::uint64_t seed = 0;  // random baseline
};

/// One record per model-0 detection, in input order.
std::vector<ScoreRecord> score_detections(ScoreMethod method, const ScoringInputs& inputs);

void to_json(Json& j, const ScoreRecord& r);
void from_json(const Json& j, ScoreRecord& r);

}  // namespace rem
