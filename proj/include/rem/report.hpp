#pragma once

#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "rem/corpus.hpp"
#include "rem/embed.hpp"
#include "rem/io.hpp"
#include "rem/mine.hpp"

namespace rem {

struct RecallBin {
  double rareness_max = 0.0;  // bin edges in rareness (-log p)
  double rareness_min = 0.0;
  std::size_t count = 0;
  std::size_t matched = 0;
  double recall = 0.0;
};

/// Bins run from rarest to most common.
struct PercentileBinReport {
  std::vector<RecallBin> bins;
  std::size_t total = 0;
  double overall_recall = 0.0;
};

/// Sorts by descending rareness and splits into equal-count bins; the last
/// bin absorbs the remainder. Uses min(bins, n) bins.
PercentileBinReport percentile_recall(std::span<const double> rareness, const std::vector<bool>& matched,
                                      int bins = 50);

struct RecallMatchConfig {
  double iou_threshold = 0.5;
  double score_threshold = 0.0;
  int model_id = 0;
};

/// For each ground-truth box: is there a same-frame detection with score
/// above the threshold and BEV IoU >= iou_threshold.
std::vector<bool> match_ground_truth(const std::vector<PoolTarget>& gt_boxes,
                                     const std::vector<DetectionRecord>& detections,
                                     const RecallMatchConfig& config = {});

struct CompositionReport {
  std::string method;
  std::size_t total = 0;
  std::map<std::string, std::size_t> by_category;  // small / regular / large
  std::map<std::string, std::size_t> by_tag;
  double ratio_large = 0.0;
  double corpus_large_prevalence = 0.0;
  double upsampling = 0.0;  // ratio_large / prevalence; 0 when the corpus has no large tracks
  std::map<std::string, double> tag_ratio;
  std::map<std::string, double> tag_prevalence;
};

/// Size category of a track: from the mean vehicle size over its boxes.
SizeCategory track_category(const GroundTruthTrack& track);

/// Mined tracks are resolved to ground truth by track id.
CompositionReport composition(const std::string& method, const std::vector<GroundTruthTrack>& mined,
                              const std::vector<GroundTruthTrack>& gt_tracks);

/// Average ranks, 1-based.
std::vector<double> midranks(std::span<const double> values);
double spearman(std::span<const double> x, std::span<const double> y);
/// P(a < b) + P(a == b) / 2 for a from A and b from B.
double auroc(std::span<const double> a, std::span<const double> b);
/// Linear interpolation between order statistics.
double quantile(std::vector<double> values, double q);

struct DistributionSummary {
  std::string name;
  std::size_t n = 0;
  double mean = 0.0;
  double std = 0.0;
  std::map<std::string, double> quantiles;  // "q05".."q95"
  std::vector<std::size_t> histogram;
};

struct PairAuroc {
  std::string a;
  std::string b;
  double auroc = 0.0;
};

struct DistributionReport {
  std::vector<double> bin_edges;
  std::vector<DistributionSummary> sets;
  std::vector<PairAuroc> pairs;  // every ordered pair
};

/// Histogram bin width by Freedman-Diaconis on the pooled values.
DistributionReport distribution_report(const std::vector<std::pair<std::string, std::vector<double>>>& sets);

struct TrackRareness {
  std::string track_id;
  std::size_t frames = 0;
  double mean_log_prob = 0.0;
  double rareness = 0.0;  // -mean_log_prob
};

/// Averages per-frame log-probabilities by track; rarest first, ties by id.
std::vector<TrackRareness> rank_tracks(const std::vector<std::pair<std::string, double>>& per_frame_log_prob);

Json to_json(const PercentileBinReport& r);
Json to_json(const CompositionReport& r);
Json to_json(const DistributionReport& r);
Json to_json(const std::vector<TrackRareness>& r);

std::string recall_csv(const PercentileBinReport& r);
std::string composition_csv(const std::vector<CompositionReport>& r);
std::string distribution_csv(const DistributionReport& r);

}  // namespace rem
