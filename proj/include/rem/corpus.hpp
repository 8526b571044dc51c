#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "rem/geometry.hpp"

namespace rem {

/// One predicted 3D box from one ensemble member.
struct DetectionRecord {
  std::string detection_id;
  std::string segment_id;
  int frame_index = 0;
  std::string track_hypothesis_id;
  Box3D box;
  double score = 0.0;   // in [0, 1]
  int point_count = 0;  // LiDAR points inside the box
  double range_m = 0.0; // BEV distance of the box center from the sensor at (0, 0)
  int model_id = 0;     // ensemble member; model 0 is the main detector
};

struct GroundTruthTrack {
  std::string track_id;
  std::string segment_id;
  std::map<int, Box3D> boxes;  // frame_index -> box
  std::string attribute_tag;
};

/// One mixture component of the synthetic object population. Each object
/// draws a latent attribute vector from a per-dimension normal truncated to
/// +-kAttributeTruncation standard deviations. The first three latent
/// dimensions are the box length, width and height in meters.
struct ObjectType {
  std::string name;
  double prevalence = 0.0;
  std::vector<double> signature;  // per channel; empty means derived from the seed
  std::vector<double> attribute_mean;
  std::vector<double> attribute_std;
  double unfamiliarity = 0.0;  // ensemble disagreement on this type, in [0, 1]
  double range_min_m = -1.0;   // negative: use the corpus-wide placement range
  double range_max_m = -1.0;
};

inline constexpr double kAttributeTruncation = 2.5;

struct DetectorSimConfig {
  int ensemble_size = 5;
  double center_jitter_m = 0.1;
  double size_jitter_fraction = 0.03;
  double heading_jitter_rad = 0.02;
  double base_score = 0.9;
  double score_spread = 0.05;
  double hard_score_drop = 0.3;
  double hard_score_spread = 0.25;
  double rare_score_drop = 0.2;
  double rare_score_spread = 0.3;
  double miss_below = 0.1;
  double false_positives_per_frame = 0.3;
  double hard_points_reference = 300.0;  // hardness = 1 - min(1, points / reference)
};

struct AutoLabelConfig {
  double center_sigma_m = 0.2;
  double size_jitter_fraction = 0.05;
  double drop_probability = 0.05;
};

struct CorpusSpec {
  int segment_count = 1;
  int frames_per_segment = 1;
  int objects_per_segment = 1;
  std::vector<ObjectType> object_type_mixture;
  double feature_map_resolution = 1.0;  // cells per meter
  double map_half_extent_m = 50.0;      // map covers [-e, e] x [-e, e]
  int channels = 12;
  double noise_scale = 0.02;
  // Extra per-object noise for sparse objects:
  // sigma = noise_scale * (1 + sparsity_noise_gain * hardness).
  double sparsity_noise_gain = 0.0;
  double min_range_m = 5.0;
  double max_range_m = 70.0;
  double max_speed_m_per_frame = 1.0;
  double points_per_m2 = 40.0;          // at the reference range
  double points_reference_range_m = 20.0;
  DetectorSimConfig detector;
  AutoLabelConfig autolabel;
  std::uint64_t seed = 0;
  // Seeds the simulated feature extractor; defaults to seed. Corpora that
  // share it (and the type mixture) share one embedding space.
  std::optional<std::uint64_t> feature_seed;
};

/// Throws ValidationError for prevalences not summing to 1 (+-1e-9), zero
/// segments, inconsistent latent dimensions or unpoolable object sizes.
void validate_corpus_spec(const CorpusSpec& spec);

struct GridGeometry {
  double origin_x = 0.0;  // minimum corner
  double origin_y = 0.0;
  double cell_size = 1.0;  // meters
  int rows = 0;            // along y
  int cols = 0;            // along x

  double cell_center_x(int col) const { return origin_x + (col + 0.5) * cell_size; }
  double cell_center_y(int row) const { return origin_y + (row + 0.5) * cell_size; }
};

/// Row-major rows x cols x channels BEV feature grid.
struct FeatureMap {
  GridGeometry geometry;
  int channels = 0;
  std::vector<float> values;

  FeatureMap() = default;
  FeatureMap(GridGeometry g, int c)
      : geometry(g), channels(c),
        values(static_cast<std::size_t>(g.rows) * g.cols * c, 0.0f) {}

  float* cell(int row, int col) {
    return values.data() + (static_cast<std::size_t>(row) * geometry.cols + col) * channels;
  }
  const float* cell(int row, int col) const {
    return values.data() + (static_cast<std::size_t>(row) * geometry.cols + col) * channels;
  }
};

struct Segment {
  std::string segment_id;
  std::vector<FeatureMap> frames;
};

/// Ground-truth object in one frame, with its generative bookkeeping.
struct ObjectInstance {
  std::string track_id;
  std::string segment_id;
  int frame_index = 0;
  std::size_t type_index = 0;
  std::vector<double> attributes;
  double density = 0.0;  // exact mixture density of the latent draw
  Box3D box;
  int point_count = 0;
  double range_m = 0.0;
  double hardness = 0.0;
};

struct Corpus {
  CorpusSpec spec;
  GridGeometry geometry;
  std::vector<Segment> segments;
  std::vector<GroundTruthTrack> gt_tracks;
  std::vector<ObjectInstance> objects;
  std::vector<DetectionRecord> detections;  // all ensemble members
  std::map<std::string, double> truth_density;  // true-positive detection_id -> density

  const FeatureMap& feature_map(const std::string& segment_id, int frame_index) const;
  void index_segments();

 private:
  std::unordered_map<std::string, std::size_t> segment_index_;
};

/// Mixture density of a latent attribute vector. Dimensions whose std is
/// zero act as point masses and contribute a factor of 1 when matched.
double mixture_density(const CorpusSpec& spec, const std::vector<double>& attributes);

/// Deterministic given spec.seed.
Corpus generate_corpus(const CorpusSpec& spec);

/// Stable key for an object instance: "<track_id>@<frame>".
std::string instance_key(const std::string& track_id, int frame_index);

}  // namespace rem
