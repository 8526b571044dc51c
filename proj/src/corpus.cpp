#include "rem/corpus.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>

#include "rem/error.hpp"

namespace rem {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

std::string format_id(const char* fmt, int a, int b = 0, int c = 0, int d = 0) {
  char buf[96];
  std::snprintf(buf, sizeof(buf), fmt, a, b, c, d);
  return buf;
}

double standard_normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

double truncated_normal_pdf(double x, double mean, double sd) {
  const double z = (x - mean) / sd;
  if (std::abs(z) > kAttributeTruncation) return 0.0;
  const double mass =
      standard_normal_cdf(kAttributeTruncation) - standard_normal_cdf(-kAttributeTruncation);
  return std::exp(-0.5 * z * z) / (sd * std::sqrt(2.0 * std::numbers::pi) * mass);
}

double truncated_normal_draw(std::mt19937_64& rng, double mean, double sd) {
  if (sd == 0.0) return mean;
  std::normal_distribution<double> normal(0.0, 1.0);
  for (;;) {
    const double z = normal(rng);
    if (std::abs(z) <= kAttributeTruncation) return mean + sd * z;
  }
}

std::size_t dominant_type(const CorpusSpec& spec) {
  std::size_t best = 0;
  for (std::size_t t = 1; t < spec.object_type_mixture.size(); ++t) {
    if (spec.object_type_mixture[t].prevalence > spec.object_type_mixture[best].prevalence) {
      best = t;
    }
  }
  return best;
}

// Latent attributes reach the feature map through a fixed orthonormal
// encoding, after standardizing by the dominant type's statistics.
struct FeatureEncoder {
  Eigen::MatrixXd encoding;  // channels x latent_dim, orthonormal columns
  Eigen::VectorXd center;
  Eigen::VectorXd scale;
  Eigen::VectorXd floor;  // keeps object cells above the background under max pooling
  std::vector<Eigen::VectorXd> signatures;  // per type, length channels

  Eigen::VectorXd encode(std::size_t type, const std::vector<double>& attributes) const {
    Eigen::VectorXd a = Eigen::Map<const Eigen::VectorXd>(attributes.data(),
                                                          static_cast<Eigen::Index>(attributes.size()));
    return floor + signatures[type] + encoding * ((a - center).cwiseQuotient(scale));
  }
};

FeatureEncoder make_encoder(const CorpusSpec& spec) {
  const int m = static_cast<int>(spec.object_type_mixture.front().attribute_mean.size());
  const int c = spec.channels;
  std::mt19937_64 rng(splitmix64(spec.feature_seed.value_or(spec.seed) ^ 0xE1C0DEull));
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd raw(c, m);
  for (int j = 0; j < m; ++j)
    for (int i = 0; i < c; ++i) raw(i, j) = normal(rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(raw);
  FeatureEncoder enc;
  enc.encoding = qr.householderQ() * Eigen::MatrixXd::Identity(c, m);
  const ObjectType& ref = spec.object_type_mixture[dominant_type(spec)];
  enc.center = Eigen::Map<const Eigen::VectorXd>(ref.attribute_mean.data(), m);
  enc.scale.resize(m);
  for (int j = 0; j < m; ++j) enc.scale[j] = ref.attribute_std[j] > 0.0 ? ref.attribute_std[j] : 1.0;
  for (const ObjectType& t : spec.object_type_mixture) {
    if (!t.signature.empty()) {
      enc.signatures.push_back(Eigen::Map<const Eigen::VectorXd>(t.signature.data(), c));
    } else {
      Eigen::VectorXd g(m);
      for (int j = 0; j < m; ++j) g[j] = normal(rng);
      enc.signatures.push_back(enc.encoding * g);
    }
  }
  // lowest reachable value per channel over every type's truncated support
  Eigen::VectorXd lowest = Eigen::VectorXd::Constant(c, 0.0);
  for (std::size_t t = 0; t < spec.object_type_mixture.size(); ++t) {
    const ObjectType& type = spec.object_type_mixture[t];
    for (int ch = 0; ch < c; ++ch) {
      double v = enc.signatures[t][ch];
      for (int j = 0; j < m; ++j) {
        const double lo = (type.attribute_mean[j] - kAttributeTruncation * type.attribute_std[j] - enc.center[j]) / enc.scale[j];
        const double hi = (type.attribute_mean[j] + kAttributeTruncation * type.attribute_std[j] - enc.center[j]) / enc.scale[j];
        v += std::min(enc.encoding(ch, j) * lo, enc.encoding(ch, j) * hi);
      }
      lowest[ch] = std::min(lowest[ch], v);
    }
  }
  enc.floor = (-lowest).array() + 1.0;
  return enc;
}

struct PlacedTrack {
  std::size_t type_index = 0;
  std::vector<double> attributes;
  double visibility = 1.0;
  std::vector<Box3D> boxes;  // one per frame
};

int point_count_for(const CorpusSpec& spec, const Box3D& box, double range, double visibility) {
  const double falloff = spec.points_reference_range_m / std::max(range, 1.0);
  return static_cast<int>(std::lround(spec.points_per_m2 * box.length * box.width * falloff * visibility));
}

double bev_range(const Box3D& box) { return std::hypot(box.center_x, box.center_y); }

}  // namespace

void validate_corpus_spec(const CorpusSpec& spec) {
  if (spec.segment_count <= 0) throw ValidationError("corpus needs at least one segment");
  if (spec.frames_per_segment <= 0) throw ValidationError("frames_per_segment must be positive");
  if (spec.objects_per_segment < 0) throw ValidationError("objects_per_segment must be nonnegative");
  if (spec.object_type_mixture.empty()) throw ValidationError("object_type_mixture is empty");
  if (!(spec.feature_map_resolution > 0.0)) throw ValidationError("feature_map_resolution must be positive");
  if (!(spec.map_half_extent_m > 0.0)) throw ValidationError("map_half_extent_m must be positive");
  if (!(spec.noise_scale >= 0.0)) throw ValidationError("noise_scale must be nonnegative");
  if (spec.detector.ensemble_size < 1) throw ValidationError("ensemble_size must be positive");
  double total = 0.0;
  const std::size_t m = spec.object_type_mixture.front().attribute_mean.size();
  if (m < 3) throw ValidationError("latent attributes need at least length, width, height");
  if (static_cast<std::size_t>(spec.channels) < m) {
    throw ValidationError("channels must be at least the latent attribute dimension");
  }
  // any rotated rectangle with both sides >= sqrt(2) cells holds a cell center
  const double min_side = std::numbers::sqrt2 / spec.feature_map_resolution;
  for (const ObjectType& t : spec.object_type_mixture) {
    if (!(t.prevalence >= 0.0 && t.prevalence <= 1.0)) {
      throw ValidationError("prevalence of '" + t.name + "' outside [0, 1]");
    }
    total += t.prevalence;
    if (t.attribute_mean.size() != m || t.attribute_std.size() != m) {
      throw ValidationError("type '" + t.name + "' has inconsistent latent dimension");
    }
    if (!t.signature.empty() && t.signature.size() != static_cast<std::size_t>(spec.channels)) {
      throw ValidationError("signature of '" + t.name + "' does not match channel count");
    }
    for (std::size_t j = 0; j < m; ++j) {
      if (!(t.attribute_std[j] >= 0.0)) throw ValidationError("negative attribute std");
    }
    for (std::size_t j = 0; j < 3; ++j) {
      const double lo = t.attribute_mean[j] - kAttributeTruncation * t.attribute_std[j];
      if (lo <= 0.0) throw ValidationError("type '" + t.name + "' can draw a nonpositive box extent");
      if (j < 2 && lo < min_side) {
        throw ValidationError("type '" + t.name + "' can draw boxes too small to pool at this resolution");
      }
    }
  }
  if (std::abs(total - 1.0) > 1e-9) throw ValidationError("mixture prevalences must sum to 1");
}

std::string instance_key(const std::string& track_id, int frame_index) {
  return track_id + "@" + std::to_string(frame_index);
}

double mixture_density(const CorpusSpec& spec, const std::vector<double>& attributes) {
  double density = 0.0;
  for (const ObjectType& t : spec.object_type_mixture) {
    double component = t.prevalence;
    for (std::size_t j = 0; j < attributes.size() && component > 0.0; ++j) {
      if (t.attribute_std[j] == 0.0) {
        if (attributes[j] != t.attribute_mean[j]) component = 0.0;
      } else {
        component *= truncated_normal_pdf(attributes[j], t.attribute_mean[j], t.attribute_std[j]);
      }
    }
    density += component;
  }
  return density;
}

const FeatureMap& Corpus::feature_map(const std::string& segment_id, int frame_index) const {
  auto it = segment_index_.find(segment_id);
  if (it == segment_index_.end()) throw ValidationError("unknown segment '" + segment_id + "'");
  const Segment& seg = segments[it->second];
  if (frame_index < 0 || frame_index >= static_cast<int>(seg.frames.size())) {
    throw ValidationError("frame " + std::to_string(frame_index) + " out of range for " + segment_id);
  }
  return seg.frames[frame_index];
}

void Corpus::index_segments() {
  segment_index_.clear();
  for (std::size_t i = 0; i < segments.size(); ++i) segment_index_[segments[i].segment_id] = i;
}

Corpus generate_corpus(const CorpusSpec& spec) {
  validate_corpus_spec(spec);
  Corpus corpus;
  corpus.spec = spec;
  const double cell = 1.0 / spec.feature_map_resolution;
  const int side = static_cast<int>(std::ceil(2.0 * spec.map_half_extent_m * spec.feature_map_resolution));
  corpus.geometry = {-spec.map_half_extent_m, -spec.map_half_extent_m, cell, side, side};
  const GridGeometry& grid = corpus.geometry;
  const FeatureEncoder encoder = make_encoder(spec);
  const DetectorSimConfig& det = spec.detector;

  std::vector<double> prevalences;
  for (const ObjectType& t : spec.object_type_mixture) prevalences.push_back(t.prevalence);

  for (int s = 0; s < spec.segment_count; ++s) {
    std::mt19937_64 rng(splitmix64(spec.seed * 0x100000001B3ull + static_cast<std::uint64_t>(s)));
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::discrete_distribution<std::size_t> pick_type(prevalences.begin(), prevalences.end());

    Segment segment;
    segment.segment_id = format_id("seg-%04d", s);
    const std::string& seg_id = segment.segment_id;

    // place tracks without footprint overlap in any frame
    std::vector<PlacedTrack> tracks;
    for (int o = 0; o < spec.objects_per_segment; ++o) {
      PlacedTrack track;
      track.type_index = pick_type(rng);
      const ObjectType& type = spec.object_type_mixture[track.type_index];
      for (std::size_t j = 0; j < type.attribute_mean.size(); ++j) {
        track.attributes.push_back(truncated_normal_draw(rng, type.attribute_mean[j], type.attribute_std[j]));
      }
      track.visibility = 0.3 + 0.7 * unit(rng);
      const double r_lo = type.range_min_m >= 0.0 ? type.range_min_m : spec.min_range_m;
      const double r_hi = type.range_max_m >= 0.0 ? type.range_max_m : spec.max_range_m;
      const double half_diag = 0.5 * std::hypot(track.attributes[0], track.attributes[1]);
      const double limit = spec.map_half_extent_m - half_diag;
      bool placed = false;
      for (int attempt = 0; attempt < 500 && !placed; ++attempt) {
        const double range = r_lo + (r_hi - r_lo) * unit(rng);
        const double bearing = std::numbers::pi * (2.0 * unit(rng) - 1.0);
        const double heading = normalize_heading(std::numbers::pi * (2.0 * unit(rng) - 1.0));
        const double speed = spec.max_speed_m_per_frame * unit(rng);
        track.boxes.clear();
        bool ok = true;
        for (int f = 0; f < spec.frames_per_segment && ok; ++f) {
          Box3D b;
          b.center_x = range * std::cos(bearing) + f * speed * std::cos(heading);
          b.center_y = range * std::sin(bearing) + f * speed * std::sin(heading);
          b.length = track.attributes[0];
          b.width = track.attributes[1];
          b.height = track.attributes[2];
          b.center_z = 0.5 * b.height;
          b.heading = heading;
          if (std::abs(b.center_x) > limit || std::abs(b.center_y) > limit) ok = false;
          if (std::hypot(b.center_x, b.center_y) < 1.0) ok = false;
          for (const PlacedTrack& other : tracks) {
            if (!ok) break;
            if (bev_iou(other.boxes[f], b) > 0.0) ok = false;
          }
          track.boxes.push_back(b);
        }
        placed = ok;
      }
      if (!placed) {
        throw ValidationError("could not place object " + std::to_string(o) + " in " + seg_id +
                              "; reduce objects_per_segment or enlarge the map");
      }
      tracks.push_back(std::move(track));
    }

    for (std::size_t t = 0; t < tracks.size(); ++t) {
      GroundTruthTrack gt;
      gt.track_id = seg_id + format_id("-t%03d", static_cast<int>(t));
      gt.segment_id = seg_id;
      gt.attribute_tag = spec.object_type_mixture[tracks[t].type_index].name;
      for (int f = 0; f < spec.frames_per_segment; ++f) gt.boxes[f] = tracks[t].boxes[f];
      corpus.gt_tracks.push_back(std::move(gt));
    }
    const std::size_t first_track = corpus.gt_tracks.size() - tracks.size();

    for (int f = 0; f < spec.frames_per_segment; ++f) {
      FeatureMap map(grid, spec.channels);
      for (float& v : map.values) v = static_cast<float>(spec.noise_scale * normal(rng));

      std::vector<std::size_t> frame_objects;
      for (std::size_t t = 0; t < tracks.size(); ++t) {
        const PlacedTrack& track = tracks[t];
        const Box3D& box = track.boxes[f];
        ObjectInstance inst;
        inst.track_id = corpus.gt_tracks[first_track + t].track_id;
        inst.segment_id = seg_id;
        inst.frame_index = f;
        inst.type_index = track.type_index;
        inst.attributes = track.attributes;
        inst.density = mixture_density(spec, track.attributes);
        inst.box = box;
        inst.range_m = bev_range(box);
        inst.point_count = point_count_for(spec, box, inst.range_m, track.visibility);
        inst.hardness = 1.0 - std::min(1.0, inst.point_count / det.hard_points_reference);

        const Eigen::VectorXd signal = encoder.encode(track.type_index, track.attributes);
        const double sigma = spec.noise_scale * (1.0 + spec.sparsity_noise_gain * inst.hardness);
        const auto corners = bev_corners(box);
        double min_x = corners[0].x, max_x = corners[0].x, min_y = corners[0].y, max_y = corners[0].y;
        for (const Point2& p : corners) {
          min_x = std::min(min_x, p.x);
          max_x = std::max(max_x, p.x);
          min_y = std::min(min_y, p.y);
          max_y = std::max(max_y, p.y);
        }
        const int c0 = std::max(0, static_cast<int>(std::floor((min_x - grid.origin_x) / cell)));
        const int c1 = std::min(grid.cols - 1, static_cast<int>(std::floor((max_x - grid.origin_x) / cell)));
        const int r0 = std::max(0, static_cast<int>(std::floor((min_y - grid.origin_y) / cell)));
        const int r1 = std::min(grid.rows - 1, static_cast<int>(std::floor((max_y - grid.origin_y) / cell)));
        for (int r = r0; r <= r1; ++r) {
          for (int c = c0; c <= c1; ++c) {
            if (!bev_contains(box, grid.cell_center_x(c), grid.cell_center_y(r))) continue;
            float* v = map.cell(r, c);
            for (int ch = 0; ch < spec.channels; ++ch) {
              v[ch] = static_cast<float>(signal[ch] + sigma * normal(rng));
            }
          }
        }
        frame_objects.push_back(corpus.objects.size());
        corpus.objects.push_back(std::move(inst));
      }
      segment.frames.push_back(std::move(map));

      // simulated detector ensemble
      std::poisson_distribution<int> fp_count(std::max(0.0, det.false_positives_per_frame));
      for (int model = 0; model < det.ensemble_size; ++model) {
        int index = 0;
        const auto next_id = [&] {
          return seg_id + format_id("-f%02d-m%d-d%03d", f, model, index++);
        };
        for (std::size_t oi : frame_objects) {
          const ObjectInstance& inst = corpus.objects[oi];
          const double unfamiliar = spec.object_type_mixture[inst.type_index].unfamiliarity;
          const double mean = det.base_score - det.hard_score_drop * inst.hardness -
                              det.rare_score_drop * unfamiliar;
          const double spread = det.score_spread + det.hard_score_spread * inst.hardness +
                                det.rare_score_spread * unfamiliar;
          const double raw = mean + spread * normal(rng);
          Box3D b = inst.box;
          b.center_x += det.center_jitter_m * normal(rng);
          b.center_y += det.center_jitter_m * normal(rng);
          b.length *= 1.0 + det.size_jitter_fraction * normal(rng);
          b.width *= 1.0 + det.size_jitter_fraction * normal(rng);
          b.height *= 1.0 + det.size_jitter_fraction * normal(rng);
          b.center_z = 0.5 * b.height;
          b.heading = normalize_heading(b.heading + det.heading_jitter_rad * normal(rng));
          if (raw < det.miss_below) continue;
          DetectionRecord d;
          d.detection_id = next_id();
          d.segment_id = seg_id;
          d.frame_index = f;
          d.track_hypothesis_id = inst.track_id;
          d.box = b;
          d.score = std::clamp(raw, 0.0, 1.0);
          d.point_count = inst.point_count;
          d.range_m = bev_range(b);
          d.model_id = model;
          corpus.truth_density[d.detection_id] = inst.density;
          corpus.detections.push_back(std::move(d));
        }
        const int fps = fp_count(rng);
        const ObjectType& common = spec.object_type_mixture[dominant_type(spec)];
        for (int k = 0; k < fps; ++k) {
          DetectionRecord d;
          d.detection_id = next_id();
          d.segment_id = seg_id;
          d.frame_index = f;
          d.track_hypothesis_id = d.detection_id + "-fp";
          const double range = spec.min_range_m + (spec.max_range_m - spec.min_range_m) * unit(rng);
          const double bearing = std::numbers::pi * (2.0 * unit(rng) - 1.0);
          d.box.length = common.attribute_mean[0];
          d.box.width = common.attribute_mean[1];
          d.box.height = common.attribute_mean[2];
          const double inner = spec.map_half_extent_m - 0.5 * std::hypot(d.box.length, d.box.width);
          d.box.center_x = std::clamp(range * std::cos(bearing), -inner, inner);
          d.box.center_y = std::clamp(range * std::sin(bearing), -inner, inner);
          d.box.center_z = 0.5 * d.box.height;
          d.box.heading = normalize_heading(std::numbers::pi * (2.0 * unit(rng) - 1.0));
          d.score = det.miss_below + (0.4 - det.miss_below) * unit(rng);
          d.point_count = static_cast<int>(50.0 * unit(rng));
          d.range_m = bev_range(d.box);
          d.model_id = model;
          corpus.detections.push_back(std::move(d));
        }
      }
    }
    corpus.segments.push_back(std::move(segment));
  }
  corpus.index_segments();
  return corpus;
}

}  // namespace rem
