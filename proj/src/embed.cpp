#include "rem/embed.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "rem/error.hpp"

namespace rem {

Eigen::VectorXd roi_max_pool(const FeatureMap& map, const Box3D& box) {
  const GridGeometry& g = map.geometry;
  const auto corners = bev_corners(box);
  double min_x = corners[0].x, max_x = corners[0].x, min_y = corners[0].y, max_y = corners[0].y;
  for (const Point2& p : corners) {
    min_x = std::min(min_x, p.x);
    max_x = std::max(max_x, p.x);
    min_y = std::min(min_y, p.y);
    max_y = std::max(max_y, p.y);
  }
  // cell centers sit at origin + (i + 0.5) * cell
  const int c0 = std::max(0, static_cast<int>(std::ceil((min_x - g.origin_x) / g.cell_size - 0.5)));
  const int c1 = std::min(g.cols - 1, static_cast<int>(std::floor((max_x - g.origin_x) / g.cell_size - 0.5)));
  const int r0 = std::max(0, static_cast<int>(std::ceil((min_y - g.origin_y) / g.cell_size - 0.5)));
  const int r1 = std::min(g.rows - 1, static_cast<int>(std::floor((max_y - g.origin_y) / g.cell_size - 0.5)));

  Eigen::VectorXd out = Eigen::VectorXd::Constant(map.channels, -std::numeric_limits<double>::infinity());
  bool any = false;
  for (int r = r0; r <= r1; ++r) {
    for (int c = c0; c <= c1; ++c) {
      if (!bev_contains(box, g.cell_center_x(c), g.cell_center_y(r))) continue;
      any = true;
      const float* v = map.cell(r, c);
      for (int ch = 0; ch < map.channels; ++ch) out[ch] = std::max(out[ch], static_cast<double>(v[ch]));
    }
  }
  if (!any) throw ValidationError("box footprint contains no feature-map cell center");
  return out;
}

PcaTransform fit_pca(const Eigen::MatrixXd& x_roi, int k) {
  const Eigen::Index n = x_roi.rows();
  const Eigen::Index d = x_roi.cols();
  if (n < 2) throw ValidationError("PCA needs at least two rows");
  if (k < 1 || k > std::min<Eigen::Index>(n - 1, d)) {
    throw ValidationError("PCA dimension k=" + std::to_string(k) + " must be in [1, min(n-1, d)]");
  }
  if (!x_roi.allFinite()) throw NumericalError("PCA input has non-finite entries");

  PcaTransform t;
  t.mean = x_roi.colwise().mean().transpose();
  const Eigen::MatrixXd centered = x_roi.rowwise() - t.mean.transpose();
  const Eigen::MatrixXd cov = (centered.transpose() * centered) / static_cast<double>(n - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  if (eig.info() != Eigen::Success) throw NumericalError("covariance eigendecomposition failed");

  t.components.resize(k, d);
  for (int i = 0; i < k; ++i) {
    Eigen::VectorXd v = eig.eigenvectors().col(d - 1 - i);  // eigenvalues ascend
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v[arg] < 0.0) v = -v;
    t.components.row(i) = v.transpose();
  }
  const Eigen::MatrixXd projected = centered * t.components.transpose();
  t.post_std = (projected.array().square().colwise().sum() / static_cast<double>(n)).sqrt().transpose();
  for (int i = 0; i < k; ++i) {
    if (!(t.post_std[i] >= 1e-12)) {
      throw NumericalError("zero-variance PCA direction " + std::to_string(i) +
                           " (degenerate or identical feature rows)");
    }
  }
  return t;
}

Eigen::VectorXd apply_embedding(const PcaTransform& t, const Eigen::VectorXd& x_roi) {
  if (x_roi.size() != t.mean.size()) {
    throw ValidationError("embedding input has dimension " + std::to_string(x_roi.size()) + ", expected " +
                          std::to_string(t.mean.size()));
  }
  return (t.components * (x_roi - t.mean)).cwiseQuotient(t.post_std);
}

Eigen::MatrixXd apply_embedding(const PcaTransform& t, const Eigen::MatrixXd& x_roi) {
  if (x_roi.cols() != t.mean.size()) throw ValidationError("embedding input dimension mismatch");
  Eigen::MatrixXd out = (x_roi.rowwise() - t.mean.transpose()) * t.components.transpose();
  return out.array().rowwise() / t.post_std.transpose().array();
}

std::vector<PoolTarget> detection_targets(const std::vector<DetectionRecord>& detections) {
  std::vector<PoolTarget> out;
  out.reserve(detections.size());
  for (const DetectionRecord& d : detections) out.push_back({d.detection_id, d.segment_id, d.frame_index, d.box});
  return out;
}

std::vector<PoolTarget> ground_truth_targets(const std::vector<GroundTruthTrack>& tracks) {
  std::vector<PoolTarget> out;
  for (const GroundTruthTrack& t : tracks) {
    for (const auto& [frame, box] : t.boxes) out.push_back({instance_key(t.track_id, frame), t.segment_id, frame, box});
  }
  return out;
}

Eigen::MatrixXd pool_targets(const Corpus& corpus, const std::vector<PoolTarget>& targets) {
  const int channels = corpus.segments.empty() || corpus.segments.front().frames.empty()
                           ? corpus.spec.channels
                           : corpus.segments.front().frames.front().channels;
  Eigen::MatrixXd out(static_cast<Eigen::Index>(targets.size()), channels);
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const PoolTarget& t = targets[i];
    try {
      out.row(static_cast<Eigen::Index>(i)) =
          roi_max_pool(corpus.feature_map(t.segment_id, t.frame_index), t.box).transpose();
    } catch (const ValidationError& e) {
      throw ValidationError("cannot pool '" + t.id + "': " + e.what());
    }
  }
  return out;
}

std::vector<EmbeddingRecord> build_flow_dataset(const Corpus& corpus,
                                                const std::vector<PoolTarget>& targets,
                                                const PcaTransform& t) {
  std::vector<EmbeddingRecord> out;
  if (targets.empty()) return out;
  const Eigen::MatrixXd roi = pool_targets(corpus, targets);
  const Eigen::MatrixXd norm = apply_embedding(t, roi);
  out.reserve(targets.size());
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    EmbeddingRecord r{targets[i].id, roi.row(row).transpose(), norm.row(row).transpose()};
    if (!r.x_norm.allFinite()) throw NumericalError("non-finite embedding for '" + r.detection_id + "'");
    out.push_back(std::move(r));
  }
  return out;
}

namespace {

std::vector<double> to_vector(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

}  // namespace

Json pca_to_json(const PcaTransform& t) {
  Json components = Json::array();
  for (Eigen::Index i = 0; i < t.components.rows(); ++i) {
    components.push_back(to_vector(t.components.row(i).transpose()));
  }
  return Json{{"d", t.input_dim()},
              {"k", t.output_dim()},
              {"mean", to_vector(t.mean)},
              {"components", components},
              {"post_std", to_vector(t.post_std)}};
}

PcaTransform pca_from_json(const Json& j) {
  try {
    const int d = j.at("d").get<int>();
    const int k = j.at("k").get<int>();
    const auto mean = j.at("mean").get<std::vector<double>>();
    const auto comps = j.at("components").get<std::vector<std::vector<double>>>();
    const auto post = j.at("post_std").get<std::vector<double>>();
    if (static_cast<int>(mean.size()) != d || static_cast<int>(comps.size()) != k ||
        static_cast<int>(post.size()) != k) {
      throw ValidationError("pca.json dimensions disagree with d/k");
    }
    PcaTransform t;
    t.mean = Eigen::Map<const Eigen::VectorXd>(mean.data(), d);
    t.post_std = Eigen::Map<const Eigen::VectorXd>(post.data(), k);
    t.components.resize(k, d);
    for (int i = 0; i < k; ++i) {
      if (static_cast<int>(comps[i].size()) != d) throw ValidationError("pca.json component row has wrong length");
      for (int c = 0; c < d; ++c) t.components(i, c) = comps[i][c];
    }
    if ((t.post_std.array() <= 0.0).any()) throw ValidationError("pca.json post_std must be positive");
    return t;
  } catch (const Json::exception& e) {
    throw ValidationError(std::string("malformed pca.json: ") + e.what());
  }
}

void write_embeddings_csv(const std::filesystem::path& path, const std::vector<EmbeddingRecord>& records) {
  const Eigen::Index k = records.empty() ? 0 : records.front().x_norm.size();
  std::string text = "detection_id";
  for (Eigen::Index i = 0; i < k; ++i) text += ",e" + std::to_string(i);
  text += '\n';
  for (const EmbeddingRecord& r : records) {
    text += r.detection_id;
    for (Eigen::Index i = 0; i < k; ++i) text += "," + format_double(r.x_norm[i]);
    text += '\n';
  }
  write_text_file(path, text);
}

std::vector<EmbeddingRecord> read_embeddings_csv(const std::filesystem::path& path) {
  std::istringstream in(read_text_file(path));
  std::string line;
  if (!std::getline(in, line) || line.rfind("detection_id", 0) != 0) {
    throw ValidationError("'" + path.string() + "' lacks the detection_id header");
  }
  const auto k = static_cast<Eigen::Index>(std::count(line.begin(), line.end(), ','));
  std::vector<EmbeddingRecord> out;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string cell;
    EmbeddingRecord r;
    std::getline(row, r.detection_id, ',');
    r.x_norm.resize(k);
    Eigen::Index i = 0;
    while (std::getline(row, cell, ',')) {
      if (i >= k) break;
      try {
        r.x_norm[i++] = std::stod(cell);
      } catch (const std::exception&) {
        throw ValidationError(path.string() + ":" + std::to_string(line_no) + ": bad number '" + cell + "'");
      }
    }
    if (i != k) throw ValidationError(path.string() + ":" + std::to_string(line_no) + ": wrong column count");
    out.push_back(std::move(r));
  }
  return out;
}

Eigen::MatrixXd embedding_matrix(const std::vector<EmbeddingRecord>& records) {
  const Eigen::Index k = records.empty() ? 0 : records.front().x_norm.size();
  Eigen::MatrixXd out(static_cast<Eigen::Index>(records.size()), k);
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i].x_norm.size() != k) throw ValidationError("embedding records have mixed dimensions");
    out.row(static_cast<Eigen::Index>(i)) = records[i].x_norm.transpose();
  }
  return out;
}

}  // namespace rem
