#pragma once

#include <Eigen/Dense>
#include <filesystem>
#include <string>
#include <vector>

#include "rem/corpus.hpp"
#include "rem/io.hpp"

namespace rem {

/// Centering, projection onto the top-k principal directions, and
/// per-dimension scaling of the projected data to unit spread.
struct PcaTransform {
  Eigen::VectorXd mean;        // d
  Eigen::MatrixXd components;  // k x d, orthonormal rows, descending variance
  Eigen::VectorXd post_std;    // k, population std of the projected training rows

  int input_dim() const { return static_cast<int>(mean.size()); }
  int output_dim() const { return static_cast<int>(components.rows()); }
};

struct EmbeddingRecord {
  std::string detection_id;
  Eigen::VectorXd x_roi;
  Eigen::VectorXd x_norm;
};

/// A box to pool, addressed by segment and frame.
struct PoolTarget {
  std::string id;
  std::string segment_id;
  int frame_index = 0;
  Box3D box;
};

/// Channelwise max over the cells whose centers lie inside the box's BEV
/// footprint. Throws ValidationError when no cell center is inside.
Eigen::VectorXd roi_max_pool(const FeatureMap& map, const Box3D& box);

/// Rows are samples. Requires n >= 2 and k <= min(n - 1, d); throws
/// NumericalError when a retained direction has (near) zero spread.
PcaTransform fit_pca(const Eigen::MatrixXd& x_roi, int k);

Eigen::VectorXd apply_embedding(const PcaTransform& t, const Eigen::VectorXd& x_roi);
/// Row-wise version of the above.
Eigen::MatrixXd apply_embedding(const PcaTransform& t, const Eigen::MatrixXd& x_roi);

std::vector<PoolTarget> detection_targets(const std::vector<DetectionRecord>& detections);
/// One target per ground-truth box, id = instance_key(track_id, frame).
std::vector<PoolTarget> ground_truth_targets(const std::vector<GroundTruthTrack>& tracks);

/// Pools every target; rows follow the target order. Errors name the
/// offending target id.
Eigen::MatrixXd pool_targets(const Corpus& corpus, const std::vector<PoolTarget>& targets);

/// One record per target, order preserved.
std::vector<EmbeddingRecord> build_flow_dataset(const Corpus& corpus,
                                                const std::vector<PoolTarget>& targets,
                                                const PcaTransform& t);

Json pca_to_json(const PcaTransform& t);
PcaTransform pca_from_json(const Json& j);

/// embeddings.csv: header "detection_id,e0,...,e{k-1}".
void write_embeddings_csv(const std::filesystem::path& path, const std::vector<EmbeddingRecord>& records);
std::vector<EmbeddingRecord> read_embeddings_csv(const std::filesystem::path& path);

/// Stacks x_norm rows into an n x k matrix.
Eigen::MatrixXd embedding_matrix(const std::vector<EmbeddingRecord>& records);

}  // namespace rem
