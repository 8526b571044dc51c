#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <string>
#include <variant>
#include <vector>

#include "rem/io.hpp"
#include "rem/nn.hpp"

namespace rem {

/// log N(z; 0, I) = -(k/2) ln(2 pi) - |z|^2 / 2
double base_log_prob(const Eigen::VectorXd& z);

/// Real-NVP style affine coupling. One half of the coordinates conditions
/// a scale and shift applied to the other half. In the sampling direction
///   x_T = z_T * exp(s) + t,  s = 2 tanh(scale_net(z_C)),  t = shift_net(z_C).
/// Parity 0 conditions on [0, k/2) and transforms [k/2, k); parity 1 swaps.
struct AffineCoupling {
  int dim = 0;
  int parity = 0;
  nn::MlpParams scale_net;
  nn::MlpParams shift_net;

  std::vector<int> conditioner_dims() const;
  std::vector<int> transformed_dims() const;
};

/// Continuous-time bijector: dh/dt = f([h; t]) integrated over t in [0, 1]
/// with `steps` fixed RK4 steps. Sampling runs 0 -> 1; density evaluation
/// runs 1 -> 0 while integrating the exact Jacobian trace of f.
struct ContinuousBlock {
  int dim = 0;
  int steps = 16;
  nn::MlpParams dynamics;  // (dim + 1) -> dim, time is the last input
};

using Bijector = std::variant<AffineCoupling, ContinuousBlock>;

int bijector_dim(const Bijector& b);

struct InverseResult {
  Eigen::MatrixXd z;          // rows are samples
  Eigen::VectorXd log_det;    // log |det dz/dx| per sample
};

/// Density direction x -> z. Throws NumericalError on non-finite state.
InverseResult inverse_and_log_det(const Bijector& b, const Eigen::MatrixXd& x);
/// Sampling direction z -> x.
Eigen::MatrixXd forward(const Bijector& b, const Eigen::MatrixXd& z);

struct FlowConfig {
  std::string variant = "continuous";  // "continuous" or "affine_coupling"
  int blocks = 4;
  std::vector<int> hidden = {64, 64, 64, 64};
  int integration_steps = 16;
  int epochs = 100;
  int batch_size = 256;
  nn::AdamConfig adam;
  double clip_norm = 0.0;  // <= 0 disables max-norm clipping
  std::uint64_t seed = 0;
};

void validate_flow_config(const FlowConfig& config);
Json flow_config_to_json(const FlowConfig& config);
/// Missing keys keep their defaults.
FlowConfig flow_config_from_json(const Json& j);

/// Bijector stack over a spherical unit Gaussian base. The sampling map is
/// stack[n-1] o ... o stack[0]; densities invert it back to front.
struct FlowModel {
  int dim = 0;
  std::vector<Bijector> stack;
  FlowConfig config;
  std::vector<double> history;  // mean training NLL per epoch
  std::string pca_reference;

  std::size_t parameter_count() const;
  Eigen::VectorXd parameters() const;
  void set_parameters(const Eigen::VectorXd& flat);
};

/// Fresh model with Glorot-initialized networks seeded from config.seed.
FlowModel make_flow(int dim, const FlowConfig& config);

/// Rows are samples; returns one log-density per row.
Eigen::VectorXd log_prob(const FlowModel& m, const Eigen::MatrixXd& x);
double log_prob(const FlowModel& m, const Eigen::VectorXd& x);

/// -log_prob
double rareness_data(const FlowModel& m, const Eigen::VectorXd& x);
Eigen::VectorXd rareness_data(const FlowModel& m, const Eigen::MatrixXd& x);

/// n x dim matrix of draws pushed through the sampling map.
Eigen::MatrixXd sample(const FlowModel& m, int n, std::uint64_t seed);

struct NllGradient {
  double mean_nll = 0.0;
  Eigen::VectorXd gradient;  // d mean_nll / d parameters(), flattened
};

/// Mean negative log-likelihood of the rows and its exact gradient
/// (reverse accumulation through couplings and the unrolled integrator).
NllGradient nll_gradient(const FlowModel& m, const Eigen::MatrixXd& batch);
double mean_nll(const FlowModel& m, const Eigen::MatrixXd& x);

/// Called after every epoch with (epoch index, mean NLL).
using EpochObserver = std::function<void(int, double)>;

/// Minibatch maximum likelihood with Adam. Deterministic given config.seed.
/// Throws ValidationError when the dataset is smaller than one batch and
/// NumericalError for zero-spread data or a non-finite loss.
FlowModel train_flow(const Eigen::MatrixXd& data, const FlowConfig& config, const EpochObserver& observer = {});

Json flow_to_json(const FlowModel& m);
FlowModel flow_from_json(const Json& j);

}  // namespace rem
