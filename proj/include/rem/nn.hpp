#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "rem/io.hpp"

namespace rem::nn {

struct Layer {
  Eigen::MatrixXd weight;  // out x in
  Eigen::VectorXd bias;    // out
};

/// Fully connected net: affine + tanh on every hidden layer, plain affine
/// output layer. Samples are columns throughout.
struct MlpParams {
  std::vector<Layer> layers;

  int input_dim() const { return layers.empty() ? 0 : static_cast<int>(layers.front().weight.cols()); }
  int output_dim() const { return layers.empty() ? 0 : static_cast<int>(layers.back().weight.rows()); }
  std::size_t parameter_count() const;
  void set_zero();
  bool all_finite() const;
};

/// Zero-filled net with the given widths.
MlpParams make_mlp(int input_dim, const std::vector<int>& hidden, int output_dim);
MlpParams zeros_like(const MlpParams& p);

/// Weights uniform in +-sqrt(6 / (fan_in + fan_out)), biases zero.
void glorot_init(MlpParams& p, std::mt19937_64& rng);

/// Flattening order: per layer, weight in column-major order, then bias.
void pack(const MlpParams& p, double* out);
void unpack(const double* in, MlpParams& p);
Eigen::VectorXd flatten(const MlpParams& p);

struct MlpTape {
  std::vector<Eigen::MatrixXd> activations;  // [0] input, [l] tanh output of hidden layer l
};

Eigen::MatrixXd mlp_forward(const MlpParams& p, const Eigen::MatrixXd& input, MlpTape* tape = nullptr);
Eigen::VectorXd mlp_forward(const MlpParams& p, const Eigen::VectorXd& input);

/// Reverse accumulation through a recorded forward pass. Parameter
/// gradients are added into `grads`; returns the gradient w.r.t. the input.
Eigen::MatrixXd mlp_backward(const MlpParams& p, const MlpTape& tape, const Eigen::MatrixXd& grad_output,
                             MlpParams& grads);

/// Scalar loss of the network output: returns the loss and writes
/// d loss / d output.
using OutputLoss = std::function<double(const Eigen::VectorXd& output, Eigen::VectorXd& grad_output)>;

/// Exact gradient of loss(mlp_forward(p, input)) w.r.t. every parameter.
MlpParams mlp_gradient(const MlpParams& p, const Eigen::VectorXd& input, const OutputLoss& loss,
                       double* loss_value = nullptr);

/// Forward pass plus the trace of d output / d input restricted to the first
/// `trace_dims` inputs (which must equal the output width). The Jacobian
/// columns are carried forward exactly, one tangent per direction.
struct TraceTape {
  MlpTape base;
  std::vector<Eigen::MatrixXd> tangents;  // [l] pre-activation tangents, n_l x (dims * batch), block per direction
  int dims = 0;
};

Eigen::MatrixXd mlp_forward_with_trace(const MlpParams& p, const Eigen::MatrixXd& input, int trace_dims,
                                       Eigen::RowVectorXd& trace, TraceTape* tape = nullptr);

/// Reverse pass for outputs and trace together.
Eigen::MatrixXd mlp_backward_with_trace(const MlpParams& p, const TraceTape& tape,
                                        const Eigen::MatrixXd& grad_output, const Eigen::RowVectorXd& grad_trace,
                                        MlpParams& grads);

struct AdamConfig {
  double base_lr = 1e-4;
  double decay_rate = 0.98;
  long decay_every = 2400;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  AdamConfig config;
  long step = 0;
  Eigen::VectorXd first_moment;
  Eigen::VectorXd second_moment;

  /// base_lr * decay_rate^floor(step / decay_every)
  double effective_lr() const;
};

AdamState make_adam(const AdamConfig& config, std::size_t parameter_count);

/// Bias-corrected Adam update in place; throws NumericalError on a
/// non-finite gradient entry (parameters untouched).
void adam_step(AdamState& state, Eigen::Ref<Eigen::VectorXd> params, const Eigen::VectorXd& grads);
void adam_step(AdamState& state, MlpParams& params, const MlpParams& grads);

Json mlp_to_json(const MlpParams& p);
MlpParams mlp_from_json(const Json& j);

}  // namespace rem::nn
