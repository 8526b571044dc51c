#include "rem/nn.hpp"

#include <algorithm>
#include <cmath>

#include "rem/error.hpp"

namespace rem::nn {

std::size_t MlpParams::parameter_count() const {
  std::size_t n = 0;
  for (const Layer& l : layers) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
  return n;
}

void MlpParams::set_zero() {
  for (Layer& l : layers) {
    l.weight.setZero();
    l.bias.setZero();
  }
}

bool MlpParams::all_finite() const {
  for (const Layer& l : layers) {
    if (!l.weight.allFinite() || !l.bias.allFinite()) return false;
  }
  return true;
}

MlpParams make_mlp(int input_dim, const std::vector<int>& hidden, int output_dim) {
  if (input_dim < 0 || output_dim < 0) throw ValidationError("negative layer width");
  MlpParams p;
  int fan_in = input_dim;
  for (int width : hidden) {
    if (width <= 0) throw ValidationError("hidden layer width must be positive");
    p.layers.push_back({Eigen::MatrixXd::Zero(width, fan_in), Eigen::VectorXd::Zero(width)});
    fan_in = width;
  }
  p.layers.push_back({Eigen::MatrixXd::Zero(output_dim, fan_in), Eigen::VectorXd::Zero(output_dim)});
  return p;
}

MlpParams zeros_like(const MlpParams& p) {
  MlpParams z = p;
  z.set_zero();
  return z;
}

void glorot_init(MlpParams& p, std::mt19937_64& rng) {
  for (Layer& l : p.layers) {
    const double fan = static_cast<double>(l.weight.rows() + l.weight.cols());
    const double bound = fan > 0.0 ? std::sqrt(6.0 / fan) : 0.0;
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (Eigen::Index c = 0; c < l.weight.cols(); ++c)
      for (Eigen::Index r = 0; r < l.weight.rows(); ++r) l.weight(r, c) = dist(rng);
    l.bias.setZero();
  }
}

void pack(const MlpParams& p, double* out) {
  for (const Layer& l : p.layers) {
    out = std::copy(l.weight.data(), l.weight.data() + l.weight.size(), out);
    out = std::copy(l.bias.data(), l.bias.data() + l.bias.size(), out);
  }
}

void unpack(const double* in, MlpParams& p) {
  for (Layer& l : p.layers) {
    std::copy(in, in + l.weight.size(), l.weight.data());
    in += l.weight.size();
    std::copy(in, in + l.bias.size(), l.bias.data());
    in += l.bias.size();
  }
}

Eigen::VectorXd flatten(const MlpParams& p) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(p.parameter_count()));
  pack(p, v.data());
  return v;
}

Eigen::MatrixXd mlp_forward(const MlpParams& p, const Eigen::MatrixXd& input, MlpTape* tape) {
  if (p.layers.empty()) throw ValidationError("network has no layers");
  if (input.rows() != p.input_dim()) {
    throw ValidationError("network input has " + std::to_string(input.rows()) + " rows, expected " +
                          std::to_string(p.input_dim()));
  }
  if (tape) {
    tape->activations.clear();
    tape->activations.push_back(input);
  }
  Eigen::MatrixXd a = input;
  const std::size_t last = p.layers.size() - 1;
  for (std::size_t l = 0; l < last; ++l) {
    Eigen::MatrixXd z = p.layers[l].weight * a;
    z.colwise() += p.layers[l].bias;
    a = z.array().tanh().matrix();
    if (tape) tape->activations.push_back(a);
  }
  Eigen::MatrixXd out = p.layers[last].weight * a;
  out.colwise() += p.layers[last].bias;
  return out;
}

Eigen::VectorXd mlp_forward(const MlpParams& p, const Eigen::VectorXd& input) {
  return mlp_forward(p, Eigen::MatrixXd(input), nullptr).col(0);
}

Eigen::MatrixXd mlp_backward(const MlpParams& p, const MlpTape& tape, const Eigen::MatrixXd& grad_output,
                             MlpParams& grads) {
  const std::size_t n_layers = p.layers.size();
  Eigen::MatrixXd g = grad_output;  // gradient w.r.t. the current layer's pre-activation
  for (std::size_t l = n_layers; l-- > 0;) {
    const Eigen::MatrixXd& input = tape.activations[l];
    grads.layers[l].weight.noalias() += g * input.transpose();
    grads.layers[l].bias += g.rowwise().sum();
    Eigen::MatrixXd g_in = p.layers[l].weight.transpose() * g;
    if (l > 0) {
      // input is tanh output of layer l-1
      g = (g_in.array() * (1.0 - input.array().square())).matrix();
    } else {
      g = std::move(g_in);
    }
  }
  return g;
}

MlpParams mlp_gradient(const MlpParams& p, const Eigen::VectorXd& input, const OutputLoss& loss,
                       double* loss_value) {
  MlpTape tape;
  const Eigen::MatrixXd out = mlp_forward(p, Eigen::MatrixXd(input), &tape);
  Eigen::VectorXd grad_out = Eigen::VectorXd::Zero(out.rows());
  const double value = loss(out.col(0), grad_out);
  if (!std::isfinite(value) || !grad_out.allFinite()) throw NumericalError("non-finite loss or loss gradient");
  if (loss_value) *loss_value = value;
  MlpParams grads = zeros_like(p);
  mlp_backward(p, tape, Eigen::MatrixXd(grad_out), grads);
  if (!grads.all_finite()) throw NumericalError("non-finite parameter gradient");
  return grads;
}

namespace {

// Multiplies every direction block of `blocks` elementwise by `factor`.
void scale_blocks(Eigen::MatrixXd& blocks, const Eigen::MatrixXd& factor, int dims) {
  const Eigen::Index b = factor.cols();
  for (int d = 0; d < dims; ++d) blocks.middleCols(d * b, b).array() *= factor.array();
}

Eigen::MatrixXd tanh_derivative(const Eigen::MatrixXd& activation) {
  return (1.0 - activation.array().square()).matrix();
}

}  // namespace

Eigen::MatrixXd mlp_forward_with_trace(const MlpParams& p, const Eigen::MatrixXd& input, int trace_dims,
                                       Eigen::RowVectorXd& trace, TraceTape* tape) {
  if (p.layers.empty()) throw ValidationError("network has no layers");
  if (input.rows() != p.input_dim()) throw ValidationError("network input dimension mismatch");
  if (trace_dims != p.output_dim() || trace_dims > p.input_dim()) {
    throw ValidationError("trace needs output width equal to the traced input width");
  }
  const Eigen::Index batch = input.cols();
  const std::size_t last = p.layers.size() - 1;
  TraceTape local;
  TraceTape& t = tape ? *tape : local;
  t.dims = trace_dims;
  t.base.activations.assign(1, input);
  t.tangents.clear();

  Eigen::MatrixXd a = input;
  Eigen::MatrixXd u;  // tangents after the activation derivative
  for (std::size_t l = 0; l < last; ++l) {
    const Eigen::MatrixXd& w = p.layers[l].weight;
    Eigen::MatrixXd z = w * a;
    z.colwise() += p.layers[l].bias;
    a = z.array().tanh().matrix();
    Eigen::MatrixXd v;
    if (l == 0) {
      v.resize(w.rows(), trace_dims * batch);
      for (int d = 0; d < trace_dims; ++d) v.middleCols(d * batch, batch) = w.col(d).replicate(1, batch);
    } else {
      v = w * u;
    }
    u = v;
    scale_blocks(u, tanh_derivative(a), trace_dims);
    t.base.activations.push_back(a);
    t.tangents.push_back(std::move(v));
  }
  const Eigen::MatrixXd& w_out = p.layers[last].weight;
  Eigen::MatrixXd out = w_out * a;
  out.colwise() += p.layers[last].bias;

  trace = Eigen::RowVectorXd::Zero(batch);
  if (last == 0) {
    double diag = 0.0;
    for (int d = 0; d < trace_dims; ++d) diag += w_out(d, d);
    trace.setConstant(diag);
  } else {
    for (int d = 0; d < trace_dims; ++d) trace.noalias() += w_out.row(d) * u.middleCols(d * batch, batch);
  }
  return out;
}

Eigen::MatrixXd mlp_backward_with_trace(const MlpParams& p, const TraceTape& tape,
                                        const Eigen::MatrixXd& grad_output, const Eigen::RowVectorXd& grad_trace,
                                        MlpParams& grads) {
  const std::size_t last = p.layers.size() - 1;
  const int dims = tape.dims;
  const Eigen::Index batch = grad_output.cols();
  const Eigen::MatrixXd& w_out = p.layers[last].weight;
  const Eigen::MatrixXd& a_last = tape.base.activations[last];

  grads.layers[last].weight.noalias() += grad_output * a_last.transpose();
  grads.layers[last].bias += grad_output.rowwise().sum();
  if (last == 0) {
    const double total = grad_trace.sum();
    for (int d = 0; d < dims; ++d) grads.layers[0].weight(d, d) += total;
    return w_out.transpose() * grad_output;
  }

  const auto tangents_after = [&](std::size_t hidden) {
    Eigen::MatrixXd u = tape.tangents[hidden];
    scale_blocks(u, tanh_derivative(tape.base.activations[hidden + 1]), dims);
    return u;
  };

  Eigen::MatrixXd u_last = tangents_after(last - 1);
  for (int d = 0; d < dims; ++d) {
    grads.layers[last].weight.row(d).noalias() += (u_last.middleCols(d * batch, batch) * grad_trace.transpose()).transpose();
  }
  Eigen::MatrixXd g_a = w_out.transpose() * grad_output;
  Eigen::MatrixXd g_u(w_out.cols(), dims * batch);
  for (int d = 0; d < dims; ++d) g_u.middleCols(d * batch, batch).noalias() = w_out.row(d).transpose() * grad_trace;

  for (std::size_t l = last; l-- > 0;) {
    const Eigen::MatrixXd& w = p.layers[l].weight;
    const Eigen::MatrixXd& a = tape.base.activations[l + 1];
    const Eigen::MatrixXd& v = tape.tangents[l];
    const Eigen::MatrixXd deriv = tanh_derivative(a);

    Eigen::MatrixXd g_v = g_u;
    scale_blocks(g_v, deriv, dims);
    Eigen::MatrixXd g_deriv = Eigen::MatrixXd::Zero(a.rows(), batch);
    for (int d = 0; d < dims; ++d) {
      g_deriv.array() += g_u.middleCols(d * batch, batch).array() * v.middleCols(d * batch, batch).array();
    }
    g_a.array() += -2.0 * a.array() * g_deriv.array();
    const Eigen::MatrixXd g_z = (g_a.array() * deriv.array()).matrix();

    grads.layers[l].weight.noalias() += g_z * tape.base.activations[l].transpose();
    grads.layers[l].bias += g_z.rowwise().sum();
    if (l == 0) {
      for (int d = 0; d < dims; ++d) grads.layers[0].weight.col(d) += g_v.middleCols(d * batch, batch).rowwise().sum();
    } else {
      grads.layers[l].weight.noalias() += g_v * tangents_after(l - 1).transpose();
      g_u = w.transpose() * g_v;
    }
    g_a = w.transpose() * g_z;
  }
  return g_a;
}

double AdamState::effective_lr() const {
  const long periods = config.decay_every > 0 ? step / config.decay_every : 0;
  return config.base_lr * std::pow(config.decay_rate, static_cast<double>(periods));
}

AdamState make_adam(const AdamConfig& config, std::size_t parameter_count) {
  if (!(config.base_lr > 0.0)) throw ValidationError("learning rate must be positive");
  if (!(config.decay_rate > 0.0 && config.decay_rate <= 1.0)) throw ValidationError("decay rate must be in (0, 1]");
  if (config.decay_every <= 0) throw ValidationError("decay_every must be positive");
  AdamState s;
  s.config = config;
  s.first_moment = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(parameter_count));
  s.second_moment = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(parameter_count));
  return s;
}

void adam_step(AdamState& state, Eigen::Ref<Eigen::VectorXd> params, const Eigen::VectorXd& grads) {
  if (params.size() != grads.size() || params.size() != state.first_moment.size()) {
    throw ValidationError("Adam parameter/gradient shapes disagree");
  }
  if (!grads.allFinite()) throw NumericalError("non-finite gradient at Adam step " + std::to_string(state.step));
  const AdamConfig& c = state.config;
  const double lr = state.effective_lr();
  const double t = static_cast<double>(state.step + 1);
  const double correction1 = 1.0 - std::pow(c.beta1, t);
  const double correction2 = 1.0 - std::pow(c.beta2, t);
  state.first_moment = c.beta1 * state.first_moment + (1.0 - c.beta1) * grads;
  state.second_moment = c.beta2 * state.second_moment + (1.0 - c.beta2) * grads.cwiseAbs2();
  params.array() -= lr * (state.first_moment.array() / correction1) /
                    ((state.second_moment.array() / correction2).sqrt() + c.epsilon);
  ++state.step;
}

void adam_step(AdamState& state, MlpParams& params, const MlpParams& grads) {
  Eigen::VectorXd flat = flatten(params);
  adam_step(state, flat, flatten(grads));
  unpack(flat.data(), params);
}

Json mlp_to_json(const MlpParams& p) {
  Json layers = Json::array();
  for (const Layer& l : p.layers) {
    Json rows = Json::array();
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r) {
      std::vector<double> row(static_cast<std::size_t>(l.weight.cols()));
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c) row[static_cast<std::size_t>(c)] = l.weight(r, c);
      rows.push_back(row);
    }
    layers.push_back(Json{{"in", l.weight.cols()},
                          {"out", l.weight.rows()},
                          {"weight", rows},
                          {"bias", std::vector<double>(l.bias.data(), l.bias.data() + l.bias.size())}});
  }
  return Json{{"activation", "tanh"}, {"layers", layers}};
}

MlpParams mlp_from_json(const Json& j) {
  MlpParams p;
  try {
    for (const Json& jl : j.at("layers")) {
      const auto in = jl.at("in").get<Eigen::Index>();
      const auto out = jl.at("out").get<Eigen::Index>();
      Layer l{Eigen::MatrixXd::Zero(out, in), Eigen::VectorXd::Zero(out)};
      const auto rows = jl.at("weight").get<std::vector<std::vector<double>>>();
      const auto bias = jl.at("bias").get<std::vector<double>>();
      if (static_cast<Eigen::Index>(rows.size()) != out || static_cast<Eigen::Index>(bias.size()) != out) {
        throw ValidationError("layer shape disagrees with its in/out sizes");
      }
      for (Eigen::Index r = 0; r < out; ++r) {
        if (static_cast<Eigen::Index>(rows[r].size()) != in) throw ValidationError("weight row has wrong length");
        for (Eigen::Index c = 0; c < in; ++c) l.weight(r, c) = rows[r][c];
        l.bias[r] = bias[r];
      }
      if (!p.layers.empty() && p.layers.back().weight.rows() != in) {
        throw ValidationError("adjacent layer widths are incompatible");
      }
      p.layers.push_back(std::move(l));
    }
  } catch (const Json::exception& e) {
    throw ValidationError(std::string("malformed network parameters: ") + e.what());
  }
  if (p.layers.empty()) throw ValidationError("network has no layers");
  if (!p.all_finite()) throw ValidationError("network parameters must be finite");
  return p;
}

}  // namespace rem::nn
