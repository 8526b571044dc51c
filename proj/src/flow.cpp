#include "rem/flow.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

#include "rem/error.hpp"

namespace rem {

namespace {

// Internal batches hold samples as columns.
using Columns = Eigen::MatrixXd;

Eigen::MatrixXd gather_rows(const Columns& x, const std::vector<int>& rows) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), x.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = x.row(rows[i]);
  return out;
}

void scatter_rows(Columns& x, const std::vector<int>& rows, const Eigen::MatrixXd& values) {
  for (std::size_t i = 0; i < rows.size(); ++i) x.row(rows[i]) = values.row(static_cast<Eigen::Index>(i));
}

void require_finite(const Columns& x, const char* what) {
  if (!x.allFinite()) throw NumericalError(std::string("non-finite state in ") + what);
}

// ---- affine coupling ----

struct CouplingTape {
  nn::MlpTape scale_tape;
  nn::MlpTape shift_tape;
  Eigen::MatrixXd raw_scale;  // |T| x B
  Eigen::MatrixXd shift;
  Eigen::MatrixXd x_transformed;
};

Columns coupling_inverse(const AffineCoupling& c, const Columns& x, Eigen::RowVectorXd& log_det,
                         CouplingTape* tape) {
  const auto cond = c.conditioner_dims();
  const auto trans = c.transformed_dims();
  const Eigen::MatrixXd xc = gather_rows(x, cond);
  const Eigen::MatrixXd xt = gather_rows(x, trans);
  CouplingTape local;
  CouplingTape& t = tape ? *tape : local;
  t.raw_scale = nn::mlp_forward(c.scale_net, xc, &t.scale_tape);
  t.shift = nn::mlp_forward(c.shift_net, xc, &t.shift_tape);
  t.x_transformed = xt;
  const Eigen::ArrayXXd s = 2.0 * t.raw_scale.array().tanh();
  Columns z = x;
  scatter_rows(z, trans, ((xt - t.shift).array() * (-s).exp()).matrix());
  log_det = -s.colwise().sum().matrix();
  return z;
}

Columns coupling_forward(const AffineCoupling& c, const Columns& z) {
  const auto cond = c.conditioner_dims();
  const auto trans = c.transformed_dims();
  const Eigen::MatrixXd zc = gather_rows(z, cond);
  const Eigen::ArrayXXd s = 2.0 * nn::mlp_forward(c.scale_net, zc).array().tanh();
  const Eigen::MatrixXd shift = nn::mlp_forward(c.shift_net, zc);
  Columns x = z;
  scatter_rows(x, trans, (gather_rows(z, trans).array() * s.exp() + shift.array()).matrix());
  return x;
}

// Gradient w.r.t. x given gradients on z and on log_det.
Columns coupling_backward(const AffineCoupling& c, const CouplingTape& t, const Columns& grad_z,
                          const Eigen::RowVectorXd& grad_log_det, nn::MlpParams& grad_scale,
                          nn::MlpParams& grad_shift) {
  const auto cond = c.conditioner_dims();
  const auto trans = c.transformed_dims();
  const Eigen::ArrayXXd tanh_raw = t.raw_scale.array().tanh();
  const Eigen::ArrayXXd e = (-2.0 * tanh_raw).exp();
  const Eigen::ArrayXXd gzt = gather_rows(grad_z, trans).array();
  const Eigen::ArrayXXd centered = (t.x_transformed - t.shift).array();

  const Eigen::MatrixXd g_xt = (gzt * e).matrix();
  const Eigen::MatrixXd g_shift = (-gzt * e).matrix();
  Eigen::ArrayXXd g_s = -gzt * centered * e;
  g_s.rowwise() -= grad_log_det.array();
  const Eigen::MatrixXd g_raw = (g_s * 2.0 * (1.0 - tanh_raw.square())).matrix();

  Eigen::MatrixXd g_xc = gather_rows(grad_z, cond);
  g_xc += nn::mlp_backward(c.scale_net, t.scale_tape, g_raw, grad_scale);
  g_xc += nn::mlp_backward(c.shift_net, t.shift_tape, g_shift, grad_shift);

  Columns g_x(grad_z.rows(), grad_z.cols());
  scatter_rows(g_x, cond, g_xc);
  scatter_rows(g_x, trans, g_xt);
  return g_x;
}

// ---- continuous block ----

Eigen::MatrixXd with_time(const Columns& h, double time) {
  Eigen::MatrixXd in(h.rows() + 1, h.cols());
  in.topRows(h.rows()) = h;
  in.row(h.rows()).setConstant(time);
  return in;
}

Columns dynamics(const ContinuousBlock& b, const Columns& h, double time) {
  return nn::mlp_forward(b.dynamics, with_time(h, time));
}

Columns dynamics_with_trace(const ContinuousBlock& b, const Columns& h, double time, Eigen::RowVectorXd& trace,
                            nn::TraceTape* tape) {
  return nn::mlp_forward_with_trace(b.dynamics, with_time(h, time), b.dim, trace, tape);
}

Columns continuous_forward(const ContinuousBlock& b, const Columns& z) {
  const double dt = 1.0 / b.steps;
  Columns h = z;
  for (int i = 0; i < b.steps; ++i) {
    const double t = i * dt;
    const Columns k1 = dynamics(b, h, t);
    const Columns k2 = dynamics(b, h + 0.5 * dt * k1, t + 0.5 * dt);
    const Columns k3 = dynamics(b, h + 0.5 * dt * k2, t + 0.5 * dt);
    const Columns k4 = dynamics(b, h + dt * k3, t + dt);
    h += (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    require_finite(h, "continuous bijector (sampling)");
  }
  return h;
}

// Integrates from t = 1 down to t = 0. `states`, when given, receives the
// state at the start of every step.
Columns continuous_inverse(const ContinuousBlock& b, const Columns& x, Eigen::RowVectorXd& log_det,
                           std::vector<Columns>* states) {
  const double dt = -1.0 / b.steps;
  Columns h = x;
  log_det = Eigen::RowVectorXd::Zero(x.cols());
  Eigen::RowVectorXd tr1, tr2, tr3, tr4;
  if (states) states->clear();
  for (int i = 0; i < b.steps; ++i) {
    if (states) states->push_back(h);
    const double t = 1.0 + i * dt;
    const Columns k1 = dynamics_with_trace(b, h, t, tr1, nullptr);
    const Columns k2 = dynamics_with_trace(b, h + 0.5 * dt * k1, t + 0.5 * dt, tr2, nullptr);
    const Columns k3 = dynamics_with_trace(b, h + 0.5 * dt * k2, t + 0.5 * dt, tr3, nullptr);
    const Columns k4 = dynamics_with_trace(b, h + dt * k3, t + dt, tr4, nullptr);
    h += (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    log_det += (dt / 6.0) * (tr1 + 2.0 * tr2 + 2.0 * tr3 + tr4);
    require_finite(h, "continuous bijector (density)");
  }
  return h;
}

// Backpropagation through the unrolled RK4 integrator. Stage internals are
// recomputed from the saved step states.
Columns continuous_backward(const ContinuousBlock& b, const std::vector<Columns>& states, const Columns& grad_z,
                            const Eigen::RowVectorXd& grad_log_det, nn::MlpParams& grads) {
  const double dt = -1.0 / b.steps;
  const int k = b.dim;
  Columns g_h = grad_z;
  Eigen::RowVectorXd tr;
  nn::TraceTape tape1, tape2, tape3, tape4;
  const Eigen::RowVectorXd g_tr_outer = (dt / 6.0) * grad_log_det;
  const Eigen::RowVectorXd g_tr_inner = (dt / 3.0) * grad_log_det;
  for (int i = b.steps - 1; i >= 0; --i) {
    const Columns& h = states[static_cast<std::size_t>(i)];
    const double t = 1.0 + i * dt;
    const Columns k1 = dynamics_with_trace(b, h, t, tr, &tape1);
    const Columns k2 = dynamics_with_trace(b, h + 0.5 * dt * k1, t + 0.5 * dt, tr, &tape2);
    const Columns k3 = dynamics_with_trace(b, h + 0.5 * dt * k2, t + 0.5 * dt, tr, &tape3);
    dynamics_with_trace(b, h + dt * k3, t + dt, tr, &tape4);

    Columns g_k1 = (dt / 6.0) * g_h;
    Columns g_k2 = (dt / 3.0) * g_h;
    Columns g_k3 = (dt / 3.0) * g_h;
    const Columns g_k4 = (dt / 6.0) * g_h;
    Columns g_prev = g_h;

    Columns g_in = nn::mlp_backward_with_trace(b.dynamics, tape4, g_k4, g_tr_outer, grads).topRows(k);
    g_prev += g_in;
    g_k3 += dt * g_in;
    g_in = nn::mlp_backward_with_trace(b.dynamics, tape3, g_k3, g_tr_inner, grads).topRows(k);
    g_prev += g_in;
    g_k2 += 0.5 * dt * g_in;
    g_in = nn::mlp_backward_with_trace(b.dynamics, tape2, g_k2, g_tr_inner, grads).topRows(k);
    g_prev += g_in;
    g_k1 += 0.5 * dt * g_in;
    g_in = nn::mlp_backward_with_trace(b.dynamics, tape1, g_k1, g_tr_outer, grads).topRows(k);
    g_prev += g_in;
    g_h = std::move(g_prev);
  }
  return g_h;
}

Columns inverse_columns(const Bijector& b, const Columns& x, Eigen::RowVectorXd& log_det) {
  if (const auto* c = std::get_if<AffineCoupling>(&b)) return coupling_inverse(*c, x, log_det, nullptr);
  return continuous_inverse(std::get<ContinuousBlock>(b), x, log_det, nullptr);
}

Columns forward_columns(const Bijector& b, const Columns& z) {
  if (const auto* c = std::get_if<AffineCoupling>(&b)) return coupling_forward(*c, z);
  return continuous_forward(std::get<ContinuousBlock>(b), z);
}

Eigen::RowVectorXd base_log_prob_columns(const Columns& z) {
  const double k = static_cast<double>(z.rows());
  return (-0.5 * k * std::log(2.0 * std::numbers::pi) - 0.5 * z.colwise().squaredNorm().array()).matrix();
}

Eigen::RowVectorXd log_prob_columns(const FlowModel& m, const Columns& x) {
  Columns h = x;
  Eigen::RowVectorXd total = Eigen::RowVectorXd::Zero(x.cols());
  Eigen::RowVectorXd ld;
  for (std::size_t i = m.stack.size(); i-- > 0;) {
    h = inverse_columns(m.stack[i], h, ld);
    total += ld;
  }
  return base_log_prob_columns(h) + total;
}

void check_input(const FlowModel& m, const Eigen::MatrixXd& x) {
  if (x.cols() != m.dim) {
    throw ValidationError("flow input has dimension " + std::to_string(x.cols()) + ", model expects " +
                          std::to_string(m.dim));
  }
  if (!x.allFinite()) throw ValidationError("flow input has non-finite entries");
}

template <typename Fn>
void for_each_net(const FlowModel& m, Fn&& fn) {
  for (const Bijector& b : m.stack) {
    if (const auto* c = std::get_if<AffineCoupling>(&b)) {
      fn(c->scale_net);
      fn(c->shift_net);
    } else {
      fn(std::get<ContinuousBlock>(b).dynamics);
    }
  }
}

template <typename Fn>
void for_each_net(FlowModel& m, Fn&& fn) {
  for (Bijector& b : m.stack) {
    if (auto* c = std::get_if<AffineCoupling>(&b)) {
      fn(c->scale_net);
      fn(c->shift_net);
    } else {
      fn(std::get<ContinuousBlock>(b).dynamics);
    }
  }
}

}  // namespace

double base_log_prob(const Eigen::VectorXd& z) {
  const double k = static_cast<double>(z.size());
  return -0.5 * k * std::log(2.0 * std::numbers::pi) - 0.5 * z.squaredNorm();
}

std::vector<int> AffineCoupling::conditioner_dims() const {
  const int split = dim / 2;
  std::vector<int> out;
  const int lo = parity == 0 ? 0 : split;
  const int hi = parity == 0 ? split : dim;
  for (int i = lo; i < hi; ++i) out.push_back(i);
  return out;
}

std::vector<int> AffineCoupling::transformed_dims() const {
  const int split = dim / 2;
  std::vector<int> out;
  const int lo = parity == 0 ? split : 0;
  const int hi = parity == 0 ? dim : split;
  for (int i = lo; i < hi; ++i) out.push_back(i);
  return out;
}

int bijector_dim(const Bijector& b) {
  return std::visit([](const auto& v) { return v.dim; }, b);
}

InverseResult inverse_and_log_det(const Bijector& b, const Eigen::MatrixXd& x) {
  if (x.cols() != bijector_dim(b)) throw ValidationError("bijector input dimension mismatch");
  if (!x.allFinite()) throw ValidationError("bijector input has non-finite entries");
  Eigen::RowVectorXd ld;
  const Columns z = inverse_columns(b, x.transpose(), ld);
  return {z.transpose(), ld.transpose()};
}

Eigen::MatrixXd forward(const Bijector& b, const Eigen::MatrixXd& z) {
  if (z.cols() != bijector_dim(b)) throw ValidationError("bijector input dimension mismatch");
  return forward_columns(b, z.transpose()).transpose();
}

void validate_flow_config(const FlowConfig& c) {
  if (c.variant != "continuous" && c.variant != "affine_coupling") {
    throw ValidationError("unknown bijector variant '" + c.variant + "'");
  }
  if (c.blocks < 1) throw ValidationError("flow needs at least one bijector block");
  if (c.integration_steps < 1) throw ValidationError("integration_steps must be positive");
  if (c.epochs < 0) throw ValidationError("epochs must be nonnegative");
  if (c.batch_size < 1) throw ValidationError("batch_size must be positive");
  for (int h : c.hidden) {
    if (h < 1) throw ValidationError("hidden widths must be positive");
  }
}

Json flow_config_to_json(const FlowConfig& c) {
  return Json{{"variant", c.variant},
              {"blocks", c.blocks},
              {"hidden", c.hidden},
              {"integration_steps", c.integration_steps},
              {"epochs", c.epochs},
              {"batch_size", c.batch_size},
              {"learning_rate", c.adam.base_lr},
              {"decay_rate", c.adam.decay_rate},
              {"decay_every", c.adam.decay_every},
              {"beta1", c.adam.beta1},
              {"beta2", c.adam.beta2},
              {"epsilon", c.adam.epsilon},
              {"clip_norm", c.clip_norm},
              {"seed", c.seed}};
}

FlowConfig flow_config_from_json(const Json& j) {
  FlowConfig c;
  try {
    c.variant = j.value("variant", c.variant);
    c.blocks = j.value("blocks", c.blocks);
    c.hidden = j.value("hidden", c.hidden);
    c.integration_steps = j.value("integration_steps", c.integration_steps);
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.adam.base_lr = j.value("learning_rate", c.adam.base_lr);
    c.adam.decay_rate = j.value("decay_rate", c.adam.decay_rate);
    c.adam.decay_every = j.value("decay_every", c.adam.decay_every);
    c.adam.beta1 = j.value("beta1", c.adam.beta1);
    c.adam.beta2 = j.value("beta2", c.adam.beta2);
    c.adam.epsilon = j.value("epsilon", c.adam.epsilon);
    c.clip_norm = j.value("clip_norm", c.clip_norm);
    c.seed = j.value("seed", c.seed);
  } catch (const Json::exception& e) {
    throw ValidationError(std::string("malformed flow config: ") + e.what());
  }
  validate_flow_config(c);
  return c;
}

std::size_t FlowModel::parameter_count() const {
  std::size_t n = 0;
  for_each_net(*this, [&](const nn::MlpParams& p) { n += p.parameter_count(); });
  return n;
}

Eigen::VectorXd FlowModel::parameters() const {
  Eigen::VectorXd flat(static_cast<Eigen::Index>(parameter_count()));
  double* out = flat.data();
  for_each_net(*this, [&](const nn::MlpParams& p) {
    nn::pack(p, out);
    out += p.parameter_count();
  });
  return flat;
}

void FlowModel::set_parameters(const Eigen::VectorXd& flat) {
  if (static_cast<std::size_t>(flat.size()) != parameter_count()) {
    throw ValidationError("flat parameter vector has the wrong length");
  }
  const double* in = flat.data();
  for_each_net(*this, [&](nn::MlpParams& p) {
    nn::unpack(in, p);
    in += p.parameter_count();
  });
}

FlowModel make_flow(int dim, const FlowConfig& config) {
  validate_flow_config(config);
  if (dim < 1) throw ValidationError("flow dimension must be positive");
  FlowModel m;
  m.dim = dim;
  m.config = config;
  std::mt19937_64 rng(config.seed);
  for (int i = 0; i < config.blocks; ++i) {
    if (config.variant == "continuous") {
      ContinuousBlock b;
      b.dim = dim;
      b.steps = config.integration_steps;
      b.dynamics = nn::make_mlp(dim + 1, config.hidden, dim);
      nn::glorot_init(b.dynamics, rng);
      m.stack.emplace_back(std::move(b));
    } else {
      AffineCoupling c;
      c.dim = dim;
      c.parity = i % 2;
      const int n_cond = static_cast<int>(c.conditioner_dims().size());
      const int n_trans = static_cast<int>(c.transformed_dims().size());
      c.scale_net = nn::make_mlp(n_cond, config.hidden, n_trans);
      c.shift_net = nn::make_mlp(n_cond, config.hidden, n_trans);
      nn::glorot_init(c.scale_net, rng);
      nn::glorot_init(c.shift_net, rng);
      m.stack.emplace_back(std::move(c));
    }
  }
  return m;
}

Eigen::VectorXd log_prob(const FlowModel& m, const Eigen::MatrixXd& x) {
  check_input(m, x);
  return log_prob_columns(m, x.transpose()).transpose();
}

double log_prob(const FlowModel& m, const Eigen::VectorXd& x) {
  return log_prob(m, Eigen::MatrixXd(x.transpose()))[0];
}

double rareness_data(const FlowModel& m, const Eigen::VectorXd& x) { return -log_prob(m, x); }

Eigen::VectorXd rareness_data(const FlowModel& m, const Eigen::MatrixXd& x) { return -log_prob(m, x); }

Eigen::MatrixXd sample(const FlowModel& m, int n, std::uint64_t seed) {
  if (n < 0) throw ValidationError("sample count must be nonnegative");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Columns h(m.dim, n);
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < m.dim; ++i) h(i, j) = normal(rng);
  if (n == 0) return h.transpose();
  for (const Bijector& b : m.stack) h = forward_columns(b, h);
  return h.transpose();
}

double mean_nll(const FlowModel& m, const Eigen::MatrixXd& x) { return -log_prob(m, x).mean(); }

NllGradient nll_gradient(const FlowModel& m, const Eigen::MatrixXd& batch) {
  check_input(m, batch);
  const auto n_blocks = m.stack.size();
  const double count = static_cast<double>(batch.rows());

  // inverse pass, keeping what each block's reverse pass needs
  std::vector<CouplingTape> coupling_tapes(n_blocks);
  std::vector<std::vector<Columns>> step_states(n_blocks);
  Columns h = batch.transpose();
  Eigen::RowVectorXd total = Eigen::RowVectorXd::Zero(h.cols());
  Eigen::RowVectorXd ld;
  for (std::size_t i = n_blocks; i-- > 0;) {
    if (const auto* c = std::get_if<AffineCoupling>(&m.stack[i])) {
      h = coupling_inverse(*c, h, ld, &coupling_tapes[i]);
    } else {
      h = continuous_inverse(std::get<ContinuousBlock>(m.stack[i]), h, ld, &step_states[i]);
    }
    total += ld;
  }
  const Eigen::RowVectorXd lp = base_log_prob_columns(h) + total;

  NllGradient out;
  out.mean_nll = -lp.mean();
  if (!std::isfinite(out.mean_nll)) throw NumericalError("non-finite negative log-likelihood");

  // d(-mean log p)/dz = z / n; d/d(log_det) = -1 / n for every block
  Columns g = h / count;
  const Eigen::RowVectorXd g_ld = Eigen::RowVectorXd::Constant(h.cols(), -1.0 / count);
  std::vector<nn::MlpParams> grads;
  for_each_net(m, [&](const nn::MlpParams& p) { grads.push_back(nn::zeros_like(p)); });
  // grads follows for_each_net order; map block -> first net index
  std::vector<std::size_t> first_net(n_blocks);
  std::size_t net = 0;
  for (std::size_t i = 0; i < n_blocks; ++i) {
    first_net[i] = net;
    net += std::holds_alternative<AffineCoupling>(m.stack[i]) ? 2 : 1;
  }
  for (std::size_t i = 0; i < n_blocks; ++i) {
    if (const auto* c = std::get_if<AffineCoupling>(&m.stack[i])) {
      g = coupling_backward(*c, coupling_tapes[i], g, g_ld, grads[first_net[i]], grads[first_net[i] + 1]);
    } else {
      g = continuous_backward(std::get<ContinuousBlock>(m.stack[i]), step_states[i], g, g_ld, grads[first_net[i]]);
    }
  }
  out.gradient.resize(static_cast<Eigen::Index>(m.parameter_count()));
  double* dst = out.gradient.data();
  for (const nn::MlpParams& p : grads) {
    nn::pack(p, dst);
    dst += p.parameter_count();
  }
  if (!out.gradient.allFinite()) throw NumericalError("non-finite flow gradient");
  return out;
}

FlowModel train_flow(const Eigen::MatrixXd& data, const FlowConfig& config, const EpochObserver& observer) {
  validate_flow_config(config);
  const Eigen::Index n = data.rows();
  if (n < config.batch_size) {
    throw ValidationError("dataset of " + std::to_string(n) + " rows is smaller than batch size " +
                          std::to_string(config.batch_size));
  }
  if (!data.allFinite()) throw ValidationError("training data has non-finite entries");
  const Eigen::RowVectorXd spread =
      (data.rowwise() - data.colwise().mean()).cwiseAbs().colwise().maxCoeff();
  if ((spread.array() < 1e-12).any()) {
    throw NumericalError("degenerate training data: a dimension has zero spread (repeated points)");
  }

  FlowModel m = make_flow(static_cast<int>(data.cols()), config);
  nn::AdamState adam = nn::make_adam(config.adam, m.parameter_count());
  Eigen::VectorXd params = m.parameters();
  std::mt19937_64 rng(config.seed ^ 0x5DEECE66Dull);
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double nll_sum = 0.0;
    int batch_index = 0;
    for (Eigen::Index start = 0; start < n; start += config.batch_size, ++batch_index) {
      const Eigen::Index size = std::min<Eigen::Index>(config.batch_size, n - start);
      Eigen::MatrixXd batch(size, data.cols());
      for (Eigen::Index r = 0; r < size; ++r) batch.row(r) = data.row(order[static_cast<std::size_t>(start + r)]);
      NllGradient g;
      try {
        g = nll_gradient(m, batch);
      } catch (const NumericalError& e) {
        throw NumericalError("training diverged at epoch " + std::to_string(epoch) + ", batch " +
                             std::to_string(batch_index) + ": " + e.what());
      }
      if (config.clip_norm > 0.0) {
        const double norm = g.gradient.norm();
        if (norm > config.clip_norm) g.gradient *= config.clip_norm / norm;
      }
      nn::adam_step(adam, params, g.gradient);
      m.set_parameters(params);
      nll_sum += g.mean_nll * static_cast<double>(size);
    }
    const double epoch_nll = nll_sum / static_cast<double>(n);
    m.history.push_back(epoch_nll);
    if (observer) observer(epoch, epoch_nll);
  }
  return m;
}

}  // namespace rem
