#include <cmath>
#include <random>

#include "doctest.h"
#include "helpers.hpp"
#include "rem/error.hpp"
#include "rem/nn.hpp"

using namespace rem;
using namespace rem::nn;

namespace {

// scale-aware relative error; gradients below the floor are compared absolutely
double rel_err(double a, double b, double floor = 1e-6) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

MlpParams random_net(std::mt19937_64& rng, int in, std::vector<int> hidden, int out) {
  MlpParams p = make_mlp(in, hidden, out);
  glorot_init(p, rng);
  std::normal_distribution<double> n(0.0, 0.3);
  for (Layer& l : p.layers) l.bias = l.bias.unaryExpr([&](double) { return n(rng); });
  return p;
}

std::vector<int> random_hidden(std::mt19937_64& rng) {
  std::vector<int> h(static_cast<std::size_t>(std::uniform_int_distribution<int>(0, 3)(rng)));
  for (int& w : h) w = std::uniform_int_distribution<int>(1, 7)(rng);
  return h;
}

// loss(out) = sum_i c_i * out_i^2 / 2 + b_i * out_i
struct QuadLoss {
  Eigen::VectorXd c, b;
  double operator()(const Eigen::VectorXd& out, Eigen::VectorXd& g) const {
    g = c.cwiseProduct(out) + b;
    return 0.5 * out.cwiseProduct(out).dot(c) + out.dot(b);
  }
};

}  // namespace

TEST_CASE("forward examples") {
  MlpParams zero = make_mlp(3, {4, 4}, 2);
  CHECK(mlp_forward(zero, Eigen::VectorXd(Eigen::Vector3d(1, -2, 3))).norm() == 0.0);

  MlpParams lin = make_mlp(3, {}, 3);
  lin.layers[0].weight.setIdentity();
  const Eigen::Vector3d x(0.3, -1.2, 4.0);
  CHECK((mlp_forward(lin, Eigen::VectorXd(x)) - x).norm() == 0.0);

  MlpParams one = make_mlp(1, {1}, 1);
  one.layers[0].weight(0, 0) = 1.0;
  one.layers[1].weight(0, 0) = 1.0;
  CHECK(mlp_forward(one, Eigen::VectorXd(Eigen::VectorXd::Constant(1, 0.5)))[0] == doctest::Approx(0.462117).epsilon(1e-6));

  CHECK_THROWS_AS(mlp_forward(one, Eigen::VectorXd(Eigen::VectorXd::Zero(2))), ValidationError);
}

TEST_CASE("batch and vector forward agree") {
  std::mt19937_64 rng(2);
  const MlpParams p = random_net(rng, 4, {5, 3}, 2);
  const Eigen::MatrixXd x = Eigen::MatrixXd::Random(4, 7);
  const Eigen::MatrixXd y = mlp_forward(p, x);
  for (int j = 0; j < 7; ++j) CHECK((y.col(j) - mlp_forward(p, Eigen::VectorXd(x.col(j)))).norm() < 1e-15);
}

TEST_CASE("gradient examples") {
  MlpParams zero = make_mlp(2, {3}, 1);
  const auto square = [](const Eigen::VectorXd& out, Eigen::VectorXd& g) {
    g = 2.0 * out;
    return out.squaredNorm();
  };
  const MlpParams g0 = mlp_gradient(zero, Eigen::Vector2d(0.4, -0.1), square);
  CHECK(flatten(g0).norm() == 0.0);

  // out = w x + b, loss = (out - y)^2
  MlpParams lin = make_mlp(1, {}, 1);
  lin.layers[0].weight(0, 0) = 1.5;
  lin.layers[0].bias[0] = -0.5;
  const double x = 2.0, y = 1.0;
  const auto loss = [&](const Eigen::VectorXd& out, Eigen::VectorXd& g) {
    g = Eigen::VectorXd::Constant(1, 2.0 * (out[0] - y));
    return (out[0] - y) * (out[0] - y);
  };
  double value = 0.0;
  const MlpParams g = mlp_gradient(lin, Eigen::VectorXd::Constant(1, x), loss, &value);
  const double residual = 1.5 * x - 0.5 - y;
  CHECK(value == doctest::Approx(residual * residual));
  CHECK(g.layers[0].weight(0, 0) == doctest::Approx(2.0 * residual * x));
  CHECK(g.layers[0].bias[0] == doctest::Approx(2.0 * residual));
}

TEST_CASE("gradients match central differences") {
  std::mt19937_64 rng(31);
  std::normal_distribution<double> n(0.0, 1.0);
  double worst = 0.0;
  for (int draw = 0; draw < 120; ++draw) {
    const int in = std::uniform_int_distribution<int>(1, 5)(rng);
    const int out = std::uniform_int_distribution<int>(1, 4)(rng);
    MlpParams p = random_net(rng, in, random_hidden(rng), out);
    Eigen::VectorXd x(in);
    for (int i = 0; i < in; ++i) x[i] = n(rng);
    QuadLoss loss{Eigen::VectorXd::Random(out).cwiseAbs(), Eigen::VectorXd::Random(out)};
    const Eigen::VectorXd g = flatten(mlp_gradient(p, x, std::cref(loss)));

    Eigen::VectorXd theta = flatten(p);
    const double h = 1e-4;
    for (Eigen::Index i = 0; i < theta.size(); ++i) {
      auto eval = [&](double delta) {
        Eigen::VectorXd t = theta;
        t[i] += delta;
        MlpParams q = p;
        unpack(t.data(), q);
        Eigen::VectorXd dummy;
        return loss(mlp_forward(q, x), dummy);
      };
      const double fd = (eval(h) - eval(-h)) / (2 * h);
      worst = std::max(worst, rel_err(g[i], fd));
    }
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("input gradient from the backward pass") {
  std::mt19937_64 rng(5);
  const MlpParams p = random_net(rng, 3, {6, 4}, 2);
  const Eigen::MatrixXd x = Eigen::MatrixXd::Random(3, 4);
  const Eigen::MatrixXd c = Eigen::MatrixXd::Random(2, 4);
  MlpTape tape;
  mlp_forward(p, x, &tape);
  MlpParams grads = zeros_like(p);
  const Eigen::MatrixXd gx = mlp_backward(p, tape, c, grads);
  const double h = 1e-5;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 4; ++j) {
      Eigen::MatrixXd xp = x, xm = x;
      xp(i, j) += h;
      xm(i, j) -= h;
      const double fd = ((mlp_forward(p, xp).cwiseProduct(c)).sum() - (mlp_forward(p, xm).cwiseProduct(c)).sum()) / (2 * h);
      CHECK(rel_err(gx(i, j), fd) < 1e-6);
    }
  }
}

TEST_CASE("exact jacobian trace and its gradient") {
  std::mt19937_64 rng(77);
  for (int draw = 0; draw < 30; ++draw) {
    const int dims = std::uniform_int_distribution<int>(1, 4)(rng);
    const int extra = std::uniform_int_distribution<int>(0, 1)(rng);
    MlpParams p = random_net(rng, dims + extra, random_hidden(rng), dims);
    const int batch = 3;
    const Eigen::MatrixXd x = Eigen::MatrixXd::Random(dims + extra, batch);
    Eigen::RowVectorXd trace;
    TraceTape tape;
    const Eigen::MatrixXd out = mlp_forward_with_trace(p, x, dims, trace, &tape);
    CHECK((out - mlp_forward(p, x)).norm() < 1e-14);

    // trace of the numerically differentiated jacobian
    const double h = 1e-6;
    for (int j = 0; j < batch; ++j) {
      double fd_trace = 0.0;
      for (int d = 0; d < dims; ++d) {
        Eigen::MatrixXd xp = x.col(j), xm = x.col(j);
        xp(d, 0) += h;
        xm(d, 0) -= h;
        fd_trace += (mlp_forward(p, xp)(d, 0) - mlp_forward(p, xm)(d, 0)) / (2 * h);
      }
      CHECK(std::abs(trace[j] - fd_trace) < 1e-7);
    }

    // L = sum c * out + sum g * trace
    const Eigen::MatrixXd c = Eigen::MatrixXd::Random(dims, batch);
    const Eigen::RowVectorXd gt = Eigen::RowVectorXd::Random(batch);
    MlpParams grads = zeros_like(p);
    const Eigen::MatrixXd gx = mlp_backward_with_trace(p, tape, c, gt, grads);
    auto objective = [&](const MlpParams& q, const Eigen::MatrixXd& in) {
      Eigen::RowVectorXd tr;
      const Eigen::MatrixXd o = mlp_forward_with_trace(q, in, dims, tr);
      return o.cwiseProduct(c).sum() + tr.dot(gt);
    };
    const Eigen::VectorXd theta = flatten(p);
    const Eigen::VectorXd g = flatten(grads);
    const double step = 1e-5;
    for (Eigen::Index i = 0; i < theta.size(); ++i) {
      Eigen::VectorXd tp = theta, tm = theta;
      tp[i] += step;
      tm[i] -= step;
      MlpParams qp = p, qm = p;
      unpack(tp.data(), qp);
      unpack(tm.data(), qm);
      const double fd = (objective(qp, x) - objective(qm, x)) / (2 * step);
      CHECK(rel_err(g[i], fd) < 1e-5);
    }
    for (int i = 0; i < x.rows(); ++i) {
      for (int j = 0; j < batch; ++j) {
        Eigen::MatrixXd xp = x, xm = x;
        xp(i, j) += step;
        xm(i, j) -= step;
        const double fd = (objective(p, xp) - objective(p, xm)) / (2 * step);
        CHECK(rel_err(gx(i, j), fd) < 1e-5);
      }
    }
  }
}

TEST_CASE("adam examples") {
  AdamState s = make_adam(AdamConfig{}, 3);
  Eigen::VectorXd p(3);
  p << 1.0, -2.0, 0.5;
  const Eigen::VectorXd before = p;
  for (int i = 0; i < 5; ++i) adam_step(s, p, Eigen::VectorXd::Zero(3));
  CHECK((p - before).norm() == 0.0);
  CHECK(s.step == 5);

  AdamState one = make_adam(AdamConfig{}, 1);
  Eigen::VectorXd q = Eigen::VectorXd::Constant(1, 0.0);
  adam_step(one, q, Eigen::VectorXd::Constant(1, 1.0));
  // m_hat = 1, v_hat = 1: step = lr / (1 + eps)
  CHECK(q[0] == doctest::Approx(-1e-4 / (1.0 + 1e-8)).epsilon(1e-12));

  AdamState late = make_adam(AdamConfig{}, 1);
  late.step = 2400 * 3;
  CHECK(late.effective_lr() == doctest::Approx(9.4119e-5).epsilon(1e-5));
  late.step = 2400 * 3 - 1;
  CHECK(late.effective_lr() == doctest::Approx(1e-4 * 0.98 * 0.98));
}

TEST_CASE("adam schedule is a nonincreasing staircase") {
  AdamConfig cfg;
  cfg.decay_every = 7;
  AdamState s = make_adam(cfg, 1);
  double prev = s.effective_lr();
  for (long step = 0; step < 100; ++step) {
    s.step = step;
    const double lr = s.effective_lr();
    CHECK(lr <= prev);
    CHECK(lr == doctest::Approx(cfg.base_lr * std::pow(cfg.decay_rate, step / 7)));
    prev = lr;
  }
}

TEST_CASE("adam rejects non-finite gradients and bad configs") {
  AdamState s = make_adam(AdamConfig{}, 2);
  Eigen::VectorXd p = Eigen::VectorXd::Ones(2);
  Eigen::VectorXd g(2);
  g << 0.1, std::nan("");
  CHECK_THROWS_AS(adam_step(s, p, g), NumericalError);
  CHECK(p == Eigen::VectorXd::Ones(2));
  CHECK(s.step == 0);
  AdamConfig bad;
  bad.base_lr = -1.0;
  CHECK_THROWS_AS(make_adam(bad, 2), ValidationError);
  bad = AdamConfig{};
  bad.decay_every = 0;
  CHECK_THROWS_AS(make_adam(bad, 2), ValidationError);
}

TEST_CASE("adam on MlpParams matches the flat update") {
  std::mt19937_64 rng(9);
  MlpParams p = random_net(rng, 2, {3}, 1);
  MlpParams g = random_net(rng, 2, {3}, 1);
  AdamState a = make_adam(AdamConfig{}, p.parameter_count());
  AdamState b = make_adam(AdamConfig{}, p.parameter_count());
  Eigen::VectorXd flat = flatten(p);
  for (int i = 0; i < 3; ++i) {
    adam_step(a, p, g);
    adam_step(b, flat, flatten(g));
  }
  CHECK((flatten(p) - flat).norm() < 1e-15);
}

TEST_CASE("pack, unpack and json round trip") {
  std::mt19937_64 rng(4);
  const MlpParams p = random_net(rng, 3, {4, 2}, 2);
  CHECK(p.parameter_count() == static_cast<std::size_t>(3 * 4 + 4 + 4 * 2 + 2 + 2 * 2 + 2));
  MlpParams q = zeros_like(p);
  unpack(flatten(p).data(), q);
  CHECK((flatten(q) - flatten(p)).norm() == 0.0);
  const MlpParams r = mlp_from_json(Json::parse(mlp_to_json(p).dump()));
  CHECK((flatten(r) - flatten(p)).norm() == 0.0);
  CHECK(mlp_forward(r, Eigen::VectorXd(Eigen::Vector3d(1, 2, 3))) ==
        mlp_forward(p, Eigen::VectorXd(Eigen::Vector3d(1, 2, 3))));
}

TEST_CASE("glorot init bounds") {
  std::mt19937_64 rng(1);
  MlpParams p = make_mlp(10, {64}, 6);
  glorot_init(p, rng);
  CHECK(p.layers[0].weight.cwiseAbs().maxCoeff() <= std::sqrt(6.0 / 74.0));
  CHECK(p.layers[1].weight.cwiseAbs().maxCoeff() <= std::sqrt(6.0 / 70.0));
  CHECK(p.layers[0].bias.norm() == 0.0);
  CHECK(p.all_finite());
}
