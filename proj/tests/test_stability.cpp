#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "dlqr/errors.hpp"
#include "dlqr/plant.hpp"
#include "dlqr/rng.hpp"
#include "dlqr/stability.hpp"

using dlqr::Mat;
using dlqr::Vec;

namespace {

dlqr::SystemModel reference_model() {
  dlqr::SystemModel model;
  model.A = Mat(2, 2);
  model.A << 1.1, -0.3, 1.0, 0.0;
  model.Abar = Mat(2, 2);
  model.Abar << 0.0, 0.0, -0.18, 0.0;
  model.B = Mat(2, 1);
  model.B << 1.0, 0.0;
  model.Bbar = Mat(2, 1);
  model.Bbar << -0.1, 0.08;
  model.d = 2;
  return model;
}

Mat reference_Q() {
  Mat Q(2, 2);
  Q << 1.0, 0.5, 0.5, 1.0;
  return Q;
}

// Scalar plant with delay 1 used for hand-checkable arithmetic.
dlqr::SystemModel scalar_model() {
  dlqr::SystemModel model;
  model.A = 0.5 * Mat::Identity(1, 1);
  model.Abar = Mat::Zero(1, 1);
  model.B = Mat::Identity(1, 1);
  model.Bbar = Mat::Zero(1, 1);
  model.d = 1;
  return model;
}

dlqr::SystemModel random_model(dlqr::StreamRng& rng, int n, int m, int d,
                               double scale) {
  auto draw = [&](int r, int c) {
    Mat M(r, c);
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) M(i, j) = rng.next_normal();
    return M;
  };
  dlqr::SystemModel model;
  model.A = scale * draw(n, n) / std::sqrt(static_cast<double>(n));
  model.Abar = 0.3 * scale * draw(n, n) / std::sqrt(static_cast<double>(n));
  model.B = draw(n, m);
  model.Bbar = 0.3 * draw(n, m);
  model.d = d;
  return model;
}

Mat random_sym(dlqr::StreamRng& rng, int n) {
  Mat M(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) M(i, j) = rng.next_normal();
  return dlqr::sym_part(M);
}

Vec stack_vec(const std::vector<Mat>& stack) {
  const int n2 = static_cast<int>(stack[0].size());
  Vec v(n2 * static_cast<int>(stack.size()));
  for (std::size_t i = 0; i < stack.size(); ++i)
    v.segment(static_cast<int>(i) * n2, n2) = dlqr::vec(stack[i]);
  return v;
}

}  // namespace

TEST_CASE("closed-loop operator: hand-checkable scalar blocks") {
  auto model = scalar_model();
  Mat K = 0.2 * Mat::Identity(1, 1);
  auto op = dlqr::build_closed_loop_operator(model, K);
  REQUIRE(op.assembled.rows() == 2);
  CHECK(op.assembled(0, 0) == 0.0);
  CHECK(op.assembled(0, 1) == 0.0);
  CHECK(op.assembled(1, 0) == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(op.assembled(1, 1) == doctest::Approx(0.09).epsilon(1e-15));
  CHECK(dlqr::spectral_radius(op.assembled) == doctest::Approx(0.09).epsilon(1e-12));
}

TEST_CASE("closed-loop operator: noiseless radius is rho(A)^2") {
  auto model = reference_model();
  model.Abar.setZero();
  model.Bbar.setZero();
  // A has eigenvalues 0.6 and 0.5; with no noise and zero gain the
  // second-moment dynamics contract at the square of the slow mode.
  auto verdict = dlqr::is_ms_stabilizing(model, Mat::Zero(1, 2));
  CHECK(verdict.spectral_radius == doctest::Approx(0.36).epsilon(1e-9));
  CHECK(verdict.stabilizing);
}

TEST_CASE("closed-loop operator: reference plant verdicts") {
  auto model = reference_model();
  auto open_loop = dlqr::is_ms_stabilizing(model, Mat::Zero(1, 2));
  CHECK(open_loop.stabilizing);
  CHECK(open_loop.spectral_radius == doctest::Approx(0.4405929170).epsilon(1e-6));

  Mat Kstar(1, 2);
  Kstar << 0.8557146428, -0.2243436077;
  auto closed = dlqr::is_ms_stabilizing(model, Kstar);
  CHECK(closed.stabilizing);
  CHECK(closed.spectral_radius == doctest::Approx(0.2730734972).epsilon(1e-6));

  auto unstable = scalar_model();
  unstable.A = 2.0 * Mat::Identity(1, 1);
  auto bad = dlqr::is_ms_stabilizing(unstable, Mat::Zero(1, 1));
  CHECK_FALSE(bad.stabilizing);
  CHECK(bad.spectral_radius == doctest::Approx(4.0).epsilon(1e-12));
}

TEST_CASE("solve_lyapunov_stack: scalar fixed point by hand") {
  auto model = scalar_model();
  Mat K = 0.2 * Mat::Identity(1, 1);
  std::vector<Mat> Qstack = {Mat::Identity(1, 1), 1.04 * Mat::Identity(1, 1)};
  auto stack = dlqr::solve_lyapunov_stack(model, K, Qstack);
  // Last equation: P1 = 0.09 P1 + 1.04, so P1 = 8/7; then P0 = 0.25 P1 + 1.
  CHECK(stack.P[1](0, 0) == doctest::Approx(8.0 / 7.0).epsilon(1e-12));
  CHECK(stack.P[0](0, 0) == doctest::Approx(9.0 / 7.0).epsilon(1e-12));

  // Homogeneous system: zero forcing gives the zero stack.
  std::vector<Mat> zero = {Mat::Zero(1, 1), Mat::Zero(1, 1)};
  auto z = dlqr::solve_lyapunov_stack(model, K, zero);
  CHECK(z.P[0](0, 0) == 0.0);
  CHECK(z.P[1](0, 0) == 0.0);
}

TEST_CASE("solve_lyapunov_stack: reference evaluation at the optimal gain") {
  auto model = reference_model();
  Mat Kstar(1, 2);
  Kstar << 0.8557146428, -0.2243436077;
  Mat Q = reference_Q();
  Mat R = Mat::Identity(1, 1);
  std::vector<Mat> Qstack = {Q, Q, Q + Kstar.transpose() * R * Kstar};
  auto stack = dlqr::solve_lyapunov_stack(model, Kstar, Qstack);

  Mat P0(2, 2), P1(2, 2), P2(2, 2);
  P0 << 8.8763784529, -1.4768712006, -1.4768712006, 1.5929498474;
  P1 << 6.5883316372, -0.6575941323, -0.6575941323, 1.2995926878;
  P2 << 3.3288076428, 0.1969587006, 0.1969587006, 1.0755536731;
  CHECK((stack.P[0] - P0).cwiseAbs().maxCoeff() < 1e-6);
  CHECK((stack.P[1] - P1).cwiseAbs().maxCoeff() < 1e-6);
  CHECK((stack.P[2] - P2).cwiseAbs().maxCoeff() < 1e-6);
  CHECK(dlqr::is_monotone_pd(stack));

  // The stack must reproduce its own defining equations to solver accuracy.
  auto f = dlqr::f_map(model, Kstar, stack.P);
  for (int i = 0; i <= model.d; ++i)
    CHECK((stack.P[i] - f[i] - Qstack[i]).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("solve_lyapunov_stack: error paths") {
  auto model = scalar_model();
  Mat K = Mat::Zero(1, 1);

  // Marginal loop (rho = 1 exactly) makes the linear system singular.
  auto marginal = model;
  marginal.A = Mat::Identity(1, 1);
  std::vector<Mat> Qstack = {Mat::Identity(1, 1), Mat::Identity(1, 1)};
  CHECK_THROWS_AS(dlqr::solve_lyapunov_stack(marginal, K, Qstack),
                  dlqr::not_stabilizing_error);

  std::vector<Mat> short_stack = {Mat::Identity(1, 1)};
  CHECK_THROWS_AS(dlqr::solve_lyapunov_stack(model, K, short_stack),
                  dlqr::input_error);

  dlqr::SystemModel m2 = reference_model();
  Mat asym(2, 2);
  asym << 1.0, 0.3, 0.0, 1.0;
  std::vector<Mat> bad = {asym, asym, asym};
  CHECK_THROWS_AS(dlqr::solve_lyapunov_stack(m2, Mat::Zero(1, 2), bad),
                  dlqr::input_error);
}

TEST_CASE("solve_moment_equations: scalar value and PSD property") {
  auto model = scalar_model();
  Mat K = 0.2 * Mat::Identity(1, 1);
  auto stack = dlqr::solve_moment_equations(model, K, Mat::Identity(1, 1));
  // With no noise channel S0 = 0 and S1 = 1 / (1 - 0.09).
  CHECK(stack.S[0](0, 0) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(stack.S[1](0, 0) == doctest::Approx(1.0 / 0.91).epsilon(1e-12));

  auto zero = dlqr::solve_moment_equations(model, K, Mat::Zero(1, 1));
  CHECK(zero.S[0](0, 0) == 0.0);
  CHECK(zero.S[1](0, 0) == 0.0);

  auto ref = reference_model();
  auto big = dlqr::solve_moment_equations(ref, Mat::Zero(1, 2), Mat::Identity(2, 2));
  for (const auto& S : big.S) CHECK(dlqr::min_eigenvalue_sym(S) > -1e-9);
  // Fixed point of the forward map with forcing in the last slot only.
  auto g = dlqr::g_map(ref, Mat::Zero(1, 2), big.S);
  for (int i = 0; i <= ref.d; ++i) {
    Mat forcing = (i == ref.d) ? Mat(Mat::Identity(2, 2)) : Mat(Mat::Zero(2, 2));
    CHECK((big.S[i] - g[i] - forcing).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("f_map and g_map are the two faces of the assembled operator") {
  dlqr::StreamRng rng(42, 0);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 1 + static_cast<int>(rng.next_u64() % 3);
    const int m = 1 + static_cast<int>(rng.next_u64() % 2);
    const int d = 1 + static_cast<int>(rng.next_u64() % 3);
    auto model = random_model(rng, n, m, d, 0.9);
    Mat K(m, n);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) K(i, j) = 0.3 * rng.next_normal();
    auto op = dlqr::build_closed_loop_operator(model, K);

    std::vector<Mat> P, M;
    for (int i = 0; i <= d; ++i) {
      P.push_back(random_sym(rng, n));
      M.push_back(random_sym(rng, n));
    }
    // Backward map is the transpose action, forward map the plain action.
    Vec fv = stack_vec(dlqr::f_map(model, K, P));
    Vec gv = stack_vec(dlqr::g_map(model, K, M));
    CHECK((fv - op.assembled.transpose() * stack_vec(P)).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((gv - op.assembled * stack_vec(M)).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(dlqr::duality_gap(model, K, P, M) < 1e-10);
  }

  // Degenerate inputs.
  auto model = reference_model();
  std::vector<Mat> zeros(3, Mat::Zero(2, 2));
  std::vector<Mat> eyes(3, Mat::Identity(2, 2));
  CHECK(dlqr::duality_gap(model, Mat::Zero(1, 2), zeros, eyes) == 0.0);
  CHECK(dlqr::duality_gap(model, Mat::Zero(1, 2), eyes, eyes) < 1e-10);
}

TEST_CASE("solve_reduced_pair agrees with the full stack") {
  auto model = reference_model();
  Mat Q = reference_Q();
  std::vector<Mat> Qstack = {Q, Q, Q};
  auto full = dlqr::solve_lyapunov_stack(model, Mat::Zero(1, 2), Qstack);
  auto [p0, pd] = dlqr::solve_reduced_pair(model, Mat::Zero(1, 2), Q, Q);
  CHECK((p0 - full.P[0]).cwiseAbs().maxCoeff() < 1e-9);
  CHECK((pd - full.P[2]).cwiseAbs().maxCoeff() < 1e-9);

  auto scal = scalar_model();
  Mat K = 0.2 * Mat::Identity(1, 1);
  auto [s0, s1] =
      dlqr::solve_reduced_pair(scal, K, 1.04 * Mat::Identity(1, 1), Mat::Identity(1, 1));
  CHECK(s0(0, 0) == doctest::Approx(9.0 / 7.0).epsilon(1e-12));
  CHECK(s1(0, 0) == doctest::Approx(8.0 / 7.0).epsilon(1e-12));

  // Without a state noise channel the first component telescopes exactly.
  auto quiet = reference_model();
  quiet.Abar.setZero();
  auto [q0, qd] = dlqr::solve_reduced_pair(quiet, Mat::Zero(1, 2), Q, Q);
  Mat Ad = quiet.A * quiet.A;
  Mat direct = Ad.transpose() * qd * Ad + Q + quiet.A.transpose() * Q * quiet.A;
  CHECK((q0 - direct).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("spectral verdict matches long-run moment behaviour") {
  dlqr::StreamRng rng(7, 0);
  int checked = 0, attempts = 0;
  while (checked < 40 && attempts < 4000) {
    ++attempts;
    const int n = 1 + static_cast<int>(rng.next_u64() % 3);
    const int m = 1 + static_cast<int>(rng.next_u64() % 2);
    const int d = 1 + static_cast<int>(rng.next_u64() % 3);
    const double scale = 0.3 + rng.next_open_unit();
    auto model = random_model(rng, n, m, d, scale);
    Mat K(m, n);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) K(i, j) = 0.2 * rng.next_normal();
    auto verdict = dlqr::is_ms_stabilizing(model, K);
    if (verdict.spectral_radius > 0.98 && verdict.spectral_radius < 1.02) continue;
    ++checked;

    std::vector<Mat> moments(d + 1, Mat::Identity(n, n));
    const double init_trace = static_cast<double>(n) * (d + 1);
    bool grew = false;
    double final_trace = init_trace;
    for (int chunk = 0; chunk < 30 && !grew; ++chunk) {
      auto stacks = dlqr::propagate_second_moments(model, K, moments, 100);
      moments = stacks.back();
      final_trace = 0;
      for (const auto& X : moments) {
        if (!X.allFinite()) grew = true;
        final_trace += X.trace();
      }
      grew = grew || final_trace > 10.0 * init_trace;
    }
    if (verdict.spectral_radius < 0.98) {
      CHECK_FALSE(grew);
      CHECK(final_trace < 1e-5 * init_trace);
    } else {
      CHECK(grew);
    }
  }
  CHECK(checked == 40);
}

TEST_CASE("assembled operator advances simulated moment stacks") {
  auto model = reference_model();
  Mat K(1, 2);
  K << 0.3, -0.1;
  REQUIRE(dlqr::is_ms_stabilizing(model, K).stabilizing);
  auto op = dlqr::build_closed_loop_operator(model, K);

  Vec x0(2);
  x0 << 0.4, 0.6;
  std::vector<Mat> init(model.d + 1, x0 * x0.transpose());
  auto stacks = dlqr::propagate_second_moments(model, K, init, 12);
  const int n2 = 4;
  for (int k = 0; k + 1 <= 12; ++k) {
    auto innov = [&](const std::vector<Mat>& X) {
      Vec z(n2 * (model.d + 1));
      for (int i = 0; i < model.d; ++i)
        z.segment(i * n2, n2) = dlqr::vec(X[i] - X[i + 1]);
      z.segment(model.d * n2, n2) = dlqr::vec(X[model.d]);
      return z;
    };
    Vec lhs = op.assembled * innov(stacks[k]);
    CHECK((lhs - innov(stacks[k + 1])).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("stack value function decreases by the stage cost on average") {
  auto model = reference_model();
  Mat K = Mat::Zero(1, 2);
  Mat Q = reference_Q();
  std::vector<Mat> Qstack = {Q, Q, Q};  // zero gain: no input penalty term
  auto stack = dlqr::solve_lyapunov_stack(model, K, Qstack);

  dlqr::InitialData init;
  init.x0 = Vec(2);
  init.x0 << 0.4, 0.6;
  Vec um2(1), um1(1);
  um2 << -0.2;
  um1 << -0.45;
  init.u_hist = {um2, um1};

  // Pathwise value estimate from the predictor decomposition
  //   V_k = sum_i tr(P^{i-1} (y_{i-1} y_{i-1}' - y_i y_i')) + tr(P^d y_d y_d')
  // with y_j the j-step conditional mean of x_k.
  auto value_at = [&](const dlqr::Trajectory& traj, int k) {
    std::vector<Vec> y(model.d + 1);
    y[0] = traj.states[k];
    for (int j = 1; j <= model.d; ++j) {
      std::vector<Vec> pending(traj.inputs.begin() + (k - j),
                               traj.inputs.begin() + k);
      y[j] = dlqr::predict(model, traj.states[k - j], pending, j);
    }
    double v = y[model.d].dot(stack.P[model.d] * y[model.d]);
    for (int i = 1; i <= model.d; ++i)
      v += y[i - 1].dot(stack.P[i - 1] * y[i - 1]) -
           y[i].dot(stack.P[i - 1] * y[i]);
    return v;
  };

  const int k = 5, rollouts = 20000;
  double sum = 0, sumsq = 0;
  for (int r = 0; r < rollouts; ++r) {
    auto traj = dlqr::simulate(model, init, K, k + 1, {.seed = 99}, r);
    const double diff = value_at(traj, k) - value_at(traj, k + 1) -
                        traj.states[k].dot(Q * traj.states[k]);
    sum += diff;
    sumsq += diff * diff;
  }
  const double mean = sum / rollouts;
  const double se = std::sqrt((sumsq / rollouts - mean * mean) / rollouts);
  CHECK(std::abs(mean) < 3 * se + 1e-12);
}

TEST_CASE("is_monotone_pd flags order and definiteness violations") {
  dlqr::LyapunovStack good;
  good.P = {3.0 * Mat::Identity(2, 2), 2.0 * Mat::Identity(2, 2),
            Mat::Identity(2, 2)};
  CHECK(dlqr::is_monotone_pd(good));

  dlqr::LyapunovStack not_pd = good;
  not_pd.P[2] = Mat::Zero(2, 2);
  CHECK_FALSE(dlqr::is_monotone_pd(not_pd));

  dlqr::LyapunovStack out_of_order = good;
  out_of_order.P[0] = Mat::Identity(2, 2);
  out_of_order.P[1] = 2.0 * Mat::Identity(2, 2);
  CHECK_FALSE(dlqr::is_monotone_pd(out_of_order));
}
