#include "dlqr/riccati.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include "dlqr/errors.hpp"

namespace dlqr {

namespace {

constexpr double kUpsilonFloor = 1e-12;
constexpr double kMonotoneSlack = 1e-8;

void check_gain_shape(const SystemModel& model, const Mat& K,
                      const char* where) {
  if (K.rows() != model.m() || K.cols() != model.n()) {
    std::ostringstream msg;
    msg << where << ": gain must be " << model.m() << "x" << model.n()
        << ", got " << K.rows() << "x" << K.cols();
    throw input_error(msg.str());
  }
}

std::vector<Mat> policy_forcing(const CostWeights& weights, const Mat& K,
                                int d) {
  std::vector<Mat> Qstack(d + 1, weights.Q);
  Qstack[d] = weights.Q + K.transpose() * weights.R * K;
  return Qstack;
}

// Worst defect of the stack equations plus the gain-consistency relation,
// all at the same (stack, K) pair.
double fixed_point_residual(const SystemModel& model,
                            const CostWeights& weights,
                            const LyapunovStack& stack, const Mat& K,
                            const Mat& Upsilon, const Mat& M) {
  const auto Qstack = policy_forcing(weights, K, model.d);
  const auto f = f_map(model, K, stack.P);
  double worst = 0;
  for (int i = 0; i <= model.d; ++i)
    worst = std::max(worst,
                     (stack.P[i] - f[i] - Qstack[i]).cwiseAbs().maxCoeff());
  worst = std::max(worst, (Upsilon * K - M).cwiseAbs().maxCoeff());
  return worst;
}

}  // namespace

LyapunovStack evaluate_policy(const SystemModel& model,
                              const CostWeights& weights, const Mat& K) {
  require_valid(model, weights);
  check_gain_shape(model, K, "evaluate_policy()");
  return solve_lyapunov_stack(model, K, policy_forcing(weights, K, model.d));
}

GainIngredients gain_ingredients(const SystemModel& model,
                                 const CostWeights& weights,
                                 const LyapunovStack& stack) {
  if (static_cast<int>(stack.P.size()) != model.d + 1)
    throw input_error("gain_ingredients(): stack must hold d+1 matrices");
  const Mat& P0 = stack.P.front();
  const Mat& Pd = stack.P.back();
  GainIngredients gi;
  gi.Upsilon = sym_part(weights.R + model.B.transpose() * Pd * model.B +
                        model.Bbar.transpose() * P0 * model.Bbar);
  gi.M = model.B.transpose() * Pd * model.A +
         model.Bbar.transpose() * P0 * model.Abar;
  return gi;
}

Mat policy_improvement(const SystemModel& model, const CostWeights& weights,
                       const LyapunovStack& stack) {
  auto gi = gain_ingredients(model, weights, stack);
  if (min_eigenvalue_sym(gi.Upsilon) <= kUpsilonFloor)
    throw degenerate_error(
        "policy_improvement(): R + B'P^dB + Bbar'P^0Bbar is not positive "
        "definite; the one-step problem has no unique minimizer");
  return gi.Upsilon.ldlt().solve(gi.M);
}

PolicySolution solve_optimal(const SystemModel& model,
                             const CostWeights& weights, const Mat& K0,
                             double tol, int max_iter) {
  require_valid(model, weights);
  check_gain_shape(model, K0, "solve_optimal()");
  if (!(tol > 0)) throw input_error("solve_optimal(): tol must be positive");
  if (max_iter < 1)
    throw input_error("solve_optimal(): max_iter must be at least 1");

  auto verdict = is_ms_stabilizing(model, K0);
  if (!verdict.stabilizing) {
    std::ostringstream msg;
    msg << "solve_optimal(): initial gain is not mean-square stabilizing "
           "(closed-loop spectral radius "
        << verdict.spectral_radius << ")";
    throw not_stabilizing_error(msg.str());
  }

  PolicySolution sol;
  Mat K = K0;
  LyapunovStack stack = evaluate_policy(model, weights, K);
  sol.history.push_back({K, verdict.spectral_radius, stack,
                         std::numeric_limits<double>::infinity()});

  for (int j = 1; j <= max_iter; ++j) {
    Mat K_next = policy_improvement(model, weights, stack);
    const double step = (K_next - K).cwiseAbs().maxCoeff();

    auto v = is_ms_stabilizing(model, K_next);
    if (!v.stabilizing) {
      std::ostringstream msg;
      msg << "solve_optimal(): iterate " << j
          << " lost mean-square stability (radius " << v.spectral_radius
          << "); the equation assembly is inconsistent";
      throw numerical_error(msg.str());
    }
    LyapunovStack next = evaluate_policy(model, weights, K_next);
    for (int i = 0; i <= model.d; ++i) {
      if (min_eigenvalue_sym(next.P[i]) <= 0)
        throw numerical_error(
            "solve_optimal(): evaluation stack lost positive definiteness");
      if (min_eigenvalue_sym(stack.P[i] - next.P[i]) < -kMonotoneSlack) {
        std::ostringstream msg;
        msg << "solve_optimal(): stack increased at iteration " << j
            << " (slot " << i
            << "); monotone convergence is violated, which signals an "
               "assembly bug";
        throw numerical_error(msg.str());
      }
    }

    K = K_next;
    stack = next;
    sol.history.push_back({K, v.spectral_radius, stack, step});
    if (step < tol) {
      sol.stack = stack;
      sol.K = K;
      auto gi = gain_ingredients(model, weights, stack);
      sol.Upsilon = gi.Upsilon;
      sol.M = gi.M;
      sol.iterations = j;
      sol.residual =
          fixed_point_residual(model, weights, stack, K, gi.Upsilon, gi.M);
      return sol;
    }
  }

  std::ostringstream msg;
  msg << "solve_optimal(): no convergence after " << max_iter
      << " iterations; last gain step "
      << sol.history.back().gain_step << ", last gain [" << K << "]";
  throw nonconvergence_error(msg.str());
}

double value_function(const PolicySolution& solution,
                      const std::vector<Vec>& predictors) {
  const auto& P = solution.stack.P;
  if (P.empty()) throw input_error("value_function(): empty solution stack");
  const int d = static_cast<int>(P.size()) - 1;
  if (static_cast<int>(predictors.size()) != d + 1)
    throw input_error(
        "value_function(): need the state plus one predictor per delay step");
  const Vec& deepest = predictors[d];
  double v = deepest.dot(P[d] * deepest);
  for (int i = 1; i <= d; ++i)
    v += predictors[i - 1].dot(P[i - 1] * predictors[i - 1]) -
         predictors[i].dot(P[i - 1] * predictors[i]);
  return v;
}

double value_function(const PolicySolution& solution, const SystemModel& model,
                      const CostWeights& weights, const InitialData& init) {
  require_valid(model, weights);
  const auto& P = solution.stack.P;
  if (static_cast<int>(P.size()) != model.d + 1)
    throw input_error("value_function(): stack does not match the model");
  auto phase = propagate_initial_phase(model, init);

  // Stage costs of the uncontrollable phase: at step s < d the in-flight
  // input u_hist[s] acts regardless of the policy.
  double total = 0;
  for (int s = 0; s < model.d; ++s) {
    total += (weights.Q * phase.state_moments[s]).trace();
    total += init.u_hist[s].dot(weights.R * init.u_hist[s]);
  }
  // Cost-to-go at time d through the orthogonal predictor decomposition.
  total += (P[model.d] * phase.predictor_moments[model.d]).trace();
  for (int i = 1; i <= model.d; ++i)
    total += (P[i - 1] *
              (phase.predictor_moments[i - 1] - phase.predictor_moments[i]))
                 .trace();
  return total;
}

LegacyRiccatiStack convert_legacy(const LyapunovStack& stack) {
  const int d = static_cast<int>(stack.P.size()) - 1;
  if (d < 1) throw input_error("convert_legacy(): stack must hold d+1 >= 2 matrices");
  LegacyRiccatiStack legacy;
  legacy.Pbold.assign(d + 1, Mat());
  legacy.Pbold[0] = stack.P[0];
  // Entry d+2-i is the step P^i - P^{i-1}, filled in reverse order.
  for (int i = 1; i <= d; ++i)
    legacy.Pbold[d + 1 - i] = stack.P[i] - stack.P[i - 1];
  return legacy;
}

LyapunovStack invert_legacy(const LegacyRiccatiStack& legacy) {
  const int d = static_cast<int>(legacy.Pbold.size()) - 1;
  if (d < 1)
    throw input_error("invert_legacy(): stack must hold d+1 >= 2 matrices");
  LyapunovStack stack;
  stack.P.assign(d + 1, Mat());
  stack.P[0] = legacy.Pbold[0];
  for (int i = 1; i <= d; ++i)
    stack.P[i] = stack.P[i - 1] + legacy.Pbold[d + 1 - i];
  return stack;
}

double legacy_residual(const SystemModel& model, const CostWeights& weights,
                       const LegacyRiccatiStack& legacy) {
  const int d = model.d;
  if (static_cast<int>(legacy.Pbold.size()) != d + 1)
    throw input_error("legacy_residual(): stack does not match the model");
  const auto& Pb = legacy.Pbold;
  Mat S = Mat::Zero(model.n(), model.n());
  for (const auto& P : Pb) S += P;
  const Mat Upsilon =
      sym_part(weights.R + model.B.transpose() * S * model.B +
               model.Bbar.transpose() * Pb[0] * model.Bbar);
  if (min_eigenvalue_sym(Upsilon) <= kUpsilonFloor)
    throw degenerate_error(
        "legacy_residual(): the accumulated-form Upsilon is not positive "
        "definite");
  const Mat M = model.B.transpose() * S * model.A +
                model.Bbar.transpose() * Pb[0] * model.Abar;

  const Mat& A = model.A;
  double worst = 0;
  Mat r = Pb[0] - (A.transpose() * Pb[0] * A + A.transpose() * Pb[d] * A +
                   model.Abar.transpose() * Pb[0] * model.Abar + weights.Q);
  worst = std::max(worst, r.cwiseAbs().maxCoeff());
  r = Pb[1] + M.transpose() * Upsilon.ldlt().solve(M);
  worst = std::max(worst, r.cwiseAbs().maxCoeff());
  for (int i = 3; i <= d + 1; ++i) {
    r = Pb[i - 1] - A.transpose() * Pb[i - 2] * A;
    worst = std::max(worst, r.cwiseAbs().maxCoeff());
  }
  return worst;
}

}  // namespace dlqr
