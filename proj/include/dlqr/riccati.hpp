#ifndef DLQR_RICCATI_HPP
#define DLQR_RICCATI_HPP

#include <vector>

#include "dlqr/matrix_kit.hpp"
#include "dlqr/plant.hpp"
#include "dlqr/stability.hpp"

namespace dlqr {

// One policy-iteration step as recorded for monitoring: the gain, its
// closed-loop spectral radius, the evaluation stack, and the infinity-norm
// move from the previous gain (infinity for the initial entry).
struct PolicyIterate {
  Mat K;
  double spectral_radius = 0;
  LyapunovStack stack;
  double gain_step = 0;
};

// Converged output of solve_optimal. Upsilon and M are assembled from the
// final stack, so K = Upsilon^{-1} M holds up to the reported residual.
struct PolicySolution {
  LyapunovStack stack;  // P^0..P^d evaluated at the final gain
  Mat K;                // m x n
  Mat Upsilon;          // R + B'P^d B + Bbar'P^0 Bbar
  Mat M;                // B'P^d A + Bbar'P^0 Abar
  int iterations = 0;   // improvement steps performed
  double residual = 0;  // worst equation / gain-consistency defect
  std::vector<PolicyIterate> history;  // initial gain first
};

// Policy evaluation: the Lyapunov stack of the fixed gain K, i.e.
// solve_lyapunov_stack with forcing Q in slots 0..d-1 and Q + K'RK last.
LyapunovStack evaluate_policy(const SystemModel& model,
                              const CostWeights& weights, const Mat& K);

struct GainIngredients {
  Mat Upsilon;
  Mat M;
};

GainIngredients gain_ingredients(const SystemModel& model,
                                 const CostWeights& weights,
                                 const LyapunovStack& stack);

// The unique minimizer of the one-step quadratic form at the given stack.
// Throws degenerate_error when Upsilon has an eigenvalue at or below 1e-12.
Mat policy_improvement(const SystemModel& model, const CostWeights& weights,
                       const LyapunovStack& stack);

// Alternates evaluate_policy and policy_improvement from K0 until the gain
// moves less than tol in the infinity norm. Every iterate is checked to be
// mean-square stabilizing with a positive definite stack that does not
// increase (slack 1e-8); violations indicate an assembly bug and raise
// numerical_error. A non-stabilizing K0 raises not_stabilizing_error,
// running out of iterations raises nonconvergence_error.
PolicySolution solve_optimal(const SystemModel& model,
                             const CostWeights& weights, const Mat& K0,
                             double tol = 1e-10, int max_iter = 500);

// Quadratic value of one realized decomposition: predictors holds
// y_0..y_d where y_j is the j-step conditional mean of the state (y_0 the
// state itself) and
//   V = y_d'P^d y_d + sum_i (y_{i-1}'P^{i-1} y_{i-1} - y_i'P^{i-1} y_i).
// Orthogonality of the increments makes the expectation of this equal the
// closed-loop cost-to-go.
double value_function(const PolicySolution& solution,
                      const std::vector<Vec>& predictors);

// Total expected cost from deterministic initial data, history inputs
// charged during the first d steps included, in closed form.
double value_function(const PolicySolution& solution, const SystemModel& model,
                      const CostWeights& weights, const InitialData& init);

// Equivalent formulation of the same fixed point in accumulated
// coordinates. Pbold[i-1] stores the i-th matrix of the d+1 entries.
struct LegacyRiccatiStack {
  std::vector<Mat> Pbold;
};

// Coordinate change between the two stacks: first slot is shared and the
// remaining legacy entries are reversed consecutive differences. Linear,
// bijective, and summing the legacy stack recovers the last P.
LegacyRiccatiStack convert_legacy(const LyapunovStack& stack);
LyapunovStack invert_legacy(const LegacyRiccatiStack& legacy);

// Worst infinity-norm defect of the accumulated-form equations evaluated
// at the given legacy stack, with Upsilon and M assembled from it.
// Certifies that a converged solution also solves the original system.
double legacy_residual(const SystemModel& model, const CostWeights& weights,
                       const LegacyRiccatiStack& legacy);

}  // namespace dlqr

#endif  // DLQR_RICCATI_HPP
