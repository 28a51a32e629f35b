#ifndef DLQR_PLANT_HPP
#define DLQR_PLANT_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "dlqr/matrix_kit.hpp"

namespace dlqr {

// Discrete-time plant x_{k+1} = (A + w_k Abar) x_k + (B + w_k Bbar) u_{k-d}
// with scalar white noise w (zero mean, unit variance) and input delay d >= 1.
struct SystemModel {
  Mat A;     // n x n
  Mat Abar;  // n x n, noise-scaled state coefficient
  Mat B;     // n x m
  Mat Bbar;  // n x m, noise-scaled input coefficient
  int d = 1;

  int n() const { return static_cast<int>(A.rows()); }
  int m() const { return static_cast<int>(B.cols()); }
};

// Stage cost x'Qx + u'Ru. Q must be PSD, R must be PD.
struct CostWeights {
  Mat Q;  // n x n
  Mat R;  // m x m
};

// State at time 0 plus the d inputs already in flight (u_{-d}..u_{-1}).
struct InitialData {
  Vec x0;
  std::vector<Vec> u_hist;
};

enum class NoiseDistribution { gaussian, rademacher };

// Plant noise w_k always has zero mean and unit variance; the distribution
// hook exists for robustness experiments.
struct NoiseSpec {
  std::uint64_t seed = 0;
  NoiseDistribution distribution = NoiseDistribution::gaussian;
};

// One realized rollout. inputs is indexed by application time: inputs[j]
// holds u_{j-d}, the input that acts in the transition from step j, so
// inputs[0..d-1] echo u_hist and inputs[j] for j >= d are the controller's
// decisions u_{j-d}.
struct Trajectory {
  std::vector<Vec> states;     // x_0..x_N
  std::vector<Vec> inputs;     // u_{-d}..u_{N-d} at applied-time indices 0..N
  std::vector<double> noises;  // w_0..w_{N-1}
  std::uint64_t seed = 0;
  std::uint64_t stream = 0;
};

struct ValidationReport {
  bool ok = true;
  std::vector<std::string> issues;
};

// Dimension and definiteness checks; failures are reported, not thrown.
ValidationReport validate_model(const SystemModel& model, const CostWeights& weights);

// Throws input_error with the first reported issue. Convenience for
// entry points that cannot proceed on invalid data.
void require_valid(const SystemModel& model, const CostWeights& weights);

// Conditional-mean propagation through the noise-free part: applies
// x <- A x + B u once per pending input, in order. Only (A, B) are read;
// the noise-scaled coefficients never enter a prediction. steps must
// equal the number of pending inputs and lie in 1..d+1.
Vec predict(const SystemModel& model, const Vec& x,
            const std::vector<Vec>& pending, int steps);

// Closed-loop simulation under the predictor feedback
//   u_s = -K * (mean of x_{s+d} given x_s and the d in-flight inputs) + e_s,
// with e the optional exploration sequence (entries beyond its length are
// zero). Plant noise is drawn from a (seed, stream) RNG stream so parallel
// rollouts replay independently. Throws divergence_error if any |x| grows
// past 1e12.
Trajectory simulate(const SystemModel& model, const InitialData& init,
                    const Mat& K, int horizon, const NoiseSpec& noise,
                    std::uint64_t stream = 0,
                    const std::vector<Vec>* exploration = nullptr);

// Open-loop variant: decisions u_0..u_{horizon-d} supplied directly.
Trajectory simulate(const SystemModel& model, const InitialData& init,
                    const std::vector<Vec>& decisions, int horizon,
                    const NoiseSpec& noise, std::uint64_t stream = 0);

// Exact propagation of the predictor second moments
//   X^i_k = E[ x_k|_{k-i-1} x_k|_{k-i-1}' ],  i = 0..d,
// under u = -K x_{k|k-d-1} (no exploration). Cross moments between
// predictor depths collapse onto the diagonal by the tower property,
// so the stack recursion is closed. Returns stacks for k = 0..horizon,
// index 0 being the supplied initial stack.
std::vector<std::vector<Mat>> propagate_second_moments(
    const SystemModel& model, const Mat& K,
    const std::vector<Mat>& initial_moments, int horizon);

// Moment bookkeeping for the first d steps, where the in-flight history
// inputs act and no feedback decision has taken effect yet.
struct InitialPhase {
  std::vector<Vec> state_means;       // E[x_s], s = 0..d
  std::vector<Mat> state_moments;     // E[x_s x_s'], s = 0..d
  std::vector<Mat> predictor_moments; // X^i at k = d, i = 0..d
};

// Exact means and second moments of x_0..x_d driven by u_hist alone,
// plus the depth-i predictor moments of x_d needed to seed
// propagate_second_moments or evaluate a value function at time d.
InitialPhase propagate_initial_phase(const SystemModel& model,
                                     const InitialData& init);

struct CostEstimate {
  double mean = 0;
  double standard_error = 0;
};

// Monte-Carlo estimate of J = E sum_k (x_k'Q x_k + u_{k-d}'R u_{k-d}),
// truncated at the horizon. The stage cost pairs the state with the input
// applied at that same step, so the history inputs are charged during the
// first d steps. Rollout r uses RNG stream r.
CostEstimate estimate_cost(const SystemModel& model, const CostWeights& weights,
                           const InitialData& init, const Mat& K, int horizon,
                           int rollouts, const NoiseSpec& noise);

}  // namespace dlqr

#endif  // DLQR_PLANT_HPP
