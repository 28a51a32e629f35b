#ifndef DLQR_LEARNER_HPP
#define DLQR_LEARNER_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dlqr/matrix_kit.hpp"
#include "dlqr/plant.hpp"
#include "dlqr/stability.hpp"

namespace dlqr {

// The slice of the dynamics the learner is allowed to know. The
// noise-scaled coefficients are deliberately absent: predictions use only
// (A, B), and everything else must come out of the data.
struct KnownDynamics {
  Mat A;
  Mat B;
  int d = 1;

  int n() const { return static_cast<int>(A.rows()); }
  int m() const { return static_cast<int>(B.cols()); }
};

// Opaque plant access. The learner can ask for closed-loop exploration
// rollouts and read the realized trajectories, nothing more, so the hidden
// coefficients cannot leak into the learning path. The exact stability
// check is an optional harness-mode hook: a simulation backend that does
// hold the full model may answer it, a physical plant cannot.
class RolloutSource {
 public:
  virtual ~RolloutSource() = default;

  // `batch_tag` distinguishes independent collections (fresh noise and
  // exploration streams per tag). Rollouts run u = -K x_pred + e with
  // i.i.d. Gaussian exploration e of the given variance.
  virtual std::vector<Trajectory> collect(const Mat& K, int horizon,
                                          int rollouts,
                                          double exploration_variance,
                                          std::uint64_t batch_tag) = 0;

  virtual std::optional<StabilityVerdict> exact_stability(const Mat&) {
    return std::nullopt;
  }
};

// Simulation-backed source. Owns the full model (including the hidden
// coefficients) and the experiment's initial data; hands out trajectories
// only. Exploration is drawn from a stream separate from the plant noise
// so that rollouts replay deterministically per (seed, batch, index).
class SimulatedPlant : public RolloutSource {
 public:
  SimulatedPlant(SystemModel model, InitialData init, std::uint64_t seed,
                 NoiseDistribution distribution = NoiseDistribution::gaussian,
                 bool expose_exact_stability = true);

  std::vector<Trajectory> collect(const Mat& K, int horizon, int rollouts,
                                  double exploration_variance,
                                  std::uint64_t batch_tag) override;

  std::optional<StabilityVerdict> exact_stability(const Mat& K) override;

 private:
  SystemModel model_;
  InitialData init_;
  std::uint64_t seed_;
  NoiseDistribution distribution_;
  bool expose_exact_stability_;
};

struct LearnConfig {
  Mat K0;                            // initial stabilizing gain
  double exploration_variance = 1;   // >= 0; zero starves the regression
  int rollouts = 100;
  int k1 = 0;                        // first data index considered
  int k2 = 40;                       // collection horizon (exclusive row end)
  double tol = 1e-4;                 // stop when the gain moves less
  int max_policy_iters = 50;
  std::uint64_t seed = 0;
  double ridge = 0;                  // optional Tikhonov weight
  bool reuse_single_batch = false;   // evaluate every iterate on batch 0 only
};

// Regression system Theta * theta = Gamma with theta the packed unknown
// [svec(P^0)..svec(P^d); vec(Mhat); svec(Nhat)]. Rows are per time index,
// already averaged across rollouts.
struct LearningDataset {
  Mat Theta;
  Vec Gamma;
  int row_count = 0;
  int unknown_count = 0;
};

struct PolicyEvalResult {
  LyapunovStack stack;
  Mat Nhat;              // estimate of B'P^dB + Bbar'P^0Bbar (no R offset)
  Mat Mhat;              // estimate of B'P^dA + Bbar'P^0Abar
  double residual_norm = 0;
  int theta_rank = 0;
  double condition = 0;
};

struct LearnIteration {
  Mat K;                 // gain the data was collected under
  double gain_step = 0;  // infinity-norm move of the update
  double residual_norm = 0;
  int theta_rank = 0;
  double condition = 0;
};

struct LearnReport {
  std::vector<Mat> gains;  // K_0..K_J, final update included
  std::vector<LearnIteration> iterations;
  PolicyEvalResult final_eval;
  Mat K;
  int policy_iterations = 0;
  bool converged = false;
  std::string stability_probe;  // how K_0 was vetted, and the measurement
};

// (l1, l2): unknowns in the delay-native parameterization vs the
// state-augmented one. The gap is the bookkeeping the predictor saves.
std::pair<int, int> parameter_counts(int n, int m, int d);

// Everything one regression row needs: states x_{k-d}..x_{k+1} and the
// inputs applied at times k-d..k (the last one is u_{k-d} itself).
struct RegressionWindow {
  std::vector<Vec> states;
  std::vector<Vec> inputs;
};

RegressionWindow window_at(const Trajectory& traj, int k, int d);

// One sample of the value-decrement identity at time k: z picks up the
// predictor innovation quadratics for each stack slot plus the cross and
// input regressors for (Mhat, Nhat); r is the realized stage cost under
// K_j. For the true parameters, E[z'theta - r] = 0, and the equality is
// pathwise when the plant is noise free.
std::pair<Vec, double> build_regression_row(const RegressionWindow& window,
                                            const Mat& Kj,
                                            const KnownDynamics& known,
                                            const CostWeights& weights);

// Rows for k in [max(d, k1), k2), each averaged across the rollouts in
// fixed order with compensated summation, so assembly is deterministic and
// independent of any collection-side parallelism.
LearningDataset assemble_dataset(const std::vector<Trajectory>& rollouts,
                                 const Mat& Kj, const KnownDynamics& known,
                                 const CostWeights& weights, int k1, int k2);

Vec pack_theta(const LyapunovStack& stack, const Mat& Mhat, const Mat& Nhat);

struct ThetaParts {
  LyapunovStack stack;
  Mat Mhat;
  Mat Nhat;
};

ThetaParts unpack_theta(const Vec& theta, int n, int m, int d);

// Batch least squares on the dataset via SVD, minimum-norm when rank
// deficient. Rank (at 1e-8 relative threshold) and condition are always
// reported; a rank below l1 raises insufficient_excitation_error unless a
// positive ridge regularizes the solve.
PolicyEvalResult policy_evaluation_ls(const LearningDataset& dataset,
                                      const Mat& Kj,
                                      const CostWeights& weights,
                                      double ridge = 0);

// Alternative evaluation that eliminates the chain unknowns using the
// known (A, B): the stack is parameterized by (P^d, G, H, L) with
//   P^{i-1} = A'P^i A + G + Q,  Mhat = B'P^d A + H,  Nhat = B'P^d B + L,
// where (G, H, L) absorb the hidden-coefficient terms. Minimum-norm least
// squares in the reduced coordinates; exact on noise-free data whose
// excitation cannot span the full parameterization.
PolicyEvalResult policy_evaluation_reduced(const LearningDataset& dataset,
                                           const Mat& Kj,
                                           const KnownDynamics& known,
                                           const CostWeights& weights,
                                           double ridge = 0);

// K_{j+1} = (R + Nhat)^{-1} Mhat. Throws degenerate_error when R + Nhat
// is not positive definite (a symptom of too little data).
Mat policy_update(const PolicyEvalResult& result, const CostWeights& weights);

// Algorithm: probe K_0, then iterate collect / evaluate / update until the
// gain settles within tol or the iteration budget runs out (reported, not
// an error). Fresh data is collected for every iterate and all batches are
// replayed, rebuilt against the current gain, so the regression keeps all
// excitation gathered so far. reuse_single_batch restricts everything to
// the first batch instead.
LearnReport learn(RolloutSource& source, const KnownDynamics& known,
                  const CostWeights& weights, const LearnConfig& config);

}  // namespace dlqr

#endif  // DLQR_LEARNER_HPP
