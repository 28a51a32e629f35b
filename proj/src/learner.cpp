#include "dlqr/learner.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "dlqr/errors.hpp"
#include "dlqr/rng.hpp"

namespace dlqr {

namespace {

constexpr double kRankTol = 1e-8;
constexpr double kCurvatureFloor = 1e-12;
constexpr std::uint64_t kProbeTag = ~std::uint64_t{0};
constexpr std::uint64_t kExplorationSalt = 0x9e3779b97f4a7c15ull;

int svec_len(int n) { return n * (n + 1) / 2; }

// Noise-free mean propagation with the known coefficients only.
Vec mean_forward(const KnownDynamics& known, Vec x,
                 const std::vector<Vec>::const_iterator first, int count) {
  for (int t = 0; t < count; ++t) x = known.A * x + known.B * *(first + t);
  return x;
}

void check_known(const KnownDynamics& known, const CostWeights& weights,
                 const Mat& Kj) {
  if (known.A.rows() != known.A.cols() || known.B.rows() != known.A.rows())
    throw input_error("learner: known (A, B) dimensions are inconsistent");
  if (known.d < 1) throw input_error("learner: delay must be at least 1");
  if (Kj.rows() != known.m() || Kj.cols() != known.n())
    throw input_error("learner: gain does not match the known dimensions");
  if (weights.Q.rows() != known.n() || weights.R.rows() != known.m())
    throw input_error("learner: cost weights do not match the known dimensions");
}

}  // namespace

std::pair<int, int> parameter_counts(int n, int m, int d) {
  if (n < 1 || m < 1 || d < 1)
    throw input_error("parameter_counts(): dimensions must be positive");
  const int l1 = n * (n + 1) * (d + 1) / 2 + m * (m + 1) / 2 + m * n;
  const int aug = d * m + n;  // state dimension after input augmentation
  const int l2 = aug * (aug + 1) / 2 + m * (m + 1) / 2 + m * aug;
  return {l1, l2};
}

RegressionWindow window_at(const Trajectory& traj, int k, int d) {
  if (k < d || k + 1 >= static_cast<int>(traj.states.size()) ||
      k >= static_cast<int>(traj.inputs.size()))
    throw input_error("window_at(): time index has no complete window");
  RegressionWindow w;
  w.states.assign(traj.states.begin() + (k - d), traj.states.begin() + (k + 2));
  w.inputs.assign(traj.inputs.begin() + (k - d), traj.inputs.begin() + (k + 1));
  return w;
}

std::pair<Vec, double> build_regression_row(const RegressionWindow& window,
                                            const Mat& Kj,
                                            const KnownDynamics& known,
                                            const CostWeights& weights) {
  check_known(known, weights, Kj);
  const int n = known.n(), m = known.m(), d = known.d;
  if (static_cast<int>(window.states.size()) != d + 2 ||
      static_cast<int>(window.inputs.size()) != d + 1)
    throw input_error("build_regression_row(): incomplete window");
  for (const auto& x : window.states)
    if (x.size() != n) throw input_error("build_regression_row(): state size");
  for (const auto& u : window.inputs)
    if (u.size() != m) throw input_error("build_regression_row(): input size");

  // j-step conditional means of x_k and x_{k+1}; index 0 is the realized
  // state itself. window.states[d] is x_k, window.inputs[j] acts at k-d+j.
  std::vector<Vec> yk(d + 1), yk1(d + 1);
  yk[0] = window.states[d];
  yk1[0] = window.states[d + 1];
  for (int j = 1; j <= d; ++j) {
    yk[j] = mean_forward(known, window.states[d - j],
                         window.inputs.begin() + (d - j), j);
    yk1[j] = mean_forward(known, window.states[d + 1 - j],
                          window.inputs.begin() + (d + 1 - j), j);
  }

  const int sv_n = svec_len(n);
  const auto [l1, l2] = parameter_counts(n, m, d);
  (void)l2;
  Vec z(l1);
  int offset = 0;
  // Innovation quadratics: depth-(i-1) minus depth-i outer products, k vs
  // k+1, pairing svec(P^{i-1}); the deepest predictor pairs svec(P^d).
  for (int i = 1; i <= d; ++i) {
    Mat block = (yk[i - 1] * yk[i - 1].transpose() -
                 yk[i] * yk[i].transpose()) -
                (yk1[i - 1] * yk1[i - 1].transpose() -
                 yk1[i] * yk1[i].transpose());
    z.segment(offset, sv_n) = svec_weighted(block);
    offset += sv_n;
  }
  const Vec& xhat = yk[d];
  const Vec& xhat1 = yk1[d];
  z.segment(offset, sv_n) =
      svec_weighted(xhat * xhat.transpose() - xhat1 * xhat1.transpose());
  offset += sv_n;

  // Cross regressor pairing vec(Mhat): vanishes on-policy, which is what
  // lets exploration alone identify the off-policy direction.
  const Vec& u = window.inputs[d];
  Mat cross = 2.0 * (u + Kj * xhat) * xhat.transpose();
  z.segment(offset, m * n) = vec(cross);
  offset += m * n;
  // Input-curvature regressor pairing svec(Nhat).
  Mat curv = u * u.transpose() - (Kj * xhat) * (Kj * xhat).transpose();
  z.segment(offset, svec_len(m)) = svec_weighted(curv);

  const Vec Kx = Kj * xhat;
  const double r = Kx.dot(weights.R * Kx) + yk[0].dot(weights.Q * yk[0]);
  return {z, r};
}

LearningDataset assemble_dataset(const std::vector<Trajectory>& rollouts,
                                 const Mat& Kj, const KnownDynamics& known,
                                 const CostWeights& weights, int k1, int k2) {
  check_known(known, weights, Kj);
  if (rollouts.empty())
    throw input_error("assemble_dataset(): no rollouts supplied");
  const int kstart = std::max(known.d, k1);
  if (k2 - 1 < kstart)
    throw input_error("assemble_dataset(): window yields no regression rows");
  for (const auto& traj : rollouts)
    if (static_cast<int>(traj.states.size()) < k2 + 1)
      throw input_error("assemble_dataset(): rollout shorter than the window");

  const auto [l1, l2] = parameter_counts(known.n(), known.m(), known.d);
  (void)l2;
  LearningDataset ds;
  ds.unknown_count = l1;
  ds.row_count = k2 - kstart;
  ds.Theta = Mat(ds.row_count, l1);
  ds.Gamma = Vec(ds.row_count);

  // Average across rollouts in index order with compensated summation, so
  // the reduction is deterministic no matter how collection was scheduled.
  const double scale = 1.0 / static_cast<double>(rollouts.size());
  for (int k = kstart; k < k2; ++k) {
    Vec zsum = Vec::Zero(l1), zcomp = Vec::Zero(l1);
    double rsum = 0, rcomp = 0;
    for (const auto& traj : rollouts) {
      auto [z, r] = build_regression_row(window_at(traj, k, known.d), Kj,
                                         known, weights);
      Vec y = z - zcomp;
      Vec t = zsum + y;
      zcomp = (t - zsum) - y;
      zsum = t;
      const double ry = r - rcomp;
      const double rt = rsum + ry;
      rcomp = (rt - rsum) - ry;
      rsum = rt;
    }
    ds.Theta.row(k - kstart) = (scale * zsum).transpose();
    ds.Gamma[k - kstart] = scale * rsum;
  }
  return ds;
}

Vec pack_theta(const LyapunovStack& stack, const Mat& Mhat, const Mat& Nhat) {
  const int n = static_cast<int>(Mhat.cols());
  const int m = static_cast<int>(Mhat.rows());
  const int d = static_cast<int>(stack.P.size()) - 1;
  Vec theta(parameter_counts(n, m, d).first);
  int offset = 0;
  for (const auto& P : stack.P) {
    theta.segment(offset, svec_len(n)) = svec(P);
    offset += svec_len(n);
  }
  theta.segment(offset, m * n) = vec(Mhat);
  offset += m * n;
  theta.segment(offset, svec_len(m)) = svec(Nhat);
  return theta;
}

ThetaParts unpack_theta(const Vec& theta, int n, int m, int d) {
  if (theta.size() != parameter_counts(n, m, d).first)
    throw input_error("unpack_theta(): length does not match the dimensions");
  ThetaParts parts;
  int offset = 0;
  for (int i = 0; i <= d; ++i) {
    parts.stack.P.push_back(unsvec(theta.segment(offset, svec_len(n)), n));
    offset += svec_len(n);
  }
  parts.Mhat = unvec(theta.segment(offset, m * n), m, n);
  offset += m * n;
  parts.Nhat = unsvec(theta.segment(offset, svec_len(m)), m);
  return parts;
}

namespace {

struct SpectrumInfo {
  int rank = 0;
  double condition = 0;
};

SpectrumInfo spectrum_of(const Mat& Theta) {
  Eigen::BDCSVD<Mat> svd(Theta);
  const auto& s = svd.singularValues();
  SpectrumInfo info;
  if (s.size() == 0 || s[0] == 0.0) {
    info.condition = std::numeric_limits<double>::infinity();
    return info;
  }
  const double floor = kRankTol * s[0];
  for (int i = 0; i < s.size(); ++i)
    if (s[i] > floor) ++info.rank;
  const double smin = s[s.size() - 1];
  info.condition = smin > 0 ? s[0] / smin
                            : std::numeric_limits<double>::infinity();
  return info;
}

// Minimum-norm least squares, optionally on ridge-augmented rows
// [Theta; sqrt(ridge) I] against [Gamma; 0].
Vec ls_solve(const Mat& Theta, const Vec& Gamma, double ridge) {
  if (ridge == 0) return lstsq(Theta, Gamma, kRankTol).x;
  const int cols = static_cast<int>(Theta.cols());
  Mat aug(Theta.rows() + cols, cols);
  aug.topRows(Theta.rows()) = Theta;
  aug.bottomRows(cols) = std::sqrt(ridge) * Mat::Identity(cols, cols);
  Vec rhs = Vec::Zero(aug.rows());
  rhs.head(Theta.rows()) = Gamma;
  return lstsq(aug, rhs, kRankTol).x;
}

void check_dataset(const LearningDataset& dataset, double ridge) {
  if (dataset.Theta.rows() != dataset.row_count ||
      dataset.Theta.cols() != dataset.unknown_count ||
      dataset.Gamma.size() != dataset.row_count)
    throw input_error("policy evaluation: dataset fields are inconsistent");
  if (ridge < 0) throw input_error("policy evaluation: ridge must be >= 0");
}

}  // namespace

PolicyEvalResult policy_evaluation_ls(const LearningDataset& dataset,
                                      const Mat& Kj,
                                      const CostWeights& weights,
                                      double ridge) {
  (void)weights;
  check_dataset(dataset, ridge);
  if (dataset.row_count < dataset.unknown_count)
    throw input_error("policy_evaluation_ls(): need at least one row per unknown");

  auto info = spectrum_of(dataset.Theta);
  if (info.rank < dataset.unknown_count && ridge == 0) {
    std::ostringstream msg;
    msg << "policy_evaluation_ls(): regression rank " << info.rank
        << " is below the " << dataset.unknown_count
        << " unknowns; the exploration did not excite every direction";
    throw insufficient_excitation_error(msg.str());
  }

  Vec theta = ls_solve(dataset.Theta, dataset.Gamma, ridge);
  const int m = static_cast<int>(Kj.rows());
  const int n = static_cast<int>(Kj.cols());
  const int sv_n = svec_len(n);
  const int d = (dataset.unknown_count - m * n - svec_len(m)) / sv_n - 1;

  PolicyEvalResult result;
  auto parts = unpack_theta(theta, n, m, d);
  result.stack = std::move(parts.stack);
  result.Mhat = std::move(parts.Mhat);
  result.Nhat = sym_part(parts.Nhat);
  result.residual_norm = (dataset.Theta * theta - dataset.Gamma).norm();
  result.theta_rank = info.rank;
  result.condition = info.condition;
  return result;
}

PolicyEvalResult policy_evaluation_reduced(const LearningDataset& dataset,
                                           const Mat& Kj,
                                           const KnownDynamics& known,
                                           const CostWeights& weights,
                                           double ridge) {
  check_known(known, weights, Kj);
  check_dataset(dataset, ridge);
  const int n = known.n(), m = known.m(), d = known.d;
  const int sv_n = svec_len(n), sv_m = svec_len(m);
  const int lred = 2 * sv_n + m * n + sv_m;

  // theta_full = T * [svec(P^d); svec(G); vec(H); svec(L)] + c, where the
  // chain P^{i-1} = A'P^i A + G + Q and the (Mhat, Nhat) definitions are
  // rolled out with the known coefficients.
  auto expand = [&](const Mat& Pd, const Mat& G, const Mat& H, const Mat& L,
                    const Mat& Qterm) {
    LyapunovStack stack;
    stack.P.assign(d + 1, Mat());
    stack.P[d] = Pd;
    for (int i = d; i >= 1; --i)
      stack.P[i - 1] = known.A.transpose() * stack.P[i] * known.A + G + Qterm;
    Mat Mh = known.B.transpose() * Pd * known.A + H;
    Mat Nh = known.B.transpose() * Pd * known.B + L;
    return pack_theta(stack, Mh, Nh);
  };

  const Mat zn = Mat::Zero(n, n), zmn = Mat::Zero(m, n), zm = Mat::Zero(m, m);
  const Vec c = expand(zn, zn, zmn, zm, weights.Q);
  Mat T(dataset.unknown_count, lred);
  for (int t = 0; t < lred; ++t) {
    Vec e = Vec::Zero(lred);
    e[t] = 1.0;
    Mat Pd = unsvec(e.segment(0, sv_n), n);
    Mat G = unsvec(e.segment(sv_n, sv_n), n);
    Mat H = unvec(e.segment(2 * sv_n, m * n), m, n);
    Mat L = unsvec(e.segment(2 * sv_n + m * n, sv_m), m);
    T.col(t) = expand(Pd, G, H, L, zn);
  }

  Mat ThetaRed = dataset.Theta * T;
  Vec rhs = dataset.Gamma - dataset.Theta * c;
  auto info = spectrum_of(ThetaRed);
  Vec red = ls_solve(ThetaRed, rhs, ridge);
  Vec theta = T * red + c;

  PolicyEvalResult result;
  auto parts = unpack_theta(theta, n, m, d);
  result.stack = std::move(parts.stack);
  result.Mhat = std::move(parts.Mhat);
  result.Nhat = sym_part(parts.Nhat);
  result.residual_norm = (dataset.Theta * theta - dataset.Gamma).norm();
  result.theta_rank = info.rank;  // rank of the reduced regressor
  result.condition = info.condition;
  return result;
}

Mat policy_update(const PolicyEvalResult& result, const CostWeights& weights) {
  const Mat Upsilon = sym_part(weights.R + result.Nhat);
  if (min_eigenvalue_sym(Upsilon) <= kCurvatureFloor)
    throw degenerate_error(
        "policy_update(): R + Nhat is not positive definite; the evaluation "
        "is too noisy or underfed to define an improvement");
  return Upsilon.ldlt().solve(result.Mhat);
}

SimulatedPlant::SimulatedPlant(SystemModel model, InitialData init,
                               std::uint64_t seed,
                               NoiseDistribution distribution,
                               bool expose_exact_stability)
    : model_(std::move(model)),
      init_(std::move(init)),
      seed_(seed),
      distribution_(distribution),
      expose_exact_stability_(expose_exact_stability) {}

std::vector<Trajectory> SimulatedPlant::collect(const Mat& K, int horizon,
                                                int rollouts,
                                                double exploration_variance,
                                                std::uint64_t batch_tag) {
  if (exploration_variance < 0)
    throw input_error("collect(): exploration variance must be >= 0");
  std::vector<Trajectory> batch;
  batch.reserve(rollouts);
  const double sd = std::sqrt(exploration_variance);
  for (int r = 0; r < rollouts; ++r) {
    const std::uint64_t stream =
        (batch_tag << 32) | static_cast<std::uint64_t>(r);
    std::vector<Vec> exploration;
    if (exploration_variance > 0) {
      StreamRng erng(seed_ ^ kExplorationSalt, stream);
      exploration.assign(horizon, Vec(model_.m()));
      for (auto& e : exploration)
        for (int i = 0; i < model_.m(); ++i) e[i] = sd * erng.next_normal();
    }
    NoiseSpec noise;
    noise.seed = seed_;
    noise.distribution = distribution_;
    batch.push_back(simulate(model_, init_, K, horizon, noise, stream,
                             exploration.empty() ? nullptr : &exploration));
  }
  return batch;
}

std::optional<StabilityVerdict> SimulatedPlant::exact_stability(const Mat& K) {
  if (!expose_exact_stability_) return std::nullopt;
  return is_ms_stabilizing(model_, K);
}

LearnReport learn(RolloutSource& source, const KnownDynamics& known,
                  const CostWeights& weights, const LearnConfig& config) {
  check_known(known, weights, config.K0);
  if (!(config.tol > 0)) throw input_error("learn(): tol must be positive");
  if (config.rollouts < 1) throw input_error("learn(): rollouts must be >= 1");
  if (config.max_policy_iters < 1)
    throw input_error("learn(): max_policy_iters must be >= 1");
  if (config.exploration_variance < 0)
    throw input_error("learn(): exploration variance must be >= 0");
  if (config.ridge < 0) throw input_error("learn(): ridge must be >= 0");
  if (config.k1 < 0) throw input_error("learn(): k1 must be >= 0");
  const auto [l1, l2] = parameter_counts(known.n(), known.m(), known.d);
  (void)l2;
  const int rows = config.k2 - std::max(known.d, config.k1);
  if (rows < l1) {
    std::ostringstream msg;
    msg << "learn(): window [" << config.k1 << ", " << config.k2
        << ") yields " << std::max(rows, 0) << " regression rows but " << l1
        << " unknowns must be identified";
    throw input_error(msg.str());
  }

  LearnReport report;

  // Vet the initial gain. The exact spectral test needs the hidden
  // coefficients, so it is only available from a simulation backend; a
  // blind source gets the energy heuristic instead.
  if (auto verdict = source.exact_stability(config.K0)) {
    std::ostringstream probe;
    probe << "exact mean-square stability test (harness mode): spectral "
             "radius "
          << verdict->spectral_radius;
    report.stability_probe = probe.str();
    if (!verdict->stabilizing)
      throw not_stabilizing_error(
          "learn(): initial gain fails the exact mean-square stability test: " +
          report.stability_probe);
  } else {
    const int probe_rollouts = std::min(config.rollouts, 32);
    auto probe_batch = source.collect(config.K0, config.k2, probe_rollouts,
                                      0.0, kProbeTag);
    double e0 = 0, eT = 0;
    for (const auto& traj : probe_batch) {
      e0 += traj.states.front().squaredNorm();
      eT += traj.states[config.k2].squaredNorm();
    }
    e0 /= probe_batch.size();
    eT /= probe_batch.size();
    std::ostringstream probe;
    probe << "energy non-divergence heuristic (blind mode): E|x|^2 moved "
             "from "
          << e0 << " to " << eT << " over " << config.k2 << " steps";
    report.stability_probe = probe.str();
    if (eT > 1e3 * e0 + 1e-9)
      throw not_stabilizing_error(
          "learn(): initial gain looks destabilizing by the " +
          report.stability_probe);
  }

  std::vector<std::vector<Trajectory>> batches;
  Mat K = config.K0;
  report.gains.push_back(K);

  for (int j = 0; j < config.max_policy_iters; ++j) {
    if (batches.empty() || !config.reuse_single_batch)
      batches.push_back(source.collect(K, config.k2, config.rollouts,
                                       config.exploration_variance,
                                       static_cast<std::uint64_t>(j)));

    // Rebuild every collected batch against the current gain and stack the
    // row groups; excitation accumulates instead of being thrown away.
    LearningDataset dataset;
    for (std::size_t b = 0; b < batches.size(); ++b) {
      LearningDataset part = assemble_dataset(batches[b], K, known, weights,
                                              config.k1, config.k2);
      if (b == 0) {
        dataset = std::move(part);
      } else {
        Mat Theta(dataset.row_count + part.row_count, part.unknown_count);
        Theta.topRows(dataset.row_count) = dataset.Theta;
        Theta.bottomRows(part.row_count) = part.Theta;
        Vec Gamma(dataset.row_count + part.row_count);
        Gamma.head(dataset.row_count) = dataset.Gamma;
        Gamma.tail(part.row_count) = part.Gamma;
        dataset.Theta = std::move(Theta);
        dataset.Gamma = std::move(Gamma);
        dataset.row_count += part.row_count;
      }
    }

    auto eval = policy_evaluation_ls(dataset, K, weights, config.ridge);
    Mat K_next = policy_update(eval, weights);
    const double step = (K_next - K).cwiseAbs().maxCoeff();

    report.iterations.push_back(
        {K, step, eval.residual_norm, eval.theta_rank, eval.condition});
    report.gains.push_back(K_next);
    report.final_eval = std::move(eval);
    K = std::move(K_next);

    if (step < config.tol) {
      report.converged = true;
      break;
    }
  }

  report.K = K;
  report.policy_iterations = static_cast<int>(report.iterations.size());
  return report;
}

}  // namespace dlqr
