#include "dlqr/plant.hpp"

#include <cmath>
#include <string>

#include "dlqr/errors.hpp"
#include "dlqr/rng.hpp"

namespace dlqr {

namespace {

constexpr double kDivergenceBound = 1e12;

double draw_noise(StreamRng& rng, NoiseDistribution dist) {
  return dist == NoiseDistribution::gaussian ? rng.next_normal()
                                             : rng.next_rademacher();
}

void check_init(const SystemModel& model, const InitialData& init,
                const char* where) {
  if (init.x0.size() != model.n())
    throw input_error(std::string(where) + ": x0 has length " +
                      std::to_string(init.x0.size()) + ", expected " +
                      std::to_string(model.n()));
  if (static_cast<int>(init.u_hist.size()) != model.d)
    throw input_error(std::string(where) + ": u_hist has " +
                      std::to_string(init.u_hist.size()) + " entries, expected d = " +
                      std::to_string(model.d));
  for (const Vec& u : init.u_hist)
    if (u.size() != model.m())
      throw input_error(std::string(where) + ": u_hist entry has length " +
                        std::to_string(u.size()) + ", expected " +
                        std::to_string(model.m()));
}

void check_gain(const SystemModel& model, const Mat& K, const char* where) {
  if (K.rows() != model.m() || K.cols() != model.n())
    throw input_error(std::string(where) + ": gain is " +
                      std::to_string(K.rows()) + "x" + std::to_string(K.cols()) +
                      ", expected " + std::to_string(model.m()) + "x" +
                      std::to_string(model.n()));
}

// Mean propagation without the public argument checks; used by the
// simulator where the invariants hold by construction.
Vec propagate_mean(const SystemModel& model, Vec x,
                   const std::vector<Vec>& inputs, std::size_t first,
                   std::size_t count) {
  for (std::size_t j = 0; j < count; ++j)
    x = model.A * x + model.B * inputs[first + j];
  return x;
}

}  // namespace

ValidationReport validate_model(const SystemModel& model,
                                const CostWeights& weights) {
  ValidationReport rep;
  auto fail = [&rep](std::string msg) {
    rep.ok = false;
    rep.issues.push_back(std::move(msg));
  };

  const int n = model.n();
  const int m = model.m();
  if (n == 0) fail("A is empty");
  if (model.A.rows() != model.A.cols()) fail("A not square");
  if (model.Abar.rows() != n || model.Abar.cols() != n)
    fail("Abar dimension mismatch");
  if (model.B.rows() != n) fail("B dimension mismatch");
  if (model.Bbar.rows() != n || model.Bbar.cols() != m)
    fail("Bbar dimension mismatch");
  if (model.d < 1) fail("delay d must be >= 1");

  if (weights.Q.rows() != n || weights.Q.cols() != n)
    fail("Q dimension mismatch");
  if (weights.R.rows() != m || weights.R.cols() != m)
    fail("R dimension mismatch");

  if (rep.ok) {
    if ((weights.Q - weights.Q.transpose()).cwiseAbs().maxCoeff() > 1e-12)
      fail("Q not symmetric");
    else if (min_eigenvalue_sym(weights.Q) < -1e-10)
      fail("Q not positive semi-definite");
    if ((weights.R - weights.R.transpose()).cwiseAbs().maxCoeff() > 1e-12)
      fail("R not symmetric");
    else if (min_eigenvalue_sym(weights.R) <= 1e-10)
      fail("R not positive definite");
  }
  return rep;
}

void require_valid(const SystemModel& model, const CostWeights& weights) {
  ValidationReport rep = validate_model(model, weights);
  if (!rep.ok) throw input_error("invalid model: " + rep.issues.front());
}

Vec predict(const SystemModel& model, const Vec& x,
            const std::vector<Vec>& pending, int steps) {
  if (x.size() != model.n())
    throw input_error("predict(): state has length " +
                      std::to_string(x.size()) + ", expected " +
                      std::to_string(model.n()));
  if (steps < 1 || steps > model.d + 1)
    throw input_error("predict(): steps = " + std::to_string(steps) +
                      " outside 1.." + std::to_string(model.d + 1));
  if (static_cast<int>(pending.size()) != steps)
    throw input_error("predict(): " + std::to_string(pending.size()) +
                      " pending inputs for " + std::to_string(steps) + " steps");
  Vec out = x;
  for (const Vec& u : pending) {
    if (u.size() != model.m())
      throw input_error("predict(): pending input has length " +
                        std::to_string(u.size()) + ", expected " +
                        std::to_string(model.m()));
    out = model.A * out + model.B * u;
  }
  return out;
}

Trajectory simulate(const SystemModel& model, const InitialData& init,
                    const Mat& K, int horizon, const NoiseSpec& noise,
                    std::uint64_t stream, const std::vector<Vec>* exploration) {
  check_init(model, init, "simulate()");
  check_gain(model, K, "simulate()");
  if (horizon < 1) throw input_error("simulate(): horizon must be >= 1");

  const int d = model.d;
  Trajectory traj;
  traj.seed = noise.seed;
  traj.stream = stream;
  traj.states.reserve(horizon + 1);
  traj.inputs.reserve(horizon + 1);
  traj.noises.reserve(horizon);
  traj.states.push_back(init.x0);
  for (const Vec& u : init.u_hist) traj.inputs.push_back(u);

  StreamRng rng(noise.seed, stream);
  for (int k = 0; k < horizon; ++k) {
    // Decision u_k, applied later at step k+d: feed back the mean of
    // x_{k+d} given the current state and the d inputs still in flight.
    Vec xpred = propagate_mean(model, traj.states[k], traj.inputs, k, d);
    Vec u = -K * xpred;
    if (exploration && k < static_cast<int>(exploration->size())) {
      const Vec& e = (*exploration)[k];
      if (e.size() != model.m())
        throw input_error("simulate(): exploration entry has length " +
                          std::to_string(e.size()) + ", expected " +
                          std::to_string(model.m()));
      u += e;
    }
    traj.inputs.push_back(std::move(u));

    const double w = draw_noise(rng, noise.distribution);
    traj.noises.push_back(w);
    const Vec& x = traj.states[k];
    const Vec& uapp = traj.inputs[k];  // u_{k-d}
    Vec xnext = model.A * x + model.B * uapp + w * (model.Abar * x + model.Bbar * uapp);
    if (!xnext.allFinite() || xnext.cwiseAbs().maxCoeff() > kDivergenceBound)
      throw divergence_error("simulate(): state exceeded 1e12 at step " +
                             std::to_string(k + 1) + " (seed " +
                             std::to_string(noise.seed) + ", stream " +
                             std::to_string(stream) + ")");
    traj.states.push_back(std::move(xnext));
  }
  // Trim the decisions computed for steps past the horizon: keep u_{-d}..u_{N-d}.
  traj.inputs.resize(horizon + 1);
  return traj;
}

Trajectory simulate(const SystemModel& model, const InitialData& init,
                    const std::vector<Vec>& decisions, int horizon,
                    const NoiseSpec& noise, std::uint64_t stream) {
  check_init(model, init, "simulate()");
  if (horizon < 1) throw input_error("simulate(): horizon must be >= 1");
  const int d = model.d;
  const int needed = horizon >= d ? horizon - d + 1 : 0;
  if (static_cast<int>(decisions.size()) < needed)
    throw input_error("simulate(): " + std::to_string(decisions.size()) +
                      " decisions for horizon " + std::to_string(horizon) +
                      ", need " + std::to_string(needed));

  Trajectory traj;
  traj.seed = noise.seed;
  traj.stream = stream;
  traj.states.push_back(init.x0);
  for (const Vec& u : init.u_hist) traj.inputs.push_back(u);
  for (int s = 0; s < needed; ++s) {
    if (decisions[s].size() != model.m())
      throw input_error("simulate(): decision has length " +
                        std::to_string(decisions[s].size()) + ", expected " +
                        std::to_string(model.m()));
    traj.inputs.push_back(decisions[s]);
  }

  StreamRng rng(noise.seed, stream);
  for (int k = 0; k < horizon; ++k) {
    const double w = draw_noise(rng, noise.distribution);
    traj.noises.push_back(w);
    const Vec& x = traj.states[k];
    const Vec& uapp = traj.inputs[k];
    Vec xnext = model.A * x + model.B * uapp + w * (model.Abar * x + model.Bbar * uapp);
    if (!xnext.allFinite() || xnext.cwiseAbs().maxCoeff() > kDivergenceBound)
      throw divergence_error("simulate(): state exceeded 1e12 at step " +
                             std::to_string(k + 1) + " (seed " +
                             std::to_string(noise.seed) + ", stream " +
                             std::to_string(stream) + ")");
    traj.states.push_back(std::move(xnext));
  }
  return traj;
}

std::vector<std::vector<Mat>> propagate_second_moments(
    const SystemModel& model, const Mat& K,
    const std::vector<Mat>& initial_moments, int horizon) {
  check_gain(model, K, "propagate_second_moments()");
  const int d = model.d;
  const int n = model.n();
  if (static_cast<int>(initial_moments.size()) != d + 1)
    throw input_error("propagate_second_moments(): expected " +
                      std::to_string(d + 1) + " initial moments, got " +
                      std::to_string(initial_moments.size()));
  for (const Mat& x : initial_moments)
    if (x.rows() != n || x.cols() != n)
      throw input_error("propagate_second_moments(): moment dimension mismatch");

  const Mat C = model.B * K;
  const Mat Cbar = model.Bbar * K;

  std::vector<std::vector<Mat>> out;
  out.reserve(horizon + 1);
  out.push_back(initial_moments);
  for (int k = 0; k < horizon; ++k) {
    const std::vector<Mat>& X = out.back();
    std::vector<Mat> next(d + 1);
    // Shared pieces built on X^d, the coarsest predictor moment; the
    // cross moments E[y^i (y^d)'] equal X^d by the tower property.
    const Mat AXd = model.A * X[d];
    const Mat CXdC = C * X[d] * C.transpose();
    for (int i = 1; i <= d; ++i) {
      Mat v = model.A * X[i - 1] * model.A.transpose() - C * AXd.transpose() -
              AXd * C.transpose() + CXdC;
      next[i] = sym_part(v);
    }
    const Mat AbXd = model.Abar * X[d];
    Mat v0 = model.A * X[0] * model.A.transpose() - C * AXd.transpose() -
             AXd * C.transpose() + CXdC +
             model.Abar * X[0] * model.Abar.transpose() -
             Cbar * AbXd.transpose() - AbXd * Cbar.transpose() +
             Cbar * X[d] * Cbar.transpose();
    next[0] = sym_part(v0);
    out.push_back(std::move(next));
  }
  return out;
}

InitialPhase propagate_initial_phase(const SystemModel& model,
                                     const InitialData& init) {
  check_init(model, init, "propagate_initial_phase()");
  const int d = model.d;

  InitialPhase phase;
  phase.state_means.push_back(init.x0);
  phase.state_moments.push_back(init.x0 * init.x0.transpose());
  for (int s = 0; s < d; ++s) {
    const Vec& u = init.u_hist[s];  // u_{s-d}, the input applied at step s
    const Vec& mu = phase.state_means[s];
    const Mat& X = phase.state_moments[s];
    Vec mu_next = model.A * mu + model.B * u;
    Mat cross = mu * u.transpose();
    Mat X_next = model.A * X * model.A.transpose() +
                 model.Abar * X * model.Abar.transpose() +
                 model.A * cross * model.B.transpose() +
                 model.B * cross.transpose() * model.A.transpose() +
                 model.Abar * cross * model.Bbar.transpose() +
                 model.Bbar * cross.transpose() * model.Abar.transpose() +
                 model.B * u * u.transpose() * model.B.transpose() +
                 model.Bbar * u * u.transpose() * model.Bbar.transpose();
    phase.state_means.push_back(std::move(mu_next));
    phase.state_moments.push_back(sym_part(X_next));
  }

  // Depth-i predictor of x_d: A^i x_{d-i} plus the deterministic input
  // contribution from the history entries u_{-i}..u_{-1}.
  phase.predictor_moments.resize(d + 1);
  phase.predictor_moments[0] = phase.state_moments[d];
  Mat Apow = Mat::Identity(model.n(), model.n());
  for (int i = 1; i <= d; ++i) {
    Apow = model.A * Apow;  // A^i
    Vec c = Vec::Zero(model.n());
    for (int t = 0; t < i; ++t) {
      // input u_{-i+t} applied at step d-i+t; propagated i-1-t more steps
      Vec bu = model.B * init.u_hist[d - i + t];
      for (int p = 0; p < i - 1 - t; ++p) bu = model.A * bu;
      c += bu;
    }
    const Vec& mu = phase.state_means[d - i];
    const Mat& X = phase.state_moments[d - i];
    Mat pm = Apow * X * Apow.transpose() + Apow * mu * c.transpose() +
             c * mu.transpose() * Apow.transpose() + c * c.transpose();
    phase.predictor_moments[i] = sym_part(pm);
  }
  return phase;
}

CostEstimate estimate_cost(const SystemModel& model, const CostWeights& weights,
                           const InitialData& init, const Mat& K, int horizon,
                           int rollouts, const NoiseSpec& noise) {
  require_valid(model, weights);
  check_init(model, init, "estimate_cost()");
  if (rollouts < 1) throw input_error("estimate_cost(): rollouts must be >= 1");

  // Welford accumulation: identical samples yield an exactly zero spread,
  // which the single-pass sum-of-squares formula cannot guarantee.
  double mean = 0, m2 = 0;
  for (int r = 0; r < rollouts; ++r) {
    Trajectory traj = simulate(model, init, K, horizon, noise,
                               static_cast<std::uint64_t>(r));
    double cost = 0;
    for (int k = 0; k < horizon; ++k) {
      const Vec& x = traj.states[k];
      const Vec& u = traj.inputs[k];  // input applied at step k
      cost += x.dot(weights.Q * x) + u.dot(weights.R * u);
    }
    const double delta = cost - mean;
    mean += delta / (r + 1);
    m2 += delta * (cost - mean);
  }
  CostEstimate est;
  est.mean = mean;
  if (rollouts > 1)
    est.standard_error = std::sqrt(std::max(0.0, m2 / (rollouts - 1)) / rollouts);
  return est;
}

}  // namespace dlqr
