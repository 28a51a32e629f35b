#include "dlqr/stability.hpp"

#include <string>
#include <utility>

#include "dlqr/errors.hpp"

namespace dlqr {

namespace {

constexpr double kConditionLimit = 1e12;
constexpr double kAsymmetryLimit = 1e-9;
constexpr double kResidualLimit = 1e-10;
constexpr double kSchurMargin = 1e-9;

void check_operator_inputs(const SystemModel& model, const Mat& K,
                           const char* where) {
  if (model.A.rows() != model.A.cols() || model.Abar.rows() != model.A.rows() ||
      model.B.rows() != model.A.rows() || model.Bbar.rows() != model.A.rows() ||
      model.Abar.cols() != model.A.cols() || model.Bbar.cols() != model.B.cols())
    throw input_error(std::string(where) + ": model dimension mismatch");
  if (K.rows() != model.m() || K.cols() != model.n())
    throw input_error(std::string(where) + ": gain dimension mismatch");
  if (model.d < 1)
    throw input_error(std::string(where) + ": delay must be >= 1");
}

// Solve (I - T) x = q with the dense LU the stack sizes here merit, and
// convert near-singularity into the typed stability error.
Vec solve_stack_system(const Mat& T, const Vec& q, const char* where) {
  const Mat lhs = Mat::Identity(T.rows(), T.cols()) - T;
  Eigen::PartialPivLU<Mat> lu(lhs);
  const double rcond = lu.rcond();
  if (!(rcond > 1.0 / kConditionLimit))
    throw not_stabilizing_error(
        std::string(where) +
        ": stack system is singular or ill-conditioned (condition estimate " +
        std::to_string(rcond > 0 ? 1.0 / rcond : std::numeric_limits<double>::infinity()) +
        "); gain is likely not mean-square stabilizing");
  return lu.solve(q);
}

// Unpack stacked vec blocks into symmetric matrices, enforcing the
// asymmetry bound before symmetrizing.
std::vector<Mat> unpack_symmetric(const Vec& p, int n, int count,
                                  const char* where) {
  std::vector<Mat> out(count);
  for (int i = 0; i < count; ++i) {
    Mat block = unvec(p.segment(static_cast<long>(i) * n * n, n * n), n, n);
    const double asym = (block - block.transpose()).cwiseAbs().maxCoeff();
    if (asym > kAsymmetryLimit)
      throw numerical_error(std::string(where) + ": solution block " +
                            std::to_string(i) + " asymmetric by " +
                            std::to_string(asym));
    out[i] = sym_part(block);
  }
  return out;
}

}  // namespace

ClosedLoopOperator build_closed_loop_operator(const SystemModel& model,
                                              const Mat& K) {
  check_operator_inputs(model, K, "build_closed_loop_operator()");
  const int d = model.d;
  const int n = model.n();
  const int nn = n * n;

  const Mat kA = kron(model.A, model.A);
  const Mat kAbar = kron(model.Abar, model.Abar);
  const Mat AK = model.A - model.B * K;
  const Mat AbarK = model.Abar - model.Bbar * K;
  const Mat kAK = kron(AK, AK);
  const Mat kAbarK = kron(AbarK, AbarK);

  ClosedLoopOperator op;
  op.blocks.assign(d + 1, std::vector<Mat>(d + 1, Mat::Zero(nn, nn)));
  for (int j = 0; j < d; ++j) op.blocks[0][j] = kAbar;
  op.blocks[0][d] = kAbarK;
  for (int i = 1; i < d; ++i) op.blocks[i][i - 1] = kA;
  op.blocks[d][d - 1] = kA;
  op.blocks[d][d] = kAK;

  op.assembled = Mat::Zero((d + 1) * nn, (d + 1) * nn);
  for (int i = 0; i <= d; ++i)
    for (int j = 0; j <= d; ++j)
      op.assembled.block(static_cast<long>(i) * nn, static_cast<long>(j) * nn,
                         nn, nn) = op.blocks[i][j];
  return op;
}

StabilityVerdict is_ms_stabilizing(const SystemModel& model, const Mat& K) {
  ClosedLoopOperator op = build_closed_loop_operator(model, K);
  StabilityVerdict v;
  v.spectral_radius = spectral_radius(op.assembled);
  v.stabilizing = v.spectral_radius < 1.0 - kSchurMargin;
  return v;
}

LyapunovStack solve_lyapunov_stack(const SystemModel& model, const Mat& K,
                                   const std::vector<Mat>& Qstack) {
  const int d = model.d;
  const int n = model.n();
  if (static_cast<int>(Qstack.size()) != d + 1)
    throw input_error("solve_lyapunov_stack(): expected " +
                      std::to_string(d + 1) + " constant terms, got " +
                      std::to_string(Qstack.size()));
  for (const Mat& q : Qstack)
    if (q.rows() != n || q.cols() != n ||
        (q - q.transpose()).cwiseAbs().maxCoeff() > 1e-12)
      throw input_error("solve_lyapunov_stack(): constant terms must be symmetric n x n");

  ClosedLoopOperator op = build_closed_loop_operator(model, K);
  Vec q((d + 1) * n * n);
  for (int i = 0; i <= d; ++i)
    q.segment(static_cast<long>(i) * n * n, n * n) = vec(Qstack[i]);

  Vec p = solve_stack_system(op.assembled.transpose(), q, "solve_lyapunov_stack()");
  LyapunovStack stack;
  stack.P = unpack_symmetric(p, n, d + 1, "solve_lyapunov_stack()");

  // Verify each equation at matrix level, independently of the Kronecker
  // assembly that produced the solution.
  const Mat AbarP0Abar =
      model.Abar.transpose() * stack.P[0] * model.Abar;
  double resid = 0;
  for (int i = 1; i <= d; ++i) {
    Mat r = stack.P[i - 1] - (model.A.transpose() * stack.P[i] * model.A +
                              AbarP0Abar + Qstack[i - 1]);
    resid = std::max(resid, r.cwiseAbs().maxCoeff());
  }
  const Mat AK = model.A - model.B * K;
  const Mat AbarK = model.Abar - model.Bbar * K;
  Mat rd = stack.P[d] - (AK.transpose() * stack.P[d] * AK +
                         AbarK.transpose() * stack.P[0] * AbarK + Qstack[d]);
  resid = std::max(resid, rd.cwiseAbs().maxCoeff());
  const double scale = 1.0 + std::abs(p.cwiseAbs().maxCoeff());
  if (resid > kResidualLimit * scale)
    throw numerical_error("solve_lyapunov_stack(): equation residual " +
                          std::to_string(resid) + " exceeds tolerance");
  return stack;
}

MomentStack solve_moment_equations(const SystemModel& model, const Mat& K,
                                   const Mat& Qconst) {
  const int d = model.d;
  const int n = model.n();
  if (Qconst.rows() != n || Qconst.cols() != n ||
      (Qconst - Qconst.transpose()).cwiseAbs().maxCoeff() > 1e-12)
    throw input_error("solve_moment_equations(): constant term must be symmetric n x n");

  ClosedLoopOperator op = build_closed_loop_operator(model, K);
  Vec q = Vec::Zero((d + 1) * n * n);
  q.segment(static_cast<long>(d) * n * n, n * n) = vec(Qconst);

  Vec s = solve_stack_system(op.assembled, q, "solve_moment_equations()");
  MomentStack stack;
  stack.S = unpack_symmetric(s, n, d + 1, "solve_moment_equations()");

  for (const Mat& Si : stack.S) {
    const double mineig = min_eigenvalue_sym(Si);
    if (mineig < -1e-9)
      throw numerical_error(
          "solve_moment_equations(): stack not positive semi-definite "
          "(min eigenvalue " + std::to_string(mineig) + ")");
  }
  return stack;
}

std::vector<Mat> f_map(const SystemModel& model, const Mat& K,
                       const std::vector<Mat>& P) {
  check_operator_inputs(model, K, "f_map()");
  const int d = model.d;
  if (static_cast<int>(P.size()) != d + 1)
    throw input_error("f_map(): stack size mismatch");
  const Mat AbarP0Abar = model.Abar.transpose() * P[0] * model.Abar;
  const Mat AK = model.A - model.B * K;
  const Mat AbarK = model.Abar - model.Bbar * K;
  std::vector<Mat> out(d + 1);
  for (int i = 0; i < d; ++i)
    out[i] = model.A.transpose() * P[i + 1] * model.A + AbarP0Abar;
  out[d] = AK.transpose() * P[d] * AK + AbarK.transpose() * P[0] * AbarK;
  return out;
}

std::vector<Mat> g_map(const SystemModel& model, const Mat& K,
                       const std::vector<Mat>& M) {
  check_operator_inputs(model, K, "g_map()");
  const int d = model.d;
  if (static_cast<int>(M.size()) != d + 1)
    throw input_error("g_map(): stack size mismatch");
  const Mat AK = model.A - model.B * K;
  const Mat AbarK = model.Abar - model.Bbar * K;
  std::vector<Mat> out(d + 1);
  Mat acc = Mat::Zero(model.n(), model.n());
  for (int i = 0; i < d; ++i) acc += M[i];
  out[0] = model.Abar * acc * model.Abar.transpose() +
           AbarK * M[d] * AbarK.transpose();
  for (int i = 1; i < d; ++i)
    out[i] = model.A * M[i - 1] * model.A.transpose();
  out[d] = model.A * M[d - 1] * model.A.transpose() +
           AK * M[d] * AK.transpose();
  return out;
}

double duality_gap(const SystemModel& model, const Mat& K,
                   const std::vector<Mat>& P, const std::vector<Mat>& M) {
  std::vector<Mat> fP = f_map(model, K, P);
  std::vector<Mat> gM = g_map(model, K, M);
  double lhs = 0, rhs = 0;
  for (std::size_t i = 0; i < fP.size(); ++i) {
    lhs += (fP[i] * M[i]).trace();
    rhs += (P[i] * gM[i]).trace();
  }
  return std::abs(lhs - rhs);
}

std::pair<Mat, Mat> solve_reduced_pair(const SystemModel& model, const Mat& K,
                                       const Mat& Qeff_last, const Mat& Qconst) {
  check_operator_inputs(model, K, "solve_reduced_pair()");
  const int d = model.d;
  const int n = model.n();
  const int nn = n * n;

  const Mat AK = model.A - model.B * K;
  const Mat AbarK = model.Abar - model.Bbar * K;

  Mat T = Mat::Zero(2 * nn, 2 * nn);
  Vec rhs(2 * nn);
  Mat Apow = Mat::Identity(n, n);
  Mat qsum = Mat::Zero(n, n);
  for (int k = 0; k < d; ++k) {
    const Mat AbarAk = model.Abar * Apow;
    T.block(0, 0, nn, nn) += kron(AbarAk, AbarAk).transpose();
    qsum += Apow.transpose() * Qconst * Apow;
    Apow = model.A * Apow;  // A^{k+1}
  }
  T.block(0, nn, nn, nn) = kron(Apow, Apow).transpose();  // Apow = A^d now
  T.block(nn, 0, nn, nn) = kron(AbarK, AbarK).transpose();
  T.block(nn, nn, nn, nn) = kron(AK, AK).transpose();
  rhs.head(nn) = vec(qsum);
  rhs.tail(nn) = vec(Qeff_last);

  Vec p = solve_stack_system(T, rhs, "solve_reduced_pair()");
  std::vector<Mat> pair = unpack_symmetric(p, n, 2, "solve_reduced_pair()");
  return {pair[0], pair[1]};
}

bool is_monotone_pd(const LyapunovStack& stack, double slack) {
  if (stack.P.empty()) return false;
  const int d = static_cast<int>(stack.P.size()) - 1;
  if (min_eigenvalue_sym(stack.P[d]) <= 0) return false;
  for (int i = 0; i < d; ++i)
    if (min_eigenvalue_sym(stack.P[i] - stack.P[i + 1]) < -slack) return false;
  return true;
}

}  // namespace dlqr
