#ifndef DLQR_STABILITY_HPP
#define DLQR_STABILITY_HPP

#include <vector>

#include "dlqr/matrix_kit.hpp"
#include "dlqr/plant.hpp"

namespace dlqr {

// Block operator governing the closed-loop second-moment recursion in the
// innovation basis (DX^0..DX^{d-1}, X^d), where DX^i = X^i - X^{i+1}:
//   row 1:    Abar(x)Abar in columns 1..d, (Abar-Bbar K)(x)(Abar-Bbar K) last
//   row i:    A(x)A in column i-1 (i = 2..d)
//   row d+1:  A(x)A in column d, (A-BK)(x)(A-BK) in column d+1.
// Mean-square stability of the closed loop is exactly this matrix being
// Schur. Blocks act on row-major vec: vec(M X M') = kron(M,M) vec(X).
struct ClosedLoopOperator {
  std::vector<std::vector<Mat>> blocks;  // (d+1) x (d+1) grid of n^2 x n^2
  Mat assembled;                         // n^2(d+1) square
};

// Policy-evaluation solution stack P^0..P^d.
struct LyapunovStack {
  std::vector<Mat> P;
};

// Second-moment stack S^0..S^d from the necessary-condition equations.
struct MomentStack {
  std::vector<Mat> S;
};

struct StabilityVerdict {
  bool stabilizing = false;
  double spectral_radius = 0;
};

ClosedLoopOperator build_closed_loop_operator(const SystemModel& model,
                                              const Mat& K);

// Schur test with a 1e-9 margin: stabilizing iff rho < 1 - 1e-9. The
// radius is returned for reporting either way.
StabilityVerdict is_ms_stabilizing(const SystemModel& model, const Mat& K);

// Solves the coupled linear stack
//   P^{i-1} = A'P^i A + Abar'P^0 Abar + Qstack[i-1],   i = 1..d,
//   P^d    = (A-BK)'P^d(A-BK) + (Abar-Bbar K)'P^0(Abar-Bbar K) + Qstack[d]
// as the dense system (I - Op')p = q. Requires a mean-square stabilizing K
// (caller's obligation); an ill-conditioned system (condition > 1e12)
// raises not_stabilizing_error. Solutions are symmetrized after the solve;
// pre-symmetrization asymmetry and per-equation residuals are verified.
LyapunovStack solve_lyapunov_stack(const SystemModel& model, const Mat& K,
                                   const std::vector<Mat>& Qstack);

// Solves the forward-moment equations
//   S^0 = (Abar-Bbar K) S^d (Abar-Bbar K)' + Abar (sum_{i<d} S^i) Abar',
//   S^i = A S^{i-1} A',                        i = 1..d-1,
//   S^d = (A-BK) S^d (A-BK)' + A S^{d-1} A' + Qconst
// and verifies the stack is PSD (min eigenvalue >= -1e-9).
MomentStack solve_moment_equations(const SystemModel& model, const Mat& K,
                                   const Mat& Qconst);

// The backward map of the stack equations: slot i (i = 0..d-1) gets
// A'P^{i+1}A + Abar'P^0 Abar, the last slot gets the K-closed terms.
std::vector<Mat> f_map(const SystemModel& model, const Mat& K,
                       const std::vector<Mat>& P);

// The forward map, adjoint of f_map under the trace pairing.
std::vector<Mat> g_map(const SystemModel& model, const Mat& K,
                       const std::vector<Mat>& M);

// |sum_i tr(f(P)_i M_i) - sum_i tr(P_i g(M)_i)|: zero in exact arithmetic,
// used by tests to certify the two maps are mutually adjoint.
double duality_gap(const SystemModel& model, const Mat& K,
                   const std::vector<Mat>& P, const std::vector<Mat>& M);

// The (P^0, P^d) pair solved directly from the collapsed two-equation
// system, bypassing the intermediate chain entries:
//   P^0 = A^(d)'P^d A^(d) + sum_k A^(k)'Abar'P^0 Abar A^(k)
//                         + sum_k A^(k)'Qconst A^(k),    k = 0..d-1,
//   P^d = (A-BK)'P^d(A-BK) + (Abar-Bbar K)'P^0(Abar-Bbar K) + Qeff_last.
std::pair<Mat, Mat> solve_reduced_pair(const SystemModel& model, const Mat& K,
                                       const Mat& Qeff_last, const Mat& Qconst);

// True if P^d is PD and P^d <= P^{d-1} <= ... <= P^0 up to the slack.
bool is_monotone_pd(const LyapunovStack& stack, double slack = 1e-9);

}  // namespace dlqr

#endif  // DLQR_STABILITY_HPP
