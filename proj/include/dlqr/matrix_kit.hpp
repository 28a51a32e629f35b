#ifndef DLQR_MATRIX_KIT_HPP
#define DLQR_MATRIX_KIT_HPP

#include <Eigen/Dense>

namespace dlqr {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

// Row-major vectorization: vec([[1,2],[3,4]]) = [1,2,3,4].
// With this convention vec(A' P A) = kron(A, A)' vec(P).
Vec vec(const Mat& a);

// Inverse of vec for a rows-by-cols matrix.
Mat unvec(const Vec& v, int rows, int cols);

// Upper triangle of a symmetric matrix, row by row:
// svec([[1,2],[2,4]]) = [1,2,4]. Length n(n+1)/2.
Vec svec(const Mat& s);

// Companion half-vectorization with off-diagonal entries doubled:
// svec_weighted([[1,1],[1,1]]) = [1,2,1]. Chosen so that
// dot(svec(P), svec_weighted(x x')) = x' P x.
Vec svec_weighted(const Mat& s);

// Inverse of svec: rebuilds the full symmetric matrix.
Mat unsvec(const Vec& v, int n);

// Outer product x x' as a square matrix.
Mat mat_outer(const Vec& x);

// Kronecker product, (p*m) x (q*n) for p x q and m x n operands.
Mat kron(const Mat& a, const Mat& b);

// Largest eigenvalue modulus of a (generally non-symmetric) matrix.
double spectral_radius(const Mat& a);

// (A + A')/2.
Mat sym_part(const Mat& a);

// Smallest eigenvalue of a symmetric matrix.
double min_eigenvalue_sym(const Mat& s);

// Least-squares diagnostics shared by the solvers and the learner.
struct LstsqResult {
  Vec x;
  int rank = 0;          // numerical rank at tol = rank_tol * sigma_max
  double condition = 0;  // sigma_max / sigma_min over all singular values
  double rank_tol = 1e-8;
};

// Minimum-norm least squares via SVD. Singular values below
// rank_tol * sigma_max are treated as zero.
LstsqResult lstsq(const Mat& a, const Vec& b, double rank_tol = 1e-8);

// Square solve with a condition estimate; the caller decides what
// condition number is tolerable.
struct SolveResult {
  Vec x;
  double condition = 0;
};
SolveResult solve_square(const Mat& a, const Vec& b);

}  // namespace dlqr

#endif  // DLQR_MATRIX_KIT_HPP
