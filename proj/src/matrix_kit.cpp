#include "dlqr/matrix_kit.hpp"

#include <cmath>
#include <string>

#include "dlqr/errors.hpp"

namespace dlqr {

Vec vec(const Mat& a) {
  Vec out(a.size());
  int p = 0;
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < a.cols(); ++j) out[p++] = a(i, j);
  return out;
}

Mat unvec(const Vec& v, int rows, int cols) {
  if (v.size() != static_cast<long>(rows) * cols)
    throw input_error("unvec(): length " + std::to_string(v.size()) +
                      " does not match " + std::to_string(rows) + "x" +
                      std::to_string(cols));
  Mat out(rows, cols);
  int p = 0;
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) out(i, j) = v[p++];
  return out;
}

Vec svec(const Mat& s) {
  const int n = static_cast<int>(s.rows());
  Vec out(n * (n + 1) / 2);
  int p = 0;
  for (int i = 0; i < n; ++i)
    for (int j = i; j < n; ++j) out[p++] = s(i, j);
  return out;
}

Vec svec_weighted(const Mat& s) {
  const int n = static_cast<int>(s.rows());
  Vec out(n * (n + 1) / 2);
  int p = 0;
  for (int i = 0; i < n; ++i)
    for (int j = i; j < n; ++j) out[p++] = (i == j) ? s(i, j) : 2.0 * s(i, j);
  return out;
}

Mat unsvec(const Vec& v, int n) {
  if (v.size() != static_cast<long>(n) * (n + 1) / 2)
    throw input_error("unsvec(): length " + std::to_string(v.size()) +
                      " does not match order " + std::to_string(n));
  Mat out(n, n);
  int p = 0;
  for (int i = 0; i < n; ++i)
    for (int j = i; j < n; ++j) {
      out(i, j) = v[p];
      out(j, i) = v[p];
      ++p;
    }
  return out;
}

Mat mat_outer(const Vec& x) { return x * x.transpose(); }

Mat kron(const Mat& a, const Mat& b) {
  Mat out(a.rows() * b.rows(), a.cols() * b.cols());
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < a.cols(); ++j)
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return out;
}

double spectral_radius(const Mat& a) {
  if (a.rows() != a.cols())
    throw input_error("spectral_radius(): matrix must be square");
  if (a.rows() == 0) return 0.0;
  Eigen::EigenSolver<Mat> es(a, /*computeEigenvectors=*/false);
  if (es.info() != Eigen::Success)
    throw numerical_error("spectral_radius(): eigenvalue iteration failed");
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

Mat sym_part(const Mat& a) { return 0.5 * (a + a.transpose()); }

double min_eigenvalue_sym(const Mat& s) {
  if (s.rows() == 0) return 0.0;
  Eigen::SelfAdjointEigenSolver<Mat> es(sym_part(s),
                                        Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success)
    throw numerical_error("min_eigenvalue_sym(): eigenvalue iteration failed");
  return es.eigenvalues().minCoeff();
}

LstsqResult lstsq(const Mat& a, const Vec& b, double rank_tol) {
  Eigen::BDCSVD<Mat> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Vec& sv = svd.singularValues();
  const double smax = sv.size() > 0 ? sv[0] : 0.0;
  const double thresh = rank_tol * smax;

  LstsqResult res;
  res.rank_tol = rank_tol;
  res.condition = (sv.size() > 0 && sv[sv.size() - 1] > 0.0)
                      ? smax / sv[sv.size() - 1]
                      : std::numeric_limits<double>::infinity();
  Vec y = svd.matrixU().transpose() * b;
  Vec z = Vec::Zero(sv.size());
  for (int i = 0; i < sv.size(); ++i) {
    if (sv[i] > thresh) {
      z[i] = y[i] / sv[i];
      ++res.rank;
    }
  }
  res.x = svd.matrixV() * z;
  return res;
}

SolveResult solve_square(const Mat& a, const Vec& b) {
  if (a.rows() != a.cols() || a.rows() != b.size())
    throw input_error("solve_square(): dimension mismatch");
  Eigen::BDCSVD<Mat> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Vec& sv = svd.singularValues();
  SolveResult res;
  res.condition = (sv.size() > 0 && sv[sv.size() - 1] > 0.0)
                      ? sv[0] / sv[sv.size() - 1]
                      : std::numeric_limits<double>::infinity();
  res.x = svd.solve(b);
  return res;
}

}  // namespace dlqr
