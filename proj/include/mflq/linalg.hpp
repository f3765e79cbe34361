#pragma once

// Pseudoinverse, semidefiniteness and range-inclusion primitives.

#include "mflq/core.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <algorithm>
#include <stdexcept>

namespace mflq {

inline constexpr double kDefaultPinvTol = 1e-10;

struct PinvResult {
  Mat pinv;
  int rank = 0;
  Vec singular_values;  // descending
  double tol_used = 0.0;
  // Smallest singular value kept in the rank, or 0 when the rank is zero.
  double smallest_retained = 0.0;
};

/// Moore-Penrose pseudoinverse. Singular values at or below
/// rel_tol * max(rows, cols) * sigma_max are treated as zero.
inline PinvResult pinv(const Mat& M, double rel_tol = kDefaultPinvTol) {
  if (!(rel_tol > 0.0)) throw std::invalid_argument("pinv: rel_tol must be positive");
  PinvResult out;
  out.pinv = Mat::Zero(M.cols(), M.rows());
  if (M.size() == 0) return out;

  Eigen::JacobiSVD<Mat> svd(M, Eigen::ComputeThinU | Eigen::ComputeThinV);
  out.singular_values = svd.singularValues();
  const double sigma_max = out.singular_values.size() > 0 ? out.singular_values(0) : 0.0;
  out.tol_used = rel_tol * static_cast<double>(std::max(M.rows(), M.cols())) * sigma_max;

  Vec inv = Vec::Zero(out.singular_values.size());
  for (Eigen::Index i = 0; i < out.singular_values.size(); ++i) {
    const double sv = out.singular_values(i);
    if (sv > out.tol_used) {
      inv(i) = 1.0 / sv;
      out.smallest_retained = sv;
      ++out.rank;
    }
  }
  out.pinv = svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
  return out;
}

/// Largest singular value.
inline double op_norm(const Mat& M) {
  if (M.size() == 0) return 0.0;
  if (M.cols() == 1) return M.norm();
  Eigen::JacobiSVD<Mat> svd(M);
  return svd.singularValues()(0);
}

inline Mat symmetrize(const Mat& M) { return 0.5 * (M + M.transpose()); }

struct PsdResult {
  bool psd = false;
  double min_eigenvalue = 0.0;
};

/// lambda_min(M) >= -tol. M must be symmetric to representation accuracy.
inline PsdResult is_psd(const Mat& M, double tol) {
  if (M.rows() != M.cols()) throw std::invalid_argument("is_psd: matrix is not square");
  if ((M - M.transpose()).norm() > 1e-12 * (1.0 + M.norm())) {
    throw std::invalid_argument("is_psd: matrix is not symmetric");
  }
  if (M.size() == 0) return {true, 0.0};
  Eigen::SelfAdjointEigenSolver<Mat> eig(symmetrize(M), Eigen::EigenvaluesOnly);
  const double lmin = eig.eigenvalues().minCoeff();
  return {lmin >= -tol, lmin};
}

struct RangeResult {
  bool contained = false;
  double residual = 0.0;
};

/// Tests R(N) within R(M) for symmetric PSD M via
/// r = |(I - M M^+) N| / (1 + |N|) in the operator norm.
inline RangeResult range_contained(const Mat& N, const Mat& M, double tol,
                                   double rel_tol = kDefaultPinvTol) {
  if (M.rows() != M.cols()) throw std::invalid_argument("range_contained: M is not square");
  if (N.rows() != M.rows()) {
    throw std::invalid_argument("range_contained: N has " + std::to_string(N.rows()) +
                                " rows, M is " + std::to_string(M.rows()) + "x" +
                                std::to_string(M.cols()));
  }
  const Mat Mp = pinv(M, rel_tol).pinv;
  const Mat residual = N - M * (Mp * N);
  const double r = op_norm(residual) / (1.0 + op_norm(N));
  return {r <= tol, r};
}

/// Orthogonal projector M^+ M onto R(M) for symmetric M.
inline Mat projector(const Mat& M, double rel_tol = kDefaultPinvTol) {
  return pinv(M, rel_tol).pinv * M;
}

}  // namespace mflq
