#pragma once

#include <Eigen/Dense>

namespace alis {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Symmetric square root and inverse square root of an SPD matrix.
/// Eigenvalues below 1e-14 * lambda_max are clamped before inversion, so the
/// factors stay finite on nearly singular input; throws on indefinite input.
struct SymSqrt {
  Mat sqrt;
  Mat inv_sqrt;
};
SymSqrt sym_sqrt(const Mat& spd);

/// Eigendecomposition of a symmetric matrix with descending eigenvalues and
/// a fixed sign convention (largest-|entry| component of each vector made
/// positive; first such index on ties).
struct SymEig {
  Vec values;
  Mat vectors;
};
SymEig sym_eig_desc(const Mat& sym);

/// Thin-QR orthonormalization with positive R diagonal. Throws if the
/// columns are collinear (relative diagonal below 1e-12).
Mat orthonormalize(const Mat& m);

/// Orthonormal complement of a column-orthonormal matrix (may have 0 cols).
Mat orthonormal_complement(const Mat& basis, int full_dim);

/// Largest principal angle, in radians, between the column spans.
double max_principal_angle(const Mat& a, const Mat& b);

/// Empirical covariance of column samples with 1/J normalization.
Mat empirical_cov(const Mat& samples);

double median(std::vector<double> v);  // lower median for even counts

}  // namespace alis
