#include "alis/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace alis {

SymSqrt sym_sqrt(const Mat& spd) {
  if (spd.rows() != spd.cols()) throw std::invalid_argument("sym_sqrt: matrix not square");
  Eigen::SelfAdjointEigenSolver<Mat> es(spd);
  if (es.info() != Eigen::Success) throw std::runtime_error("sym_sqrt: eigendecomposition failed");
  const Vec& ev = es.eigenvalues();
  const double max_ev = ev.size() ? ev.maxCoeff() : 0.0;
  if (max_ev <= 0.0) throw std::runtime_error("sym_sqrt: matrix not positive definite");
  if (ev.minCoeff() < -1e-10 * max_ev)
    throw std::runtime_error("sym_sqrt: matrix has a negative eigenvalue");
  const double floor = 1e-14 * max_ev;
  Vec root(ev.size()), inv_root(ev.size());
  for (int i = 0; i < ev.size(); ++i) {
    const double lam = std::max(ev[i], floor);
    root[i] = std::sqrt(lam);
    inv_root[i] = 1.0 / root[i];
  }
  const Mat& q = es.eigenvectors();
  SymSqrt out;
  out.sqrt = q * root.asDiagonal() * q.transpose();
  out.inv_sqrt = q * inv_root.asDiagonal() * q.transpose();
  return out;
}

SymEig sym_eig_desc(const Mat& sym) {
  Eigen::SelfAdjointEigenSolver<Mat> es(sym);
  if (es.info() != Eigen::Success) throw std::runtime_error("sym_eig_desc: eigendecomposition failed");
  const int n = static_cast<int>(sym.rows());
  SymEig out;
  out.values = es.eigenvalues().reverse();
  out.vectors = es.eigenvectors().rowwise().reverse();
  for (int j = 0; j < n; ++j) {
    int arg = 0;
    out.vectors.col(j).cwiseAbs().maxCoeff(&arg);
    if (out.vectors(arg, j) < 0.0) out.vectors.col(j) = -out.vectors.col(j);
  }
  return out;
}

Mat orthonormalize(const Mat& m) {
  if (m.cols() == 0) return m;
  Eigen::HouseholderQR<Mat> qr(m);
  Mat r = qr.matrixQR().topRows(m.cols()).triangularView<Eigen::Upper>();
  Mat q = qr.householderQ() * Mat::Identity(m.rows(), m.cols());
  double max_diag = 0.0;
  for (int j = 0; j < m.cols(); ++j) max_diag = std::max(max_diag, std::abs(r(j, j)));
  for (int j = 0; j < m.cols(); ++j) {
    if (std::abs(r(j, j)) <= 1e-12 * std::max(1.0, max_diag))
      throw std::runtime_error("orthonormalize: columns are collinear");
    if (r(j, j) < 0.0) q.col(j) = -q.col(j);
  }
  return q;
}

Mat orthonormal_complement(const Mat& basis, int full_dim) {
  const int r = static_cast<int>(basis.cols());
  if (r > full_dim) throw std::invalid_argument("orthonormal_complement: too many columns");
  if (r == full_dim) return Mat(full_dim, 0);
  if (r == 0) return Mat::Identity(full_dim, full_dim);
  Eigen::HouseholderQR<Mat> qr(basis);
  Mat q = qr.householderQ() * Mat::Identity(full_dim, full_dim);
  return q.rightCols(full_dim - r);
}

double max_principal_angle(const Mat& a, const Mat& b) {
  if (a.cols() != b.cols()) throw std::invalid_argument("max_principal_angle: rank mismatch");
  if (a.cols() == 0) return 0.0;
  Eigen::JacobiSVD<Mat> svd(a.transpose() * b);
  const double smin = std::clamp(svd.singularValues().minCoeff(), -1.0, 1.0);
  return std::acos(smin);
}

Mat empirical_cov(const Mat& samples) {
  const auto n = samples.cols();
  if (n < 1) throw std::invalid_argument("empirical_cov: no samples");
  Mat centered = samples.colwise() - samples.rowwise().mean();
  return centered * centered.transpose() / static_cast<double>(n);
}

double median(std::vector<double> v) {
  if (v.empty()) throw std::invalid_argument("median: empty");
  const std::size_t k = (v.size() - 1) / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(k), v.end());
  return v[k];
}

}  // namespace alis
