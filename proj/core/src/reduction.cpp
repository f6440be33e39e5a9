#include "alis/reduction.hpp"

#include <cmath>
#include <stdexcept>

namespace alis {

DiagnosticMatrix make_diagnostic(const Mat& h, double alpha_lo, double alpha_hi, bool whitened) {
  DiagnosticMatrix d;
  d.h = 0.5 * (h + h.transpose());
  d.alpha_lo = alpha_lo;
  d.alpha_hi = alpha_hi;
  d.whitened = whitened;
  SymEig es = sym_eig_desc(d.h);
  d.eigvals = std::move(es.values);
  d.eigvecs = std::move(es.vectors);
  return d;
}

GradientProvider GradientProvider::exact(std::function<Mat(const Vec&)> jac) {
  if (!jac) throw std::invalid_argument("GradientProvider::exact: empty callable");
  GradientProvider g;
  g.jac_ = std::move(jac);
  return g;
}

GradientProvider GradientProvider::shared(Mat linearization) {
  GradientProvider g;
  g.shared_ = std::move(linearization);
  return g;
}

const Mat& GradientProvider::shared_matrix() const {
  if (!shared_) throw std::logic_error("GradientProvider: not in shared mode");
  return *shared_;
}

Mat GradientProvider::at(const Vec& x) const {
  if (shared_) return *shared_;
  Mat g = jac_(x);
  if (!g.allFinite()) throw std::runtime_error("GradientProvider: non-finite gradient");
  return g;
}

Mat statistical_linearization(const Mat& xs, const Mat& gs, double nugget) {
  const auto n = xs.cols();
  if (n < 2) throw std::invalid_argument("statistical_linearization: needs at least 2 samples");
  if (gs.cols() != n) throw std::invalid_argument("statistical_linearization: column mismatch");
  if (nugget < 0.0) throw std::invalid_argument("statistical_linearization: negative nugget");

  const double inv_n = 1.0 / static_cast<double>(n);
  const Mat xc = xs.colwise() - xs.rowwise().mean();
  const Mat gc = gs.colwise() - gs.rowwise().mean();
  const Mat c_xx = xc * xc.transpose() * inv_n;
  const Mat c_xg = xc * gc.transpose() * inv_n;

  if (nugget > 0.0) {
    const Mat reg = c_xx + nugget * Mat::Identity(c_xx.rows(), c_xx.cols());
    Eigen::LDLT<Mat> solver(reg);
    if (solver.info() != Eigen::Success)
      throw std::runtime_error("statistical_linearization: factorization failed");
    return solver.solve(c_xg).transpose();
  }
  // Pseudo-inverse through the symmetric eigendecomposition of C^xx.
  SymEig es = sym_eig_desc(c_xx);
  const double cutoff = 1e-12 * std::max(0.0, es.values.size() ? es.values.maxCoeff() : 0.0);
  Vec inv = Vec::Zero(es.values.size());
  for (int i = 0; i < es.values.size(); ++i)
    if (es.values[i] > cutoff) inv[i] = 1.0 / es.values[i];
  const Mat pinv = es.vectors * inv.asDiagonal() * es.vectors.transpose();
  return (pinv * c_xg).transpose();
}

double default_sl_nugget(const InverseProblem& p, int n_samples) {
  if (!p.noisy_forward) return 0.0;
  return p.gamma.trace() / static_cast<double>(n_samples);
}

DiagnosticMatrix estimate_h_alpha(const Mat& samples, const Mat& evals,
                                  const GradientProvider& grads, const InverseProblem& p,
                                  double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0))
    throw std::invalid_argument("estimate_h_alpha: alpha outside [0, 1]");
  const auto n = samples.cols();
  if (n < 1) throw std::invalid_argument("estimate_h_alpha: no samples");
  if (alpha > 0.0 && evals.cols() != n)
    throw std::invalid_argument("estimate_h_alpha: cached evaluations required for alpha > 0");

  Eigen::LLT<Mat> gamma_llt(p.gamma);
  if (gamma_llt.info() != Eigen::Success) throw std::runtime_error("estimate_h_alpha: Gamma not SPD");

  const double w = 1.0 / static_cast<double>(n);
  const double a2 = alpha * alpha;
  Mat h = Mat::Zero(p.dim_x(), p.dim_x());
  if (grads.is_shared()) {
    const Mat& g = grads.shared_matrix();
    const Mat t = gamma_llt.solve(g);  // Gamma^-1 grad, d_y x d_x
    if (alpha < 1.0) h += (1.0 - alpha) * g.transpose() * t;
    if (a2 > 0.0) {
      const Mat q = t.transpose() * ((-evals).colwise() + p.y_dagger);  // d_x x J
      h += a2 * w * q * q.transpose();
    }
  } else {
    for (Eigen::Index j = 0; j < n; ++j) {
      const Mat g = grads.at(samples.col(j));
      const Mat t = gamma_llt.solve(g);
      if (alpha < 1.0) h += w * (1.0 - alpha) * g.transpose() * t;
      if (a2 > 0.0) {
        const Vec q = t.transpose() * (p.y_dagger - evals.col(j));
        h += (a2 * w) * q * q.transpose();
      }
    }
  }
  const bool whitened = p.gamma.isIdentity(1e-12) && p.gamma0.isIdentity(1e-12);
  return make_diagnostic(h, alpha, alpha, whitened);
}

DiagnosticMatrix accumulate_h(const std::vector<std::pair<double, DiagnosticMatrix>>& pairs,
                              const std::vector<double>& weights) {
  if (pairs.empty()) throw std::invalid_argument("accumulate_h: empty sequence");
  for (std::size_t i = 1; i < pairs.size(); ++i)
    if (pairs[i].first < pairs[i - 1].first)
      throw std::invalid_argument("accumulate_h: alphas must be sorted ascending");
  std::vector<double> w = weights;
  if (w.empty()) w.assign(pairs.size(), 1.0 / static_cast<double>(pairs.size()));
  if (w.size() != pairs.size()) throw std::invalid_argument("accumulate_h: weight count mismatch");

  Mat h = Mat::Zero(pairs.front().second.h.rows(), pairs.front().second.h.cols());
  for (std::size_t i = 0; i < pairs.size(); ++i) h += w[i] * pairs[i].second.h;
  return make_diagnostic(h, pairs.front().first, pairs.back().first,
                         pairs.front().second.whitened);
}

std::vector<double> trapezoid_weights(const std::vector<double>& alphas) {
  const std::size_t n = alphas.size();
  if (n == 1) return {1.0};
  std::vector<double> w(n, 0.0);
  for (std::size_t i = 0; i + 1 < n; ++i) {
    const double h = alphas[i + 1] - alphas[i];
    w[i] += 0.5 * h;
    w[i + 1] += 0.5 * h;
  }
  return w;
}

Mat pca_basis(const Mat& cov, int r) {
  if (r > cov.rows()) throw std::invalid_argument("pca_basis: r exceeds dimension");
  return sym_eig_desc(0.5 * (cov + cov.transpose())).vectors.leftCols(r);
}

Mat pca_basis_samples(const Mat& samples, int r) {
  return pca_basis(empirical_cov(samples), r);
}

Mat input_basis(const DiagnosticMatrix& h, int r) {
  if (r > h.eigvecs.cols()) throw std::invalid_argument("input_basis: r exceeds dimension");
  return h.eigvecs.leftCols(r);
}

}  // namespace alis
