#include "alis/bip.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace alis {

namespace {

// PSD square root with negative eigenvalues (within slack) clamped to zero.
Mat psd_sqrt(const Mat& m) {
  if (m.size() == 0) return m;
  SymEig es = sym_eig_desc(0.5 * (m + m.transpose()));
  const double max_ev = std::max(0.0, es.values.size() ? es.values.maxCoeff() : 0.0);
  if (es.values.size() && es.values.minCoeff() < -1e-10 * std::max(1.0, max_ev))
    throw std::runtime_error("psd_sqrt: matrix is not positive semidefinite");
  Vec root = es.values.cwiseMax(0.0).cwiseSqrt();
  return es.vectors * root.asDiagonal() * es.vectors.transpose();
}

double gaussian_log_pdf(const Vec& resid, const Mat& cov) {
  if (resid.size() == 0) return 0.0;
  Eigen::LLT<Mat> llt(cov);
  if (llt.info() != Eigen::Success) throw std::runtime_error("gaussian_log_pdf: covariance not SPD");
  const Vec half = llt.matrixL().solve(resid);
  double log_det = 0.0;
  for (int i = 0; i < cov.rows(); ++i) log_det += std::log(llt.matrixL()(i, i));
  const double d = static_cast<double>(resid.size());
  return -0.5 * half.squaredNorm() - log_det - 0.5 * d * std::log(2.0 * std::numbers::pi);
}

}  // namespace

Vec InverseProblem::eval_clean(const Vec& x, Rng& rng) const {
  if (x.size() != dim_x()) throw std::invalid_argument("InverseProblem: bad parameter dimension");
  Vec y = forward(x, rng);
  if (y.size() != dim_y()) throw std::runtime_error("InverseProblem: forward output dimension mismatch");
  return y;
}

Vec InverseProblem::eval(const Vec& x, Rng& rng) const {
  Vec y = eval_clean(x, rng);
  if (noisy_forward) {
    y += sym_sqrt(gamma).sqrt * rng.normal_vec(dim_y());
  }
  return y;
}

Mat InverseProblem::eval_ensemble(const Mat& xs, Rng& rng) const {
  Mat out(dim_y(), xs.cols());
  if (noisy_forward) {
    const Mat noise_root = sym_sqrt(gamma).sqrt;
    for (int j = 0; j < xs.cols(); ++j)
      out.col(j) = eval_clean(xs.col(j), rng) + noise_root * rng.normal_vec(dim_y());
  } else {
    for (int j = 0; j < xs.cols(); ++j) out.col(j) = eval_clean(xs.col(j), rng);
  }
  return out;
}

double InverseProblem::log_prior(const Vec& x) const {
  return gaussian_log_pdf(x - prior_mean, gamma0);
}

std::pair<InverseProblem, WhitenTransform> whiten_problem(const InverseProblem& p) {
  const SymSqrt root0 = sym_sqrt(p.gamma0);
  const SymSqrt root = sym_sqrt(p.gamma);

  WhitenTransform wt;
  wt.input_fwd = root0.inv_sqrt;
  wt.input_inv = root0.sqrt;
  wt.output_fwd = root.inv_sqrt;
  wt.output_inv = root.sqrt;
  wt.prior_mean = p.prior_mean;

  InverseProblem w;
  w.gamma = Mat::Identity(p.dim_y(), p.dim_y());
  w.gamma0 = Mat::Identity(p.dim_x(), p.dim_x());
  w.prior_mean = Vec::Zero(p.dim_x());
  w.y_dagger = wt.whiten_y(p.y_dagger);
  w.noisy_forward = p.noisy_forward;
  w.forward = [base = p.forward, wt](const Vec& xb, Rng& rng) -> Vec {
    return wt.output_fwd * base(wt.unwhiten_x(xb), rng);
  };
  if (p.has_jacobian()) {
    w.jacobian = [base = p.jacobian, wt](const Vec& xb) -> Mat {
      return wt.output_fwd * base(wt.unwhiten_x(xb)) * wt.input_inv;
    };
  }
  return {std::move(w), std::move(wt)};
}

Mat map_basis(const Mat& basis, const Mat& transform) {
  return orthonormalize(transform * basis);
}

ReducedSpace make_reduced_space(const Mat& u_r, const Mat& v_s, bool whitened) {
  ReducedSpace sp;
  sp.u_r = u_r;
  sp.v_s = v_s;
  sp.u_perp = orthonormal_complement(u_r, static_cast<int>(u_r.rows()));
  sp.v_perp = orthonormal_complement(v_s, static_cast<int>(v_s.rows()));
  sp.whitened = whitened;
  const auto check_unitary = [](const Mat& a, const Mat& b, const char* what) {
    Mat full(a.rows(), a.cols() + b.cols());
    full << a, b;
    if ((full.transpose() * full - Mat::Identity(full.cols(), full.cols())).cwiseAbs().maxCoeff() > 1e-10)
      throw std::runtime_error(std::string("make_reduced_space: ") + what + " not unitary");
  };
  check_unitary(sp.u_r, sp.u_perp, "[u_r, u_perp]");
  check_unitary(sp.v_s, sp.v_perp, "[v_s, v_perp]");
  return sp;
}

GaussianConditional gaussian_conditional(const Mat& gamma0, const Mat& u_r, const Mat& u_perp) {
  GaussianConditional cond;
  const auto r = u_r.cols();
  const auto c = u_perp.cols();
  if (c == 0) {
    cond.mean_map = Mat(0, r);
    cond.cov = Mat(0, 0);
    cond.cov_sqrt = Mat(0, 0);
    return cond;
  }
  const Mat k_rr = u_r.transpose() * gamma0 * u_r;
  const Mat k_pr = u_perp.transpose() * gamma0 * u_r;
  Eigen::LLT<Mat> llt(k_rr);
  if (r > 0 && llt.info() != Eigen::Success)
    throw std::runtime_error("gaussian_conditional: singular U_r^T Gamma0 U_r");
  cond.mean_map = r > 0 ? Mat(llt.solve(k_pr.transpose()).transpose()) : Mat::Zero(c, 0);
  Mat cov = u_perp.transpose() * gamma0 * u_perp;
  if (r > 0) cov -= cond.mean_map * k_pr.transpose();
  cond.cov = 0.5 * (cov + cov.transpose());
  cond.cov_sqrt = psd_sqrt(cond.cov);
  return cond;
}

Vec GaussianConditional::sample(const Vec& x_r, const Vec& m_r, const Vec& m_perp, Rng& rng) const {
  if (cov.rows() == 0) return Vec(0);
  Vec mean = m_perp + mean_map * (x_r - m_r);
  return mean + cov_sqrt * rng.normal_vec(static_cast<int>(cov.rows()));
}

double GaussianConditional::log_pdf(const Vec& x_perp, const Vec& x_r, const Vec& m_r,
                                    const Vec& m_perp) const {
  if (cov.rows() == 0) return 0.0;
  return gaussian_log_pdf(x_perp - (m_perp + mean_map * (x_r - m_r)), cov);
}

double log_likelihood(const InverseProblem& p, const Vec& x, Rng& rng) {
  const Vec resid = p.y_dagger - p.eval_clean(x, rng);
  Eigen::LLT<Mat> llt(p.gamma);
  if (llt.info() != Eigen::Success) throw std::runtime_error("log_likelihood: Gamma not SPD");
  return -0.5 * resid.dot(llt.solve(resid));
}

double log_likelihood(const InverseProblem& p, const Vec& x) {
  Rng rng(0);
  return log_likelihood(p, x, rng);
}

double tempered_log_density(const InverseProblem& p, const Vec& x, double alpha,
                            const std::function<double(const Vec&)>& log_prior, Rng& rng) {
  if (!(alpha >= 0.0 && alpha <= 1.0))
    throw std::invalid_argument("tempered_log_density: alpha outside [0, 1]");
  return log_prior(x) + alpha * log_likelihood(p, x, rng);
}

double tempered_log_density(const InverseProblem& p, const Vec& x, double alpha, Rng& rng) {
  return tempered_log_density(p, x, alpha, [&p](const Vec& z) { return p.log_prior(z); }, rng);
}

MarginalPrior marginal_prior(const InverseProblem& p, const ReducedSpace& space) {
  MarginalPrior mp;
  mp.mean = space.u_r.transpose() * p.prior_mean;
  mp.cov = space.u_r.transpose() * p.gamma0 * space.u_r;
  return mp;
}

double MarginalPrior::log_pdf(const Vec& x_r) const {
  return gaussian_log_pdf(x_r - mean, cov);
}

double reduced_log_likelihood(const InverseProblem& p, const ReducedSpace& space,
                              const GaussianConditional& cond, const Vec& x_r, Rng& rng) {
  const Vec m_r = space.u_r.transpose() * p.prior_mean;
  const Vec m_perp = space.u_perp.transpose() * p.prior_mean;
  Vec x = space.u_r * x_r;
  if (cond.cov.rows() > 0) x += space.u_perp * cond.sample(x_r, m_r, m_perp, rng);
  const Vec g = p.eval_clean(x, rng);
  const Vec z = space.v_s.transpose() * (p.y_dagger - g);
  const Mat gamma_s = space.v_s.transpose() * p.gamma * space.v_s;
  Eigen::LLT<Mat> llt(gamma_s);
  if (llt.info() != Eigen::Success)
    throw std::runtime_error("reduced_log_likelihood: V_s^T Gamma V_s not SPD");
  return -0.5 * z.dot(llt.solve(z));
}

double reduced_log_posterior(const InverseProblem& p, const ReducedSpace& space,
                             const GaussianConditional& cond, const Vec& x_r, Rng& rng) {
  return marginal_prior(p, space).log_pdf(x_r) +
         reduced_log_likelihood(p, space, cond, x_r, rng);
}

Mat reconstruct_full_samples(const ReducedSpace& space, const GaussianConditional& cond,
                             const Mat& xr_samples, const Vec& prior_mean, Rng& rng,
                             const WhitenTransform* wt) {
  if (space.whitened && wt == nullptr)
    throw std::invalid_argument("reconstruct_full_samples: whitened space needs a transform");
  const Vec m_r = space.u_r.transpose() * prior_mean;
  const Vec m_perp = space.u_perp.transpose() * prior_mean;
  Mat out(space.u_r.rows(), xr_samples.cols());
  for (int j = 0; j < xr_samples.cols(); ++j) {
    Vec x = space.u_r * xr_samples.col(j);
    if (cond.cov.rows() > 0)
      x += space.u_perp * cond.sample(xr_samples.col(j), m_r, m_perp, rng);
    out.col(j) = space.whitened ? wt->unwhiten_x(x) : x;
  }
  return out;
}

}  // namespace alis
