#include "alis/metrics.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace alis {

namespace {

Mat psd_root(const Mat& m) {
  SymEig es = sym_eig_desc(0.5 * (m + m.transpose()));
  return es.vectors * es.values.cwiseMax(0.0).cwiseSqrt().asDiagonal() * es.vectors.transpose();
}

void check_spd(const Mat& m, const char* what) {
  Eigen::LLT<Mat> llt(m);
  if (llt.info() != Eigen::Success) throw std::invalid_argument(std::string(what) + ": covariance not SPD");
}

}  // namespace

double w2_gaussian_sq(const GaussianPosterior& p1, const GaussianPosterior& p2) {
  check_spd(p1.cov, "w2_gaussian_sq");
  check_spd(p2.cov, "w2_gaussian_sq");
  const Mat root1 = psd_root(p1.cov);
  const Mat cross = psd_root(root1 * p2.cov * root1);
  const double trace_term = p1.cov.trace() + p2.cov.trace() - 2.0 * cross.trace();
  return (p1.mean - p2.mean).squaredNorm() + trace_term;
}

DistanceReport hellinger2_snis_from_log_weights(const Vec& log_w) {
  const auto n = log_w.size();
  if (n < 1) throw std::invalid_argument("hellinger2_snis: no samples");
  double max_lw = -std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < n; ++i)
    if (std::isfinite(log_w[i])) max_lw = std::max(max_lw, log_w[i]);
  if (!std::isfinite(max_lw))
    throw std::runtime_error("hellinger2_snis: all weights are zero or non-finite");

  double sum_half = 0.0, sum_w = 0.0, sum_w2 = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double lw = log_w[i] - max_lw;
    const double w = std::isfinite(lw) ? std::exp(lw) : 0.0;
    sum_half += std::sqrt(w);
    sum_w += w;
    sum_w2 += w * w;
  }
  if (sum_w <= 0.0) throw std::runtime_error("hellinger2_snis: weight sum vanished");

  DistanceReport rep;
  rep.estimator = DistanceReport::Estimator::Snis;
  rep.n_samples = static_cast<int>(n);
  rep.value = 1.0 - (sum_half / static_cast<double>(n)) / std::sqrt(sum_w / static_cast<double>(n));
  rep.ess = sum_w * sum_w / sum_w2;
  return rep;
}

DistanceReport hellinger2_snis(const std::function<double(const Vec&)>& log_tilde_pi,
                               const std::function<double(const Vec&)>& log_tilde_pi_star,
                               const Mat& samples_from_pi_star) {
  const auto n = samples_from_pi_star.rows();
  Vec log_w(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Vec x = samples_from_pi_star.row(i).transpose();
    log_w[i] = log_tilde_pi(x) - log_tilde_pi_star(x);
  }
  return hellinger2_snis_from_log_weights(log_w);
}

double hellinger2_gaussian(const GaussianPosterior& p1, const GaussianPosterior& p2) {
  check_spd(p1.cov, "hellinger2_gaussian");
  check_spd(p2.cov, "hellinger2_gaussian");
  const Mat avg = 0.5 * (p1.cov + p2.cov);
  const Eigen::LLT<Mat> llt_avg(avg);
  const auto log_det = [](const Mat& m) {
    Eigen::LLT<Mat> llt(m);
    double acc = 0.0;
    for (int i = 0; i < m.rows(); ++i) acc += std::log(llt.matrixL()(i, i));
    return 2.0 * acc;
  };
  const Vec diff = p1.mean - p2.mean;
  const double quad = diff.dot(llt_avg.solve(diff));
  const double log_coeff =
      0.25 * log_det(p1.cov) + 0.25 * log_det(p2.cov) - 0.5 * log_det(avg);
  return 1.0 - std::exp(log_coeff - 0.125 * quad);
}

}  // namespace alis
