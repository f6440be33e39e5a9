#pragma once

#include <functional>

#include "alis/problems.hpp"

namespace alis {

struct DistanceReport {
  double value = 0.0;
  enum class Estimator { ClosedForm, Snis } estimator = Estimator::ClosedForm;
  int n_samples = 0;
  double ess = 0.0;  // effective sample size, SNIS only
};

/// Squared Bures-Wasserstein distance between Gaussians:
/// ||mu1 - mu2||^2 + Tr[S1 + S2 - 2 (sqrt(S1) S2 sqrt(S1))^{1/2}].
double w2_gaussian_sq(const GaussianPosterior& p1, const GaussianPosterior& p2);

/// Squared Hellinger distance by self-normalized importance sampling from
/// pi_star: 1 - mean(sqrt(w)) / sqrt(mean(w)), w_i = pi~(x_i)/pi~*(x_i),
/// evaluated in log space. Rows of samples are draws from pi_star.
DistanceReport hellinger2_snis(const std::function<double(const Vec&)>& log_tilde_pi,
                               const std::function<double(const Vec&)>& log_tilde_pi_star,
                               const Mat& samples_from_pi_star);

/// Same estimator from precomputed log-weight values log pi~ - log pi~*.
DistanceReport hellinger2_snis_from_log_weights(const Vec& log_w);

/// Closed-form squared Hellinger distance between Gaussians.
double hellinger2_gaussian(const GaussianPosterior& p1, const GaussianPosterior& p2);

}  // namespace alis
