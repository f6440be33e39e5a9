#pragma once

#include <functional>
#include <optional>
#include <utility>

#include "alis/linalg.hpp"
#include "alis/random.hpp"

namespace alis {

/// A Bayesian inverse problem y = G(x) + eta with Gaussian prior N(m0, Gamma0)
/// and noise eta ~ N(0, Gamma). The forward map may be stochastic through the
/// rng argument (e.g. a random initial condition); when noisy_forward is set,
/// eval() additionally perturbs each evaluation with N(0, Gamma) noise.
struct InverseProblem {
  std::function<Vec(const Vec&, Rng&)> forward;
  std::function<Mat(const Vec&)> jacobian;  // empty when no analytic gradient
  Mat gamma;        // noise covariance, d_y x d_y, SPD
  Mat gamma0;       // prior covariance, d_x x d_x, SPD
  Vec prior_mean;   // d_x
  Vec y_dagger;     // observed data, d_y
  bool noisy_forward = false;

  int dim_x() const { return static_cast<int>(prior_mean.size()); }
  int dim_y() const { return static_cast<int>(y_dagger.size()); }

  bool has_jacobian() const { return static_cast<bool>(jacobian); }

  /// One forward evaluation, with additive N(0, Gamma) noise if noisy_forward.
  Vec eval(const Vec& x, Rng& rng) const;
  /// Forward evaluation without the noisy_forward perturbation.
  Vec eval_clean(const Vec& x, Rng& rng) const;
  /// Columnwise eval() over an ensemble.
  Mat eval_ensemble(const Mat& xs, Rng& rng) const;

  /// Unnormalized Gaussian prior log-density.
  double log_prior(const Vec& x) const;
};

/// Whitening factors Gamma0^{-+1/2}, Gamma^{-+1/2}, plus the prior mean that
/// the input transform subtracts. Vectors map as x_bar = input_fwd (x - mean),
/// y_bar = output_fwd y; bases computed in whitened coordinates map back with
/// map_basis and the *_fwd factors.
struct WhitenTransform {
  Mat input_fwd, input_inv;    // Gamma0^{-1/2}, Gamma0^{1/2}
  Mat output_fwd, output_inv;  // Gamma^{-1/2},  Gamma^{1/2}
  Vec prior_mean;

  Vec whiten_x(const Vec& x) const { return input_fwd * (x - prior_mean); }
  Vec unwhiten_x(const Vec& xb) const { return input_inv * xb + prior_mean; }
  Vec whiten_y(const Vec& y) const { return output_fwd * y; }
  Vec unwhiten_y(const Vec& yb) const { return output_inv * yb; }
  Mat whiten_x_cols(const Mat& xs) const { return input_fwd * (xs.colwise() - prior_mean); }
  Mat whiten_y_cols(const Mat& ys) const { return output_fwd * ys; }
};

/// Transformed problem with identity prior and noise covariances. The prior
/// mean is folded into the whitened forward map, so residuals (and hence
/// log-likelihoods) are preserved exactly.
std::pair<InverseProblem, WhitenTransform> whiten_problem(const InverseProblem& p);

/// Orthonormal basis for Col(transform * basis); thin QR, positive diagonal.
/// Maps a basis computed in whitened coordinates back to the original ones
/// (pass input_fwd for input-space bases and output_fwd for output-space).
Mat map_basis(const Mat& basis, const Mat& transform);

/// Paired input/output reduction bases with their orthonormal complements.
struct ReducedSpace {
  Mat u_r, u_perp;  // d_x x r, d_x x (d_x - r)
  Mat v_s, v_perp;  // d_y x s, d_y x (d_y - s)
  bool whitened = false;

  int r() const { return static_cast<int>(u_r.cols()); }
  int s() const { return static_cast<int>(v_s.cols()); }
};

/// Builds complements and checks unitarity of [u_r, u_perp] and [v_s, v_perp].
ReducedSpace make_reduced_space(const Mat& u_r, const Mat& v_s, bool whitened);

/// Conditional law of the complement coordinates given the retained ones,
/// for a centered Gaussian with covariance gamma0 split by (u_r, u_perp):
/// X_perp | X_r = x_r ~ N(mean_map x_r, cov).
struct GaussianConditional {
  Mat mean_map;  // (d_x - r) x r
  Mat cov;       // (d_x - r) x (d_x - r), PSD
  Mat cov_sqrt;  // symmetric PSD square root, for sampling

  /// Conditional draw for a prior with mean m0 (exactly the centered formula
  /// when m0 = 0): N(u_perp^T m0 + mean_map (x_r - u_r^T m0), cov).
  Vec sample(const Vec& x_r, const Vec& m_r, const Vec& m_perp, Rng& rng) const;
  double log_pdf(const Vec& x_perp, const Vec& x_r, const Vec& m_r, const Vec& m_perp) const;
};

GaussianConditional gaussian_conditional(const Mat& gamma0, const Mat& u_r, const Mat& u_perp);

/// -1/2 ||y_dagger - G(x)||^2_Gamma, using the clean forward map.
double log_likelihood(const InverseProblem& p, const Vec& x, Rng& rng);
double log_likelihood(const InverseProblem& p, const Vec& x);

/// log_prior(x) + alpha * log_likelihood(p, x); alpha must lie in [0, 1].
double tempered_log_density(const InverseProblem& p, const Vec& x, double alpha,
                            const std::function<double(const Vec&)>& log_prior, Rng& rng);
double tempered_log_density(const InverseProblem& p, const Vec& x, double alpha, Rng& rng);

/// Marginal prior of X_r: N(u_r^T m0, u_r^T Gamma0 u_r).
struct MarginalPrior {
  Vec mean;
  Mat cov;
  double log_pdf(const Vec& x_r) const;
};
MarginalPrior marginal_prior(const InverseProblem& p, const ReducedSpace& space);

/// Reduced log-likelihood estimated with a single conditional draw:
/// -1/2 ||V_s^T y - V_s^T G(U_r x_r + U_perp x_perp)||^2_{V_s^T Gamma V_s}.
double reduced_log_likelihood(const InverseProblem& p, const ReducedSpace& space,
                              const GaussianConditional& cond, const Vec& x_r, Rng& rng);

/// reduced_log_likelihood plus the marginal prior log-density of x_r.
double reduced_log_posterior(const InverseProblem& p, const ReducedSpace& space,
                             const GaussianConditional& cond, const Vec& x_r, Rng& rng);

/// Reconstructs full-space samples from reduced ones by one fresh conditional
/// draw each; un-whitens the result when the space is whitened (then wt must
/// be given and prior_mean refers to the whitened problem, i.e. zero).
Mat reconstruct_full_samples(const ReducedSpace& space, const GaussianConditional& cond,
                             const Mat& xr_samples, const Vec& prior_mean, Rng& rng,
                             const WhitenTransform* wt = nullptr);

}  // namespace alis
