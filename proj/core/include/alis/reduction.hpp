#pragma once

#include <functional>
#include <optional>
#include <utility>
#include <vector>

#include "alis/bip.hpp"

namespace alis {

/// Symmetric PSD diagnostic matrix with its eigendecomposition. alpha_lo ==
/// alpha_hi tags a single tempering level; otherwise an accumulation interval.
struct DiagnosticMatrix {
  Mat h;
  double alpha_lo = 0.0;
  double alpha_hi = 0.0;
  Vec eigvals;  // descending
  Mat eigvecs;  // column-orthonormal, sign-fixed
  bool whitened = false;
};

DiagnosticMatrix make_diagnostic(const Mat& h, double alpha_lo, double alpha_hi, bool whitened);

/// Forward-map gradient source: a callable per sample, or one shared matrix
/// from statistical linearization.
class GradientProvider {
 public:
  static GradientProvider exact(std::function<Mat(const Vec&)> jac);
  static GradientProvider shared(Mat linearization);

  bool is_shared() const { return shared_.has_value(); }
  const Mat& shared_matrix() const;
  Mat at(const Vec& x) const;

 private:
  std::function<Mat(const Vec&)> jac_;
  std::optional<Mat> shared_;
};

/// Global least-squares linear fit [(C^xx + nugget I)^-1 C^xG]^T of the map
/// over an ensemble; with nugget 0 the pseudo-inverse is used, truncating
/// singular values below 1e-12 of the largest.
Mat statistical_linearization(const Mat& xs, const Mat& gs, double nugget);

/// Default SL nugget: 0 for clean evaluations, Tr(Gamma)/J for noisy ones.
double default_sl_nugget(const InverseProblem& p, int n_samples);

/// Monte Carlo estimate of the tempering-level diagnostic matrix
///   H = mean_j grad^T Gamma^-1 [(1-a)Gamma + a^2 r_j r_j^T] Gamma^-1 grad
/// over sample columns, with residuals r_j = y_dagger - evals_j. Cached
/// evaluations are required whenever alpha > 0 (the residual term); for
/// alpha = 0 they may be empty.
DiagnosticMatrix estimate_h_alpha(const Mat& samples, const Mat& evals,
                                  const GradientProvider& grads, const InverseProblem& p,
                                  double alpha);

/// Quadrature of per-level diagnostics over [alpha_0, alpha_k]; equal weights
/// by default, caller-supplied weights (e.g. trapezoidal) otherwise.
DiagnosticMatrix accumulate_h(const std::vector<std::pair<double, DiagnosticMatrix>>& pairs,
                              const std::vector<double>& weights = {});

std::vector<double> trapezoid_weights(const std::vector<double>& alphas);

/// Leading-r eigenvectors of a covariance, descending, sign-fixed.
Mat pca_basis(const Mat& cov, int r);
/// Same, from column samples (empirical covariance).
Mat pca_basis_samples(const Mat& samples, int r);

/// Leading-r eigenvectors of the diagnostic matrix.
Mat input_basis(const DiagnosticMatrix& h, int r);

}  // namespace alis
