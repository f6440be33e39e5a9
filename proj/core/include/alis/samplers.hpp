#pragma once

#include <functional>
#include <vector>

#include "alis/bip.hpp"

namespace alis {

/// Ensembles and their forward evaluations recorded along a tempering path.
/// alphas starts at 0 (prior ensemble) and is strictly increasing.
struct TemperedEnsemble {
  std::vector<double> alphas;
  std::vector<Mat> ensembles;    // d_x x J each
  std::vector<Mat> evaluations;  // d_y x J each

  int size() const { return static_cast<int>(alphas.size()); }
  /// Index of a recorded stop (within 1e-12); throws if absent.
  int index_of(double alpha) const;
};

/// One ensemble Kalman inversion step,
///   x <- x + C^xG (C^GG + dt^-1 Gamma)^-1 (y_j - G(x)),
/// with perturbed data y_j = y_dagger + sqrt(dt^-1) Gamma^{1/2} z_j. The
/// deterministic overload takes the standard normals z as a d_y x J matrix.
Mat eki_update(const Mat& ensemble, const Mat& evaluations, const Vec& y_dagger,
               const Mat& gamma, double dt, const Mat& noise);
Mat eki_update(const Mat& ensemble, const Mat& evaluations, const Vec& y_dagger,
               const Mat& gamma, double dt, Rng& rng);

struct EkiSchedule {
  enum class Kind { Uniform, Adaptive } kind = Kind::Uniform;
  int n_steps = 10;           // nominal steps over [0, max stop] (Uniform)
  double misfit_scale = 1.0;  // dt = min(to-next-stop, scale / ||normalized misfit||)
};

/// Runs EKI from a prior ensemble, truncating steps so the cumulative alpha
/// hits every requested stop exactly; records ensembles and the evaluations
/// used by the update at alpha = 0 and at each stop. Stops must be sorted,
/// in (0, 1]. Terminates at max(alpha_stops).
TemperedEnsemble run_tempered_eki(const InverseProblem& p, int ensemble_size,
                                  const std::vector<double>& alpha_stops,
                                  const EkiSchedule& schedule, Rng& rng);

struct McmcChain {
  Mat samples;  // n x dim, post burn-in
  double acceptance_rate = 0.0;
  std::vector<double> step_scale_history;  // one entry per iteration, burn-in included
};

struct RwmOptions {
  int n_samples = 1000;
  int n_burn = -1;  // negative: 20% of n_samples
  double target_accept = 0.234;
  double initial_step = 0.5;
};

/// Random-walk Metropolis with a Gaussian proposal whose scale adapts toward
/// target_accept during burn-in (Robbins-Monro on log step); adaptation is
/// frozen afterwards. NaN log-densities reject the proposal; more than 50%
/// NaN proposals aborts.
McmcChain rwm_sample(const std::function<double(const Vec&)>& log_density, const Vec& x0,
                     const RwmOptions& opts, Rng& rng);

/// Every thin-th row, starting at the first.
Mat thin_rows(const Mat& samples, int thin);

}  // namespace alis
