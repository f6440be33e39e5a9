#pragma once

#include "alis/linalg.hpp"
#include "alis/random.hpp"

namespace alis {

/// Random-Fourier-feature ridge regressor, approximating a squared-
/// exponential ARD kernel. Inputs and outputs are standardized internally;
/// ARD lengthscales rescale the standardized inputs before the shared
/// frequencies are applied.
struct RffModel {
  Mat frequencies;   // n_features x r
  Vec phases;        // n_features
  Mat weights;       // n_features x s
  Vec lengthscales;  // r
  double nugget = 1e-6;
  Vec input_mean, input_scale;   // r
  Vec output_mean, output_scale; // s
  Mat output_cov;  // s x s predictive covariance (constant; set by the caller)

  int input_dim() const { return static_cast<int>(frequencies.cols()); }
  int output_dim() const { return static_cast<int>(weights.cols()); }
};

struct RffOptions {
  int n_features = 200;
  double nugget = 1e-6;
  bool tune_lengthscales = true;
  int cv_folds = 5;
};

/// Fits features cos(w^T z + b), w ~ N(0,I), b ~ U(0, 2pi), on standardized
/// inputs z, with a ridge solve. Lengthscales start from the per-dimension
/// median-distance heuristic; a shared multiplier from {1/4, 1/2, 1, 2, 4}
/// is picked by k-fold cross-validated MSE. Deterministic given rng.
RffModel rff_fit(const Mat& xs, const Mat& ys, const RffOptions& opts, Rng& rng);

struct RffPrediction {
  Vec mean;
  Mat cov;
};
RffPrediction rff_predict(const RffModel& model, const Vec& x);

/// Mean predictions for column inputs.
Mat rff_predict_mean(const RffModel& model, const Mat& xs);

}  // namespace alis
