#pragma once

#include <optional>
#include <vector>

#include "alis/output_opt.hpp"
#include "alis/samplers.hpp"

namespace alis {

/// Samples of tempered posteriors, in original (unwhitened) coordinates,
/// with their forward evaluations. Levels sorted ascending in alpha.
struct TemperedSamples {
  std::vector<double> alphas;
  std::vector<Mat> xs;  // d_x x J_l per level
  std::vector<Mat> gs;  // d_y x J_l per level

  int level_of(double alpha) const;
  bool has_level(double alpha) const;
};

TemperedSamples tempered_samples_from_eki(const TemperedEnsemble& eki);

enum class ReductionMethod { Pca, Lis, LisAccumulated };
enum class OutputMethod { Auto, Pca, Alpha0, Incremental, Full, Nepv };
enum class GradientMode { Exact, StatisticalLinearization };

struct SpaceBuildConfig {
  ReductionMethod method = ReductionMethod::Lis;
  double alpha = 0.5;      // Lis
  double alpha_lo = 0.0;   // LisAccumulated
  double alpha_hi = 1.0;
  int r = 1;
  int s = 1;
  OutputMethod output_method = OutputMethod::Auto;  // Auto: alpha0 closed form at 0, incremental otherwise
  GradientMode gradients = GradientMode::StatisticalLinearization;
  std::optional<double> sl_nugget;  // default: 0 clean, Tr(Gamma)/J noisy
  bool pool_sl = true;              // pool samples with alpha' <= alpha for SL
};

/// Tempering levels the sample source must provide for a configuration.
std::vector<double> required_alphas(const SpaceBuildConfig& cfg);

/// Builds the (U_r, V_s) pair in original coordinates. LIS variants whiten
/// the samples, estimate the diagnostic matrix / optimize J in whitened
/// coordinates, and map the bases back; PCA works directly on the original
/// covariances. rng drives the NEPv optimizer only.
ReducedSpace build_reduced_space(const InverseProblem& p, const WhitenTransform& wt,
                                 const InverseProblem& whitened, const TemperedSamples& samples,
                                 const SpaceBuildConfig& cfg, Rng& rng);

/// The whitened objective context for the configured method (single level or
/// accumulated), exposed for optimizer comparisons.
ObjectiveContext build_objective_context(const InverseProblem& whitened, const WhitenTransform& wt,
                                         const TemperedSamples& samples,
                                         const SpaceBuildConfig& cfg);

}  // namespace alis
