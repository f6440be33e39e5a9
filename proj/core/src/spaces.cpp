#include "alis/spaces.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace alis {

namespace {
constexpr double kAlphaTol = 1e-9;
}

int TemperedSamples::level_of(double alpha) const {
  for (std::size_t i = 0; i < alphas.size(); ++i)
    if (std::abs(alphas[i] - alpha) < kAlphaTol) return static_cast<int>(i);
  throw std::invalid_argument("TemperedSamples: no level at requested alpha");
}

bool TemperedSamples::has_level(double alpha) const {
  for (const double a : alphas)
    if (std::abs(a - alpha) < kAlphaTol) return true;
  return false;
}

TemperedSamples tempered_samples_from_eki(const TemperedEnsemble& eki) {
  TemperedSamples out;
  out.alphas = eki.alphas;
  out.xs = eki.ensembles;
  out.gs = eki.evaluations;
  return out;
}

std::vector<double> required_alphas(const SpaceBuildConfig& cfg) {
  switch (cfg.method) {
    case ReductionMethod::Pca:
      return {0.0};
    case ReductionMethod::Lis: {
      if (cfg.gradients == GradientMode::StatisticalLinearization && cfg.pool_sl && cfg.alpha > 0.0)
        return {0.0, cfg.alpha};  // pooling wants the prior level too when distinct
      return {cfg.alpha};
    }
    case ReductionMethod::LisAccumulated: {
      // Grid of multiples of 0.1 intersected with [alpha_lo, alpha_hi].
      std::vector<double> out;
      for (int i = 0; i <= 10; ++i) {
        const double a = 0.1 * i;
        if (a >= cfg.alpha_lo - kAlphaTol && a <= cfg.alpha_hi + kAlphaTol) out.push_back(a);
      }
      return out;
    }
  }
  return {};
}

namespace {

struct WhitenedLevel {
  double alpha = 0.0;
  Mat xs, gs;  // whitened coordinates
};

WhitenedLevel whiten_level(const TemperedSamples& samples, const WhitenTransform& wt, int level) {
  WhitenedLevel wl;
  wl.alpha = samples.alphas[level];
  wl.xs = wt.whiten_x_cols(samples.xs[level]);
  wl.gs = wt.whiten_y_cols(samples.gs[level]);
  return wl;
}

// SL matrix for a level, pooling all samples with alpha' <= alpha when asked.
Mat sl_for_level(const TemperedSamples& samples, const WhitenTransform& wt,
                 const InverseProblem& whitened, const SpaceBuildConfig& cfg, double alpha) {
  std::vector<int> levels;
  for (std::size_t i = 0; i < samples.alphas.size(); ++i) {
    if (cfg.pool_sl ? samples.alphas[i] <= alpha + kAlphaTol
                    : std::abs(samples.alphas[i] - alpha) < kAlphaTol)
      levels.push_back(static_cast<int>(i));
  }
  if (levels.empty()) throw std::invalid_argument("sl_for_level: no samples at alpha");
  int total = 0;
  for (const int l : levels) total += static_cast<int>(samples.xs[l].cols());
  Mat xs(whitened.dim_x(), total), gs(whitened.dim_y(), total);
  int col = 0;
  for (const int l : levels) {
    const WhitenedLevel wl = whiten_level(samples, wt, l);
    xs.middleCols(col, wl.xs.cols()) = wl.xs;
    gs.middleCols(col, wl.gs.cols()) = wl.gs;
    col += static_cast<int>(wl.xs.cols());
  }
  const double nugget = cfg.sl_nugget ? *cfg.sl_nugget : default_sl_nugget(whitened, total);
  return statistical_linearization(xs, gs, nugget);
}

GradientProvider gradients_for_level(const TemperedSamples& samples, const WhitenTransform& wt,
                                     const InverseProblem& whitened, const SpaceBuildConfig& cfg,
                                     double alpha) {
  if (cfg.gradients == GradientMode::Exact) {
    if (!whitened.has_jacobian())
      throw std::invalid_argument("build_reduced_space: exact gradients unavailable");
    return GradientProvider::exact(whitened.jacobian);
  }
  return GradientProvider::shared(sl_for_level(samples, wt, whitened, cfg, alpha));
}

Mat optimize_output_basis(const ObjectiveContext& ctx, const SpaceBuildConfig& cfg, int s,
                          Rng& rng) {
  OutputMethod method = cfg.output_method;
  if (method == OutputMethod::Auto) {
    const bool all_zero = (ctx.alphas.array().abs() < kAlphaTol).all();
    method = all_zero ? OutputMethod::Alpha0 : OutputMethod::Incremental;
  }
  switch (method) {
    case OutputMethod::Alpha0:
      return output_basis_alpha0(ctx, s);
    case OutputMethod::Incremental:
      return optimize_incremental(ctx, s);
    case OutputMethod::Full:
      return optimize_full(ctx, s, Mat());
    case OutputMethod::Nepv:
      return optimize_nepv(ctx, s, rng);
    default:
      throw std::logic_error("optimize_output_basis: unexpected method");
  }
}

}  // namespace

namespace {

// Accumulation runs over the levels the source actually provides within the
// configured interval (MCMC sources generate the requested 0.1 grid; EKI
// sources may stop on a coarser one).
std::vector<double> accumulation_levels(const TemperedSamples& samples,
                                        const SpaceBuildConfig& cfg) {
  std::vector<double> out;
  for (const double a : samples.alphas)
    if (a >= cfg.alpha_lo - kAlphaTol && a <= cfg.alpha_hi + kAlphaTol) out.push_back(a);
  if (out.empty())
    throw std::invalid_argument("accumulation: no sample levels inside [alpha_lo, alpha_hi]");
  return out;
}

}  // namespace

ObjectiveContext build_objective_context(const InverseProblem& whitened, const WhitenTransform& wt,
                                         const TemperedSamples& samples,
                                         const SpaceBuildConfig& cfg) {
  if (cfg.method == ReductionMethod::Lis) {
    const int level = samples.level_of(cfg.alpha);
    const WhitenedLevel wl = whiten_level(samples, wt, level);
    const GradientProvider grads = gradients_for_level(samples, wt, whitened, cfg, cfg.alpha);
    return make_objective_context(whitened, wl.xs, wl.gs, grads, cfg.alpha);
  }
  if (cfg.method == ReductionMethod::LisAccumulated) {
    std::vector<Mat> xs, gs;
    std::vector<GradientProvider> grads;
    std::vector<double> alphas;
    for (const double a : accumulation_levels(samples, cfg)) {
      const int level = samples.level_of(a);
      const WhitenedLevel wl = whiten_level(samples, wt, level);
      xs.push_back(wl.xs);
      gs.push_back(wl.gs);
      grads.push_back(gradients_for_level(samples, wt, whitened, cfg, a));
      alphas.push_back(a);
    }
    return make_objective_context_accumulated(whitened, xs, gs, grads, alphas);
  }
  throw std::invalid_argument("build_objective_context: PCA has no objective context");
}

ReducedSpace build_reduced_space(const InverseProblem& p, const WhitenTransform& wt,
                                 const InverseProblem& whitened, const TemperedSamples& samples,
                                 const SpaceBuildConfig& cfg, Rng& rng) {
  if (cfg.method == ReductionMethod::Pca) {
    const Mat u_r = pca_basis(p.gamma0, cfg.r);
    const int level = samples.has_level(0.0) ? samples.level_of(0.0) : 0;
    const Mat out_cov = empirical_cov(samples.gs[level]) + p.gamma;
    const Mat v_s = pca_basis(out_cov, cfg.s);
    return make_reduced_space(u_r, v_s, false);
  }

  // Input side: eigenvectors of the (possibly accumulated) diagnostic matrix.
  DiagnosticMatrix diag;
  if (cfg.method == ReductionMethod::Lis) {
    const int level = samples.level_of(cfg.alpha);
    const WhitenedLevel wl = whiten_level(samples, wt, level);
    const GradientProvider grads = gradients_for_level(samples, wt, whitened, cfg, cfg.alpha);
    diag = estimate_h_alpha(wl.xs, wl.gs, grads, whitened, cfg.alpha);
  } else {
    std::vector<std::pair<double, DiagnosticMatrix>> pairs;
    for (const double a : accumulation_levels(samples, cfg)) {
      const int level = samples.level_of(a);
      const WhitenedLevel wl = whiten_level(samples, wt, level);
      const GradientProvider grads = gradients_for_level(samples, wt, whitened, cfg, a);
      pairs.emplace_back(a, estimate_h_alpha(wl.xs, wl.gs, grads, whitened, a));
    }
    diag = accumulate_h(pairs);
  }
  const Mat u_bar = input_basis(diag, cfg.r);

  const ObjectiveContext ctx = build_objective_context(whitened, wt, samples, cfg);
  const Mat v_bar = optimize_output_basis(ctx, cfg, cfg.s, rng);

  const Mat u_r = map_basis(u_bar, wt.input_fwd);
  const Mat v_s = map_basis(v_bar, wt.output_fwd);
  return make_reduced_space(u_r, v_s, false);
}

}  // namespace alis
