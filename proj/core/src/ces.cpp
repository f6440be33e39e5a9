#include "alis/ces.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace alis {

namespace {

std::vector<double> alpha_grid(double step, double extra_stop) {
  std::vector<double> stops;
  const int n = static_cast<int>(std::lround(1.0 / step));
  for (int i = 1; i <= n; ++i) stops.push_back(std::min(1.0, i * step));
  const bool present = std::any_of(stops.begin(), stops.end(), [&](double a) {
    return std::abs(a - extra_stop) < 1e-12;
  });
  if (!present && extra_stop > 0.0 && extra_stop <= 1.0) {
    stops.push_back(extra_stop);
    std::sort(stops.begin(), stops.end());
  }
  return stops;
}

}  // namespace

CesResult ces_run(const InverseProblem& p, const CesConfig& config, Rng& rng) {
  CesResult result;

  // Calibrate: full-space EKI along the tempering grid.
  const std::vector<double> stops = alpha_grid(config.alpha_step, config.train_alpha);
  Rng rng_eki = rng.split(101);
  result.calibration =
      run_tempered_eki(p, config.ensemble_size, stops, config.eki_schedule, rng_eki);

  // Encode: reduced space from the tempered samples.
  auto [whitened, wt] = whiten_problem(p);
  const TemperedSamples samples = tempered_samples_from_eki(result.calibration);
  Rng rng_space = rng.split(102);
  result.space = build_reduced_space(p, wt, whitened, samples, config.reduction, rng_space);

  // Emulate: RFF regression on encoded pairs from the training stop.
  const int train_level = result.calibration.index_of(config.train_alpha);
  const Mat xr = result.space.u_r.transpose() * result.calibration.ensembles[train_level];
  const Mat ys = result.space.v_s.transpose() * result.calibration.evaluations[train_level];
  Rng rng_rff = rng.split(103);
  result.emulator = rff_fit(xr, ys, config.rff, rng_rff);
  result.emulator.output_cov = result.space.v_s.transpose() * p.gamma * result.space.v_s;

  // Sample: adaptive RWM on emulated reduced log-likelihood + marginal prior.
  const MarginalPrior prior = marginal_prior(p, result.space);
  const Vec y_s = result.space.v_s.transpose() * p.y_dagger;
  Eigen::LLT<Mat> gamma_s_llt(result.emulator.output_cov);
  if (gamma_s_llt.info() != Eigen::Success)
    throw std::runtime_error("ces_run: V_s^T Gamma V_s not SPD");
  const RffModel& emu = result.emulator;
  const auto log_target = [&](const Vec& x_r) {
    const Vec z = y_s - rff_predict_mean(emu, x_r);
    return prior.log_pdf(x_r) - 0.5 * z.dot(gamma_s_llt.solve(z));
  };
  const Vec x0 =
      result.space.u_r.transpose() * result.calibration.ensembles.back().rowwise().mean();
  Rng rng_mcmc = rng.split(104);
  result.chain = rwm_sample(log_target, x0, config.mcmc, rng_mcmc);

  // Reconstruct full-space samples with fresh conditional draws.
  const GaussianConditional cond =
      gaussian_conditional(p.gamma0, result.space.u_r, result.space.u_perp);
  const Mat xr_thin = thin_rows(result.chain.samples, config.chain_thin).transpose();
  Rng rng_rec = rng.split(105);
  result.full_samples =
      reconstruct_full_samples(result.space, cond, xr_thin, p.prior_mean, rng_rec);

  nlohmann::json prov;
  prov["seed"] = rng.seed();
  prov["ensemble_size"] = config.ensemble_size;
  prov["alpha_step"] = config.alpha_step;
  prov["train_alpha"] = config.train_alpha;
  prov["r"] = config.reduction.r;
  prov["s"] = config.reduction.s;
  prov["method"] = static_cast<int>(config.reduction.method);
  prov["output_method"] = static_cast<int>(config.reduction.output_method);
  prov["gradients"] = static_cast<int>(config.reduction.gradients);
  prov["n_features"] = config.rff.n_features;
  prov["rff_nugget"] = config.rff.nugget;
  prov["mcmc_samples"] = config.mcmc.n_samples;
  prov["chain_thin"] = config.chain_thin;
  prov["alphas"] = result.calibration.alphas;
  result.provenance_json = prov.dump(2);
  return result;
}

}  // namespace alis
