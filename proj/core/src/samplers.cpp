#include "alis/samplers.hpp"

#include <cmath>
#include <stdexcept>

namespace alis {

int TemperedEnsemble::index_of(double alpha) const {
  for (int i = 0; i < size(); ++i)
    if (std::abs(alphas[i] - alpha) < 1e-12) return i;
  throw std::invalid_argument("TemperedEnsemble: no ensemble recorded at requested alpha");
}

Mat eki_update(const Mat& ensemble, const Mat& evaluations, const Vec& y_dagger,
               const Mat& gamma, double dt, const Mat& noise) {
  const auto n = ensemble.cols();
  if (n < 3) throw std::invalid_argument("eki_update: ensemble size must be at least 3");
  if (!(dt > 0.0 && dt <= 1.0)) throw std::invalid_argument("eki_update: dt must be in (0, 1]");
  if (evaluations.cols() != n || noise.cols() != n)
    throw std::invalid_argument("eki_update: column count mismatch");

  const double inv_n = 1.0 / static_cast<double>(n);
  const Mat xc = ensemble.colwise() - ensemble.rowwise().mean();
  const Mat gc = evaluations.colwise() - evaluations.rowwise().mean();
  const Mat c_xg = xc * gc.transpose() * inv_n;
  const Mat c_gg = gc * gc.transpose() * inv_n;

  const Mat noise_root = sym_sqrt(gamma).sqrt;
  const Mat y_pert = (noise_root * noise * std::sqrt(1.0 / dt)).colwise() + y_dagger;

  Eigen::LDLT<Mat> solver(c_gg + gamma / dt);
  if (solver.info() != Eigen::Success)
    throw std::runtime_error("eki_update: (C^GG + dt^-1 Gamma) factorization failed");
  return ensemble + c_xg * solver.solve(y_pert - evaluations);
}

Mat eki_update(const Mat& ensemble, const Mat& evaluations, const Vec& y_dagger,
               const Mat& gamma, double dt, Rng& rng) {
  const Mat noise = rng.normal_mat(static_cast<int>(y_dagger.size()),
                                   static_cast<int>(ensemble.cols()));
  return eki_update(ensemble, evaluations, y_dagger, gamma, dt, noise);
}

TemperedEnsemble run_tempered_eki(const InverseProblem& p, int ensemble_size,
                                  const std::vector<double>& alpha_stops,
                                  const EkiSchedule& schedule, Rng& rng) {
  if (alpha_stops.empty()) throw std::invalid_argument("run_tempered_eki: no stops");
  for (std::size_t i = 0; i < alpha_stops.size(); ++i) {
    if (!(alpha_stops[i] > 0.0 && alpha_stops[i] <= 1.0))
      throw std::invalid_argument("run_tempered_eki: stops must lie in (0, 1]");
    if (i > 0 && alpha_stops[i] <= alpha_stops[i - 1])
      throw std::invalid_argument("run_tempered_eki: stops must be sorted ascending");
  }
  const double alpha_end = alpha_stops.back();

  // Prior ensemble.
  const Mat prior_root = sym_sqrt(p.gamma0).sqrt;
  Mat ensemble = (prior_root * rng.normal_mat(p.dim_x(), ensemble_size)).colwise() + p.prior_mean;
  Mat evals = p.eval_ensemble(ensemble, rng);

  const Mat gamma_inv_root = sym_sqrt(p.gamma).inv_sqrt;

  TemperedEnsemble out;
  out.alphas.push_back(0.0);
  out.ensembles.push_back(ensemble);
  out.evaluations.push_back(evals);

  double alpha = 0.0;
  std::size_t next_stop = 0;
  const double nominal = alpha_end / static_cast<double>(std::max(1, schedule.n_steps));
  while (alpha < alpha_end - 1e-12) {
    double dt = nominal;
    if (schedule.kind == EkiSchedule::Kind::Adaptive) {
      const Vec mean_eval = evals.rowwise().mean();
      const double misfit = (gamma_inv_root * (p.y_dagger - mean_eval)).norm();
      dt = misfit > 0.0 ? schedule.misfit_scale / misfit : 1.0;
      dt = std::min(dt, 1.0);
    }
    dt = std::min(dt, alpha_stops[next_stop] - alpha);  // hit each stop exactly
    ensemble = eki_update(ensemble, evals, p.y_dagger, p.gamma, dt, rng);
    if (!ensemble.allFinite()) throw std::runtime_error("run_tempered_eki: ensemble diverged");
    evals = p.eval_ensemble(ensemble, rng);
    alpha += dt;
    if (std::abs(alpha - alpha_stops[next_stop]) < 1e-12) {
      alpha = alpha_stops[next_stop];  // absorb roundoff drift at stops
      out.alphas.push_back(alpha);
      out.ensembles.push_back(ensemble);
      out.evaluations.push_back(evals);
      ++next_stop;
    }
  }
  return out;
}

McmcChain rwm_sample(const std::function<double(const Vec&)>& log_density, const Vec& x0,
                     const RwmOptions& opts, Rng& rng) {
  const int dim = static_cast<int>(x0.size());
  const int n_burn = opts.n_burn >= 0 ? opts.n_burn : opts.n_samples / 5;
  const int total = n_burn + opts.n_samples;

  double logp = log_density(x0);
  if (!std::isfinite(logp)) throw std::invalid_argument("rwm_sample: log density not finite at x0");

  McmcChain chain;
  chain.samples.resize(opts.n_samples, dim);
  chain.step_scale_history.reserve(total);

  Vec x = x0;
  double log_step = std::log(opts.initial_step);
  long accepted_post = 0, nan_count = 0;

  for (int t = 0; t < total; ++t) {
    const double step = std::exp(log_step);
    const Vec proposal = x + step * rng.normal_vec(dim);
    const double logp_prop = log_density(proposal);
    bool accept = false;
    if (std::isnan(logp_prop)) {
      ++nan_count;
      if (t + 1 >= 20 && nan_count * 2 > t + 1)
        throw std::runtime_error("rwm_sample: more than 50% NaN proposals");
    } else {
      const double log_ratio = logp_prop - logp;
      accept = log_ratio >= 0.0 || std::log(rng.uniform() + 1e-300) < log_ratio;
    }
    if (accept) {
      x = proposal;
      logp = logp_prop;
    }
    if (t < n_burn) {
      const double gain = 1.0 / std::pow(static_cast<double>(t + 1), 0.6);
      log_step += gain * ((accept ? 1.0 : 0.0) - opts.target_accept);
    } else {
      if (accept) ++accepted_post;
      chain.samples.row(t - n_burn) = x.transpose();
    }
    chain.step_scale_history.push_back(std::exp(log_step));
  }
  chain.acceptance_rate =
      opts.n_samples > 0 ? static_cast<double>(accepted_post) / opts.n_samples : 0.0;
  return chain;
}

Mat thin_rows(const Mat& samples, int thin) {
  if (thin <= 1) return samples;
  const auto n = (samples.rows() + thin - 1) / thin;
  Mat out(n, samples.cols());
  for (Eigen::Index i = 0; i < n; ++i) out.row(i) = samples.row(i * thin);
  return out;
}

}  // namespace alis
