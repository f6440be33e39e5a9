#include "alis/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <stdexcept>
#include <thread>

namespace alis {

namespace fs = std::filesystem;
using nlohmann::json;

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string CsvTable::to_csv() const {
  std::string out;
  for (std::size_t i = 0; i < header.size(); ++i) {
    out += header[i];
    out += (i + 1 < header.size()) ? "," : "\n";
  }
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      out += row[i];
      out += (i + 1 < row.size()) ? "," : "\n";
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Problem construction

ProblemBundle make_problem(const json& cfg, std::uint64_t instance_seed) {
  ProblemBundle bundle;
  bundle.type = cfg.at("type").get<std::string>();
  if (bundle.type == "linear" || bundle.type == "linexp") {
    LinearProblemSpec spec;
    spec.d_x = cfg.value("d_x", 100);
    spec.d_y = cfg.value("d_y", 100);
    spec.gamma0_scale = cfg.value("gamma0_scale", 4.0);
    spec.ood_observation = cfg.value("ood", false);
    spec.noisy_forward = cfg.value("noisy", false);
    spec.seed = instance_seed;
    const LinearProblem lp =
        bundle.type == "linear" ? make_linear_problem(spec) : make_linexp_problem(spec);
    bundle.problem = lp.problem;
    bundle.linear_a = lp.a;
  } else if (bundle.type == "darcy") {
    DarcySpec spec;
    spec.d_x = cfg.value("d_x", 16);
    spec.d_y = cfg.value("d_y", 16);
    spec.grid_log2 = cfg.value("grid_log2", 5);
    spec.truth_grid_log2 = cfg.value("truth_grid_log2", 7);
    spec.noise_var = cfg.value("noise_var", 1e-4);
    spec.seed = instance_seed;
    bundle.problem = make_darcy_problem(spec);
  } else if (bundle.type == "lorenz") {
    LorenzSpec spec;
    spec.n = cfg.value("n", 40);
    spec.t_window = cfg.value("t_window", 20.0);
    spec.spinup = cfg.value("spinup", 4.0);
    spec.dt = cfg.value("dt", 0.01);
    spec.informative_prior = cfg.value("informative_prior", true);
    spec.prior_variance = cfg.value("prior_variance", 25.0);
    spec.gamma_reps = cfg.value("gamma_reps", 200);
    Rng rng(instance_seed);
    bundle.problem = make_lorenz_problem(spec, rng);
    bundle.lorenz_truth = lorenz_true_forcing(spec.n);
    bundle.lorenz_spec = spec;
  } else {
    throw std::invalid_argument("make_problem: unknown type " + bundle.type);
  }
  return bundle;
}

// ---------------------------------------------------------------------------
// Config parsing

namespace {

struct MethodSpec {
  ReductionMethod method = ReductionMethod::Pca;
  double alpha = 0.0;
  bool alpha_from_sweep = false;
  double alpha_lo = 0.0, alpha_hi = 1.0;

  std::string label() const {
    const auto fmt = [](double v) {
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%g", v);
      return std::string(buf);
    };
    switch (method) {
      case ReductionMethod::Pca:
        return std::string("pca");
      case ReductionMethod::Lis:
        return alpha_from_sweep ? std::string("lis") : "lis" + fmt(alpha);
      case ReductionMethod::LisAccumulated:
        return "acc" + fmt(alpha_lo) + "_" + fmt(alpha_hi);
    }
    return "unknown";
  }
};

MethodSpec parse_method(const json& j) {
  MethodSpec m;
  const std::string type = j.at("type").get<std::string>();
  if (type == "pca") {
    m.method = ReductionMethod::Pca;
  } else if (type == "lis") {
    m.method = ReductionMethod::Lis;
    if (j.at("alpha").is_string()) {
      if (j.at("alpha").get<std::string>() != "sweep")
        throw std::invalid_argument("method lis: alpha must be a number or \"sweep\"");
      m.alpha_from_sweep = true;
    } else {
      m.alpha = j.at("alpha").get<double>();
    }
  } else if (type == "lis_accumulated") {
    m.method = ReductionMethod::LisAccumulated;
    m.alpha_lo = j.value("alpha_lo", 0.0);
    m.alpha_hi = j.value("alpha_hi", 1.0);
  } else {
    throw std::invalid_argument("unknown reduction method " + type);
  }
  return m;
}

GradientMode parse_gradients(const std::string& s) {
  if (s == "exact") return GradientMode::Exact;
  if (s == "sl") return GradientMode::StatisticalLinearization;
  throw std::invalid_argument("gradients must be \"exact\" or \"sl\"");
}

OutputMethod parse_output_method(const std::string& s) {
  if (s == "auto") return OutputMethod::Auto;
  if (s == "alpha0") return OutputMethod::Alpha0;
  if (s == "incremental") return OutputMethod::Incremental;
  if (s == "full") return OutputMethod::Full;
  if (s == "nepv") return OutputMethod::Nepv;
  throw std::invalid_argument("unknown output_method " + s);
}

enum class SweepVariable { Dim, Alpha, SamplesPerAlpha, Gamma0 };
enum class Metric { W2, Hellinger, ParamError };
enum class SampleSource { Mcmc, Eki };

struct RunConfig {
  std::uint64_t seed = 0;
  std::string output = "experiment.csv";
  json problem;
  SweepVariable sweep = SweepVariable::Dim;
  std::string sweep_name = "dim";
  std::vector<double> sweep_values;
  std::vector<MethodSpec> methods;
  SampleSource source = SampleSource::Mcmc;
  int per_alpha = 500;
  int thin = 10;
  int burn = -1;
  int eki_steps = 10;
  GradientMode gradients = GradientMode::Exact;
  OutputMethod output_method = OutputMethod::Auto;
  Metric metric = Metric::W2;
  int replicates = 1;
  int jobs = 1;
  int r_fixed = 8, s_fixed = 8;
  int hell_samples = 2000;
  int hell_thin = 5;
  std::string cache_dir;
  json ces;  // forwarded to the CES pipeline for param_error runs
};

RunConfig parse_run_config(const json& cfg) {
  RunConfig rc;
  rc.seed = cfg.value("seed", 0ULL);
  rc.output = cfg.value("output", std::string("experiment.csv"));
  rc.problem = cfg.at("problem");

  const json& sweep = cfg.at("sweep");
  const std::string var = sweep.at("variable").get<std::string>();
  if (var == "dim") rc.sweep = SweepVariable::Dim;
  else if (var == "alpha") rc.sweep = SweepVariable::Alpha;
  else if (var == "J") rc.sweep = SweepVariable::SamplesPerAlpha;
  else if (var == "gamma0") rc.sweep = SweepVariable::Gamma0;
  else throw std::invalid_argument("unknown sweep variable " + var);
  rc.sweep_name = var;
  rc.sweep_values = sweep.at("values").get<std::vector<double>>();
  if (rc.sweep_values.empty()) throw std::invalid_argument("sweep values must be non-empty");

  for (const json& m : cfg.at("methods")) rc.methods.push_back(parse_method(m));
  if (rc.methods.empty()) throw std::invalid_argument("methods must be non-empty");

  if (cfg.contains("samples")) {
    const json& s = cfg.at("samples");
    const std::string source = s.value("source", std::string("mcmc"));
    if (source == "mcmc") rc.source = SampleSource::Mcmc;
    else if (source == "eki") rc.source = SampleSource::Eki;
    else throw std::invalid_argument("samples.source must be mcmc or eki");
    rc.per_alpha = s.value("per_alpha", 500);
    rc.thin = s.value("thin", 10);
    rc.burn = s.value("burn", -1);
    rc.eki_steps = s.value("eki_steps", 10);
  }
  rc.gradients = parse_gradients(cfg.value("gradients", std::string("exact")));
  rc.output_method = parse_output_method(cfg.value("output_method", std::string("auto")));

  const std::string metric = cfg.value("metric", std::string("w2"));
  if (metric == "w2") rc.metric = Metric::W2;
  else if (metric == "hellinger") rc.metric = Metric::Hellinger;
  else if (metric == "param_error") rc.metric = Metric::ParamError;
  else throw std::invalid_argument("unknown metric " + metric);

  rc.replicates = cfg.value("replicates", 1);
  rc.jobs = cfg.value("jobs", 1);
  rc.r_fixed = cfg.value("r", 8);
  rc.s_fixed = cfg.value("s", 8);
  if (cfg.contains("hellinger")) {
    rc.hell_samples = cfg.at("hellinger").value("n_samples", 2000);
    rc.hell_thin = cfg.at("hellinger").value("thin", 5);
  }
  rc.cache_dir = cfg.value("cache_dir", std::string());
  if (cfg.contains("ces")) rc.ces = cfg.at("ces");
  return rc;
}

// ---------------------------------------------------------------------------
// Sample acquisition

struct PreparedProblem {
  ProblemBundle bundle;
  InverseProblem whitened;
  WhitenTransform wt;
};

PreparedProblem prepare_problem(const json& problem_cfg, std::uint64_t instance_seed) {
  PreparedProblem pp;
  pp.bundle = make_problem(problem_cfg, instance_seed);
  auto [w, t] = whiten_problem(pp.bundle.problem);
  pp.whitened = std::move(w);
  pp.wt = std::move(t);
  return pp;
}

// Chain samples of the whitened tempered posterior, returned with forward
// evaluations in original coordinates.
void mcmc_level(const PreparedProblem& pp, double alpha, int per_alpha, int thin, int burn,
                Rng rng, Mat& xs, Mat& gs) {
  const InverseProblem& p = pp.bundle.problem;
  Rng rng_eval = rng.split(1);
  Rng rng_chain = rng.split(2);
  if (alpha <= 0.0) {
    const Mat z = rng_chain.normal_mat(p.dim_x(), per_alpha);
    xs = (pp.wt.input_inv * z).colwise() + p.prior_mean;
  } else {
    Rng rng_fwd = rng.split(3);
    const auto target = [&](const Vec& xb) {
      return tempered_log_density(pp.whitened, xb, alpha, rng_fwd);
    };
    RwmOptions opts;
    opts.n_samples = per_alpha * thin;
    opts.n_burn = burn >= 0 ? burn : std::max(500, per_alpha * thin / 5);
    opts.initial_step = 2.38 / std::sqrt(static_cast<double>(p.dim_x()));
    const McmcChain chain = rwm_sample(target, Vec::Zero(p.dim_x()), opts, rng_chain);
    const Mat xb = thin_rows(chain.samples, thin).transpose();  // d_x x per_alpha
    xs.resize(p.dim_x(), xb.cols());
    for (int j = 0; j < xb.cols(); ++j) xs.col(j) = pp.wt.unwhiten_x(xb.col(j));
  }
  gs = p.eval_ensemble(xs, rng_eval);
}

TemperedSamples acquire_samples(const PreparedProblem& pp, const std::vector<double>& levels,
                                const RunConfig& rc, int per_alpha, Rng rng,
                                std::uint64_t instance_seed) {
  TemperedSamples out;
  if (rc.source == SampleSource::Eki) {
    std::vector<double> stops;
    for (const double a : levels)
      if (a > 0.0) stops.push_back(a);
    if (stops.empty()) stops.push_back(1.0);
    EkiSchedule schedule;
    schedule.n_steps = rc.eki_steps;
    const TemperedEnsemble eki =
        run_tempered_eki(pp.bundle.problem, per_alpha, stops, schedule, rng);
    return tempered_samples_from_eki(eki);
  }
  for (std::size_t i = 0; i < levels.size(); ++i) {
    Mat xs, gs;
    bool loaded = false;
    std::string key;
    if (!rc.cache_dir.empty()) {
      json ident;
      ident["problem"] = rc.problem;
      ident["instance_seed"] = instance_seed;
      ident["alpha"] = levels[i];
      ident["per_alpha"] = per_alpha;
      ident["thin"] = rc.thin;
      ident["burn"] = rc.burn;
      key = cache_key(ident);
      loaded = cache_load(rc.cache_dir, key, xs, gs);
      if (!loaded) {
        mcmc_level(pp, levels[i], per_alpha, rc.thin, rc.burn, rng.split(i), xs, gs);
        cache_store(rc.cache_dir, key, ident, xs, gs);
      }
    } else {
      mcmc_level(pp, levels[i], per_alpha, rc.thin, rc.burn, rng.split(i), xs, gs);
    }
    out.alphas.push_back(levels[i]);
    out.xs.push_back(std::move(xs));
    out.gs.push_back(std::move(gs));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Metrics

double w2_metric(const PreparedProblem& pp, const ReducedSpace& space) {
  if (!pp.bundle.linear_a || pp.bundle.type != "linear")
    throw std::invalid_argument("metric w2 requires the linear problem");
  LinearProblem lp{pp.bundle.problem, *pp.bundle.linear_a};
  return w2_gaussian_sq(linear_reduced_posterior(lp, space), linear_posterior(lp));
}

double hellinger_metric(const PreparedProblem& pp, const ReducedSpace& space, const RunConfig& rc,
                        Rng rng) {
  const InverseProblem& p = pp.bundle.problem;
  const GaussianConditional cond = gaussian_conditional(p.gamma0, space.u_r, space.u_perp);
  const MarginalPrior prior = marginal_prior(p, space);
  const Vec m_r = space.u_r.transpose() * p.prior_mean;
  const Vec m_perp = space.u_perp.transpose() * p.prior_mean;

  Rng rng_density = rng.split(1);
  Rng rng_chain = rng.split(2);
  Rng rng_rec = rng.split(3);
  Rng rng_weights = rng.split(4);
  Rng rng_full = rng.split(5);

  const auto target = [&](const Vec& x_r) {
    return reduced_log_posterior(p, space, cond, x_r, rng_density);
  };
  RwmOptions opts;
  opts.n_samples = rc.hell_samples * rc.hell_thin;
  opts.n_burn = -1;
  opts.initial_step = 2.38 / std::sqrt(static_cast<double>(std::max(1, space.r())));
  const McmcChain chain = rwm_sample(target, m_r, opts, rng_chain);
  const Mat xr = thin_rows(chain.samples, rc.hell_thin).transpose();
  const Mat full = reconstruct_full_samples(space, cond, xr, p.prior_mean, rng_rec);

  Vec log_w(full.cols());
  for (int j = 0; j < full.cols(); ++j) {
    const Vec x = full.col(j);
    const Vec x_r = space.u_r.transpose() * x;
    const Vec x_perp = space.u_perp.transpose() * x;
    const double log_pi = p.log_prior(x) + log_likelihood(p, x, rng_full);
    const double log_pi_star = prior.log_pdf(x_r) +
                               reduced_log_likelihood(p, space, cond, x_r, rng_weights) +
                               cond.log_pdf(x_perp, x_r, m_r, m_perp);
    log_w[j] = log_pi - log_pi_star;
  }
  return hellinger2_snis_from_log_weights(log_w).value;
}

double param_error_metric(const PreparedProblem& pp, const MethodSpec& method, int r, int s,
                          const RunConfig& rc, Rng rng) {
  if (pp.bundle.type != "lorenz")
    throw std::invalid_argument("metric param_error requires the lorenz problem");
  CesConfig ces = parse_ces_config(rc.ces.is_null() ? json::object() : rc.ces);
  ces.reduction.method = method.method;
  ces.reduction.alpha = method.alpha;
  ces.reduction.alpha_lo = method.alpha_lo;
  ces.reduction.alpha_hi = method.alpha_hi;
  ces.reduction.r = r;
  ces.reduction.s = s;
  ces.reduction.gradients = rc.gradients;
  if (ces.reduction.output_method == OutputMethod::Auto)
    ces.reduction.output_method = OutputMethod::Alpha0;
  const CesResult res = ces_run(pp.bundle.problem, ces, rng);
  const Vec mean = res.full_samples.rowwise().mean();
  return (pp.bundle.lorenz_truth - mean).norm();
}

// One replicate: table of metric values (sweep points x methods).
Mat replicate_values(const RunConfig& rc, int rep, int* failures) {
  const std::uint64_t instance_seed = splitmix64(rc.seed ^ splitmix64(7777 + rep));
  Rng rep_rng = Rng(rc.seed).split(100 + rep);

  Mat values = Mat::Constant(static_cast<Eigen::Index>(rc.sweep_values.size()),
                             static_cast<Eigen::Index>(rc.methods.size()),
                             std::numeric_limits<double>::quiet_NaN());

  for (std::size_t si = 0; si < rc.sweep_values.size(); ++si) {
    const double sv = rc.sweep_values[si];
    json problem_cfg = rc.problem;
    int per_alpha = rc.per_alpha;
    int r = rc.r_fixed, s = rc.s_fixed;
    switch (rc.sweep) {
      case SweepVariable::Dim:
        r = s = static_cast<int>(sv);
        break;
      case SweepVariable::SamplesPerAlpha:
        per_alpha = static_cast<int>(sv);
        break;
      case SweepVariable::Gamma0:
        problem_cfg["gamma0_scale"] = sv;
        break;
      case SweepVariable::Alpha:
        break;
    }

    try {
      const PreparedProblem pp = prepare_problem(problem_cfg, instance_seed);

      if (rc.metric == Metric::ParamError) {
        for (std::size_t mi = 0; mi < rc.methods.size(); ++mi) {
          MethodSpec m = rc.methods[mi];
          if (m.alpha_from_sweep) m.alpha = sv;
          try {
            values(si, mi) =
                param_error_metric(pp, m, r, s, rc, rep_rng.split(31 * si + mi + 1));
          } catch (const std::exception& e) {
            ++*failures;
            std::cerr << "cell failure (sweep " << sv << ", " << m.label() << "): " << e.what()
                      << "\n";
          }
        }
        continue;
      }

      // Union of tempering levels needed at this sweep point.
      std::vector<double> levels;
      for (const MethodSpec& raw : rc.methods) {
        MethodSpec m = raw;
        if (m.alpha_from_sweep) m.alpha = sv;
        SpaceBuildConfig sc;
        sc.method = m.method;
        sc.alpha = m.alpha;
        sc.alpha_lo = m.alpha_lo;
        sc.alpha_hi = m.alpha_hi;
        sc.gradients = rc.gradients;
        for (const double a : required_alphas(sc))
          if (std::none_of(levels.begin(), levels.end(),
                           [&](double b) { return std::abs(a - b) < 1e-9; }))
            levels.push_back(a);
      }
      std::sort(levels.begin(), levels.end());
      const TemperedSamples samples =
          acquire_samples(pp, levels, rc, per_alpha, rep_rng.split(1000 + si), instance_seed);

      for (std::size_t mi = 0; mi < rc.methods.size(); ++mi) {
        MethodSpec m = rc.methods[mi];
        if (m.alpha_from_sweep) m.alpha = sv;
        try {
          SpaceBuildConfig sc;
          sc.method = m.method;
          sc.alpha = m.alpha;
          sc.alpha_lo = m.alpha_lo;
          sc.alpha_hi = m.alpha_hi;
          sc.r = r;
          sc.s = s;
          sc.gradients = rc.gradients;
          sc.output_method = rc.output_method;
          Rng rng_cell = rep_rng.split(2000 + 31 * si + mi);
          const ReducedSpace space = build_reduced_space(pp.bundle.problem, pp.wt, pp.whitened,
                                                         samples, sc, rng_cell);
          double value = 0.0;
          switch (rc.metric) {
            case Metric::W2:
              value = w2_metric(pp, space);
              break;
            case Metric::Hellinger:
              value = hellinger_metric(pp, space, rc, rep_rng.split(3000 + 31 * si + mi));
              break;
            default:
              throw std::logic_error("unexpected metric");
          }
          values(si, mi) = value;
        } catch (const std::exception& e) {
          ++*failures;
          std::cerr << "cell failure (sweep " << sv << ", " << m.label() << "): " << e.what()
                    << "\n";
        }
      }
    } catch (const std::exception& e) {
      *failures += static_cast<int>(rc.methods.size());
      std::cerr << "sweep-point failure (" << sv << "): " << e.what() << "\n";
    }
  }
  return values;
}

}  // namespace

// ---------------------------------------------------------------------------

ExperimentResult run_experiment(const json& config) {
  const RunConfig rc = parse_run_config(config);
  const int n_sweep = static_cast<int>(rc.sweep_values.size());
  const int n_methods = static_cast<int>(rc.methods.size());

  std::vector<Mat> per_rep(rc.replicates);
  std::vector<int> rep_failures(rc.replicates, 0);
  const int jobs = std::max(1, std::min(rc.jobs, rc.replicates));
  if (jobs == 1) {
    for (int rep = 0; rep < rc.replicates; ++rep)
      per_rep[rep] = replicate_values(rc, rep, &rep_failures[rep]);
  } else {
    std::vector<std::thread> pool;
    std::atomic<int> next{0};
    for (int t = 0; t < jobs; ++t) {
      pool.emplace_back([&]() {
        for (int rep = next.fetch_add(1); rep < rc.replicates; rep = next.fetch_add(1))
          per_rep[rep] = replicate_values(rc, rep, &rep_failures[rep]);
      });
    }
    for (auto& th : pool) th.join();
  }

  ExperimentResult result;
  result.output_path = rc.output;
  result.sweep_values = rc.sweep_values;
  for (const MethodSpec& m : rc.methods) result.method_labels.push_back(m.label());
  result.medians = Mat::Constant(n_sweep, n_methods, std::numeric_limits<double>::quiet_NaN());
  for (int f : rep_failures) result.failures += f;

  result.csv.header.push_back(rc.sweep_name);
  for (const auto& label : result.method_labels) result.csv.header.push_back("err_" + label);
  for (int si = 0; si < n_sweep; ++si) {
    std::vector<std::string> row;
    row.push_back(format_double(rc.sweep_values[si]));
    for (int mi = 0; mi < n_methods; ++mi) {
      std::vector<double> vals;
      for (int rep = 0; rep < rc.replicates; ++rep) {
        const double v = per_rep[rep](si, mi);
        if (std::isfinite(v)) vals.push_back(v);
      }
      if (vals.empty()) {
        row.push_back("");
      } else {
        const double med = median(vals);
        result.medians(si, mi) = med;
        row.push_back(format_double(med));
      }
    }
    result.csv.rows.push_back(std::move(row));
  }

  if (!rc.output.empty()) {
    std::ofstream out(rc.output, std::ios::binary);
    out << result.csv.to_csv();
  }
  return result;
}

ExperimentResult compare_optimizers(const json& config) {
  const std::uint64_t seed = config.value("seed", 0ULL);
  const double alpha = config.value("alpha", 0.5);
  if (!(alpha > 0.0)) throw std::invalid_argument("compare_optimizers: alpha must be positive");
  const std::vector<double> s_values = config.at("s_values").get<std::vector<double>>();
  const std::string output = config.value("output", std::string("optimizers.csv"));

  RunConfig rc;  // reuse the sampling knobs
  rc.seed = seed;
  rc.problem = config.at("problem");
  if (config.contains("samples")) {
    const json& s = config.at("samples");
    rc.per_alpha = s.value("per_alpha", 300);
    rc.thin = s.value("thin", 10);
    rc.burn = s.value("burn", -1);
  }
  rc.gradients = parse_gradients(config.value("gradients", std::string("exact")));

  const std::uint64_t instance_seed = splitmix64(seed ^ splitmix64(7777));
  const PreparedProblem pp = prepare_problem(rc.problem, instance_seed);
  Rng rng = Rng(seed).split(5);

  SpaceBuildConfig sc;
  sc.method = ReductionMethod::Lis;
  sc.alpha = alpha;
  sc.gradients = rc.gradients;
  std::vector<double> levels = required_alphas(sc);
  const TemperedSamples samples = acquire_samples(pp, levels, rc, rc.per_alpha, rng.split(1),
                                                  instance_seed);
  const ObjectiveContext ctx = build_objective_context(pp.whitened, pp.wt, samples, sc);

  const int s_max = static_cast<int>(*std::max_element(s_values.begin(), s_values.end()));
  std::vector<StageReport> incr_reports, nepv_reports;
  const Mat v_incr = optimize_incremental(ctx, s_max, &incr_reports);
  Rng rng_nepv = rng.split(2);
  const Mat v_nepv = optimize_nepv(ctx, s_max, rng_nepv, &nepv_reports);

  ExperimentResult result;
  result.output_path = output;
  result.csv.header = {"s",      "J_full", "iters_full", "J_incr",        "iters_incr",
                       "J_nepv", "iters_nepv", "nepv_fallbacks"};
  for (const double sv : s_values) {
    const int s = static_cast<int>(sv);
    OptReport full_rep;
    const Mat v_full = optimize_full(ctx, s, Mat(), FullOptOptions{}, &full_rep);
    long iters_incr = 0, iters_nepv = 0, fallbacks = 0;
    for (int i = 0; i < s; ++i) {
      iters_incr += incr_reports[i].iters;
      iters_nepv += nepv_reports[i].iters;
      fallbacks += nepv_reports[i].used_fallback ? 1 : 0;
    }
    std::vector<std::string> row;
    row.push_back(format_double(sv));
    row.push_back(format_double(objective_J(ctx, v_full)));
    row.push_back(std::to_string(full_rep.iters));
    row.push_back(format_double(objective_J(ctx, v_incr.leftCols(s))));
    row.push_back(std::to_string(iters_incr));
    row.push_back(format_double(objective_J(ctx, v_nepv.leftCols(s))));
    row.push_back(std::to_string(iters_nepv));
    row.push_back(std::to_string(fallbacks));
    result.csv.rows.push_back(std::move(row));
  }
  if (!output.empty()) {
    std::ofstream out(output, std::ios::binary);
    out << result.csv.to_csv();
  }
  return result;
}

// ---------------------------------------------------------------------------
// CES runner

SpaceBuildConfig parse_reduction_config(const json& j) {
  SpaceBuildConfig sc;
  const std::string method = j.value("method", std::string("lis_accumulated"));
  if (method == "pca") sc.method = ReductionMethod::Pca;
  else if (method == "lis") sc.method = ReductionMethod::Lis;
  else if (method == "lis_accumulated") sc.method = ReductionMethod::LisAccumulated;
  else throw std::invalid_argument("unknown reduction method " + method);
  sc.alpha = j.value("alpha", 0.5);
  sc.alpha_lo = j.value("alpha_lo", 0.0);
  sc.alpha_hi = j.value("alpha_hi", 1.0);
  sc.r = j.value("r", 8);
  sc.s = j.value("s", 8);
  sc.output_method = parse_output_method(j.value("output_method", std::string("auto")));
  sc.gradients = parse_gradients(j.value("gradients", std::string("sl")));
  if (j.contains("sl_nugget")) sc.sl_nugget = j.at("sl_nugget").get<double>();
  sc.pool_sl = j.value("pool_sl", true);
  return sc;
}

CesConfig parse_ces_config(const json& j) {
  CesConfig c;
  c.ensemble_size = j.value("ensemble_size", 200);
  c.alpha_step = j.value("alpha_step", 0.1);
  c.eki_schedule.n_steps = j.value("eki_steps", 10);
  if (j.contains("reduction")) c.reduction = parse_reduction_config(j.at("reduction"));
  c.train_alpha = j.value("train_alpha", 0.5);
  if (j.contains("rff")) {
    c.rff.n_features = j.at("rff").value("n_features", 200);
    c.rff.nugget = j.at("rff").value("nugget", 1e-6);
  }
  if (j.contains("mcmc")) {
    c.mcmc.n_samples = j.at("mcmc").value("n_samples", 2000);
    c.mcmc.n_burn = j.at("mcmc").value("burn", -1);
    c.mcmc.target_accept = j.at("mcmc").value("target_accept", 0.234);
  }
  c.chain_thin = j.value("chain_thin", 1);
  return c;
}

double run_ces_from_config(const json& config, const std::string& out_dir) {
  const std::uint64_t seed = config.value("seed", 0ULL);
  const std::uint64_t instance_seed = splitmix64(seed ^ splitmix64(7777));
  const ProblemBundle bundle = make_problem(config.at("problem"), instance_seed);
  const CesConfig ces = parse_ces_config(config.value("ces", json::object()));

  Rng rng = Rng(seed).split(9);
  const CesResult res = ces_run(bundle.problem, ces, rng);

  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    std::ofstream(out_dir + "/config.json", std::ios::binary) << config.dump(2) << "\n";
    std::ofstream(out_dir + "/provenance.json", std::ios::binary) << res.provenance_json << "\n";
    save_matrix_csv(out_dir + "/chain.csv", res.chain.samples);
    save_matrix_csv(out_dir + "/full_samples.csv", res.full_samples.transpose());
    save_matrix(out_dir + "/u_r.bin", res.space.u_r);
    save_matrix(out_dir + "/v_s.bin", res.space.v_s);
  }
  if (bundle.lorenz_truth.size() > 0) {
    const Vec mean = res.full_samples.rowwise().mean();
    return (bundle.lorenz_truth - mean).norm();
  }
  return std::numeric_limits<double>::quiet_NaN();
}

// ---------------------------------------------------------------------------
// Cache and matrix IO

namespace {
std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}
}  // namespace

std::string cache_key(const json& ident) {
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a(ident.dump())));
  return buf;
}

void save_matrix(const std::string& path, const Mat& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_matrix: cannot open " + path);
  const char magic[8] = {'A', 'L', 'I', 'S', 'M', 'A', 'T', '1'};
  out.write(magic, 8);
  const std::int64_t rows = m.rows(), cols = m.cols();
  out.write(reinterpret_cast<const char*>(&rows), 8);
  out.write(reinterpret_cast<const char*>(&cols), 8);
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      const double v = m(i, j);
      out.write(reinterpret_cast<const char*>(&v), 8);
    }
}

Mat load_matrix(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_matrix: cannot open " + path);
  char magic[8];
  in.read(magic, 8);
  if (std::string(magic, 8) != "ALISMAT1") throw std::runtime_error("load_matrix: bad header");
  std::int64_t rows = 0, cols = 0;
  in.read(reinterpret_cast<char*>(&rows), 8);
  in.read(reinterpret_cast<char*>(&cols), 8);
  Mat m(rows, cols);
  for (std::int64_t i = 0; i < rows; ++i)
    for (std::int64_t j = 0; j < cols; ++j) {
      double v;
      in.read(reinterpret_cast<char*>(&v), 8);
      m(i, j) = v;
    }
  if (!in) throw std::runtime_error("load_matrix: truncated file");
  return m;
}

void save_matrix_csv(const std::string& path, const Mat& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_matrix_csv: cannot open " + path);
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      out << format_double(m(i, j));
      out << (j + 1 < m.cols() ? "," : "\n");
    }
  }
}

bool cache_load(const std::string& dir, const std::string& key, Mat& xs, Mat& gs) {
  const fs::path base = fs::path(dir) / key;
  if (!fs::exists(base.string() + ".xs.bin") || !fs::exists(base.string() + ".gs.bin"))
    return false;
  xs = load_matrix(base.string() + ".xs.bin");
  gs = load_matrix(base.string() + ".gs.bin");
  return true;
}

void cache_store(const std::string& dir, const std::string& key, const json& ident, const Mat& xs,
                 const Mat& gs) {
  fs::create_directories(dir);
  const fs::path base = fs::path(dir) / key;
  // Write through temporaries so concurrent writers cannot interleave.
  const auto commit = [](const std::string& tmp, const std::string& final_path) {
    fs::rename(tmp, final_path);
  };
  save_matrix(base.string() + ".xs.tmp", xs);
  save_matrix(base.string() + ".gs.tmp", gs);
  std::ofstream(base.string() + ".json", std::ios::binary) << ident.dump(2) << "\n";
  commit(base.string() + ".xs.tmp", base.string() + ".xs.bin");
  commit(base.string() + ".gs.tmp", base.string() + ".gs.bin");
}

std::vector<std::string> cache_list(const std::string& dir) {
  std::vector<std::string> keys;
  if (!fs::exists(dir)) return keys;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (name.size() > 7 && name.substr(name.size() - 7) == ".xs.bin")
      keys.push_back(name.substr(0, name.size() - 7));
  }
  std::sort(keys.begin(), keys.end());
  return keys;
}

int cache_clear(const std::string& dir) {
  if (!fs::exists(dir)) return 0;
  int removed = 0;
  for (const auto& entry : fs::directory_iterator(dir)) {
    fs::remove(entry.path());
    ++removed;
  }
  return removed;
}

}  // namespace alis
