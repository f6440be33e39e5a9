#include "alis/problems.hpp"

#include <Eigen/SparseCholesky>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace alis {

namespace {

Mat seeded_orthogonal(int rows, int cols, Rng& rng) {
  return orthonormalize(rng.normal_mat(rows, cols));
}

Vec prior_variances(int d, double scale) {
  Vec v(d);
  for (int i = 0; i < d; ++i) v[i] = scale / ((i + 1.0) * (i + 1.0));
  return v;
}

InverseProblem linear_family_problem(const LinearProblemSpec& spec, Mat& a_out, bool exponential) {
  if (spec.d_x < spec.d_y)
    throw std::invalid_argument("linear problem: requires d_x >= d_y");
  Rng root(spec.seed);
  Rng rng_u = root.split(1);
  Rng rng_v = root.split(2);
  Rng rng_x = root.split(3);
  Rng rng_eta = root.split(4);

  const Mat u = seeded_orthogonal(spec.d_y, spec.d_y, rng_u);
  const Mat v = seeded_orthogonal(spec.d_x, spec.d_y, rng_v);
  Vec lambda(spec.d_y);
  for (int i = 0; i < spec.d_y; ++i) lambda[i] = 100.0 / (i + 1.0);
  a_out = u * lambda.asDiagonal() * v.transpose();

  InverseProblem p;
  p.gamma = Mat::Identity(spec.d_y, spec.d_y);
  p.gamma0 = prior_variances(spec.d_x, spec.gamma0_scale).asDiagonal();
  p.prior_mean = Vec::Zero(spec.d_x);
  p.noisy_forward = spec.noisy_forward;

  const Mat a = a_out;
  if (exponential) {
    p.forward = [a](const Vec& x, Rng&) { return linexp_forward(a, x); };
    p.jacobian = [a](const Vec& x) { return linexp_gradient(a, x); };
  } else {
    p.forward = [a](const Vec& x, Rng&) -> Vec { return a * x; };
    p.jacobian = [a](const Vec&) { return a; };
  }

  Rng dummy(0);
  if (spec.ood_observation) {
    p.y_dagger = p.forward(Vec::Constant(spec.d_x, 10.0), dummy) + 10.0 * rng_eta.normal_vec(spec.d_y);
  } else {
    const Vec x_dagger =
        prior_variances(spec.d_x, spec.gamma0_scale).cwiseSqrt().cwiseProduct(rng_x.normal_vec(spec.d_x));
    p.y_dagger = p.forward(x_dagger, dummy) + rng_eta.normal_vec(spec.d_y);
  }
  return p;
}

}  // namespace

LinearProblem make_linear_problem(const LinearProblemSpec& spec) {
  LinearProblem lp;
  lp.problem = linear_family_problem(spec, lp.a, false);
  return lp;
}

LinearProblem make_linexp_problem(const LinearProblemSpec& spec) {
  LinearProblem lp;
  lp.problem = linear_family_problem(spec, lp.a, true);
  return lp;
}

Vec linexp_forward(const Mat& a, const Vec& x) { return a * x.array().exp().matrix(); }

Mat linexp_gradient(const Mat& a, const Vec& x) {
  return a * x.array().exp().matrix().asDiagonal();
}

GaussianPosterior linear_posterior(const LinearProblem& lp) {
  const InverseProblem& p = lp.problem;
  const Mat gamma0_inv = Eigen::LLT<Mat>(p.gamma0).solve(Mat::Identity(p.dim_x(), p.dim_x()));
  const Mat gamma_inv_a = Eigen::LLT<Mat>(p.gamma).solve(lp.a);
  const Mat precision = gamma0_inv + lp.a.transpose() * gamma_inv_a;
  Eigen::LLT<Mat> llt(precision);
  if (llt.info() != Eigen::Success) throw std::runtime_error("linear_posterior: precision not SPD");
  GaussianPosterior post;
  post.cov = llt.solve(Mat::Identity(p.dim_x(), p.dim_x()));
  post.cov = 0.5 * (post.cov + post.cov.transpose());
  post.mean = llt.solve(gamma_inv_a.transpose() * p.y_dagger);
  return post;
}

GaussianPosterior linear_reduced_posterior(const LinearProblem& lp, const ReducedSpace& space) {
  const InverseProblem& p = lp.problem;
  if (p.prior_mean.norm() > 0.0)
    throw std::invalid_argument("linear_reduced_posterior: requires a centered prior");
  const GaussianConditional cond = gaussian_conditional(p.gamma0, space.u_r, space.u_perp);

  Mat effective = space.u_r;
  if (space.u_perp.cols() > 0) effective += space.u_perp * cond.mean_map;
  const Mat b = space.v_s.transpose() * lp.a * effective;  // s x r
  Mat c = space.v_s.transpose() * p.gamma * space.v_s;
  if (space.u_perp.cols() > 0) {
    const Mat av = space.v_s.transpose() * lp.a * space.u_perp;  // s x (d_x - r)
    c += av * cond.cov * av.transpose();
  }
  Eigen::LLT<Mat> c_llt(0.5 * (c + c.transpose()));
  if (c_llt.info() != Eigen::Success)
    throw std::runtime_error("linear_reduced_posterior: reduced noise covariance not SPD");

  const Mat ub = space.u_r * b.transpose();  // d_x x s
  const Mat gamma0_inv = Eigen::LLT<Mat>(p.gamma0).solve(Mat::Identity(p.dim_x(), p.dim_x()));
  const Mat precision = gamma0_inv + ub * c_llt.solve(ub.transpose());
  Eigen::LLT<Mat> llt(0.5 * (precision + precision.transpose()));
  if (llt.info() != Eigen::Success)
    throw std::runtime_error("linear_reduced_posterior: precision not SPD");
  GaussianPosterior post;
  post.cov = llt.solve(Mat::Identity(p.dim_x(), p.dim_x()));
  post.cov = 0.5 * (post.cov + post.cov.transpose());
  post.mean = llt.solve(ub * c_llt.solve(space.v_s.transpose() * p.y_dagger));
  return post;
}

std::vector<KlMode> darcy_kl_modes(const DarcySpec& spec) {
  // Enumerate a generous index window, keep the d_x largest lambda; ties
  // broken lexicographically so the basis is reproducible.
  const int bound = static_cast<int>(std::ceil(std::sqrt(spec.d_x + 1.0))) + 2;
  std::vector<KlMode> modes;
  for (int k1 = 0; k1 <= bound; ++k1) {
    for (int k2 = 0; k2 <= bound; ++k2) {
      if (k1 == 0 && k2 == 0) continue;
      KlMode m;
      m.k1 = k1;
      m.k2 = k2;
      const double pi2 = std::numbers::pi * std::numbers::pi;
      m.lambda = std::pow(pi2 * (k1 * k1 + k2 * k2) + spec.tau * spec.tau, -spec.smoothness);
      m.norm_const = (k1 == 0 || k2 == 0) ? std::numbers::sqrt2 : 2.0;
      modes.push_back(m);
    }
  }
  std::sort(modes.begin(), modes.end(), [](const KlMode& a, const KlMode& b) {
    if (a.lambda != b.lambda) return a.lambda > b.lambda;
    if (a.k1 != b.k1) return a.k1 < b.k1;
    return a.k2 < b.k2;
  });
  if (static_cast<int>(modes.size()) < spec.d_x)
    throw std::logic_error("darcy_kl_modes: enumeration window too small");
  modes.resize(spec.d_x);
  return modes;
}

namespace {

double kl_log_field(const std::vector<KlMode>& modes, const Vec& u, double x1, double x2) {
  double acc = 0.0;
  for (std::size_t k = 0; k < modes.size(); ++k) {
    const KlMode& m = modes[k];
    acc += u[static_cast<Eigen::Index>(k)] * std::sqrt(m.lambda) * m.norm_const *
           std::cos(std::numbers::pi * m.k1 * x1) * std::cos(std::numbers::pi * m.k2 * x2);
  }
  return acc;
}

}  // namespace

Mat darcy_solve_grid(const DarcySpec& spec, const Vec& u, int grid_log2) {
  if (u.size() != spec.d_x) throw std::invalid_argument("darcy: bad parameter dimension");
  const auto modes = darcy_kl_modes(spec);
  const int cells = 1 << grid_log2;
  const int n = cells - 1;  // interior nodes per dimension
  const double h = 1.0 / cells;

  // Permeability at all nodes, boundary included.
  Mat a(cells + 1, cells + 1);
  for (int i = 0; i <= cells; ++i)
    for (int j = 0; j <= cells; ++j) {
      const double log_a = kl_log_field(modes, u, i * h, j * h);
      a(i, j) = std::exp(log_a);
      if (!std::isfinite(a(i, j))) throw std::runtime_error("darcy: permeability overflow");
    }

  // Conservative 5-point flux stencil, arithmetic face averages; row-major
  // interior numbering idx = (i-1) n + (j-1).
  using Trip = Eigen::Triplet<double>;
  std::vector<Trip> trips;
  trips.reserve(static_cast<std::size_t>(5) * n * n);
  Vec rhs = Vec::Constant(n * n, spec.source * h * h);
  const auto idx = [n](int i, int j) { return (i - 1) * n + (j - 1); };
  for (int i = 1; i <= n; ++i) {
    for (int j = 1; j <= n; ++j) {
      const double w_e = 0.5 * (a(i, j) + a(i + 1, j));
      const double w_w = 0.5 * (a(i, j) + a(i - 1, j));
      const double w_n = 0.5 * (a(i, j) + a(i, j + 1));
      const double w_s = 0.5 * (a(i, j) + a(i, j - 1));
      trips.emplace_back(idx(i, j), idx(i, j), w_e + w_w + w_n + w_s);
      if (i < n) trips.emplace_back(idx(i, j), idx(i + 1, j), -w_e);
      if (i > 1) trips.emplace_back(idx(i, j), idx(i - 1, j), -w_w);
      if (j < n) trips.emplace_back(idx(i, j), idx(i, j + 1), -w_n);
      if (j > 1) trips.emplace_back(idx(i, j), idx(i, j - 1), -w_s);
    }
  }
  Eigen::SparseMatrix<double> stiffness(n * n, n * n);
  stiffness.setFromTriplets(trips.begin(), trips.end());
  Eigen::SimplicialLLT<Eigen::SparseMatrix<double>> solver(stiffness);
  if (solver.info() != Eigen::Success) throw std::runtime_error("darcy: factorization failed");
  const Vec p = solver.solve(rhs);
  if (solver.info() != Eigen::Success) throw std::runtime_error("darcy: solve failed");

  Mat grid(n, n);
  for (int i = 1; i <= n; ++i)
    for (int j = 1; j <= n; ++j) grid(i - 1, j - 1) = p[idx(i, j)];
  return grid;
}

Vec darcy_forward(const DarcySpec& spec, const Vec& u, int grid_log2) {
  const Mat grid = darcy_solve_grid(spec, u, grid_log2);
  const int cells = 1 << grid_log2;
  const double h = 1.0 / cells;
  const int n = cells - 1;
  // Pressure including the zero boundary, for interpolation.
  const auto value_at = [&](int i, int j) -> double {
    if (i <= 0 || j <= 0 || i > n || j > n) return 0.0;
    return grid(i - 1, j - 1);
  };
  const int m = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(spec.d_y))));
  Vec y(spec.d_y);
  for (int t = 0; t < spec.d_y; ++t) {
    const int row = t / m;
    const int col = t % m;
    const double x1 = (col + 1.0) / (m + 1.0);
    const double x2 = (row + 1.0) / (m + 1.0);
    const double fi = x1 / h;
    const double fj = x2 / h;
    const int i0 = std::min(static_cast<int>(std::floor(fi)), cells - 1);
    const int j0 = std::min(static_cast<int>(std::floor(fj)), cells - 1);
    const double di = fi - i0;
    const double dj = fj - j0;
    y[t] = (1 - di) * (1 - dj) * value_at(i0, j0) + di * (1 - dj) * value_at(i0 + 1, j0) +
           (1 - di) * dj * value_at(i0, j0 + 1) + di * dj * value_at(i0 + 1, j0 + 1);
  }
  return y;
}

InverseProblem make_darcy_problem(const DarcySpec& spec) {
  InverseProblem p;
  p.gamma = spec.noise_var * Mat::Identity(spec.d_y, spec.d_y);
  p.gamma0 = Mat::Identity(spec.d_x, spec.d_x);
  p.prior_mean = Vec::Zero(spec.d_x);
  p.forward = [spec](const Vec& u, Rng&) { return darcy_forward(spec, u, spec.grid_log2); };

  Rng root(spec.seed);
  Rng rng_u = root.split(11);
  Rng rng_eta = root.split(12);
  const Vec u_truth = rng_u.normal_vec(spec.d_x);
  p.y_dagger = darcy_forward(spec, u_truth, spec.truth_grid_log2) +
               std::sqrt(spec.noise_var) * rng_eta.normal_vec(spec.d_y);
  return p;
}

Vec lorenz96_stats(const LorenzSpec& spec, const Vec& forcing, const Vec& u0) {
  const int n = spec.n;
  if (forcing.size() != n || u0.size() != n)
    throw std::invalid_argument("lorenz96: bad dimension");
  const auto rhs = [&forcing, n](const Vec& u) {
    Vec d(n);
    for (int i = 0; i < n; ++i) {
      const int ip1 = (i + 1) % n;
      const int im1 = (i - 1 + n) % n;
      const int im2 = (i - 2 + n) % n;
      d[i] = (u[ip1] - u[im2]) * u[im1] - u[i] + forcing[i];
    }
    return d;
  };

  Vec u = u0;
  const long spin_steps = std::lround(spec.spinup / spec.dt);
  for (long t = 0; t < spin_steps; ++t) {
    u = rk4_step(rhs, u, spec.dt);
    if (!u.allFinite()) throw std::runtime_error("lorenz96: state diverged");
  }

  // Welford accumulation keeps the variance exactly zero on equilibria.
  const long window_steps = std::lround(spec.t_window / spec.dt);
  Vec mean = Vec::Zero(n), m2 = Vec::Zero(n);
  for (long t = 0; t < window_steps; ++t) {
    u = rk4_step(rhs, u, spec.dt);
    if (!u.allFinite()) throw std::runtime_error("lorenz96: state diverged");
    const Vec delta = u - mean;
    mean += delta / static_cast<double>(t + 1);
    m2 += delta.cwiseProduct(u - mean);
  }
  Vec out(2 * n);
  out.head(n) = mean;
  out.tail(n) = (m2 / static_cast<double>(window_steps)).cwiseMax(0.0).cwiseSqrt();
  return out;
}

Vec lorenz96_forward(const LorenzSpec& spec, const Vec& forcing, Rng& rng) {
  const Vec u0 = forcing + spec.ic_scale * rng.normal_vec(spec.n);
  return lorenz96_stats(spec, forcing, u0);
}

Vec lorenz_true_forcing(int n) {
  if (n < 2) throw std::invalid_argument("lorenz_true_forcing: n must be at least 2");
  Vec f(n);
  for (int i = 0; i < n; ++i)
    f[i] = 8.0 + 6.0 * std::sin(4.0 * std::numbers::pi * i / (n - 1.0));
  return f;
}

Mat lorenz_estimate_gamma(const LorenzSpec& spec, const Vec& forcing, int n_reps, Rng& rng) {
  if (n_reps < 2) throw std::invalid_argument("lorenz_estimate_gamma: needs at least 2 reps");
  Mat ys(2 * spec.n, n_reps);
  for (int r = 0; r < n_reps; ++r) ys.col(r) = lorenz96_forward(spec, forcing, rng);
  return empirical_cov(ys) + spec.gamma_nugget * Mat::Identity(2 * spec.n, 2 * spec.n);
}

InverseProblem make_lorenz_problem(const LorenzSpec& spec, Rng& rng) {
  InverseProblem p;
  const int n = spec.n;
  p.prior_mean = Vec::Constant(n, spec.prior_mean_value);
  if (spec.informative_prior) {
    Mat g0(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) g0(i, j) = spec.prior_variance * std::exp(-std::abs(i - j));
    p.gamma0 = g0;
  } else {
    p.gamma0 = spec.prior_variance * Mat::Identity(n, n);
  }
  p.forward = [spec](const Vec& f, Rng& r) { return lorenz96_forward(spec, f, r); };

  const Vec truth = lorenz_true_forcing(n);
  Rng rng_gamma = rng.split(21);
  Rng rng_obs = rng.split(22);
  p.gamma = lorenz_estimate_gamma(spec, truth, spec.gamma_reps, rng_gamma);
  p.y_dagger = lorenz96_forward(spec, truth, rng_obs);
  return p;
}

}  // namespace alis
