#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "alis/metrics.hpp"
#include "alis/problems.hpp"
#include "alis/samplers.hpp"

using namespace alis;

TEST_CASE("make_linear_problem: spectrum and determinism") {
  const LinearProblemSpec spec{.d_x = 8, .d_y = 5, .seed = 42};
  const LinearProblem lp = make_linear_problem(spec);
  const SymEig es = sym_eig_desc(lp.a.transpose() * lp.a);
  for (int i = 0; i < 5; ++i) {
    const double expected = std::pow(100.0 / (i + 1.0), 2.0);
    CHECK(es.values[i] == doctest::Approx(expected).epsilon(1e-8));
  }
  for (int i = 5; i < 8; ++i) CHECK(std::abs(es.values[i]) < 1e-8);

  const LinearProblem again = make_linear_problem(spec);
  CHECK((again.a - lp.a).norm() == 0.0);
  CHECK((again.problem.y_dagger - lp.problem.y_dagger).norm() == 0.0);

  CHECK_THROWS(make_linear_problem({.d_x = 3, .d_y = 5}));
}

TEST_CASE("make_linear_problem: reference configuration d = 100") {
  const LinearProblemSpec spec{.d_x = 100, .d_y = 100, .seed = 0};
  const LinearProblem lp = make_linear_problem(spec);
  CHECK(lp.a.rows() == 100);
  CHECK(lp.a.cols() == 100);
  CHECK(lp.problem.gamma0(0, 0) == doctest::Approx(4.0));
  CHECK(lp.problem.gamma0(99, 99) == doctest::Approx(4.0 / (100.0 * 100.0)));
}

TEST_CASE("make_linear_problem: out-of-distribution observation flag") {
  const LinearProblemSpec typical{.d_x = 6, .d_y = 4, .seed = 3};
  LinearProblemSpec ood = typical;
  ood.ood_observation = true;
  const LinearProblem a = make_linear_problem(typical);
  const LinearProblem b = make_linear_problem(ood);
  // OOD observations sit far outside the prior-predictive range.
  CHECK(b.problem.y_dagger.norm() > a.problem.y_dagger.norm());
  Rng rng(0);
  const Vec g10 = b.problem.forward(Vec::Constant(6, 10.0), rng);
  CHECK((b.problem.y_dagger - g10).norm() < 10.0 * 3.0 * 4.0);  // 10 eta within a few sd
}

TEST_CASE("linear_posterior") {
  SUBCASE("zero map returns the prior") {
    LinearProblem lp = make_linear_problem({.d_x = 4, .d_y = 3, .seed = 1});
    lp.a.setZero();
    const GaussianPosterior post = linear_posterior(lp);
    CHECK((post.cov - lp.problem.gamma0).norm() < 1e-12);
    CHECK(post.mean.norm() < 1e-12);
  }
  SUBCASE("posterior contracts the prior in Loewner order") {
    const LinearProblem lp = make_linear_problem({.d_x = 5, .d_y = 4, .seed = 2});
    const GaussianPosterior post = linear_posterior(lp);
    const SymEig es = sym_eig_desc(lp.problem.gamma0 - post.cov);
    CHECK(es.values.minCoeff() > -1e-10);
  }
  SUBCASE("1-D conjugate scalar case") {
    LinearProblem lp;
    lp.a = Mat::Identity(1, 1);
    lp.problem.gamma = Mat::Identity(1, 1);
    lp.problem.gamma0 = Mat::Identity(1, 1);
    lp.problem.prior_mean = Vec::Zero(1);
    lp.problem.y_dagger = Vec::Constant(1, 2.0);
    lp.problem.forward = [](const Vec& x, Rng&) { return x; };
    const GaussianPosterior post = linear_posterior(lp);
    CHECK(post.cov(0, 0) == doctest::Approx(0.5));
    CHECK(post.mean[0] == doctest::Approx(1.0));
  }
}

TEST_CASE("linear_reduced_posterior") {
  const LinearProblem lp = make_linear_problem({.d_x = 5, .d_y = 4, .seed = 7});
  const GaussianPosterior exact = linear_posterior(lp);

  SUBCASE("full bases reproduce the exact posterior") {
    const ReducedSpace space =
        make_reduced_space(Mat::Identity(5, 5), Mat::Identity(4, 4), false);
    const GaussianPosterior red = linear_reduced_posterior(lp, space);
    CHECK((red.mean - exact.mean).cwiseAbs().maxCoeff() < 1e-8);
    CHECK((red.cov - exact.cov).cwiseAbs().maxCoeff() < 1e-8);
  }
  SUBCASE("lossless output projection: V_s spanning the left singular space") {
    Eigen::JacobiSVD<Mat> svd(lp.a, Eigen::ComputeThinU);
    const ReducedSpace space =
        make_reduced_space(Mat::Identity(5, 5), svd.matrixU(), false);
    const GaussianPosterior red = linear_reduced_posterior(lp, space);
    CHECK(w2_gaussian_sq(red, exact) < 1e-10);
  }
  SUBCASE("d = 3 instance matches reduced-posterior MCMC moments") {
    LinearProblem small;
    Rng rng(5);
    small.a = rng.normal_mat(3, 3);
    small.problem.gamma = Mat::Identity(3, 3);
    const Vec vars = Vec::Constant(3, 1.0);
    small.problem.gamma0 = vars.asDiagonal();
    small.problem.prior_mean = Vec::Zero(3);
    small.problem.y_dagger = rng.normal_vec(3);
    const Mat a_copy = small.a;
    small.problem.forward = [a_copy](const Vec& x, Rng&) -> Vec { return a_copy * x; };

    const Mat u_r = orthonormalize(rng.normal_mat(3, 2));
    const Mat v_s = orthonormalize(rng.normal_mat(3, 2));
    const ReducedSpace space = make_reduced_space(u_r, v_s, false);
    const GaussianPosterior red = linear_reduced_posterior(small, space);

    const GaussianConditional cond =
        gaussian_conditional(small.problem.gamma0, space.u_r, space.u_perp);
    Rng rng_density(11);
    const auto target = [&](const Vec& x_r) {
      return reduced_log_posterior(small.problem, space, cond, x_r, rng_density);
    };
    RwmOptions opts;
    opts.n_samples = 100000;
    opts.n_burn = 10000;
    Rng rng_chain(12);
    const McmcChain chain = rwm_sample(target, Vec::Zero(2), opts, rng_chain);
    Rng rng_rec(13);
    const Mat full = reconstruct_full_samples(space, cond, chain.samples.transpose(),
                                              small.problem.prior_mean, rng_rec);
    const Mat emp_cov = empirical_cov(full);
    CHECK((emp_cov - red.cov).norm() / red.cov.norm() < 0.05);
  }
}

TEST_CASE("linexp problem") {
  const LinearProblem lp = make_linexp_problem({.d_x = 5, .d_y = 4, .seed = 4});
  SUBCASE("x = 0 maps to the row sums of A") {
    Rng rng(0);
    const Vec y = lp.problem.forward(Vec::Zero(5), rng);
    CHECK((y - lp.a * Vec::Ones(5)).norm() < 1e-12);
  }
  SUBCASE("1-D scalar: a = 2, x = ln 3 gives 6") {
    Mat a = Mat::Constant(1, 1, 2.0);
    CHECK(linexp_forward(a, Vec::Constant(1, std::log(3.0)))[0] == doctest::Approx(6.0));
  }
  SUBCASE("gradient matches central finite differences") {
    Rng rng(9);
    const Vec x = 0.5 * rng.normal_vec(5);
    const Mat g = linexp_gradient(lp.a, x);
    const double h = 1e-6;
    for (int i = 0; i < 5; ++i) {
      Vec xp = x, xm = x;
      xp[i] += h;
      xm[i] -= h;
      const Vec fd = (linexp_forward(lp.a, xp) - linexp_forward(lp.a, xm)) / (2.0 * h);
      CHECK((fd - g.col(i)).norm() / g.col(i).norm() < 1e-6);
    }
  }
}

TEST_CASE("darcy_kl_modes: ordering and normalization rule") {
  DarcySpec spec;
  spec.d_x = 8;
  const auto modes = darcy_kl_modes(spec);
  REQUIRE(modes.size() == 8);
  for (std::size_t i = 1; i < modes.size(); ++i)
    CHECK(modes[i - 1].lambda >= modes[i].lambda);
  for (const auto& m : modes) {
    CHECK((m.k1 != 0 || m.k2 != 0));
    if (m.k1 == 0 || m.k2 == 0)
      CHECK(m.norm_const == doctest::Approx(std::numbers::sqrt2));
    else
      CHECK(m.norm_const == doctest::Approx(2.0));
  }
}

TEST_CASE("darcy_forward: u = 0 recovers the Poisson reference level") {
  DarcySpec spec;
  spec.d_x = 8;
  spec.d_y = 16;
  const Mat grid = darcy_solve_grid(spec, Vec::Zero(8), 5);
  const double peak = grid.maxCoeff();
  CHECK(std::abs(peak - 0.0737) < 2e-3);
}

TEST_CASE("darcy_forward: symmetric permeability gives a symmetric field") {
  DarcySpec spec;
  spec.d_x = 8;
  spec.d_y = 9;
  const auto modes = darcy_kl_modes(spec);
  Vec u = Vec::Zero(8);
  for (std::size_t k = 0; k < modes.size(); ++k)
    if (modes[k].k1 == modes[k].k2) u[static_cast<Eigen::Index>(k)] = 1.0;  // swap-symmetric
  const Mat grid = darcy_solve_grid(spec, u, 4);
  CHECK((grid - grid.transpose()).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("darcy_forward: grid refinement is second order at the observations") {
  DarcySpec spec;
  spec.d_x = 6;
  spec.d_y = 9;
  Rng rng(3);
  const Vec u = 0.5 * rng.normal_vec(6);
  const Vec ref = darcy_forward(spec, u, 8);
  const double e4 = (darcy_forward(spec, u, 4) - ref).norm();
  const double e5 = (darcy_forward(spec, u, 5) - ref).norm();
  const double rate = std::log2(e4 / e5);
  CHECK(rate > 1.5);
  CHECK(rate < 2.5);
}

TEST_CASE("make_darcy_problem produces a consistent observation") {
  DarcySpec spec;
  spec.d_x = 6;
  spec.d_y = 9;
  spec.grid_log2 = 4;
  spec.truth_grid_log2 = 5;
  spec.seed = 8;
  const InverseProblem p = make_darcy_problem(spec);
  CHECK(p.dim_y() == 9);
  CHECK(p.y_dagger.allFinite());
  Rng rng(0);
  const Vec g = p.forward(Vec::Zero(6), rng);
  CHECK(g.size() == 9);
}

TEST_CASE("rk4_step: fourth-order convergence on dy/dt = -y") {
  const auto f = [](const Vec& y) -> Vec { return -y; };
  const auto integrate = [&](double dt) {
    Vec y = Vec::Ones(1);
    const int n = static_cast<int>(std::lround(1.0 / dt));
    for (int i = 0; i < n; ++i) y = rk4_step(f, y, dt);
    return std::abs(y[0] - std::exp(-1.0));
  };
  const double e1 = integrate(0.1);
  const double e2 = integrate(0.05);
  const double rate = std::log2(e1 / e2);
  CHECK(rate > 3.8);
  CHECK(rate < 4.3);
}

TEST_CASE("lorenz96_stats") {
  LorenzSpec spec;
  spec.n = 8;
  spec.t_window = 2.0;
  spec.spinup = 1.0;
  SUBCASE("zero forcing from the origin stays at zero") {
    const Vec y = lorenz96_stats(spec, Vec::Zero(8), Vec::Zero(8));
    CHECK(y.norm() == 0.0);
  }
  SUBCASE("constant forcing from the equilibrium returns [c 1; 0] exactly") {
    const Vec f = Vec::Constant(8, 3.0);
    const Vec y = lorenz96_stats(spec, f, f);
    CHECK((y.head(8) - f).cwiseAbs().maxCoeff() < 1e-10);
    CHECK(y.tail(8).cwiseAbs().maxCoeff() < 1e-10);
  }
  SUBCASE("standard deviations are nonnegative") {
    LorenzSpec chaotic;
    chaotic.n = 8;
    chaotic.t_window = 3.0;
    chaotic.spinup = 1.0;
    Rng rng(5);
    const Vec y = lorenz96_forward(chaotic, Vec::Constant(8, 8.0), rng);
    CHECK(y.tail(8).minCoeff() >= 0.0);
  }
}

TEST_CASE("lorenz_true_forcing") {
  const Vec f = lorenz_true_forcing(40);
  CHECK(f[0] == doctest::Approx(8.0));
  CHECK(f[39] == doctest::Approx(8.0).epsilon(1e-12));
  CHECK(f.maxCoeff() <= 14.0 + 1e-12);
  CHECK(f.minCoeff() >= 2.0 - 1e-12);
}

TEST_CASE("lorenz_estimate_gamma") {
  SUBCASE("zero-variance outputs leave only the nugget") {
    LorenzSpec spec;
    spec.n = 6;
    spec.t_window = 1.0;
    spec.spinup = 0.5;
    spec.ic_scale = 0.0;  // deterministic start at F
    Rng rng(4);
    const Mat gamma = lorenz_estimate_gamma(spec, Vec::Zero(6), 5, rng);
    CHECK((gamma - 0.01 * Mat::Identity(12, 12)).cwiseAbs().maxCoeff() < 1e-12);
  }
  SUBCASE("symmetric with eigenvalues at least the nugget") {
    LorenzSpec spec;
    spec.n = 6;
    spec.t_window = 2.0;
    spec.spinup = 0.5;
    Rng rng(6);
    const Mat gamma = lorenz_estimate_gamma(spec, Vec::Constant(6, 8.0), 24, rng);
    CHECK((gamma - gamma.transpose()).cwiseAbs().maxCoeff() < 1e-12);
    const SymEig es = sym_eig_desc(gamma);
    CHECK(es.values.minCoeff() >= 0.01 - 1e-12);
  }
  SUBCASE("longer windows reduce the pre-nugget variance") {
    LorenzSpec short_spec;
    short_spec.n = 6;
    short_spec.t_window = 2.0;
    short_spec.spinup = 1.0;
    LorenzSpec long_spec = short_spec;
    long_spec.t_window = 8.0;
    const Vec f = Vec::Constant(6, 8.0);
    Rng rng_a(7), rng_b(7);
    const Mat g_short = lorenz_estimate_gamma(short_spec, f, 40, rng_a);
    const Mat g_long = lorenz_estimate_gamma(long_spec, f, 40, rng_b);
    CHECK(g_long.trace() < g_short.trace());
  }
}

TEST_CASE("make_lorenz_problem wires the pieces together") {
  LorenzSpec spec;
  spec.n = 6;
  spec.t_window = 1.0;
  spec.spinup = 0.5;
  spec.gamma_reps = 10;
  Rng rng(9);
  const InverseProblem p = make_lorenz_problem(spec, rng);
  CHECK(p.dim_x() == 6);
  CHECK(p.dim_y() == 12);
  CHECK(p.prior_mean[0] == doctest::Approx(8.0));
  CHECK(p.gamma0(0, 0) == doctest::Approx(25.0));
  CHECK(p.gamma0(0, 1) == doctest::Approx(25.0 * std::exp(-1.0)));
  Eigen::LLT<Mat> llt(p.gamma);
  CHECK(llt.info() == Eigen::Success);
}
