#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "alis/output_opt.hpp"
#include "alis/problems.hpp"

using namespace alis;

namespace {

InverseProblem whitened_toy(int d_x, int d_y, Rng& rng) {
  InverseProblem p;
  p.gamma = Mat::Identity(d_y, d_y);
  p.gamma0 = Mat::Identity(d_x, d_x);
  p.prior_mean = Vec::Zero(d_x);
  p.y_dagger = rng.normal_vec(d_y);
  p.forward = [](const Vec& x, Rng&) { return x; };
  return p;
}

// Context over random samples of a fixed nonlinear map with exact gradients.
ObjectiveContext toy_context(int d_x, int d_y, int n, double alpha, Rng& rng,
                             bool shared_grads = false, bool identity_gamma = true) {
  InverseProblem p = whitened_toy(d_x, d_y, rng);
  if (!identity_gamma) {
    const Mat z = rng.normal_mat(d_y, d_y);
    p.gamma = z * z.transpose() + d_y * Mat::Identity(d_y, d_y);
  }
  const Mat a = rng.normal_mat(d_y, d_x);
  const Mat samples = rng.normal_mat(d_x, n);
  Mat evals(d_y, n);
  for (int j = 0; j < n; ++j) evals.col(j) = linexp_forward(a, 0.3 * samples.col(j));
  if (shared_grads) {
    return make_objective_context(p, samples, evals, GradientProvider::shared(a), alpha);
  }
  const auto jac = [a](const Vec& x) -> Mat { return linexp_gradient(a, 0.3 * x) * 0.3; };
  return make_objective_context(p, samples, evals, GradientProvider::exact(jac), alpha);
}

double direct_objective(const ObjectiveContext& ctx, const Mat& v_s) {
  // Literal formula: Tr[sum_j w_j grad^T P M P grad].
  Eigen::LLT<Mat> llt_gamma(ctx.gamma);
  const Mat gamma_inv = llt_gamma.solve(Mat::Identity(ctx.dy(), ctx.dy()));
  const Mat k = v_s.transpose() * ctx.gamma * v_s;
  const Mat p = gamma_inv - v_s * Eigen::LLT<Mat>(k).solve(v_s.transpose());
  double acc = 0.0;
  for (int j = 0; j < ctx.n(); ++j) {
    const Mat& g = ctx.grad_mats[ctx.grad_idx[j]];
    const Vec r = ctx.residuals.col(j);
    const double a = ctx.alphas[j];
    const Mat m = (1.0 - a) * ctx.gamma + a * a * r * r.transpose();
    acc += ctx.weights[j] * (g.transpose() * p * m * p * g).trace();
  }
  return acc;
}

}  // namespace

TEST_CASE("objective_J matches the literal formula") {
  Rng rng(1);
  for (const double alpha : {0.0, 0.5, 1.0}) {
    for (const bool shared : {false, true}) {
      for (const bool idg : {true, false}) {
        ObjectiveContext ctx = toy_context(4, 5, 9, alpha, rng, shared, idg);
        const Mat v = orthonormalize(rng.normal_mat(5, 2));
        CHECK(objective_J(ctx, v) ==
              doctest::Approx(direct_objective(ctx, v)).epsilon(1e-10));
      }
    }
  }
}

TEST_CASE("objective_J: full basis gives exactly zero") {
  Rng rng(2);
  ObjectiveContext ctx = toy_context(3, 4, 6, 0.7, rng);
  const Mat v = orthonormalize(rng.normal_mat(4, 4));
  CHECK(objective_J(ctx, v) == 0.0);
}

TEST_CASE("objective_J: alpha = 0 with identity gamma reduces to the complement trace") {
  Rng rng(3);
  ObjectiveContext ctx = toy_context(4, 5, 8, 0.0, rng);
  const Mat v = orthonormalize(rng.normal_mat(5, 2));
  const Mat v_perp = orthonormal_complement(v, 5);
  const double expected = (v_perp.transpose() * ctx.c_bar * v_perp).trace();
  CHECK(objective_J(ctx, v) == doctest::Approx(expected).epsilon(1e-10));
}

TEST_CASE("objective_J: 2x2 one-sample hand oracle") {
  InverseProblem p;
  p.gamma = Mat::Identity(2, 2);
  p.gamma0 = Mat::Identity(2, 2);
  p.prior_mean = Vec::Zero(2);
  p.y_dagger = Vec::Zero(2);
  p.forward = [](const Vec& x, Rng&) { return x; };
  Mat samples = Mat::Zero(2, 1);
  Mat evals(2, 1);
  evals << -1.0, -2.0;  // residual (1, 2)
  Mat grad(2, 2);
  grad << 1.0, 0.0, 0.0, 2.0;
  const double alpha = 0.5;
  ObjectiveContext ctx =
      make_objective_context(p, samples, evals, GradientProvider::shared(grad), alpha);
  Mat v(2, 1);
  v << 1.0, 0.0;
  // P = e2 e2^T; M = 0.5 I + 0.25 rr^T; grad^T P M P grad picks M(2,2) * 4.
  const double m22 = 0.5 + 0.25 * 4.0;
  CHECK(objective_J(ctx, v) == doctest::Approx(4.0 * m22));
}

TEST_CASE("objective_J is nonnegative and invariant to right rotations") {
  Rng rng(4);
  ObjectiveContext ctx = toy_context(4, 6, 10, 0.8, rng, false, false);
  for (int trial = 0; trial < 10; ++trial) {
    const Mat v = orthonormalize(rng.normal_mat(6, 3));
    const double j1 = objective_J(ctx, v);
    CHECK(j1 > -1e-10);
    const Mat q = orthonormalize(rng.normal_mat(3, 3));
    CHECK(objective_J(ctx, v * q) == doctest::Approx(j1).epsilon(1e-10));
  }
}

TEST_CASE("projector identity P Gamma P = P") {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const int d_y = 3 + trial % 5;
    const Mat z = rng.normal_mat(d_y, d_y);
    const Mat gamma = z * z.transpose() + d_y * Mat::Identity(d_y, d_y);
    const Mat v = orthonormalize(rng.normal_mat(d_y, 1 + trial % (d_y - 1)));
    const Mat gamma_inv = Eigen::LLT<Mat>(gamma).solve(Mat::Identity(d_y, d_y));
    const Mat k = v.transpose() * gamma * v;
    const Mat p = gamma_inv - v * Eigen::LLT<Mat>(k).solve(v.transpose());
    CHECK(((p * gamma * p) - p).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("grad_J: finite differences along tangent directions") {
  Rng rng(6);
  for (const double alpha : {0.0, 0.5, 1.0}) {
    for (const bool shared : {false, true}) {
      ObjectiveContext ctx = toy_context(5, 6, 8, alpha, rng, shared);
      const Mat v = orthonormalize(rng.normal_mat(6, 2));
      const JGrad g = grad_J(ctx, v);
      CHECK((v.transpose() * g.riemannian).cwiseAbs().maxCoeff() < 1e-10);
      for (int dir = 0; dir < 5; ++dir) {
        Mat delta = rng.normal_mat(6, 2);
        delta -= v * (v.transpose() * delta);  // tangent
        delta /= delta.norm();
        const double h = 1e-6;
        const double fd =
            (objective_J(ctx, v + h * delta) - objective_J(ctx, v - h * delta)) / (2.0 * h);
        const double an = (g.riemannian.transpose() * delta).trace();
        CHECK(fd == doctest::Approx(an).epsilon(1e-5));
      }
    }
  }
}

TEST_CASE("grad_J vanishes at eigenvector stationary points (alpha = 0, identity gamma)") {
  Rng rng(7);
  ObjectiveContext ctx = toy_context(4, 5, 10, 0.0, rng);
  const SymEig es = sym_eig_desc(ctx.c_bar);
  const Mat v = es.vectors.leftCols(2);
  CHECK((a_matrix(ctx, v) * v).norm() < 1e-10);  // NEPv with Lambda = 0
  CHECK(grad_J(ctx, v).riemannian.norm() < 1e-8);
}

TEST_CASE("grad_J: full basis has zero gradients") {
  Rng rng(8);
  ObjectiveContext ctx = toy_context(3, 4, 5, 0.6, rng);
  const Mat v = orthonormalize(rng.normal_mat(4, 4));
  const JGrad g = grad_J(ctx, v);
  CHECK(g.euclidean.norm() == 0.0);
  CHECK(g.riemannian.norm() == 0.0);
}

TEST_CASE("a_matrix decomposes as a0_bar + a_bar_cols for identity gamma") {
  Rng rng(9);
  ObjectiveContext ctx = toy_context(4, 5, 7, 0.5, rng);
  const Mat v = orthonormalize(rng.normal_mat(5, 2));
  const Mat direct = a_matrix(ctx, v);
  const Mat split = ctx.a0_bar + a_bar_cols(ctx, v);
  CHECK((direct - split).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("b_bar matches A-bar on its defining identity") {
  // a_bar_cols(v) v == b_bar(v) v for unit vectors.
  Rng rng(10);
  ObjectiveContext ctx = toy_context(4, 5, 7, 0.7, rng);
  Vec v = rng.normal_vec(5);
  v.normalize();
  const Vec lhs = a_bar_cols(ctx, v) * v;
  const Vec rhs = b_bar(ctx, v) * v;
  CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("output_basis_alpha0") {
  Rng rng(11);
  SUBCASE("linear map: left singular subspace") {
    const int d_x = 6, d_y = 4;
    const Mat a = rng.normal_mat(d_y, d_x);
    InverseProblem p = whitened_toy(d_x, d_y, rng);
    const Mat samples = rng.normal_mat(d_x, 10);
    ObjectiveContext ctx =
        make_objective_context(p, samples, Mat(), GradientProvider::shared(a), 0.0);
    const Mat basis = output_basis_alpha0(ctx, 2);
    Eigen::JacobiSVD<Mat> svd(a, Eigen::ComputeThinU);
    CHECK(max_principal_angle(basis, svd.matrixU().leftCols(2)) < 1e-10);
  }
  SUBCASE("beats random bases on J") {
    ObjectiveContext ctx = toy_context(4, 5, 9, 0.0, rng);
    const Mat best = output_basis_alpha0(ctx, 2);
    const double j_best = objective_J(ctx, best);
    for (int trial = 0; trial < 10; ++trial) {
      const Mat v = orthonormalize(rng.normal_mat(5, 2));
      CHECK(j_best <= objective_J(ctx, v) + 1e-10);
    }
  }
  SUBCASE("full basis gives J = 0") {
    ObjectiveContext ctx = toy_context(3, 4, 6, 0.0, rng);
    CHECK(objective_J(ctx, output_basis_alpha0(ctx, 4)) == 0.0);
  }
}

TEST_CASE("optimize_full") {
  Rng rng(12);
  SUBCASE("alpha = 0: converges to the leading eigenspace from random init") {
    ObjectiveContext ctx = toy_context(5, 6, 12, 0.0, rng);
    const SymEig es = sym_eig_desc(ctx.c_bar);
    const Mat init = orthonormalize(rng.normal_mat(6, 2));
    OptReport rep;
    const Mat v = optimize_full(ctx, 2, init, FullOptOptions{}, &rep);
    CHECK(rep.converged);
    CHECK(max_principal_angle(v, es.vectors.leftCols(2)) < 1e-6);
  }
  SUBCASE("s = d_y returns the init immediately") {
    ObjectiveContext ctx = toy_context(3, 4, 5, 0.5, rng);
    const Mat init = orthonormalize(rng.normal_mat(4, 4));
    OptReport rep;
    const Mat v = optimize_full(ctx, 4, init, FullOptOptions{}, &rep);
    CHECK((v - init).norm() == 0.0);
    CHECK(rep.iters == 0);
  }
  SUBCASE("never increases J relative to the initialization") {
    for (const double alpha : {0.3, 1.0}) {
      ObjectiveContext ctx = toy_context(4, 6, 9, alpha, rng, false, false);
      const Mat init = orthonormalize(rng.normal_mat(6, 3));
      const double j0 = objective_J(ctx, init);
      const Mat v = optimize_full(ctx, 3, init);
      CHECK(objective_J(ctx, v) <= j0 + 1e-12);
    }
  }
}

TEST_CASE("optimize_incremental") {
  Rng rng(13);
  SUBCASE("columns are orthonormal and nesting holds") {
    ObjectiveContext ctx = toy_context(4, 6, 9, 0.5, rng);
    const Mat v = optimize_incremental(ctx, 4);
    CHECK((v.transpose() * v - Mat::Identity(4, 4)).cwiseAbs().maxCoeff() < 1e-10);
  }
  SUBCASE("alpha = 0: stage s recovers the s-th eigenvector") {
    ObjectiveContext ctx = toy_context(5, 5, 10, 0.0, rng);
    const SymEig es = sym_eig_desc(ctx.c_bar);
    const Mat v = optimize_incremental(ctx, 3);
    for (int s = 0; s < 3; ++s)
      CHECK(std::abs(std::abs(v.col(s).dot(es.vectors.col(s))) - 1.0) < 1e-6);
  }
  SUBCASE("J decreases along the nested prefixes") {
    ObjectiveContext ctx = toy_context(4, 6, 9, 0.9, rng);
    const Mat v = optimize_incremental(ctx, 5);
    double prev = objective_J(ctx, Mat(6, 0));
    for (int s = 1; s <= 5; ++s) {
      const double j = objective_J(ctx, v.leftCols(s));
      CHECK(j <= prev + 1e-10);
      prev = j;
    }
  }
}

TEST_CASE("scf_step") {
  Rng rng(14);
  SUBCASE("eta starts at 0.8 and growth is capped at eta_max") {
    ObjectiveContext ctx = toy_context(4, 5, 8, 0.5, rng);
    ScfState state = make_scf_state(ctx, Mat(5, 0), rng);
    CHECK(state.eta == 0.8);
    CHECK(state.eta_max == 0.8);
    auto [u, next] = scf_step(ctx, Mat(5, 0), state, rng);
    if (!next.converged) CHECK(next.eta <= 0.8 + 1e-15);
  }
  SUBCASE("fixed point: eps = 0 and the candidate is stationary") {
    // At alpha = 0 the stage matrix does not depend on u, so one step lands
    // on the fixed point; feeding it back gives eps = 0 exactly.
    ObjectiveContext ctx = toy_context(4, 5, 8, 0.0, rng);
    ScfState state = make_scf_state(ctx, Mat(5, 0), rng);
    auto [u1, s1] = scf_step(ctx, Mat(5, 0), state, rng);
    ScfState clean = s1;
    clean.b = b_bar(ctx, u1);  // V_perp = I at stage 1
    clean.eps_history.clear();
    auto [u2, s2] = scf_step(ctx, Mat(5, 0), clean, rng);
    CHECK(s2.converged);
    CHECK(s2.eps_history.back() < 1e-12);
    Mat v(5, 1);
    v.col(0) = u2;
    CHECK(grad_J(ctx, v).riemannian.norm() < 1e-6);
  }
  SUBCASE("requires identity gamma") {
    ObjectiveContext ctx = toy_context(3, 4, 6, 0.5, rng, false, false);
    CHECK_THROWS(make_scf_state(ctx, Mat(4, 0), rng));
  }
}

TEST_CASE("optimize_nepv") {
  Rng rng(15);
  SUBCASE("alpha = 0 agrees with the incremental optimizer") {
    ObjectiveContext ctx = toy_context(5, 6, 10, 0.0, rng);
    std::vector<StageReport> reports;
    const Mat v_nepv = optimize_nepv(ctx, 3, rng, &reports);
    const Mat v_incr = optimize_incremental(ctx, 3);
    CHECK(max_principal_angle(v_nepv, v_incr) < 1e-4);
    CHECK(reports.size() == 3);
  }
  SUBCASE("stage bookkeeping and epsilon positivity") {
    ObjectiveContext ctx = toy_context(4, 6, 9, 0.5, rng);
    std::vector<StageReport> reports;
    ScfState probe = make_scf_state(ctx, Mat(6, 0), rng);
    auto [u, after] = scf_step(ctx, Mat(6, 0), probe, rng);
    for (const double e : after.eps_history) CHECK(e >= 0.0);
    const Mat v = optimize_nepv(ctx, 4, rng, &reports);
    CHECK((v.transpose() * v - Mat::Identity(4, 4)).cwiseAbs().maxCoeff() < 1e-10);
    for (const StageReport& r : reports) CHECK((r.scf_converged || r.used_fallback));
  }
}
