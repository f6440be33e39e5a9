#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "alis/problems.hpp"
#include "alis/reduction.hpp"

using namespace alis;

namespace {

InverseProblem whitened_toy(int d_x, int d_y, const Vec& y) {
  InverseProblem p;
  p.gamma = Mat::Identity(d_y, d_y);
  p.gamma0 = Mat::Identity(d_x, d_x);
  p.prior_mean = Vec::Zero(d_x);
  p.y_dagger = y;
  p.forward = [](const Vec& x, Rng&) { return x; };
  return p;
}

}  // namespace

TEST_CASE("statistical_linearization recovers linear maps exactly") {
  Rng rng(1);
  const int d_x = 5, d_y = 3;
  const Mat a = rng.normal_mat(d_y, d_x);
  const Mat xs = rng.normal_mat(d_x, d_x + 1);  // general position
  const Mat gs = a * xs;
  const Mat sl = statistical_linearization(xs, gs, 0.0);
  CHECK((sl - a).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("statistical_linearization: constant map gives the zero matrix") {
  Rng rng(2);
  const Mat xs = rng.normal_mat(3, 10);
  const Mat gs = Vec::Ones(2).replicate(1, 10);
  CHECK(statistical_linearization(xs, gs, 0.0).norm() == 0.0);
}

TEST_CASE("statistical_linearization: 1-D secant slope") {
  Mat xs(1, 2), gs(1, 2);
  xs << 0.0, 2.0;
  gs << 0.0, 4.0;  // x^2 at the two points
  const Mat sl = statistical_linearization(xs, gs, 0.0);
  CHECK(sl(0, 0) == doctest::Approx(2.0));
}

TEST_CASE("statistical_linearization: affine exactness for any sample law") {
  Rng rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    const int d_x = 2 + trial % 4;
    const Mat a = rng.normal_mat(3, d_x);
    const Vec b = rng.normal_vec(3);
    const Mat xs = 2.0 * rng.normal_mat(d_x, d_x + 3).array().tanh();  // non-Gaussian
    const Mat gs = (a * xs).colwise() + b;
    CHECK((statistical_linearization(xs, gs, 0.0) - a).cwiseAbs().maxCoeff() < 1e-8);
  }
}

TEST_CASE("statistical_linearization rejects degenerate input") {
  Mat xs(2, 1), gs(2, 1);
  CHECK_THROWS(statistical_linearization(xs, gs, 0.0));
}

TEST_CASE("estimate_h_alpha: alpha = 0 equals the data-free diagnostic exactly") {
  // Nonlinear map so the per-sample gradients differ.
  Rng rng(4);
  const int d_x = 4, d_y = 3, n = 20;
  const Mat a = rng.normal_mat(d_y, d_x);
  InverseProblem p = whitened_toy(d_x, d_y, rng.normal_vec(d_y));
  p.jacobian = [a](const Vec& x) { return linexp_gradient(a, x); };
  const Mat samples = rng.normal_mat(d_x, n);

  const DiagnosticMatrix h =
      estimate_h_alpha(samples, Mat(), GradientProvider::exact(p.jacobian), p, 0.0);
  Mat direct = Mat::Zero(d_x, d_x);
  for (int j = 0; j < n; ++j) {
    const Mat g = linexp_gradient(a, samples.col(j));
    direct += g.transpose() * g / n;
  }
  CHECK((h.h - direct).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("estimate_h_alpha: alpha = 1 with a zero residual vanishes") {
  Rng rng(5);
  const Vec y = rng.normal_vec(3);
  InverseProblem p = whitened_toy(3, 3, y);
  const Mat samples = rng.normal_mat(3, 1);
  const Mat evals = y.replicate(1, 1);
  const Mat sl = rng.normal_mat(3, 3);
  const DiagnosticMatrix h =
      estimate_h_alpha(samples, evals, GradientProvider::shared(sl), p, 1.0);
  CHECK(h.h.norm() < 1e-14);
}

TEST_CASE("estimate_h_alpha: 1-D hand evaluation") {
  // grad = 2, Gamma = 1, alpha = 0.5, residual 1: H = 2 (0.5 + 0.25) 2 = 3.
  InverseProblem p = whitened_toy(1, 1, Vec::Constant(1, 1.0));
  const Mat samples = Mat::Zero(1, 1);
  const Mat evals = Mat::Zero(1, 1);  // residual y - G = 1
  const Mat grad = Mat::Constant(1, 1, 2.0);
  const DiagnosticMatrix h =
      estimate_h_alpha(samples, evals, GradientProvider::shared(grad), p, 0.5);
  CHECK(h.h(0, 0) == doctest::Approx(3.0));
}

TEST_CASE("estimate_h_alpha outputs are symmetric PSD") {
  Rng rng(6);
  for (const double alpha : {0.0, 0.3, 1.0}) {
    const int d_x = 4, d_y = 5, n = 12;
    InverseProblem p = whitened_toy(d_x, d_y, rng.normal_vec(d_y));
    const Mat samples = rng.normal_mat(d_x, n);
    const Mat evals = rng.normal_mat(d_y, n);
    const Mat sl = rng.normal_mat(d_y, d_x);
    const DiagnosticMatrix h =
        estimate_h_alpha(samples, evals, GradientProvider::shared(sl), p, alpha);
    CHECK((h.h - h.h.transpose()).cwiseAbs().maxCoeff() < 1e-10);
    CHECK(h.eigvals.minCoeff() > -1e-10 * std::max(1.0, h.eigvals.maxCoeff()));
  }
}

TEST_CASE("accumulate_h") {
  Rng rng(7);
  const Mat z = rng.normal_mat(3, 3);
  const DiagnosticMatrix d1 = make_diagnostic(z * z.transpose(), 0.0, 0.0, true);

  SUBCASE("single pair returns the matrix") {
    const DiagnosticMatrix acc = accumulate_h({{0.0, d1}});
    CHECK((acc.h - d1.h).norm() < 1e-14);
  }
  SUBCASE("two identical matrices stay put") {
    const DiagnosticMatrix acc = accumulate_h({{0.0, d1}, {1.0, d1}});
    CHECK((acc.h - d1.h).norm() < 1e-14);
    CHECK(acc.alpha_lo == 0.0);
    CHECK(acc.alpha_hi == 1.0);
  }
  SUBCASE("linear in the weights") {
    const Mat z2 = rng.normal_mat(3, 3);
    const DiagnosticMatrix d2 = make_diagnostic(z2 * z2.transpose(), 1.0, 1.0, true);
    const DiagnosticMatrix a = accumulate_h({{0.0, d1}, {1.0, d2}}, {0.25, 0.75});
    CHECK((a.h - (0.25 * d1.h + 0.75 * d2.h)).norm() < 1e-14);
  }
  SUBCASE("rejects empty and unsorted input") {
    CHECK_THROWS(accumulate_h({}));
    const DiagnosticMatrix d2 = make_diagnostic(Mat::Identity(3, 3), 1.0, 1.0, true);
    CHECK_THROWS(accumulate_h({{1.0, d2}, {0.0, d1}}));
  }
}

TEST_CASE("accumulated H differs from the midpoint H on a linear-Gaussian problem") {
  const LinearProblemSpec spec{.d_x = 5, .d_y = 5, .seed = 11};
  const LinearProblem lp = make_linear_problem(spec);
  auto [w, wt] = whiten_problem(lp.problem);
  Rng rng(8);

  // Exact tempered samples: pi^(alpha) is Gaussian for linear maps.
  const Mat ab = wt.output_fwd * lp.a * wt.input_inv;
  const auto tempered_samples = [&](double alpha, int n, Rng& r) {
    const Mat prec = Mat::Identity(5, 5) + alpha * ab.transpose() * ab;
    Eigen::LLT<Mat> llt(prec);
    const Vec mean = llt.solve(alpha * ab.transpose() * w.y_dagger);
    const Mat cov_root = sym_sqrt(llt.solve(Mat::Identity(5, 5))).sqrt;
    Mat xs(5, n);
    for (int j = 0; j < n; ++j) xs.col(j) = mean + cov_root * r.normal_vec(5);
    return xs;
  };

  const GradientProvider grads = GradientProvider::shared(ab);
  std::vector<std::pair<double, DiagnosticMatrix>> pairs;
  for (int i = 0; i <= 10; ++i) {
    const double alpha = 0.1 * i;
    const Mat xs = tempered_samples(alpha, 400, rng);
    const Mat evals = ab * xs;
    pairs.emplace_back(alpha, estimate_h_alpha(xs, evals, grads, w, alpha));
  }
  const DiagnosticMatrix acc = accumulate_h(pairs);
  const Mat xs_mid = tempered_samples(0.5, 400, rng);
  const DiagnosticMatrix mid = estimate_h_alpha(xs_mid, ab * xs_mid, grads, w, 0.5);
  CHECK((acc.h - mid.h).norm() > 1e-3);
}

TEST_CASE("pca_basis") {
  SUBCASE("diagonal covariance picks leading axes") {
    Vec v(3);
    v << 3.0, 2.0, 1.0;
    Mat cov = v.asDiagonal();
    const Mat basis = pca_basis(cov, 2);
    CHECK(std::abs(basis(0, 0)) == doctest::Approx(1.0));
    CHECK(std::abs(basis(1, 1)) == doctest::Approx(1.0));
  }
  SUBCASE("isotropic covariance: only orthonormality is guaranteed") {
    const Mat basis = pca_basis(Mat::Identity(4, 4), 2);
    CHECK((basis.transpose() * basis - Mat::Identity(2, 2)).norm() < 1e-12);
  }
  SUBCASE("empirical PCA recovers the dominant direction") {
    Rng rng(9);
    Mat samples(2, 10000);
    for (int j = 0; j < 10000; ++j) {
      samples(0, j) = 2.0 * rng.normal();
      samples(1, j) = rng.normal();
    }
    const Mat basis = pca_basis_samples(samples, 1);
    const double angle = std::acos(std::min(1.0, std::abs(basis(0, 0))));
    CHECK(angle < 0.05);
  }
  SUBCASE("rejects r beyond the dimension") {
    CHECK_THROWS(pca_basis(Mat::Identity(3, 3), 4));
  }
}

TEST_CASE("input_basis") {
  SUBCASE("diag(5,1) keeps e1") {
    Vec v(2);
    v << 5.0, 1.0;
    const DiagnosticMatrix d = make_diagnostic(v.asDiagonal(), 0, 0, true);
    const Mat basis = input_basis(d, 1);
    CHECK(basis(0, 0) == doctest::Approx(1.0));
  }
  SUBCASE("full r returns a unitary basis") {
    Rng rng(10);
    const Mat z = rng.normal_mat(4, 4);
    const DiagnosticMatrix d = make_diagnostic(z * z.transpose(), 0, 0, true);
    const Mat basis = input_basis(d, 4);
    CHECK((basis.transpose() * basis - Mat::Identity(4, 4)).norm() < 1e-10);
  }
  SUBCASE("rotation equivariance up to sign") {
    Rng rng(11);
    const Mat z = rng.normal_mat(4, 4);
    Vec v(4);
    v << 4.0, 3.0, 2.0, 1.0;
    const Mat h = z * z.transpose() + Mat(v.asDiagonal());
    const Mat q = orthonormalize(rng.normal_mat(4, 4));
    const DiagnosticMatrix d = make_diagnostic(h, 0, 0, true);
    const DiagnosticMatrix dr = make_diagnostic(q * h * q.transpose(), 0, 0, true);
    const Mat b = input_basis(d, 2);
    const Mat br = input_basis(dr, 2);
    CHECK(max_principal_angle(q * b, br) < 1e-6);
  }
  SUBCASE("span invariant under positive rescaling") {
    Rng rng(12);
    const Mat z = rng.normal_mat(3, 3);
    const Mat h = z * z.transpose();
    const Mat b1 = input_basis(make_diagnostic(h, 0, 0, true), 2);
    const Mat b2 = input_basis(make_diagnostic(7.5 * h, 0, 0, true), 2);
    CHECK(max_principal_angle(b1, b2) < 1e-10);
  }
}

TEST_CASE("default_sl_nugget follows the noisy-evaluation rule") {
  InverseProblem p = whitened_toy(2, 3, Vec::Zero(3));
  CHECK(default_sl_nugget(p, 50) == 0.0);
  p.noisy_forward = true;
  CHECK(default_sl_nugget(p, 50) == doctest::Approx(3.0 / 50.0));
}
