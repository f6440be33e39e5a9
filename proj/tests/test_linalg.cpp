#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "alis/linalg.hpp"
#include "alis/random.hpp"

using namespace alis;

TEST_CASE("sym_sqrt round-trips SPD matrices") {
  Rng rng(1);
  const Mat z = rng.normal_mat(5, 5);
  const Mat spd = z * z.transpose() + 0.5 * Mat::Identity(5, 5);
  const SymSqrt r = sym_sqrt(spd);
  CHECK((r.sqrt * r.sqrt - spd).norm() < 1e-10);
  CHECK((r.sqrt * r.inv_sqrt - Mat::Identity(5, 5)).norm() < 1e-10);
}

TEST_CASE("sym_sqrt rejects indefinite input") {
  Mat m = Mat::Identity(3, 3);
  m(2, 2) = -1.0;
  CHECK_THROWS(sym_sqrt(m));
}

TEST_CASE("orthonormalize returns Q^T Q = I with positive diagonal convention") {
  Rng rng(2);
  const Mat m = rng.normal_mat(8, 3);
  const Mat q = orthonormalize(m);
  CHECK((q.transpose() * q - Mat::Identity(3, 3)).norm() < 1e-12);
  // Determinism: same input, same output.
  CHECK((orthonormalize(m) - q).norm() == 0.0);
}

TEST_CASE("orthonormalize rejects collinear columns") {
  Mat m(4, 2);
  m.col(0) = Vec::Ones(4);
  m.col(1) = 2.0 * Vec::Ones(4);
  CHECK_THROWS(orthonormalize(m));
}

TEST_CASE("sym_eig_desc orders descending with sign fix") {
  Mat d = Vec::LinSpaced(4, 1.0, 4.0).asDiagonal();
  const SymEig es = sym_eig_desc(d);
  CHECK(es.values[0] == doctest::Approx(4.0));
  CHECK(es.values[3] == doctest::Approx(1.0));
  for (int j = 0; j < 4; ++j) {
    int arg = 0;
    es.vectors.col(j).cwiseAbs().maxCoeff(&arg);
    CHECK(es.vectors(arg, j) > 0.0);
  }
}

TEST_CASE("orthonormal_complement spans the orthogonal space") {
  Rng rng(3);
  const Mat q = orthonormalize(rng.normal_mat(6, 2));
  const Mat c = orthonormal_complement(q, 6);
  CHECK(c.cols() == 4);
  CHECK((q.transpose() * c).norm() < 1e-12);
  CHECK((c.transpose() * c - Mat::Identity(4, 4)).norm() < 1e-12);
  CHECK(orthonormal_complement(Mat::Identity(4, 4), 4).cols() == 0);
}

TEST_CASE("max_principal_angle") {
  Mat a = Mat::Identity(4, 2);
  CHECK(max_principal_angle(a, a) < 1e-8);
  Mat b(4, 2);
  b.setZero();
  b(2, 0) = 1.0;
  b(3, 1) = 1.0;
  CHECK(max_principal_angle(a, b) == doctest::Approx(std::numbers::pi / 2));
}

TEST_CASE("median uses the lower-median convention") {
  CHECK(median({3.0, 1.0, 2.0}) == 2.0);
  CHECK(median({4.0, 1.0, 3.0, 2.0}) == 2.0);
}

TEST_CASE("rng streams are reproducible and splittable") {
  Rng a(42), b(42);
  CHECK(a.normal() == b.normal());
  CHECK(a.uniform() == b.uniform());
  Rng c = a.split(7);
  Rng d = b.split(7);
  CHECK(c.normal_vec(5) == d.normal_vec(5));
  // Antithetic mode flips normals only.
  Rng e(9), f(9);
  f.set_antithetic(true);
  CHECK(e.normal() == -f.normal());
  CHECK(e.uniform() == f.uniform());
}
