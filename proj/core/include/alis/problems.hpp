#pragma once

#include <cstdint>
#include <vector>

#include "alis/bip.hpp"

namespace alis {

struct GaussianPosterior {
  Vec mean;
  Mat cov;
};

/// Linear forward map y = A x with A = U Lambda V^T built from seeded random
/// orthogonal factors and Lambda = 100 diag(1, 1/2, ..., 1/d_y). Prior
/// N(0, gamma0_scale diag(1, 1/4, ..., 1/d_x^2)), noise identity.
struct LinearProblemSpec {
  int d_x = 100;
  int d_y = 100;
  std::uint64_t seed = 0;
  double gamma0_scale = 4.0;
  bool ood_observation = false;  // y = G(10 * ones) + 10 * eta instead
  bool noisy_forward = false;
};

struct LinearProblem {
  InverseProblem problem;
  Mat a;
};

LinearProblem make_linear_problem(const LinearProblemSpec& spec);

/// Exact posterior: Sigma = (Gamma0^-1 + A^T Gamma^-1 A)^-1, mu = Sigma A^T Gamma^-1 y.
GaussianPosterior linear_posterior(const LinearProblem& lp);

/// Closed-form posterior of the reduced problem for given bases (centered
/// prior): likelihood f_gauss(y_s; B x_r, C) with
///   B = V_s^T A [U_r + U_perp mean_map],
///   C = V_s^T Gamma V_s + (V_s^T A U_perp) S (U_perp^T A^T V_s).
GaussianPosterior linear_reduced_posterior(const LinearProblem& lp, const ReducedSpace& space);

/// Linear-exponential variant G(x) = A exp(x) (elementwise), same A and prior
/// construction as the linear problem; analytic gradient A diag(exp(x)).
LinearProblem make_linexp_problem(const LinearProblemSpec& spec);

Vec linexp_forward(const Mat& a, const Vec& x);
Mat linexp_gradient(const Mat& a, const Vec& x);

/// Darcy flow -div(a(xi, u) grad p) = c on the unit square with zero
/// boundary; log-permeability from a truncated KL expansion with
/// lambda_k = (pi^2 |k|^2 + tau^2)^-s over the d_x strongest modes of
/// N^2 \ {(0,0)}. Observations are p at a ceil(sqrt(d_y)) interior lattice
/// (row-major, trailing points dropped), by bilinear interpolation.
struct DarcySpec {
  int d_x = 16;
  int d_y = 16;
  double tau = 3.0;
  double smoothness = 2.0;
  int grid_log2 = 5;        // solver step h = 2^-grid_log2
  int truth_grid_log2 = 7;  // observation-generating solve
  double source = 1.0;
  double noise_var = 1e-4;  // Gamma = noise_var * I
  std::uint64_t seed = 0;
};

struct KlMode {
  int k1 = 0, k2 = 0;
  double lambda = 0.0;
  double norm_const = 0.0;  // sqrt(2) if one index is zero, 2 otherwise
};
std::vector<KlMode> darcy_kl_modes(const DarcySpec& spec);

/// Pressure values at the d_y observation points for parameters u, solved on
/// a grid with step 2^-grid_log2.
Vec darcy_forward(const DarcySpec& spec, const Vec& u, int grid_log2);
/// Full interior pressure grid ((2^l - 1)^2, row-major) for tests.
Mat darcy_solve_grid(const DarcySpec& spec, const Vec& u, int grid_log2);

InverseProblem make_darcy_problem(const DarcySpec& spec);

/// Lorenz '96 with state-dependent forcing,
///   du_i/dt = (u_{i+1} - u_{i-2}) u_{i-1} - u_i + F_i  (cyclic),
/// integrated with fixed-step RK4. The forward map returns time-window mean
/// and standard deviation per state, stacked: dimension 2N. Evaluations are
/// stochastic through the random initial state u0 = F + ic_scale * z followed
/// by the spin-up.
struct LorenzSpec {
  int n = 40;
  double t_window = 20.0;
  double spinup = 4.0;
  double dt = 0.01;
  double ic_scale = 0.01;
  double prior_variance = 25.0;
  bool informative_prior = true;  // (Gamma0)_ij = var * exp(-|i-j|); else var * I
  double prior_mean_value = 8.0;
  double gamma_nugget = 1e-2;
  int gamma_reps = 200;
};

/// Statistics [mean; std] from an explicit initial state (deterministic).
Vec lorenz96_stats(const LorenzSpec& spec, const Vec& forcing, const Vec& u0);
Vec lorenz96_forward(const LorenzSpec& spec, const Vec& forcing, Rng& rng);

/// F_i = 8 + 6 sin(4 pi (i-1)/(N-1)).
Vec lorenz_true_forcing(int n);

/// Empirical covariance of forward outputs over random initial conditions,
/// plus gamma_nugget * I.
Mat lorenz_estimate_gamma(const LorenzSpec& spec, const Vec& forcing, int n_reps, Rng& rng);

/// Assembles the inverse problem: estimates Gamma at the true forcing and
/// draws the observation as one (stochastic) forward evaluation there.
InverseProblem make_lorenz_problem(const LorenzSpec& spec, Rng& rng);

/// Classic fixed-step RK4 for du/dt = f(u).
template <typename F>
Vec rk4_step(const F& f, const Vec& u, double dt) {
  const Vec k1 = f(u);
  const Vec k2 = f(u + 0.5 * dt * k1);
  const Vec k3 = f(u + 0.5 * dt * k2);
  const Vec k4 = f(u + dt * k3);
  return u + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

}  // namespace alis
