#pragma once

#include <vector>

#include "alis/bip.hpp"
#include "alis/reduction.hpp"

namespace alis {

/// Per-sample data behind the output-space objective
///   J(V_s) = Tr[ sum_j w_j grad_j^T P_s M_j P_s grad_j ],
///   P_s = Gamma^-1 - V_s (V_s^T Gamma V_s)^-1 V_s^T,
///   M_j = (1-alpha_j) Gamma + alpha_j^2 r_j r_j^T.
///
/// Samples may carry individual tempering levels, which is how accumulation
/// over an alpha-sequence is expressed (each level contributes its samples
/// with quadrature x Monte-Carlo weights). Gradient matrices are stored
/// uniquely and indexed per sample, so the common one-shared-linearization
/// case stays O(d^2) per sample.
struct ObjectiveContext {
  Mat gamma;
  Mat gamma_inv;
  bool identity_gamma = false;
  Mat residuals;  // d_y x n, columns y_dagger - G(x_j)
  Vec alphas;     // n
  Vec weights;    // n, sums to 1
  std::vector<Mat> grad_mats;  // unique d_y x d_x gradient matrices
  std::vector<int> grad_idx;   // per-sample index into grad_mats
  std::vector<Mat> c_mats;     // grad grad^T per unique gradient

  // Aggregates fixed at construction.
  Mat c_bar;       // sum_j w_j C_j
  Mat c_beta_bar;  // sum_j w_j (1 - alpha_j) C_j
  Mat m_bar;       // sum_j w_j M_j
  Mat a0_bar;      // sum_j w_j Sym(C_j M_j)
  Mat r_tilde;     // residual columns scaled by alpha_j sqrt(w_j)

  int n() const { return static_cast<int>(residuals.cols()); }
  int dy() const { return static_cast<int>(residuals.rows()); }
  bool single_grad() const { return grad_mats.size() == 1; }
};

ObjectiveContext make_objective_context(const InverseProblem& p, const Mat& samples,
                                        const Mat& evals, const GradientProvider& grads,
                                        double alpha);

/// Pools several tempering levels into one context; level weights default to
/// equal quadrature weights, and each level's samples share its Monte-Carlo
/// weight evenly.
ObjectiveContext make_objective_context_accumulated(
    const InverseProblem& p, const std::vector<Mat>& samples_per_level,
    const std::vector<Mat>& evals_per_level, const std::vector<GradientProvider>& grads_per_level,
    const std::vector<double>& level_alphas, const std::vector<double>& level_weights = {});

double objective_J(const ObjectiveContext& ctx, const Mat& v_s);

struct JGrad {
  Mat euclidean;   // -4 Gamma P_s A(V_s) V_s (V_s^T Gamma V_s)^-1
  Mat riemannian;  // (I - V_s V_s^T) euclidean
};
JGrad grad_J(const ObjectiveContext& ctx, const Mat& v_s);

/// A(V_s) = sum_j w_j Sym(C_j P_s M_j); the matrix in the NEPv stationarity
/// condition A(V_s) V_s = V_s Lambda (identity Gamma).
Mat a_matrix(const ObjectiveContext& ctx, const Mat& v_s);

/// A-bar(V) = -sum_{cols v} sum_j w_j Sym(C_j v v^T M_j), so that for
/// identity Gamma, A(V) = a0_bar + a_bar_cols(V).
Mat a_bar_cols(const ObjectiveContext& ctx, const Mat& v);

/// B-bar(v) = -1/2 sum_j w_j [ (v^T M_j v) C_j + (v^T C_j v) M_j ].
Mat b_bar(const ObjectiveContext& ctx, const Vec& v);

/// Closed-form output reduction at alpha = 0 on a whitened problem: the
/// top-s eigenvectors of sum_j w_j grad_j grad_j^T.
Mat output_basis_alpha0(const ObjectiveContext& ctx, int s);

struct OptReport {
  int iters = 0;
  bool converged = false;
  bool line_search_failed = false;
  double j_value = 0.0;
};

struct FullOptOptions {
  int max_iters = 2000;
  double tol_scale = 1e-8;  // stop at ||riem grad|| < tol_scale * max(1, J(init))
  double armijo_c = 1e-4;
  int max_halvings = 60;
};

/// Riemannian gradient descent over the Stiefel/Grassmann manifold with
/// Armijo backtracking and QR retraction. Empty init starts from the
/// alpha = 0 closed-form basis. Never returns a basis with larger J than
/// the initialization.
Mat optimize_full(const ObjectiveContext& ctx, int s, const Mat& init,
                  const FullOptOptions& opts = {}, OptReport* report = nullptr);

struct StageReport {
  bool scf_converged = false;
  bool used_fallback = false;
  int iters = 0;
  double j_value = 0.0;
};

/// Greedy nested construction: stage s minimizes J([V_{s-1}, V_perp u]) over
/// unit u by projected gradient descent on the sphere, warm-started from the
/// best-J eigenvector of V_perp^T A(V_{s-1}) V_perp. Every prefix of the
/// returned matrix is a valid nested basis.
Mat optimize_incremental(const ObjectiveContext& ctx, int s_max,
                         std::vector<StageReport>* reports = nullptr,
                         const FullOptOptions& opts = {});

/// State of one SCF stage (identity Gamma only).
struct ScfState {
  Mat b;                  // smoothed B^(k)
  Mat stage_fixed;        // a0_bar + A-bar(V_{s-1}), constant within a stage
  Vec u;                  // current candidate in complement coordinates
  double eta = 0.8;
  double eta_max = 0.8;
  std::vector<double> eps_history;
  int iters_since_perturbation = 0;
  int iters_since_reset = 0;
  double best_eps_since_reset = 0.0;  // valid once eps_history non-empty
  int iters_since_best = 0;
  bool converged = false;
};

ScfState make_scf_state(const ObjectiveContext& ctx, const Mat& v_prev, Rng& rng);

/// One SCF iteration: eigen-solve with the current smoothed B, candidate
/// selection by J, epsilon update, the adaptive eta schedule with its
/// perturbation and reset triggers, and the B update. Returns the selected
/// complement-coordinate vector and the advanced state.
std::pair<Vec, ScfState> scf_step(const ObjectiveContext& ctx, const Mat& v_prev,
                                  ScfState state, Rng& rng);

inline constexpr double kScfTolerance = 1e-4;
inline constexpr int kScfMaxIters = 2000;

/// Nested output basis via per-stage SCF iterations, falling back to the
/// sphere-descent stage on non-convergence.
Mat optimize_nepv(const ObjectiveContext& ctx, int s_max, Rng& rng,
                  std::vector<StageReport>* reports = nullptr);

}  // namespace alis
