#include "alis/output_opt.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace alis {

namespace {

void finalize_context(ObjectiveContext& ctx) {
  const int n = ctx.n();
  const int dy = ctx.dy();
  ctx.identity_gamma = ctx.gamma.isIdentity(1e-12);
  Eigen::LLT<Mat> llt(ctx.gamma);
  if (llt.info() != Eigen::Success) throw std::runtime_error("ObjectiveContext: Gamma not SPD");
  ctx.gamma_inv = llt.solve(Mat::Identity(dy, dy));

  for (const Mat& g : ctx.grad_mats) ctx.c_mats.push_back(g * g.transpose());

  ctx.c_bar = Mat::Zero(dy, dy);
  ctx.c_beta_bar = Mat::Zero(dy, dy);
  ctx.r_tilde = ctx.residuals;
  Vec quad = Vec::Zero(n);  // w_j alpha_j^2
  for (int j = 0; j < n; ++j) {
    const double w = ctx.weights[j];
    const double a = ctx.alphas[j];
    ctx.c_bar += w * ctx.c_mats[ctx.grad_idx[j]];
    ctx.c_beta_bar += w * (1.0 - a) * ctx.c_mats[ctx.grad_idx[j]];
    quad[j] = w * a * a;
    ctx.r_tilde.col(j) *= a * std::sqrt(w);
  }
  ctx.m_bar = (ctx.weights.sum() - ctx.weights.dot(ctx.alphas)) * ctx.gamma +
              ctx.residuals * quad.asDiagonal() * ctx.residuals.transpose();

  // a0_bar = sum_j w_j Sym(C_j M_j) with C_j M_j = (1-a)C_j Gamma + a^2 (C_j r_j) r_j^T.
  Mat a0 = ctx.c_beta_bar * ctx.gamma;
  for (int j = 0; j < n; ++j) {
    if (quad[j] == 0.0) continue;
    a0 += quad[j] * (ctx.c_mats[ctx.grad_idx[j]] * ctx.residuals.col(j)) *
          ctx.residuals.col(j).transpose();
  }
  ctx.a0_bar = 0.5 * (a0 + a0.transpose());
}

struct Projector {
  Mat p;                  // Gamma^-1 - V K^-1 V^T
  Eigen::LLT<Mat> k_llt;  // factor of V^T Gamma V
};

Projector make_projector(const ObjectiveContext& ctx, const Mat& v_s) {
  Projector pr;
  const Mat k = v_s.transpose() * ctx.gamma * v_s;
  pr.k_llt.compute(k);
  if (v_s.cols() > 0 && pr.k_llt.info() != Eigen::Success)
    throw std::runtime_error("output_opt: singular V_s^T Gamma V_s");
  pr.p = ctx.gamma_inv;
  if (v_s.cols() > 0) pr.p -= v_s * pr.k_llt.solve(v_s.transpose());
  return pr;
}

}  // namespace

ObjectiveContext make_objective_context(const InverseProblem& p, const Mat& samples,
                                        const Mat& evals, const GradientProvider& grads,
                                        double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0))
    throw std::invalid_argument("make_objective_context: alpha outside [0, 1]");
  const int n = static_cast<int>(samples.cols());
  if (n < 1) throw std::invalid_argument("make_objective_context: no samples");
  if (alpha > 0.0 && evals.cols() != n)
    throw std::invalid_argument("make_objective_context: evaluations required for alpha > 0");

  ObjectiveContext ctx;
  ctx.gamma = p.gamma;
  ctx.residuals = alpha > 0.0 ? Mat((-evals).colwise() + p.y_dagger)
                              : Mat::Zero(p.dim_y(), n);
  ctx.alphas = Vec::Constant(n, alpha);
  ctx.weights = Vec::Constant(n, 1.0 / n);
  if (grads.is_shared()) {
    ctx.grad_mats.push_back(grads.shared_matrix());
    ctx.grad_idx.assign(n, 0);
  } else {
    for (int j = 0; j < n; ++j) {
      ctx.grad_mats.push_back(grads.at(samples.col(j)));
      ctx.grad_idx.push_back(j);
    }
  }
  finalize_context(ctx);
  return ctx;
}

ObjectiveContext make_objective_context_accumulated(
    const InverseProblem& p, const std::vector<Mat>& samples_per_level,
    const std::vector<Mat>& evals_per_level, const std::vector<GradientProvider>& grads_per_level,
    const std::vector<double>& level_alphas, const std::vector<double>& level_weights) {
  const std::size_t levels = level_alphas.size();
  if (levels == 0) throw std::invalid_argument("make_objective_context_accumulated: no levels");
  if (samples_per_level.size() != levels || evals_per_level.size() != levels ||
      grads_per_level.size() != levels)
    throw std::invalid_argument("make_objective_context_accumulated: level count mismatch");
  std::vector<double> lw = level_weights;
  if (lw.empty()) lw.assign(levels, 1.0 / static_cast<double>(levels));

  int total = 0;
  for (const Mat& s : samples_per_level) total += static_cast<int>(s.cols());

  ObjectiveContext ctx;
  ctx.gamma = p.gamma;
  ctx.residuals.resize(p.dim_y(), total);
  ctx.alphas.resize(total);
  ctx.weights.resize(total);
  int col = 0;
  for (std::size_t l = 0; l < levels; ++l) {
    const int nl = static_cast<int>(samples_per_level[l].cols());
    if (nl < 1) throw std::invalid_argument("make_objective_context_accumulated: empty level");
    const double alpha = level_alphas[l];
    const bool need_evals = alpha > 0.0;
    if (need_evals && evals_per_level[l].cols() != nl)
      throw std::invalid_argument("make_objective_context_accumulated: evaluations missing");
    int base_idx;
    if (grads_per_level[l].is_shared()) {
      ctx.grad_mats.push_back(grads_per_level[l].shared_matrix());
      base_idx = static_cast<int>(ctx.grad_mats.size()) - 1;
    } else {
      base_idx = static_cast<int>(ctx.grad_mats.size());
      for (int j = 0; j < nl; ++j)
        ctx.grad_mats.push_back(grads_per_level[l].at(samples_per_level[l].col(j)));
    }
    for (int j = 0; j < nl; ++j, ++col) {
      ctx.residuals.col(col) =
          need_evals ? Vec(p.y_dagger - evals_per_level[l].col(j)) : Vec(Vec::Zero(p.dim_y()));
      ctx.alphas[col] = alpha;
      ctx.weights[col] = lw[l] / nl;
      ctx.grad_idx.push_back(grads_per_level[l].is_shared() ? base_idx : base_idx + j);
    }
  }
  const double wsum = ctx.weights.sum();
  ctx.weights /= wsum;
  finalize_context(ctx);
  return ctx;
}

double objective_J(const ObjectiveContext& ctx, const Mat& v_s) {
  if (v_s.cols() > ctx.dy()) throw std::invalid_argument("objective_J: too many columns");
  if (v_s.cols() == ctx.dy()) return 0.0;  // P_s vanishes for a full basis
  const Projector pr = make_projector(ctx, v_s);
  const Mat pgp = pr.p * ctx.gamma * pr.p;
  double value = (pgp.cwiseProduct(ctx.c_beta_bar)).sum();
  const Mat q = pr.p * ctx.r_tilde;
  if (ctx.single_grad()) {
    value += ((ctx.c_mats[0] * q).cwiseProduct(q)).sum();
  } else {
    for (int j = 0; j < ctx.n(); ++j)
      value += q.col(j).dot(ctx.c_mats[ctx.grad_idx[j]] * q.col(j));
  }
  return value;
}

Mat a_matrix(const ObjectiveContext& ctx, const Mat& v_s) {
  const Projector pr = make_projector(ctx, v_s);
  Mat a = ctx.c_beta_bar * pr.p * ctx.gamma;
  const Mat q = pr.p * ctx.r_tilde;
  if (ctx.single_grad()) {
    a += ctx.c_mats[0] * q * ctx.r_tilde.transpose();
  } else {
    for (int j = 0; j < ctx.n(); ++j)
      a += (ctx.c_mats[ctx.grad_idx[j]] * q.col(j)) * ctx.r_tilde.col(j).transpose();
  }
  return 0.5 * (a + a.transpose());
}

JGrad grad_J(const ObjectiveContext& ctx, const Mat& v_s) {
  JGrad g;
  if (v_s.cols() == ctx.dy()) {
    g.euclidean = Mat::Zero(v_s.rows(), v_s.cols());
    g.riemannian = g.euclidean;
    return g;
  }
  const Projector pr = make_projector(ctx, v_s);
  const Mat a = a_matrix(ctx, v_s);
  g.euclidean = -4.0 * ctx.gamma * pr.p * a * pr.k_llt.solve(v_s.transpose()).transpose();
  g.riemannian = g.euclidean - v_s * (v_s.transpose() * g.euclidean);
  return g;
}

Mat a_bar_cols(const ObjectiveContext& ctx, const Mat& v) {
  const int dy = ctx.dy();
  Mat acc = Mat::Zero(dy, dy);
  for (int c = 0; c < v.cols(); ++c) {
    const Vec& col = v.col(c);
    Mat term = ctx.c_beta_bar * col * (ctx.gamma * col).transpose();
    if (ctx.single_grad()) {
      term += (ctx.c_mats[0] * col) * (ctx.r_tilde * (ctx.r_tilde.transpose() * col)).transpose();
    } else {
      const Vec rv = ctx.r_tilde.transpose() * col;
      for (int j = 0; j < ctx.n(); ++j)
        term += rv[j] * (ctx.c_mats[ctx.grad_idx[j]] * col) * ctx.r_tilde.col(j).transpose();
    }
    acc += 0.5 * (term + term.transpose());
  }
  return -acc;
}

Mat b_bar(const ObjectiveContext& ctx, const Vec& v) {
  const double v_gamma_v = v.dot(ctx.gamma * v);
  const Vec rv = ctx.residuals.transpose() * v;

  // v^T C v per unique gradient matrix.
  std::vector<double> vcv(ctx.c_mats.size());
  for (std::size_t u = 0; u < ctx.c_mats.size(); ++u) vcv[u] = v.dot(ctx.c_mats[u] * v);

  // term1 = sum_j w_j (v^T M_j v) C_j, grouped by unique C.
  std::vector<double> coeff(ctx.c_mats.size(), 0.0);
  double gamma_coeff = 0.0;  // for term2's Gamma part
  Vec outer_scale = Vec::Zero(ctx.n());
  for (int j = 0; j < ctx.n(); ++j) {
    const double w = ctx.weights[j];
    const double a = ctx.alphas[j];
    const double vmv = (1.0 - a) * v_gamma_v + a * a * rv[j] * rv[j];
    coeff[ctx.grad_idx[j]] += w * vmv;
    gamma_coeff += w * vcv[ctx.grad_idx[j]] * (1.0 - a);
    outer_scale[j] = w * vcv[ctx.grad_idx[j]] * a * a;
  }
  Mat out = gamma_coeff * ctx.gamma;
  for (std::size_t u = 0; u < ctx.c_mats.size(); ++u) out += coeff[u] * ctx.c_mats[u];
  out += ctx.residuals * outer_scale.asDiagonal() * ctx.residuals.transpose();
  out *= -0.5;
  return 0.5 * (out + out.transpose());
}

Mat output_basis_alpha0(const ObjectiveContext& ctx, int s) {
  if (s > ctx.dy()) throw std::invalid_argument("output_basis_alpha0: s exceeds dimension");
  return sym_eig_desc(ctx.c_bar).vectors.leftCols(s);
}

Mat optimize_full(const ObjectiveContext& ctx, int s, const Mat& init,
                  const FullOptOptions& opts, OptReport* report) {
  if (s > ctx.dy()) throw std::invalid_argument("optimize_full: s exceeds dimension");
  Mat v = init.size() ? init : output_basis_alpha0(ctx, s);
  OptReport rep;
  if (s == ctx.dy()) {
    rep.converged = true;
    if (report) *report = rep;
    return v;
  }
  double j_cur = objective_J(ctx, v);
  const double tol = opts.tol_scale * std::max(1.0, j_cur);
  Mat best_v = v;
  double best_j = j_cur;
  Mat v_prev, g_prev;
  for (int it = 0; it < opts.max_iters; ++it) {
    rep.iters = it + 1;
    const Mat g = grad_J(ctx, v).riemannian;
    const double gnorm2 = g.squaredNorm();
    if (std::sqrt(gnorm2) < tol) {
      rep.converged = true;
      break;
    }
    // Barzilai-Borwein trial step, safeguarded by the Armijo search below.
    double step = 1.0 / std::sqrt(gnorm2);
    if (it > 0) {
      const Mat dv = v - v_prev;
      const Mat dg = g - g_prev;
      const double denom = (dg.cwiseProduct(dg)).sum();
      if (denom > 0.0) {
        const double bb = std::abs((dv.cwiseProduct(dg)).sum()) / denom;
        if (bb > 0.0 && std::isfinite(bb)) step = bb;
      }
    }
    step = std::clamp(step, 1e-12, 1e3);
    v_prev = v;
    g_prev = g;
    bool accepted = false;
    for (int h = 0; h < opts.max_halvings; ++h) {
      const Mat trial = orthonormalize(v - step * g);
      const double j_trial = objective_J(ctx, trial);
      if (j_trial <= j_cur - opts.armijo_c * step * gnorm2) {
        v = trial;
        j_cur = j_trial;
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (j_cur < best_j) {
      best_j = j_cur;
      best_v = v;
    }
    if (!accepted) {
      rep.line_search_failed = true;
      break;
    }
  }
  if (best_j < j_cur) {
    v = best_v;
    j_cur = best_j;
  }
  rep.j_value = j_cur;
  if (report) *report = rep;
  return v;
}

namespace {

// Stage solve of the greedy construction: min_{|u|=1} J([v_prev, v_perp u]),
// warm-started from the best eigenvector of v_perp^T A(v_prev) v_perp.
Vec stage_sphere_descent(const ObjectiveContext& ctx, const Mat& v_prev, const Mat& v_perp,
                         const FullOptOptions& opts, StageReport* report) {
  const int m = static_cast<int>(v_perp.cols());
  const int s = static_cast<int>(v_prev.cols()) + 1;
  const auto with_col = [&](const Vec& u) {
    Mat v(ctx.dy(), s);
    if (s > 1) v.leftCols(s - 1) = v_prev;
    v.col(s - 1) = v_perp * u;
    return v;
  };

  const Mat stage_mat = v_perp.transpose() * a_matrix(ctx, v_prev) * v_perp;
  const SymEig es = sym_eig_desc(0.5 * (stage_mat + stage_mat.transpose()));
  Vec u = es.vectors.col(0);
  double j_cur = objective_J(ctx, with_col(u));
  for (int c = 1; c < m; ++c) {
    const double j_c = objective_J(ctx, with_col(es.vectors.col(c)));
    if (j_c < j_cur) {
      j_cur = j_c;
      u = es.vectors.col(c);
    }
  }

  const double tol = opts.tol_scale * std::max(1.0, j_cur);
  StageReport rep;
  Vec u_prev, g_prev;
  for (int it = 0; it < opts.max_iters; ++it) {
    rep.iters = it + 1;
    const Mat v = with_col(u);
    const Mat eucl = grad_J(ctx, v).euclidean;
    const Vec g_full = v_perp.transpose() * eucl.col(s - 1);
    const Vec g = g_full - u * u.dot(g_full);
    const double gnorm2 = g.squaredNorm();
    if (std::sqrt(gnorm2) < tol) break;
    double step = 1.0 / std::sqrt(gnorm2);
    if (it > 0) {
      const Vec du = u - u_prev;
      const Vec dg = g - g_prev;
      const double denom = dg.squaredNorm();
      if (denom > 0.0) {
        const double bb = std::abs(du.dot(dg)) / denom;
        if (bb > 0.0 && std::isfinite(bb)) step = bb;
      }
    }
    step = std::clamp(step, 1e-12, 1e3);
    u_prev = u;
    g_prev = g;
    bool accepted = false;
    for (int h = 0; h < opts.max_halvings; ++h) {
      Vec trial = u - step * g;
      trial.normalize();
      const double j_trial = objective_J(ctx, with_col(trial));
      if (j_trial <= j_cur - opts.armijo_c * step * gnorm2) {
        u = trial;
        j_cur = j_trial;
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;
  }
  rep.j_value = j_cur;
  if (report) *report = rep;
  return u;
}

}  // namespace

Mat optimize_incremental(const ObjectiveContext& ctx, int s_max,
                         std::vector<StageReport>* reports, const FullOptOptions& opts) {
  if (s_max > ctx.dy()) throw std::invalid_argument("optimize_incremental: s exceeds dimension");
  const int dy = ctx.dy();
  Mat v(dy, 0);
  for (int s = 1; s <= s_max; ++s) {
    const Mat v_perp = orthonormal_complement(v, dy);
    StageReport rep;
    const Vec u = stage_sphere_descent(ctx, v, v_perp, opts, &rep);
    Mat grown(dy, s);
    if (s > 1) grown.leftCols(s - 1) = v;
    grown.col(s - 1) = v_perp * u;
    v = grown;
    if (reports) reports->push_back(rep);
  }
  return v;
}

ScfState make_scf_state(const ObjectiveContext& ctx, const Mat& v_prev, Rng& rng) {
  if (!ctx.identity_gamma)
    throw std::invalid_argument("scf: requires identity Gamma (whitened problem)");
  ScfState st;
  st.stage_fixed = ctx.a0_bar + a_bar_cols(ctx, v_prev);
  const Mat v_perp = orthonormal_complement(v_prev, ctx.dy());
  Vec u0 = rng.normal_vec(static_cast<int>(v_perp.cols()));
  u0.normalize();
  st.u = u0;
  st.b = b_bar(ctx, v_perp * u0);
  return st;
}

std::pair<Vec, ScfState> scf_step(const ObjectiveContext& ctx, const Mat& v_prev, ScfState state,
                                  Rng& rng) {
  const int dy = ctx.dy();
  const int s = static_cast<int>(v_prev.cols()) + 1;
  const Mat v_perp = orthonormal_complement(v_prev, dy);

  // Linear eigenproblem with the current smoothed B; candidate minimizing J.
  const Mat t_full = state.stage_fixed + state.b;
  const Mat t = v_perp.transpose() * (0.5 * (t_full + t_full.transpose())) * v_perp;
  Eigen::SelfAdjointEigenSolver<Mat> es(t);
  if (es.info() != Eigen::Success) throw std::runtime_error("scf_step: eigensolver failed");

  const auto with_col = [&](const Vec& u) {
    Mat v(dy, s);
    if (s > 1) v.leftCols(s - 1) = v_prev;
    v.col(s - 1) = v_perp * u;
    return v;
  };
  Vec u = es.eigenvectors().col(0);
  double j_best = objective_J(ctx, with_col(u));
  for (int c = 1; c < es.eigenvectors().cols(); ++c) {
    const double j_c = objective_J(ctx, with_col(es.eigenvectors().col(c)));
    if (j_c < j_best) {
      j_best = j_c;
      u = es.eigenvectors().col(c);
    }
  }

  const Mat b_new = b_bar(ctx, v_perp * u);
  const double eps = (state.b - b_new).norm();
  const bool first = state.eps_history.empty();
  const double eps_prev = first ? eps : state.eps_history.back();
  state.eps_history.push_back(eps);

  if (eps < kScfTolerance) {
    state.u = u;
    state.converged = true;
    return {u, state};
  }

  // Perturbation: 20 iterations with neither trigger and no epsilon decrease
  // beyond 1e-4 anywhere in the window.
  bool perturb = false;
  const int k = static_cast<int>(state.eps_history.size()) - 1;
  if (state.iters_since_perturbation >= 20 && state.iters_since_reset >= 20 && k >= 20) {
    perturb = true;
    for (int j = k - 20 + 1; j <= k; ++j) {
      if (state.eps_history[j] < state.eps_history[j - 1] - 1e-4) {
        perturb = false;
        break;
      }
    }
  }
  // Reset: strictly more than 40 iterations since the best epsilon since the
  // last reset (and none in the last 40).
  if (first || eps < state.best_eps_since_reset) {
    state.best_eps_since_reset = eps;
    state.iters_since_best = 0;
  } else {
    ++state.iters_since_best;
  }
  const bool reset = state.iters_since_reset >= 40 && state.iters_since_best > 40;

  if (reset) {
    state.eta = 1.0;
    state.eta_max = std::max(0.01, 0.8 * state.eta_max);
  } else if (perturb) {
    state.eta = 1.0;
  } else if (eps / eps_prev <= 1.01 || first) {
    state.eta = std::min(state.eta_max, 1.1 * state.eta);
  } else {
    state.eta = 0.5 * state.eta;
  }

  if (reset) {
    Vec u_rand = rng.normal_vec(static_cast<int>(v_perp.cols()));
    u_rand.normalize();
    u = u_rand;
    state.b = b_bar(ctx, v_perp * u);
    state.iters_since_reset = 0;
    state.iters_since_perturbation = 0;
    state.best_eps_since_reset = std::numeric_limits<double>::infinity();
    state.iters_since_best = 0;
  } else {
    state.b = (1.0 - state.eta) * state.b + state.eta * b_new;
    ++state.iters_since_reset;
    state.iters_since_perturbation = perturb ? 0 : state.iters_since_perturbation + 1;
  }
  state.u = u;
  return {u, state};
}

Mat optimize_nepv(const ObjectiveContext& ctx, int s_max, Rng& rng,
                  std::vector<StageReport>* reports) {
  if (s_max > ctx.dy()) throw std::invalid_argument("optimize_nepv: s exceeds dimension");
  const int dy = ctx.dy();
  const FullOptOptions fallback_opts;
  Mat v(dy, 0);
  for (int s = 1; s <= s_max; ++s) {
    const Mat v_perp = orthonormal_complement(v, dy);
    StageReport rep;
    ScfState state = make_scf_state(ctx, v, rng);
    Vec u = state.u;
    for (int k = 0; k < kScfMaxIters; ++k) {
      std::tie(u, state) = scf_step(ctx, v, state, rng);
      rep.iters = k + 1;
      if (state.converged) break;
    }
    rep.scf_converged = state.converged;
    if (!state.converged) {
      rep.used_fallback = true;
      u = stage_sphere_descent(ctx, v, v_perp, fallback_opts, nullptr);
    }
    Mat grown(dy, s);
    if (s > 1) grown.leftCols(s - 1) = v;
    grown.col(s - 1) = v_perp * u;
    v = grown;
    rep.j_value = objective_J(ctx, v);
    if (reports) reports->push_back(rep);
  }
  return v;
}

}  // namespace alis
