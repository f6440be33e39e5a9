#include "alis/emulator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <vector>

namespace alis {

namespace {

Mat feature_matrix(const Mat& frequencies, const Vec& phases, const Mat& z) {
  // n_features x n, rows scaled by sqrt(2 / n_features).
  Mat phi = frequencies * z;
  phi.colwise() += phases;
  const double scale = std::sqrt(2.0 / static_cast<double>(frequencies.rows()));
  return scale * phi.array().cos().matrix();
}

Mat ridge_weights(const Mat& phi, const Mat& targets_t, double nugget) {
  // Solve (Phi Phi^T + nugget I) W = Phi Y^T; targets_t is n x s.
  Mat gram = phi * phi.transpose();
  gram.diagonal().array() += nugget;
  Eigen::LLT<Mat> llt(gram);
  if (llt.info() != Eigen::Success) throw std::runtime_error("rff_fit: ridge solve failed");
  return llt.solve(phi * targets_t);
}

Vec median_heuristic_lengthscales(const Mat& z) {
  const int dim = static_cast<int>(z.rows());
  const int n = static_cast<int>(z.cols());
  Vec ls(dim);
  std::vector<double> dists;
  dists.reserve(static_cast<std::size_t>(n) * (n - 1) / 2);
  for (int d = 0; d < dim; ++d) {
    dists.clear();
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) dists.push_back(std::abs(z(d, i) - z(d, j)));
    const double med = dists.empty() ? 1.0 : median(dists);
    ls[d] = med > 1e-12 ? med : 1.0;
  }
  return ls;
}

}  // namespace

RffModel rff_fit(const Mat& xs, const Mat& ys, const RffOptions& opts, Rng& rng) {
  const int n = static_cast<int>(xs.cols());
  if (n < 2) throw std::invalid_argument("rff_fit: needs at least 2 samples");
  if (ys.cols() != n) throw std::invalid_argument("rff_fit: sample count mismatch");
  const int in_dim = static_cast<int>(xs.rows());
  const int out_dim = static_cast<int>(ys.rows());

  RffModel model;
  model.nugget = opts.nugget;
  model.input_mean = xs.rowwise().mean();
  model.output_mean = ys.rowwise().mean();
  Mat xc = xs.colwise() - model.input_mean;
  Mat yc = ys.colwise() - model.output_mean;
  model.input_scale = (xc.cwiseProduct(xc).rowwise().mean()).cwiseSqrt().cwiseMax(1e-12);
  model.output_scale = (yc.cwiseProduct(yc).rowwise().mean()).cwiseSqrt().cwiseMax(1e-12);
  if ((model.input_scale.array() <= 1e-12).all())
    throw std::invalid_argument("rff_fit: degenerate inputs (zero variance everywhere)");
  const Mat zs = model.input_scale.cwiseInverse().asDiagonal() * xc;
  const Mat ts = model.output_scale.cwiseInverse().asDiagonal() * yc;  // s x n

  model.frequencies = rng.normal_mat(opts.n_features, in_dim);
  model.phases = Vec(opts.n_features);
  for (int i = 0; i < opts.n_features; ++i)
    model.phases[i] = 2.0 * std::numbers::pi * rng.uniform();

  const Vec base_ls = median_heuristic_lengthscales(zs);
  double best_mult = 1.0;
  if (opts.tune_lengthscales && n >= 2 * opts.cv_folds) {
    const std::vector<double> grid = {0.25, 0.5, 1.0, 2.0, 4.0};
    double best_mse = std::numeric_limits<double>::infinity();
    for (const double mult : grid) {
      const Mat z_scaled = (mult * base_ls).cwiseInverse().asDiagonal() * zs;
      double mse = 0.0;
      long count = 0;
      for (int fold = 0; fold < opts.cv_folds; ++fold) {
        std::vector<int> train_idx, test_idx;
        for (int j = 0; j < n; ++j) (j % opts.cv_folds == fold ? test_idx : train_idx).push_back(j);
        Mat z_train(in_dim, train_idx.size()), z_test(in_dim, test_idx.size());
        Mat t_train(out_dim, train_idx.size()), t_test(out_dim, test_idx.size());
        for (std::size_t c = 0; c < train_idx.size(); ++c) {
          z_train.col(c) = z_scaled.col(train_idx[c]);
          t_train.col(c) = ts.col(train_idx[c]);
        }
        for (std::size_t c = 0; c < test_idx.size(); ++c) {
          z_test.col(c) = z_scaled.col(test_idx[c]);
          t_test.col(c) = ts.col(test_idx[c]);
        }
        const Mat phi = feature_matrix(model.frequencies, model.phases, z_train);
        const Mat w = ridge_weights(phi, t_train.transpose(), opts.nugget);
        const Mat phi_test = feature_matrix(model.frequencies, model.phases, z_test);
        const Mat pred = w.transpose() * phi_test;
        mse += (pred - t_test).squaredNorm();
        count += t_test.size();
      }
      mse /= static_cast<double>(count);
      if (mse < best_mse) {
        best_mse = mse;
        best_mult = mult;
      }
    }
  }
  model.lengthscales = best_mult * base_ls;

  const Mat z_final = model.lengthscales.cwiseInverse().asDiagonal() * zs;
  const Mat phi = feature_matrix(model.frequencies, model.phases, z_final);
  model.weights = ridge_weights(phi, ts.transpose(), opts.nugget);
  model.output_cov = Mat::Zero(out_dim, out_dim);
  return model;
}

Mat rff_predict_mean(const RffModel& model, const Mat& xs) {
  const Mat xc = xs.colwise() - model.input_mean;
  const Mat z = (model.input_scale.cwiseProduct(model.lengthscales)).cwiseInverse().asDiagonal() * xc;
  const Mat phi = feature_matrix(model.frequencies, model.phases, z);
  Mat pred = model.weights.transpose() * phi;  // s x n
  pred = model.output_scale.asDiagonal() * pred;
  pred.colwise() += model.output_mean;
  return pred;
}

RffPrediction rff_predict(const RffModel& model, const Vec& x) {
  RffPrediction out;
  out.mean = rff_predict_mean(model, x);
  out.cov = model.output_cov;
  return out;
}

}  // namespace alis
