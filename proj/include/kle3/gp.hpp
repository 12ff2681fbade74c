#pragma once

#include "kle3/types.hpp"

#include <cmath>

namespace kle3 {

struct RbfKernel {
  double amplitude = 1.0;      // prior standard deviation
  Vec length_scales;           // one per input dimension

  [[nodiscard]] double operator()(const Eigen::Ref<const Vec>& a, const Eigen::Ref<const Vec>& b) const {
    const double r2 = ((a - b).array() / length_scales.array()).square().sum();
    return amplitude * amplitude * std::exp(-0.5 * r2);
  }
};

struct GpPrediction {
  Vec mean;
  Vec stddev;
  std::size_t clamped = 0;  // queries whose variance was rounded to zero
};

/// Zero-mean GP regression with fixed hyperparameters.
class GaussianProcess {
 public:
  GaussianProcess(RbfKernel kernel, double noise_variance)
      : kernel_(std::move(kernel)), noise_(noise_variance) {
    require(kernel_.amplitude > 0.0, "GP: amplitude must be positive");
    require(kernel_.length_scales.size() >= 1 && (kernel_.length_scales.array() > 0.0).all(),
            "GP: length scales must be positive");
    require(noise_ >= 0.0, "GP: noise variance must be non-negative");
  }

  [[nodiscard]] int input_dim() const { return static_cast<int>(kernel_.length_scales.size()); }
  [[nodiscard]] std::size_t size() const { return static_cast<std::size_t>(y_.size()); }
  [[nodiscard]] bool empty() const { return y_.size() == 0; }
  [[nodiscard]] const RbfKernel& kernel() const { return kernel_; }
  [[nodiscard]] double noise_variance() const { return noise_; }
  [[nodiscard]] double jitter() const { return jitter_; }
  [[nodiscard]] const Mat& inputs() const { return X_; }
  [[nodiscard]] const Vec& targets() const { return y_; }

  /// X holds one observation per column.
  void fit(const Mat& X, const Vec& y) {
    require(X.cols() == y.size(), "GP fit: input/target count mismatch");
    require(X.rows() == input_dim() || X.cols() == 0, "GP fit: input dimension mismatch");
    X_ = X;
    y_ = y;
    const Eigen::Index n = y.size();
    if (n == 0) return;
    Mat G(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j <= i; ++j) G(i, j) = G(j, i) = kernel_(X_.col(i), X_.col(j));
    G.diagonal().array() += noise_;
    double jitter = 0.0;
    const double scale = kernel_.amplitude * kernel_.amplitude;
    for (int attempt = 0; attempt < 12; ++attempt) {
      Mat Gj = G;
      Gj.diagonal().array() += jitter;
      llt_.compute(Gj);
      if (llt_.info() == Eigen::Success) {
        const Mat Lm = llt_.matrixL();
        const double resid = (Lm * Lm.transpose() - Gj).norm() / Gj.norm();
        if (resid < 1e-8) {
          jitter_ = jitter;
          alpha_ = llt_.solve(y_);
          return;
        }
      }
      jitter = jitter == 0.0 ? 1e-10 * scale : jitter * 10.0;
    }
    throw FitError("GP fit: Gram matrix not positive definite after maximum jitter");
  }

  void add(const Vec& x, double y) {
    Mat X(input_dim(), X_.cols() + 1);
    if (X_.cols() > 0) X.leftCols(X_.cols()) = X_;
    X.col(X_.cols()) = x;
    Vec yy(y_.size() + 1);
    yy.head(y_.size()) = y_;
    yy[y_.size()] = y;
    fit(X, yy);
  }

  /// Posterior at the columns of Q.
  [[nodiscard]] GpPrediction predict(const Mat& Q) const {
    require(Q.rows() == input_dim(), "GP predict: query dimension mismatch");
    const Eigen::Index nq = Q.cols();
    GpPrediction out;
    out.mean = Vec::Zero(nq);
    out.stddev = Vec::Constant(nq, kernel_.amplitude);
    if (empty()) return out;
    const Eigen::Index n = y_.size();
    Mat Ks(n, nq);
    for (Eigen::Index j = 0; j < nq; ++j)
      for (Eigen::Index i = 0; i < n; ++i) Ks(i, j) = kernel_(X_.col(i), Q.col(j));
    out.mean = Ks.transpose() * alpha_;
    const Mat V = llt_.matrixL().solve(Ks);
    const double prior = kernel_.amplitude * kernel_.amplitude;
    for (Eigen::Index j = 0; j < nq; ++j) {
      double var = prior - V.col(j).squaredNorm();
      if (var <= 0.0) {
        var = 0.0;
        ++out.clamped;
      }
      out.stddev[j] = std::sqrt(var);
    }
    return out;
  }

  [[nodiscard]] std::pair<double, double> predict_one(const Vec& q) const {
    const auto p = predict(q);
    return {p.mean[0], p.stddev[0]};
  }

  /// Gradients of posterior mean and standard deviation at a single query.
  [[nodiscard]] std::pair<Vec, Vec> gradients(const Vec& q) const {
    const int d = input_dim();
    if (empty()) return {Vec::Zero(d), Vec::Zero(d)};
    const Eigen::Index n = y_.size();
    Vec ks(n);
    Mat dks(n, d);  // d k(q, x_i) / dq
    const Vec inv_l2 = kernel_.length_scales.array().square().inverse();
    for (Eigen::Index i = 0; i < n; ++i) {
      ks[i] = kernel_(q, X_.col(i));
      dks.row(i) = (-(q - X_.col(i)).array() * inv_l2.array() * ks[i]).transpose();
    }
    const Vec grad_mean = dks.transpose() * alpha_;
    const Vec w = llt_.solve(ks);
    const double var = kernel_.amplitude * kernel_.amplitude - ks.dot(w);
    Vec grad_std = Vec::Zero(d);
    if (var > 1e-300) grad_std = -(dks.transpose() * w) / std::sqrt(var);
    return {grad_mean, grad_std};
  }

 private:
  RbfKernel kernel_;
  double noise_;
  double jitter_ = 0.0;
  Mat X_;
  Vec y_;
  Vec alpha_;
  Eigen::LLT<Mat> llt_;
};

/// UCB(x) = mean + kappa * std
inline Vec ucb(const GaussianProcess& gp, const Mat& Q, double kappa) {
  const auto p = gp.predict(Q);
  return p.mean + kappa * p.stddev;
}

}  // namespace kle3
