#pragma once

#include "kle3/types.hpp"

#include <cmath>
#include <vector>

namespace kle3 {

/// Fully connected tanh network with a linear output layer. Parameters live in
/// one flat vector laid out layer by layer as (W column-major, b).
class Mlp {
 public:
  Mlp() = default;
  explicit Mlp(std::vector<int> sizes) : sizes_(std::move(sizes)) {
    require(sizes_.size() >= 2, "Mlp: need at least input and output sizes");
    for (int s : sizes_) require(s >= 1, "Mlp: layer sizes must be positive");
    Eigen::Index count = 0;
    for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) count += static_cast<Eigen::Index>(sizes_[l + 1]) * (sizes_[l] + 1);
    theta_ = Vec::Zero(count);
  }

  struct Cache {
    std::vector<Mat> activations;  // input, then tanh outputs of each hidden layer
  };

  [[nodiscard]] int input_dim() const { return sizes_.front(); }
  [[nodiscard]] int output_dim() const { return sizes_.back(); }
  [[nodiscard]] Eigen::Index param_count() const { return theta_.size(); }
  [[nodiscard]] const Vec& params() const { return theta_; }
  void set_params(const Vec& theta) {
    require(theta.size() == theta_.size(), "Mlp: parameter count mismatch");
    theta_ = theta;
  }

  /// Weights ~ N(0, 1/fan_in), biases 0.
  void initialize(Rng& rng) {
    std::normal_distribution<double> g(0.0, 1.0);
    Eigen::Index off = 0;
    for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
      const Eigen::Index w = static_cast<Eigen::Index>(sizes_[l + 1]) * sizes_[l];
      const double s = 1.0 / std::sqrt(static_cast<double>(sizes_[l]));
      for (Eigen::Index i = 0; i < w; ++i) theta_[off + i] = s * g(rng);
      off += w;
      theta_.segment(off, sizes_[l + 1]).setZero();
      off += sizes_[l + 1];
    }
  }

  /// One column per example.
  [[nodiscard]] Mat forward(const Mat& X, Cache* cache = nullptr) const {
    require(X.rows() == input_dim(), "Mlp: input dimension mismatch");
    if (cache) cache->activations.assign(1, X);
    Mat a = X;
    Eigen::Index off = 0;
    const std::size_t L = sizes_.size() - 1;
    for (std::size_t l = 0; l < L; ++l) {
      const auto [W, b] = layer(off, l);
      off += static_cast<Eigen::Index>(sizes_[l + 1]) * (sizes_[l] + 1);
      Mat z = W * a;
      z.colwise() += b;
      if (l + 1 == L) return z;
      a = z.array().tanh().matrix();
      if (cache) cache->activations.push_back(a);
    }
    return a;
  }

  /// Gradient of sum(dY .* Y) with respect to the parameters.
  [[nodiscard]] Vec backward(const Cache& cache, const Mat& dY) const {
    const std::size_t L = sizes_.size() - 1;
    require(cache.activations.size() == L, "Mlp: cache does not match the network");
    Vec grad = Vec::Zero(theta_.size());
    std::vector<Eigen::Index> offsets(L);
    Eigen::Index off = 0;
    for (std::size_t l = 0; l < L; ++l) {
      offsets[l] = off;
      off += static_cast<Eigen::Index>(sizes_[l + 1]) * (sizes_[l] + 1);
    }
    Mat delta = dY;
    for (std::size_t l = L; l-- > 0;) {
      const Mat& a = cache.activations[l];
      const Eigen::Index out = sizes_[l + 1], in = sizes_[l];
      Eigen::Map<Mat>(grad.data() + offsets[l], out, in) = delta * a.transpose();
      grad.segment(offsets[l] + out * in, out) = delta.rowwise().sum();
      if (l == 0) break;
      const auto W = layer(offsets[l], l).first;
      delta = ((W.transpose() * delta).array() * (1.0 - a.array().square())).matrix();
    }
    return grad;
  }

 private:
  std::pair<Eigen::Map<const Mat>, Eigen::Map<const Vec>> layer(Eigen::Index off, std::size_t l) const {
    const Eigen::Index out = sizes_[l + 1], in = sizes_[l];
    return {Eigen::Map<const Mat>(theta_.data() + off, out, in), Eigen::Map<const Vec>(theta_.data() + off + out * in, out)};
  }

  std::vector<int> sizes_;
  Vec theta_;
};

inline double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }
inline double sigmoid(double z) {
  return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

enum class OptimizerKind { Adam, Sgd };

/// First-order optimizer on a flat parameter vector (descent on a loss).
class Optimizer {
 public:
  explicit Optimizer(OptimizerKind kind = OptimizerKind::Adam, double beta1 = 0.9, double beta2 = 0.999,
                     double eps = 1e-8)
      : kind_(kind), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(Vec& theta, const Vec& grad, double lr) {
    require(theta.size() == grad.size(), "optimizer: gradient size mismatch");
    if (kind_ == OptimizerKind::Sgd) {
      theta -= lr * grad;
      return;
    }
    if (m_.size() != theta.size()) {
      m_ = Vec::Zero(theta.size());
      v_ = Vec::Zero(theta.size());
      t_ = 0;
    }
    ++t_;
    m_ = beta1_ * m_ + (1.0 - beta1_) * grad;
    v_ = beta2_ * v_ + (1.0 - beta2_) * grad.cwiseProduct(grad);
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    theta.array() -= lr * (m_.array() / c1) / ((v_.array() / c2).sqrt() + eps_);
  }

  [[nodiscard]] OptimizerKind kind() const { return kind_; }

 private:
  OptimizerKind kind_;
  double beta1_, beta2_, eps_;
  Vec m_, v_;
  long t_ = 0;
};

}  // namespace kle3
