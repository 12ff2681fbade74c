#pragma once

#include "kle3/gp.hpp"
#include "kle3/types.hpp"

#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <numbers>

namespace kle3 {

/// Bounded box S^v over selected coordinates of the concatenated (x, u) vector.
/// Indices < state_dim address the state, the rest address the control.
class SearchDomain {
 public:
  SearchDomain(Vec lower, Vec upper, std::vector<int> indices)
      : lower_(std::move(lower)), upper_(std::move(upper)), indices_(std::move(indices)) {
    require(lower_.size() >= 1 && lower_.size() == upper_.size(), "SearchDomain: bound sizes");
    require(static_cast<std::size_t>(lower_.size()) == indices_.size(), "SearchDomain: projection size");
    require((lower_.array() < upper_.array()).all(), "SearchDomain: lower < upper required");
    for (int i : indices_) require(i >= 0, "SearchDomain: negative projection index");
  }

  /// Box over the first coordinates.
  static SearchDomain box(Vec lower, Vec upper) {
    std::vector<int> idx(static_cast<std::size_t>(lower.size()));
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
    return SearchDomain(std::move(lower), std::move(upper), std::move(idx));
  }

  [[nodiscard]] int dim() const { return static_cast<int>(indices_.size()); }
  [[nodiscard]] const Vec& lower() const { return lower_; }
  [[nodiscard]] const Vec& upper() const { return upper_; }
  [[nodiscard]] const std::vector<int>& indices() const { return indices_; }
  [[nodiscard]] double volume() const { return (upper_ - lower_).prod(); }
  [[nodiscard]] Vec center() const { return 0.5 * (lower_ + upper_); }

  [[nodiscard]] bool uses_control(int state_dim) const {
    for (int i : indices_)
      if (i >= state_dim) return true;
    return false;
  }

  /// xbar; `u` may be empty when the projection touches state coordinates only.
  [[nodiscard]] Vec project(const Vec& x, const Vec& u = Vec()) const {
    Vec s(dim());
    const auto n = static_cast<int>(x.size());
    for (int k = 0; k < dim(); ++k) {
      const int i = indices_[static_cast<std::size_t>(k)];
      if (i < n) {
        s[k] = x[i];
      } else {
        require(i - n < u.size(), "SearchDomain: projection needs the control vector");
        s[k] = u[i - n];
      }
    }
    return s;
  }

  [[nodiscard]] bool contains(const Vec& s) const {
    return (s.array() >= lower_.array()).all() && (s.array() <= upper_.array()).all();
  }

  /// Clamps into the box; returns true when a coordinate moved.
  bool clamp(Vec& s) const {
    const Vec c = s.cwiseMax(lower_).cwiseMin(upper_);
    const bool moved = (c - s).cwiseAbs().maxCoeff() > 0.0;
    s = c;
    return moved;
  }

 private:
  Vec lower_, upper_;
  std::vector<int> indices_;
};

/// N i.i.d. uniform points, one per column.
inline Mat uniform_samples(const SearchDomain& domain, int count, Rng& rng) {
  require(count >= 1, "uniform_samples: N >= 1");
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  Mat S(domain.dim(), count);
  const Vec width = domain.upper() - domain.lower();
  for (int j = 0; j < count; ++j)
    for (int d = 0; d < domain.dim(); ++d) S(d, j) = domain.lower()[d] + width[d] * u01(rng);
  return S;
}

/// Scalar field evaluated on a batch of points (columns).
using BatchField = std::function<Vec(const Mat&)>;

enum class Normalization { Analytic, SampleAverage };

/// p(s) = exp(log_unnormalized(s) - log_normalizer).
class SpatialDistribution {
 public:
  SpatialDistribution(SearchDomain domain, BatchField log_unnormalized, double log_normalizer, Normalization mode)
      : domain_(std::move(domain)), log_f_(std::move(log_unnormalized)), log_z_(log_normalizer), mode_(mode) {}

  [[nodiscard]] const SearchDomain& domain() const { return domain_; }
  [[nodiscard]] Normalization normalization() const { return mode_; }
  [[nodiscard]] double log_normalizer() const { return log_z_; }

  [[nodiscard]] Vec density(const Mat& S) const { return (log_f_(S).array() - log_z_).exp().matrix(); }
  [[nodiscard]] double density_at(const Vec& s) const { return density(Mat(s))[0]; }
  [[nodiscard]] Vec log_density(const Mat& S) const { return log_f_(S).array() - log_z_; }

 private:
  SearchDomain domain_;
  BatchField log_f_;
  double log_z_;
  Normalization mode_;
};

inline SpatialDistribution uniform_distribution(const SearchDomain& domain) {
  const double logv = std::log(domain.volume());
  return SpatialDistribution(
      domain, [](const Mat& S) { return Vec::Zero(S.cols()); }, logv, Normalization::Analytic);
}

struct GaussianComponent {
  Vec mean;
  Mat cov;
  double weight = 1.0;
};

/// Normalized Gaussian mixture on R^v (mass outside the box is ignored).
inline SpatialDistribution gaussian_mixture_distribution(const SearchDomain& domain,
                                                         std::vector<GaussianComponent> comps) {
  require(!comps.empty(), "gaussian mixture: need at least one component");
  double wsum = 0.0;
  for (const auto& c : comps) {
    require(c.mean.size() == domain.dim() && c.cov.rows() == domain.dim(), "gaussian mixture: dimension");
    require(c.weight > 0.0, "gaussian mixture: weights must be positive");
    wsum += c.weight;
  }
  struct Prepared {
    Vec mean;
    Mat prec;
    double log_coef;
  };
  auto prepared = std::make_shared<std::vector<Prepared>>();
  const double v = domain.dim();
  for (const auto& c : comps) {
    Eigen::LLT<Mat> llt(c.cov);
    require(llt.info() == Eigen::Success, "gaussian mixture: covariance must be PD");
    const double logdet = 2.0 * Mat(llt.matrixL()).diagonal().array().log().sum();
    prepared->push_back({c.mean, llt.solve(Mat::Identity(c.cov.rows(), c.cov.cols())),
                         std::log(c.weight / wsum) - 0.5 * (v * std::log(2.0 * std::numbers::pi) + logdet)});
  }
  BatchField logf = [prepared](const Mat& S) {
    Vec out(S.cols());
    for (Eigen::Index j = 0; j < S.cols(); ++j) {
      double mx = -std::numeric_limits<double>::infinity();
      std::vector<double> terms;
      terms.reserve(prepared->size());
      for (const auto& c : *prepared) {
        const Vec d = S.col(j) - c.mean;
        terms.push_back(c.log_coef - 0.5 * d.dot(c.prec * d));
        mx = std::max(mx, terms.back());
      }
      double acc = 0.0;
      for (double t : terms) acc += std::exp(t - mx);
      out[j] = mx + std::log(acc);
    }
    return out;
  };
  return SpatialDistribution(domain, logf, 0.0, Normalization::Analytic);
}

inline double log_sum_exp(const Vec& a) {
  const double mx = a.maxCoeff();
  if (!std::isfinite(mx)) return mx;
  return mx + std::log((a.array() - mx).exp().sum());
}

/// Discrete Boltzmann softmax over a finite set of utilities.
inline Vec softmax_weights(const Vec& utilities, double c) {
  require(c > 0.0, "softmax: c must be positive");
  const Vec z = c * utilities;
  const double lse = log_sum_exp(z);
  if (!std::isfinite(lse)) throw DegenerateDistribution("softmax: all utilities are -inf");
  return (z.array() - lse).exp().matrix();
}

/// p(s) = exp(c U(s)) / Z, with Z the Monte-Carlo estimate volume * mean_j exp(c U(s_j)).
inline SpatialDistribution boltzmann_softmax_distribution(BatchField utility, double c, const SearchDomain& domain,
                                                          int normalization_samples, Rng& rng) {
  require(c > 0.0, "boltzmann softmax: c must be positive");
  const Mat S = uniform_samples(domain, normalization_samples, rng);
  const Vec z = c * utility(S);
  if (z.hasNaN()) throw DegenerateDistribution("boltzmann softmax: utility produced NaN");
  const double lse = log_sum_exp(z);
  if (!std::isfinite(lse)) throw DegenerateDistribution("boltzmann softmax: all utilities are -inf");
  const double log_z = lse - std::log(static_cast<double>(normalization_samples)) + std::log(domain.volume());
  BatchField logf = [utility = std::move(utility), c](const Mat& Q) -> Vec { return c * utility(Q); };
  return SpatialDistribution(domain, std::move(logf), log_z, Normalization::SampleAverage);
}

/// Softmax of the GP upper confidence bound. An unfit GP yields the uniform prior.
inline SpatialDistribution ucb_target(std::shared_ptr<const GaussianProcess> gp, double kappa, double c,
                                      const SearchDomain& domain, int normalization_samples, Rng& rng) {
  require(gp != nullptr, "ucb_target: null GP");
  require(gp->input_dim() == domain.dim(), "ucb_target: GP input dimension must match the domain");
  if (gp->empty()) return uniform_distribution(domain);
  BatchField u = [gp, kappa](const Mat& S) { return ucb(*gp, S, kappa); };
  return boltzmann_softmax_distribution(std::move(u), c, domain, normalization_samples, rng);
}

enum class VarianceScalarization { MeanStd, MaxStd };

/// Per-dimension variances (rows) at each column of S -> one scalar utility per column.
inline Vec scalarize_variance(const Mat& variances, VarianceScalarization mode) {
  const Mat sd = variances.cwiseMax(0.0).cwiseSqrt();
  if (mode == VarianceScalarization::MaxStd) return sd.colwise().maxCoeff().transpose();
  return sd.colwise().mean().transpose();
}

/// Softmax of the scalarized model variance. `variance_field` maps domain points
/// to per-dimension variances (one column per point).
inline SpatialDistribution variance_target(std::function<Mat(const Mat&)> variance_field, double c,
                                           const SearchDomain& domain, int normalization_samples, Rng& rng,
                                           VarianceScalarization mode = VarianceScalarization::MeanStd) {
  BatchField u = [field = std::move(variance_field), mode](const Mat& S) { return scalarize_variance(field(S), mode); };
  return boltzmann_softmax_distribution(std::move(u), c, domain, normalization_samples, rng);
}

/// Softmax of an externally supplied Q(x, u). The domain must span state and action.
inline SpatialDistribution q_value_target(BatchField q_function, double c, const SearchDomain& domain, int state_dim,
                                          int control_dim, int normalization_samples, Rng& rng) {
  require(domain.dim() == state_dim + control_dim,
          "q_value_target: domain must span all state and action coordinates (dim n + m)");
  require(domain.uses_control(state_dim), "q_value_target: domain must include action coordinates");
  return boltzmann_softmax_distribution(std::move(q_function), c, domain, normalization_samples, rng);
}

}  // namespace kle3
