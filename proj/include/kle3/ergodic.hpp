#pragma once

#include "kle3/dynamics.hpp"
#include "kle3/spatial.hpp"

#include <cmath>
#include <numbers>

namespace kle3 {

/// How the Gaussian bump is scaled. Normalized makes q a proper density;
/// Unit drops the normalizer (eta = 1), so psi(s | s) = 1.
enum class EtaConvention { Normalized, Unit };

/// psi(s | xbar) = exp(-0.5 (s - xbar)' Sigma^-1 (s - xbar)) / eta
class SigmaKernel {
 public:
  explicit SigmaKernel(Mat sigma, EtaConvention eta = EtaConvention::Normalized) : sigma_(std::move(sigma)) {
    require(sigma_.rows() >= 1 && sigma_.rows() == sigma_.cols(), "SigmaKernel: Sigma must be square");
    require((sigma_ - sigma_.transpose()).norm() <= 1e-12 * std::max(1.0, sigma_.norm()),
            "SigmaKernel: Sigma must be symmetric");
    Eigen::LLT<Mat> llt(sigma_);
    require(llt.info() == Eigen::Success, "SigmaKernel: Sigma must be positive definite");
    prec_ = llt.solve(Mat::Identity(dim(), dim()));
    const double logdet = 2.0 * Mat(llt.matrixL()).diagonal().array().log().sum();
    log_eta_ = eta == EtaConvention::Normalized ? 0.5 * (dim() * std::log(2.0 * std::numbers::pi) + logdet) : 0.0;
  }

  [[nodiscard]] int dim() const { return static_cast<int>(sigma_.rows()); }
  [[nodiscard]] const Mat& sigma() const { return sigma_; }
  [[nodiscard]] const Mat& precision() const { return prec_; }
  [[nodiscard]] double eta() const { return std::exp(log_eta_); }

  [[nodiscard]] double mahalanobis2(const Vec& s, const Vec& xbar) const {
    const Vec d = s - xbar;
    return d.dot(prec_ * d);
  }
  [[nodiscard]] double operator()(const Vec& s, const Vec& xbar) const {
    return std::exp(-0.5 * mahalanobis2(s, xbar) - log_eta_);
  }
  /// d psi / d xbar
  [[nodiscard]] Vec gradient(const Vec& s, const Vec& xbar) const { return (*this)(s, xbar) * (prec_ * (s - xbar)); }

 private:
  Mat sigma_;
  Mat prec_;
  double log_eta_ = 0.0;
};

/// Projected trajectory points with time weights. q(s) = sum_j w_j psi(s | p_j) / sum_j w_j.
struct WeightedPoints {
  Mat points;  // v x J
  Vec weights;
  std::size_t clamp_events = 0;

  [[nodiscard]] double total_weight() const { return weights.sum(); }
  [[nodiscard]] Eigen::Index size() const { return points.cols(); }

  void append(const WeightedPoints& other) {
    if (other.size() == 0) return;
    if (size() == 0) {
      *this = other;
      return;
    }
    Mat P(points.rows(), size() + other.size());
    P << points, other.points;
    Vec w(weights.size() + other.weights.size());
    w << weights, other.weights;
    points = std::move(P);
    weights = std::move(w);
    clamp_events += other.clamp_events;
  }
};

/// Left-endpoint projection of a trajectory. A single-state trajectory yields that
/// state with unit weight. Points are clamped into the domain when `clamp` is set.
inline WeightedPoints project_trajectory(const Trajectory& traj, const SearchDomain& domain, bool clamp = true) {
  require(!traj.states.empty(), "trajectory must be non-empty");
  WeightedPoints out;
  const std::size_t J = traj.steps() == 0 ? 1 : traj.steps();
  out.points.resize(domain.dim(), static_cast<Eigen::Index>(J));
  out.weights = Vec::Constant(static_cast<Eigen::Index>(J), traj.steps() == 0 ? 1.0 : traj.dt);
  for (std::size_t j = 0; j < J; ++j) {
    Vec s = domain.project(traj.states[j], j < traj.controls.size() ? traj.controls[j] : Vec());
    if (clamp && domain.clamp(s)) ++out.clamp_events;
    out.points.col(static_cast<Eigen::Index>(j)) = s;
  }
  return out;
}

/// q at each column of S.
inline Vec time_avg_density(const WeightedPoints& path, const SigmaKernel& kernel, const Mat& S) {
  require(path.size() >= 1, "time_avg_density: empty path");
  require(S.rows() == kernel.dim() && path.points.rows() == kernel.dim(), "time_avg_density: dimension mismatch");
  const double W = path.total_weight();
  Vec q = Vec::Zero(S.cols());
  for (Eigen::Index i = 0; i < S.cols(); ++i) {
    double acc = 0.0;
    for (Eigen::Index j = 0; j < path.size(); ++j) acc += path.weights[j] * kernel(S.col(i), path.points.col(j));
    q[i] = acc / W;
  }
  return q;
}

inline Vec time_avg_density(const Trajectory& traj, const SearchDomain& domain, const SigmaKernel& kernel,
                            const Mat& S) {
  return time_avg_density(project_trajectory(traj, domain), kernel, S);
}

inline constexpr double kDefaultDensityFloor = 1e-12;

/// -sum_i p_i log max(q_i, floor)
inline double kl_from_values(const Vec& p, const Vec& q, double floor = kDefaultDensityFloor) {
  require(p.size() == q.size() && p.size() >= 1, "kl objective: need N >= 1 matching samples");
  return -(p.array() * q.array().max(floor).log()).sum();
}

inline double kl_objective(const WeightedPoints& path, const SigmaKernel& kernel, const Mat& S, const Vec& p,
                           double floor = kDefaultDensityFloor) {
  return kl_from_values(p, time_avg_density(path, kernel, S), floor);
}

inline double kl_objective(const Trajectory& traj, const SearchDomain& domain, const SigmaKernel& kernel,
                           const Mat& S, const SpatialDistribution& p, double floor = kDefaultDensityFloor) {
  return kl_objective(project_trajectory(traj, domain), kernel, S, p.density(S), floor);
}

/// sum_i p_i sum_j w_j ||s_i - xbar_j||^2_{Sigma^-1}
inline double jensen_objective(const WeightedPoints& path, const SigmaKernel& kernel, const Mat& S, const Vec& p) {
  require(p.size() == S.cols() && p.size() >= 1, "jensen objective: need N >= 1 matching samples");
  double total = 0.0;
  for (Eigen::Index i = 0; i < S.cols(); ++i) {
    double acc = 0.0;
    for (Eigen::Index j = 0; j < path.size(); ++j)
      acc += path.weights[j] * kernel.mahalanobis2(S.col(i), path.points.col(j));
    total += p[i] * acc;
  }
  return total;
}

inline double jensen_objective(const Trajectory& traj, const SearchDomain& domain, const SigmaKernel& kernel,
                               const Mat& S, const SpatialDistribution& p) {
  return jensen_objective(project_trajectory(traj, domain), kernel, S, p.density(S));
}

// ---------------------------------------------------------------------------
// Grids and reconstructions
// ---------------------------------------------------------------------------

/// Cell-centered tensor grid over a box; the first coordinate varies fastest.
struct Grid {
  Vec lower;
  Vec upper;
  std::vector<int> counts;

  [[nodiscard]] int dim() const { return static_cast<int>(counts.size()); }
  [[nodiscard]] Eigen::Index size() const {
    Eigen::Index n = 1;
    for (int c : counts) n *= c;
    return n;
  }
  [[nodiscard]] double cell_volume() const {
    double v = 1.0;
    for (int d = 0; d < dim(); ++d) v *= (upper[d] - lower[d]) / counts[static_cast<std::size_t>(d)];
    return v;
  }
  [[nodiscard]] Mat points() const {
    Mat P(dim(), size());
    for (Eigen::Index idx = 0; idx < size(); ++idx) {
      Eigen::Index r = idx;
      for (int d = 0; d < dim(); ++d) {
        const int c = counts[static_cast<std::size_t>(d)];
        const Eigen::Index i = r % c;
        r /= c;
        P(d, idx) = lower[d] + (static_cast<double>(i) + 0.5) * (upper[d] - lower[d]) / c;
      }
    }
    return P;
  }
};

inline Grid make_grid(const SearchDomain& domain, int per_axis) {
  if (per_axis < 8) throw ContractViolation("reconstruction grid needs at least 8 points per axis");
  return Grid{domain.lower(), domain.upper(), std::vector<int>(static_cast<std::size_t>(domain.dim()), per_axis)};
}

/// Cosine basis on a box, orthonormal under the L2 inner product.
class FourierBasis {
 public:
  FourierBasis(Vec lower, Vec upper, int K) : lower_(std::move(lower)), upper_(std::move(upper)), K_(K) {
    const auto v = lower_.size();
    if (v > 3) throw UnsupportedDimension("Fourier ergodic metric supports v <= 3 (cost grows as K^v)");
    require(v >= 1 && K >= 1, "FourierBasis: need v >= 1 and K >= 1");
    Eigen::Index total = 1;
    for (Eigen::Index d = 0; d < v; ++d) total *= K;
    ks_.resize(v, total);
    for (Eigen::Index idx = 0; idx < total; ++idx) {
      Eigen::Index r = idx;
      for (Eigen::Index d = 0; d < v; ++d) {
        ks_(d, idx) = static_cast<int>(r % K);
        r /= K;
      }
    }
    norms_.resize(total);
    weights_.resize(total);
    for (Eigen::Index idx = 0; idx < total; ++idx) {
      double h2 = 1.0;
      for (Eigen::Index d = 0; d < v; ++d) h2 *= (upper_[d] - lower_[d]) * (ks_(d, idx) == 0 ? 1.0 : 0.5);
      norms_[idx] = std::sqrt(h2);
      const double k2 = ks_.col(idx).cast<double>().squaredNorm();
      weights_[idx] = std::pow(1.0 + k2, -0.5 * (static_cast<double>(v) + 1.0));
    }
  }

  [[nodiscard]] Eigen::Index size() const { return ks_.cols(); }
  [[nodiscard]] int dim() const { return static_cast<int>(lower_.size()); }
  [[nodiscard]] int max_index() const { return K_; }
  [[nodiscard]] const Vec& lambda() const { return weights_; }
  [[nodiscard]] Eigen::VectorXi index(Eigen::Index i) const { return ks_.col(i); }

  /// F_k evaluated at the columns of S -> (basis size) x (S cols)
  [[nodiscard]] Mat evaluate(const Mat& S) const {
    require(S.rows() == dim(), "FourierBasis: dimension mismatch");
    Mat F(size(), S.cols());
    for (Eigen::Index j = 0; j < S.cols(); ++j)
      for (Eigen::Index k = 0; k < size(); ++k) {
        double prod = 1.0 / norms_[k];
        for (int d = 0; d < dim(); ++d)
          prod *= std::cos(ks_(d, k) * std::numbers::pi * (S(d, j) - lower_[d]) / (upper_[d] - lower_[d]));
        F(k, j) = prod;
      }
    return F;
  }

  /// c_k of a weighted path (time average of F_k).
  [[nodiscard]] Vec trajectory_coefficients(const WeightedPoints& path) const {
    return evaluate(path.points) * path.weights / path.total_weight();
  }

  /// p_k by midpoint quadrature of p F_k.
  [[nodiscard]] Vec density_coefficients(const SpatialDistribution& p, int per_axis) const {
    const Grid g{lower_, upper_, std::vector<int>(static_cast<std::size_t>(dim()), per_axis)};
    const Mat P = g.points();
    return evaluate(P) * p.density(P) * g.cell_volume();
  }

 private:
  Vec lower_, upper_;
  int K_;
  Eigen::MatrixXi ks_;
  Vec norms_;
  Vec weights_;
};

/// sum_k Lambda_k (c_k - p_k)^2
inline double fourier_ergodic_metric(const WeightedPoints& path, const SpatialDistribution& p, int K,
                                     int quadrature_per_axis = 64) {
  const auto& dom = p.domain();
  const FourierBasis basis(dom.lower(), dom.upper(), K);
  const Vec c = basis.trajectory_coefficients(path);
  const Vec pk = basis.density_coefficients(p, quadrature_per_axis);
  return (basis.lambda().array() * (c - pk).array().square()).sum();
}

inline double fourier_ergodic_metric(const Trajectory& traj, const SpatialDistribution& p, int K,
                                     int quadrature_per_axis = 64) {
  return fourier_ergodic_metric(project_trajectory(traj, p.domain()), p, K, quadrature_per_axis);
}

enum class ReconstructionMode { Fourier, Sigma, MomentMatched };

struct GridValues {
  Grid grid;
  Vec values;
};

struct ReconstructionOptions {
  ReconstructionMode mode = ReconstructionMode::Sigma;
  int per_axis = 64;
  int fourier_K = 20;
};

/// Density of time spent, rebuilt on a grid from a projected path.
inline GridValues reconstruct_density(const WeightedPoints& path, const SearchDomain& domain,
                                      const SigmaKernel& kernel, const ReconstructionOptions& opts) {
  const Grid g = make_grid(domain, opts.per_axis);
  const Mat P = g.points();
  switch (opts.mode) {
    case ReconstructionMode::Fourier: {
      const FourierBasis basis(domain.lower(), domain.upper(), opts.fourier_K);
      const Vec c = basis.trajectory_coefficients(path);
      return {g, basis.evaluate(P).transpose() * c};
    }
    case ReconstructionMode::Sigma: {
      const SigmaKernel normalized(kernel.sigma(), EtaConvention::Normalized);
      return {g, time_avg_density(path, normalized, P)};
    }
    case ReconstructionMode::MomentMatched: {
      const double W = path.total_weight();
      const Vec mean = path.points * path.weights / W;
      const Mat centered = path.points.colwise() - mean;
      Mat cov = centered * path.weights.asDiagonal() * centered.transpose() / W;
      // a stationary path has zero spread; keep the Gaussian proper
      cov += 1e-9 * Mat::Identity(cov.rows(), cov.cols());
      WeightedPoints single{mean, Vec::Ones(1), 0};
      return {g, time_avg_density(single, SigmaKernel(cov, EtaConvention::Normalized), P)};
    }
  }
  throw ContractViolation("reconstruct_density: unknown mode");
}

/// Target density on the same grid layout, for side-by-side output.
inline GridValues density_on_grid(const SpatialDistribution& p, int per_axis) {
  const Grid g = make_grid(p.domain(), per_axis);
  return {g, p.density(g.points())};
}

}  // namespace kle3
