#pragma once

#include "kle3/dynamics.hpp"

#include <Eigen/Eigenvalues>

#include <optional>

namespace kle3 {

/// mu(x) = u_eq - K (x - x_eq), optionally clamped to actuator limits.
struct EquilibriumPolicy {
  Mat K;
  Vec x_eq;
  Vec u_eq;
  std::optional<Vec> u_min;
  std::optional<Vec> u_max;

  [[nodiscard]] Vec unclamped(const Vec& x) const { return u_eq - K * (x - x_eq); }
  [[nodiscard]] Vec operator()(const Vec& x) const { return clamp(unclamped(x)); }
  [[nodiscard]] Mat jacobian() const { return -K; }

  [[nodiscard]] Vec clamp(Vec u) const {
    if (u_min) u = u.cwiseMax(*u_min);
    if (u_max) u = u.cwiseMin(*u_max);
    return u;
  }
  [[nodiscard]] bool clamping() const { return u_min.has_value() || u_max.has_value(); }

  [[nodiscard]] ControlLaw as_law() const {
    return [p = *this](double, const Vec& x) { return p(x); };
  }

  /// Same gains regulating to a different reference state.
  [[nodiscard]] EquilibriumPolicy retargeted(const Vec& new_x_eq) const {
    EquilibriumPolicy p = *this;
    p.x_eq = new_x_eq;
    return p;
  }
};

/// V(x) = (x - x_eq)' P (x - x_eq)
struct LyapunovCertificate {
  Mat P;
  Vec x_eq;

  [[nodiscard]] double value(const Vec& x) const {
    const Vec e = x - x_eq;
    return e.dot(P * e);
  }
  [[nodiscard]] Vec gradient(const Vec& x) const { return 2.0 * P * (x - x_eq); }

  [[nodiscard]] double min_eigenvalue() const {
    Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (P + P.transpose()), Eigen::EigenvaluesOnly);
    return es.eigenvalues().minCoeff();
  }
  [[nodiscard]] bool positive_definite() const { return min_eigenvalue() > 0.0; }

  /// Largest eigenvalue of the symmetric part of Acl' P + P Acl; negative means
  /// Vdot < 0 away from x_eq on the linear closed loop.
  [[nodiscard]] double decrease_margin(const Mat& Acl) const {
    const Mat S = Acl.transpose() * P + P * Acl;
    Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (S + S.transpose()), Eigen::EigenvaluesOnly);
    return es.eigenvalues().maxCoeff();
  }
};

/// Solves A' X + X A + Q = 0 via the Kronecker form. Fine for n <= ~20.
inline Mat solve_lyapunov(const Mat& A, const Mat& Q) {
  const Eigen::Index n = A.rows();
  require(A.cols() == n && Q.rows() == n && Q.cols() == n, "solve_lyapunov: dimension mismatch");
  const Mat I = Mat::Identity(n, n);
  Mat L = Mat::Zero(n * n, n * n);
  const Mat At = A.transpose();
  // vec(A' X) = (I kron A') vec(X), vec(X A) = (A' kron I) vec(X)
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) {
      L.block(i * n, j * n, n, n) += I(i, j) * At;
      L.block(i * n, j * n, n, n) += At(i, j) * I;
    }
  const Vec q = Eigen::Map<const Vec>(Q.data(), n * n);
  const Vec x = L.partialPivLu().solve(-q);
  Mat X = Eigen::Map<const Mat>(x.data(), n, n);
  return 0.5 * (X + X.transpose());
}

inline double max_real_eigenvalue(const Mat& A) {
  Eigen::EigenSolver<Mat> es(A, false);
  return es.eigenvalues().real().maxCoeff();
}

inline bool is_hurwitz(const Mat& A) { return max_real_eigenvalue(A) < 0.0; }

/// Bass's method: a gain K0 with A - B K0 Hurwitz, from
/// (A + b I) Z + Z (A + b I)' = 2 B B',  K0 = B' Z^-1.
inline Mat stabilizing_gain(const Mat& A, const Mat& B) {
  const Eigen::Index n = A.rows();
  if (is_hurwitz(A)) return Mat::Zero(B.cols(), n);
  const double beta = std::max(0.0, max_real_eigenvalue(A)) + 1.0;
  const Mat Ab = A + beta * Mat::Identity(n, n);
  // -Ab' form: (-Ab) Z + Z (-Ab)' + 2 B B' = 0  ==  lyapunov with A := -Ab'
  Mat Z = solve_lyapunov(-Ab.transpose(), 2.0 * B * B.transpose());
  Eigen::LDLT<Mat> ldlt(Z);
  if (ldlt.info() != Eigen::Success || ldlt.vectorD().minCoeff() <= 1e-12 * Z.norm())
    Z += 1e-9 * std::max(1.0, Z.norm()) * Mat::Identity(n, n);
  return B.transpose() * Z.inverse();
}

inline Mat care_residual(const Mat& A, const Mat& B, const Mat& Q, const Mat& R, const Mat& P) {
  return A.transpose() * P + P * A - P * B * R.ldlt().solve(B.transpose() * P) + Q;
}

struct LqrResult {
  Mat K;
  Mat P;
  double residual = 0.0;
  int iterations = 0;
};

struct LqrOptions {
  int max_iterations = 200;
  double tolerance = 1e-10;
};

/// Continuous-time LQR by Kleinman-Newton iteration.
inline LqrResult lqr_synthesize(const Mat& A, const Mat& B, const Mat& Q, const Mat& R, const LqrOptions& opts = {}) {
  const Eigen::Index n = A.rows(), m = B.cols();
  require(A.cols() == n && B.rows() == n, "lqr: A/B dimension mismatch");
  require(Q.rows() == n && Q.cols() == n && R.rows() == m && R.cols() == m, "lqr: Q/R dimension mismatch");
  Eigen::LLT<Mat> rchol(R);
  require(rchol.info() == Eigen::Success, "lqr: R must be positive definite");

  Mat K = stabilizing_gain(A, B);
  if (!is_hurwitz(A - B * K)) throw SynthesisError("lqr: could not find an initial stabilizing gain", INFINITY);

  LqrResult out;
  Mat P = Mat::Zero(n, n);
  double res = INFINITY;
  for (int it = 1; it <= opts.max_iterations; ++it) {
    const Mat Acl = A - B * K;
    const Mat Pn = solve_lyapunov(Acl, Q + K.transpose() * R * K);
    const double change = (Pn - P).lpNorm<Eigen::Infinity>();
    P = Pn;
    K = rchol.solve(B.transpose() * P);
    res = care_residual(A, B, Q, R, P).lpNorm<Eigen::Infinity>();
    out.iterations = it;
    if (!P.allFinite()) break;
    if (res < opts.tolerance) break;
    // stalled at roundoff level
    if (it > 2 && change <= 1e-14 * std::max(1.0, P.lpNorm<Eigen::Infinity>()) && res < 1e-8) break;
  }
  if (!(res < 1e-8))
    throw SynthesisError("lqr: Riccati iteration did not converge (residual " + std::to_string(res) + ")", res);
  out.K = K;
  out.P = P;
  out.residual = res;
  return out;
}

struct LqrDesign {
  EquilibriumPolicy policy;
  LyapunovCertificate certificate;
  double residual = 0.0;
};

/// LQR about (x_eq, u_eq) on the linearization of `model`.
inline LqrDesign design_lqr(const TransitionModel& model, const Vec& x_eq, const Vec& u_eq, const Mat& Q, const Mat& R) {
  const auto lin = linearize(model, x_eq, u_eq);
  const auto res = lqr_synthesize(lin.A, lin.B, Q, R);
  return {EquilibriumPolicy{res.K, x_eq, u_eq, std::nullopt, std::nullopt}, LyapunovCertificate{res.P, x_eq},
          res.residual};
}

struct LyapunovSample {
  double t;
  double V;
  double Vdot;
};

struct LyapunovTrace {
  std::vector<LyapunovSample> samples;
  double max_V = 0.0;
  std::vector<double> nonnegative_vdot_times;
};

/// V and Vdot = grad V . f(x, u) along a recorded trajectory. The final state
/// reuses the last recorded control.
inline LyapunovTrace lyapunov_trace(const LyapunovCertificate& cert, const TransitionModel& model,
                                    const Trajectory& traj) {
  require(!traj.states.empty(), "lyapunov_trace: empty trajectory");
  require(traj.states.front().size() == cert.x_eq.size(), "lyapunov_trace: dimension mismatch");
  LyapunovTrace out;
  out.samples.reserve(traj.states.size());
  for (std::size_t k = 0; k < traj.states.size(); ++k) {
    const Vec& x = traj.states[k];
    const double V = cert.value(x);
    double Vdot = 0.0;
    if (!traj.controls.empty()) {
      const Vec& u = traj.controls[std::min(k, traj.controls.size() - 1)];
      Vdot = cert.gradient(x).dot(model.eval(x, u));
    }
    out.samples.push_back({traj.time(k), V, Vdot});
    out.max_V = std::max(out.max_V, V);
    if (Vdot >= 0.0 && V > 0.0) out.nonnegative_vdot_times.push_back(traj.time(k));
  }
  return out;
}

}  // namespace kle3
