#pragma once

#include "kle3/types.hpp"

#include <unsupported/Eigen/AutoDiff>

#include <cmath>
#include <functional>
#include <memory>
#include <string>

namespace kle3 {

template <class S>
using VecT = Eigen::Matrix<S, Eigen::Dynamic, 1>;
template <class S>
using MatT = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;

/// Constant carrying the same derivative layout as `ref` (zero derivatives), so
/// AutoDiff binary ops never mix empty and sized derivative vectors.
template <class S>
S lift(const S& ref, double v) {
  return ref * 0.0 + v;
}

template <class S>
MatT<S> zeros_like(const S& ref, Eigen::Index rows, Eigen::Index cols) {
  return MatT<S>::Constant(rows, cols, lift(ref, 0.0));
}

/// Control-affine continuous-time model  xdot = f(x,u) = g(x) + h(x) u.
class TransitionModel {
 public:
  virtual ~TransitionModel() = default;

  [[nodiscard]] virtual std::string name() const = 0;
  [[nodiscard]] virtual int state_dim() const = 0;
  [[nodiscard]] virtual int control_dim() const = 0;

  /// Free (unactuated) dynamics g(x).
  [[nodiscard]] virtual Vec drift(const Vec& x) const = 0;
  /// Actuation matrix h(x), n x m.
  [[nodiscard]] virtual Mat actuation(const Vec& x) const = 0;
  /// df/dx at (x,u).
  [[nodiscard]] virtual Mat jacobian_x(const Vec& x, const Vec& u) const = 0;
  /// df/du, which is h(x) for control-affine models.
  [[nodiscard]] Mat jacobian_u(const Vec& x) const { return actuation(x); }

  [[nodiscard]] Vec eval(const Vec& x, const Vec& u) const {
    check_dims(x, u);
    Vec out = drift(x) + actuation(x) * u;
    if (!out.allFinite()) throw NumericOverflow("non-finite dynamics output in model '" + name() + "'");
    return out;
  }

  void check_dims(const Vec& x, const Vec& u) const {
    if (x.size() != state_dim() || u.size() != control_dim())
      throw ContractViolation(name() + ": expected x in R^" + std::to_string(state_dim()) + " and u in R^" +
                              std::to_string(control_dim()) + ", got " + std::to_string(x.size()) + " and " +
                              std::to_string(u.size()));
  }
};

using ModelPtr = std::shared_ptr<const TransitionModel>;

/// CRTP helper: Derived implements scalar-generic `drift_t<S>` and `actuation_t<S>`;
/// the state Jacobian comes from forward-mode AutoDiff.
template <class Derived>
class AutoDiffModel : public TransitionModel {
 public:
  using AD = Eigen::AutoDiffScalar<Eigen::VectorXd>;

  [[nodiscard]] Vec drift(const Vec& x) const override { return self().template drift_t<double>(x); }
  [[nodiscard]] Mat actuation(const Vec& x) const override { return self().template actuation_t<double>(x); }

  [[nodiscard]] Mat jacobian_x(const Vec& x, const Vec& u) const override {
    check_dims(x, u);
    const int n = state_dim();
    VecT<AD> xa(n);
    for (int i = 0; i < n; ++i) xa[i] = AD(x[i], n, i);
    VecT<AD> ua(u.size());
    for (Eigen::Index j = 0; j < u.size(); ++j) ua[j] = AD(u[j], Vec::Zero(n));
    const VecT<AD> f = self().template drift_t<AD>(xa) + self().template actuation_t<AD>(xa) * ua;
    Mat J(n, n);
    for (int i = 0; i < n; ++i) {
      if (f[i].derivatives().size() == 0)
        J.row(i).setZero();
      else
        J.row(i) = f[i].derivatives().transpose();
    }
    return J;
  }

 private:
  const Derived& self() const { return static_cast<const Derived&>(*this); }
};

// ---------------------------------------------------------------------------
// Concrete models
// ---------------------------------------------------------------------------

/// f(x,u) = f0 + A (x - x0) + B (u - u0). Used as the planning model.
class LinearModel final : public TransitionModel {
 public:
  LinearModel(Mat A, Mat B, Vec x0, Vec u0, Vec f0, std::string label = "linear")
      : A_(std::move(A)), B_(std::move(B)), x0_(std::move(x0)), u0_(std::move(u0)), f0_(std::move(f0)),
        label_(std::move(label)) {
    require(A_.rows() == A_.cols(), "LinearModel: A must be square");
    require(B_.rows() == A_.rows(), "LinearModel: B rows must match A");
    require(x0_.size() == A_.rows() && u0_.size() == B_.cols() && f0_.size() == A_.rows(),
            "LinearModel: reference point dimensions");
  }
  LinearModel(Mat A, Mat B)
      : LinearModel(A, B, Vec::Zero(A.rows()), Vec::Zero(B.cols()), Vec::Zero(A.rows())) {}

  [[nodiscard]] std::string name() const override { return label_; }
  [[nodiscard]] int state_dim() const override { return static_cast<int>(A_.rows()); }
  [[nodiscard]] int control_dim() const override { return static_cast<int>(B_.cols()); }
  [[nodiscard]] Vec drift(const Vec& x) const override { return f0_ + A_ * (x - x0_) - B_ * u0_; }
  [[nodiscard]] Mat actuation(const Vec&) const override { return B_; }
  [[nodiscard]] Mat jacobian_x(const Vec&, const Vec&) const override { return A_; }

  [[nodiscard]] const Mat& A() const { return A_; }
  [[nodiscard]] const Mat& B() const { return B_; }

 private:
  Mat A_, B_;
  Vec x0_, u0_, f0_;
  std::string label_;
};

/// Model from user callables; handy for scalar test systems.
class FunctionModel final : public TransitionModel {
 public:
  using DriftFn = std::function<Vec(const Vec&)>;
  using ActFn = std::function<Mat(const Vec&)>;
  using JacFn = std::function<Mat(const Vec&, const Vec&)>;

  FunctionModel(int n, int m, DriftFn g, ActFn h, JacFn jx, std::string label = "function")
      : n_(n), m_(m), g_(std::move(g)), h_(std::move(h)), jx_(std::move(jx)), label_(std::move(label)) {}

  [[nodiscard]] std::string name() const override { return label_; }
  [[nodiscard]] int state_dim() const override { return n_; }
  [[nodiscard]] int control_dim() const override { return m_; }
  [[nodiscard]] Vec drift(const Vec& x) const override { return g_(x); }
  [[nodiscard]] Mat actuation(const Vec& x) const override { return h_(x); }
  [[nodiscard]] Mat jacobian_x(const Vec& x, const Vec& u) const override { return jx_(x, u); }

 private:
  int n_, m_;
  DriftFn g_;
  ActFn h_;
  JacFn jx_;
  std::string label_;
};

/// d-dimensional double integrator; state = (positions, velocities), u = accelerations.
class DoubleIntegrator final : public AutoDiffModel<DoubleIntegrator> {
 public:
  explicit DoubleIntegrator(int dims = 2) : d_(dims) { require(dims >= 1, "DoubleIntegrator: dims >= 1"); }

  [[nodiscard]] std::string name() const override { return "double_integrator_" + std::to_string(d_) + "d"; }
  [[nodiscard]] int state_dim() const override { return 2 * d_; }
  [[nodiscard]] int control_dim() const override { return d_; }

  template <class S>
  [[nodiscard]] VecT<S> drift_t(const VecT<S>& x) const {
    VecT<S> out(2 * d_);
    for (int i = 0; i < d_; ++i) {
      out[i] = x[d_ + i];
      out[d_ + i] = lift(x[0], 0.0);
    }
    return out;
  }
  template <class S>
  [[nodiscard]] MatT<S> actuation_t(const VecT<S>& x) const {
    MatT<S> h = zeros_like(x[0], 2 * d_, d_);
    for (int i = 0; i < d_; ++i) h(d_ + i, i) = lift(x[0], 1.0);
    return h;
  }

 private:
  int d_;
};

struct CartPoleParams {
  double cart_mass = 1.0;
  double pole_mass = 0.1;
  double pole_length = 0.5;
  double gravity = 9.81;
};

/// Classic cart pole, point mass on a massless rod. State (x, theta, xdot, thetadot),
/// theta = 0 upright. Input: horizontal force on the cart.
class CartPole final : public AutoDiffModel<CartPole> {
 public:
  explicit CartPole(CartPoleParams p = {}) : p_(p) {}

  [[nodiscard]] std::string name() const override { return "cart_pole"; }
  [[nodiscard]] int state_dim() const override { return 4; }
  [[nodiscard]] int control_dim() const override { return 1; }
  [[nodiscard]] const CartPoleParams& params() const { return p_; }

  template <class S>
  [[nodiscard]] VecT<S> drift_t(const VecT<S>& x) const {
    using std::cos;
    using std::sin;
    const double M = p_.cart_mass, m = p_.pole_mass, l = p_.pole_length, g = p_.gravity;
    const S c = cos(x[1]), s = sin(x[1]);
    // M(q) = [[M+m, m l c], [m l c, m l^2]]
    const S a = lift(x[0], M + m), b = m * l * c, d = lift(x[0], m * l * l);
    const S det = a * d - b * b;
    // rhs = -C qdot - G
    const S r0 = m * l * s * x[3] * x[3];
    const S r1 = m * g * l * s;
    VecT<S> out(4);
    out[0] = x[2];
    out[1] = x[3];
    out[2] = (d * r0 - b * r1) / det;
    out[3] = (a * r1 - b * r0) / det;
    return out;
  }
  template <class S>
  [[nodiscard]] MatT<S> actuation_t(const VecT<S>& x) const {
    using std::cos;
    const double M = p_.cart_mass, m = p_.pole_mass, l = p_.pole_length;
    const S c = cos(x[1]);
    const S a = lift(x[0], M + m), b = m * l * c, d = lift(x[0], m * l * l);
    const S det = a * d - b * b;
    MatT<S> h = zeros_like(x[0], 4, 1);
    h(2, 0) = d / det;
    h(3, 0) = -b / det;
    return h;
  }

 private:
  CartPoleParams p_;
};

struct CartDoublePendulumParams {
  double cart_mass = 1.0;
  double mass1 = 0.3;
  double mass2 = 0.3;
  double length1 = 0.5;
  double length2 = 0.5;
  double gravity = 9.81;
};

/// Cart with two point-mass links on massless rods.
/// State (x, th1, th2, xdot, th1dot, th2dot), absolute link angles, 0 = upright.
class CartDoublePendulum final : public AutoDiffModel<CartDoublePendulum> {
 public:
  explicit CartDoublePendulum(CartDoublePendulumParams p = {}) : p_(p) {}

  [[nodiscard]] std::string name() const override { return "cart_double_pendulum"; }
  [[nodiscard]] int state_dim() const override { return 6; }
  [[nodiscard]] int control_dim() const override { return 1; }
  [[nodiscard]] const CartDoublePendulumParams& params() const { return p_; }

  template <class S>
  [[nodiscard]] VecT<S> drift_t(const VecT<S>& x) const {
    Eigen::Matrix<S, 3, 3> Minv;
    Eigen::Matrix<S, 3, 1> rhs;
    mass_inverse_and_bias(x, Minv, rhs);
    const Eigen::Matrix<S, 3, 1> qdd = Minv * rhs;
    VecT<S> out(6);
    for (int i = 0; i < 3; ++i) {
      out[i] = x[3 + i];
      out[3 + i] = qdd[i];
    }
    return out;
  }
  template <class S>
  [[nodiscard]] MatT<S> actuation_t(const VecT<S>& x) const {
    Eigen::Matrix<S, 3, 3> Minv;
    Eigen::Matrix<S, 3, 1> rhs;
    mass_inverse_and_bias(x, Minv, rhs);
    MatT<S> h = zeros_like(x[0], 6, 1);
    for (int i = 0; i < 3; ++i) h(3 + i, 0) = Minv(i, 0);
    return h;
  }

 private:
  // rhs = -C(q,qdot) qdot - G(q)
  template <class S>
  void mass_inverse_and_bias(const VecT<S>& x, Eigen::Matrix<S, 3, 3>& Minv, Eigen::Matrix<S, 3, 1>& rhs) const {
    using std::cos;
    using std::sin;
    const double m0 = p_.cart_mass, m1 = p_.mass1, m2 = p_.mass2;
    const double l1 = p_.length1, l2 = p_.length2, g = p_.gravity;
    const S c1 = cos(x[1]), s1 = sin(x[1]);
    const S c2 = cos(x[2]), s2 = sin(x[2]);
    const S c12 = cos(x[1] - x[2]), s12 = sin(x[1] - x[2]);
    const S w1 = x[4], w2 = x[5];

    Eigen::Matrix<S, 3, 3> M;
    M(0, 0) = lift(x[0], m0 + m1 + m2);
    M(0, 1) = (m1 + m2) * l1 * c1;
    M(0, 2) = m2 * l2 * c2;
    M(1, 0) = M(0, 1);
    M(1, 1) = lift(x[0], (m1 + m2) * l1 * l1);
    M(1, 2) = m2 * l1 * l2 * c12;
    M(2, 0) = M(0, 2);
    M(2, 1) = M(1, 2);
    M(2, 2) = lift(x[0], m2 * l2 * l2);

    rhs(0) = (m1 + m2) * l1 * s1 * w1 * w1 + m2 * l2 * s2 * w2 * w2;
    rhs(1) = -m2 * l1 * l2 * s12 * w2 * w2 + (m1 + m2) * g * l1 * s1;
    rhs(2) = m2 * l1 * l2 * s12 * w1 * w1 + m2 * g * l2 * s2;

    // symmetric 3x3 inverse by cofactors
    const S A00 = M(1, 1) * M(2, 2) - M(1, 2) * M(2, 1);
    const S A01 = M(1, 2) * M(2, 0) - M(1, 0) * M(2, 2);
    const S A02 = M(1, 0) * M(2, 1) - M(1, 1) * M(2, 0);
    const S A11 = M(0, 0) * M(2, 2) - M(0, 2) * M(2, 0);
    const S A12 = M(0, 2) * M(1, 0) - M(0, 0) * M(1, 2);
    const S A22 = M(0, 0) * M(1, 1) - M(0, 1) * M(1, 0);
    const S det = M(0, 0) * A00 + M(0, 1) * A01 + M(0, 2) * A02;
    Minv(0, 0) = A00 / det;
    Minv(0, 1) = A01 / det;
    Minv(0, 2) = A02 / det;
    Minv(1, 0) = Minv(0, 1);
    Minv(1, 1) = A11 / det;
    Minv(1, 2) = A12 / det;
    Minv(2, 0) = Minv(0, 2);
    Minv(2, 1) = Minv(1, 2);
    Minv(2, 2) = A22 / det;
  }

  CartDoublePendulumParams p_;
};

struct QuadcopterParams {
  double mass = 0.1366;  // hover command norm of about 0.67 N
  double arm_length = 0.1;
  double inertia_xx = 5e-4;
  double inertia_yy = 5e-4;
  double inertia_zz = 9e-4;
  double yaw_coefficient = 0.02;  // rotor drag torque per unit thrust
  double gravity = 9.81;
};

/// 12-state rigid-body quadcopter in "+" configuration.
/// State: position (3), ZYX Euler angles roll/pitch/yaw (3), world-frame linear
/// velocity (3), body angular rates (3). Inputs: four rotor thrusts.
class Quadcopter final : public AutoDiffModel<Quadcopter> {
 public:
  explicit Quadcopter(QuadcopterParams p = {}) : p_(p) {}

  [[nodiscard]] std::string name() const override { return "quadcopter"; }
  [[nodiscard]] int state_dim() const override { return 12; }
  [[nodiscard]] int control_dim() const override { return 4; }
  [[nodiscard]] const QuadcopterParams& params() const { return p_; }
  [[nodiscard]] double hover_thrust() const { return p_.mass * p_.gravity / 4.0; }

  template <class S>
  [[nodiscard]] VecT<S> drift_t(const VecT<S>& x) const {
    using std::cos;
    using std::sin;
    using std::tan;
    const S phi = x[3], th = x[4];
    const S wp = x[9], wq = x[10], wr = x[11];
    VecT<S> out(12);
    for (int i = 0; i < 3; ++i) out[i] = x[6 + i];
    const S sphi = sin(phi), cphi = cos(phi), tth = tan(th), cth = cos(th);
    out[3] = wp + sphi * tth * wq + cphi * tth * wr;
    out[4] = cphi * wq - sphi * wr;
    out[5] = (sphi * wq + cphi * wr) / cth;
    out[6] = lift(x[0], 0.0);
    out[7] = lift(x[0], 0.0);
    out[8] = lift(x[0], -p_.gravity);
    const double Ix = p_.inertia_xx, Iy = p_.inertia_yy, Iz = p_.inertia_zz;
    out[9] = (Iy - Iz) / Ix * wq * wr;
    out[10] = (Iz - Ix) / Iy * wp * wr;
    out[11] = (Ix - Iy) / Iz * wp * wq;
    return out;
  }

  template <class S>
  [[nodiscard]] MatT<S> actuation_t(const VecT<S>& x) const {
    using std::cos;
    using std::sin;
    const S phi = x[3], th = x[4], psi = x[5];
    // third column of R = Rz(psi) Ry(th) Rx(phi)
    const S zx = cos(psi) * sin(th) * cos(phi) + sin(psi) * sin(phi);
    const S zy = sin(psi) * sin(th) * cos(phi) - cos(psi) * sin(phi);
    const S zz = cos(th) * cos(phi);
    MatT<S> h = zeros_like(x[0], 12, 4);
    const double im = 1.0 / p_.mass;
    const double L = p_.arm_length, k = p_.yaw_coefficient;
    for (int j = 0; j < 4; ++j) {
      h(6, j) = zx * im;
      h(7, j) = zy * im;
      h(8, j) = zz * im;
    }
    // roll torque L (T2 - T4), pitch torque L (T3 - T1), yaw k (T1 - T2 + T3 - T4)
    h(9, 1) = lift(x[0], L / p_.inertia_xx);
    h(9, 3) = lift(x[0], -L / p_.inertia_xx);
    h(10, 0) = lift(x[0], -L / p_.inertia_yy);
    h(10, 2) = lift(x[0], L / p_.inertia_yy);
    h(11, 0) = lift(x[0], k / p_.inertia_zz);
    h(11, 1) = lift(x[0], -k / p_.inertia_zz);
    h(11, 2) = lift(x[0], k / p_.inertia_zz);
    h(11, 3) = lift(x[0], -k / p_.inertia_zz);
    return h;
  }

 private:
  QuadcopterParams p_;
};

// ---------------------------------------------------------------------------
// Benchmarks
// ---------------------------------------------------------------------------

enum class BenchmarkKind { DoubleIntegrator1D, DoubleIntegrator2D, CartPole, CartDoublePendulum, Quadcopter12D };

struct BenchmarkSystem {
  BenchmarkKind kind;
  ModelPtr model;
  Vec x_eq;
  Vec u_eq;
};

inline BenchmarkSystem make_double_integrator(int dims) {
  auto m = std::make_shared<DoubleIntegrator>(dims);
  return {dims == 1 ? BenchmarkKind::DoubleIntegrator1D : BenchmarkKind::DoubleIntegrator2D, m,
          Vec::Zero(2 * dims), Vec::Zero(dims)};
}

inline BenchmarkSystem make_cart_pole(const CartPoleParams& p = {}) {
  return {BenchmarkKind::CartPole, std::make_shared<CartPole>(p), Vec::Zero(4), Vec::Zero(1)};
}

inline BenchmarkSystem make_cart_double_pendulum(const CartDoublePendulumParams& p = {}) {
  return {BenchmarkKind::CartDoublePendulum, std::make_shared<CartDoublePendulum>(p), Vec::Zero(6), Vec::Zero(1)};
}

inline BenchmarkSystem make_quadcopter(const QuadcopterParams& p = {}) {
  auto q = std::make_shared<Quadcopter>(p);
  return {BenchmarkKind::Quadcopter12D, q, Vec::Zero(12), Vec::Constant(4, q->hover_thrust())};
}

// ---------------------------------------------------------------------------
// Linearization and simulation
// ---------------------------------------------------------------------------

struct Linearization {
  Mat A;
  Mat B;
};

inline Linearization linearize(const TransitionModel& model, const Vec& x0, const Vec& u0) {
  model.check_dims(x0, u0);
  require(x0.allFinite() && u0.allFinite(), "linearize: non-finite operating point");
  return {model.jacobian_x(x0, u0), model.jacobian_u(x0)};
}

/// Planning model: the linearization of `model` at (x0, u0) as a standalone model.
inline std::shared_ptr<LinearModel> linearized_model(const TransitionModel& model, const Vec& x0, const Vec& u0) {
  auto lin = linearize(model, x0, u0);
  return std::make_shared<LinearModel>(lin.A, lin.B, x0, u0, model.eval(x0, u0), model.name() + "_linearized");
}

/// Fixed-timestep record. states.size() == controls.size() + 1.
struct Trajectory {
  double t0 = 0.0;
  double dt = 0.0;
  std::vector<Vec> states;
  std::vector<Vec> controls;

  [[nodiscard]] std::size_t steps() const { return controls.size(); }
  [[nodiscard]] double tf() const { return t0 + static_cast<double>(steps()) * dt; }
  [[nodiscard]] double time(std::size_t k) const { return t0 + static_cast<double>(k) * dt; }
  [[nodiscard]] double duration() const { return static_cast<double>(steps()) * dt; }
};

/// u = law(t, x)
using ControlLaw = std::function<Vec(double, const Vec&)>;

enum class Integrator { RK4, Euler };

struct RolloutOptions {
  Integrator integrator = Integrator::RK4;
  double blowup_bound = 1e6;
};

/// One fixed step of xdot = f(x, law(t, x)). The law is re-evaluated at each RK stage.
inline Vec integrate_step(const TransitionModel& model, const ControlLaw& law, const Vec& x, double t, double dt,
                          Integrator integrator = Integrator::RK4) {
  auto f = [&](double s, const Vec& y) { return model.eval(y, law(s, y)); };
  if (integrator == Integrator::Euler) return x + dt * f(t, x);
  const Vec k1 = f(t, x);
  const Vec k2 = f(t + 0.5 * dt, x + 0.5 * dt * k1);
  const Vec k3 = f(t + 0.5 * dt, x + 0.5 * dt * k2);
  const Vec k4 = f(t + dt, x + dt * k3);
  return x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

inline std::size_t step_count(double horizon, double dt) {
  return static_cast<std::size_t>(std::llround(horizon / dt));
}

inline Trajectory rollout(const TransitionModel& model, const ControlLaw& law, const Vec& x0, double t0,
                          double horizon, double dt, const RolloutOptions& opts = {}) {
  require(horizon > 0.0 && dt > 0.0 && dt <= horizon * (1.0 + 1e-12), "rollout: need 0 < dt <= horizon");
  require(x0.size() == model.state_dim(), "rollout: x0 dimension mismatch");
  require(x0.allFinite(), "rollout: non-finite initial state");
  const std::size_t steps = step_count(horizon, dt);
  Trajectory traj;
  traj.t0 = t0;
  traj.dt = dt;
  traj.states.reserve(steps + 1);
  traj.controls.reserve(steps);
  traj.states.push_back(x0);
  Vec x = x0;
  for (std::size_t k = 0; k < steps; ++k) {
    const double t = traj.time(k);
    traj.controls.push_back(law(t, x));
    x = integrate_step(model, law, x, t, dt, opts.integrator);
    if (!x.allFinite() || x.lpNorm<Eigen::Infinity>() > opts.blowup_bound)
      throw DivergenceError("rollout of '" + model.name() + "' diverged at t=" + std::to_string(t + dt), t + dt);
    traj.states.push_back(x);
  }
  return traj;
}

}  // namespace kle3
