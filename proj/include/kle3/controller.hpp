#pragma once

#include "kle3/ergodic.hpp"
#include "kle3/policies.hpp"
#include "kle3/spatial.hpp"

#include <optional>

namespace kle3 {

enum class WindowMode { Mpc, TrajOpt, LineSearch };
enum class ObjectiveMode { FullKL, Jensen };
enum class BackwardScheme { Euler, RK4 };

struct Kle3Config {
  double t_horizon = 0.2;
  double dt = 0.01;
  WindowMode window = WindowMode::LineSearch;
  Mat R = Mat::Constant(1, 1, 0.1);
  Mat Sigma = Mat::Constant(1, 1, 0.1);
  int samples = 20;
  ObjectiveMode mode = ObjectiveMode::FullKL;
  double ratio_cap = 1e3;
  double q_floor = kDefaultDensityFloor;
  Integrator forward = Integrator::RK4;
  BackwardScheme backward = BackwardScheme::Euler;
  EtaConvention eta = EtaConvention::Normalized;
  bool use_history = false;
  double history_window = 0.0;  // seconds of executed history kept in q; 0 keeps all
  int steps_per_period = 1;
  bool clamp_to_domain = true;

  void validate(int control_dim, int domain_dim) const {
    require(t_horizon > 0.0 && dt > 0.0 && dt <= t_horizon, "kle3 config: need 0 < dt <= t_horizon");
    require(R.rows() == control_dim && R.cols() == control_dim, "kle3 config: R must be m x m");
    require(Sigma.rows() == domain_dim && Sigma.cols() == domain_dim, "kle3 config: Sigma must be v x v");
    require(samples >= 1, "kle3 config: samples >= 1");
    require(ratio_cap > 0.0 && q_floor > 0.0, "kle3 config: ratio_cap and q_floor must be positive");
    require(steps_per_period >= 1, "kle3 config: steps_per_period >= 1");
    Eigen::LLT<Mat> llt(R);
    require(llt.info() == Eigen::Success, "kle3 config: R must be positive definite");
  }
};

/// Co-state on the planning grid; rho.back() is the terminal condition.
struct AdjointSolution {
  double t0 = 0.0;
  double dt = 0.0;
  std::vector<Vec> rho;
  std::vector<Mat> closed_loop;  // A_cl at every grid state
  ObjectiveMode mode = ObjectiveMode::FullKL;
};

/// d mu / dx at x, with saturated channels contributing nothing.
inline Mat policy_jacobian(const EquilibriumPolicy& policy, const Vec& x) {
  Mat J = policy.jacobian();
  if (policy.clamping()) {
    const Vec raw = policy.unclamped(x);
    const Vec clamped = policy.clamp(raw);
    for (Eigen::Index i = 0; i < raw.size(); ++i)
      if (raw[i] != clamped[i]) J.row(i).setZero();
  }
  return J;
}

/// A_cl = df/dx + df/du dmu/dx
inline Mat closed_loop_jacobian(const TransitionModel& model, const EquilibriumPolicy& policy, const Vec& x,
                                const Vec& u) {
  return model.jacobian_x(x, u) + model.jacobian_u(x) * policy_jacobian(policy, x);
}

/// d xbar / dx for the projection, through the policy for control coordinates.
inline Mat projection_jacobian(const SearchDomain& domain, const EquilibriumPolicy& policy, const Vec& x) {
  const auto n = x.size();
  Mat J = Mat::Zero(domain.dim(), n);
  Mat dmu;
  for (int d = 0; d < domain.dim(); ++d) {
    const int i = domain.indices()[static_cast<std::size_t>(d)];
    if (i < n) {
      J(d, i) = 1.0;
    } else {
      if (dmu.size() == 0) dmu = policy_jacobian(policy, x);
      J.row(d) = dmu.row(i - n);
    }
  }
  return J;
}

/// Per-sample derivative of a running term with respect to xbar.
using SampleGradient = std::function<Vec(const Vec& s, const Vec& xbar)>;

struct Forcing {
  std::vector<Vec> terms;  // d(running cost)/dx at every grid state, N + 1 entries
  std::size_t ratio_clips = 0;
};

/// terms_k = J_k' sum_i c_i G(s_i, xbar_k). Coordinates clamped at the domain
/// boundary carry no gradient.
inline Forcing weighted_sample_forcing(const Trajectory& traj, const SearchDomain& domain,
                                       const EquilibriumPolicy& policy, const Mat& S, const Vec& coeffs,
                                       const SampleGradient& G, bool clamp) {
  require(S.cols() == coeffs.size(), "forcing: sample/coefficient count mismatch");
  Forcing out;
  out.terms.reserve(traj.states.size());
  for (std::size_t k = 0; k < traj.states.size(); ++k) {
    const Vec& x = traj.states[k];
    const Vec u = k < traj.controls.size() ? traj.controls[k] : policy(x);
    Vec s_bar = domain.project(x, u);
    const Vec raw = s_bar;
    if (clamp) domain.clamp(s_bar);
    Vec g = Vec::Zero(domain.dim());
    for (Eigen::Index i = 0; i < S.cols(); ++i)
      if (coeffs[i] != 0.0) g += coeffs[i] * G(S.col(i), s_bar);
    for (int d = 0; d < domain.dim(); ++d)
      if (raw[d] != s_bar[d]) g[d] = 0.0;
    out.terms.push_back(projection_jacobian(domain, policy, x).transpose() * g);
  }
  return out;
}

/// Gradient density of -sum p log q. The p/q ratio is capped, q floored.
inline Forcing kl_forcing(const Trajectory& traj, const SearchDomain& domain, const EquilibriumPolicy& policy,
                          const SigmaKernel& kernel, const Mat& S, const Vec& p, const WeightedPoints& path,
                          double ratio_cap, double q_floor, bool clamp) {
  const Vec q = time_avg_density(path, kernel, S);
  const double W = path.total_weight();
  Vec c(S.cols());
  std::size_t clips = 0;
  for (Eigen::Index i = 0; i < S.cols(); ++i) {
    double r = p[i] / std::max(q[i], q_floor);
    if (r > ratio_cap) {
      r = ratio_cap;
      ++clips;
    }
    c[i] = -r / W;
  }
  const SampleGradient G = [&kernel](const Vec& s, const Vec& xb) { return kernel.gradient(s, xb); };
  Forcing f = weighted_sample_forcing(traj, domain, policy, S, c, G, clamp);
  f.ratio_clips = clips;
  return f;
}

/// Gradient density of sum_i p_i ||s_i - xbar||^2_{Sigma^-1}.
inline Forcing jensen_forcing(const Trajectory& traj, const SearchDomain& domain, const EquilibriumPolicy& policy,
                              const SigmaKernel& kernel, const Mat& S, const Vec& p, bool clamp) {
  const SampleGradient G = [&kernel](const Vec& s, const Vec& xb) -> Vec {
    return -2.0 * (kernel.precision() * (s - xb));
  };
  return weighted_sample_forcing(traj, domain, policy, S, p, G, clamp);
}

/// Backward sweep of rhodot = -F - A_cl' rho with rho(t_f) = 0.
/// Euler follows rho_{k} = rho_{k+1} - rhodot(t_{k+1}) dt; the final state carries
/// no weight under left-endpoint quadrature, so its forcing is zero.
inline AdjointSolution adjoint_backward(const Trajectory& traj, const TransitionModel& model,
                                        const EquilibriumPolicy& policy, const Forcing& forcing,
                                        ObjectiveMode mode = ObjectiveMode::FullKL,
                                        BackwardScheme scheme = BackwardScheme::Euler) {
  const std::size_t N = traj.steps();
  require(N >= 1, "adjoint: planned trajectory needs at least one step");
  require(forcing.terms.size() == N + 1, "adjoint: forcing must cover every grid state");
  const auto n = model.state_dim();
  std::vector<Mat> Acl(N + 1);
  for (std::size_t k = 0; k <= N; ++k) {
    const Vec u = k < N ? traj.controls[k] : policy(traj.states[k]);
    Acl[k] = closed_loop_jacobian(model, policy, traj.states[k], u);
  }
  AdjointSolution sol;
  sol.t0 = traj.t0;
  sol.dt = traj.dt;
  sol.mode = mode;
  sol.rho.assign(N + 1, Vec::Zero(n));
  sol.closed_loop = Acl;
  const double dt = traj.dt;
  auto fail_if_bad = [&](std::size_t k) {
    if (!sol.rho[k].allFinite())
      throw AdjointDivergence("adjoint became non-finite at t=" + std::to_string(traj.time(k)), traj.time(k));
  };
  if (scheme == BackwardScheme::Euler) {
    for (std::size_t k = N; k-- > 0;) {
      const Vec& r = sol.rho[k + 1];
      const Vec F = (k + 1 == N) ? Vec::Zero(n) : forcing.terms[k + 1];
      sol.rho[k] = r + dt * (F + Acl[k + 1].transpose() * r);
      fail_if_bad(k);
    }
  } else {
    // integrate in reversed time s = t_f - t: drho/ds = F + A' rho
    auto rhs = [&](std::size_t k, double frac, const Vec& r) -> Vec {
      // linear interpolation between grid k+1 (frac = 0) and k (frac = 1)
      const Mat A = (1.0 - frac) * Acl[k + 1] + frac * Acl[k];
      const Vec F = (1.0 - frac) * forcing.terms[k + 1] + frac * forcing.terms[k];
      return F + A.transpose() * r;
    };
    for (std::size_t k = N; k-- > 0;) {
      const Vec& r = sol.rho[k + 1];
      const Vec k1 = rhs(k, 0.0, r);
      const Vec k2 = rhs(k, 0.5, r + 0.5 * dt * k1);
      const Vec k3 = rhs(k, 0.5, r + 0.5 * dt * k2);
      const Vec k4 = rhs(k, 1.0, r + dt * k3);
      sol.rho[k] = r + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
      fail_if_bad(k);
    }
  }
  return sol;
}

/// Mean co-state seen by a correction held over [t_k, t_k + dt] when the rollout is
/// integrated continuously: (1/dt) int_0^dt exp(A' s) ds rho_k, to second order.
/// With Euler rollouts rho_k is already the exact discrete sensitivity.
inline Vec hold_costate(const Vec& rho, const Mat& Acl, double dt, Integrator forward) {
  if (forward == Integrator::Euler) return rho;
  const Vec a = Acl.transpose() * rho;
  return rho + 0.5 * dt * a + dt * dt / 6.0 * (Acl.transpose() * a);
}

/// rho' (f2 - f1)
inline double mode_insertion_gradient(const Vec& rho, const Vec& f1, const Vec& f2) {
  require(rho.size() == f1.size() && f1.size() == f2.size(), "mode insertion gradient: dimension mismatch");
  return rho.dot(f2 - f1);
}

/// delta mu* = -R^-1 h(x)' rho
inline Vec exploratory_correction(const Vec& rho, const Mat& h, const Mat& R) {
  require(h.rows() == rho.size() && R.rows() == h.cols(), "exploratory correction: dimension mismatch");
  return -R.ldlt().solve(h.transpose() * rho);
}

/// Plant or planner stepped with u_k = mu(x) + delta_k held over [t_k, t_k+1); mu is
/// re-evaluated on the measured state at every integrator stage.
inline Trajectory simulate_with_corrections(const TransitionModel& model, const EquilibriumPolicy& policy,
                                            const Vec& x0, double t0, double dt, std::size_t steps,
                                            const std::vector<Vec>& delta, std::size_t window_steps,
                                            Integrator integrator, double blowup_bound = 1e6) {
  Trajectory traj;
  traj.t0 = t0;
  traj.dt = dt;
  traj.states.reserve(steps + 1);
  traj.controls.reserve(steps);
  traj.states.push_back(x0);
  Vec x = x0;
  const Vec zero = Vec::Zero(policy.u_eq.size());
  for (std::size_t k = 0; k < steps; ++k) {
    const Vec& d = (k < window_steps && k < delta.size()) ? delta[k] : zero;
    const ControlLaw law = [&policy, &d](double, const Vec& y) -> Vec { return policy(y) + d; };
    const double t = traj.time(k);
    traj.controls.push_back(law(t, x));
    x = integrate_step(model, law, x, t, dt, integrator);
    if (!x.allFinite() || x.lpNorm<Eigen::Infinity>() > blowup_bound)
      throw DivergenceError("rollout of '" + model.name() + "' diverged at t=" + std::to_string(t + dt), t + dt);
    traj.states.push_back(x);
  }
  return traj;
}

struct StepDiagnostics {
  double t = 0.0;
  double objective = 0.0;          // D before the switch
  double objective_switched = 0.0; // re-simulated D with the accepted window
  double predicted_descent = 0.0;  // sum over the window of MIG dt
  double beta = 0.0;
  double tau = 0.0;
  double lambda = 0.0;
  bool no_descent = false;
  int line_search_iterations = 0;
  double max_correction = 0.0;
  std::size_t ratio_clips = 0;
  std::size_t clamp_events = 0;
};

/// Everything computed for one replanning instant.
struct Plan {
  Trajectory nominal;   // planning-model rollout under mu
  Trajectory switched;  // same with the accepted exploratory window
  Mat samples;
  Vec p;
  AdjointSolution adjoint;
  std::vector<Vec> correction;  // delta mu* on the grid, N entries
  std::vector<double> mig;      // mode insertion gradient at each grid time
  std::size_t window_steps = 0;
  StepDiagnostics diag;
};

struct StepResult {
  Trajectory executed;
  StepDiagnostics diag;
};

/// beta = max over the window of grad V . h delta mu* (= -grad V . h R^-1 h' rho).
inline double window_beta(const LyapunovCertificate& cert, const TransitionModel& model, const Trajectory& traj,
                          const std::vector<Vec>& correction, std::size_t window_steps) {
  double beta = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < window_steps && k < correction.size(); ++k) {
    const Vec& x = traj.states[k];
    beta = std::max(beta, cert.gradient(x).dot(model.actuation(x) * correction[k]));
  }
  return window_steps == 0 ? 0.0 : beta;
}

class Kle3Controller {
 public:
  Kle3Controller(ModelPtr planning_model, EquilibriumPolicy policy, SearchDomain domain, Kle3Config config,
                 std::optional<LyapunovCertificate> certificate = std::nullopt)
      : model_(std::move(planning_model)),
        policy_(std::move(policy)),
        domain_(std::move(domain)),
        cfg_(std::move(config)),
        kernel_(cfg_.Sigma, cfg_.eta),
        cert_(std::move(certificate)) {
    require(model_ != nullptr, "Kle3Controller: null planning model");
    cfg_.validate(model_->control_dim(), domain_.dim());
    require(policy_.K.rows() == model_->control_dim() && policy_.K.cols() == model_->state_dim(),
            "Kle3Controller: policy gain shape");
  }

  [[nodiscard]] const Kle3Config& config() const { return cfg_; }
  [[nodiscard]] const SearchDomain& domain() const { return domain_; }
  [[nodiscard]] const EquilibriumPolicy& policy() const { return policy_; }
  [[nodiscard]] const TransitionModel& planning_model() const { return *model_; }
  [[nodiscard]] const SigmaKernel& kernel() const { return kernel_; }
  [[nodiscard]] const WeightedPoints& history() const { return history_; }
  [[nodiscard]] std::size_t horizon_steps() const { return step_count(cfg_.t_horizon, cfg_.dt); }

  void set_policy(EquilibriumPolicy policy) { policy_ = std::move(policy); }
  void reset_history() { history_ = WeightedPoints{}; }

  /// Coverage objective of a planned trajectory against fixed samples, including
  /// executed history when enabled.
  [[nodiscard]] double objective(const Trajectory& traj, const Mat& S, const Vec& p) const {
    return kl_objective(with_history(traj), kernel_, S, p, cfg_.q_floor);
  }

  /// Algorithm 1 up to (not including) execution.
  [[nodiscard]] Plan plan(const Vec& x_hat, double t, const SpatialDistribution& p, Rng& rng) const {
    require(p.domain().dim() == domain_.dim(), "kle3: target distribution lives on a different domain");
    const std::size_t N = horizon_steps();
    Plan pl;
    pl.nominal = simulate_with_corrections(*model_, policy_, x_hat, t, cfg_.dt, N, {}, 0, cfg_.forward);
    pl.samples = uniform_samples(domain_, cfg_.samples, rng);
    pl.p = p.density(pl.samples);
    return finish_plan(std::move(pl));
  }

  /// Variant with caller-supplied samples (deterministic studies).
  [[nodiscard]] Plan plan_with_samples(const Vec& x_hat, double t, const Mat& S, const Vec& p_values) const {
    require(S.rows() == domain_.dim() && S.cols() == p_values.size(), "kle3: sample shape mismatch");
    Plan pl;
    pl.nominal = simulate_with_corrections(*model_, policy_, x_hat, t, cfg_.dt, horizon_steps(), {}, 0, cfg_.forward);
    pl.samples = S;
    pl.p = p_values;
    return finish_plan(std::move(pl));
  }

  /// One receding-horizon period on the plant: mu* inside the window, mu outside.
  StepResult step(const TransitionModel& plant, const Vec& x_hat, double t, const SpatialDistribution& p, Rng& rng) {
    const Plan pl = plan(x_hat, t, p, rng);
    return execute(plant, x_hat, t, pl);
  }

  StepResult execute(const TransitionModel& plant, const Vec& x_hat, double t, const Plan& pl) {
    StepResult out;
    out.diag = pl.diag;
    out.executed = simulate_with_corrections(plant, policy_, x_hat, t, cfg_.dt,
                                             static_cast<std::size_t>(cfg_.steps_per_period), pl.correction,
                                             pl.window_steps, cfg_.forward);
    if (cfg_.use_history) record_history(out.executed);
    return out;
  }

  /// Executed states enter q when history is enabled.
  void record_history(const Trajectory& executed) {
    WeightedPoints pts = project_trajectory(executed, domain_, cfg_.clamp_to_domain);
    history_.append(pts);
    if (cfg_.history_window > 0.0) {
      const auto keep = static_cast<Eigen::Index>(std::llround(cfg_.history_window / cfg_.dt));
      if (history_.size() > keep) {
        history_.points = Mat(history_.points.rightCols(keep));
        history_.weights = Vec(history_.weights.tail(keep));
      }
    }
  }

 private:
  [[nodiscard]] WeightedPoints with_history(const Trajectory& traj) const {
    WeightedPoints path = project_trajectory(traj, domain_, cfg_.clamp_to_domain);
    if (cfg_.use_history && history_.size() > 0) {
      WeightedPoints all = history_;
      all.clamp_events = 0;
      all.append(path);
      return all;
    }
    return path;
  }

  Plan finish_plan(Plan pl) const {
    const std::size_t N = pl.nominal.steps();
    const WeightedPoints path = with_history(pl.nominal);
    pl.diag.t = pl.nominal.t0;
    pl.diag.clamp_events = path.clamp_events;
    pl.diag.objective = kl_objective(path, kernel_, pl.samples, pl.p, cfg_.q_floor);

    Forcing forcing =
        cfg_.mode == ObjectiveMode::FullKL
            ? kl_forcing(pl.nominal, domain_, policy_, kernel_, pl.samples, pl.p, path, cfg_.ratio_cap, cfg_.q_floor,
                         cfg_.clamp_to_domain)
            : jensen_forcing(pl.nominal, domain_, policy_, kernel_, pl.samples, pl.p, cfg_.clamp_to_domain);
    pl.diag.ratio_clips = forcing.ratio_clips;
    pl.adjoint = adjoint_backward(pl.nominal, *model_, policy_, forcing, cfg_.mode, cfg_.backward);

    pl.correction.resize(N);
    pl.mig.resize(N);
    for (std::size_t k = 0; k < N; ++k) {
      const Vec& x = pl.nominal.states[k];
      const Mat h = model_->actuation(x);
      const Vec rho = hold_costate(pl.adjoint.rho[k], pl.adjoint.closed_loop[k], cfg_.dt, cfg_.forward);
      pl.correction[k] = exploratory_correction(rho, h, cfg_.R);
      const Vec& u = pl.nominal.controls[k];
      pl.mig[k] = mode_insertion_gradient(rho, model_->eval(x, u), model_->eval(x, u + pl.correction[k]));
      pl.diag.max_correction = std::max(pl.diag.max_correction, pl.correction[k].norm());
    }

    select_window(pl);

    pl.diag.tau = pl.nominal.t0;
    pl.diag.lambda = static_cast<double>(pl.window_steps) * cfg_.dt;
    pl.diag.predicted_descent = 0.0;
    for (std::size_t k = 0; k < pl.window_steps; ++k) pl.diag.predicted_descent += pl.mig[k] * cfg_.dt;
    if (cert_) pl.diag.beta = window_beta(*cert_, *model_, pl.switched, pl.correction, pl.window_steps);
    return pl;
  }

  Trajectory switched_rollout(const Plan& pl, std::size_t window_steps) const {
    return simulate_with_corrections(*model_, policy_, pl.nominal.states.front(), pl.nominal.t0, cfg_.dt,
                                     pl.nominal.steps(), pl.correction, window_steps, cfg_.forward);
  }

  void select_window(Plan& pl) const {
    const std::size_t N = pl.nominal.steps();
    auto evaluate = [&](std::size_t w) {
      pl.switched = switched_rollout(pl, w);
      pl.diag.objective_switched = objective(pl.switched, pl.samples, pl.p);
      pl.window_steps = w;
    };
    switch (cfg_.window) {
      case WindowMode::Mpc:
        evaluate(1);
        return;
      case WindowMode::TrajOpt:
        evaluate(N);
        return;
      case WindowMode::LineSearch: {
        // lambda halves from t_H, quantized to whole steps
        std::size_t w = N;
        int iters = 0;
        while (true) {
          ++iters;
          evaluate(w);
          if (pl.diag.objective_switched < pl.diag.objective) break;
          if (w == 1) {
            pl.diag.no_descent = true;
            break;
          }
          w = std::max<std::size_t>(1, w / 2);
        }
        pl.diag.line_search_iterations = iters;
        return;
      }
    }
  }

  ModelPtr model_;
  EquilibriumPolicy policy_;
  SearchDomain domain_;
  Kle3Config cfg_;
  SigmaKernel kernel_;
  std::optional<LyapunovCertificate> cert_;
  WeightedPoints history_;
};

// ---------------------------------------------------------------------------
// Attractiveness monitoring
// ---------------------------------------------------------------------------

struct WindowCheck {
  double tau = 0.0;
  double lambda = 0.0;
  double beta = 0.0;
  double worst_margin = 0.0;  // max over post-window times of (V_e - V_ref) - lambda beta
  bool bound_holds = true;
  bool returned_below_pre = false;
  double v_pre = 0.0;
};

struct AttractivenessSummary {
  std::vector<WindowCheck> windows;
  double gamma = 0.0;  // -max grad V . f(x, mu(x)) along the reference
  double max_V = 0.0;
  bool available = false;
  bool all_hold = true;
};

/// Compares an explored trajectory with a paired reference rollout from the same
/// initial state. `window_start` and `window_steps` are grid indices into both.
inline AttractivenessSummary attractiveness_report(const LyapunovCertificate& cert, const TransitionModel& model,
                                                   const EquilibriumPolicy& policy, const Trajectory& explored,
                                                   const Trajectory* reference, std::size_t window_start,
                                                   std::size_t window_steps, double beta,
                                                   double relative_tol = 1e-6) {
  AttractivenessSummary out;
  if (reference == nullptr) return out;
  require(reference->states.size() == explored.states.size(), "attractiveness: reference length mismatch");
  out.available = true;
  double gamma_max = -std::numeric_limits<double>::infinity();
  for (const auto& x : reference->states) {
    gamma_max = std::max(gamma_max, cert.gradient(x).dot(model.eval(x, policy(x))));
    out.max_V = std::max(out.max_V, cert.value(x));
  }
  for (const auto& x : explored.states) out.max_V = std::max(out.max_V, cert.value(x));
  out.gamma = -gamma_max;

  WindowCheck w;
  w.tau = explored.time(window_start);
  w.lambda = static_cast<double>(window_steps) * explored.dt;
  w.beta = beta;
  w.v_pre = cert.value(explored.states[window_start]);
  w.worst_margin = -std::numeric_limits<double>::infinity();
  const double tol = relative_tol * out.max_V;
  for (std::size_t k = window_start + window_steps; k < explored.states.size(); ++k) {
    const double diff = cert.value(explored.states[k]) - cert.value(reference->states[k]);
    w.worst_margin = std::max(w.worst_margin, diff - w.lambda * w.beta);
    if (k > window_start + window_steps && cert.value(explored.states[k]) < w.v_pre) w.returned_below_pre = true;
  }
  w.bound_holds = w.worst_margin <= tol;
  out.all_hold = w.bound_holds;
  out.windows.push_back(w);
  return out;
}

}  // namespace kle3
