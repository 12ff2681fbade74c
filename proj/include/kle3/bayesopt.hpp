#pragma once

#include "kle3/controller.hpp"
#include "kle3/gp.hpp"
#include "kle3/record.hpp"

namespace kle3 {

/// Synthetic objective with a known maximizer.
struct ObjectiveFunction {
  std::function<double(const Vec&)> f;
  Vec argmax;
  double max = 0.0;

  double operator()(const Vec& x) const { return f(x); }
};

struct Bump {
  Vec center;
  double width = 0.1;
  double height = 1.0;
};

/// phi(x) = sum_j height_j exp(-|x - c_j|^2 / (2 width_j^2)). The maximizer is found
/// by a dense scan followed by Newton refinement, which is exact for smooth bumps.
inline ObjectiveFunction mixture_objective(std::vector<Bump> bumps, const SearchDomain& domain) {
  require(!bumps.empty(), "mixture objective: need at least one bump");
  for (const auto& b : bumps)
    require(b.center.size() == domain.dim() && b.width > 0.0, "mixture objective: bad bump");
  ObjectiveFunction obj;
  obj.f = [bumps](const Vec& x) {
    double v = 0.0;
    for (const auto& b : bumps) v += b.height * std::exp(-0.5 * (x - b.center).squaredNorm() / (b.width * b.width));
    return v;
  };
  auto grad_hess = [&bumps](const Vec& x, Vec& g, Mat& H) {
    const auto d = x.size();
    g = Vec::Zero(d);
    H = Mat::Zero(d, d);
    for (const auto& b : bumps) {
      const double w2 = b.width * b.width;
      const Vec r = x - b.center;
      const double e = b.height * std::exp(-0.5 * r.squaredNorm() / w2);
      g -= e * r / w2;
      H += e * (r * r.transpose() / (w2 * w2) - Mat::Identity(d, d) / w2);
    }
  };
  // candidates: every bump center plus a coarse grid
  std::vector<Vec> starts;
  for (const auto& b : bumps) starts.push_back(b.center);
  if (domain.dim() <= 2) {
    const Grid g = make_grid(domain, 64);
    const Mat P = g.points();
    for (Eigen::Index j = 0; j < P.cols(); ++j) starts.push_back(P.col(j));
  }
  obj.max = -std::numeric_limits<double>::infinity();
  for (Vec x : starts) {
    domain.clamp(x);
    for (int it = 0; it < 50; ++it) {
      Vec g;
      Mat H;
      grad_hess(x, g, H);
      Vec step = (H.ldlt().vectorD().maxCoeff() < 0.0) ? Vec(-H.ldlt().solve(g)) : Vec(0.01 * g);
      Vec xn = x + step;
      domain.clamp(xn);
      if ((xn - x).norm() < 1e-14) break;
      x = xn;
    }
    const double v = obj.f(x);
    if (v > obj.max) {
      obj.max = v;
      obj.argmax = x;
    }
  }
  return obj;
}

/// Three bumps on the cart-position interval; the global peak is not the closest
/// to the middle of the interval.
inline ObjectiveFunction default_bo_objective(const SearchDomain& domain) {
  require(domain.dim() == 1, "default objective is one-dimensional");
  const double lo = domain.lower()[0], hi = domain.upper()[0], w = hi - lo;
  auto at = [&](double frac) { return Vec::Constant(1, lo + frac * w); };
  return mixture_objective({{at(0.25), 0.06 * w, 0.7}, {at(0.5), 0.05 * w, 0.45}, {at(0.78), 0.06 * w, 1.0}}, domain);
}

struct GpConfig {
  double amplitude = 1.0;
  double length_scale = 0.15;
  double noise_variance = 1e-6;
};

inline GaussianProcess make_gp(const GpConfig& c, int dim) {
  return GaussianProcess(RbfKernel{c.amplitude, Vec::Constant(dim, c.length_scale)}, c.noise_variance);
}

struct UcbSearchOptions {
  int starts = 32;
  int iterations = 100;
};

/// Multi-start projected gradient ascent on UCB with per-start adaptive steps.
inline Vec maximize_ucb(const GaussianProcess& gp, double kappa, const SearchDomain& domain,
                        const UcbSearchOptions& opts, Rng& rng) {
  const Mat starts = uniform_samples(domain, opts.starts, rng);
  auto value = [&](const Vec& x) { return ucb(gp, x, kappa)[0]; };
  Vec best = starts.col(0);
  double best_v = -std::numeric_limits<double>::infinity();
  const double scale = (domain.upper() - domain.lower()).maxCoeff();
  for (Eigen::Index s = 0; s < starts.cols(); ++s) {
    Vec x = starts.col(s);
    double v = value(x);
    double step = 0.05 * scale;
    for (int it = 0; it < opts.iterations && step > 1e-9 * scale; ++it) {
      const auto [gm, gs] = gp.gradients(x);
      const Vec g = gm + kappa * gs;
      const double gn = g.norm();
      if (gn < 1e-14) break;
      Vec xn = x + step * g / gn;
      domain.clamp(xn);
      const double vn = value(xn);
      if (vn > v) {
        x = xn;
        v = vn;
        step *= 1.5;
      } else {
        step *= 0.5;
      }
    }
    if (v > best_v) {
      best_v = v;
      best = x;
    }
  }
  return best;
}

/// Running maximum of a sample sequence.
inline std::vector<double> running_max(const std::vector<double>& y) {
  std::vector<double> out(y.size());
  double m = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < y.size(); ++i) out[i] = m = std::max(m, y[i]);
  return out;
}

struct BoTrace {
  std::vector<Vec> x;
  std::vector<double> y;
  std::vector<double> best;
};

/// Bayesian optimization without dynamics: sample wherever UCB is largest.
inline BoTrace bo_baseline(const ObjectiveFunction& phi, const SearchDomain& domain, const Vec& x_first,
                           int evaluations, double kappa, const GpConfig& gpc, const UcbSearchOptions& search, Rng& rng) {
  require(evaluations >= 1, "bo: need at least one evaluation");
  BoTrace tr;
  GaussianProcess gp = make_gp(gpc, domain.dim());
  Vec x = x_first;
  for (int i = 0; i < evaluations; ++i) {
    if (i > 0) x = maximize_ucb(gp, kappa, domain, search, rng);
    const double y = phi(x);
    gp.add(x, y);
    tr.x.push_back(x);
    tr.y.push_back(y);
  }
  tr.best = running_max(tr.y);
  return tr;
}

// ---------------------------------------------------------------------------
// Experiments on a dynamical system
// ---------------------------------------------------------------------------

struct BayesOptConfig {
  double duration = 10.0;
  int sample_every = 10;  // control periods between objective samples
  double kappa = 2.0;
  double softmax_c = 10.0;
  int normalization_samples = 500;
  GpConfig gp;
  UcbSearchOptions search;
  Kle3Config kle3 = [] {
    Kle3Config c;
    c.steps_per_period = 10;
    return c;
  }();
  Mat lqr_Q = Mat::Identity(6, 6);
  Mat lqr_R = Mat::Constant(1, 1, 0.1);
  double domain_lower = -1.0;
  double domain_upper = 1.0;
  int position_index = 0;
  int direct_iterations = 20;
  double direct_step = 40.0;
  bool direct_normalized = false;

  [[nodiscard]] int evaluations() const {
    return static_cast<int>(step_count(duration, kle3.dt) / static_cast<std::size_t>(sample_every)) + 1;
  }
};

/// Plant, planner and LQR shared by every method of the comparison.
struct BoSetup {
  BenchmarkSystem plant;
  ModelPtr planner;
  LqrDesign lqr;
  SearchDomain domain;
};

inline BoSetup make_bo_setup(const BayesOptConfig& cfg, BenchmarkSystem plant) {
  auto planner = linearized_model(*plant.model, plant.x_eq, plant.u_eq);
  auto lqr = design_lqr(*planner, plant.x_eq, plant.u_eq, cfg.lqr_Q, cfg.lqr_R);
  SearchDomain dom(Vec::Constant(1, cfg.domain_lower), Vec::Constant(1, cfg.domain_upper), {cfg.position_index});
  return {std::move(plant), std::move(planner), std::move(lqr), std::move(dom)};
}

/// V with the searched coordinate removed: the pose part of the LQR certificate.
inline double pose_lyapunov(const LyapunovCertificate& cert, const Vec& x, int position_index) {
  Vec e = x - cert.x_eq;
  e[position_index] = 0.0;
  return e.dot(cert.P * e);
}

namespace detail {

/// Book-keeping shared by the three dynamic methods.
struct BoRun {
  const BayesOptConfig& cfg;
  const BoSetup& setup;
  const ObjectiveFunction& phi;
  RunRecord rec;
  std::shared_ptr<GaussianProcess> gp;
  double best = -std::numeric_limits<double>::infinity();

  BoRun(const BayesOptConfig& c, const BoSetup& s, const ObjectiveFunction& f, std::string method, std::uint64_t seed)
      : cfg(c), setup(s), phi(f), gp(std::make_shared<GaussianProcess>(make_gp(c.gp, 1))) {
    rec.method = std::move(method);
    rec.seed = seed;
  }

  [[nodiscard]] Vec searched(const Vec& x) const { return setup.domain.project(x, Vec::Zero(1)); }

  void sample(const Vec& x) {
    const Vec s = searched(x);
    const double y = phi(s);
    best = std::max(best, y);
    gp->add(s, y);
  }

  void log(double t, const Vec& x, const Vec& u, const StepDiagnostics* d) {
    StepRow r;
    r.t = t;
    r.x = x;
    r.u = u;
    r.V = pose_lyapunov(setup.lqr.certificate, x, cfg.position_index);
    r.best_y = best;
    if (d) {
      r.objective = d->objective;
      r.beta = d->beta;
      r.tau = d->tau;
      r.lambda = d->lambda;
    }
    rec.rows.push_back(std::move(r));
  }

  void finish() {
    rec.metrics["final_best"] = best;
    rec.metrics["max_pose_V"] = rec.max_V();
    rec.metrics["samples"] = static_cast<double>(gp->size());
  }
};

inline Vec start_state(const BoSetup& s, double start_position, int position_index) {
  Vec x = s.plant.x_eq;
  x[position_index] = start_position;
  return x;
}

}  // namespace detail

/// KL-E3 with p the softmax of UCB, sampling phi along the executed path.
inline RunRecord kle3_bayesopt(const BoSetup& setup, const ObjectiveFunction& phi, const BayesOptConfig& cfg,
                               double start_position, const SeedTree& seeds) {
  detail::BoRun run(cfg, setup, phi, "kle3", seeds.root());
  Kle3Controller ctl(setup.planner, setup.lqr.policy, setup.domain, cfg.kle3, setup.lqr.certificate);
  Rng sample_rng = seeds.stream("sampling");
  Rng norm_rng = seeds.stream("normalization");
  Vec x = detail::start_state(setup, start_position, cfg.position_index);
  const std::size_t periods = step_count(cfg.duration, cfg.kle3.dt);
  run.sample(x);
  auto target = ucb_target(std::make_shared<const GaussianProcess>(*run.gp), cfg.kappa, cfg.softmax_c, setup.domain,
                           cfg.normalization_samples, norm_rng);
  try {
    std::size_t i = 0;
    while (i < periods) {
      const auto res = ctl.step(*setup.plant.model, x, static_cast<double>(i) * cfg.kle3.dt, target, sample_rng);
      for (std::size_t j = 0; j < res.executed.steps() && i < periods; ++j, ++i) {
        run.log(res.executed.time(j), res.executed.states[j], res.executed.controls[j], &res.diag);
        x = res.executed.states[j + 1];
        if ((i + 1) % static_cast<std::size_t>(cfg.sample_every) == 0) {
          run.sample(x);
          target = ucb_target(std::make_shared<const GaussianProcess>(*run.gp), cfg.kappa, cfg.softmax_c,
                              setup.domain, cfg.normalization_samples, norm_rng);
        }
      }
    }
  } catch (const Error& e) {
    run.rec.aborted = true;
    run.rec.abort_reason = e.what();
  }
  run.finish();
  return run.rec;
}

/// LQR regulated to the UCB argmax, re-targeted once per sampling period.
inline RunRecord lqr_bayes_baseline(const BoSetup& setup, const ObjectiveFunction& phi, const BayesOptConfig& cfg,
                                    double start_position, const SeedTree& seeds) {
  detail::BoRun run(cfg, setup, phi, "lqr_bayes", seeds.root());
  Rng search_rng = seeds.stream("acquisition");
  Vec x = detail::start_state(setup, start_position, cfg.position_index);
  const std::size_t periods = step_count(cfg.duration, cfg.kle3.dt);
  run.sample(x);
  EquilibriumPolicy pol = setup.lqr.policy;
  try {
    for (std::size_t i = 0; i < periods; ++i) {
      if (i % static_cast<std::size_t>(cfg.sample_every) == 0) {
        Vec ref = setup.plant.x_eq;
        ref[cfg.position_index] = maximize_ucb(*run.gp, cfg.kappa, setup.domain, cfg.search, search_rng)[0];
        pol = setup.lqr.policy.retargeted(ref);
      }
      const double t = static_cast<double>(i) * cfg.kle3.dt;
      const auto tr = simulate_with_corrections(*setup.plant.model, pol, x, t, cfg.kle3.dt, 1, {}, 0, cfg.kle3.forward);
      run.log(t, x, tr.controls.front(), nullptr);
      x = tr.states.back();
      if ((i + 1) % static_cast<std::size_t>(cfg.sample_every) == 0) run.sample(x);
    }
  } catch (const Error& e) {
    run.rec.aborted = true;
    run.rec.abort_reason = e.what();
  }
  run.finish();
  return run.rec;
}

/// First-order shooting on the discretized closed loop
///   x_{k+1} = Ad x_k + Bd v_k,  Ad = I + dt A_cl,  Bd = dt B,
/// for the searched coordinate at the end of the horizon.
class TerminalShooting {
 public:
  TerminalShooting(const Mat& A_cl, const Mat& B, double dt, std::size_t horizon, int coordinate)
      : Ad_(Mat::Identity(A_cl.rows(), A_cl.cols()) + dt * A_cl), Bd_(dt * B), N_(horizon), coord_(coordinate) {
    // sens_[k] = e_c' Ad^(N-1-k) Bd
    sens_.resize(N_);
    Vec row = Vec::Zero(Ad_.rows());
    row[coord_] = 1.0;
    for (std::size_t k = N_; k-- > 0;) {
      sens_[k] = Bd_.transpose() * row;
      row = Ad_.transpose() * row;
    }
    free_ = row;  // e_c' Ad^N
  }

  [[nodiscard]] std::size_t horizon() const { return N_; }

  /// x_bar(t_f) as a function of the deviation x0 - x_eq and the sequence v (m x N).
  [[nodiscard]] double terminal(const Vec& e0, const Mat& v) const {
    double s = free_.dot(e0);
    for (std::size_t k = 0; k < N_; ++k) s += sens_[k].dot(v.col(static_cast<Eigen::Index>(k)));
    return s;
  }

  /// d UCB(x_bar(t_f)) / d v, given dUCB/dx_bar at the terminal point.
  [[nodiscard]] Mat gradient(double ducb) const {
    Mat g(Bd_.cols(), static_cast<Eigen::Index>(N_));
    for (std::size_t k = 0; k < N_; ++k) g.col(static_cast<Eigen::Index>(k)) = ducb * sens_[k];
    return g;
  }

 private:
  Mat Ad_, Bd_;
  std::size_t N_;
  int coord_;
  std::vector<Vec> sens_;
  Vec free_;
};

/// UCB at the clamped terminal cart position and its gradient w.r.t. the sequence.
inline std::pair<double, Mat> terminal_ucb(const GaussianProcess& gp, double kappa, const SearchDomain& domain,
                                           const TerminalShooting& shoot, const Vec& e0, const Vec& x_eq_coord,
                                           const Mat& v) {
  Vec s = Vec::Constant(1, x_eq_coord[0] + shoot.terminal(e0, v));
  const Vec raw = s;
  domain.clamp(s);
  const double val = ucb(gp, s, kappa)[0];
  double d = 0.0;
  if (raw[0] == s[0]) {
    const auto [gm, gs] = gp.gradients(s);
    d = gm[0] + kappa * gs[0];
  }
  return {val, shoot.gradient(d)};
}

/// Per period, ascend UCB(x_bar(t_f)) through the linear planner for a fixed number
/// of steps and apply the first element on top of the stabilizing policy.
inline RunRecord direct_acq_max_baseline(const BoSetup& setup, const ObjectiveFunction& phi, const BayesOptConfig& cfg,
                                         double start_position, const SeedTree& seeds) {
  detail::BoRun run(cfg, setup, phi, "direct_max", seeds.root());
  const auto& pol = setup.lqr.policy;
  const Vec u0 = pol.u_eq;
  const Mat Acl = closed_loop_jacobian(*setup.planner, pol, pol.x_eq, u0);
  const std::size_t N = step_count(cfg.kle3.t_horizon, cfg.kle3.dt);
  const TerminalShooting shoot(Acl, setup.planner->jacobian_u(pol.x_eq), cfg.kle3.dt, N, cfg.position_index);
  const auto m = setup.planner->control_dim();
  Mat v = Mat::Zero(m, static_cast<Eigen::Index>(N));
  Vec x = detail::start_state(setup, start_position, cfg.position_index);
  const Vec eq_coord = Vec::Constant(1, pol.x_eq[cfg.position_index]);
  const std::size_t periods = step_count(cfg.duration, cfg.kle3.dt);
  run.sample(x);
  try {
    for (std::size_t i = 0; i < periods; ++i) {
      const Vec e0 = x - pol.x_eq;
      for (int it = 0; it < cfg.direct_iterations; ++it) {
        const auto [val, g] = terminal_ucb(*run.gp, cfg.kappa, setup.domain, shoot, e0, eq_coord, v);
        const double gn = g.norm();
        if (gn < 1e-14) break;
        v += cfg.direct_normalized ? (cfg.direct_step / gn) * g : cfg.direct_step * g;
      }
      const double t = static_cast<double>(i) * cfg.kle3.dt;
      const std::vector<Vec> delta{v.col(0)};
      const auto tr = simulate_with_corrections(*setup.plant.model, pol, x, t, cfg.kle3.dt, 1, delta, 1,
                                                cfg.kle3.forward);
      run.log(t, x, tr.controls.front(), nullptr);
      x = tr.states.back();
      // receding horizon: shift the sequence
      Mat shifted = Mat::Zero(m, static_cast<Eigen::Index>(N));
      shifted.leftCols(static_cast<Eigen::Index>(N) - 1) = v.rightCols(static_cast<Eigen::Index>(N) - 1);
      v = shifted;
      if ((i + 1) % static_cast<std::size_t>(cfg.sample_every) == 0) run.sample(x);
    }
  } catch (const Error& e) {
    run.rec.aborted = true;
    run.rec.abort_reason = e.what();
  }
  run.finish();
  return run.rec;
}

/// The unconstrained baseline as a run record with the same evaluation budget.
inline RunRecord bo_baseline_record(const BoSetup& setup, const ObjectiveFunction& phi, const BayesOptConfig& cfg,
                                    double start_position, const SeedTree& seeds) {
  Rng rng = seeds.stream("acquisition");
  const auto tr = bo_baseline(phi, setup.domain, Vec::Constant(1, start_position), cfg.evaluations(), cfg.kappa, cfg.gp,
                              cfg.search, rng);
  RunRecord rec;
  rec.method = "bo";
  rec.seed = seeds.root();
  for (std::size_t i = 0; i < tr.y.size(); ++i) {
    StepRow r;
    r.t = static_cast<double>(i) * cfg.sample_every * cfg.kle3.dt;
    r.x = tr.x[i];
    r.u = Vec::Zero(0);
    r.best_y = tr.best[i];
    rec.rows.push_back(std::move(r));
  }
  rec.metrics["final_best"] = tr.best.back();
  rec.metrics["samples"] = static_cast<double>(tr.y.size());
  return rec;
}

}  // namespace kle3
