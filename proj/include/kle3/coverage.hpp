#pragma once

#include "kle3/controller.hpp"
#include "kle3/record.hpp"

namespace kle3 {

struct CoverageMode {
  Vec center;
  double std_dev = 0.2;
  double weight = 1.0;
};

/// Planar double integrator exploring a bimodal target over its positions.
struct CoverageDemoConfig {
  double duration = 20.0;
  Kle3Config kle3 = [] {
    Kle3Config c;
    c.t_horizon = 0.8;
    c.dt = 0.02;
    c.window = WindowMode::LineSearch;
    c.R = 3.0 * Mat::Identity(2, 2);
    c.Sigma = 0.01 * Mat::Identity(2, 2);
    c.samples = 100;
    c.mode = ObjectiveMode::FullKL;
    c.use_history = true;
    c.history_window = 5.0;
    return c;
  }();
  std::vector<CoverageMode> modes{{(Vec(2) << 0.5, 0.45).finished(), 0.2, 0.55},
                                  {(Vec(2) << -0.5, -0.45).finished(), 0.2, 0.45}};
  double domain_half_width = 1.0;
  double lqr_q = 1.0;
  double lqr_r = 1.0;
  double start_half_width = 0.8;  // start positions uniform in this box, at rest
  int grid_per_axis = 64;
};

struct CoverageSetup {
  BenchmarkSystem plant;
  LqrDesign lqr;
  SearchDomain domain;
  SpatialDistribution target;
  Vec major;  // center of the heaviest mode
  Vec minor;  // center of the lightest mode
};

inline CoverageSetup make_coverage_setup(const CoverageDemoConfig& cfg) {
  require(cfg.modes.size() >= 2, "coverage demo: need at least two modes");
  require(cfg.domain_half_width > 0.0 && cfg.duration > 0.0, "coverage demo: invalid domain or duration");
  auto plant = make_double_integrator(2);
  auto lqr = design_lqr(*plant.model, plant.x_eq, plant.u_eq, cfg.lqr_q * Mat::Identity(4, 4),
                        cfg.lqr_r * Mat::Identity(2, 2));
  SearchDomain dom(Vec::Constant(2, -cfg.domain_half_width), Vec::Constant(2, cfg.domain_half_width), {0, 1});
  std::vector<GaussianComponent> comps;
  for (const auto& m : cfg.modes) {
    require(m.center.size() == 2 && m.std_dev > 0.0, "coverage demo: modes need a 2D center and positive spread");
    comps.push_back({m.center, m.std_dev * m.std_dev * Mat::Identity(2, 2), m.weight});
  }
  auto heavier = [](const CoverageMode& a, const CoverageMode& b) { return a.weight < b.weight; };
  const Vec major = std::max_element(cfg.modes.begin(), cfg.modes.end(), heavier)->center;
  const Vec minor = std::min_element(cfg.modes.begin(), cfg.modes.end(), heavier)->center;
  auto target = gaussian_mixture_distribution(dom, comps);
  return {std::move(plant), std::move(lqr), dom, std::move(target), major, minor};
}

inline Vec coverage_start(const CoverageDemoConfig& cfg, const SeedTree& seeds) {
  Rng rng = seeds.stream("initial_state");
  std::uniform_real_distribution<double> d(-cfg.start_half_width, cfg.start_half_width);
  Vec x = Vec::Zero(4);
  x[0] = d(rng);
  x[1] = d(rng);
  return x;
}

struct CoverageRun {
  RunRecord record;
  Trajectory executed;
};

namespace detail {

inline StepRow coverage_row(double t, const Vec& x, const Vec& u, const LyapunovCertificate& cert) {
  StepRow r;
  r.t = t;
  r.x = x;
  r.u = u;
  r.V = cert.value(x);
  return r;
}

inline void append_executed(Trajectory& all, const Trajectory& piece) {
  if (all.states.empty()) {
    all = piece;
    return;
  }
  all.controls.insert(all.controls.end(), piece.controls.begin(), piece.controls.end());
  all.states.insert(all.states.end(), piece.states.begin() + 1, piece.states.end());
}

}  // namespace detail

inline CoverageRun kle3_coverage(const CoverageSetup& setup, const CoverageDemoConfig& cfg, const SeedTree& seeds) {
  CoverageRun run;
  run.record.method = "kle3";
  run.record.seed = seeds.root();
  Kle3Controller ctl(setup.plant.model, setup.lqr.policy, setup.domain, cfg.kle3, setup.lqr.certificate);
  Rng sampling = seeds.stream("sampling");
  Vec x = coverage_start(cfg, seeds);
  const std::size_t periods = step_count(cfg.duration, cfg.kle3.dt);
  try {
    std::size_t i = 0;
    while (i < periods) {
      const auto res = ctl.step(*setup.plant.model, x, static_cast<double>(i) * cfg.kle3.dt, setup.target, sampling);
      detail::append_executed(run.executed, res.executed);
      for (std::size_t j = 0; j < res.executed.steps() && i < periods; ++j, ++i) {
        StepRow r = detail::coverage_row(res.executed.time(j), res.executed.states[j], res.executed.controls[j],
                                         setup.lqr.certificate);
        r.objective = res.diag.objective;
        r.beta = res.diag.beta;
        r.tau = res.diag.tau;
        r.lambda = res.diag.lambda;
        run.record.rows.push_back(std::move(r));
        x = res.executed.states[j + 1];
      }
    }
  } catch (const Error& e) {
    run.record.aborted = true;
    run.record.abort_reason = e.what();
  }
  return run;
}

/// LQR regulated to the target's highest mode.
inline CoverageRun argmax_coverage(const CoverageSetup& setup, const CoverageDemoConfig& cfg, const SeedTree& seeds) {
  CoverageRun run;
  run.record.method = "lqr_argmax";
  run.record.seed = seeds.root();
  Vec ref = setup.plant.x_eq;
  ref.head(2) = setup.major;
  const auto pol = setup.lqr.policy.retargeted(ref);
  try {
    run.executed = rollout(*setup.plant.model, pol.as_law(), coverage_start(cfg, seeds), 0.0, cfg.duration,
                           cfg.kle3.dt, {cfg.kle3.forward});
    for (std::size_t k = 0; k < run.executed.steps(); ++k)
      run.record.rows.push_back(detail::coverage_row(run.executed.time(k), run.executed.states[k],
                                                     run.executed.controls[k], setup.lqr.certificate));
  } catch (const Error& e) {
    run.record.aborted = true;
    run.record.abort_reason = e.what();
  }
  return run;
}

/// Mass of a gridded density within `radius` of `center`.
inline double mass_within(const GridValues& g, const Vec& center, double radius) {
  const Mat P = g.grid.points();
  double m = 0.0;
  for (Eigen::Index j = 0; j < P.cols(); ++j)
    if ((P.col(j) - center).norm() <= radius) m += g.values[j];
  return m * g.grid.cell_volume();
}

/// Fraction of the Sigma-reconstructed time density within two mode spreads of
/// the major and the minor mode.
inline void add_coverage_metrics(CoverageRun& run, const CoverageSetup& setup, const CoverageDemoConfig& cfg) {
  if (run.executed.steps() == 0) return;
  const SigmaKernel kernel(cfg.kle3.Sigma);
  const auto g = reconstruct_density(project_trajectory(run.executed, setup.domain), setup.domain, kernel,
                                     {ReconstructionMode::Sigma, cfg.grid_per_axis, 20});
  double major_sd = 0.0, minor_sd = 0.0;
  for (const auto& m : cfg.modes) {
    if (m.center == setup.major) major_sd = m.std_dev;
    if (m.center == setup.minor) minor_sd = m.std_dev;
  }
  run.record.metrics["major_mass"] = mass_within(g, setup.major, 2.0 * major_sd);
  run.record.metrics["minor_mass"] = mass_within(g, setup.minor, 2.0 * minor_sd);
  run.record.metrics["max_V"] = run.record.max_V();
}

}  // namespace kle3
