#pragma once

#include "kle3/bayesopt.hpp"
#include "kle3/coverage.hpp"
#include "kle3/model_learning.hpp"

#include <json.hpp>

#include <atomic>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

namespace kle3 {

using json = nlohmann::json;

/// Every violation found in a config, reported together.
struct ConfigError : Error {
  explicit ConfigError(std::vector<std::string> v) : Error(join(v)), violations(std::move(v)) {}
  std::vector<std::string> violations;

 private:
  static std::string join(const std::vector<std::string>& v) {
    std::string s = "invalid config:";
    for (const auto& e : v) s += "\n  " + e;
    return s;
  }
};

struct IoError : Error {
  using Error::Error;
};

inline constexpr const char* kOutputRootVariable = "KLE3_OUTPUT_ROOT";

// ---------------------------------------------------------------------------
// Config reading
// ---------------------------------------------------------------------------

/// Typed access to one JSON object. Reads are optional (the target keeps its
/// default when the key is absent); type errors and unknown keys are collected
/// under their field path.
class ConfigReader {
 public:
  ConfigReader(const json& j, std::string path, std::vector<std::string>& errors)
      : j_(j), path_(std::move(path)), errors_(&errors) {
    if (!j_.is_object()) fail_here("expected an object");
  }

  [[nodiscard]] bool has(const std::string& key) const { return j_.is_object() && j_.contains(key); }
  [[nodiscard]] std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  void fail(const std::string& key, const std::string& msg) const { errors_->push_back(field(key) + ": " + msg); }
  void check(bool ok, const std::string& key, const std::string& msg) const {
    if (!ok) fail(key, msg);
  }

  bool get(const std::string& key, double& out) {
    const json* v = take(key);
    if (!v) return false;
    if (!v->is_number()) return type_error(key, "a number");
    out = v->get<double>();
    if (!std::isfinite(out)) return type_error(key, "a finite number");
    return true;
  }
  bool get(const std::string& key, int& out) {
    const json* v = take(key);
    if (!v) return false;
    if (!v->is_number_integer()) return type_error(key, "an integer");
    out = v->get<int>();
    return true;
  }
  bool get(const std::string& key, std::uint64_t& out) {
    const json* v = take(key);
    if (!v) return false;
    if (!v->is_number_integer() || (v->is_number_integer() && !v->is_number_unsigned() && v->get<long long>() < 0))
      return type_error(key, "a non-negative integer");
    out = v->get<std::uint64_t>();
    return true;
  }
  bool get(const std::string& key, bool& out) {
    const json* v = take(key);
    if (!v) return false;
    if (!v->is_boolean()) return type_error(key, "a boolean");
    out = v->get<bool>();
    return true;
  }
  bool get(const std::string& key, std::string& out) {
    const json* v = take(key);
    if (!v) return false;
    if (!v->is_string()) return type_error(key, "a string");
    out = v->get<std::string>();
    return true;
  }
  bool get(const std::string& key, std::vector<int>& out) {
    const json* v = take(key);
    if (!v) return false;
    if (!v->is_array()) return type_error(key, "an array of integers");
    std::vector<int> r;
    for (const auto& e : *v) {
      if (!e.is_number_integer()) return type_error(key, "an array of integers");
      r.push_back(e.get<int>());
    }
    out = std::move(r);
    return true;
  }
  bool get(const std::string& key, std::vector<std::string>& out) {
    const json* v = take(key);
    if (!v) return false;
    if (!v->is_array()) return type_error(key, "an array of strings");
    std::vector<std::string> r;
    for (const auto& e : *v) {
      if (!e.is_string()) return type_error(key, "an array of strings");
      r.push_back(e.get<std::string>());
    }
    out = std::move(r);
    return true;
  }
  /// A number broadcasts to `size` entries; an array must have exactly `size`.
  bool get(const std::string& key, Vec& out, Eigen::Index size) {
    const json* v = take(key);
    if (!v) return false;
    if (v->is_number()) {
      out = Vec::Constant(size, v->get<double>());
      return true;
    }
    if (!v->is_array() || static_cast<Eigen::Index>(v->size()) != size)
      return type_error(key, "a number or an array of " + std::to_string(size) + " numbers");
    Vec r(size);
    for (Eigen::Index i = 0; i < size; ++i) {
      if (!(*v)[static_cast<std::size_t>(i)].is_number())
        return type_error(key, "a number or an array of " + std::to_string(size) + " numbers");
      r[i] = (*v)[static_cast<std::size_t>(i)].get<double>();
    }
    out = std::move(r);
    return true;
  }
  /// Square matrix given as a scalar (times I), a diagonal, or nested rows.
  bool get(const std::string& key, Mat& out, Eigen::Index size) {
    const json* v = take(key);
    if (!v) return false;
    const std::string expect = "a number, a diagonal of " + std::to_string(size) + " or a " + std::to_string(size) +
                               "x" + std::to_string(size) + " matrix";
    if (v->is_number()) {
      out = v->get<double>() * Mat::Identity(size, size);
      return true;
    }
    if (!v->is_array() || static_cast<Eigen::Index>(v->size()) != size) return type_error(key, expect);
    Mat r = Mat::Zero(size, size);
    for (Eigen::Index i = 0; i < size; ++i) {
      const auto& row = (*v)[static_cast<std::size_t>(i)];
      if (row.is_number()) {
        r(i, i) = row.get<double>();
      } else if (row.is_array() && static_cast<Eigen::Index>(row.size()) == size) {
        for (Eigen::Index k = 0; k < size; ++k) {
          if (!row[static_cast<std::size_t>(k)].is_number()) return type_error(key, expect);
          r(i, k) = row[static_cast<std::size_t>(k)].get<double>();
        }
      } else {
        return type_error(key, expect);
      }
    }
    out = std::move(r);
    return true;
  }

  /// Nested object; a missing key yields an empty object.
  ConfigReader child(const std::string& key) {
    const json* v = take(key);
    return ConfigReader(v ? *v : empty(), field(key), *errors_);
  }

  /// Array elements of an array-of-objects field.
  std::vector<ConfigReader> children(const std::string& key) {
    std::vector<ConfigReader> out;
    const json* v = take(key);
    if (!v) return out;
    if (!v->is_array()) {
      type_error(key, "an array of objects");
      return out;
    }
    for (std::size_t i = 0; i < v->size(); ++i)
      out.emplace_back((*v)[i], field(key) + "[" + std::to_string(i) + "]", *errors_);
    return out;
  }

  void reject_unknown() const {
    if (!j_.is_object()) return;
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) errors_->push_back(field(it.key()) + ": unknown key");
  }

 private:
  static const json& empty() {
    static const json e = json::object();
    return e;
  }
  const json* take(const std::string& key) {
    seen_.insert(key);
    if (!j_.is_object() || !j_.contains(key)) return nullptr;
    return &j_.at(key);
  }
  bool type_error(const std::string& key, const std::string& what) {
    fail(key, "expected " + what);
    return false;
  }
  void fail_here(const std::string& msg) const { errors_->push_back((path_.empty() ? "<root>" : path_) + ": " + msg); }

  const json& j_;
  std::string path_;
  std::vector<std::string>* errors_;
  std::set<std::string> seen_;
};

namespace detail {

template <class E>
void read_enum(ConfigReader& r, const std::string& key, E& out, const std::vector<std::pair<std::string, E>>& names) {
  std::string s;
  if (!r.get(key, s)) return;
  for (const auto& [n, e] : names)
    if (n == s) {
      out = e;
      return;
    }
  std::string allowed;
  for (const auto& [n, e] : names) allowed += (allowed.empty() ? "" : ", ") + n;
  r.fail(key, "unknown value '" + s + "' (allowed: " + allowed + ")");
}

inline void read_kle3(ConfigReader r, Kle3Config& c, int m, int v) {
  r.get("t_horizon", c.t_horizon);
  r.get("dt", c.dt);
  read_enum(r, "window", c.window,
            {{"mpc", WindowMode::Mpc}, {"trajopt", WindowMode::TrajOpt}, {"line-search", WindowMode::LineSearch}});
  r.get("R", c.R, m);
  r.get("Sigma", c.Sigma, v);
  r.get("samples", c.samples);
  read_enum(r, "mode", c.mode, {{"full-kl", ObjectiveMode::FullKL}, {"jensen", ObjectiveMode::Jensen}});
  r.get("ratio_cap", c.ratio_cap);
  r.get("q_floor", c.q_floor);
  read_enum(r, "integrator", c.forward, {{"rk4", Integrator::RK4}, {"euler", Integrator::Euler}});
  read_enum(r, "adjoint", c.backward, {{"euler", BackwardScheme::Euler}, {"rk4", BackwardScheme::RK4}});
  r.get("use_history", c.use_history);
  r.get("history_window", c.history_window);
  r.get("steps_per_period", c.steps_per_period);
  r.check(c.t_horizon > 0.0, "t_horizon", "must be positive");
  r.check(c.dt > 0.0 && c.dt <= c.t_horizon, "dt", "must satisfy 0 < dt <= t_horizon");
  r.check(c.samples >= 1, "samples", "must be at least 1");
  r.check(c.ratio_cap > 0.0, "ratio_cap", "must be positive");
  r.check(c.q_floor > 0.0, "q_floor", "must be positive");
  r.check(c.history_window >= 0.0, "history_window", "must be non-negative");
  r.check(c.steps_per_period >= 1, "steps_per_period", "must be at least 1");
  if (c.R.rows() == m) {
    Eigen::LLT<Mat> llt(0.5 * (c.R + c.R.transpose()));
    r.check(llt.info() == Eigen::Success && (c.R - c.R.transpose()).norm() < 1e-12, "R",
            "must be symmetric positive definite");
  }
  if (c.Sigma.rows() == v) {
    Eigen::LLT<Mat> llt(0.5 * (c.Sigma + c.Sigma.transpose()));
    r.check(llt.info() == Eigen::Success && (c.Sigma - c.Sigma.transpose()).norm() < 1e-12, "Sigma",
            "must be symmetric positive definite");
  }
  r.reject_unknown();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Experiment config
// ---------------------------------------------------------------------------

enum class ExperimentKind { CoverageDemo, BayesOpt, ModelLearning, ReconstructFig1 };

inline std::string to_string(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::CoverageDemo: return "coverage-demo";
    case ExperimentKind::BayesOpt: return "bayesopt";
    case ExperimentKind::ModelLearning: return "model-learning";
    case ExperimentKind::ReconstructFig1: return "reconstruct-fig1";
  }
  return "?";
}

struct ReconstructSettings {
  std::string trajectory;  // stored trace to rebuild from
  int per_axis = 64;
  int fourier_K = 20;
};

struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::CoverageDemo;
  std::uint64_t seed = 1;
  int trials = 1;
  int jobs = 1;
  std::string output_dir;
  std::vector<std::string> methods;

  CoverageDemoConfig coverage;
  ReconstructSettings reconstruct;

  BayesOptConfig bayesopt;
  CartDoublePendulumParams pendulum;
  std::vector<Bump> objective;  // empty selects the default three-bump objective
  double start_half_width = 0.8;

  ModelLearningConfig learning;
  QuadcopterParams quadcopter;
  TrainConfig training;
  TrackingConfig tracking;
  CoverageGrid coverage_grid;

  json source;  // the validated input, embedded in every output
};

inline std::vector<std::string> default_methods(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::CoverageDemo: return {"kle3", "lqr_argmax"};
    case ExperimentKind::BayesOpt: return {"kle3", "lqr_bayes", "direct_max", "bo"};
    case ExperimentKind::ModelLearning: return {"KL-E3", "OU-0.1", "OU-0.3", "Normal-0.1"};
    case ExperimentKind::ReconstructFig1: return {"kle3"};
  }
  return {};
}

/// "KL-E3", "LQR" or "<OU|Normal|Uniform>-<scale>".
inline std::optional<ExplorationMethod> parse_exploration_method(const std::string& s) {
  if (s == "KL-E3") return ExplorationMethod::kle3();
  if (s == "LQR") return ExplorationMethod{ExplorationMethod::Kind::None, NoiseKind::OrnsteinUhlenbeck, 0.0};
  const auto dash = s.find('-');
  if (dash == std::string::npos) return std::nullopt;
  const std::string kind = s.substr(0, dash), scale = s.substr(dash + 1);
  NoiseKind k;
  if (kind == "OU") k = NoiseKind::OrnsteinUhlenbeck;
  else if (kind == "Normal") k = NoiseKind::Normal;
  else if (kind == "Uniform") k = NoiseKind::Uniform;
  else return std::nullopt;
  char* end = nullptr;
  const double v = std::strtod(scale.c_str(), &end);
  if (scale.empty() || end != scale.c_str() + scale.size() || !(v >= 0.0)) return std::nullopt;
  return ExplorationMethod::with_noise(k, v);
}

namespace detail {

inline void read_coverage(ConfigReader r, CoverageDemoConfig& c) {
  r.get("duration", c.duration);
  r.get("domain_half_width", c.domain_half_width);
  r.get("lqr_q", c.lqr_q);
  r.get("lqr_r", c.lqr_r);
  r.get("start_half_width", c.start_half_width);
  r.get("grid_per_axis", c.grid_per_axis);
  if (r.has("modes")) {
    std::vector<CoverageMode> modes;
    for (auto m : r.children("modes")) {
      CoverageMode cm;
      cm.center = Vec::Zero(2);
      m.get("center", cm.center, 2);
      m.get("std", cm.std_dev);
      m.get("weight", cm.weight);
      m.check(cm.std_dev > 0.0, "std", "must be positive");
      m.check(cm.weight > 0.0, "weight", "must be positive");
      m.reject_unknown();
      modes.push_back(cm);
    }
    c.modes = std::move(modes);
    r.check(c.modes.size() >= 2, "modes", "need at least two modes");
  }
  read_kle3(r.child("kle3"), c.kle3, 2, 2);
  r.check(c.duration > 0.0, "duration", "must be positive");
  r.check(c.domain_half_width > 0.0, "domain_half_width", "must be positive");
  r.check(c.lqr_q > 0.0, "lqr_q", "must be positive");
  r.check(c.lqr_r > 0.0, "lqr_r", "must be positive");
  r.check(c.start_half_width >= 0.0 && c.start_half_width <= c.domain_half_width, "start_half_width",
          "must lie in [0, domain_half_width]");
  r.check(c.grid_per_axis >= 8, "grid_per_axis", "must be at least 8");
  r.reject_unknown();
}

inline void read_bayesopt(ConfigReader r, ExperimentConfig& e) {
  auto& c = e.bayesopt;
  r.get("duration", c.duration);
  r.get("sample_every", c.sample_every);
  r.get("kappa", c.kappa);
  r.get("softmax_c", c.softmax_c);
  r.get("normalization_samples", c.normalization_samples);
  {
    auto g = r.child("gp");
    g.get("amplitude", c.gp.amplitude);
    g.get("length_scale", c.gp.length_scale);
    g.get("noise_variance", c.gp.noise_variance);
    g.check(c.gp.amplitude > 0.0, "amplitude", "must be positive");
    g.check(c.gp.length_scale > 0.0, "length_scale", "must be positive");
    g.check(c.gp.noise_variance > 0.0, "noise_variance", "must be positive");
    g.reject_unknown();
  }
  {
    auto s = r.child("search");
    s.get("starts", c.search.starts);
    s.get("iterations", c.search.iterations);
    s.check(c.search.starts >= 1, "starts", "must be at least 1");
    s.check(c.search.iterations >= 0, "iterations", "must be non-negative");
    s.reject_unknown();
  }
  {
    auto d = r.child("direct");
    d.get("iterations", c.direct_iterations);
    d.get("step", c.direct_step);
    d.get("normalized", c.direct_normalized);
    d.check(c.direct_iterations >= 0, "iterations", "must be non-negative");
    d.check(c.direct_step > 0.0, "step", "must be positive");
    d.reject_unknown();
  }
  {
    auto s = r.child("system");
    auto& p = e.pendulum;
    s.get("cart_mass", p.cart_mass);
    s.get("mass1", p.mass1);
    s.get("mass2", p.mass2);
    s.get("length1", p.length1);
    s.get("length2", p.length2);
    s.get("gravity", p.gravity);
    for (const char* k : {"cart_mass", "mass1", "mass2", "length1", "length2", "gravity"}) {
      double v = 0.0;
      if (std::string(k) == "cart_mass") v = p.cart_mass;
      else if (std::string(k) == "mass1") v = p.mass1;
      else if (std::string(k) == "mass2") v = p.mass2;
      else if (std::string(k) == "length1") v = p.length1;
      else if (std::string(k) == "length2") v = p.length2;
      else v = p.gravity;
      s.check(v > 0.0, k, "must be positive");
    }
    s.reject_unknown();
  }
  Vec q = c.lqr_Q.diagonal();
  if (r.get("lqr_q", q, 6)) c.lqr_Q = q.asDiagonal();
  r.get("lqr_r", c.lqr_R, 1);
  Vec dom(2);
  dom << c.domain_lower, c.domain_upper;
  if (r.get("domain", dom, 2)) {
    c.domain_lower = dom[0];
    c.domain_upper = dom[1];
  }
  r.get("start_half_width", e.start_half_width);
  for (auto b : r.children("objective")) {
    Bump bump{Vec::Zero(1), 0.1, 1.0};
    b.get("center", bump.center, 1);
    b.get("width", bump.width);
    b.get("height", bump.height);
    b.check(bump.width > 0.0, "width", "must be positive");
    b.reject_unknown();
    e.objective.push_back(bump);
  }
  read_kle3(r.child("kle3"), c.kle3, 1, 1);
  r.check(c.duration > 0.0, "duration", "must be positive");
  r.check(c.sample_every >= 1, "sample_every", "must be at least 1");
  r.check(c.kappa >= 0.0, "kappa", "must be non-negative");
  r.check(c.softmax_c > 0.0, "softmax_c", "must be positive");
  r.check(c.normalization_samples >= 1, "normalization_samples", "must be at least 1");
  r.check((c.lqr_Q.diagonal().array() >= 0.0).all(), "lqr_q", "must be non-negative");
  r.check(c.lqr_R(0, 0) > 0.0, "lqr_r", "must be positive");
  r.check(c.domain_lower < c.domain_upper, "domain", "lower bound must be below the upper bound");
  r.check(e.start_half_width >= 0.0, "start_half_width", "must be non-negative");
  r.reject_unknown();
}

inline void read_learning(ConfigReader r, ExperimentConfig& e) {
  auto& c = e.learning;
  r.get("dt", c.dt);
  r.get("steps", c.steps);
  r.get("search_coordinates", c.search_coordinates);
  const auto v = static_cast<Eigen::Index>(c.search_coordinates.size());
  if (c.search_half_widths.size() != v) c.search_half_widths = Vec::Ones(v);
  r.get("search_half_widths", c.search_half_widths, v);
  r.get("softmax_c", c.softmax_c);
  r.get("normalization_samples", c.normalization_samples);
  r.get("lqr_q", c.lqr_q, 12);
  r.get("lqr_r", c.lqr_r);
  r.get("ou_reversion", c.ou_reversion);
  r.get("online_batch", c.online_batch);
  r.get("online_learning_rate", c.online_learning_rate);
  r.get("initial_perturbation", c.initial_perturbation);
  r.get("explore_steps", c.explore_steps);
  if (c.kle3.Sigma.rows() != v) c.kle3.Sigma = 0.1 * Mat::Identity(std::max<Eigen::Index>(v, 1), std::max<Eigen::Index>(v, 1));
  read_kle3(r.child("kle3"), c.kle3, 4, static_cast<int>(v));
  {
    auto n = r.child("network");
    n.get("hidden", c.model.hidden);
    n.get("depth", c.model.depth);
    n.get("invariant_states", c.model.invariant_states);
    n.get("variance_floor", c.model.variance_floor);
    n.check(c.model.hidden >= 1, "hidden", "must be at least 1");
    n.check(c.model.depth >= 0, "depth", "must be non-negative");
    n.check(c.model.variance_floor > 0.0, "variance_floor", "must be positive");
    for (int i : c.model.invariant_states)
      n.check(i >= 0 && i < 12, "invariant_states", "indices must lie in [0, 12)");
    n.reject_unknown();
  }
  {
    auto t = r.child("training");
    auto& tc = e.training;
    t.get("batch", tc.batch);
    t.get("iterations", tc.iterations);
    t.get("learning_rate", tc.learning_rate);
    read_enum(t, "optimizer", tc.optimizer, {{"adam", OptimizerKind::Adam}, {"sgd", OptimizerKind::Sgd}});
    t.check(tc.batch >= 1, "batch", "must be at least 1");
    t.check(tc.iterations >= 0, "iterations", "must be non-negative");
    t.check(tc.learning_rate >= 0.0, "learning_rate", "must be non-negative");
    t.reject_unknown();
  }
  {
    auto t = r.child("tracking");
    auto& tc = e.tracking;
    t.get("targets", tc.targets);
    t.get("target_half_width", tc.target_half_width);
    t.get("duration", tc.duration);
    t.get("substeps", tc.substeps);
    t.get("samples", tc.samples);
    t.get("horizon", tc.horizon);
    t.get("temperature", tc.temperature);
    t.get("perturbation_std", tc.perturbation_std);
    t.get("position_weight", tc.position_weight);
    t.get("velocity_weight", tc.velocity_weight);
    t.get("attitude_weight", tc.attitude_weight);
    t.get("terminal_weight", tc.terminal_weight);
    t.get("control_weight", tc.control_weight);
    t.get("reach_threshold", tc.reach_threshold);
    t.get("attitude_q", tc.attitude_q, 6);
    t.get("attitude_r", tc.attitude_r);
    t.check(tc.targets >= 1, "targets", "must be at least 1");
    t.check(tc.duration > 0.0, "duration", "must be positive");
    t.check(tc.substeps >= 1, "substeps", "must be at least 1");
    t.check(tc.samples >= 1, "samples", "must be at least 1");
    t.check(tc.horizon >= 1, "horizon", "must be at least 1");
    t.check(tc.temperature > 0.0, "temperature", "must be positive");
    t.check(tc.perturbation_std >= 0.0, "perturbation_std", "must be non-negative");
    t.check(tc.reach_threshold > 0.0, "reach_threshold", "must be positive");
    t.check(tc.attitude_r > 0.0, "attitude_r", "must be positive");
    t.reject_unknown();
  }
  {
    auto q = r.child("quadcopter");
    auto& p = e.quadcopter;
    q.get("mass", p.mass);
    q.get("arm_length", p.arm_length);
    q.get("inertia_xx", p.inertia_xx);
    q.get("inertia_yy", p.inertia_yy);
    q.get("inertia_zz", p.inertia_zz);
    q.get("yaw_coefficient", p.yaw_coefficient);
    q.get("gravity", p.gravity);
    q.check(p.mass > 0.0, "mass", "must be positive");
    q.check(p.arm_length > 0.0, "arm_length", "must be positive");
    q.check(p.inertia_xx > 0.0 && p.inertia_yy > 0.0 && p.inertia_zz > 0.0, "inertia_xx",
            "inertias must be positive");
    q.check(p.gravity > 0.0, "gravity", "must be positive");
    q.reject_unknown();
  }
  {
    auto g = r.child("coverage_grid");
    auto& cg = e.coverage_grid;
    g.get("coordinates", cg.coordinates);
    g.get("lower", cg.lower);
    g.get("upper", cg.upper);
    g.get("bins", cg.bins);
    g.check(cg.bins >= 1, "bins", "must be at least 1");
    g.check(cg.lower < cg.upper, "lower", "must be below upper");
    for (int i : cg.coordinates) g.check(i >= 0 && i < 12, "coordinates", "indices must lie in [0, 12)");
    g.reject_unknown();
  }
  r.check(c.dt > 0.0, "dt", "must be positive");
  r.check(c.steps >= 1, "steps", "must be at least 1");
  r.check(v >= 1, "search_coordinates", "must not be empty");
  for (int i : c.search_coordinates) r.check(i >= 0 && i < 12, "search_coordinates", "indices must lie in [0, 12)");
  r.check((c.search_half_widths.array() > 0.0).all(), "search_half_widths", "must be positive");
  r.check(c.softmax_c > 0.0, "softmax_c", "must be positive");
  r.check(c.normalization_samples >= 1, "normalization_samples", "must be at least 1");
  r.check((c.lqr_q.array() >= 0.0).all(), "lqr_q", "must be non-negative");
  r.check(c.lqr_r > 0.0, "lqr_r", "must be positive");
  r.check(c.ou_reversion >= 0.0, "ou_reversion", "must be non-negative");
  r.check(c.online_batch >= 1, "online_batch", "must be at least 1");
  r.check(c.online_learning_rate >= 0.0, "online_learning_rate", "must be non-negative");
  r.check(c.initial_perturbation >= 0.0, "initial_perturbation", "must be non-negative");
  r.reject_unknown();
}

inline void read_reconstruct(ConfigReader r, ReconstructSettings& s) {
  r.get("trajectory", s.trajectory);
  r.get("per_axis", s.per_axis);
  r.get("fourier_K", s.fourier_K);
  r.check(s.per_axis >= 8, "per_axis", "must be at least 8");
  r.check(s.fourier_K >= 1, "fourier_K", "must be at least 1");
  r.reject_unknown();
}

}  // namespace detail

/// Validates the whole document and reports every violation at once.
inline ExperimentConfig parse_config(const json& j) {
  std::vector<std::string> errors;
  ExperimentConfig e;
  ConfigReader r(j, "", errors);
  std::string kind;
  if (!r.get("experiment", kind) && !r.has("experiment")) r.fail("experiment", "required");
  detail::read_enum(r, "experiment", e.kind,
                    {{"coverage-demo", ExperimentKind::CoverageDemo},
                     {"bayesopt", ExperimentKind::BayesOpt},
                     {"model-learning", ExperimentKind::ModelLearning},
                     {"reconstruct-fig1", ExperimentKind::ReconstructFig1}});
  r.get("seed", e.seed);
  r.get("trials", e.trials);
  r.get("jobs", e.jobs);
  r.get("output_dir", e.output_dir);
  r.check(e.trials >= 1, "trials", "must be at least 1");
  r.check(e.jobs >= 1, "jobs", "must be at least 1");

  e.methods = default_methods(e.kind);
  if (r.get("methods", e.methods)) {
    const auto allowed = default_methods(e.kind);
    r.check(!e.methods.empty(), "methods", "must not be empty");
    for (const auto& m : e.methods) {
      const bool ok = e.kind == ExperimentKind::ModelLearning
                          ? parse_exploration_method(m).has_value()
                          : std::find(allowed.begin(), allowed.end(), m) != allowed.end() ||
                                (e.kind == ExperimentKind::CoverageDemo && m == "kle3");
      if (!ok) r.fail("methods", "unknown method '" + m + "' for " + to_string(e.kind));
    }
  }

  const std::vector<std::pair<std::string, std::vector<ExperimentKind>>> sections{
      {"coverage", {ExperimentKind::CoverageDemo, ExperimentKind::ReconstructFig1}},
      {"reconstruct", {ExperimentKind::ReconstructFig1}},
      {"bayesopt", {ExperimentKind::BayesOpt}},
      {"model_learning", {ExperimentKind::ModelLearning}}};
  for (const auto& [name, kinds] : sections) {
    if (!r.has(name)) continue;
    if (std::find(kinds.begin(), kinds.end(), e.kind) == kinds.end()) {
      r.child(name);  // mark as seen
      r.fail(name, "not used by experiment '" + to_string(e.kind) + "'");
      continue;
    }
    if (name == "coverage") detail::read_coverage(r.child(name), e.coverage);
    if (name == "reconstruct") detail::read_reconstruct(r.child(name), e.reconstruct);
    if (name == "bayesopt") detail::read_bayesopt(r.child(name), e);
    if (name == "model_learning") detail::read_learning(r.child(name), e);
  }
  r.reject_unknown();
  if (!errors.empty()) throw ConfigError(std::move(errors));
  e.source = j;
  return e;
}

/// The config as embedded in result files: settings that do not change results
/// (worker count, output location) are left out so outputs compare byte-for-byte.
inline json result_config(const ExperimentConfig& cfg) {
  json j = cfg.source;
  if (j.is_object()) {
    j.erase("jobs");
    j.erase("output_dir");
  }
  return j;
}

inline json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& err) {
    throw ConfigError({path + ": " + err.what()});
  }
}

/// Command-line overrides are written into the document before validation, so
/// the embedded snapshot reproduces the run.
struct ConfigOverrides {
  std::optional<std::uint64_t> seed;
  std::optional<int> trials;
  std::optional<int> jobs;
  std::optional<std::string> output_dir;
  std::optional<std::string> mode;  // full-kl | jensen
};

inline json apply_overrides(json j, const ConfigOverrides& o) {
  if (!j.is_object()) return j;
  if (o.seed) j["seed"] = *o.seed;
  if (o.trials) j["trials"] = *o.trials;
  if (o.jobs) j["jobs"] = *o.jobs;
  if (o.output_dir) j["output_dir"] = *o.output_dir;
  if (o.mode) {
    const std::string kind = j.value("experiment", "");
    const std::string section = kind == "bayesopt"         ? "bayesopt"
                                : kind == "model-learning" ? "model_learning"
                                                           : "coverage";
    j[section]["kle3"]["mode"] = *o.mode;
  }
  return j;
}

inline ExperimentConfig load_config(const std::string& path, const ConfigOverrides& o = {}) {
  return parse_config(apply_overrides(load_json_file(path), o));
}

/// --out, then the config, then $KLE3_OUTPUT_ROOT/<experiment>, then ./kle3_out/<experiment>.
inline std::filesystem::path resolve_output_dir(const ExperimentConfig& cfg) {
  if (!cfg.output_dir.empty()) return cfg.output_dir;
  const char* root = std::getenv(kOutputRootVariable);
  const std::filesystem::path base = (root && *root) ? std::filesystem::path(root) : std::filesystem::path("kle3_out");
  return base / to_string(cfg.kind);
}

// ---------------------------------------------------------------------------
// Output files
// ---------------------------------------------------------------------------

inline std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// step, t, state..., control..., V, D_KL, beta, tau, lambda
inline void write_trace(const std::filesystem::path& path, const RunRecord& rec, const json& config) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << "# config " << config.dump() << "\n";
  const Eigen::Index n = rec.rows.empty() ? 0 : rec.rows.front().x.size();
  const Eigen::Index m = rec.rows.empty() ? 0 : rec.rows.front().u.size();
  out << "step,t";
  for (Eigen::Index i = 0; i < n; ++i) out << ",x" << i;
  for (Eigen::Index i = 0; i < m; ++i) out << ",u" << i;
  out << ",V,D_KL,beta,tau,lambda\n";
  for (std::size_t k = 0; k < rec.rows.size(); ++k) {
    const auto& r = rec.rows[k];
    out << k << "," << format_number(r.t);
    for (Eigen::Index i = 0; i < r.x.size(); ++i) out << "," << format_number(r.x[i]);
    for (Eigen::Index i = 0; i < r.u.size(); ++i) out << "," << format_number(r.u[i]);
    out << "," << format_number(r.V) << "," << format_number(r.objective) << "," << format_number(r.beta) << ","
        << format_number(r.tau) << "," << format_number(r.lambda) << "\n";
  }
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

struct TraceTable {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;

  [[nodiscard]] int column(const std::string& name) const {
    const auto it = std::find(columns.begin(), columns.end(), name);
    return it == columns.end() ? -1 : static_cast<int>(it - columns.begin());
  }
};

inline TraceTable read_trace(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open trajectory file '" + path.string() + "'");
  TraceTable t;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::stringstream ss(line);
    std::string cell;
    if (t.columns.empty()) {
      while (std::getline(ss, cell, ',')) t.columns.push_back(cell);
      continue;
    }
    std::vector<double> row;
    while (std::getline(ss, cell, ',')) row.push_back(std::strtod(cell.c_str(), nullptr));
    if (row.size() != t.columns.size()) throw IoError("malformed row in '" + path.string() + "'");
    t.rows.push_back(std::move(row));
  }
  if (t.columns.empty()) throw IoError("'" + path.string() + "' has no header");
  return t;
}

/// Grid values as a matrix: one row per second-axis index, first axis along columns.
inline void write_grid(const std::filesystem::path& path, const GridValues& g, const json& config) {
  require(g.grid.dim() == 2, "write_grid: two-dimensional grids only");
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << "# config " << config.dump() << "\n";
  out << "# x0 " << format_number(g.grid.lower[0]) << " " << format_number(g.grid.upper[0]) << " x1 "
      << format_number(g.grid.lower[1]) << " " << format_number(g.grid.upper[1]) << "\n";
  const int c0 = g.grid.counts[0], c1 = g.grid.counts[1];
  for (int i1 = 0; i1 < c1; ++i1) {
    for (int i0 = 0; i0 < c0; ++i0) out << (i0 ? "," : "") << format_number(g.values[i0 + c0 * i1]);
    out << "\n";
  }
}

// ---------------------------------------------------------------------------
// Reconstruction
// ---------------------------------------------------------------------------

struct ReconstructionSet {
  GridValues fourier;
  GridValues sigma;
  GridValues moment_matched;
  GridValues target;
};

/// Rebuilds the coverage-demo trajectory stored in a trace and evaluates the
/// three reconstructions and the target on a common grid.
inline ReconstructionSet reconstruct_from_trace(const std::filesystem::path& trace, const ExperimentConfig& cfg) {
  const TraceTable t = read_trace(trace);
  const auto setup = make_coverage_setup(cfg.coverage);
  std::vector<int> cols;
  for (int i : setup.domain.indices()) {
    const int c = t.column("x" + std::to_string(i));
    if (c < 0) throw IoError("trajectory file '" + trace.string() + "' lacks column x" + std::to_string(i));
    cols.push_back(c);
  }
  if (t.rows.empty()) throw IoError("trajectory file '" + trace.string() + "' is empty");
  WeightedPoints path;
  path.points.resize(setup.domain.dim(), static_cast<Eigen::Index>(t.rows.size()));
  path.weights = Vec::Constant(static_cast<Eigen::Index>(t.rows.size()), cfg.coverage.kle3.dt);
  for (std::size_t k = 0; k < t.rows.size(); ++k) {
    Vec s(setup.domain.dim());
    for (std::size_t d = 0; d < cols.size(); ++d) s[static_cast<Eigen::Index>(d)] = t.rows[k][static_cast<std::size_t>(cols[d])];
    if (setup.domain.clamp(s)) ++path.clamp_events;
    path.points.col(static_cast<Eigen::Index>(k)) = s;
  }
  const SigmaKernel kernel(cfg.coverage.kle3.Sigma);
  const int per_axis = cfg.reconstruct.per_axis, K = cfg.reconstruct.fourier_K;
  ReconstructionSet out{
      reconstruct_density(path, setup.domain, kernel, {ReconstructionMode::Fourier, per_axis, K}),
      reconstruct_density(path, setup.domain, kernel, {ReconstructionMode::Sigma, per_axis, K}),
      reconstruct_density(path, setup.domain, kernel, {ReconstructionMode::MomentMatched, per_axis, K}),
      density_on_grid(setup.target, per_axis)};
  return out;
}

inline void write_reconstruction(const std::filesystem::path& dir, const ReconstructionSet& r, const json& config) {
  std::filesystem::create_directories(dir);
  write_grid(dir / "fourier.csv", r.fourier, config);
  write_grid(dir / "sigma.csv", r.sigma, config);
  write_grid(dir / "moment_matched.csv", r.moment_matched, config);
  write_grid(dir / "target.csv", r.target, config);
}

// ---------------------------------------------------------------------------
// Running experiments
// ---------------------------------------------------------------------------

/// Runs f(0..n-1) on a bounded pool of worker threads.
template <class F>
void parallel_for(std::size_t n, int jobs, F&& f) {
  const auto workers = static_cast<std::size_t>(std::max(1, jobs));
  if (workers == 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < std::min(workers, n); ++w)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) f(i);
    });
  for (auto& t : pool) t.join();
}

struct TrialResult {
  std::uint64_t seed = 0;
  std::string method;
  RunRecord record;
  double seconds = 0.0;
};

struct ExperimentOutcome {
  std::filesystem::path output_dir;
  std::vector<TrialResult> trials;
  std::size_t aborted = 0;
};

namespace detail {

inline std::string file_label(const std::string& method) {
  std::string s = method;
  for (char& c : s)
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '.' && c != '_' && c != '-') c = '_';
  return s;
}

struct Prepared {
  std::optional<CoverageSetup> coverage;
  std::optional<BoSetup> bo;
  std::optional<ObjectiveFunction> objective;
  std::optional<LearningSetup> learning;
};

inline Prepared prepare(const ExperimentConfig& cfg) {
  Prepared p;
  switch (cfg.kind) {
    case ExperimentKind::CoverageDemo:
    case ExperimentKind::ReconstructFig1: p.coverage.emplace(make_coverage_setup(cfg.coverage)); break;
    case ExperimentKind::BayesOpt:
      p.bo.emplace(make_bo_setup(cfg.bayesopt, make_cart_double_pendulum(cfg.pendulum)));
      p.objective.emplace(cfg.objective.empty() ? default_bo_objective(p.bo->domain)
                                                : mixture_objective(cfg.objective, p.bo->domain));
      break;
    case ExperimentKind::ModelLearning:
      p.learning.emplace(make_learning_setup(cfg.learning, make_quadcopter(cfg.quadcopter)));
      break;
  }
  return p;
}

inline double bo_start(const ExperimentConfig& cfg, const SeedTree& seeds) {
  Rng rng = seeds.stream("start");
  std::uniform_real_distribution<double> d(-cfg.start_half_width, cfg.start_half_width);
  return d(rng);
}

inline RunRecord run_learning_trial(const ExperimentConfig& cfg, const LearningSetup& setup, const std::string& method,
                                    const SeedTree& seeds) {
  const ExplorationMethod em = *parse_exploration_method(method);
  LearningRun run = run_exploration(setup, em, cfg.learning, seeds);
  RunRecord rec = std::move(run.record);
  rec.method = method;
  rec.metrics["initial_V"] = run.initial_V;
  rec.metrics["coverage_bins"] = static_cast<double>(occupied_bins(run.buffer, cfg.coverage_grid));
  rec.metrics["tracking_completed"] = 0.0;
  rec.metrics["tracking_error"] = std::numeric_limits<double>::infinity();
  if (run.buffer.size() < 2) return rec;
  try {
    const auto tm = train_offline(run.buffer, setup.plant.model->state_dim(), setup.plant.model->control_dim(),
                                  cfg.learning.model, cfg.training, seeds.child("offline"));
    if (!tm.losses.empty()) rec.metrics["final_loss"] = tm.losses.back();
    Rng target_rng = seeds.stream("targets");
    const Mat targets = tracking_targets(cfg.tracking, target_rng);
    const auto res =
        tracking_eval(*setup.plant.model, predictor_from(tm.model), targets, cfg.tracking, seeds.child("tracking"));
    rec.metrics["tracking_error"] = res.mean_error;
    rec.metrics["tracking_completed"] = res.completed ? 1.0 : 0.0;
  } catch (const TrainingError& e) {
    rec.metrics["training_failed"] = 1.0;
  }
  return rec;
}

}  // namespace detail

/// One (trial, method) unit. The trial seed is shared by every method so
/// comparisons are paired.
inline TrialResult run_trial(const ExperimentConfig& cfg, const detail::Prepared& prep, std::uint64_t seed,
                             const std::string& method) {
  const auto t0 = std::chrono::steady_clock::now();
  const SeedTree seeds(seed);
  TrialResult out{seed, method, {}, 0.0};
  try {
    switch (cfg.kind) {
      case ExperimentKind::CoverageDemo:
      case ExperimentKind::ReconstructFig1: {
        CoverageRun run = method == "lqr_argmax" ? argmax_coverage(*prep.coverage, cfg.coverage, seeds)
                                                 : kle3_coverage(*prep.coverage, cfg.coverage, seeds);
        add_coverage_metrics(run, *prep.coverage, cfg.coverage);
        out.record = std::move(run.record);
        break;
      }
      case ExperimentKind::BayesOpt: {
        const double start = detail::bo_start(cfg, seeds);
        const auto& s = *prep.bo;
        const auto& phi = *prep.objective;
        if (method == "kle3") out.record = kle3_bayesopt(s, phi, cfg.bayesopt, start, seeds);
        else if (method == "lqr_bayes") out.record = lqr_bayes_baseline(s, phi, cfg.bayesopt, start, seeds);
        else if (method == "direct_max") out.record = direct_acq_max_baseline(s, phi, cfg.bayesopt, start, seeds);
        else out.record = bo_baseline_record(s, phi, cfg.bayesopt, start, seeds);
        out.record.metrics["start"] = start;
        out.record.metrics["objective_max"] = phi.max;
        break;
      }
      case ExperimentKind::ModelLearning:
        out.record = detail::run_learning_trial(cfg, *prep.learning, method, seeds);
        break;
    }
  } catch (const Error& e) {
    out.record.aborted = true;
    out.record.abort_reason = e.what();
  }
  out.record.method = method;
  out.record.seed = seed;
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

inline json metric_summary(const std::vector<TrialResult>& trials, const std::vector<std::string>& methods) {
  json out = json::object();
  for (const auto& m : methods) {
    std::map<std::string, std::vector<double>> values;
    std::size_t aborted = 0, n = 0;
    for (const auto& t : trials) {
      if (t.method != m) continue;
      ++n;
      if (t.record.aborted) ++aborted;
      for (const auto& [k, v] : t.record.metrics) values[k].push_back(v);
    }
    json jm = json::object();
    jm["trials"] = n;
    jm["aborted"] = aborted;
    json metrics = json::object();
    for (const auto& [k, vs] : values) {
      double mean = 0.0;
      for (double v : vs) mean += v;
      mean /= static_cast<double>(vs.size());
      double var = 0.0;
      for (double v : vs) var += (v - mean) * (v - mean);
      const double sd = vs.size() > 1 ? std::sqrt(var / static_cast<double>(vs.size() - 1)) : 0.0;
      json e = json::object();
      e["mean"] = std::isfinite(mean) ? json(mean) : json(format_number(mean));
      e["std"] = std::isfinite(sd) ? json(sd) : json(format_number(sd));
      e["n"] = vs.size();
      metrics[k] = e;
    }
    jm["metrics"] = metrics;
    out[m] = jm;
  }
  return out;
}

/// Per-method comparison: power loss, mean ||u||, tracking completion.
inline void write_comparison(const std::filesystem::path& path, const std::vector<TrialResult>& trials,
                         const std::vector<std::string>& methods, const json& config) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << "# config " << config.dump() << "\n";
  out << "method,power_loss_mean,power_loss_std,mean_u_norm_mean,mean_u_norm_std,tracking_completion_rate,"
         "completes\n";
  for (const auto& m : methods) {
    std::vector<double> pl, un;
    double completed = 0.0, n = 0.0;
    for (const auto& t : trials) {
      if (t.method != m) continue;
      n += 1.0;
      const auto& mt = t.record.metrics;
      if (mt.count("power_loss")) pl.push_back(mt.at("power_loss"));
      if (mt.count("mean_u_norm")) un.push_back(mt.at("mean_u_norm"));
      if (mt.count("tracking_completed")) completed += mt.at("tracking_completed");
    }
    auto stats = [](const std::vector<double>& v) {
      if (v.empty()) return std::pair<double, double>{std::numeric_limits<double>::quiet_NaN(), 0.0};
      double mean = 0.0;
      for (double x : v) mean += x;
      mean /= static_cast<double>(v.size());
      double var = 0.0;
      for (double x : v) var += (x - mean) * (x - mean);
      return std::pair<double, double>{mean, v.size() > 1 ? std::sqrt(var / static_cast<double>(v.size() - 1)) : 0.0};
    };
    const auto [plm, pls] = stats(pl);
    const auto [unm, uns] = stats(un);
    const double rate = n > 0.0 ? completed / n : 0.0;
    out << m << "," << format_number(plm) << "," << format_number(pls) << "," << format_number(unm) << ","
        << format_number(uns) << "," << format_number(rate) << "," << (rate > 0.5 ? "yes" : "no") << "\n";
  }
}

/// Executes every (trial, method) pair, writing one trace per pair, a line per
/// finished trial to records.jsonl, and summary.json at the end.
inline ExperimentOutcome run_experiment(const ExperimentConfig& cfg) {
  namespace fs = std::filesystem;
  ExperimentOutcome outcome;
  outcome.output_dir = resolve_output_dir(cfg);
  fs::create_directories(outcome.output_dir);
  {
    std::ofstream c(outcome.output_dir / "config.json");
    c << cfg.source.dump(2) << "\n";
  }
  const auto prep = detail::prepare(cfg);
  const json snapshot = result_config(cfg);
  struct Task {
    std::uint64_t seed;
    std::string method;
  };
  std::vector<Task> tasks;
  for (int i = 0; i < cfg.trials; ++i)
    for (const auto& m : cfg.methods) tasks.push_back({cfg.seed + static_cast<std::uint64_t>(i), m});
  for (const auto& m : cfg.methods) fs::create_directories(outcome.output_dir / detail::file_label(m));

  const auto t0 = std::chrono::steady_clock::now();
  outcome.trials.resize(tasks.size());
  std::mutex log_mutex;
  std::ofstream log(outcome.output_dir / "records.jsonl");
  parallel_for(tasks.size(), cfg.jobs, [&](std::size_t i) {
    TrialResult r = run_trial(cfg, prep, tasks[i].seed, tasks[i].method);
    const fs::path dir = outcome.output_dir / detail::file_label(r.method);
    write_trace(dir / ("trace_" + std::to_string(r.seed) + ".csv"), r.record, snapshot);
    if (cfg.kind == ExperimentKind::ReconstructFig1 && !r.record.aborted) {
      const auto rec = reconstruct_from_trace(dir / ("trace_" + std::to_string(r.seed) + ".csv"), cfg);
      write_reconstruction(dir / ("grids_" + std::to_string(r.seed)), rec, snapshot);
    }
    json line = {{"seed", r.seed}, {"method", r.method}, {"aborted", r.record.aborted},
                 {"abort_reason", r.record.abort_reason}, {"seconds", r.seconds}};
    json metrics = json::object();
    for (const auto& [k, v] : r.record.metrics) metrics[k] = std::isfinite(v) ? json(v) : json(format_number(v));
    line["metrics"] = metrics;
    {
      std::lock_guard<std::mutex> lock(log_mutex);
      log << line.dump() << "\n";
      log.flush();
    }
    outcome.trials[i] = std::move(r);
  });

  json trials = json::array();
  for (const auto& r : outcome.trials) {
    if (r.record.aborted) ++outcome.aborted;
    json t = {{"seed", r.seed}, {"method", r.method}, {"aborted", r.record.aborted},
              {"abort_reason", r.record.abort_reason}, {"seconds", r.seconds}};
    json metrics = json::object();
    for (const auto& [k, v] : r.record.metrics) metrics[k] = std::isfinite(v) ? json(v) : json(format_number(v));
    t["metrics"] = metrics;
    trials.push_back(t);
  }
  json summary = {{"experiment", to_string(cfg.kind)},
                  {"config", cfg.source},
                  {"methods", metric_summary(outcome.trials, cfg.methods)},
                  {"trials", trials},
                  {"aborted", outcome.aborted},
                  {"wall_seconds", std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()}};
  std::ofstream s(outcome.output_dir / "summary.json");
  s << summary.dump(2) << "\n";
  if (cfg.kind == ExperimentKind::ModelLearning)
    write_comparison(outcome.output_dir / "comparison.csv", outcome.trials, cfg.methods, snapshot);
  return outcome;
}

/// The `reconstruct` command: grids for a stored trace, written under the output directory.
inline ReconstructionSet run_reconstruct(const ExperimentConfig& cfg, const std::string& trace_override = "") {
  require(cfg.kind == ExperimentKind::ReconstructFig1 || cfg.kind == ExperimentKind::CoverageDemo,
          "reconstruct: needs a coverage-demo or reconstruct-fig1 config");
  const std::string trace = trace_override.empty() ? cfg.reconstruct.trajectory : trace_override;
  if (trace.empty()) throw IoError("reconstruct: no trajectory file given");
  const auto rec = reconstruct_from_trace(trace, cfg);
  write_reconstruction(resolve_output_dir(cfg), rec, result_config(cfg));
  return rec;
}

}  // namespace kle3
