#pragma once

#include "kle3/controller.hpp"
#include "kle3/network.hpp"
#include "kle3/record.hpp"

#include <algorithm>
#include <set>

namespace kle3 {

// ---------------------------------------------------------------------------
// Stochastic dynamics model
// ---------------------------------------------------------------------------

struct StochasticModelConfig {
  int hidden = 64;
  int depth = 2;
  std::vector<int> invariant_states{0, 1, 2};  // dropped from the network inputs
  double variance_floor = 1e-6;
};

/// One column per example.
struct Batch {
  Mat X;
  Mat U;
  Mat DX;
  [[nodiscard]] Eigen::Index size() const { return X.cols(); }
};

/// dx ~ N(f(x, u), diag(var(x))), with affine input/output normalization.
class StochasticModel {
 public:
  StochasticModel(int state_dim, int control_dim, StochasticModelConfig cfg = {})
      : n_(state_dim), m_(control_dim), cfg_(std::move(cfg)) {
    require(n_ >= 1 && m_ >= 1, "StochasticModel: dimensions must be positive");
    const std::set<int> drop(cfg_.invariant_states.begin(), cfg_.invariant_states.end());
    for (int i = 0; i < n_; ++i)
      if (!drop.count(i)) features_.push_back(i);
    require(!features_.empty(), "StochasticModel: every state coordinate was dropped");
    require(cfg_.variance_floor > 0.0, "StochasticModel: variance floor must be positive");
    const int nf = static_cast<int>(features_.size());
    std::vector<int> mean_sizes{nf + m_}, var_sizes{nf};
    for (int d = 0; d < cfg_.depth; ++d) {
      mean_sizes.push_back(cfg_.hidden);
      var_sizes.push_back(cfg_.hidden);
    }
    mean_sizes.push_back(n_);
    var_sizes.push_back(n_);
    mean_ = Mlp(mean_sizes);
    var_ = Mlp(var_sizes);
    in_shift_ = Vec::Zero(nf + m_);
    in_scale_ = Vec::Ones(nf + m_);
    out_shift_ = Vec::Zero(n_);
    out_scale_ = Vec::Ones(n_);
  }

  [[nodiscard]] int state_dim() const { return n_; }
  [[nodiscard]] int control_dim() const { return m_; }
  [[nodiscard]] const StochasticModelConfig& config() const { return cfg_; }

  void initialize(Rng& rng) {
    mean_.initialize(rng);
    var_.initialize(rng);
  }

  [[nodiscard]] Eigen::Index param_count() const { return mean_.param_count() + var_.param_count(); }
  [[nodiscard]] Vec params() const {
    Vec theta(param_count());
    theta << mean_.params(), var_.params();
    return theta;
  }
  void set_params(const Vec& theta) {
    require(theta.size() == param_count(), "StochasticModel: parameter count mismatch");
    mean_.set_params(theta.head(mean_.param_count()));
    var_.set_params(theta.tail(var_.param_count()));
  }

  /// Sets the normalization from data; standard deviations are floored.
  void fit_normalization(const Batch& data, double floor = 1e-3) {
    require(data.size() >= 2, "StochasticModel: need at least two examples to normalize");
    const Mat in = raw_inputs(data.X, data.U);
    in_shift_ = in.rowwise().mean();
    in_scale_ = ((in.colwise() - in_shift_).array().square().rowwise().mean().sqrt()).matrix().cwiseMax(floor);
    out_shift_ = data.DX.rowwise().mean();
    out_scale_ =
        ((data.DX.colwise() - out_shift_).array().square().rowwise().mean().sqrt()).matrix().cwiseMax(floor);
  }

  [[nodiscard]] Mat mean(const Mat& X, const Mat& U) const {
    return denormalize_mean(mean_.forward(normalized_inputs(X, U)));
  }
  [[nodiscard]] Vec mean(const Vec& x, const Vec& u) const { return mean(Mat(x), Mat(u)).col(0); }

  /// Per-dimension variances, strictly positive.
  [[nodiscard]] Mat variance(const Mat& X) const {
    const Mat z = var_.forward(normalized_inputs(X, Mat::Zero(m_, X.cols())).topRows(nf()));
    return variance_from_logits(z);
  }

  /// Mean negative log-likelihood and its gradient with respect to params().
  struct NllResult {
    double loss = 0.0;
    Vec grad;
  };
  [[nodiscard]] NllResult nll(const Batch& b, std::size_t batch_index = 0) const {
    require(b.size() >= 1, "gaussian_nll: empty batch");
    require(b.X.rows() == n_ && b.U.rows() == m_ && b.DX.rows() == n_, "gaussian_nll: batch shapes");
    const Mat in = normalized_inputs(b.X, b.U);
    Mlp::Cache mc, vc;
    const Mat f = denormalize_mean(mean_.forward(in, &mc));
    const Mat z = var_.forward(in.topRows(nf()), &vc);
    const Mat var = variance_from_logits(z);
    const Mat r = b.DX - f;
    const double B = static_cast<double>(b.size());
    const double loss =
        (0.5 * (2.0 * M_PI * var.array()).log() + r.array().square() / (2.0 * var.array())).sum() / B;
    if (!std::isfinite(loss)) throw TrainingError("gaussian_nll: non-finite loss", batch_index);
    // d loss / d f and d loss / d var
    const Mat dF = (-r.array() / var.array()).matrix() / B;
    const Mat dV = ((0.5 / var.array()) - r.array().square() / (2.0 * var.array().square())).matrix() / B;
    const Mat dMeanOut = dF.array().colwise() * out_scale_.array();
    Mat dZ(z.rows(), z.cols());
    for (Eigen::Index j = 0; j < z.cols(); ++j)
      for (Eigen::Index i = 0; i < z.rows(); ++i)
        dZ(i, j) = dV(i, j) * out_scale_[i] * out_scale_[i] * sigmoid(z(i, j));
    NllResult out;
    out.loss = loss;
    out.grad.resize(param_count());
    out.grad << mean_.backward(mc, dMeanOut), var_.backward(vc, dZ);
    if (!out.grad.allFinite()) throw TrainingError("gaussian_nll: non-finite gradient", batch_index);
    return out;
  }

 private:
  [[nodiscard]] int nf() const { return static_cast<int>(features_.size()); }

  [[nodiscard]] Mat raw_inputs(const Mat& X, const Mat& U) const {
    require(X.rows() == n_ && U.rows() == m_ && X.cols() == U.cols(), "StochasticModel: input shapes");
    Mat in(nf() + m_, X.cols());
    for (int k = 0; k < nf(); ++k) in.row(k) = X.row(features_[static_cast<std::size_t>(k)]);
    in.bottomRows(m_) = U;
    return in;
  }
  [[nodiscard]] Mat normalized_inputs(const Mat& X, const Mat& U) const {
    return ((raw_inputs(X, U).colwise() - in_shift_).array().colwise() / in_scale_.array()).matrix();
  }
  [[nodiscard]] Mat denormalize_mean(const Mat& y) const {
    return ((y.array().colwise() * out_scale_.array()).colwise() + out_shift_.array()).matrix();
  }
  [[nodiscard]] Mat variance_from_logits(const Mat& z) const {
    Mat v = z.unaryExpr([](double s) { return softplus(s); });
    v.array() += cfg_.variance_floor;
    return (v.array().colwise() * out_scale_.array().square()).matrix();
  }

  int n_, m_;
  StochasticModelConfig cfg_;
  std::vector<int> features_;
  Mlp mean_, var_;
  Vec in_shift_, in_scale_, out_shift_, out_scale_;
};

inline StochasticModel::NllResult gaussian_nll(const StochasticModel& model, const Batch& batch,
                                               std::size_t batch_index = 0) {
  return model.nll(batch, batch_index);
}

// ---------------------------------------------------------------------------
// Data
// ---------------------------------------------------------------------------

/// Append-only store of (t, x, dx, u) in arrival order.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
    require(capacity_ >= 1, "ReplayBuffer: capacity must be positive");
  }

  void append(double t, const Vec& x, const Vec& dx, const Vec& u) {
    require(size() < capacity_, "ReplayBuffer: capacity exceeded");
    require(t_.empty() || t >= t_.back(), "ReplayBuffer: timestamps must be non-decreasing");
    require(x_.empty() || (x.size() == x_.front().size() && u.size() == u_.front().size()),
            "ReplayBuffer: inconsistent tuple dimensions");
    require(dx.size() == x.size(), "ReplayBuffer: dx dimension");
    t_.push_back(t);
    x_.push_back(x);
    dx_.push_back(dx);
    u_.push_back(u);
  }

  [[nodiscard]] std::size_t size() const { return t_.size(); }
  [[nodiscard]] std::size_t capacity() const { return capacity_; }
  [[nodiscard]] bool empty() const { return t_.empty(); }
  [[nodiscard]] double time(std::size_t i) const { return t_.at(i); }
  [[nodiscard]] const Vec& state(std::size_t i) const { return x_.at(i); }
  [[nodiscard]] const Vec& derivative(std::size_t i) const { return dx_.at(i); }
  [[nodiscard]] const Vec& control(std::size_t i) const { return u_.at(i); }

  [[nodiscard]] Batch gather(const std::vector<std::size_t>& idx) const {
    require(!empty(), "ReplayBuffer: empty");
    const auto B = static_cast<Eigen::Index>(idx.size());
    Batch b{Mat(x_.front().size(), B), Mat(u_.front().size(), B), Mat(x_.front().size(), B)};
    for (Eigen::Index j = 0; j < B; ++j) {
      const std::size_t i = idx[static_cast<std::size_t>(j)];
      b.X.col(j) = x_.at(i);
      b.U.col(j) = u_.at(i);
      b.DX.col(j) = dx_.at(i);
    }
    return b;
  }

  /// K indices drawn uniformly with replacement.
  [[nodiscard]] Batch sample(int K, Rng& rng) const {
    require(K >= 1 && !empty(), "ReplayBuffer: sample needs K >= 1 and data");
    std::uniform_int_distribution<std::size_t> pick(0, size() - 1);
    std::vector<std::size_t> idx(static_cast<std::size_t>(K));
    for (auto& i : idx) i = pick(rng);
    return gather(idx);
  }

  [[nodiscard]] Batch all() const {
    std::vector<std::size_t> idx(size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    return gather(idx);
  }

 private:
  std::size_t capacity_;
  std::vector<double> t_;
  std::vector<Vec> x_, dx_, u_;
};

struct TrainConfig {
  int batch = 200;
  int iterations = 2000;
  double learning_rate = 1e-3;
  OptimizerKind optimizer = OptimizerKind::Adam;
};

/// One descent step on the NLL of a uniformly drawn K-batch. Returns the batch loss.
inline double train_step(StochasticModel& model, Optimizer& opt, const ReplayBuffer& buffer, int K, double lr,
                         Rng& rng, std::size_t batch_index = 0) {
  const Batch b = buffer.sample(K, rng);
  const auto res = model.nll(b, batch_index);
  Vec theta = model.params();
  opt.step(theta, res.grad, lr);
  model.set_params(theta);
  return res.loss;
}

struct TrainedModel {
  StochasticModel model;
  std::vector<double> losses;
};

/// Fresh model fit to a whole buffer: normalization from the data, then
/// `iterations` K-batch steps.
inline TrainedModel train_offline(const ReplayBuffer& buffer, int state_dim, int control_dim,
                                  const StochasticModelConfig& mc, const TrainConfig& tc, const SeedTree& seeds) {
  TrainedModel out{StochasticModel(state_dim, control_dim, mc), {}};
  Rng init = seeds.stream("initialization");
  out.model.initialize(init);
  out.model.fit_normalization(buffer.all());
  Optimizer opt(tc.optimizer);
  Rng rng = seeds.stream("batches");
  out.losses.reserve(static_cast<std::size_t>(tc.iterations));
  for (int it = 0; it < tc.iterations; ++it)
    out.losses.push_back(train_step(out.model, opt, buffer, tc.batch, tc.learning_rate, rng, static_cast<std::size_t>(it)));
  return out;
}

// ---------------------------------------------------------------------------
// Exploration noise
// ---------------------------------------------------------------------------

enum class NoiseKind { OrnsteinUhlenbeck, Uniform, Normal };

inline std::string to_string(NoiseKind k) {
  switch (k) {
    case NoiseKind::OrnsteinUhlenbeck: return "OU";
    case NoiseKind::Uniform: return "Uniform";
    case NoiseKind::Normal: return "Normal";
  }
  return "?";
}

/// Additive control noise held over one control period.
class NoiseProcess {
 public:
  NoiseProcess(NoiseKind kind, int dim, double scale, double dt, double reversion = 2.5)
      : kind_(kind), scale_(scale), dt_(dt), theta_(reversion), eps_(Vec::Zero(dim)) {
    require(dim >= 1 && scale >= 0.0 && dt > 0.0 && reversion >= 0.0, "NoiseProcess: invalid parameters");
  }

  [[nodiscard]] const Vec& value() const { return eps_; }
  [[nodiscard]] NoiseKind kind() const { return kind_; }
  [[nodiscard]] double scale() const { return scale_; }
  void reset(const Vec& eps) { eps_ = eps; }

  /// Draws the value for the next period.
  const Vec& advance(Rng& rng) {
    switch (kind_) {
      case NoiseKind::OrnsteinUhlenbeck:
        eps_ = eps_ - theta_ * eps_ * dt_ + scale_ * std::sqrt(dt_) * standard_normal(rng, eps_.size());
        break;
      case NoiseKind::Normal:
        eps_ = scale_ * standard_normal(rng, eps_.size());
        break;
      case NoiseKind::Uniform: {
        std::uniform_real_distribution<double> d(-scale_, scale_);
        for (Eigen::Index i = 0; i < eps_.size(); ++i) eps_[i] = scale_ > 0.0 ? d(rng) : 0.0;
        break;
      }
    }
    return eps_;
  }

 private:
  NoiseKind kind_;
  double scale_, dt_, theta_;
  Vec eps_;
};

/// u = mu(x) + eps, reading the process's current value at every evaluation.
inline ControlLaw noise_policy(ControlLaw base, std::shared_ptr<const NoiseProcess> process) {
  return [base = std::move(base), process = std::move(process)](double t, const Vec& x) {
    return Vec(base(t, x) + process->value());
  };
}

// ---------------------------------------------------------------------------
// Energy
// ---------------------------------------------------------------------------

struct EnergyMetrics {
  double power_loss = std::numeric_limits<double>::quiet_NaN();
  double mean_u_norm = 0.0;
};

/// Mean ||u||, and for quadcopters the mean of sum |T|^1.5 relative to hover, minus 1.
inline EnergyMetrics energy_metrics(const std::vector<Vec>& controls, std::optional<double> hover_thrust) {
  require(!controls.empty(), "energy_metrics: empty control trace");
  EnergyMetrics e;
  double power = 0.0;
  for (const auto& u : controls) {
    e.mean_u_norm += u.norm();
    power += u.array().abs().pow(1.5).sum();
  }
  const double n = static_cast<double>(controls.size());
  e.mean_u_norm /= n;
  if (hover_thrust) {
    const double hover = static_cast<double>(controls.front().size()) * std::pow(*hover_thrust, 1.5);
    e.power_loss = power / n / hover - 1.0;
  }
  return e;
}

inline EnergyMetrics energy_metrics(const RunRecord& rec, std::optional<double> hover_thrust) {
  std::vector<Vec> us;
  us.reserve(rec.rows.size());
  for (const auto& r : rec.rows) us.push_back(r.u);
  return energy_metrics(us, hover_thrust);
}

// ---------------------------------------------------------------------------
// Exploration runs on the quadcopter
// ---------------------------------------------------------------------------

struct ModelLearningConfig {
  double dt = 0.02;
  int steps = 1200;
  Kle3Config kle3 = [] {
    Kle3Config c;
    c.t_horizon = 0.6;
    c.dt = 0.02;
    c.window = WindowMode::TrajOpt;
    c.R = 500.0 * Mat::Identity(4, 4);
    c.Sigma = 0.1 * Mat::Identity(6, 6);
    c.samples = 100;
    c.mode = ObjectiveMode::Jensen;
    return c;
  }();
  std::vector<int> search_coordinates{6, 7, 8, 9, 10, 11};
  Vec search_half_widths = Vec::Ones(6);
  double softmax_c = 1.0;
  int normalization_samples = 500;
  Vec lqr_q = [] {
    Vec q = Vec::Ones(12);
    q.tail(3).setConstant(0.01);
    return q;
  }();
  double lqr_r = 1.0;
  double ou_reversion = 2.5;
  int online_batch = 64;
  double online_learning_rate = 1e-3;
  StochasticModelConfig model;
  double initial_perturbation = 0.0;  // std of the seeded start-state offset
  int explore_steps = -1;             // exploration stops after this many steps; -1 explores throughout
};

struct LearningSetup {
  BenchmarkSystem plant;
  ModelPtr planner;
  LqrDesign lqr;
  SearchDomain domain;
  std::shared_ptr<const Quadcopter> quad;
};

inline LearningSetup make_learning_setup(const ModelLearningConfig& cfg, BenchmarkSystem plant = make_quadcopter()) {
  require(plant.kind == BenchmarkKind::Quadcopter12D, "model learning: quadcopter plant required");
  auto planner = linearized_model(*plant.model, plant.x_eq, plant.u_eq);
  require(cfg.lqr_q.size() == plant.model->state_dim(), "model learning: lqr_q must have one entry per state");
  auto lqr = design_lqr(*planner, plant.x_eq, plant.u_eq, Mat(cfg.lqr_q.asDiagonal()),
                        cfg.lqr_r * Mat::Identity(plant.model->control_dim(), plant.model->control_dim()));
  const auto v = static_cast<Eigen::Index>(cfg.search_coordinates.size());
  require(cfg.search_half_widths.size() == v, "model learning: one search half-width per search coordinate");
  SearchDomain dom(-cfg.search_half_widths, cfg.search_half_widths, cfg.search_coordinates);
  auto quad = std::dynamic_pointer_cast<const Quadcopter>(plant.model);
  return {std::move(plant), planner, std::move(lqr), std::move(dom), quad};
}

struct ExplorationMethod {
  enum class Kind { Kle3, Noise, None } kind = Kind::Kle3;
  NoiseKind noise = NoiseKind::OrnsteinUhlenbeck;
  double scale = 0.0;

  [[nodiscard]] std::string label() const {
    if (kind == Kind::Kle3) return "KL-E3";
    if (kind == Kind::None) return "LQR";
    std::ostringstream os;
    os << to_string(noise) << "-" << scale;
    return os.str();
  }
  static ExplorationMethod kle3() { return {}; }
  static ExplorationMethod with_noise(NoiseKind k, double s) { return {Kind::Noise, k, s}; }
};

struct LearningRun {
  RunRecord record;
  ReplayBuffer buffer;
  std::optional<StochasticModel> online_model;
  double initial_V = 0.0;
};

/// One control period with u held constant (the recorded u is the one that acted).
inline Vec hold_step(const TransitionModel& model, const Vec& x, const Vec& u, double t, double dt) {
  const ControlLaw held = [&u](double, const Vec&) { return u; };
  return integrate_step(model, held, x, t, dt);
}

inline Vec perturbed_start(const LearningSetup& setup, double std_dev, Rng& rng) {
  Vec x = setup.plant.x_eq;
  if (std_dev > 0.0) x += std_dev * standard_normal(rng, x.size());
  return x;
}

/// Per-dimension model variance at hover states whose search coordinates are set from S.
inline std::function<Mat(const Mat&)> hover_variance_field(const StochasticModel& model, const SearchDomain& dom,
                                                           const Vec& x_eq) {
  return [&model, &dom, x_eq](const Mat& S) {
    Mat X = x_eq.replicate(1, S.cols());
    for (int k = 0; k < dom.dim(); ++k) X.row(dom.indices()[static_cast<std::size_t>(k)]) = S.row(k);
    return model.variance(X);
  };
}

/// One uninterrupted exploration run collecting (x, dx, u).
inline LearningRun run_exploration(const LearningSetup& setup, const ExplorationMethod& method,
                                   const ModelLearningConfig& cfg, const SeedTree& seeds) {
  const auto& model = *setup.plant.model;
  const int n = model.state_dim(), m = model.control_dim();
  LearningRun run{RunRecord{}, ReplayBuffer(static_cast<std::size_t>(cfg.steps)), std::nullopt, 0.0};
  run.record.method = method.label();
  run.record.seed = seeds.root();
  const auto& cert = setup.lqr.certificate;
  const auto& pol = setup.lqr.policy;

  Rng start_rng = seeds.stream("initial_state");
  Vec x = perturbed_start(setup, cfg.initial_perturbation, start_rng);
  run.initial_V = cert.value(x);

  Kle3Config kc = cfg.kle3;
  kc.dt = cfg.dt;
  kc.steps_per_period = 1;
  Kle3Controller ctl(setup.planner, pol, setup.domain, kc, cert);
  Rng sampling = seeds.stream("sampling");
  Rng normalization = seeds.stream("normalization");
  Rng batches = seeds.stream("batches");
  Rng noise_rng = seeds.stream("noise");

  std::optional<Optimizer> opt;
  if (method.kind == ExplorationMethod::Kind::Kle3) {
    run.online_model.emplace(n, m, cfg.model);
    Rng init = seeds.stream("initialization");
    run.online_model->initialize(init);
    opt.emplace(OptimizerKind::Adam);
  }
  auto process = std::make_shared<NoiseProcess>(method.noise, m, method.scale, cfg.dt, cfg.ou_reversion);
  const int explore_steps = cfg.explore_steps < 0 ? cfg.steps : cfg.explore_steps;
  bool normalized = false;

  try {
    for (int k = 0; k < cfg.steps; ++k) {
      const double t = k * cfg.dt;
      StepRow row;
      row.t = t;
      row.x = x;
      row.V = cert.value(x);
      const bool exploring = k < explore_steps;
      Vec u = pol(x);
      if (method.kind == ExplorationMethod::Kind::Kle3 && exploring) {
        const auto field = hover_variance_field(*run.online_model, setup.domain, setup.plant.x_eq);
        const auto p = variance_target(field, cfg.softmax_c, setup.domain, cfg.normalization_samples, normalization);
        const Plan pl = ctl.plan(x, t, p, sampling);
        if (pl.window_steps > 0) u += pl.correction.front();
        row.objective = pl.diag.objective;
        row.beta = pl.diag.beta;
        row.tau = pl.diag.tau;
        row.lambda = pl.diag.lambda;
      } else if (method.kind == ExplorationMethod::Kind::Noise && exploring) {
        u += process->advance(noise_rng);
      }
      const Vec x1 = hold_step(model, x, u, t, cfg.dt);
      if (!x1.allFinite() || x1.cwiseAbs().maxCoeff() > 1e6) throw DivergenceError("exploration run diverged", t);
      row.u = u;
      run.buffer.append(t, x, (x1 - x) / cfg.dt, row.u);
      run.record.rows.push_back(std::move(row));
      x = x1;
      if (run.online_model && run.buffer.size() >= static_cast<std::size_t>(cfg.online_batch)) {
        if (!normalized) {
          run.online_model->fit_normalization(run.buffer.all());
          normalized = true;
        }
        train_step(*run.online_model, *opt, run.buffer, cfg.online_batch, cfg.online_learning_rate, batches,
                   static_cast<std::size_t>(k));
      }
    }
  } catch (const Error& e) {
    run.record.aborted = true;
    run.record.abort_reason = e.what();
  }
  run.record.metrics["steps"] = static_cast<double>(run.record.rows.size());
  if (!run.record.rows.empty()) {
    const double hover = setup.quad ? setup.quad->hover_thrust() : std::numeric_limits<double>::quiet_NaN();
    const auto e = energy_metrics(run.record, hover);
    run.record.metrics["mean_u_norm"] = e.mean_u_norm;
    run.record.metrics["power_loss"] = e.power_loss;
  }
  return run;
}

inline LearningRun kle3_model_learning(const LearningSetup& setup, const ModelLearningConfig& cfg,
                                       const SeedTree& seeds) {
  return run_exploration(setup, ExplorationMethod::kle3(), cfg, seeds);
}

// ---------------------------------------------------------------------------
// Coverage
// ---------------------------------------------------------------------------

struct CoverageGrid {
  std::vector<int> coordinates{6, 7, 8, 9};
  double lower = -1.0;
  double upper = 1.0;
  int bins = 10;
};

/// Number of distinct grid cells visited; points outside the box fall in edge cells.
inline std::size_t occupied_bins(const ReplayBuffer& buffer, const CoverageGrid& grid) {
  require(grid.bins >= 1 && grid.upper > grid.lower, "occupied_bins: invalid grid");
  std::set<std::vector<int>> cells;
  const double w = (grid.upper - grid.lower) / grid.bins;
  for (std::size_t i = 0; i < buffer.size(); ++i) {
    std::vector<int> cell;
    for (int c : grid.coordinates) {
      const int b = static_cast<int>(std::floor((buffer.state(i)[c] - grid.lower) / w));
      cell.push_back(std::clamp(b, 0, grid.bins - 1));
    }
    cells.insert(std::move(cell));
  }
  return cells.size();
}

// ---------------------------------------------------------------------------
// Model-based tracking
// ---------------------------------------------------------------------------

/// xdot predictions for a batch of (state, control) columns.
using DynamicsPredictor = std::function<Mat(const Mat& X, const Mat& U)>;

inline DynamicsPredictor predictor_from(const StochasticModel& model) {
  return [&model](const Mat& X, const Mat& U) { return model.mean(X, U); };
}

inline DynamicsPredictor predictor_from(ModelPtr model) {
  return [model = std::move(model)](const Mat& X, const Mat& U) {
    Mat out(X.rows(), X.cols());
    for (Eigen::Index j = 0; j < X.cols(); ++j) out.col(j) = model->eval(X.col(j), U.col(j));
    return out;
  };
}

struct TrackingConfig {
  int targets = 5;
  double target_half_width = 2.0;
  double duration = 10.0;
  double plant_dt = 0.02;
  int substeps = 2;  // plant steps per MPC step
  int samples = 64;
  int horizon = 20;
  double temperature = 1.0;
  double perturbation_std = 0.1;
  double position_weight = 1.0;
  double velocity_weight = 5.0;
  double attitude_weight = 0.5;
  double terminal_weight = 10.0;
  double control_weight = 1.0;
  double reach_threshold = 0.25;
  Vec attitude_q = (Vec(6) << 1.0, 1.0, 1.0, 0.01, 0.01, 0.01).finished();
  double attitude_r = 1.0;
};

struct TrackingResult {
  std::vector<double> errors;
  double mean_error = std::numeric_limits<double>::infinity();
  bool completed = false;
  std::string failure;
};

/// Inner attitude loop shared by every evaluation: hover thrust plus LQR on
/// roll/pitch/yaw and body rates. Translation is left to the MPC.
inline EquilibriumPolicy attitude_stabilizer(const Quadcopter& quad, const TrackingConfig& cfg) {
  const Vec x0 = Vec::Zero(12);
  const Vec u0 = Vec::Constant(4, quad.hover_thrust());
  const auto lin = linearize(quad, x0, u0);
  const std::vector<int> idx{3, 4, 5, 9, 10, 11};
  Mat A(6, 6), B(6, 4);
  for (int i = 0; i < 6; ++i) {
    B.row(i) = lin.B.row(idx[static_cast<std::size_t>(i)]);
    for (int j = 0; j < 6; ++j) A(i, j) = lin.A(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
  }
  const auto res = lqr_synthesize(A, B, Mat(cfg.attitude_q.asDiagonal()), cfg.attitude_r * Mat::Identity(4, 4));
  Mat K = Mat::Zero(4, 12);
  for (int j = 0; j < 6; ++j) K.col(idx[static_cast<std::size_t>(j)]) = res.K.col(j);
  return EquilibriumPolicy{K, x0, u0, std::nullopt, std::nullopt};
}

inline Mat tracking_targets(const TrackingConfig& cfg, Rng& rng) {
  std::uniform_real_distribution<double> d(-cfg.target_half_width, cfg.target_half_width);
  Mat T(3, cfg.targets);
  for (Eigen::Index j = 0; j < T.cols(); ++j)
    for (int i = 0; i < 3; ++i) T(i, j) = d(rng);
  return T;
}

/// Path-integral MPC through `predict`, applied to the true plant. Returns the
/// final position error for one target.
inline double mppi_reach(const TransitionModel& plant, const EquilibriumPolicy& inner, const DynamicsPredictor& predict,
                         const Vec& target, const TrackingConfig& cfg, Rng& rng) {
  const int H = cfg.horizon, S = cfg.samples, m = plant.control_dim();
  const double Dt = cfg.plant_dt * cfg.substeps;
  Mat nominal = Mat::Zero(m, H);
  Vec x = Vec::Zero(plant.state_dim());
  const auto periods = static_cast<int>(std::llround(cfg.duration / Dt));
  std::normal_distribution<double> g(0.0, cfg.perturbation_std);
  for (int p = 0; p < periods; ++p) {
    std::vector<Mat> eps(static_cast<std::size_t>(S), Mat(m, H));
    for (auto& e : eps)
      for (Eigen::Index i = 0; i < e.size(); ++i) e.data()[i] = g(rng);
    Mat X = x.replicate(1, S);
    Vec cost = Vec::Zero(S);
    for (int h = 0; h < H; ++h) {
      Mat dU(m, S);
      for (int s = 0; s < S; ++s) dU.col(s) = nominal.col(h) + eps[static_cast<std::size_t>(s)].col(h);
      for (int sub = 0; sub < cfg.substeps; ++sub) {
        Mat U = ((-inner.K * (X.colwise() - inner.x_eq)).colwise() + inner.u_eq) + dU;
        const Mat Xd = predict(X, U);
        if (!Xd.allFinite()) throw NumericOverflow("tracking: model prediction is not finite");
        X += cfg.plant_dt * Xd;
      }
      for (int s = 0; s < S; ++s) {
        const double pe = (X.col(s).head(3) - target).squaredNorm();
        cost[s] += Dt * (cfg.position_weight * pe + cfg.velocity_weight * X.col(s).segment(6, 3).squaredNorm() +
                         cfg.attitude_weight * X.col(s).segment(3, 3).squaredNorm() +
                         cfg.control_weight * dU.col(s).squaredNorm());
        if (h + 1 == H) cost[s] += cfg.terminal_weight * pe;
      }
    }
    for (int s = 0; s < S; ++s)
      if (!std::isfinite(cost[s])) cost[s] = std::numeric_limits<double>::infinity();
    const double best = cost.minCoeff();
    if (!std::isfinite(best)) throw NumericOverflow("tracking: every sampled rollout diverged");
    Vec w = (-(cost.array() - best) / cfg.temperature).exp().matrix();
    w /= w.sum();
    for (int s = 0; s < S; ++s) nominal += w[s] * eps[static_cast<std::size_t>(s)];

    const Vec hold = nominal.col(0);
    for (int sub = 0; sub < cfg.substeps; ++sub) {
      x = hold_step(plant, x, Vec(inner(x) + hold), p * Dt + sub * cfg.plant_dt, cfg.plant_dt);
      if (!x.allFinite() || x.cwiseAbs().maxCoeff() > 1e3) throw DivergenceError("tracking: plant diverged", p * Dt);
    }
    Mat shifted(m, H);
    shifted.leftCols(H - 1) = nominal.rightCols(H - 1);
    shifted.col(H - 1).setZero();
    nominal = shifted;
  }
  return (x.head(3) - target).norm();
}

/// Mean final position error over the targets; non-completion when it exceeds
/// the reach threshold or any evaluation fails numerically.
inline TrackingResult tracking_eval(const TransitionModel& plant, const DynamicsPredictor& predict,
                                    const Mat& targets, const TrackingConfig& cfg, const SeedTree& seeds) {
  const auto* quad = dynamic_cast<const Quadcopter*>(&plant);
  require(quad != nullptr, "tracking_eval: quadcopter plant required");
  require(targets.rows() == 3 && targets.cols() >= 1, "tracking_eval: targets must be 3 x K");
  const EquilibriumPolicy inner = attitude_stabilizer(*quad, cfg);
  TrackingResult out;
  try {
    for (Eigen::Index j = 0; j < targets.cols(); ++j) {
      Rng rng = seeds.child(static_cast<std::uint64_t>(j)).stream("mppi");
      out.errors.push_back(mppi_reach(plant, inner, predict, targets.col(j), cfg, rng));
    }
    double sum = 0.0;
    for (double e : out.errors) sum += e;
    out.mean_error = sum / static_cast<double>(out.errors.size());
    out.completed = out.mean_error <= cfg.reach_threshold;
    if (!out.completed) out.failure = "mean error above reach threshold";
  } catch (const Error& e) {
    out.completed = false;
    out.failure = e.what();
  }
  return out;
}

}  // namespace kle3
