#include "kle3/ergodic.hpp"

#include <gtest/gtest.h>

using namespace kle3;

namespace {

Trajectory path_of(const std::vector<Vec>& pts, double dt) {
  Trajectory t;
  t.dt = dt;
  t.states = pts;
  t.states.push_back(pts.back());
  t.controls.assign(pts.size(), Vec::Zero(1));
  return t;
}

Trajectory constant_path(const Vec& x, std::size_t steps, double dt) {
  return path_of(std::vector<Vec>(steps, x), dt);
}

SearchDomain box(int v, double lo, double hi) { return SearchDomain::box(Vec::Constant(v, lo), Vec::Constant(v, hi)); }

Vec v1(double a) { return Vec::Constant(1, a); }
Vec v2(double a, double b) {
  Vec v(2);
  v << a, b;
  return v;
}

}  // namespace

TEST(Ergodic, KernelPeakAndNormalizer) {
  Mat S(2, 2);
  S << 0.2, 0.05, 0.05, 0.1;
  const SigmaKernel k(S);
  const Vec c = v2(0.3, -0.1);
  EXPECT_NEAR(k(c, c), 1.0 / k.eta(), 1e-14);
  EXPECT_LT(k(v2(0.5, 0.0), c), k(c, c));
  EXPECT_NEAR(k.eta(), 2.0 * std::numbers::pi * std::sqrt(S.determinant()), 1e-12);
  EXPECT_THROW(SigmaKernel(Mat::Constant(1, 1, -1.0)), ContractViolation);
}

TEST(Ergodic, SingleStateIsOneBump) {
  const auto dom = box(1, -2, 2);
  const SigmaKernel k(Mat::Constant(1, 1, 0.04));
  Trajectory t;
  t.dt = 0.1;
  t.states = {v1(0.3)};
  Mat S(1, 3);
  S << -0.2, 0.3, 0.5;
  const Vec q = time_avg_density(t, dom, k, S);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(q[i], k(v1(S(0, i)), v1(0.3)), 1e-15);
}

TEST(Ergodic, DensityIntegratesToOne) {
  const auto dom = box(2, -1, 1);
  const SigmaKernel k(0.01 * Mat::Identity(2, 2));
  std::vector<Vec> pts;
  for (int j = 0; j < 40; ++j) pts.push_back(v2(0.5 * std::cos(0.15 * j), 0.5 * std::sin(0.15 * j)));
  const auto tr = path_of(pts, 0.05);
  const Grid g{dom.lower(), dom.upper(), {200, 200}};
  const double mass = time_avg_density(tr, dom, k, g.points()).sum() * g.cell_volume();
  EXPECT_NEAR(mass, 1.0, 0.02);
}

TEST(Ergodic, SymmetricTwoPointTrajectory) {
  const auto dom = box(1, -2, 2);
  const SigmaKernel k(Mat::Constant(1, 1, 0.1));
  const auto tr = path_of({v1(-0.7), v1(0.7)}, 0.1);
  for (double s : {0.1, 0.4, 1.3}) {
    const double a = time_avg_density(tr, dom, k, Mat::Constant(1, 1, s))[0];
    const double b = time_avg_density(tr, dom, k, Mat::Constant(1, 1, -s))[0];
    EXPECT_NEAR(a, b, 1e-10);
  }
}

TEST(Ergodic, KlCoincidentPointUnitConvention) {
  const auto dom = box(1, -1, 1);
  const SigmaKernel k(Mat::Constant(1, 1, 0.1), EtaConvention::Unit);
  const auto tr = constant_path(v1(0.2), 10, 0.1);  // unit horizon
  const SpatialDistribution p = uniform_distribution(dom);
  EXPECT_NEAR(kl_objective(tr, dom, k, Mat::Constant(1, 1, 0.2), p), 0.0, 1e-15);
}

TEST(Ergodic, KlMatchesDirectSummation) {
  const auto dom = box(2, -1, 1);
  const SigmaKernel k(Mat::Identity(2, 2) * 0.05);
  const auto tr = path_of({v2(0.1, 0.2), v2(-0.3, 0.4)}, 0.2);
  Mat S(2, 2);
  S << 0.0, 0.5, 0.1, -0.2;
  Vec p(2);
  p << 0.7, 0.2;
  double expect = 0.0;
  const double eta = 2.0 * std::numbers::pi * 0.05;
  for (int i = 0; i < 2; ++i) {
    double q = 0.0;
    for (const Vec& x : {v2(0.1, 0.2), v2(-0.3, 0.4)}) {
      const Vec d = S.col(i) - x;
      q += std::exp(-0.5 * d.squaredNorm() / 0.05) / eta * 0.2;
    }
    q /= 0.4;
    expect += -p[i] * std::log(q);
  }
  EXPECT_NEAR(kl_objective(project_trajectory(tr, dom), k, S, p), expect, 1e-12);
}

TEST(Ergodic, KlFloorKeepsValueFinite) {
  const auto dom = box(1, -100, 100);
  const SigmaKernel k(Mat::Constant(1, 1, 0.01));
  const auto tr = constant_path(v1(0.0), 5, 0.1);
  const double v = kl_objective(project_trajectory(tr, dom), k, Mat::Constant(1, 1, 90.0), Vec::Ones(1));
  EXPECT_NEAR(v, -std::log(1e-12), 1e-9);
}

TEST(Ergodic, MovingTowardModeLowersKl) {
  // 1D double integrator, constant-velocity sweeps; the best sweep ends near the mode
  const auto dom = box(1, -1, 1);
  const SigmaKernel k(Mat::Constant(1, 1, 0.02));
  const auto p = gaussian_mixture_distribution(dom, {{v1(0.6), Mat::Constant(1, 1, 0.01), 1.0}});
  Rng rng(3);
  const Mat S = uniform_samples(dom, 400, rng);
  double prev = std::numeric_limits<double>::infinity();
  for (double v : {0.0, 0.2, 0.4, 0.6}) {
    std::vector<Vec> pts;
    for (int j = 0; j < 20; ++j) pts.push_back(v1(v * j * 0.05));
    const double d = kl_objective(path_of(pts, 0.05), dom, k, S, p);
    EXPECT_LT(d, prev) << "velocity " << v;
    prev = d;
  }
}

TEST(Ergodic, JensenBasics) {
  const auto dom = box(1, -2, 2);
  const SigmaKernel k(Mat::Constant(1, 1, 1.0));
  Trajectory one;
  one.dt = 1.0;
  one.states = {v1(0.0), v1(5.0)};
  one.controls = {v1(0.0)};
  EXPECT_NEAR(jensen_objective(project_trajectory(one, dom), k, Mat::Constant(1, 1, 1.0), Vec::Ones(1)), 1.0, 1e-15);
  const auto c = constant_path(v1(0.4), 7, 0.1);
  EXPECT_EQ(jensen_objective(project_trajectory(c, dom), k, Mat::Constant(1, 1, 0.4), Vec::Ones(1)), 0.0);
  Rng rng(2);
  for (int t = 0; t < 20; ++t) {
    std::vector<Vec> pts;
    for (int j = 0; j < 5; ++j) pts.push_back(standard_normal(rng, 1));
    const Mat S = uniform_samples(dom, 6, rng);
    EXPECT_GE(jensen_objective(project_trajectory(path_of(pts, 0.1), dom), k, S, Vec::Ones(6)), 0.0);
  }
}

TEST(Ergodic, JensenInequalityDirection) {
  const auto dom = box(2, -3, 3);
  const SigmaKernel k(0.3 * Mat::Identity(2, 2), EtaConvention::Unit);
  Rng rng(4);
  for (int t = 0; t < 200; ++t) {
    std::vector<Vec> pts;
    for (int j = 0; j < 8; ++j) pts.push_back(standard_normal(rng, 2));
    const auto path = project_trajectory(path_of(pts, 0.1), dom);
    const Vec s = standard_normal(rng, 2);
    const double lhs = time_avg_density(path, k, s)[0];
    double avg = 0.0;
    for (Eigen::Index j = 0; j < path.size(); ++j) avg += path.weights[j] * 0.5 * k.mahalanobis2(s, path.points.col(j));
    avg /= path.total_weight();
    EXPECT_GE(lhs, std::exp(-avg) - 1e-15);
  }
}

TEST(Ergodic, KlPermutationInvariance) {
  const auto dom = box(1, -1, 1);
  const SigmaKernel k(Mat::Constant(1, 1, 0.05));
  const auto tr = path_of({v1(0.1), v1(0.3), v1(-0.2)}, 0.1);
  Mat S(1, 3);
  S << 0.0, 0.5, -0.5;
  Vec p(3);
  p << 0.2, 0.5, 0.3;
  Mat S2(1, 3);
  S2 << -0.5, 0.0, 0.5;
  Vec p2(3);
  p2 << 0.3, 0.2, 0.5;
  const auto tr2 = path_of({v1(-0.2), v1(0.1), v1(0.3)}, 0.1);
  const double a = kl_objective(project_trajectory(tr, dom), k, S, p);
  EXPECT_NEAR(a, kl_objective(project_trajectory(tr, dom), k, S2, p2), 1e-14);
  EXPECT_NEAR(a, kl_objective(project_trajectory(tr2, dom), k, S, p), 1e-14);
}

TEST(Ergodic, FourierBasisOrthonormal) {
  const FourierBasis b(Vec::Constant(2, -1.0), Vec::Constant(2, 2.0), 4);
  const Grid g{Vec::Constant(2, -1.0), Vec::Constant(2, 2.0), {400, 400}};
  const Mat F = b.evaluate(g.points());
  const Mat G = F * F.transpose() * g.cell_volume();
  EXPECT_LT((G - Mat::Identity(G.rows(), G.cols())).lpNorm<Eigen::Infinity>(), 1e-3);
}

TEST(Ergodic, FourierZeroTermAndNonNegativity) {
  const auto dom = box(2, 0, 1);
  const auto p = uniform_distribution(dom);
  Rng rng(5);
  std::vector<Vec> pts;
  for (int j = 0; j < 30; ++j) pts.push_back(uniform_samples(dom, 1, rng).col(0));
  const auto path = project_trajectory(path_of(pts, 0.1), dom);
  const FourierBasis b(dom.lower(), dom.upper(), 5);
  const Vec c = b.trajectory_coefficients(path), pk = b.density_coefficients(p, 32);
  EXPECT_NEAR(c[0], pk[0], 1e-12);
  EXPECT_GE(fourier_ergodic_metric(path, p, 5), 0.0);
}

TEST(Ergodic, DenseSweepHasSmallMetric) {
  const auto dom = box(2, 0, 1);
  const auto p = uniform_distribution(dom);
  // lawnmower sweep on a fine raster
  std::vector<Vec> pts;
  const int rows = 60, cols = 200;
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      const double x = (r % 2 == 0 ? c + 0.5 : cols - c - 0.5) / cols;
      pts.push_back(v2(x, (r + 0.5) / rows));
    }
  EXPECT_LT(fourier_ergodic_metric(project_trajectory(path_of(pts, 0.01), dom), p, 10), 1e-2);
}

TEST(Ergodic, FourierRejectsHighDimension) {
  EXPECT_THROW(FourierBasis(Vec::Zero(4), Vec::Ones(4), 3), UnsupportedDimension);
}

TEST(Ergodic, Reconstructions) {
  const auto dom = box(2, -1, 1);
  const SigmaKernel k(0.01 * Mat::Identity(2, 2));
  std::vector<Vec> pts;
  for (int j = 0; j < 50; ++j) pts.push_back(v2(0.3, -0.2));  // dwell
  for (int j = 0; j < 50; ++j) pts.push_back(v2(-0.4 + 0.01 * j, 0.3));
  const auto path = project_trajectory(path_of(pts, 0.02), dom);

  ReconstructionOptions o;
  o.per_axis = 80;
  o.mode = ReconstructionMode::Sigma;
  const auto sig = reconstruct_density(path, dom, k, o);
  EXPECT_GE(sig.values.minCoeff(), 0.0);
  EXPECT_NEAR(sig.values.sum() * sig.grid.cell_volume(), 1.0, 0.05);

  o.mode = ReconstructionMode::Fourier;
  const auto four = reconstruct_density(path, dom, k, o);
  EXPECT_LT(four.values.minCoeff(), 0.0);

  o.mode = ReconstructionMode::MomentMatched;
  const auto mm = reconstruct_density(path, dom, k, o);
  const Vec mean = path.points.rowwise().mean();
  const Mat cen = path.points.colwise() - mean;
  const Mat cov = cen * cen.transpose() / static_cast<double>(path.size()) + 1e-9 * Mat::Identity(2, 2);
  const SigmaKernel gauss(cov);
  const Mat P = mm.grid.points();
  for (Eigen::Index j = 0; j < P.cols(); j += 97) EXPECT_NEAR(mm.values[j], gauss(P.col(j), mean), 1e-9);
  EXPECT_NEAR(mm.values.sum() * mm.grid.cell_volume(), 1.0, 0.05);

  o.per_axis = 7;
  EXPECT_THROW((void)reconstruct_density(path, dom, k, o), ContractViolation);
}

TEST(Ergodic, ProjectionClampsOutsideDomain) {
  const auto dom = box(1, -1, 1);
  const auto tr = path_of({v1(0.5), v1(3.0), v1(-4.0)}, 0.1);
  const auto path = project_trajectory(tr, dom);
  EXPECT_EQ(path.clamp_events, 2u);
  EXPECT_DOUBLE_EQ(path.points(0, 1), 1.0);
  EXPECT_DOUBLE_EQ(path.points(0, 2), -1.0);
}
