#include "kle3/spatial.hpp"

#include <gtest/gtest.h>

using namespace kle3;

namespace {

SearchDomain unit_square() { return SearchDomain::box(Vec::Zero(2), Vec::Ones(2)); }

Mat dense_grid_1d(double lo, double hi, int n) {
  Mat G(1, n);
  for (int i = 0; i < n; ++i) G(0, i) = lo + (hi - lo) * (i + 0.5) / n;
  return G;
}

double sample_entropy(const SpatialDistribution& p, const Mat& S) {
  // -E_p[log p] by importance weighting of uniform samples
  const Vec d = p.density(S);
  const double vol = p.domain().volume();
  return -(d.array() * d.array().max(1e-300).log()).mean() * vol;
}

}  // namespace

TEST(Spatial, DomainValidation) {
  EXPECT_THROW(SearchDomain::box(Vec::Ones(2), Vec::Zero(2)), ContractViolation);
  EXPECT_THROW(SearchDomain(Vec::Zero(2), Vec::Ones(2), {0}), ContractViolation);
  const SearchDomain d(Vec::Zero(2), Vec::Ones(2), {1, 4});
  Vec x(3), u(2);
  x << 9, 0.25, 7;
  u << 6, 0.75;
  const Vec s = d.project(x, u);
  EXPECT_DOUBLE_EQ(s[0], 0.25);
  EXPECT_DOUBLE_EQ(s[1], 0.75);
  EXPECT_TRUE(d.uses_control(3));
}

TEST(Spatial, ClampCountsEvents) {
  const auto d = unit_square();
  Vec s(2);
  s << 1.5, 0.5;
  EXPECT_TRUE(d.clamp(s));
  EXPECT_DOUBLE_EQ(s[0], 1.0);
  EXPECT_FALSE(d.clamp(s));
}

TEST(Spatial, UniformSamplesDeterministicAndBounded) {
  const auto d = unit_square();
  Rng a(42), b(42);
  const Mat S1 = uniform_samples(d, 4, a), S2 = uniform_samples(d, 4, b);
  EXPECT_EQ(S1.cols(), 4);
  EXPECT_EQ(S1, S2);
  EXPECT_TRUE((S1.array() >= 0.0).all() && (S1.array() <= 1.0).all());
  EXPECT_THROW((void)uniform_samples(d, 0, a), ContractViolation);
}

TEST(Spatial, UniformSampleMean) {
  Rng rng(1);
  const Mat S = uniform_samples(unit_square(), 100000, rng);
  const Vec m = S.rowwise().mean();
  EXPECT_NEAR(m[0], 0.5, 0.01);
  EXPECT_NEAR(m[1], 0.5, 0.01);
}

TEST(Spatial, ConstantUtilityGivesUniform) {
  Rng rng(2);
  const SearchDomain d = SearchDomain::box(Vec::Constant(2, -1.0), Vec::Constant(2, 1.0));
  const auto p = boltzmann_softmax_distribution([](const Mat& S) { return Vec::Constant(S.cols(), 3.7); }, 2.0, d,
                                                10000, rng);
  const Mat Q = uniform_samples(d, 50, rng);
  for (Eigen::Index j = 0; j < Q.cols(); ++j) EXPECT_NEAR(p.density_at(Vec(Q.col(j))), 0.25, 1e-12);
}

TEST(Spatial, TinyTemperatureIsUniform) {
  Rng rng(3);
  const auto d = unit_square();
  const auto p = boltzmann_softmax_distribution([](const Mat& S) { return Vec(S.row(0).transpose() * 5.0); }, 1e-12,
                                                d, 10000, rng);
  const Mat Q = uniform_samples(d, 20, rng);
  for (Eigen::Index j = 0; j < Q.cols(); ++j) EXPECT_NEAR(p.density_at(Vec(Q.col(j))), 1.0, 1e-9);
}

TEST(Spatial, DiscreteSoftmaxHandArithmetic) {
  Vec u(2);
  u << 0.0, std::log(2.0);
  const Vec w = softmax_weights(u, 1.0);
  EXPECT_NEAR(w[0], 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(w[1], 2.0 / 3.0, 1e-15);
}

TEST(Spatial, AllMinusInfinityIsDegenerate) {
  Rng rng(4);
  const Vec ninf = Vec::Constant(3, -std::numeric_limits<double>::infinity());
  EXPECT_THROW((void)softmax_weights(ninf, 1.0), DegenerateDistribution);
  EXPECT_THROW((void)boltzmann_softmax_distribution(
                   [](const Mat& S) { return Vec::Constant(S.cols(), -std::numeric_limits<double>::infinity()); },
                   1.0, unit_square(), 100, rng),
               DegenerateDistribution);
}

TEST(Spatial, SampleAverageNormalization) {
  Rng rng(5);
  const auto d = unit_square();
  const auto p = boltzmann_softmax_distribution(
      [](const Mat& S) { return Vec((-(S.array() - 0.3).square().colwise().sum()).transpose()); }, 4.0, d, 10000, rng);
  const Mat Q = uniform_samples(d, 20000, rng);
  const double mass = p.density(Q).mean() * d.volume();
  EXPECT_GE(mass, 0.9);
  EXPECT_LE(mass, 1.1);
  EXPECT_GE(p.density(Q).minCoeff(), 0.0);
}

TEST(Spatial, ShiftInvarianceAndMonotonicity) {
  const auto d = unit_square();
  auto U = [](const Mat& S) { return Vec(S.colwise().sum().transpose()); };
  Rng a(6), b(6);
  const auto p1 = boltzmann_softmax_distribution(U, 3.0, d, 5000, a);
  const auto p2 = boltzmann_softmax_distribution([&](const Mat& S) { return Vec(U(S).array() + 123.0); }, 3.0, d, 5000, b);
  Rng rng(7);
  const Mat Q = uniform_samples(d, 100, rng);
  const Vec d1 = p1.density(Q), d2 = p2.density(Q);
  EXPECT_LT(((d1 - d2).array().abs() / d1.array()).maxCoeff(), 1e-10);
  const Vec u = U(Q);
  for (Eigen::Index i = 0; i + 1 < Q.cols(); ++i)
    if (u[i] > u[i + 1]) {
      EXPECT_GT(d1[i], d1[i + 1]);
    }
}

TEST(Spatial, EmptyGpGivesUniform) {
  Rng rng(8);
  const SearchDomain d = SearchDomain::box(Vec::Constant(1, -1.0), Vec::Constant(1, 1.0));
  auto gp = std::make_shared<GaussianProcess>(RbfKernel{1.0, Vec::Constant(1, 0.2)}, 1e-4);
  const auto p = ucb_target(gp, 2.0, 1.0, d, 1000, rng);
  EXPECT_NEAR(p.density_at(Vec::Constant(1, 0.3)), 0.5, 1e-12);
}

TEST(Spatial, UcbModeNearSingleHighObservation) {
  Rng rng(9);
  const SearchDomain d = SearchDomain::box(Vec::Constant(1, -1.0), Vec::Constant(1, 1.0));
  auto gp = std::make_shared<GaussianProcess>(RbfKernel{1.0, Vec::Constant(1, 0.2)}, 1e-4);
  gp->fit(Mat::Constant(1, 1, 0.4), Vec::Constant(1, 3.0));
  const auto p = ucb_target(gp, 0.5, 2.0, d, 4000, rng);
  const Mat G = dense_grid_1d(-1.0, 1.0, 2001);
  Eigen::Index arg;
  p.density(G).maxCoeff(&arg);
  EXPECT_NEAR(G(0, arg), 0.4, 0.2);
}

TEST(Spatial, ZeroKappaUsesMeanOnly) {
  Rng a(10), b(10);
  const SearchDomain d = SearchDomain::box(Vec::Constant(1, -1.0), Vec::Constant(1, 1.0));
  auto gp = std::make_shared<GaussianProcess>(RbfKernel{1.0, Vec::Constant(1, 0.3)}, 1e-4);
  Mat X(1, 2);
  X << -0.5, 0.5;
  Vec y(2);
  y << 1.0, -1.0;
  gp->fit(X, y);
  const auto p = ucb_target(gp, 0.0, 1.5, d, 3000, a);
  const auto ref = boltzmann_softmax_distribution([&](const Mat& S) { return gp->predict(S).mean; }, 1.5, d, 3000, b);
  const Mat G = dense_grid_1d(-1.0, 1.0, 50);
  EXPECT_LT((p.density(G) - ref.density(G)).norm(), 1e-12);
}

TEST(Spatial, VarianceTargetOctantMass) {
  Rng rng(11);
  const SearchDomain d = SearchDomain::box(Vec::Constant(3, -1.0), Vec::Constant(3, 1.0));
  auto field = [](const Mat& S) {
    Mat v = Mat::Ones(3, S.cols());
    for (Eigen::Index j = 0; j < S.cols(); ++j)
      if ((S.col(j).array() > 0.0).all()) v.col(j) *= 2.0;
    return v;
  };
  const auto p = variance_target(field, 3.0, d, 10000, rng);
  const Mat Q = uniform_samples(d, 40000, rng);
  const Vec dens = p.density(Q);
  std::array<double, 8> mass{};
  for (Eigen::Index j = 0; j < Q.cols(); ++j) {
    int o = 0;
    for (int k = 0; k < 3; ++k) o |= (Q(k, j) > 0.0 ? 1 : 0) << k;
    mass[static_cast<std::size_t>(o)] += dens[j];
  }
  for (int o = 0; o < 7; ++o) EXPECT_GT(mass[7], mass[static_cast<std::size_t>(o)]);
}

TEST(Spatial, ConstantVarianceIsUniform) {
  Rng rng(12);
  const SearchDomain d = SearchDomain::box(Vec::Constant(2, -1.0), Vec::Constant(2, 1.0));
  const auto p = variance_target([](const Mat& S) { return Mat::Constant(2, S.cols(), 0.3); }, 5.0, d, 1000, rng);
  EXPECT_NEAR(p.density_at(Vec::Zero(2)), 0.25, 1e-12);
}

TEST(Spatial, LargerTemperatureLowersEntropy) {
  const SearchDomain d = SearchDomain::box(Vec::Constant(2, -1.0), Vec::Constant(2, 1.0));
  auto field = [](const Mat& S) {
    Mat v(2, S.cols());
    for (Eigen::Index j = 0; j < S.cols(); ++j) v.col(j).setConstant(std::exp(-S.col(j).squaredNorm()));
    return v;
  };
  Rng a(13), b(13), c(14);
  const auto p1 = variance_target(field, 1.0, d, 20000, a);
  const auto p10 = variance_target(field, 10.0, d, 20000, b);
  const Mat Q = uniform_samples(d, 20000, c);
  EXPECT_LT(sample_entropy(p10, Q), sample_entropy(p1, Q));
}

TEST(Spatial, QValueTarget) {
  Rng rng(15);
  const SearchDomain state_only = SearchDomain::box(Vec::Constant(2, -1.0), Vec::Constant(2, 1.0));
  EXPECT_THROW((void)q_value_target([](const Mat& S) { return Vec::Zero(S.cols()); }, 1.0, state_only, 2, 1, 100, rng),
               ContractViolation);
  const SearchDomain sa(Vec::Constant(3, -1.0), Vec::Constant(3, 1.0), {0, 1, 2});
  const auto uni = q_value_target([](const Mat& S) { return Vec::Constant(S.cols(), 1.0); }, 1.0, sa, 2, 1, 1000, rng);
  EXPECT_NEAR(uni.density_at(Vec::Zero(3)), 1.0 / 8.0, 1e-12);
  const auto peaked = q_value_target([](const Mat& S) { return Vec(-S.colwise().squaredNorm().transpose()); }, 50.0,
                                     sa, 2, 1, 5000, rng);
  // dense-grid argmax oracle
  const int n = 21;
  double best = -1.0;
  Vec arg(3);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      for (int k = 0; k < n; ++k) {
        Vec s(3);
        s << -1.0 + 0.1 * i, -1.0 + 0.1 * j, -1.0 + 0.1 * k;
        const double v = peaked.density_at(s);
        if (v > best) {
          best = v;
          arg = s;
        }
      }
  EXPECT_LT(arg.norm(), 0.1 + 1e-9);
}

TEST(Spatial, GaussianMixtureIsNormalized) {
  const SearchDomain d = SearchDomain::box(Vec::Constant(2, -3.0), Vec::Constant(2, 3.0));
  const auto p = gaussian_mixture_distribution(
      d, {{Vec::Constant(2, 0.5), 0.04 * Mat::Identity(2, 2), 2.0}, {Vec::Constant(2, -0.5), 0.09 * Mat::Identity(2, 2), 1.0}});
  Rng rng(16);
  const Mat Q = uniform_samples(d, 200000, rng);
  EXPECT_NEAR(p.density(Q).mean() * d.volume(), 1.0, 0.03);
}

TEST(Gp, InterpolatesTrainingPoint) {
  GaussianProcess gp(RbfKernel{1.0, Vec::Constant(1, 0.3)}, 0.0);
  Mat X(1, 3);
  X << -0.5, 0.0, 0.7;
  Vec y(3);
  y << 0.2, -1.0, 0.5;
  gp.fit(X, y);
  const auto [m, s] = gp.predict_one(Vec::Constant(1, 0.0));
  EXPECT_NEAR(m, -1.0, 1e-8);
  EXPECT_LE(s, 1e-4);
}

TEST(Gp, RevertsToPriorFarAway) {
  GaussianProcess gp(RbfKernel{1.5, Vec::Constant(1, 0.1)}, 1e-4);
  gp.fit(Mat::Constant(1, 1, 0.0), Vec::Constant(1, 2.0));
  const auto [m, s] = gp.predict_one(Vec::Constant(1, 1.0));
  EXPECT_NEAR(m, 0.0, 1e-6);
  EXPECT_NEAR(s, 1.5, 1e-6);
}

TEST(Gp, TwoPointMidpointClosedForm) {
  const double a = 1.3, l = 0.4, noise = 0.01;
  GaussianProcess gp(RbfKernel{a, Vec::Constant(1, l)}, noise);
  Mat X(1, 2);
  X << 0.0, 0.5;
  Vec y(2);
  y << 1.0, -0.4;
  gp.fit(X, y);
  const double k12 = a * a * std::exp(-0.5 * 0.25 / (l * l));
  const double k11 = a * a + noise;
  const double ks = a * a * std::exp(-0.5 * 0.0625 / (l * l));
  const double det = k11 * k11 - k12 * k12;
  // K^-1 = [k11 -k12; -k12 k11] / det
  const double w1 = (k11 * ks - k12 * ks) / det, w2 = (-k12 * ks + k11 * ks) / det;
  const double mean = w1 * y[0] + w2 * y[1];
  const double var = a * a - (w1 * ks + w2 * ks);
  const auto [m, s] = gp.predict_one(Vec::Constant(1, 0.25));
  EXPECT_NEAR(m, mean, 1e-10);
  EXPECT_NEAR(s, std::sqrt(var), 1e-10);
}

TEST(Gp, DuplicateObservationsLeaveMeanUnchanged) {
  GaussianProcess g1(RbfKernel{1.0, Vec::Constant(1, 0.3)}, 1e-3), g2(RbfKernel{1.0, Vec::Constant(1, 0.3)}, 1e-3);
  Mat X1(1, 2), X2(1, 3);
  X1 << -0.2, 0.4;
  X2 << -0.2, 0.4, 0.4;
  Vec y1(2), y2(3);
  y1 << 0.5, 1.0;
  y2 << 0.5, 1.0, 1.0;
  g1.fit(X1, y1);
  g2.fit(X2, y2);
  // the duplicate halves the effective noise, so compare at the noise-free limit
  GaussianProcess n1(RbfKernel{1.0, Vec::Constant(1, 0.3)}, 0.0), n2(RbfKernel{1.0, Vec::Constant(1, 0.3)}, 0.0);
  n1.fit(X1, y1);
  n2.fit(X2, y2);
  for (double q : {-0.8, 0.0, 0.3, 0.9})
    EXPECT_NEAR(n1.predict_one(Vec::Constant(1, q)).first, n2.predict_one(Vec::Constant(1, q)).first, 1e-6);
}

TEST(Gp, GradientsMatchFiniteDifferences) {
  GaussianProcess gp(RbfKernel{1.0, Vec::Constant(2, 0.5)}, 1e-3);
  Rng rng(17);
  const Mat X = Mat(standard_normal(rng, 10).reshaped(2, 5));
  gp.fit(X, standard_normal(rng, 5));
  const Vec q = standard_normal(rng, 2) * 0.5;
  const auto [gm, gs] = gp.gradients(q);
  for (int d = 0; d < 2; ++d) {
    Vec qp = q, qm = q;
    qp[d] += 1e-6;
    qm[d] -= 1e-6;
    const auto a = gp.predict_one(qp), b = gp.predict_one(qm);
    EXPECT_NEAR(gm[d], (a.first - b.first) / 2e-6, 1e-6);
    EXPECT_NEAR(gs[d], (a.second - b.second) / 2e-6, 1e-6);
  }
}

TEST(Gp, UcbMonotoneInKappa) {
  GaussianProcess gp(RbfKernel{1.0, Vec::Constant(1, 0.3)}, 1e-3);
  gp.fit(Mat::Constant(1, 1, 0.0), Vec::Constant(1, 1.0));
  const Mat Q = dense_grid_1d(-1, 1, 30);
  const auto pred = gp.predict(Q);
  EXPECT_LT((ucb(gp, Q, 2.0) - (pred.mean + 2.0 * pred.stddev)).norm(), 1e-15);
  EXPECT_TRUE(((ucb(gp, Q, 3.0) - ucb(gp, Q, 1.0)).array() >= 0.0).all());
}

TEST(Gp, RejectsMismatchedData) {
  GaussianProcess gp(RbfKernel{1.0, Vec::Constant(1, 0.3)}, 1e-3);
  EXPECT_THROW(gp.fit(Mat::Zero(1, 3), Vec::Zero(2)), ContractViolation);
}
