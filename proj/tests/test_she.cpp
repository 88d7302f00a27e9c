#include <gtest/gtest.h>

#include <array>
#include <cmath>

#include "gibbspath/she.hpp"

using namespace gibbspath;

namespace {

const MollifierPair& pair3() {
  static const MollifierPair p = make_mollifier_pair(0.5, 0.3, 3);
  return p;
}

McmcSettings quick_mcmc(std::size_t sweeps) {
  McmcSettings s;
  s.block_length = 16;
  s.sweeps = sweeps;
  s.burn_in = 100;
  s.thin = 2;
  s.chains = 2;
  return s;
}

SheConfig quick_config(double beta) {
  SheConfig c;
  c.beta = beta;
  c.t = 1;
  c.eps = 0.5;
  c.dt = 1.0 / 8;
  c.mcmc = quick_mcmc(1500);
  c.importance_samples = 4000;
  c.seed = 3;
  return c;
}

}  // namespace

TEST(Mollifiers, TimeSelfConvolutionHasUnitMass) {
  const auto& tab = *pair3().psi_conv;
  EXPECT_NEAR(tab.support(), 1.0, 1e-15);
  const std::size_t n = 40000;
  const double h = 2 * tab.support() / static_cast<double>(n);
  double s = 0;
  for (std::size_t i = 0; i <= n; ++i) s += h * tab(-tab.support() + h * static_cast<double>(i));
  EXPECT_NEAR(s, 1.0, 1e-4);
}

TEST(Mollifiers, SpatialSelfConvolutionAtOriginIsL2Norm) {
  for (int d : {1, 3}) {
    const auto p = make_mollifier_pair(0.5, 0.3, d);
    EXPECT_NEAR((*p.phi_conv)(0.0) / p.phi.l2_norm_squared(), 1.0, 1e-6) << d;
    EXPECT_NEAR(p.phi_conv->support(), 0.6, 1e-15);
    EXPECT_NEAR(p.phi.total_mass(), 1.0, 1e-10);
  }
}

TEST(Mollifiers, EffectiveCouplingIsHalfBetaSquared) {
  EXPECT_DOUBLE_EQ(effective_kernel(pair3(), 2.0).beta(), 2.0);
  EXPECT_DOUBLE_EQ(effective_kernel(pair3(), 0.0).beta(), 0.0);
}

TEST(GaussianIdentity, ZeroBetaGivesUnitFactor) {
  const auto p = sample_path(make_grid(1, 1.0 / 64, 3), 4);
  const auto r = gaussian_identity_check(p, pair3(), 0.0, 0.5);
  EXPECT_EQ(r.exponent_first, 0.0);
  EXPECT_EQ(r.max_rel_discrepancy, 0.0);
}

TEST(GaussianIdentity, ThreeLinesAgreeOnFrozenPaths) {
  for (int i = 0; i < 3; ++i) {
    const auto p = sample_path(make_grid(1, 1.0 / 256, 3), 20 + i);
    for (double eps : {1.0, 0.5}) {
      const auto r = gaussian_identity_check(p, pair3(), 1.0, eps);
      EXPECT_GT(r.exponent_first, 0.0);
      EXPECT_LE(r.max_rel_discrepancy, 1e-8) << i << " " << eps;
    }
  }
}

TEST(NoiseOracle, LognormalMeanMatchesQuadratureVariance) {
  const auto p = sample_path(make_grid(1, 1.0 / 32, 3), 9);
  const auto r = direct_noise_oracle(p, pair3(), 0.5, 1.0, 0.125, 0.1, 2000, 17, 1);
  EXPECT_NEAR(r.lattice_variance / r.quad_variance, 1.0, 0.1);
  EXPECT_LT(std::abs(r.z_score()), 4.0);
}

TEST(AnnealedRatio, ConstantInitialConditionIsExactlyOne) {
  auto c = quick_config(1.0);
  c.u0 = InitialCondition::constant(1.0);
  c.mcmc.sweeps = 300;
  EXPECT_DOUBLE_EQ(annealed_ratio(c, pair3(), 1).ratio, 1.0);
  c.route = RatioRoute::Importance;
  EXPECT_DOUBLE_EQ(annealed_ratio(c, pair3(), 1).ratio, 1.0);
}

TEST(AnnealedRatio, ZeroBetaIsHeatSemigroup) {
  for (auto route : {RatioRoute::Gibbs, RatioRoute::Importance}) {
    auto c = quick_config(0.0);
    c.route = route;
    c.x = {0.3, -0.2, 0.1};
    c.u0 = InitialCondition::cosine({1, 0.5, 0});
    const auto r = annealed_ratio(c, pair3(), 1);
    const double want = c.u0.heat(c.x, c.t);
    EXPECT_NEAR(want, std::exp(-0.5 * 1.25) * std::cos(0.3 - 0.1), 1e-14);
    EXPECT_LT(std::abs(r.ratio - want), 3 * r.se) << static_cast<int>(route);
    EXPECT_DOUBLE_EQ(r.T, 4.0);
  }
}

TEST(AnnealedRatio, TranslationCovariance) {
  // shifting u0 by a and x by a leaves the estimate unchanged path by path
  auto c = quick_config(1.0);
  c.mcmc.sweeps = 400;
  c.u0 = InitialCondition::gaussian_bump(0.8);
  c.x = {0.1, 0.0, 0.0};
  const auto a = annealed_ratio(c, pair3(), 1);
  c.u0 = c.u0.shifted({1.0, -2.0, 0.5});
  c.x = {1.1, -2.0, 0.5};
  const auto b = annealed_ratio(c, pair3(), 1);
  EXPECT_NEAR(a.ratio, b.ratio, 1e-12);
}

TEST(AnnealedRatio, RejectsLowDimensionAndBadEps) {
  auto c = quick_config(1.0);
  c.d = 2;
  c.x = {0, 0};
  EXPECT_THROW(annealed_ratio(c, make_mollifier_pair(0.5, 0.3, 2), 1), RejectedParameters);
  auto e = quick_config(1.0);
  e.eps = 1.5;
  EXPECT_THROW(annealed_ratio(e, pair3(), 1), InvalidArgument);
}

TEST(Homogenized, ConstantAndHeatClosedForms) {
  const std::array<double, 3> x{0.4, -0.3, 1.0};
  EXPECT_NEAR(homogenized_reference(2.0, x, InitialCondition::constant(1.0), 0.9), 1.0, 1e-13);
  for (const auto& u0 : {InitialCondition::cosine({1, 2, 0}), InitialCondition::gaussian_bump(0.7)})
    EXPECT_NEAR(homogenized_reference(0.8, x, u0, 1.0), u0.heat(x, 0.8), 1e-8);
  const double sigma2 = 0.947, t = 1.5;
  const double r2 = 0.16 + 0.09 + 1.0;
  EXPECT_NEAR(homogenized_reference(t, x, InitialCondition::quadratic(), sigma2), r2 + 3 * sigma2 * t, 1e-10);
  EXPECT_THROW(homogenized_reference(t, x, InitialCondition::quadratic(), 0.0), InvalidArgument);
}

TEST(GaussHermite, StandardNormalMoments) {
  const auto gh = gauss_hermite(20);
  double m0 = 0, m2 = 0, m4 = 0;
  for (std::size_t i = 0; i < gh.nodes.size(); ++i) {
    const double x2 = gh.nodes[i] * gh.nodes[i];
    m0 += gh.weights[i];
    m2 += gh.weights[i] * x2;
    m4 += gh.weights[i] * x2 * x2;
  }
  EXPECT_NEAR(m0, 1, 1e-13);
  EXPECT_NEAR(m2, 1, 1e-12);
  EXPECT_NEAR(m4, 3, 1e-11);
}

TEST(PartitionGrowth, ZeroBetaHasNoGrowth) {
  const auto g = partition_growth(pair3(), 0.0, 1.0, {1.0, 0.5, 0.25}, 1.0 / 8, quick_mcmc(100), 5, 1, 0.99, 1);
  EXPECT_EQ(g.theta0, 0.0);
  EXPECT_EQ(g.theta1, 0.0);
  EXPECT_FALSE(g.poor_fit);
  EXPECT_THROW(partition_growth(pair3(), 1.0, 1.0, {1.0, 0.5}, 1.0 / 8, quick_mcmc(100), 5, 1), InvalidArgument);
}
