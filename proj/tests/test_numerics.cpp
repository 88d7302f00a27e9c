#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "gibbspath/numerics.hpp"

using namespace gibbspath;

TEST(Rng, SameSeedSameStream) {
  Rng a(42), b(42), c(43);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.normal(), b.normal());
  EXPECT_NE(Rng(42).normal(), c.normal());
}

TEST(Rng, StreamSeedsDiffer) {
  EXPECT_NE(stream_seed(1, 0), stream_seed(1, 1));
  EXPECT_NE(stream_seed(1, 0), stream_seed(2, 0));
  EXPECT_EQ(stream_seed(7, 3), stream_seed(7, 3));
}

TEST(Quadrature, GaussLegendreIntegratesPolynomialsExactly) {
  const auto rule = gauss_legendre(6, 0.0, 2.0);
  double s = 0;
  for (std::size_t i = 0; i < rule.nodes.size(); ++i) s += rule.weights[i] * std::pow(rule.nodes[i], 11);
  EXPECT_NEAR(s, std::pow(2.0, 12) / 12, 1e-10);
}

TEST(Quadrature, CompositeGaussSmoothIntegrand) {
  const auto rule = composite_gauss(8, 8, 0.0, kPi);
  double s = 0;
  for (std::size_t i = 0; i < rule.nodes.size(); ++i) s += rule.weights[i] * std::sin(rule.nodes[i]);
  EXPECT_NEAR(s, 2.0, 1e-13);
}

TEST(Quadrature, TanhSinhEndpointSingularities) {
  // Beta(1/2 - a, 1/2) with singularities at both ends
  const double a = 0.4;
  const double got = tanh_sinh(
      [&](double, double l, double r) { return std::pow(l, -0.5 - a) * std::pow(r, -0.5); }, 0.0, 1.0, 7, 1.0, 5.0);
  const double want = std::tgamma(0.5 - a) * std::tgamma(0.5) / std::tgamma(1 - a);
  EXPECT_NEAR(got / want, 1.0, 1e-8);
}

TEST(Quadrature, TrapezoidWeights) {
  const auto w = trapezoid_weights(4, 0.25);
  ASSERT_EQ(w.size(), 5u);
  EXPECT_DOUBLE_EQ(w.front(), 0.125);
  EXPECT_DOUBLE_EQ(w[2], 0.25);
  double s = 0;
  for (double v : w) s += v;
  EXPECT_DOUBLE_EQ(s, 1.0);
}

TEST(Statistics, MeanAndVariance) {
  std::vector<double> x{1, 2, 3, 4};
  EXPECT_DOUBLE_EQ(mean(x), 2.5);
  EXPECT_DOUBLE_EQ(sample_variance(x), 5.0 / 3.0);
  const auto m = mean_se(x);
  EXPECT_NEAR(m.se, std::sqrt(5.0 / 12.0), 1e-15);
}

TEST(Statistics, BatchMeansOnIidMatchesNaiveSe) {
  Rng rng(3);
  std::vector<double> x(64000);
  for (double& v : x) v = rng.normal();
  const auto b = batch_means(x, 32), n = mean_se(x);
  EXPECT_NEAR(b.se / n.se, 1.0, 0.35);
  EXPECT_LT(std::abs(b.mean), 3 * b.se);
}

TEST(Statistics, LinearFitExactLine) {
  std::vector<double> x{0, 1, 2, 3}, y{1, 3, 5, 7};
  const auto f = linear_fit(x, y);
  EXPECT_NEAR(f.slope, 2, 1e-14);
  EXPECT_NEAR(f.intercept, 1, 1e-14);
  EXPECT_NEAR(f.r_squared, 1, 1e-14);
  EXPECT_NEAR(f.slope_se, 0, 1e-12);
}

TEST(Statistics, NormalQuantileInvertsCdf) {
  for (double p : {0.01, 0.2, 0.5, 0.9, 0.999}) EXPECT_NEAR(normal_cdf(normal_quantile(p)), p, 1e-8);
}

TEST(Histograms, BinnedDistributionClampsAndNormalizes) {
  const auto edges = uniform_edges(0, 1, 4);
  std::vector<double> v{-5, 0.1, 0.3, 0.6, 0.9, 7};
  const auto h = binned_distribution(v, {}, edges);
  ASSERT_EQ(h.size(), 4u);
  EXPECT_DOUBLE_EQ(h[0], 2.0 / 6);
  EXPECT_DOUBLE_EQ(h[3], 2.0 / 6);
  EXPECT_DOUBLE_EQ(tv_distance(h, h), 0.0);
}

TEST(Parallel, ResultIndependentOfWorkerCount) {
  auto run = [](std::size_t threads) {
    std::vector<double> out(97);
    parallel_for(out.size(), threads, [&](std::size_t i) {
      Rng rng(stream_seed(5, i));
      out[i] = rng.normal();
    });
    return out;
  };
  EXPECT_EQ(run(1), run(4));
}
