#include <gtest/gtest.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <sstream>

#include "gibbspath/paths.hpp"

using namespace gibbspath;

namespace {

// Smooth deterministic curve sampled on the grid; refining it is exact.
DiscretePath smooth_path(const PathGrid& g, double freq) {
  DiscretePath p{g, std::vector<double>(g.n_steps * g.d), 0};
  auto x = [&](double t, int c) { return std::sin(freq * (c + 1) * t) / (c + 1); };
  for (std::size_t k = 0; k < g.n_steps; ++k)
    for (int c = 0; c < g.d; ++c) {
      const double t0 = static_cast<double>(k) * g.dt, t1 = t0 + g.dt;
      p.increments[k * g.d + c] = x(t1, c) - x(t0, c);
    }
  return p;
}

}  // namespace

TEST(Grid, RejectsNonMultipleHorizon) {
  EXPECT_THROW(make_grid(1.0, 0.3, 1), InvalidArgument);
  const auto g = make_grid(4, 1.0 / 16, 3);
  EXPECT_EQ(g.n_steps, 64u);
  EXPECT_EQ(g.T, 4.0);
}

TEST(SamplePath, IncrementMomentsAndEndpointVariance) {
  const auto g = make_grid(2, 0.25, 1);
  const std::size_t paths = 10000;
  std::vector<double> step0(paths), endpoint(paths);
  for (std::size_t i = 0; i < paths; ++i) {
    const auto p = sample_path(g, stream_seed(11, i));
    step0[i] = p.increments[3];
    endpoint[i] = p.endpoint()[0];
  }
  const auto m = mean_se(step0);
  EXPECT_LT(std::abs(m.mean), 3 * m.se);
  std::vector<double> sq(paths);
  for (std::size_t i = 0; i < paths; ++i) sq[i] = endpoint[i] * endpoint[i];
  const auto v = mean_se(sq);
  EXPECT_LT(std::abs(v.mean - g.T), 3 * v.se);
}

TEST(SamplePath, SameSeedIdenticalPath) {
  const auto g = make_grid(1, 1.0 / 32, 3);
  EXPECT_EQ(sample_path(g, 99).increments, sample_path(g, 99).increments);
  EXPECT_NE(sample_path(g, 99).increments, sample_path(g, 100).increments);
}

TEST(Hamiltonian, ZeroPathBoxBand) {
  const KernelForm box(TimeCorrelation::compact_box(0.5), SpatialPotential::constant(1.0, 1));
  const double coarse = hamiltonian(zero_path(make_grid(1, 1.0 / 64, 1)), box);
  const double fine = hamiltonian(zero_path(make_grid(1, 1.0 / 4096, 1)), box);
  EXPECT_NEAR(fine, 0.75, 2e-4);
  EXPECT_LT(std::abs(fine - 0.75), std::abs(coarse - 0.75));
}

TEST(Hamiltonian, ZeroPotentialGivesZero) {
  const KernelForm f(TimeCorrelation::polynomial(2.5), SpatialPotential::constant(0.0, 2));
  EXPECT_EQ(hamiltonian(sample_path(make_grid(3, 0.1, 2), 5), f), 0.0);
}

TEST(Hamiltonian, TimeReversalSymmetry) {
  const auto p = sample_path(make_grid(4, 1.0 / 16, 3), 8);
  for (const char* name : {"poly_bounded", "compact_coulomb", "mollifier_product", "massless_nelson"}) {
    const auto k = make_preset(name);
    const double a = hamiltonian(p, k), b = hamiltonian(time_reverse(p), k);
    EXPECT_NEAR(a, b, 1e-12 * std::abs(a)) << name;
  }
}

TEST(Hamiltonian, AdditiveUnderKernelSums) {
  const auto p = sample_path(make_grid(2, 1.0 / 32, 3), 4);
  const auto rho = TimeCorrelation::compact_box(0.7);
  const KernelForm a(rho, SpatialPotential::constant(0.3, 3)), b(rho, SpatialPotential::constant(1.2, 3)),
      ab(rho, SpatialPotential::constant(1.5, 3));
  EXPECT_NEAR(hamiltonian(p, a) + hamiltonian(p, b), hamiltonian(p, ab), 1e-12 * hamiltonian(p, ab));
}

TEST(Hamiltonian, DependsOnlyOnIncrements) {
  // stored as increments: any anchor shift is structural, the energy is a
  // function of the increment vector alone
  const auto p = sample_path(make_grid(2, 1.0 / 32, 3), 4);
  auto q = p;
  q.seed = 12345;
  EXPECT_EQ(hamiltonian(p, make_preset("poly_bounded")), hamiltonian(q, make_preset("poly_bounded")));
}

TEST(Hamiltonian, FirstOrderQuadratureConvergence) {
  const KernelForm f(TimeCorrelation::compact_box(0.5), SpatialPotential::lorentzian(1.0, 3));
  for (int i = 0; i < 10; ++i) {
    const double freq = 0.5 + 0.37 * i;
    double h[4];
    for (int k = 0; k < 4; ++k) h[k] = hamiltonian(smooth_path(make_grid(2, std::ldexp(1.0, -5 - k), 3), freq), f);
    const double r1 = (h[2] - h[1]) / (h[1] - h[0]), r2 = (h[3] - h[2]) / (h[2] - h[1]);
    EXPECT_GE(r1, 0.3) << freq;
    EXPECT_LE(r1, 0.7) << freq;
    EXPECT_GE(r2, 0.3) << freq;
    EXPECT_LE(r2, 0.7) << freq;
  }
}

TEST(Hamiltonian, SingularDiagonalIsFiniteAndCoincidenceReported) {
  const auto k = make_preset("compact_coulomb", {{"eta", 0.0}});
  EXPECT_TRUE(std::isfinite(hamiltonian(sample_path(make_grid(1, 1.0 / 16, 3), 3), k)));
  EXPECT_THROW(hamiltonian(zero_path(make_grid(1, 1.0 / 16, 3)), k), NonFiniteValue);
}

TEST(LambdaField, ConstantPotential) {
  const auto p = sample_path(make_grid(1, 1.0 / 64, 2), 6);
  for (double a : {-2.0, 0.0, 3.0}) {
    const std::array<double, 2> x{a, 0.5};
    EXPECT_NEAR(lambda_field(p, SpatialPotential::constant(1.0, 2), x), 1.0, 1e-14);
  }
}

TEST(LambdaField, RefinementSelfConvergence) {
  const auto v = SpatialPotential::coulomb(1.0, 0.05, 3);
  const std::array<double, 3> x{0.2, -0.1, 0.3};
  for (int i = 0; i < 5; ++i) {
    auto p = sample_path(make_grid(1, 1.0 / 64, 3), 40 + i);
    std::vector<double> diffs;
    double prev = lambda_field(p, v, x);
    for (int k = 0; k < 6; ++k) {
      p = refine_path(p, stream_seed(50 + i, k));
      const double cur = lambda_field(p, v, x);
      diffs.push_back(std::abs(cur - prev));
      prev = cur;
    }
    EXPECT_LT(diffs.back(), diffs.front()) << i;
    EXPECT_LT(diffs.back(), 1e-2) << i;
  }
}

TEST(LambdaField, FarFromPathIsSmall) {
  const auto p = sample_path(make_grid(1, 1.0 / 128, 3), 77);
  const auto pos = p.positions();
  double rmax = 0;
  for (std::size_t i = 0; i < pos.size(); i += 3)
    rmax = std::max(rmax, std::sqrt(pos[i] * pos[i] + pos[i + 1] * pos[i + 1] + pos[i + 2] * pos[i + 2]));
  const std::array<double, 3> x{rmax + 10.5, 0, 0};
  EXPECT_LE(lambda_field(p, SpatialPotential::coulomb(1.0, 0.01, 3), x), 0.1);
}

TEST(LambdaField, ModulusShrinksWithSeparation) {
  const auto v = SpatialPotential::coulomb(1.0, 0.05, 3);
  const auto p = sample_path(make_grid(1, 1.0 / 256, 3), 21);
  double prev = 1e300;
  for (double delta : {0.2, 0.05, 0.0125, 0.003}) {
    double worst = 0;
    for (int k = 0; k < 40; ++k) {
      const double a = -0.8 + 0.04 * k;
      const std::array<double, 3> x1{a, 0.1, 0}, x2{a + delta, 0.1, 0};
      worst = std::max(worst, std::abs(lambda_field(p, v, x1) - lambda_field(p, v, x2)));
    }
    EXPECT_LT(worst, prev);
    prev = worst;
  }
  EXPECT_LT(prev, 0.05);
}

TEST(LambdaField, RequiresUnitHorizon) {
  const std::array<double, 1> x{0};
  EXPECT_THROW(lambda_field(sample_path(make_grid(2, 0.5, 1), 1), SpatialPotential::constant(1, 1), x),
               InvalidArgument);
}

TEST(LocalTime, TotalMassIsOne) {
  const auto p = sample_path(make_grid(1, 1.0 / 512, 1), 13);
  const double kappa = 0.05;
  // the occupation density integrates to one; trapezoid in x on a grid fine
  // enough to resolve the triangular mollifier exactly
  const auto pos = p.positions();
  const double lo = *std::min_element(pos.begin(), pos.end()) - kappa,
               hi = *std::max_element(pos.begin(), pos.end()) + kappa;
  const std::size_t n = 20000;
  const double h = (hi - lo) / static_cast<double>(n);
  double mass = 0;
  for (std::size_t i = 0; i <= n; ++i)
    mass += ((i == 0 || i == n) ? 0.5 : 1.0) * h * local_time(p, lo + h * static_cast<double>(i), kappa);
  EXPECT_NEAR(mass, 1.0, 1e-6);
}

TEST(LocalTime, MeanAtOriginAndSymmetry) {
  const std::size_t paths = 4000;
  std::vector<double> at0(paths), plus(paths), minus(paths);
  for (std::size_t i = 0; i < paths; ++i) {
    const auto p = sample_path(make_grid(1, 1.0 / 4096, 1), stream_seed(70, i));
    at0[i] = local_time(p, 0.0, 0.01);
    plus[i] = local_time(p, 0.3, 0.01);
    minus[i] = local_time(p, -0.3, 0.01);
  }
  const auto m = mean_se(at0);
  EXPECT_LT(std::abs(m.mean - std::sqrt(2 / kPi)), 3 * m.se + 0.01);
  std::vector<double> diff(paths);
  for (std::size_t i = 0; i < paths; ++i) diff[i] = plus[i] - minus[i];
  const auto d = mean_se(diff);
  EXPECT_LT(std::abs(d.mean), 3 * d.se);
  EXPECT_THROW(local_time(sample_path(make_grid(1, 0.5, 2), 1), 0.0, 0.1), InvalidArgument);
}

TEST(DiffusiveRescale, IdentityAndEndpoint) {
  const auto p = sample_path(make_grid(4, 1.0 / 16, 3), 31);
  const auto same = diffusive_rescale(p, 1.0);
  EXPECT_EQ(same.increments, p.increments);
  EXPECT_EQ(same.grid.T, p.grid.T);
  const auto r = diffusive_rescale(p, 0.5);
  EXPECT_DOUBLE_EQ(r.grid.T, 1.0);
  const auto e = p.endpoint(), er = r.endpoint();
  for (int c = 0; c < 3; ++c) EXPECT_NEAR(er[c], 0.5 * e[c], 1e-15);
}

TEST(Serialization, CsvAndBinaryRoundTrip) {
  const auto p = sample_path(make_grid(1, 1.0 / 8, 2), 123);
  std::stringstream csv;
  write_path_csv(p, csv);
  const auto q = read_path_csv(csv);
  EXPECT_EQ(q.increments, p.increments);
  EXPECT_EQ(q.seed, 123u);
  std::stringstream bin;
  write_path_binary(p, bin);
  const auto b = read_path_binary(bin);
  EXPECT_EQ(b.increments, p.increments);
  EXPECT_EQ(b.grid.n_steps, p.grid.n_steps);
}
