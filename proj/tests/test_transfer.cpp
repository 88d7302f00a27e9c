#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "gibbspath/she.hpp"
#include "gibbspath/transfer.hpp"

using namespace gibbspath;

namespace {

InteractionKernel box_lorentz(double beta, int d = 3, double half_width = 0.5) {
  return InteractionKernel(KernelForm(TimeCorrelation::compact_box(half_width), SpatialPotential::lorentzian(1.0, d)),
                           beta);
}

struct Built {
  TransferEnsemble e;
  TransferOperator op;
  SpectralResult s;
  TiltedChain chain;
};

Built build(const InteractionKernel& k, std::size_t N, std::uint64_t seed, double dt = 0.125) {
  Built b;
  b.e = sample_block_measure(k, 1.0, dt, N, seed, {}, 1);
  b.op = build_operator(b.e, k, 1);
  b.s = perron_eigenpair(b.op);
  b.chain = tilted_chain(b.s, b.op);
  return b;
}

}  // namespace

TEST(BlockMeasure, ZeroBetaIsUntilted) {
  const auto e = sample_block_measure(box_lorentz(0.0), 1.0, 0.125, 300, 1, {}, 1);
  for (double w : e.weights) EXPECT_DOUBLE_EQ(w, 1.0 / 300);
  EXPECT_EQ(e.log_z, 0.0);
  EXPECT_EQ(e.m, 8u);
  for (std::size_t i = 0; i < e.size(); ++i)
    for (int c = 0; c < e.d; ++c) EXPECT_EQ(e.block(i)[c], 0.0);
}

TEST(BlockMeasure, NormalizerMonotoneInBeta) {
  double prev = 0, prev_se = 0;
  for (double beta : {0.0, 0.5, 1.0, 2.0}) {
    const auto e = sample_block_measure(box_lorentz(beta), 1.0, 0.125, 2000, 3, {}, 1);
    EXPECT_GE(e.log_z, prev - 3 * std::hypot(e.log_z_se, prev_se));
    prev = e.log_z;
    prev_se = e.log_z_se;
  }
}

TEST(BlockMeasure, TwoStepToyAgainstGaussHermite) {
  const auto k = box_lorentz(1.0, 1, 1.0);
  const auto grid = make_grid(1, 0.5, 1);
  const auto gh = gauss_hermite(40);
  double z = 0;
  for (std::size_t i = 0; i < gh.nodes.size(); ++i)
    for (std::size_t j = 0; j < gh.nodes.size(); ++j) {
      DiscretePath p{grid, {std::sqrt(0.5) * gh.nodes[i], std::sqrt(0.5) * gh.nodes[j]}, 0};
      z += gh.weights[i] * gh.weights[j] * std::exp(hamiltonian(p, k));
    }
  const auto e = sample_block_measure(k, 1.0, 0.5, 20000, 4, {}, 1);
  EXPECT_NEAR(std::exp(e.log_z) / z, 1.0, 0.01);
}

TEST(BlockMeasure, McmcModeMatchesPriorNormalizer) {
  EnsembleOptions opt;
  opt.mode = BlockSampling::Mcmc;
  const auto k = box_lorentz(1.0);
  const auto a = sample_block_measure(k, 1.0, 0.125, 400, 5, opt, 1);
  for (double w : a.weights) EXPECT_DOUBLE_EQ(w, 1.0 / 400);
  const auto b = sample_block_measure(k, 1.0, 0.125, 400, 5, {}, 1);
  EXPECT_LT(std::abs(a.log_z - b.log_z), 3 * std::hypot(a.log_z_se, b.log_z_se));
}

TEST(Coupling, ZeroBetaAndNegationSymmetry) {
  const auto g = make_grid(1, 0.125, 3);
  const auto a = sample_path(g, 1), b = sample_path(g, 2);
  EXPECT_EQ(coupling_k(a, b, box_lorentz(0.0)), 0.0);
  auto na = a, nb = b;
  for (double& v : na.increments) v = -v;
  for (double& v : nb.increments) v = -v;
  const auto k = box_lorentz(1.0);
  const double kab = coupling_k(a, b, k);
  EXPECT_GT(kab, 0.0);
  EXPECT_NEAR(coupling_k(na, nb, k), kab, 1e-12 * kab);
}

TEST(Coupling, VanishesWithoutTimeOverlap) {
  // box half-width below one step: no pair straddles the block boundary except the shared node
  const auto k = box_lorentz(1.0, 3, 0.05);
  const auto g = make_grid(1, 0.125, 3);
  const auto a = sample_path(g, 1), b = sample_path(g, 2);
  const double v = coupling_k(a, b, k);
  // only the coincident boundary node pairs with itself
  EXPECT_NEAR(v, 2 * 1.0 * (0.0625 * 0.0625) * 1.0, 1e-15);
}

TEST(Coupling, RefinementSelfConvergence) {
  const auto k = box_lorentz(1.0);
  auto a = sample_path(make_grid(1, 0.125, 3), 11), b = sample_path(make_grid(1, 0.125, 3), 12);
  double prev = coupling_k(a, b, k);
  std::vector<double> diffs;
  for (int r = 0; r < 5; ++r) {
    a = refine_path(a, stream_seed(13, r));
    b = refine_path(b, stream_seed(14, r));
    const double cur = coupling_k(a, b, k);
    diffs.push_back(std::abs(cur - prev));
    prev = cur;
  }
  EXPECT_LT(diffs.back(), diffs.front());
  EXPECT_LT(diffs.back(), 0.02 * prev);
}

TEST(Operator, ZeroBetaAllOnes) {
  const auto b = build(box_lorentz(0.0), 100, 2);
  EXPECT_EQ(b.op.K.minCoeff(), 1.0);
  EXPECT_EQ(b.op.K.maxCoeff(), 1.0);
  EXPECT_NEAR(b.s.lambda0, 1.0, 1e-12);
  EXPECT_NEAR(b.s.psi.minCoeff(), 1.0, 1e-12);
  EXPECT_NEAR(b.s.delta, 1.0, 1e-12);
  for (Eigen::Index i = 0; i < 5; ++i)
    for (Eigen::Index j = 0; j < 5; ++j) EXPECT_NEAR(b.chain.P(i, j), b.op.w(j), 1e-14);
  const auto curve = tv_contraction(b.chain, 3);
  EXPECT_LT(curve.spread[0], 1e-12);
}

TEST(Operator, EntriesAtLeastOneAndHilbertSchmidtStable) {
  const auto k = box_lorentz(1.0);
  const auto a = build(k, 400, 3), b = build(k, 800, 4);
  EXPECT_GE(a.op.min_log_k, 0.0);
  EXPECT_GE(a.op.K.minCoeff(), 1.0);
  EXPECT_NEAR(std::exp(a.op.log_hs - b.op.log_hs), 1.0, 0.05);
  EXPECT_LE(a.s.log_lambda0, 0.5 * a.op.log_hs + 1e-12);
}

TEST(Perron, LambdaMonotoneAndAboveOne) {
  double prev = 0;
  for (double beta : {0.0, 0.5, 1.0, 1.5}) {
    const auto b = build(box_lorentz(beta), 300, 6);
    EXPECT_GE(b.s.log_lambda0, prev - 1e-12);
    if (beta >= 0.5) EXPECT_GT(b.s.lambda0 - 1, 1e-3);
    EXPECT_GT(b.s.psi.minCoeff(), 0.0);
    EXPECT_NEAR(b.s.psi.maxCoeff(), 1.0, 1e-15);
    EXPECT_GT(b.s.delta, 0.0);
    EXPECT_LE(b.s.delta, 1.0);
    prev = b.s.log_lambda0;
  }
}

TEST(TiltedChainTest, StochasticDoeblinAndStationary) {
  const auto b = build(box_lorentz(1.0), 300, 7);
  EXPECT_LE(b.chain.row_defect, 1e-6);
  EXPECT_GE(b.chain.min_ratio, b.chain.doeblin_floor);
  EXPECT_LE(b.chain.stationarity_tv, 1e-6);
  EXPECT_GT(b.chain.P.minCoeff(), 0.0);
  // row defect is the eigenpair residual, up to rounding
  EXPECT_NEAR(b.chain.row_defect, b.s.residual, 1e-10);
}

TEST(TvContraction, GeometricAndMonotone) {
  const auto b = build(box_lorentz(2.0), 300, 8);
  const auto c = tv_contraction(b.chain, 8);
  EXPECT_TRUE(c.monotone);
  for (std::size_t n = 1; 2 * n <= c.spread.size(); ++n)
    if (c.spread[n - 1] > 1e-12) EXPECT_LE(c.spread[2 * n - 1], (1 - 1e-3) * c.spread[n - 1]);
  EXPECT_GT(c.rate, 0.0);
}

TEST(Marginal, ZeroBetaAndSelfTest) {
  const auto b = build(box_lorentz(0.0), 1000, 9);
  std::vector<double> stat(b.e.size());
  for (std::size_t i = 0; i < stat.size(); ++i) stat[i] = b.e.displacement(i, 0);
  // Wiener block samples of the same statistic
  std::vector<double> wiener(4000);
  Rng rng(10);
  for (double& v : wiener) v = rng.normal();
  const auto m = marginal_vs_gibbs(b.chain, 0, 1, stat, wiener, 20);
  const double floor = std::sqrt(20.0 / 1000.0);
  EXPECT_LT(m.tv, floor);

  // same chain, two ensemble seeds: draws from the second seed's stationary law
  const auto k = box_lorentz(1.0);
  const auto c1 = build(k, 1000, 21), c2 = build(k, 1000, 22);
  std::vector<double> s1(1000), other;
  for (std::size_t i = 0; i < 1000; ++i) s1[i] = c1.e.displacement(i, 0);
  std::vector<double> cdf(1000);
  double acc = 0;
  for (std::size_t i = 0; i < 1000; ++i) cdf[i] = (acc += c2.chain.pi_star(static_cast<Eigen::Index>(i)));
  for (int r = 0; r < 4000; ++r) {
    const double u = rng.uniform() * acc;
    const auto j = static_cast<std::size_t>(std::lower_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
    other.push_back(c2.e.displacement(std::min<std::size_t>(j, 999), 0));
  }
  EXPECT_LT(marginal_vs_gibbs(c1.chain, 0, 20, s1, other, 20).tv, floor);
}

TEST(Marginal, DecreasesTowardGibbsBlockLaw) {
  const auto k = box_lorentz(2.0);
  const auto b = build(k, 800, 23);
  // statistic: squared endpoint displacement of the block
  std::vector<double> stat(b.e.size());
  std::size_t start = 0;
  for (std::size_t i = 0; i < stat.size(); ++i) {
    double r2 = 0;
    for (int c = 0; c < 3; ++c) r2 += b.e.displacement(i, c) * b.e.displacement(i, c);
    stat[i] = r2;
    if (r2 > stat[start]) start = i;
  }
  // Gibbs block marginal: a middle block of a long path
  McmcSettings s;
  s.block_length = 8;
  s.sweeps = 6000;
  s.burn_in = 300;
  s.thin = 2;
  s.chains = 4;
  GibbsConfig cfg{k, make_grid(9, 0.125, 3), s, 24};
  auto run = run_chains(
      cfg,
      [](const GibbsChain& ch) {
        double r2 = 0;
        for (int c = 0; c < 3; ++c) {
          const double u = ch.node(40)[c] - ch.node(32)[c];
          r2 += u * u;
        }
        return std::vector<double>{r2};
      },
      1);
  std::vector<double> gibbs;
  for (const auto& chain : run.samples)
    for (const auto& v : chain) gibbs.push_back(v[0]);
  double prev = 1e300;
  const double floor = std::sqrt(20.0 / 800.0);
  for (std::size_t n : {1, 2, 4, 8}) {
    const double tv = marginal_vs_gibbs(b.chain, start, n, stat, gibbs, 20).tv;
    EXPECT_LE(tv, prev + floor) << n;
    prev = tv;
  }
  EXPECT_LT(prev, 2 * floor);
}

TEST(Poisson, ConstantAndIidCases) {
  const auto b = build(box_lorentz(1.0), 200, 25);
  const Eigen::VectorXd ones = Eigen::VectorXd::Constant(200, 3.5);
  const auto s = solve_poisson(b.chain, ones);
  EXPECT_LT(s.u_direct.cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT(s.u_neumann.cwiseAbs().maxCoeff(), 1e-12);

  const auto z = build(box_lorentz(0.0), 200, 26);
  const auto f = displacement_observable(z.e, 0);
  const auto u = solve_poisson(z.chain, f);
  EXPECT_LT((u.u_direct - u.f_centered).cwiseAbs().maxCoeff(), 1e-12);

  const auto g = solve_poisson(b.chain, displacement_observable(b.e, 1));
  EXPECT_LT((g.u_neumann - g.u_direct).cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_LT(g.residual_direct, 1e-10);
}

TEST(Variance, ZeroBetaRoutesAreOne) {
  const auto b = build(box_lorentz(0.0), 2000, 27);
  const auto v = endpoint_variance(b.e, b.chain);
  // the stratified endpoint displacements make the node variance nearly exact
  EXPECT_NEAR(v.dirichlet, 1.0, 0.02);
  EXPECT_NEAR(v.classical, 1.0, 0.02);
  EXPECT_NEAR(v.autocov, 1.0, 0.02);
  EXPECT_NEAR(v.dirichlet, v.classical, 1e-10);
}

TEST(Variance, NonConstantObservableHasPositiveVariance) {
  const auto b = build(box_lorentz(1.0), 300, 28);
  const auto v = endpoint_variance(b.e, b.chain);
  EXPECT_GT(v.classical, 0.0);
  EXPECT_LT(v.classical, 1.0);
}

TEST(FreeEnergy, ZeroBetaAndOneStepOracle) {
  const auto z = build(box_lorentz(0.0), 100, 29);
  const auto pz = free_energy_check(z.op, z.s, {1, 4}, 200, 10, 30, 1);
  for (const auto& p : pz) {
    EXPECT_NEAR(p.exact, 0.0, 1e-12);
    EXPECT_NEAR(p.estimate, 0.0, 1e-12);
    EXPECT_NEAR(p.log_lambda0, 0.0, 1e-12);
  }
  const auto b = build(box_lorentz(1.0), 300, 31);
  const auto p1 = free_energy_check(b.op, b.s, {1}, 500, 40, 32, 1)[0];
  EXPECT_LT(std::abs(p1.estimate - p1.exact), 3 * p1.estimate_se + 1e-12);
}

TEST(FreeEnergy, GapShrinksWithChainLength) {
  const auto b = build(box_lorentz(1.0), 300, 33);
  const auto pts = free_energy_check(b.op, b.s, {4, 8, 16}, 500, 8, 34, 1);
  EXPECT_GT(pts[0].exact_gap(), pts[1].exact_gap());
  EXPECT_GT(pts[1].exact_gap(), pts[2].exact_gap());
}

TEST(EntropyGap, CompactSupportInsideBlockIsZero) {
  McmcSettings s;
  s.block_length = 8;
  s.sweeps = 200;
  s.burn_in = 20;
  s.chains = 2;
  const auto r = block_entropy_gap(box_lorentz(1.0), 8, 0.125, 1.0, s, 35, 1);
  EXPECT_EQ(r.neglected_mean, 0.0);
  EXPECT_EQ(r.envelope, 0.0);
}

TEST(EntropyGap, EstimateBelowEnvelope) {
  McmcSettings s;
  s.block_length = 8;
  s.sweeps = 400;
  s.burn_in = 50;
  s.chains = 2;
  const auto k = make_preset("poly_bounded", {{"d", 3}});
  const auto r = block_entropy_gap(k, 16, 0.125, 16 / std::log(16.0), s, 36, 1);
  EXPECT_GT(r.neglected_mean, 0.0);
  EXPECT_LE(r.neglected_mean, r.envelope_grid);
  EXPECT_NEAR(r.tv_bound, std::sqrt(0.5 * r.entropy_bound), 1e-15);
}

TEST(Spectrum, SupInfRowMassBoundedAcrossBlockLengths) {
  const auto k = box_lorentz(1.0);
  for (double L : {1.0, 2.0, 4.0}) {
    const auto e = sample_block_measure(k, L, 0.25, 300, 37, {}, 1);
    const auto op = build_operator(e, k, 1);
    const auto lm = log_row_mass(op);
    const double ratio = std::exp(*std::max_element(lm.begin(), lm.end()) - *std::min_element(lm.begin(), lm.end()));
    EXPECT_LT(ratio, 10.0) << L;
  }
}

TEST(Spectrum, RunIsDeterministic) {
  const auto k = box_lorentz(1.0);
  const auto a = run_spectrum(k, 1.0, 0.125, 200, 38, {}, 1), b = run_spectrum(k, 1.0, 0.125, 200, 38, {}, 1);
  EXPECT_EQ(a.record.lambda0, b.record.lambda0);
  EXPECT_EQ(a.record.sigma2_classical, b.record.sigma2_classical);
}

TEST(Spectrum, RejectsRangeBeyondBlock) {
  const auto k = box_lorentz(1.0, 3, 1.5);
  const auto e = sample_block_measure(k, 1.0, 0.125, 50, 39, {}, 1);
  EXPECT_THROW(build_operator(e, k, 1), InvalidArgument);
}
