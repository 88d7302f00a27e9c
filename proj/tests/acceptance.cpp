// Acceptance run: one PASS/FAIL line per criterion, exit 0 iff all pass.
// Every criterion returns a fingerprint of its outputs; the replay
// criterion recomputes them under the same seeds and threads and compares bits.

#include <chrono>
#include <cstdarg>
#include <cstdio>
#include <cstring>
#include <functional>
#include <string>
#include <vector>

#include "gibbspath/she.hpp"
#include "gibbspath/transfer.hpp"
#include "gibbspath/verify.hpp"

using namespace gibbspath;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
  std::vector<double> fingerprint;
};

std::string fmt(const char* f, ...) __attribute__((format(printf, 1, 2)));
std::string fmt(const char* f, ...) {
  char buf[1024];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof buf, f, ap);
  va_end(ap);
  return buf;
}

void check(Outcome& o, bool ok, const std::string& what) {
  o.pass = o.pass && ok;
  o.detail += (o.detail.empty() ? "" : "; ") + what + (ok ? "" : " [x]");
}

constexpr std::size_t kThreads = 1;
constexpr double kDt = 1.0 / 16;
constexpr std::size_t kNodes = 2000;

McmcSettings acceptance_mcmc() {
  McmcSettings s;
  s.block_length = 16;
  s.sweeps = 20000;
  s.burn_in = 500;
  s.thin = 2;
  s.chains = 4;
  return s;
}

const MollifierPair& pair3() {
  static const MollifierPair p = make_mollifier_pair(0.5, 0.3, 3);
  return p;
}

InteractionKernel noise_kernel(double beta) { return effective_kernel(pair3(), beta); }

// Shared between criteria: sigma^2 from the strict-CLT run feeds the
// homogenized reference.
double g_sigma2_mcmc = std::numeric_limits<double>::quiet_NaN();
std::vector<std::vector<double>> g_endpoint_samples;

// ---------------------------------------------------------------------------

Outcome beta_zero_suite() {
  Outcome o;
  const auto k0 = noise_kernel(0.0);
  const auto sr = run_spectrum(k0, 1.0, kDt, kNodes, 101, {}, kThreads);
  const auto& s = sr.spectral;
  const double psi_dev = (s.psi.array() - 1.0).abs().maxCoeff();
  check(o, std::abs(s.lambda0 - 1) <= 1e-10, fmt("|lambda0-1|=%.2e", std::abs(s.lambda0 - 1)));
  check(o, psi_dev <= 1e-10, fmt("max|psi0-1|=%.2e", psi_dev));
  check(o, std::abs(s.delta - 1) <= 1e-10, fmt("delta=%.12g", s.delta));
  // the sigma^2 routes reduce to the ensemble variance of one block displacement
  const double tol = 3 * std::sqrt(2.0 / static_cast<double>(kNodes));
  const auto& v = sr.variance;
  check(o, std::abs(v.dirichlet - 1) <= tol && std::abs(v.classical - 1) <= tol && std::abs(v.autocov - 1) <= tol,
        fmt("sigma2 routes %.4f %.4f %.4f (tol %.3f)", v.dirichlet, v.classical, v.autocov, tol));

  auto m = acceptance_mcmc();
  m.sweeps = 12500;
  m.thin = 5;
  const GibbsConfig gc{k0, make_grid(16, kDt, 3), m, 102};
  const auto st = estimate_endpoint(gc, kThreads);
  const auto iso = st.isotropic_variance();
  const std::size_t n = st.samples[0].size() * st.samples.size();
  check(o, n >= 10000 && std::abs(iso.mean - 1) <= 3 * iso.se,
        fmt("MCMC var %.4f +- %.4f (%zu samples)", iso.mean, iso.se, n));

  SheConfig sc;
  sc.beta = 0;
  sc.t = 1;
  sc.eps = 0.5;
  sc.x = {0.3, -0.2, 0.1};
  sc.u0 = InitialCondition::cosine({1, 0.5, 0});
  sc.mcmc = acceptance_mcmc();
  sc.mcmc.sweeps = 5000;
  sc.seed = 103;
  const auto r = annealed_ratio(sc, pair3(), kThreads);
  const double exact = std::exp(-0.5 * sc.t * 1.25) * std::cos(0.3 - 0.1);
  check(o, std::abs(r.ratio - exact) <= 3 * r.se, fmt("SHE ratio %.4f vs %.4f (se %.4f)", r.ratio, exact, r.se));
  o.fingerprint = {s.lambda0, s.delta, v.dirichlet, v.classical, v.autocov, iso.mean, iso.se, r.ratio, r.se};
  return o;
}

Outcome strict_clt() {
  Outcome o;
  const auto k = noise_kernel(1.0);
  const GibbsConfig gc{k, make_grid(64, kDt, 3), acceptance_mcmc(), 201};
  const auto st = estimate_endpoint(gc, kThreads);
  const auto iso = st.isotropic_variance();
  g_sigma2_mcmc = iso.mean;
  g_endpoint_samples = st.samples;
  const std::size_t n = st.samples[0].size();
  check(o, n >= 10000 && !st.flagged, fmt("%zu samples/coord, acceptance %.3f", n, st.acceptance));
  check(o, iso.mean - 3 * iso.se > 0 && iso.mean + 3 * iso.se < 1,
        fmt("MCMC sigma2 %.4f +- %.4f", iso.mean, iso.se));

  const auto sr = run_spectrum(k, 1.0, kDt, kNodes, 202, {}, kThreads);
  // transfer SE from independent replicate ensembles
  std::vector<double> reps{sr.record.sigma2_classical};
  for (std::uint64_t r = 1; r < 4; ++r)
    reps.push_back(run_spectrum(k, 1.0, kDt, kNodes, stream_seed(202, r), {}, kThreads).record.sigma2_classical);
  const auto tr = mean_se(reps);
  const double t_se = tr.se * student_t975(reps.size() - 1) / 1.96;
  check(o, sr.record.sigma2_classical - 3 * t_se > 0 && sr.record.sigma2_classical + 3 * t_se < 1,
        fmt("transfer sigma2 %.4f (replicate se %.4f)", sr.record.sigma2_classical, t_se));
  const double rel = std::abs(sr.record.sigma2_classical - iso.mean) / iso.mean;
  check(o, rel <= 0.10, fmt("relative difference %.3f", rel));
  o.fingerprint = {iso.mean, iso.se, sr.record.sigma2_classical, tr.mean, tr.se};
  return o;
}

Outcome free_energy() {
  Outcome o;
  const auto sr = run_spectrum(noise_kernel(1.0), 1.0, kDt, kNodes, 301, {}, kThreads);
  const auto pts = free_energy_check(sr.op, sr.spectral, {4, 8, 16}, 4000, 8, 302, kThreads);
  // Z_n on the Nystrom nodes is the matrix contraction; the sequential
  // estimator is checked against it. Its noise (~1e-4) is far above the
  // O(1/n) boundary term, so the monotone check uses the contraction.
  std::string gaps;
  bool agree = true;
  for (const auto& p : pts) {
    gaps += fmt("%s%zu:%.3e", gaps.empty() ? "" : " ", p.n, p.exact_gap());
    agree = agree && std::abs(p.estimate - p.exact) <= 3 * p.estimate_se;
  }
  check(o, pts.back().exact_gap() <= 0.05 && pts.back().gap() <= 0.05,
        fmt("gap at n=16 %.2e (sequential estimate %.2e +- %.1e)", pts.back().exact_gap(), pts.back().gap(),
            pts.back().estimate_se));
  check(o, pts[0].exact_gap() > pts[1].exact_gap() && pts[1].exact_gap() > pts[2].exact_gap(),
        "gaps decreasing " + gaps);
  check(o, agree, "sequential estimate within 3 SE of the contraction at every n");
  for (const auto& p : pts) {
    o.fingerprint.push_back(p.estimate);
    o.fingerprint.push_back(p.exact);
  }
  return o;
}

Outcome doeblin() {
  Outcome o;
  const auto sr = run_spectrum(noise_kernel(1.0), 1.0, kDt, kNodes, 401, {}, kThreads);
  const auto c = tv_contraction(sr.chain, 8);
  check(o, c.positive95, fmt("decay rate %.3f (95%% lower %.3f)", c.rate, c.rate_lower95));
  check(o, sr.chain.row_defect <= 1e-6, fmt("row defect %.2e", sr.chain.row_defect));
  // min_ij P_ij / w_j >= psi_min / (lambda0 psi_max) holds term by term since K >= 1
  check(o, sr.chain.min_ratio >= sr.chain.doeblin_floor * (1 - 1e-12),
        fmt("min P/w %.6f >= delta/lambda0 %.6f", sr.chain.min_ratio, sr.chain.doeblin_floor));
  o.fingerprint = {c.rate, c.rate_lower95, sr.chain.row_defect, sr.chain.min_ratio, sr.chain.doeblin_floor};
  return o;
}

Outcome gaussian_identity() {
  Outcome o;
  double worst = 0;
  for (std::uint64_t i = 0; i < 10; ++i) {
    const auto p = sample_path(make_grid(1, 1.0 / 256, 3), stream_seed(501, i));
    for (double eps : {1.0, 0.5, 0.25}) {
      const auto r = gaussian_identity_check(p, pair3(), 1.0, eps);
      worst = std::max(worst, r.max_rel_discrepancy);
      o.fingerprint.push_back(r.exponent_first);
    }
  }
  check(o, worst <= 1e-8, fmt("max discrepancy %.2e over 10 paths x 3 eps", worst));
  const auto p = sample_path(make_grid(0.25, 1.0 / 64, 3), 502);
  const auto n = direct_noise_oracle(p, pair3(), 1.0, 1.0, 0.125, 0.1, 100000, 503, kThreads);
  check(o, std::abs(n.z_score()) <= 3,
        fmt("noise MC %.5f +- %.5f vs %.5f (z %.2f)", n.mc_mean, n.mc_se, n.predicted, n.z_score()));
  o.fingerprint.push_back(n.mc_mean);
  return o;
}

Outcome homogenization() {
  Outcome o;
  if (!std::isfinite(g_sigma2_mcmc)) {
    check(o, false, "needs sigma2 from the strict CLT run");
    return o;
  }
  const std::vector<double> x{0, 0, 0};
  const auto u0 = InitialCondition::cosine({1, 0, 0});
  const double ref = homogenized_reference(1.0, x, u0, g_sigma2_mcmc);
  std::vector<double> err;
  std::string rows;
  std::uint64_t seed = 600;
  for (double eps : {0.5, 0.25, 0.125}) {
    SheConfig sc;
    sc.beta = 1;
    sc.t = 1;
    sc.eps = eps;
    sc.x = x;
    sc.u0 = u0;
    sc.dt = kDt;
    sc.mcmc = acceptance_mcmc();
    sc.seed = ++seed;
    const auto r = annealed_ratio(sc, pair3(), kThreads);
    err.push_back(std::abs(r.ratio - ref) / std::abs(ref));
    rows += fmt("%seps %g: %.4f+-%.4f", rows.empty() ? "" : ", ", eps, r.ratio, r.se);
    o.fingerprint.push_back(r.ratio);
  }
  check(o, true, rows + fmt(" vs reference %.4f", ref));
  check(o, err[0] >= err[1] && err[1] >= err[2], fmt("errors %.4f %.4f %.4f nonincreasing", err[0], err[1], err[2]));
  check(o, err[2] <= 0.10, fmt("error at eps=1/8 %.4f", err[2]));
  return o;
}

Outcome partition_growth_rate() {
  Outcome o;
  auto m = acceptance_mcmc();
  m.sweeps = 2000;
  m.burn_in = 200;
  const auto g = partition_growth(pair3(), 1.0, 1.0, {0.5, 0.25, 0.125}, kDt, m, 9, 701, 0.99, kThreads);
  const auto sr = run_spectrum(noise_kernel(1.0), 1.0, kDt, kNodes, 702, {}, kThreads);
  const double rate = sr.record.log_z_block + sr.record.log_lambda0;  // per unit time, L = 1
  check(o, g.fit.r_squared >= 0.99, fmt("R2 %.5f", g.fit.r_squared));
  const double rel = std::abs(g.theta0 - rate) / std::abs(rate);
  check(o, rel <= 0.05, fmt("theta0 %.4f vs transfer rate %.4f (rel %.3f)", g.theta0, rate, rel));
  o.fingerprint = g.log_z;
  o.fingerprint.push_back(rate);
  return o;
}

Outcome lemma_verifiers() {
  Outcome o;
  // GRR on 20 Coulomb paths
  const auto coul = make_preset("compact_coulomb");
  std::size_t held = 0;
  double worst = -kInf;
  for (std::uint64_t i = 0; i < 20; ++i) {
    GrrOptions g;
    g.delta = 0.25;
    g.seed = stream_seed(801, i);
    const auto p = sample_path(make_grid(1, 1.0 / 1024, 3), stream_seed(802, i));
    const auto r = grr_bound_check(p, coul.form().v(), {0, 0, 0}, g);
    held += r.pass;
    worst = std::max(worst, r.margin);
    o.fingerprint.push_back(r.margin);
  }
  check(o, held == 20, fmt("GRR %zu/20 paths, worst margin %.3g", held, worst));

  DeltaMomentOptions dm;
  dm.seed = 803;
  const auto d = delta_moment_check(-0.25, 0.25, 1, dm, kThreads);
  check(o, d.oracle.pass, fmt("delta n=1 MC %.5f vs %.5f", d.oracle.lhs, d.oracle.rhs));
  check(o, d.scaling.pass, fmt("delta h-slope %.3f >= %.3f", d.scaling.lhs, d.scaling.rhs));
  o.fingerprint.push_back(d.oracle.lhs);

  const auto sx = simplex_identity_check(0.25, 2);
  check(o, sx.pass, fmt("simplex n=2 rel %.2e", sx.margin));

  const PowerPotential v{0.15, 1.5, 3};
  const auto kh = khasminskii_check(v, {20000, 1024, 804}, kThreads);
  check(o, kh.pass && kh.params.at("gamma") <= 0.5,
        fmt("Khasminskii gamma %.4f, E exp %.4f <= %.4f", kh.params.at("gamma"), kh.lhs, kh.rhs));
  o.fingerprint.push_back(kh.lhs);

  for (const char* name : {"compact_coulomb", "delta_1d"}) {
    const auto k = make_preset(name);
    const auto e = sample_block_measure(k, 1.0, kDt, 1000, 805, {}, kThreads);
    const auto r = supinf_maximizer_check(k, e, 100, kThreads);
    check(o, r.pass, fmt("supinf %s ratio %.3f", name, r.params.at("ratio")));
    o.fingerprint.push_back(r.margin);
  }

  // Pinsker on every binned pair: Gibbs endpoint coordinates vs exact normals,
  // and two shifted Gaussian samples
  std::size_t pairs = 0, ok = 0;
  Rng rng(806);
  std::vector<double> ref(100000), shifted(100000);
  for (auto& z : ref) z = rng.normal();
  for (auto& z : shifted) z = 0.5 + rng.normal();
  const auto edges = uniform_edges(-5, 5.5, 40);
  auto add = [&](std::span<const double> a, std::span<const double> b) {
    const auto r = pinsker_report(a, b, edges, 0.5, 806);
    ++pairs;
    ok += r.pass;
    o.fingerprint.push_back(r.lhs);
  };
  add(ref, shifted);
  for (const auto& c : g_endpoint_samples) add(c, ref);
  check(o, ok == pairs, fmt("Pinsker %zu/%zu pairs", ok, pairs));
  return o;
}

Outcome block_approximation() {
  Outcome o;
  const auto k = make_preset("poly_bounded", {{"theta", 2.5}});
  auto m = acceptance_mcmc();
  m.sweeps = 2000;
  m.burn_in = 200;
  std::vector<double> env;
  bool below = true;
  std::string rows;
  // every free move touches all pairs, so the n^2 cost forces a coarser grid here
  std::uint64_t seed = 900;
  for (double T : {16.0, 32.0, 64.0}) {
    const auto r = block_entropy_gap(k, T, 1.0 / 8, T / std::log(T), m, ++seed, kThreads);
    env.push_back(r.envelope);
    below = below && r.neglected_mean <= r.envelope;
    rows += fmt("%sT=%g: E[N] %.4f env %.4f", rows.empty() ? "" : ", ", T, r.neglected_mean, r.envelope);
    o.fingerprint.push_back(r.neglected_mean);
  }
  check(o, env[0] > env[1] && env[1] > env[2], "envelope decreasing");
  check(o, below, rows);
  return o;
}

Outcome replay_and_stability(const std::vector<std::function<Outcome()>>& criteria,
                             const std::vector<std::vector<double>>& first) {
  Outcome o;
  std::size_t same = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto again = criteria[i]().fingerprint;
    const bool eq = again.size() == first[i].size() &&
                    std::memcmp(again.data(), first[i].data(), again.size() * sizeof(double)) == 0;
    same += eq;
    if (!eq) check(o, false, fmt("criterion %zu not bit-identical", i + 1));
  }
  check(o, same == criteria.size(), fmt("%zu/%zu criteria bit-identical on replay", same, criteria.size()));

  const auto k = noise_kernel(1.0);
  const auto base = run_spectrum(k, 1.0, kDt, kNodes, 1001, {}, kThreads).record;
  const auto big = run_spectrum(k, 1.0, kDt, 2 * kNodes, 1001, {}, kThreads).record;
  const auto fine = run_spectrum(k, 1.0, kDt / 2, kNodes, 1001, {}, kThreads).record;
  auto rel = [](double a, double b) { return std::abs(a - b) / std::abs(b); };
  check(o, rel(big.lambda0, base.lambda0) <= 0.02 && rel(fine.lambda0, base.lambda0) <= 0.02,
        fmt("lambda0 %.5f, 2N %.5f, dt/2 %.5f", base.lambda0, big.lambda0, fine.lambda0));
  check(o, rel(big.sigma2_classical, base.sigma2_classical) <= 0.02 &&
               rel(fine.sigma2_classical, base.sigma2_classical) <= 0.02,
        fmt("sigma2 %.5f, 2N %.5f, dt/2 %.5f", base.sigma2_classical, big.sigma2_classical, fine.sigma2_classical));
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  bool replay = true;
  for (int i = 1; i < argc; ++i)
    if (std::strcmp(argv[i], "--no-replay") == 0) replay = false;

  const std::vector<std::pair<const char*, std::function<Outcome()>>> list{
      {"beta=0 exactness", beta_zero_suite},
      {"strict CLT bound", strict_clt},
      {"free energy vs Perron eigenvalue", free_energy},
      {"Doeblin / TV contraction", doeblin},
      {"Gaussian identity", gaussian_identity},
      {"homogenization trend", homogenization},
      {"partition growth", partition_growth_rate},
      {"lemma verifiers", lemma_verifiers},
      {"block approximation", block_approximation}};

  bool all = true;
  std::vector<std::vector<double>> prints;
  std::vector<std::function<Outcome()>> fns;
  auto emit = [&](int id, const char* name, const std::function<Outcome()>& f) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = f();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("error: ") + e.what();
    }
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("criterion %2d %s  %s: %s (%.0f s)\n", id, o.pass ? "PASS" : "FAIL", name, o.detail.c_str(), s);
    std::fflush(stdout);
    all = all && o.pass;
    return o;
  };
  for (std::size_t i = 0; i < list.size(); ++i) {
    prints.push_back(emit(static_cast<int>(i + 1), list[i].first, list[i].second).fingerprint);
    fns.push_back(list[i].second);
  }
  if (replay)
    emit(10, "determinism and stability", [&] { return replay_and_stability(fns, prints); });
  else
    std::printf("criterion 10 SKIP  determinism and stability: --no-replay\n");
  return all ? 0 : 1;
}
