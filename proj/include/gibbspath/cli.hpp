#pragma once

// Experiment orchestration for the command-line tool: clt, spectrum, she
// and verify pipelines driven by a Config, writing CSV/JSON outputs and a
// manifest into an output directory.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "gibbspath/config.hpp"
#include "gibbspath/gibbs_mcmc.hpp"
#include "gibbspath/she.hpp"
#include "gibbspath/transfer.hpp"
#include "gibbspath/verify.hpp"

#ifndef GIBBSPATH_VERSION
#define GIBBSPATH_VERSION "0.1.0"
#endif

namespace gibbspath {

struct RunOptions {
  std::string subcommand;               // clt | spectrum | she | verify
  std::string lemma;                    // for verify
  std::optional<std::uint64_t> seed;    // overrides the config seed
  std::optional<std::size_t> threads;
  std::string out = "out";
};

struct RunResult {
  int exit_code = 0;
  bool pass = true;
  std::vector<std::string> files;
  nlohmann::json summary;
};

namespace detail {

inline McmcSettings mcmc_from(const Config& c, McmcSettings s = {}) {
  s.block_length = c.count("mcmc.block_length", s.block_length);
  s.proposals_per_sweep = c.count("mcmc.proposals_per_sweep", s.proposals_per_sweep);
  s.free_fraction = c.number("mcmc.free_fraction", s.free_fraction);
  s.sweeps = c.count("mcmc.sweeps", s.sweeps);
  s.burn_in = c.count("mcmc.burn_in", s.burn_in);
  s.thin = c.count("mcmc.thin", s.thin);
  s.chains = c.count("mcmc.chains", s.chains);
  s.start_from_prior = c.boolean("mcmc.start_from_prior", s.start_from_prior);
  s.min_effective_samples = c.number("mcmc.min_effective_samples", s.min_effective_samples);
  return s;
}

inline EnsembleOptions ensemble_from(const Config& c) {
  EnsembleOptions o;
  const std::string mode = c.string("transfer.mode", "prior");
  if (mode == "prior") o.mode = BlockSampling::Prior;
  else if (mode == "mcmc") o.mode = BlockSampling::Mcmc;
  else throw ConfigError("transfer.mode must be \"prior\" or \"mcmc\"");
  o.stratify = c.boolean("transfer.stratify", true);
  o.min_ess_fraction = c.number("transfer.min_ess_fraction", o.min_ess_fraction);
  return o;
}

inline InitialCondition initial_condition_from(const Config& c, int d) {
  const std::string kind = c.string("she.u0", "cosine");
  if (kind == "constant") return InitialCondition::constant(c.number("she.cap", 1.0));
  if (kind == "cosine") {
    auto k = c.array("she.k", {});
    if (k.empty()) {
      k.assign(d, 0.0);
      k[0] = 1;
    }
    if (static_cast<int>(k.size()) != d) throw ConfigError("she.k must have d entries");
    return InitialCondition::cosine(k);
  }
  if (kind == "gaussian_bump") return InitialCondition::gaussian_bump(c.number("she.width", 1.0));
  if (kind == "quadratic") return InitialCondition::quadratic();
  if (kind == "quadratic_truncated") return InitialCondition::quadratic_truncated(c.number("she.cap", 4.0));
  throw ConfigError("unknown she.u0 '" + kind + "'");
}

inline nlohmann::json record_json(const SpectrumRecord& r) {
  return {{"beta", r.beta},
          {"L", r.L},
          {"dt", r.dt},
          {"N", r.N},
          {"lambda0", r.lambda0},
          {"log_lambda0", r.log_lambda0},
          {"log_lambda0_shift", r.log_lambda0_shift},
          {"delta", r.delta},
          {"gap", r.gap},
          {"sigma2_dirichlet", r.sigma2_dirichlet},
          {"sigma2_classical", r.sigma2_classical},
          {"sigma2_autocov", r.sigma2_autocov},
          {"residual", r.residual},
          {"log_z_block", r.log_z_block},
          {"row_defect", r.row_defect},
          {"seed", r.seed}};
}

inline const std::vector<std::string>& spectrum_columns() {
  static const std::vector<std::string> c{"beta", "L", "dt", "N", "lambda0", "log_lambda0", "log_lambda0_shift",
                                          "delta", "gap", "sigma2_dirichlet", "sigma2_classical", "sigma2_autocov",
                                          "residual", "log_z_block", "row_defect", "seed"};
  return c;
}

inline std::vector<double> record_row(const SpectrumRecord& r) {
  return {r.beta, r.L, r.dt, static_cast<double>(r.N), r.lambda0, r.log_lambda0, r.log_lambda0_shift, r.delta,
          r.gap, r.sigma2_dirichlet, r.sigma2_classical, r.sigma2_autocov, r.residual, r.log_z_block, r.row_defect,
          static_cast<double>(r.seed)};
}

/// Kernel at another SHE/Gibbs beta, keeping every other preset parameter.
inline InteractionKernel kernel_at_beta(const Config& c, double beta) {
  ParamMap p = c.kernel_params();
  p["beta"] = beta;
  return make_preset(c.kernel_name(), p);
}

struct Emitter {
  std::filesystem::path dir;
  RunResult* result;
  void write(const std::string& name, const std::string& text) {
    write_text((dir / name).string(), text);
    result->files.push_back(name);
  }
};

inline void run_clt(const Config& c, std::uint64_t seed, std::size_t threads, Emitter& em, RunResult& res) {
  const auto kernel = c.make_kernel();
  const PathGrid grid = make_grid(c.number("grid.T", 64), c.number("grid.dt", 1.0 / 16), kernel.dim());
  McmcSettings base;
  base.block_length = 16;
  base.sweeps = 20000;
  base.burn_in = 500;
  base.thin = 2;
  const GibbsConfig gc{kernel, grid, mcmc_from(c, base), seed};
  const auto st = estimate_endpoint(gc, threads);
  const auto iso = st.isotropic_variance();

  std::vector<std::string> cols{"sample"};
  for (int k = 0; k < grid.d; ++k) cols.push_back("x" + std::to_string(k + 1));
  CsvWriter csv(cols);
  for (std::size_t i = 0; i < st.samples[0].size(); ++i) {
    std::vector<double> row{static_cast<double>(i)};
    for (int k = 0; k < grid.d; ++k) row.push_back(st.samples[k][i]);
    csv.row(row);
  }
  em.write("endpoint.csv", csv.str());

  nlohmann::json j;
  j["beta"] = kernel.beta();
  j["T"] = grid.T;
  j["dt"] = grid.dt;
  j["variance"] = st.variance;
  j["variance_se"] = st.variance_se;
  j["n_eff"] = st.n_eff;
  j["covariance"] = st.covariance;
  j["isotropic_variance"] = iso.mean;
  j["isotropic_variance_se"] = iso.se;
  j["acceptance"] = st.acceptance;
  j["nonfinite"] = st.nonfinite;
  j["flagged"] = st.flagged;
  nlohmann::json ks = nlohmann::json::array();
  for (const auto& k : st.ks) ks.push_back({{"statistic", k.statistic}, {"p_value", k.p_value}, {"pass", k.pass}});
  j["ks"] = ks;

  bool pass = !st.flagged && st.nonfinite == 0;
  if (kernel.beta() == 0) {
    pass = pass && std::abs(iso.mean - 1) <= 3 * iso.se;
  } else {
    pass = pass && iso.mean - 3 * iso.se > 0 && iso.mean + 3 * iso.se < 1;
  }
  if (c.has("transfer.L")) {
    const double L = c.number("transfer.L");
    const auto sr = run_spectrum(kernel, L, grid.dt, c.count("transfer.N", 2000), stream_seed(seed, 77),
                                 ensemble_from(c), threads);
    j["transfer"] = record_json(sr.record);
    j["transfer_rel_diff"] = std::abs(sr.record.sigma2_classical - iso.mean) / iso.mean;
  }
  j["pass"] = pass;
  em.write("clt.json", emit_json(j));
  res.summary = j;
  res.pass = pass;
}

inline void run_spectrum_cmd(const Config& c, std::uint64_t seed, std::size_t threads, Emitter& em, RunResult& res) {
  c.make_kernel();
  const double dt = c.number("grid.dt", 1.0 / 16);
  const auto betas = c.array("sweep.beta", {c.kernel_params().count("beta") ? c.kernel_params().at("beta") : 1.0});
  const auto Ls = c.array("sweep.L", {c.number("transfer.L", 1.0)});
  const std::size_t N = c.count("transfer.N", 1000);
  const auto fe_n = c.array("transfer.free_energy_n", {});
  CsvWriter csv(spectrum_columns());
  nlohmann::json records = nlohmann::json::array();
  bool pass = true;
  std::size_t job = 0;
  for (double b : betas)
    for (double L : Ls) {
      const auto kernel = kernel_at_beta(c, b);
      const auto sr = run_spectrum(kernel, L, dt, N, stream_seed(seed, job++), ensemble_from(c), threads);
      csv.row(record_row(sr.record));
      auto j = record_json(sr.record);
      j["noise_beta"] = b;
      j["growth_rate"] = (sr.record.log_z_block + sr.record.log_lambda0) / L;
      if (!fe_n.empty()) {
        std::vector<std::size_t> ns;
        for (double v : fe_n) ns.push_back(static_cast<std::size_t>(v));
        const auto fe = free_energy_check(sr.op, sr.spectral, ns, c.count("transfer.particles", 4000),
                                          c.count("transfer.replicates", 8), stream_seed(seed, 5000 + job), threads);
        nlohmann::json fj = nlohmann::json::array();
        for (const auto& p : fe)
          fj.push_back({{"n", p.n}, {"exact", p.exact}, {"estimate", p.estimate}, {"estimate_se", p.estimate_se},
                        {"gap", p.gap()}, {"exact_gap", p.exact_gap()}});
        j["free_energy"] = fj;
      }
      bool ok = sr.record.row_defect <= 1e-6 && std::isfinite(sr.record.lambda0) && sr.record.lambda0 > 0;
      if (kernel.beta() == 0) ok = ok && std::abs(sr.record.lambda0 - 1) <= 1e-10;
      j["pass"] = ok;
      pass = pass && ok;
      records.push_back(j);
    }
  em.write("spectrum.csv", csv.str());
  nlohmann::json out{{"records", records}, {"pass", pass}};
  em.write("spectrum.json", emit_json(out));
  res.summary = out;
  res.pass = pass;
}

inline void run_she_cmd(const Config& c, std::uint64_t seed, std::size_t threads, Emitter& em, RunResult& res) {
  const auto kp = c.kernel_params();
  auto get = [&](const char* k, double v) { return kp.count(k) ? kp.at(k) : v; };
  const int d = static_cast<int>(get("d", 3));
  const double beta = get("beta", 1.0);
  const auto pair = make_mollifier_pair(get("psi_half_width", 0.5), get("phi_radius", 0.3), d);
  const auto u0 = initial_condition_from(c, d);
  auto x = c.array("she.x", std::vector<double>(d, 0.0));
  if (static_cast<int>(x.size()) != d) throw ConfigError("she.x must have d entries");
  const double t = c.number("she.t", 1.0);
  const double dt = c.number("she.dt", 1.0 / 16);
  const auto eps_list = c.array("sweep.eps", {0.5, 0.25, 0.125});

  // sigma^2 and the growth rate from the transfer operator of the effective kernel
  const auto kernel = effective_kernel(pair, beta);
  const double L = c.number("transfer.L", 2 * pair.psi_half_width);
  double sigma2 = 1, theta0 = 0;
  nlohmann::json spec;
  if (beta != 0) {
    const auto sr = run_spectrum(kernel, L, dt, c.count("transfer.N", 2000), stream_seed(seed, 91), ensemble_from(c),
                                 threads);
    sigma2 = sr.record.sigma2_classical;
    theta0 = (sr.record.log_z_block + sr.record.log_lambda0) / L;
    spec = record_json(sr.record);
  }
  double theta1 = std::numeric_limits<double>::quiet_NaN();
  nlohmann::json growth;
  if (c.boolean("she.partition", false)) {
    McmcSettings pm;
    pm.block_length = 16;
    pm.sweeps = 2000;
    pm.burn_in = 200;
    pm.thin = 2;
    const auto pg = partition_growth(pair, beta, t, eps_list, dt, mcmc_from(c, pm), c.count("she.beta_nodes", 9),
                                     stream_seed(seed, 93), 0.99, threads);
    theta1 = pg.theta1;
    growth = {{"horizon", pg.horizon}, {"log_z", pg.log_z}, {"log_z_se", pg.log_z_se}, {"theta0_fit", pg.theta0},
              {"theta1", pg.theta1}, {"r_squared", pg.fit.r_squared}, {"poor_fit", pg.poor_fit}};
  }

  std::vector<std::string> cols{"d", "beta", "t"};
  for (int k = 0; k < d; ++k) cols.push_back("x" + std::to_string(k + 1));
  for (const char* k : {"eps", "ratio", "ratio_se", "reference", "sigma2", "rel_err", "theta0", "theta1", "seed"})
    cols.push_back(k);
  CsvWriter csv(cols);
  nlohmann::json rows = nlohmann::json::array();
  const double reference = homogenized_reference(t, x, u0, sigma2, c.count("she.gh_nodes", 24));
  bool pass = true;
  McmcSettings sm;
  sm.block_length = 16;
  sm.sweeps = 20000;
  sm.burn_in = 500;
  sm.thin = 2;
  for (std::size_t i = 0; i < eps_list.size(); ++i) {
    SheConfig sc;
    sc.d = d;
    sc.beta = beta;
    sc.t = t;
    sc.x = x;
    sc.eps = eps_list[i];
    sc.u0 = u0;
    sc.dt = dt;
    sc.mcmc = mcmc_from(c, sm);
    sc.importance_samples = c.count("she.importance_samples", 20000);
    const std::string route = c.string("she.route", "gibbs");
    if (route == "gibbs") sc.route = RatioRoute::Gibbs;
    else if (route == "importance") sc.route = RatioRoute::Importance;
    else throw ConfigError("she.route must be \"gibbs\" or \"importance\"");
    sc.seed = stream_seed(seed, 200 + i);
    const auto r = annealed_ratio(sc, pair, threads);
    const double rel = std::abs(r.ratio - reference) / std::abs(reference);
    std::vector<double> row{static_cast<double>(d), beta, t};
    row.insert(row.end(), x.begin(), x.end());
    for (double v : {sc.eps, r.ratio, r.se, reference, sigma2, rel, theta0, theta1, static_cast<double>(sc.seed)})
      row.push_back(v);
    csv.row(row);
    bool ok = std::isfinite(r.ratio);
    if (beta == 0) {
      const double exact = u0.heat(x, t);
      if (std::isfinite(exact)) ok = ok && std::abs(r.ratio - exact) <= 3 * r.se + 1e-12;
    }
    pass = pass && ok;
    rows.push_back({{"eps", sc.eps}, {"T", r.T}, {"ratio", r.ratio}, {"ratio_se", r.se}, {"n_eff", r.n_eff},
                    {"reference", reference}, {"rel_err", rel}, {"pass", ok}});
  }
  em.write("she.csv", csv.str());
  nlohmann::json out{{"rows", rows},     {"sigma2", sigma2}, {"theta0", theta0}, {"theta1", theta1},
                     {"transfer", spec}, {"pass", pass},     {"reference_sigma", homogenized_reference(t, x, u0, std::sqrt(sigma2), c.count("she.gh_nodes", 24))}};
  if (!growth.is_null()) out["partition_growth"] = growth;
  em.write("she.json", emit_json(out));
  res.summary = out;
  res.pass = pass;
}

inline InteractionKernel verify_kernel(const Config& c, const char* fallback) {
  if (c.has("kernel") || c.has("kind") || c.has("kernel.preset")) return c.make_kernel();
  return make_preset(fallback, c.kernel_params());
}

inline void run_verify(const Config& c, const std::string& lemma, std::uint64_t seed, std::size_t threads, Emitter& em,
                       RunResult& res) {
  std::vector<LemmaReport> reports;
  if (lemma == "simplex") {
    reports.push_back(simplex_identity_check(c.number("verify.a", 0.25), static_cast<int>(c.number("verify.n", 2))));
  } else if (lemma == "khasminskii") {
    PowerPotential v{c.number("verify.c", 0.15), c.number("verify.q", 1.5), static_cast<int>(c.number("d", 3))};
    reports.push_back(khasminskii_check(v, {c.count("verify.paths", 20000), c.count("verify.nodes", 1024), seed}, threads));
  } else if (lemma == "grr") {
    const auto kernel = verify_kernel(c, "compact_coulomb");
    GrrOptions o;
    o.eps = c.number("verify.eps", o.eps);
    o.alpha = c.number("verify.alpha", o.alpha);
    o.radius = c.number("verify.radius", o.radius);
    o.delta = c.number("verify.delta", o.delta);
    o.m_points = c.count("verify.m_points", o.m_points);
    o.pairs = c.count("verify.pairs", o.pairs);
    const std::size_t paths = c.count("verify.paths", 20);
    const PathGrid g = make_grid(1.0, c.number("verify.dt", 1.0 / 1024), kernel.dim());
    for (std::size_t i = 0; i < paths; ++i) {
      o.seed = stream_seed(seed, i);
      const auto p = sample_path(g, stream_seed(seed, 10000 + i));
      reports.push_back(grr_bound_check(p, kernel.form().v(), std::vector<double>(kernel.dim(), 0.0), o));
    }
  } else if (lemma == "delta_moment") {
    DeltaMomentOptions o;
    o.kappa = c.number("verify.kappa", o.kappa);
    o.dt = c.number("verify.dt", o.dt);
    o.paths = c.count("verify.paths", o.paths);
    o.eps = c.number("verify.eps", o.eps);
    o.bound_constant = c.number("verify.bound_constant", o.bound_constant);
    o.h_grid = c.array("verify.h", o.h_grid);
    o.seed = seed;
    const auto r = delta_moment_check(c.number("verify.x1", -0.25), c.number("verify.x2", 0.25),
                                      static_cast<int>(c.number("verify.n", 1)), o, threads);
    reports.push_back(r.oracle);
    reports.push_back(r.scaling);
  } else if (lemma == "supinf") {
    const auto kernel = verify_kernel(c, "compact_coulomb");
    const double L = c.number("verify.L", 1.0);
    const auto e = sample_block_measure(kernel, L, c.number("verify.dt", 1.0 / 16), c.count("verify.N", 1000), seed,
                                        ensemble_from(c), threads);
    reports.push_back(supinf_maximizer_check(kernel, e, c.number("verify.ratio_cap", 100), threads));
  } else if (lemma == "pinsker") {
    const std::size_t n = c.count("verify.paths", 100000);
    Rng rng(seed);
    std::vector<double> a(n), b(n);
    const double shift = c.number("verify.delta", 0.5);
    for (auto& v : a) v = rng.normal();
    for (auto& v : b) v = shift + rng.normal();
    const auto edges = uniform_edges(-5, 5 + shift, c.count("verify.bins", 40));
    auto r = pinsker_report(a, b, edges, c.number("verify.smoothing", 0.5), seed);
    r.params["tv_closed"] = 2 * normal_cdf(0.5 * shift) - 1;
    reports.push_back(r);
  } else {
    throw ConfigError("unknown lemma '" + lemma + "' (khasminskii, grr, delta_moment, simplex, supinf, pinsker)");
  }
  nlohmann::json arr = nlohmann::json::array();
  bool pass = true;
  for (const auto& r : reports) {
    arr.push_back(to_json(r));
    pass = pass && r.pass;
  }
  nlohmann::json out = reports.size() == 1 ? arr[0] : nlohmann::json{{"reports", arr}, {"pass", pass}};
  em.write(lemma + ".json", emit_json(out));
  res.summary = out;
  res.pass = pass;
}

}  // namespace detail

/// Lemmas whose result does not depend on any random draw.
inline bool deterministic_lemma(const std::string& lemma) { return lemma == "simplex"; }

/// Runs one subcommand. Exit code 0 iff every asserted check passed; module
/// errors propagate as exceptions for the caller to report.
inline RunResult run(const Config& c, const RunOptions& opt) {
  RunResult res;
  const std::string sub = opt.subcommand.empty() ? c.string("subcommand", "") : opt.subcommand;
  if (sub != "clt" && sub != "spectrum" && sub != "she" && sub != "verify")
    throw ConfigError("subcommand must be one of clt, spectrum, she, verify");
  std::uint64_t seed = 0;
  if (opt.seed) seed = *opt.seed;
  else if (c.has("seed")) seed = static_cast<std::uint64_t>(c.number("seed"));
  else if (!(sub == "verify" && deterministic_lemma(opt.lemma)))
    throw ConfigError("no seed given (set seed in the config or pass --seed)");
  const std::size_t threads = opt.threads ? *opt.threads : c.count("threads", 1);
  if (threads == 0) throw ConfigError("threads must be positive");

  std::filesystem::create_directories(opt.out);
  detail::Emitter em{opt.out, &res};
  if (sub == "clt") detail::run_clt(c, seed, threads, em, res);
  else if (sub == "spectrum") detail::run_spectrum_cmd(c, seed, threads, em, res);
  else if (sub == "she") detail::run_she_cmd(c, seed, threads, em, res);
  else detail::run_verify(c, opt.lemma, seed, threads, em, res);

  nlohmann::json m;
  m["artifact"] = "gibbspath";
  m["version"] = GIBBSPATH_VERSION;
  m["subcommand"] = sub;
  if (sub == "verify") m["lemma"] = opt.lemma;
  m["config"] = config_to_json(c);
  m["seed"] = seed;
  m["threads"] = threads;
  m["outputs"] = res.files;
  m["pass"] = res.pass;
  write_text((std::filesystem::path(opt.out) / "manifest.json").string(), emit_json(m));
  res.files.push_back("manifest.json");
  res.exit_code = res.pass ? 0 : 1;
  return res;
}

}  // namespace gibbspath
