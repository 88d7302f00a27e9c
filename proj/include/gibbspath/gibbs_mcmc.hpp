#pragma once

// Metropolis sampling of the path Gibbs measure
//   dQ = Z^{-1} exp{beta * H_T(W)} dP,
// endpoint CLT statistics, thermodynamic integration of log Z and a
// Kolmogorov-Smirnov diagnostic.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include "gibbspath/error.hpp"
#include "gibbspath/interactions.hpp"
#include "gibbspath/numerics.hpp"
#include "gibbspath/paths.hpp"

namespace gibbspath {

struct McmcSettings {
  std::size_t block_length = 8;      // increments regenerated per proposal
  std::size_t proposals_per_sweep = 0;  // 0: 2 * n_steps / block_length
  double free_fraction = 0.5;        // share of unconstrained (endpoint-moving) proposals
  std::size_t sweeps = 1000;         // sweeps after burn-in, per chain
  std::size_t burn_in = 100;
  std::size_t thin = 1;              // sweeps between recorded samples
  std::size_t chains = 4;
  bool start_from_prior = true;      // else start from the zero path
  double min_effective_samples = 100;
};

struct GibbsConfig {
  InteractionKernel kernel;
  PathGrid grid;
  McmcSettings mcmc;
  std::uint64_t seed = 0;
};

/// One Metropolis chain over the node positions of a path.
///
/// Proposals regenerate the increments of a random block of consecutive
/// steps from the prior: either freely (the rest of the path is shifted, so
/// the endpoint moves) or as a Brownian bridge (block sum kept). Both are
/// independence proposals from the Wiener law, so the acceptance probability
/// is min(1, exp(beta * dH)).
class GibbsChain {
 public:
  GibbsChain(const InteractionKernel& kernel, const PathGrid& grid, const McmcSettings& s, std::uint64_t seed)
      : beta_(kernel.beta()), grid_(grid), settings_(s), lag_(kernel.form(), grid.dt, grid.n_steps), rng_(seed) {
    if (kernel.dim() != grid.d) throw InvalidArgument("GibbsChain: kernel and grid dimensions differ");
    if (s.block_length == 0) throw InvalidArgument("GibbsChain: block length must be positive");
    block_ = std::min(s.block_length, grid.n_steps);
    proposals_ = s.proposals_per_sweep ? s.proposals_per_sweep
                                       : std::max<std::size_t>(1, 2 * grid.n_steps / block_);
    x_.assign((grid.n_steps + 1) * grid.d, 0.0);
    y_.resize((block_ + 1) * grid.d);
    z_.resize(block_ * grid.d);
    if (s.start_from_prior) set_path(sample_path(grid, rng_.engine()()));
  }

  void set_path(const DiscretePath& p) {
    if (p.grid.n_steps != grid_.n_steps || p.grid.d != grid_.d) throw InvalidArgument("GibbsChain: path grid mismatch");
    x_ = p.positions();
  }

  DiscretePath path() const {
    DiscretePath p{grid_, std::vector<double>(grid_.n_steps * grid_.d), 0};
    for (std::size_t k = 0; k < grid_.n_steps; ++k)
      for (int c = 0; c < grid_.d; ++c)
        p.increments[k * grid_.d + c] = x_[(k + 1) * grid_.d + c] - x_[k * grid_.d + c];
    return p;
  }

  void sweep() {
    for (std::size_t k = 0; k < proposals_; ++k) propose();
  }

  /// One block proposal; returns true if accepted.
  bool propose() {
    const std::size_t n = grid_.n_steps;
    const int d = grid_.d;
    const std::size_t b = block_;
    const std::size_t a = n == b ? 0 : rng_.index(n - b + 1);
    const bool free = rng_.uniform() < settings_.free_fraction;
    const double sd = std::sqrt(grid_.dt);

    for (double& v : z_) v = sd * rng_.normal();
    if (!free) {
      // condition the fresh increments on the current block sum
      for (int c = 0; c < d; ++c) {
        double fresh = 0;
        for (std::size_t k = 0; k < b; ++k) fresh += z_[k * d + c];
        const double old = x_[(a + b) * d + c] - x_[a * d + c];
        const double corr = (old - fresh) / static_cast<double>(b);
        for (std::size_t k = 0; k < b; ++k) z_[k * d + c] += corr;
      }
    }
    // proposed positions of nodes a..a+b
    for (int c = 0; c < d; ++c) y_[c] = x_[a * d + c];
    for (std::size_t k = 0; k < b; ++k)
      for (int c = 0; c < d; ++c) y_[(k + 1) * d + c] = y_[k * d + c] + z_[k * d + c];
    std::vector<double>& shift = shift_;
    shift.assign(d, 0.0);
    if (free)
      for (int c = 0; c < d; ++c) shift[c] = y_[b * d + c] - x_[(a + b) * d + c];
    else
      for (int c = 0; c < d; ++c) y_[b * d + c] = x_[(a + b) * d + c];  // exact, no rounding drift

    const double dh = delta_energy(a, b, free);
    ++proposed_;
    if (!std::isfinite(dh)) {
      ++nonfinite_;
      return false;
    }
    const double log_ratio = beta_ * dh;
    if (log_ratio < 0 && std::log(rng_.uniform()) >= log_ratio) return false;
    ++accepted_;
    for (std::size_t k = 1; k < b; ++k)
      for (int c = 0; c < d; ++c) x_[(a + k) * d + c] = y_[k * d + c];
    if (free)
      for (std::size_t j = a + b; j <= n; ++j)
        for (int c = 0; c < d; ++c) x_[j * d + c] += shift[c];
    return true;
  }

  double energy() const { return hamiltonian_positions(x_.data(), grid_.n_steps, grid_.d, lag_); }

  const std::vector<double>& positions() const { return x_; }
  const double* node(std::size_t k) const { return x_.data() + k * grid_.d; }
  const PathGrid& grid() const { return grid_; }
  const LagKernel& lag_kernel() const { return lag_; }
  double beta() const { return beta_; }
  std::size_t proposed() const { return proposed_; }
  std::size_t accepted() const { return accepted_; }
  std::size_t nonfinite() const { return nonfinite_; }
  double acceptance_rate() const {
    return proposed_ ? static_cast<double>(accepted_) / static_cast<double>(proposed_) : 0.0;
  }
  Rng& rng() { return rng_; }

 private:
  // Energy change over all pairs with at least one moved node, plus (free
  // moves) the pairs straddling the block, whose relative displacement
  // changes by the shift.
  double delta_energy(std::size_t a, std::size_t b, bool free) const {
    const std::size_t n = grid_.n_steps;
    const int d = grid_.d;
    const std::size_t M = std::min(lag_.max_lag(), n + 1);
    const double dt = grid_.dt;
    auto w = [&](std::size_t i) { return (i == 0 || i == n) ? 0.5 * dt : dt; };
    // new position of node j
    double tmp_new[8];
    std::vector<double> heap;
    double* pj_buf = tmp_new;
    if (d > 4) {
      heap.resize(2 * d);
      pj_buf = heap.data();
    }
    auto new_pos = [&](std::size_t j, double* out) -> const double* {
      if (j <= a) return x_.data() + j * d;
      if (j < a + b) return y_.data() + (j - a) * d;
      if (!free) return x_.data() + j * d;
      for (int c = 0; c < d; ++c) out[c] = x_[j * d + c] + shift_[c];
      return out;
    };
    double dh = 0;
    auto pair = [&](std::size_t i, std::size_t j) {
      const std::size_t m = j - i;
      const double* pi = new_pos(i, pj_buf);
      const double* pj = new_pos(j, pj_buf + d);
      const double nv = lag_(m, squared_distance(pj, pi, d));
      const double ov = lag_(m, squared_distance(x_.data() + j * d, x_.data() + i * d, d));
      dh += w(i) * w(j) * (nv - ov);
    };
    // i moved (a < i < a+b), any j > i
    for (std::size_t i = a + 1; i < a + b; ++i)
      for (std::size_t j = i + 1; j <= n && j - i < M; ++j) pair(i, j);
    // j moved, i <= a
    for (std::size_t j = a + 1; j < a + b; ++j) {
      const std::size_t lo = j >= M - 1 ? j - (M - 1) : 0;
      for (std::size_t i = lo; i <= a; ++i) pair(i, j);
    }
    if (free) {
      // i <= a, j >= a+b
      for (std::size_t i = (a + b >= M - 1 ? std::max<std::size_t>(0, a + b - (M - 1)) : 0); i <= a; ++i)
        for (std::size_t j = a + b; j <= n && j - i < M; ++j) pair(i, j);
    }
    return 2 * dh;
  }

  double beta_;
  PathGrid grid_;
  McmcSettings settings_;
  LagKernel lag_;
  Rng rng_;
  std::size_t block_ = 1;
  std::size_t proposals_ = 1;
  std::vector<double> x_, y_, z_, shift_;
  std::size_t proposed_ = 0, accepted_ = 0, nonfinite_ = 0;
};

/// One sweep applied to `state`; the chain is rebuilt around the given path.
inline DiscretePath mcmc_sweep(const DiscretePath& state, const GibbsConfig& config, Rng& rng) {
  McmcSettings s = config.mcmc;
  s.start_from_prior = false;
  GibbsChain chain(config.kernel, config.grid, s, rng.engine()());
  chain.set_path(state);
  chain.sweep();
  return chain.path();
}

/// Observable recorded after each thinned sweep.
using ChainObservable = std::function<std::vector<double>(const GibbsChain&)>;

struct ChainRun {
  std::vector<std::vector<std::vector<double>>> samples;  // [chain][sample][component]
  std::vector<double> acceptance;                        // per chain
  std::size_t nonfinite = 0;
};

/// Runs config.mcmc.chains independent chains (stream seeds derived from
/// config.seed) and records `obs` after every `thin` sweeps past burn-in.
inline ChainRun run_chains(const GibbsConfig& config, const ChainObservable& obs,
                           std::size_t threads = default_threads()) {
  const auto& s = config.mcmc;
  if (s.chains == 0) throw InvalidArgument("run_chains: need at least one chain");
  if (s.thin == 0) throw InvalidArgument("run_chains: thin must be positive");
  ChainRun run;
  run.samples.resize(s.chains);
  run.acceptance.resize(s.chains);
  std::vector<std::size_t> nonfinite(s.chains, 0);
  parallel_for(s.chains, threads, [&](std::size_t c) {
    GibbsChain chain(config.kernel, config.grid, s, stream_seed(config.seed, c));
    for (std::size_t k = 0; k < s.burn_in; ++k) chain.sweep();
    auto& out = run.samples[c];
    out.reserve(s.sweeps / s.thin);
    for (std::size_t k = 1; k <= s.sweeps; ++k) {
      chain.sweep();
      if (k % s.thin == 0) out.push_back(obs(chain));
    }
    run.acceptance[c] = chain.acceptance_rate();
    nonfinite[c] = chain.nonfinite();
  });
  for (auto v : nonfinite) run.nonfinite += v;
  return run;
}

/// Extracts component k of a chain run as per-chain series.
inline std::vector<std::vector<double>> component_series(const ChainRun& run, std::size_t k) {
  std::vector<std::vector<double>> out(run.samples.size());
  for (std::size_t c = 0; c < run.samples.size(); ++c) {
    out[c].reserve(run.samples[c].size());
    for (const auto& v : run.samples[c]) out[c].push_back(v.at(k));
  }
  return out;
}

struct SeriesEstimate {
  double mean = 0;
  double se = 0;
  double n_eff = 0;
};

/// Mean over several chains; SE from within-chain batch means combined
/// across chains.
inline SeriesEstimate pooled_mean(const std::vector<std::vector<double>>& series, std::size_t batches = 20) {
  double total = 0, var_sum = 0;
  std::size_t count = 0;
  std::vector<double> all;
  for (const auto& s : series) {
    if (s.empty()) continue;
    const auto est = batch_means(s, std::min<std::size_t>(batches, std::max<std::size_t>(1, s.size() / 2)));
    const double n = static_cast<double>(s.size());
    total += est.mean * n;
    var_sum += est.se * est.se * n * n;
    count += s.size();
    all.insert(all.end(), s.begin(), s.end());
  }
  if (count == 0) throw DegenerateSample("pooled_mean: no samples");
  SeriesEstimate e;
  e.mean = total / static_cast<double>(count);
  e.se = std::sqrt(var_sum) / static_cast<double>(count);
  const double v = sample_variance(all);
  e.n_eff = e.se > 0 ? v / (e.se * e.se) : static_cast<double>(count);
  return e;
}

// ---------------------------------------------------------------------------
// Kolmogorov-Smirnov against a centered Gaussian
// ---------------------------------------------------------------------------

struct KsResult {
  double statistic = 0;
  double p_value = 0;
  bool pass = false;  // at the 5% level
};

/// Asymptotic Kolmogorov distribution tail Q(lambda) = 2 sum (-1)^{k-1} e^{-2 k^2 lambda^2}.
inline double kolmogorov_tail(double lambda) {
  if (lambda < 0.2) return 1.0;
  double s = 0;
  for (int k = 1; k <= 100; ++k) {
    const double term = std::exp(-2.0 * k * k * lambda * lambda);
    s += (k % 2 ? 2.0 : -2.0) * term;
    if (term < 1e-16) break;
  }
  return std::clamp(s, 0.0, 1.0);
}

/// KS distance between the samples and N(0, s^2), s^2 = mean of squares.
inline KsResult ks_gaussian(std::vector<double> samples) {
  const std::size_t n = samples.size();
  if (n < 100) throw InvalidArgument("ks_gaussian: need at least 100 samples");
  double s2 = 0;
  for (double v : samples) s2 += v * v;
  s2 /= static_cast<double>(n);
  KsResult r;
  if (!(s2 > 0)) {
    r.statistic = 1.0;
    return r;
  }
  const double s = std::sqrt(s2);
  std::sort(samples.begin(), samples.end());
  double dmax = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double f = normal_cdf(samples[i] / s);
    const double lo = static_cast<double>(i) / static_cast<double>(n);
    const double hi = static_cast<double>(i + 1) / static_cast<double>(n);
    dmax = std::max({dmax, f - lo, hi - f});
  }
  // a constant sample is a point mass: the variance fit is degenerate
  if (samples.front() == samples.back()) dmax = std::max(dmax, 0.5);
  const double rn = std::sqrt(static_cast<double>(n));
  r.statistic = dmax;
  r.p_value = kolmogorov_tail((rn + 0.12 + 0.11 / rn) * dmax);
  r.pass = r.p_value > 0.05;
  return r;
}

// ---------------------------------------------------------------------------
// Endpoint statistics
// ---------------------------------------------------------------------------

struct EndpointStats {
  std::vector<std::vector<double>> samples;  // [coordinate][sample] of (W_T - W_0)/sqrt(T)
  std::vector<double> variance;              // per coordinate
  std::vector<double> variance_se;
  std::vector<double> n_eff;
  std::vector<std::vector<double>> covariance;     // d x d
  std::vector<std::vector<double>> covariance_se;  // d x d
  std::vector<KsResult> ks;
  double acceptance = 0;
  std::size_t nonfinite = 0;
  bool flagged = false;  // effective sample size below the floor

  /// Variance averaged over coordinates, with the SE of that average.
  SeriesEstimate isotropic_variance() const {
    SeriesEstimate e;
    const double d = static_cast<double>(variance.size());
    double se2 = 0;
    for (std::size_t c = 0; c < variance.size(); ++c) {
      e.mean += variance[c] / d;
      se2 += variance_se[c] * variance_se[c] / (d * d);
      e.n_eff += n_eff[c];
    }
    e.se = std::sqrt(se2);
    return e;
  }
};

/// Runs the chains and collects thinned endpoint samples. The variance uses
/// the known zero mean (isotropy of H), i.e. it is the mean of squares.
inline EndpointStats estimate_endpoint(const GibbsConfig& config, std::size_t threads = default_threads()) {
  const int d = config.grid.d;
  const std::size_t n = config.grid.n_steps;
  const double scale = 1.0 / std::sqrt(config.grid.T);
  auto run = run_chains(
      config,
      [&](const GibbsChain& ch) {
        std::vector<double> v(d);
        for (int c = 0; c < d; ++c) v[c] = ch.node(n)[c] * scale;
        return v;
      },
      threads);
  EndpointStats st;
  st.samples.assign(d, {});
  st.variance.assign(d, 0);
  st.variance_se.assign(d, 0);
  st.n_eff.assign(d, 0);
  st.covariance.assign(d, std::vector<double>(d, 0));
  st.covariance_se.assign(d, std::vector<double>(d, 0));
  for (int c = 0; c < d; ++c) {
    auto series = component_series(run, c);
    for (const auto& s : series) st.samples[c].insert(st.samples[c].end(), s.begin(), s.end());
  }
  for (int c1 = 0; c1 < d; ++c1)
    for (int c2 = c1; c2 < d; ++c2) {
      std::vector<std::vector<double>> prod(run.samples.size());
      for (std::size_t ch = 0; ch < run.samples.size(); ++ch)
        for (const auto& v : run.samples[ch]) prod[ch].push_back(v[c1] * v[c2]);
      const auto e = pooled_mean(prod);
      st.covariance[c1][c2] = st.covariance[c2][c1] = e.mean;
      st.covariance_se[c1][c2] = st.covariance_se[c2][c1] = e.se;
      if (c1 == c2) {
        st.variance[c1] = e.mean;
        st.variance_se[c1] = e.se;
        st.n_eff[c1] = e.n_eff;
        if (e.n_eff < config.mcmc.min_effective_samples) st.flagged = true;
      }
    }
  for (int c = 0; c < d; ++c)
    st.ks.push_back(st.samples[c].size() >= 100 ? ks_gaussian(st.samples[c]) : KsResult{});
  st.acceptance = mean(run.acceptance);
  st.nonfinite = run.nonfinite;
  return st;
}

// ---------------------------------------------------------------------------
// Thermodynamic integration
// ---------------------------------------------------------------------------

struct LogPartitionResult {
  std::vector<double> beta;
  std::vector<double> mean_energy;  // E_beta[H] at each node
  std::vector<double> energy_se;
  std::vector<double> log_z;        // cumulative integral at each node
  std::vector<double> log_z_se;
};

/// Integration weights for a nondecreasing grid: composite Simpson on
/// uniform grids with an odd number of nodes, trapezoid otherwise.
/// Returns cumulative weight rows: row k integrates from grid[0] to grid[k].
inline std::vector<std::vector<double>> cumulative_weights(const std::vector<double>& g) {
  const std::size_t m = g.size();
  std::vector<std::vector<double>> rows(m, std::vector<double>(m, 0.0));
  for (std::size_t k = 1; k < m; ++k) {
    bool uniform = true;
    const double h = g[1] - g[0];
    for (std::size_t i = 1; i <= k; ++i)
      if (std::abs((g[i] - g[i - 1]) - h) > 1e-9 * std::max(1.0, std::abs(h))) uniform = false;
    auto& w = rows[k];
    if (uniform && k % 2 == 0) {
      for (std::size_t i = 0; i <= k; ++i) w[i] = h / 3.0 * ((i == 0 || i == k) ? 1.0 : (i % 2 ? 4.0 : 2.0));
    } else {
      for (std::size_t i = 1; i <= k; ++i) {
        const double hi = g[i] - g[i - 1];
        w[i - 1] += 0.5 * hi;
        w[i] += 0.5 * hi;
      }
    }
  }
  return rows;
}

/// log Z_T(beta) = int_0^beta E_b[H] db with MCMC expectations at each grid node.
inline LogPartitionResult log_partition(const GibbsConfig& config, const std::vector<double>& beta_grid,
                                        double se_cap = std::numeric_limits<double>::infinity(),
                                        std::size_t threads = default_threads()) {
  if (beta_grid.empty() || beta_grid.front() != 0.0) throw InvalidArgument("log_partition: beta grid must start at 0");
  for (std::size_t i = 1; i < beta_grid.size(); ++i)
    if (!(beta_grid[i] > beta_grid[i - 1])) throw InvalidArgument("log_partition: beta grid must increase");
  LogPartitionResult r;
  r.beta = beta_grid;
  for (std::size_t k = 0; k < beta_grid.size(); ++k) {
    GibbsConfig c = config;
    c.kernel = config.kernel.with_beta(beta_grid[k]);
    c.seed = stream_seed(config.seed, 1000 + k);
    auto run = run_chains(c, [](const GibbsChain& ch) { return std::vector<double>{ch.energy()}; }, threads);
    const auto e = pooled_mean(component_series(run, 0));
    r.mean_energy.push_back(e.mean);
    r.energy_se.push_back(e.se);
  }
  const auto rows = cumulative_weights(beta_grid);
  for (std::size_t k = 0; k < beta_grid.size(); ++k) {
    double v = 0, s2 = 0;
    for (std::size_t i = 0; i <= k; ++i) {
      v += rows[k][i] * r.mean_energy[i];
      s2 += rows[k][i] * rows[k][i] * r.energy_se[i] * r.energy_se[i];
    }
    r.log_z.push_back(v);
    r.log_z_se.push_back(std::sqrt(s2));
  }
  if (r.log_z_se.back() > se_cap)
    throw DegenerateSample("log_partition: standard error " + std::to_string(r.log_z_se.back()) + " exceeds cap " +
                           std::to_string(se_cap));
  return r;
}

}  // namespace gibbspath
