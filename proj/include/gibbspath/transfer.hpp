#pragma once

// Markovianization on blocks of length L: single-block measure pi, coupling
// k between neighbouring blocks, Nystrom transfer matrix, Perron pair,
// tilted chain, Poisson equation and the CLT variance.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "gibbspath/error.hpp"
#include "gibbspath/gibbs_mcmc.hpp"
#include "gibbspath/interactions.hpp"
#include "gibbspath/numerics.hpp"
#include "gibbspath/paths.hpp"

namespace gibbspath {

enum class BlockSampling { Prior, Mcmc };

struct EnsembleOptions {
  BlockSampling mode = BlockSampling::Prior;
  bool stratify = true;             // Latin-hypercube endpoint displacement (prior mode)
  double min_ess_fraction = 0.01;   // weight degeneracy floor, ESS / N
  McmcSettings mcmc{.block_length = 4, .sweeps = 0, .burn_in = 200, .thin = 4, .chains = 4};
};

/// N reference blocks with normalized weights. Block i holds the anchored
/// positions at its m+1 nodes (node 0 at the origin), row-major.
struct TransferEnsemble {
  double L = 1;
  double dt = 1;
  int d = 1;
  std::size_t m = 1;
  std::vector<double> nodes;
  std::vector<double> weights;
  std::vector<double> diag_energy;  // D(xi_i), without beta
  double beta = 0;
  double log_z = 0;                 // log of the single-block normalizer estimate
  double log_z_se = 0;
  double ess = 0;
  std::uint64_t seed = 0;
  BlockSampling mode = BlockSampling::Prior;

  std::size_t size() const { return weights.size(); }
  std::size_t block_stride() const { return (m + 1) * d; }
  const double* block(std::size_t i) const { return nodes.data() + i * block_stride(); }
  /// Endpoint displacement of block i, coordinate c.
  double displacement(std::size_t i, int c) const { return block(i)[m * d + c]; }
};

inline std::size_t block_steps(double L, double dt) {
  const double r = L / dt, n = std::round(r);
  if (n < 1 || std::abs(r - n) > 1e-9 * std::max(1.0, r))
    throw InvalidArgument("block length L must be an integer multiple of dt");
  return static_cast<std::size_t>(n);
}

inline void require_short_range(const KernelForm& form, double L) {
  const double support = form.time_support();
  if (!std::isfinite(support) || support > L * (1 + 1e-12) || form.rho()(L) != 0.0)
    throw InvalidArgument("transfer: time correlation must vanish at lags >= L (support " + std::to_string(support) +
                          ", L = " + std::to_string(L) + ")");
}

/// Per-block trapezoid of int_I int_I H over one block's nodes.
inline double block_self_energy(const double* x, std::size_t m, int d, const LagKernel& h) {
  return hamiltonian_positions(x, m, d, h);
}

inline double log_sum_exp(std::span<const double> v) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double x : v) mx = std::max(mx, x);
  if (!std::isfinite(mx)) return mx;
  double s = 0;
  for (double x : v) s += std::exp(x - mx);
  return mx + std::log(s);
}

/// Importance weights exp(beta D_i), normalized; returns log of the mean
/// unnormalized weight (log Z estimate) and its delta-method SE.
inline void assign_tilt_weights(TransferEnsemble& e) {
  const std::size_t N = e.diag_energy.size();
  std::vector<double> lw(N);
  for (std::size_t i = 0; i < N; ++i) lw[i] = e.beta * e.diag_energy[i];
  const double lse = log_sum_exp(lw);
  e.weights.resize(N);
  double s2 = 0;
  for (std::size_t i = 0; i < N; ++i) {
    e.weights[i] = std::exp(lw[i] - lse);
    s2 += e.weights[i] * e.weights[i];
  }
  e.log_z = lse - std::log(static_cast<double>(N));
  e.ess = 1.0 / s2;
  // relative SE of the mean weight: sd(w)/mean(w)/sqrt(N) = sqrt(N s2 - 1)/sqrt(N)
  e.log_z_se = std::sqrt(std::max(0.0, static_cast<double>(N) * s2 - 1.0) / static_cast<double>(N));
}

/// Samples N blocks from the single-block tilted measure
///   pi(dxi) = Z^{-1} exp{beta D(xi)} P(dxi).
inline TransferEnsemble sample_block_measure(const InteractionKernel& kernel, double L, double dt, std::size_t N,
                                             std::uint64_t seed, const EnsembleOptions& opt = {},
                                             std::size_t threads = default_threads()) {
  if (N < 2) throw InvalidArgument("sample_block_measure: need N >= 2");
  TransferEnsemble e;
  e.L = L;
  e.dt = dt;
  e.d = kernel.dim();
  e.m = block_steps(L, dt);
  e.beta = kernel.beta();
  e.seed = seed;
  e.mode = opt.mode;
  const int d = e.d;
  const std::size_t m = e.m, stride = e.block_stride();
  const LagKernel h(kernel.form(), dt, m);
  e.nodes.assign(N * stride, 0.0);
  e.diag_energy.assign(N, 0.0);

  auto prior_blocks = [&](std::vector<double>& out, std::uint64_t s) {
    Rng rng(s);
    // endpoint displacement per coordinate: stratified or plain
    std::vector<double> ends(N * d);
    if (opt.stratify) {
      std::vector<std::size_t> perm(N);
      for (int c = 0; c < d; ++c) {
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), rng.engine());
        for (std::size_t i = 0; i < N; ++i) {
          const double u = (static_cast<double>(perm[i]) + rng.uniform()) / static_cast<double>(N);
          ends[i * d + c] = std::sqrt(L) * normal_quantile(std::clamp(u, 1e-300, 1 - 1e-16));
        }
      }
    } else {
      for (double& v : ends) v = std::sqrt(L) * rng.normal();
    }
    const double sd = std::sqrt(dt);
    std::vector<double> z(m);
    for (std::size_t i = 0; i < N; ++i) {
      double* x = out.data() + i * stride;
      for (int c = 0; c < d; ++c) {
        double sum = 0;
        for (std::size_t k = 0; k < m; ++k) sum += (z[k] = sd * rng.normal());
        const double corr = (ends[i * d + c] - sum) / static_cast<double>(m);
        x[c] = 0;
        for (std::size_t k = 0; k < m; ++k) x[(k + 1) * d + c] = x[k * d + c] + z[k] + corr;
        x[m * d + c] = ends[i * d + c];
      }
    }
  };

  if (opt.mode == BlockSampling::Prior) {
    prior_blocks(e.nodes, seed);
    parallel_for(N, threads, [&](std::size_t i) { e.diag_energy[i] = block_self_energy(e.block(i), m, d, h); });
    assign_tilt_weights(e);
    if (e.ess < opt.min_ess_fraction * static_cast<double>(N))
      throw DegenerateSample("sample_block_measure: effective sample size " + std::to_string(e.ess) + " below floor " +
                             std::to_string(opt.min_ess_fraction * static_cast<double>(N)));
    return e;
  }

  // MCMC within one block: the Gibbs measure on [0, L] is pi itself.
  GibbsConfig gc{kernel, make_grid(L, dt, d), opt.mcmc, seed};
  const std::size_t chains = std::max<std::size_t>(1, opt.mcmc.chains);
  const std::size_t per_chain = (N + chains - 1) / chains;
  gc.mcmc.chains = chains;
  gc.mcmc.sweeps = per_chain * opt.mcmc.thin;
  auto run = run_chains(
      gc, [](const GibbsChain& ch) { return ch.positions(); }, threads);
  std::size_t i = 0;
  for (std::size_t k = 0; k < per_chain && i < N; ++k)
    for (std::size_t c = 0; c < chains && i < N; ++c, ++i)
      std::copy(run.samples[c][k].begin(), run.samples[c][k].end(), e.nodes.begin() + i * stride);
  parallel_for(N, threads, [&](std::size_t j) { e.diag_energy[j] = block_self_energy(e.block(j), m, d, h); });
  e.weights.assign(N, 1.0 / static_cast<double>(N));
  e.ess = static_cast<double>(N);
  // normalizer from an independent prior pass of the same size
  TransferEnsemble prior;
  prior.beta = e.beta;
  prior.nodes.assign(N * stride, 0.0);
  prior.diag_energy.assign(N, 0.0);
  prior_blocks(prior.nodes, stream_seed(seed, 7919));
  parallel_for(N, threads, [&](std::size_t j) {
    prior.diag_energy[j] = block_self_energy(prior.nodes.data() + j * stride, m, d, h);
  });
  assign_tilt_weights(prior);
  e.log_z = prior.log_z;
  e.log_z_se = prior.log_z_se;
  return e;
}

// ---------------------------------------------------------------------------
// Coupling between neighbouring blocks
// ---------------------------------------------------------------------------

/// Node pairs (k in the left block, l in the right block) with nonzero lag
/// factor, with their trapezoid weights.
class CouplingStencil {
 public:
  CouplingStencil(const KernelForm& form, double dt, std::size_t m, int d) : lag_(form, dt, 2 * m), m_(m), d_(d) {
    const std::size_t M = lag_.max_lag();
    auto w = [&](std::size_t i) { return (i == 0 || i == m) ? 0.5 * dt : dt; };
    for (std::size_t k = 0; k <= m; ++k)
      for (std::size_t l = 0; l <= m; ++l) {
        const std::size_t lag = (m - k) + l;
        if (lag >= M) continue;
        pairs_.push_back({k, l, lag, w(k) * w(l)});
      }
  }

  /// sum_{k,l} w_k w_l H(lag, [x'_l] + [x_m - x_k]) for anchored blocks x, x'.
  double cross(const double* x, const double* xp) const {
    const int d = d_;
    const double* end = x + m_ * d;
    double s = 0;
    for (const auto& p : pairs_) {
      double val;
      if (p.lag == 0) {
        val = lag_.diagonal();
      } else {
        double r2 = 0;
        for (int c = 0; c < d; ++c) {
          const double u = xp[p.l * d + c] + end[c] - x[p.k * d + c];
          r2 += u * u;
        }
        val = lag_(p.lag, r2);
      }
      s += p.weight * val;
    }
    return s;
  }

  const LagKernel& lag_kernel() const { return lag_; }

 private:
  struct Pair {
    std::size_t k, l, lag;
    double weight;
  };
  LagKernel lag_;
  std::size_t m_;
  int d_;
  std::vector<Pair> pairs_;
};

/// k(xi, xi') = 2 beta * (trapezoid cross integral between adjacent blocks).
inline double coupling_k(const double* xi, const double* xi_next, std::size_t m, int d, const InteractionKernel& kernel,
                         double dt) {
  const CouplingStencil st(kernel.form(), dt, m, d);
  const double v = 2 * kernel.beta() * st.cross(xi, xi_next);
  if (!std::isfinite(v)) throw NonFiniteValue("coupling_k: non-finite coupling (coincident displacements)");
  return v;
}

/// Coupling of two paths given as DiscretePath blocks of equal grid.
inline double coupling_k(const DiscretePath& xi, const DiscretePath& xi_next, const InteractionKernel& kernel) {
  if (xi.grid.n_steps != xi_next.grid.n_steps || xi.grid.d != xi_next.grid.d ||
      std::abs(xi.grid.dt - xi_next.grid.dt) > 1e-15)
    throw InvalidArgument("coupling_k: blocks must share L and dt");
  const auto a = xi.positions(), b = xi_next.positions();
  return coupling_k(a.data(), b.data(), xi.grid.n_steps, xi.grid.d, kernel, xi.grid.dt);
}

// ---------------------------------------------------------------------------
// Nystrom operator
// ---------------------------------------------------------------------------

struct TransferOperator {
  Eigen::MatrixXd K;       // exp(k_ij - log_shift)
  Eigen::VectorXd w;       // ensemble weights
  double log_shift = 0;
  double log_hs = 0;       // log sum_ij w_i w_j K_ij^2 (unshifted)
  double min_log_k = 0;    // min_ij k_ij
  double max_log_k = 0;
};

inline TransferOperator build_operator(const TransferEnsemble& e, const InteractionKernel& kernel,
                                       std::size_t threads = default_threads()) {
  require_short_range(kernel.form(), e.L);
  const std::size_t N = e.size();
  const CouplingStencil st(kernel.form(), e.dt, e.m, e.d);
  const double two_beta = 2 * kernel.beta();
  TransferOperator op;
  op.K.resize(static_cast<Eigen::Index>(N), static_cast<Eigen::Index>(N));
  op.w = Eigen::Map<const Eigen::VectorXd>(e.weights.data(), static_cast<Eigen::Index>(N));
  std::vector<double> row_max(N), row_min(N);
  parallel_for(N, threads, [&](std::size_t i) {
    double mx = -std::numeric_limits<double>::infinity(), mn = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < N; ++j) {
      const double k = two_beta == 0 ? 0.0 : two_beta * st.cross(e.block(i), e.block(j));
      op.K(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = k;
      mx = std::max(mx, k);
      mn = std::min(mn, k);
    }
    row_max[i] = mx;
    row_min[i] = mn;
  });
  op.max_log_k = *std::max_element(row_max.begin(), row_max.end());
  op.min_log_k = *std::min_element(row_min.begin(), row_min.end());
  if (!std::isfinite(op.max_log_k)) throw NonFiniteValue("build_operator: non-finite coupling");
  op.log_shift = op.max_log_k > 300 ? op.max_log_k - 300 : 0.0;
  op.K = (op.K.array() - op.log_shift).exp().matrix();
  const Eigen::VectorXd kw = op.K.array().square().matrix() * op.w;
  op.log_hs = std::log(op.w.dot(kw)) + 2 * op.log_shift;
  return op;
}

/// Row masses m_i = sum_j K_ij w_j (unshifted, in log form).
inline std::vector<double> log_row_mass(const TransferOperator& op) {
  const Eigen::VectorXd r = op.K * op.w;
  std::vector<double> out(static_cast<std::size_t>(r.size()));
  for (Eigen::Index i = 0; i < r.size(); ++i) out[static_cast<std::size_t>(i)] = std::log(r(i)) + op.log_shift;
  return out;
}

// ---------------------------------------------------------------------------
// Perron pair
// ---------------------------------------------------------------------------

struct SpectralResult {
  double lambda0 = 1;        // exp(log_lambda0); may be inf for huge couplings
  double log_lambda0 = 0;
  double lambda_shifted = 1; // eigenvalue of the shifted matrix
  double log_shift = 0;
  Eigen::VectorXd psi;       // sup psi = 1
  Eigen::VectorXd phi;       // left eigenvector of K W, phi . (w o psi) = 1
  double delta = 1;          // inf psi / sup psi
  double residual = 0;       // max_i |(K W psi)_i - lambda psi_i| / (lambda psi_i)
  double lambda1_abs = 0;    // second eigenvalue magnitude (shifted units)
  double gap = 1;            // 1 - |lambda1| / lambda0
  std::size_t iterations = 0;
};

inline SpectralResult perron_eigenpair(const TransferOperator& op, double tol = 1e-13, std::size_t max_iter = 20000) {
  const Eigen::Index N = op.K.rows();
  SpectralResult r;
  r.log_shift = op.log_shift;
  Eigen::VectorXd v = Eigen::VectorXd::Ones(N);
  double lam = 0;
  bool converged = false;
  for (std::size_t it = 1; it <= max_iter; ++it) {
    Eigen::VectorXd y = op.K * op.w.cwiseProduct(v);
    lam = y.maxCoeff();
    y /= lam;
    const double diff = (y - v).cwiseAbs().maxCoeff();
    v = y;
    r.iterations = it;
    if (diff < tol) {
      converged = true;
      break;
    }
  }
  if (!converged) throw NotConverged("perron_eigenpair: power iteration did not converge in " + std::to_string(max_iter) + " iterations");
  if (v.minCoeff() <= 0) throw NotConverged("perron_eigenpair: eigenvector not strictly positive");
  const Eigen::VectorXd av = op.K * op.w.cwiseProduct(v);
  r.psi = v;
  r.lambda_shifted = lam;
  r.log_lambda0 = std::log(lam) + op.log_shift;
  r.lambda0 = std::exp(r.log_lambda0);
  r.delta = v.minCoeff() / v.maxCoeff();
  r.residual = ((av - lam * v).array().abs() / (lam * v.array())).maxCoeff();

  // left eigenvector of A = K W:  phi^T A = lam phi^T
  Eigen::VectorXd u = op.w;
  for (std::size_t it = 0; it < max_iter; ++it) {
    Eigen::VectorXd y = op.w.cwiseProduct(op.K.transpose() * u);
    y /= y.sum();
    const double diff = (y - u).cwiseAbs().sum();
    u = y;
    if (diff < tol) break;
  }
  // u is proportional to W phi; recover phi and normalize phi . (w o psi) = 1
  Eigen::VectorXd phi = u.cwiseQuotient(op.w.cwiseMax(1e-300));
  phi /= phi.dot(op.w.cwiseProduct(v));
  r.phi = phi;

  // second eigenvalue magnitude by deflated power iteration
  const Eigen::VectorXd wpsi = op.w.cwiseProduct(v);
  auto apply_deflated = [&](const Eigen::VectorXd& x) -> Eigen::VectorXd {
    Eigen::VectorXd y = op.K * op.w.cwiseProduct(x);
    return y - lam * v * phi.dot(op.w.cwiseProduct(x));
  };
  (void)wpsi;
  Eigen::VectorXd x(N);
  Rng rng(0x5eed);
  for (Eigen::Index i = 0; i < N; ++i) x(i) = rng.normal();
  double norm = x.norm();
  x /= norm;
  std::vector<double> log_growth;
  for (int it = 0; it < 300; ++it) {
    x = apply_deflated(x);
    norm = x.norm();
    if (!(norm > 1e-300 * lam)) {
      norm = 0;
      break;
    }
    log_growth.push_back(std::log(norm));
    x /= norm;
  }
  if (norm == 0 || log_growth.empty()) {
    r.lambda1_abs = 0;
  } else {
    // average growth over the last stretch smooths complex-pair oscillation
    const std::size_t k = std::min<std::size_t>(log_growth.size(), 50);
    double s = 0;
    for (std::size_t i = log_growth.size() - k; i < log_growth.size(); ++i) s += log_growth[i];
    r.lambda1_abs = std::exp(s / static_cast<double>(k));
  }
  r.gap = 1 - r.lambda1_abs / lam;
  return r;
}

// ---------------------------------------------------------------------------
// Tilted chain
// ---------------------------------------------------------------------------

struct TiltedChain {
  Eigen::MatrixXd P;
  Eigen::VectorXd pi_star;
  double row_defect = 0;        // max_i |sum_j P_ij - 1|
  double stationarity_tv = 0;   // 1/2 |pi P - pi|_1
  double min_ratio = 0;         // min_ij P_ij / w_j
  double doeblin_floor = 0;     // delta / lambda0
};

inline TiltedChain tilted_chain(const SpectralResult& s, const TransferOperator& op, double tol = 1e-6,
                                std::size_t max_iter = 100000) {
  const Eigen::Index N = op.K.rows();
  TiltedChain c;
  c.P.resize(N, N);
  for (Eigen::Index i = 0; i < N; ++i)
    for (Eigen::Index j = 0; j < N; ++j)
      c.P(i, j) = op.K(i, j) * s.psi(j) * op.w(j) / (s.lambda_shifted * s.psi(i));
  c.row_defect = (c.P.rowwise().sum().array() - 1.0).abs().maxCoeff();
  if (c.row_defect > tol)
    throw NotConverged("tilted_chain: row-sum defect " + std::to_string(c.row_defect) + " above tolerance");
  c.min_ratio = std::numeric_limits<double>::infinity();
  for (Eigen::Index j = 0; j < N; ++j)
    for (Eigen::Index i = 0; i < N; ++i) c.min_ratio = std::min(c.min_ratio, c.P(i, j) / op.w(j));
  c.doeblin_floor = s.delta * std::exp(-s.log_lambda0);
  Eigen::RowVectorXd pi = op.w.transpose();
  for (std::size_t it = 0; it < max_iter; ++it) {
    Eigen::RowVectorXd next = pi * c.P;
    next /= next.sum();
    const double diff = (next - pi).cwiseAbs().sum();
    pi = next;
    if (diff < 1e-15) break;
  }
  c.pi_star = pi.transpose();
  c.stationarity_tv = 0.5 * (pi * c.P - pi).cwiseAbs().sum();
  return c;
}

// ---------------------------------------------------------------------------
// Mixing diagnostics
// ---------------------------------------------------------------------------

struct ContractionCurve {
  std::vector<double> spread;  // spread[n-1] for n = 1..n_max
  LinearFit fit;               // log spread vs n over points above the floor
  double rate = 0;             // -slope
  double rate_lower95 = 0;     // -(slope + t * se)
  bool positive95 = false;
  bool monotone = true;
};

/// spread(n) = 1/2 sum_j (max_i P^n_ij - min_i P^n_ij), an upper bound on
/// the largest total variation distance between two n-step rows.
inline ContractionCurve tv_contraction(const TiltedChain& chain, std::size_t n_max, double floor = 1e-12) {
  ContractionCurve out;
  Eigen::MatrixXd Q = chain.P;
  for (std::size_t n = 1; n <= n_max; ++n) {
    const Eigen::RowVectorXd mx = Q.colwise().maxCoeff(), mn = Q.colwise().minCoeff();
    out.spread.push_back(0.5 * (mx - mn).sum());
    if (n < n_max) Q = Q * chain.P;
  }
  for (std::size_t i = 1; i < out.spread.size(); ++i)
    if (out.spread[i] > out.spread[i - 1] * (1 + 1e-9) + 1e-15) out.monotone = false;
  std::vector<double> xs, ys;
  for (std::size_t i = 0; i < out.spread.size(); ++i)
    if (out.spread[i] > floor) {
      xs.push_back(static_cast<double>(i + 1));
      ys.push_back(std::log(out.spread[i]));
    }
  if (xs.size() >= 3) {
    out.fit = linear_fit(xs, ys);
    out.rate = -out.fit.slope;
    out.rate_lower95 = -(out.fit.slope + student_t975(xs.size() - 2) * out.fit.slope_se);
    out.positive95 = out.rate_lower95 > 0;
  } else if (xs.size() == 2) {
    out.fit = linear_fit(xs, ys);
    out.rate = -out.fit.slope;
  }
  return out;
}

/// Distribution over nodes after n steps from node `start`.
inline Eigen::VectorXd n_step_row(const TiltedChain& chain, std::size_t start, std::size_t n) {
  Eigen::RowVectorXd r = Eigen::RowVectorXd::Zero(chain.P.cols());
  r(static_cast<Eigen::Index>(start)) = 1;
  for (std::size_t k = 0; k < n; ++k) r = r * chain.P;
  return r.transpose();
}

struct MarginalComparison {
  double tv = 0;
  double tv_double_bins = 0;
  bool flagged = false;  // bin-count sensitivity above threshold
};

/// Binned TV between the chain's n-step block marginal from `start`
/// (statistic value per node) and Gibbs block samples of the same statistic.
inline MarginalComparison marginal_vs_gibbs(const TiltedChain& chain, std::size_t start, std::size_t n,
                                            std::span<const double> node_stat, std::span<const double> gibbs_stat,
                                            std::size_t bins = 20, double sensitivity = 0.05) {
  if (node_stat.size() != static_cast<std::size_t>(chain.P.rows()))
    throw InvalidArgument("marginal_vs_gibbs: statistic length differs from node count");
  const Eigen::VectorXd row = n_step_row(chain, start, n);
  std::vector<double> wr(row.data(), row.data() + row.size());
  std::vector<double> sorted(gibbs_stat.begin(), gibbs_stat.end());
  std::sort(sorted.begin(), sorted.end());
  const double lo = sorted[static_cast<std::size_t>(0.005 * (sorted.size() - 1))];
  const double hi = sorted[static_cast<std::size_t>(0.995 * (sorted.size() - 1))];
  auto tv_at = [&](std::size_t b) {
    const auto edges = uniform_edges(lo, hi, b);
    const auto p = binned_distribution(node_stat, wr, edges);
    const auto q = binned_distribution(gibbs_stat, {}, edges);
    return tv_distance(p, q);
  };
  MarginalComparison out;
  out.tv = tv_at(bins);
  out.tv_double_bins = tv_at(2 * bins);
  out.flagged = std::abs(out.tv_double_bins - out.tv) > sensitivity;
  return out;
}

// ---------------------------------------------------------------------------
// Poisson equation and variance routes
// ---------------------------------------------------------------------------

struct PoissonSolution {
  Eigen::VectorXd f_centered;
  double f_mean = 0;
  Eigen::VectorXd u_neumann;
  Eigen::VectorXd u_direct;
  double residual_neumann = 0;
  double residual_direct = 0;
  double contraction = 0;  // observed |P^k f| ratio
  std::size_t terms = 0;
};

/// Solves (I - P) u = f - pi*(f) by a Neumann series and by a direct solve of
/// (I - P + 1 pi*^T) u = f_c; both solutions satisfy pi*(u) = 0.
inline PoissonSolution solve_poisson(const TiltedChain& chain, const Eigen::VectorXd& f, double tol = 1e-13,
                                     std::size_t max_terms = 100000) {
  const Eigen::Index N = chain.P.rows();
  if (f.size() != N) throw InvalidArgument("solve_poisson: observable length differs from node count");
  PoissonSolution s;
  s.f_mean = chain.pi_star.dot(f);
  s.f_centered = f.array() - s.f_mean;
  const double fn = std::max(1.0, s.f_centered.cwiseAbs().maxCoeff());

  Eigen::VectorXd g = s.f_centered, u = g;
  double prev = g.cwiseAbs().maxCoeff();
  bool done = prev == 0;
  for (std::size_t k = 1; k <= max_terms && !done; ++k) {
    g = chain.P * g;
    g.array() -= chain.pi_star.dot(g);  // keep the iterate centered against rounding drift
    u += g;
    const double cur = g.cwiseAbs().maxCoeff();
    const double r = prev > 0 ? cur / prev : 0;
    s.contraction = std::max(s.contraction * 0.5, r);
    s.terms = k;
    if (cur == 0 || (r < 1 && cur * r / (1 - r) < tol * fn)) done = true;
    prev = cur;
  }
  if (!done) throw NotConverged("solve_poisson: contraction rate too close to 1 for the requested tolerance");
  s.u_neumann = u;

  Eigen::MatrixXd A = Eigen::MatrixXd::Identity(N, N) - chain.P;
  A += Eigen::VectorXd::Ones(N) * chain.pi_star.transpose();
  s.u_direct = A.partialPivLu().solve(s.f_centered);

  auto residual = [&](const Eigen::VectorXd& x) {
    return (x - chain.P * x - s.f_centered).cwiseAbs().maxCoeff();
  };
  s.residual_neumann = residual(s.u_neumann);
  s.residual_direct = residual(s.u_direct);
  return s;
}

struct VarianceRoutes {
  double dirichlet = 0;  // <f_c, u>_{pi*} = <(I - P) u, u>
  double classical = 0;  // E[u^2] - E[(P u)^2]
  double autocov = 0;    // E[f_c^2] + 2 sum_k E[f_c P^k f_c]
  double residual = 0;   // Poisson residual
  bool disagree = false;
};

/// The three variance expressions for one observable, per unit block time.
inline VarianceRoutes dirichlet_variance(const TiltedChain& chain, const PoissonSolution& s, double block_length,
                                         double agree_tol = 1e-6, std::size_t max_terms = 100000) {
  const Eigen::VectorXd& pi = chain.pi_star;
  const Eigen::VectorXd& fc = s.f_centered;
  const Eigen::VectorXd& u = s.u_direct;
  VarianceRoutes v;
  v.dirichlet = pi.dot(fc.cwiseProduct(u));
  const Eigen::VectorXd pu = chain.P * u;
  v.classical = pi.dot(u.cwiseProduct(u)) - pi.dot(pu.cwiseProduct(pu));
  double acc = pi.dot(fc.cwiseProduct(fc));
  Eigen::VectorXd g = fc;
  for (std::size_t k = 1; k <= max_terms; ++k) {
    g = chain.P * g;
    const double term = pi.dot(fc.cwiseProduct(g));
    acc += 2 * term;
    if (std::abs(term) < 1e-17 * std::max(1.0, std::abs(acc))) break;
  }
  v.autocov = acc;
  v.dirichlet /= block_length;
  v.classical /= block_length;
  v.autocov /= block_length;
  v.residual = s.residual_direct;
  const double scale = std::max(1e-12, std::abs(v.classical));
  v.disagree = std::abs(v.dirichlet - v.classical) > agree_tol * scale ||
               std::abs(v.autocov - v.classical) > agree_tol * scale;
  return v;
}

/// Endpoint-displacement observable of coordinate c.
inline Eigen::VectorXd displacement_observable(const TransferEnsemble& e, int c) {
  Eigen::VectorXd f(static_cast<Eigen::Index>(e.size()));
  for (std::size_t i = 0; i < e.size(); ++i) f(static_cast<Eigen::Index>(i)) = e.displacement(i, c);
  return f;
}

/// Variance routes averaged over the d coordinates.
inline VarianceRoutes endpoint_variance(const TransferEnsemble& e, const TiltedChain& chain) {
  VarianceRoutes avg;
  for (int c = 0; c < e.d; ++c) {
    const auto sol = solve_poisson(chain, displacement_observable(e, c));
    const auto v = dirichlet_variance(chain, sol, e.L);
    avg.dirichlet += v.dirichlet / e.d;
    avg.classical += v.classical / e.d;
    avg.autocov += v.autocov / e.d;
    avg.residual = std::max(avg.residual, std::max(v.residual, sol.residual_neumann));
    avg.disagree = avg.disagree || v.disagree;
  }
  return avg;
}

// ---------------------------------------------------------------------------
// Full spectral pipeline
// ---------------------------------------------------------------------------

struct SpectrumRecord {
  double beta = 0;
  double L = 1;
  double dt = 1;
  std::size_t N = 0;
  double lambda0 = 1;
  double log_lambda0 = 0;
  double log_lambda0_shift = 0;
  double delta = 1;
  double gap = 1;
  double sigma2_dirichlet = 1;
  double sigma2_classical = 1;
  double sigma2_autocov = 1;
  double residual = 0;
  double log_z_block = 0;
  double row_defect = 0;
  std::uint64_t seed = 0;
};

struct SpectrumRun {
  TransferEnsemble ensemble;
  TransferOperator op;
  SpectralResult spectral;
  TiltedChain chain;
  VarianceRoutes variance;
  SpectrumRecord record;
};

inline SpectrumRun run_spectrum(const InteractionKernel& kernel, double L, double dt, std::size_t N, std::uint64_t seed,
                                const EnsembleOptions& opt = {}, std::size_t threads = default_threads()) {
  SpectrumRun r;
  r.ensemble = sample_block_measure(kernel, L, dt, N, seed, opt, threads);
  r.op = build_operator(r.ensemble, kernel, threads);
  r.spectral = perron_eigenpair(r.op);
  r.chain = tilted_chain(r.spectral, r.op);
  r.variance = endpoint_variance(r.ensemble, r.chain);
  auto& rec = r.record;
  rec.beta = kernel.beta();
  rec.L = L;
  rec.dt = dt;
  rec.N = N;
  rec.lambda0 = r.spectral.lambda0;
  rec.log_lambda0 = r.spectral.log_lambda0;
  rec.log_lambda0_shift = r.op.log_shift;
  rec.delta = r.spectral.delta;
  rec.gap = r.spectral.gap;
  rec.sigma2_dirichlet = r.variance.dirichlet;
  rec.sigma2_classical = r.variance.classical;
  rec.sigma2_autocov = r.variance.autocov;
  rec.residual = std::max(r.spectral.residual, r.variance.residual);
  rec.log_z_block = r.ensemble.log_z;
  rec.row_defect = r.chain.row_defect;
  rec.seed = seed;
  return r;
}

// ---------------------------------------------------------------------------
// Free energy along the chain
// ---------------------------------------------------------------------------

struct FreeEnergyPoint {
  std::size_t n = 0;
  double exact = 0;      // (1/n) log w^T (K W)^n 1 from the matrix
  double estimate = 0;   // sequential importance sampling, mean over replicates
  double estimate_se = 0;
  double log_lambda0 = 0;
  double gap() const { return std::abs(estimate - log_lambda0); }
  double exact_gap() const { return std::abs(exact - log_lambda0); }
};

/// (1/n) log E[exp sum_{j=1}^n k(xi_{j-1}, xi_j)] over n+1 blocks drawn
/// independently from pi (the ensemble's weighted nodes). The estimate uses
/// particles with multinomial resampling; the exact value contracts the matrix.
inline std::vector<FreeEnergyPoint> free_energy_check(const TransferOperator& op, const SpectralResult& s,
                                                      const std::vector<std::size_t>& n_list, std::size_t particles,
                                                      std::size_t replicates, std::uint64_t seed,
                                                      std::size_t threads = default_threads()) {
  const Eigen::Index N = op.K.rows();
  std::vector<double> cdf(static_cast<std::size_t>(N));
  double acc = 0;
  for (Eigen::Index i = 0; i < N; ++i) cdf[static_cast<std::size_t>(i)] = (acc += op.w(i));
  for (double& c : cdf) c /= acc;
  auto draw = [&](Rng& rng) {
    const double u = rng.uniform();
    auto it = std::lower_bound(cdf.begin(), cdf.end(), u);
    return std::min<std::size_t>(static_cast<std::size_t>(it - cdf.begin()), cdf.size() - 1);
  };
  std::vector<FreeEnergyPoint> out;
  for (std::size_t n : n_list) {
    if (n == 0) throw InvalidArgument("free_energy_check: n must be positive");
    FreeEnergyPoint p;
    p.n = n;
    p.log_lambda0 = s.log_lambda0;
    // exact: v <- K W v starting from 1, tracking a log scale
    Eigen::VectorXd v = Eigen::VectorXd::Ones(N);
    double log_scale = 0;
    for (std::size_t k = 0; k < n; ++k) {
      v = op.K * op.w.cwiseProduct(v);
      const double mx = v.maxCoeff();
      v /= mx;
      log_scale += std::log(mx);
    }
    p.exact = (std::log(op.w.dot(v)) + log_scale) / static_cast<double>(n) + op.log_shift;

    std::vector<double> est(replicates);
    parallel_for(replicates, threads, [&](std::size_t r) {
      Rng rng(stream_seed(seed, n * 100003 + r));
      std::vector<std::size_t> idx(particles), next(particles);
      std::vector<double> wt(particles), wcdf(particles);
      for (auto& i : idx) i = draw(rng);
      double log_z = 0;
      for (std::size_t step = 0; step < n; ++step) {
        double sum = 0;
        for (std::size_t q = 0; q < particles; ++q) {
          next[q] = draw(rng);
          wt[q] = op.K(static_cast<Eigen::Index>(idx[q]), static_cast<Eigen::Index>(next[q]));
          sum += wt[q];
        }
        log_z += std::log(sum / static_cast<double>(particles));
        // multinomial resampling of the new positions by weight
        double c = 0;
        for (std::size_t q = 0; q < particles; ++q) wcdf[q] = (c += wt[q]);
        for (std::size_t q = 0; q < particles; ++q) {
          const double u = rng.uniform() * c;
          auto it = std::lower_bound(wcdf.begin(), wcdf.end(), u);
          idx[q] = next[std::min<std::size_t>(static_cast<std::size_t>(it - wcdf.begin()), particles - 1)];
        }
      }
      est[r] = log_z / static_cast<double>(n) + op.log_shift;
    });
    const auto ms = mean_se(est);
    p.estimate = ms.mean;
    p.estimate_se = ms.se;
    out.push_back(p);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Block approximation for long-range kernels
// ---------------------------------------------------------------------------

/// Node indices of block boundaries: round(k L / dt), last block possibly short.
inline std::vector<std::size_t> block_boundaries(std::size_t n_steps, double dt, double L) {
  if (!(L > 0)) throw InvalidArgument("block_boundaries: L must be positive");
  std::vector<std::size_t> b{0};
  for (std::size_t k = 1;; ++k) {
    const auto node = static_cast<std::size_t>(std::llround(static_cast<double>(k) * L / dt));
    if (node >= n_steps) break;
    if (node > b.back()) b.push_back(node);
  }
  b.push_back(n_steps);
  return b;
}

/// Energy of all block pairs separated by at least one block (both orders),
/// with per-block trapezoid weights.
inline double neglected_energy(const double* x, int d, const std::vector<std::size_t>& bounds, const LagKernel& h) {
  const double dt = h.dt();
  const std::size_t nb = bounds.size() - 1;
  double s = 0;
  for (std::size_t a = 0; a < nb; ++a)
    for (std::size_t b = a + 2; b < nb; ++b) {
      const std::size_t a0 = bounds[a], a1 = bounds[a + 1], b0 = bounds[b], b1 = bounds[b + 1];
      for (std::size_t i = a0; i <= a1; ++i) {
        const double wi = (i == a0 || i == a1) ? 0.5 * dt : dt;
        for (std::size_t j = b0; j <= b1; ++j) {
          const std::size_t lag = j - i;
          if (lag >= h.max_lag()) continue;
          const double wj = (j == b0 || j == b1) ? 0.5 * dt : dt;
          s += wi * wj * h(lag, squared_distance(x + j * d, x + i * d, d));
        }
      }
    }
  return 2 * s;
}

/// int_{a0}^{a1} int_{b0}^{b1} (1 + t - s)^{-theta} dt ds for b0 >= a1, theta > 2.
inline double polynomial_square_integral(double a0, double a1, double b0, double b1, double theta) {
  auto F = [&](double x) { return std::pow(1 + x, 2 - theta) / ((1 - theta) * (2 - theta)); };
  return F(b1 - a0) - F(b0 - a0) - F(b1 - a1) + F(b0 - a1);
}

struct EntropyGapReport {
  double T = 0;
  double L = 0;
  std::size_t blocks = 0;
  double neglected_mean = 0;   // E_Q[N], N the neglected energy
  double neglected_se = 0;
  double envelope = 0;         // ||V|| sum_{separated pairs} int int rho (continuous)
  double envelope_grid = 0;    // same sum with the path-grid trapezoid rule
  double entropy_bound = 0;    // beta E_Q[N]
  double tv_bound = 0;         // sqrt(entropy_bound / 2)
  double envelope_tv = 0;      // sqrt(beta envelope / 2)
};

/// Relative-entropy bound between the Gibbs measure and its block
/// approximation (neighbouring blocks only), by MCMC, plus the envelope.
inline EntropyGapReport block_entropy_gap(const InteractionKernel& kernel, double T, double dt, double L,
                                          const McmcSettings& mcmc, std::uint64_t seed,
                                          std::size_t threads = default_threads()) {
  const auto& form = kernel.form();
  if (kernel.admissibility() != AdmissibilityClass::LongRangeBounded)
    throw InvalidArgument("block_entropy_gap: requires a LongRangeBounded kernel");
  const PathGrid grid = make_grid(T, dt, kernel.dim());
  const auto bounds = block_boundaries(grid.n_steps, dt, L);
  const LagKernel h(form, dt, grid.n_steps);
  EntropyGapReport r;
  r.T = grid.T;
  r.L = L;
  r.blocks = bounds.size() - 1;

  const double vsup = form.v_sup();
  const std::size_t nb = r.blocks;
  const bool poly = form.shape() == KernelForm::Shape::MasslessNelson ||
                    form.rho().kind() == TimeCorrelation::Kind::PolynomialDecay;
  const double theta = form.shape() == KernelForm::Shape::MasslessNelson ? form.massless_theta() : form.rho().parameter();
  const double amp = form.shape() == KernelForm::Shape::MasslessNelson ? 1.0 : form.rho().amplitude();
  double env = 0, env_grid = 0;
  for (std::size_t a = 0; a < nb; ++a)
    for (std::size_t b = a + 2; b < nb; ++b) {
      const double a0 = bounds[a] * dt, a1 = bounds[a + 1] * dt, b0 = bounds[b] * dt, b1 = bounds[b + 1] * dt;
      if (poly) {
        env += 2 * amp * polynomial_square_integral(a0, a1, b0, b1, theta);
      } else {
        // generic rho: Gauss-Legendre on the square
        const auto ra = composite_gauss(8, 8, a0, a1), rb = composite_gauss(8, 8, b0, b1);
        for (std::size_t i = 0; i < ra.nodes.size(); ++i)
          for (std::size_t j = 0; j < rb.nodes.size(); ++j)
            env += 2 * ra.weights[i] * rb.weights[j] * form.rho_envelope(rb.nodes[j] - ra.nodes[i]);
      }
      for (std::size_t i = bounds[a]; i <= bounds[a + 1]; ++i) {
        const double wi = (i == bounds[a] || i == bounds[a + 1]) ? 0.5 * dt : dt;
        for (std::size_t j = bounds[b]; j <= bounds[b + 1]; ++j) {
          const double wj = (j == bounds[b] || j == bounds[b + 1]) ? 0.5 * dt : dt;
          env_grid += 2 * wi * wj * form.rho_envelope(static_cast<double>(j - i) * dt);
        }
      }
    }
  r.envelope = vsup * env;
  r.envelope_grid = vsup * env_grid;

  if (nb >= 3) {
    GibbsConfig gc{kernel, grid, mcmc, seed};
    auto run = run_chains(
        gc,
        [&](const GibbsChain& ch) {
          return std::vector<double>{neglected_energy(ch.positions().data(), grid.d, bounds, h)};
        },
        threads);
    const auto e = pooled_mean(component_series(run, 0));
    r.neglected_mean = e.mean;
    r.neglected_se = e.se;
  }
  r.entropy_bound = kernel.beta() * r.neglected_mean;
  r.tv_bound = std::sqrt(0.5 * r.entropy_bound);
  r.envelope_tv = std::sqrt(0.5 * kernel.beta() * r.envelope);
  return r;
}

}  // namespace gibbspath
