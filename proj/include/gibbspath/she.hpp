#pragma once

// Mollified stochastic heat equation: effective kernel of the annealed
// Feynman-Kac weight, the Gaussian identity behind it, the annealed ratio
// E[u_eps(t,x)] / Z, the homogenized reference and partition growth.

#include <Eigen/Dense>
#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "gibbspath/error.hpp"
#include "gibbspath/gibbs_mcmc.hpp"
#include "gibbspath/interactions.hpp"
#include "gibbspath/mollifier.hpp"
#include "gibbspath/numerics.hpp"
#include "gibbspath/paths.hpp"

namespace gibbspath {

// ---------------------------------------------------------------------------
// Mollifiers
// ---------------------------------------------------------------------------

struct MollifierPair {
  double psi_half_width = 0.5;
  double phi_radius = 0.3;
  int d = 3;
  Bump psi{0.5, 1};
  Bump phi{0.3, 3};
  std::shared_ptr<const RadialTable> psi_conv;  // (psi * psi)(t), support 2 psi_half_width
  std::shared_ptr<const RadialTable> phi_conv;  // (phi * phi)(|x|), support 2 phi_radius
};

inline MollifierPair make_mollifier_pair(double psi_half_width, double phi_radius, int d) {
  MollifierPair p;
  p.psi_half_width = psi_half_width;
  p.phi_radius = phi_radius;
  p.d = d;
  p.psi = Bump(psi_half_width, 1);
  p.phi = Bump(phi_radius, d);
  p.psi_conv = self_convolve_1d(p.psi);
  p.phi_conv = self_convolve_radial(p.phi);
  return p;
}

/// psi_eps(t) = eps^-2 psi(t / eps^2), phi_eps(x) = eps^-d phi(x / eps),
/// with their self-convolutions computed afresh.
inline MollifierPair scaled_pair(const MollifierPair& p, double eps) {
  return make_mollifier_pair(p.psi_half_width * eps * eps, p.phi_radius * eps, p.d);
}

/// The same tabulated values read at argument / scale.
inline std::shared_ptr<const RadialTable> stretched_table(const RadialTable& t, double scale) {
  return std::make_shared<const RadialTable>(t.support() * scale, t.values());
}

/// rho = psi*psi, V = phi*phi. The noise strength beta enters the Gibbs
/// coupling as beta^2 / 2 (the variance of the Gaussian exponent).
inline InteractionKernel effective_kernel(const MollifierPair& p, double beta) {
  return InteractionKernel(KernelForm(TimeCorrelation::self_convolved(p.psi_conv),
                                      SpatialPotential::self_convolved(p.phi_conv, p.d)),
                           0.5 * beta * beta);
}

// ---------------------------------------------------------------------------
// Initial conditions with closed-form heat semigroups
// ---------------------------------------------------------------------------

struct InitialCondition {
  enum class Kind { Constant, Cosine, GaussianBump, Quadratic, QuadraticTruncated };
  Kind kind = Kind::Constant;
  double value = 1.0;          // constant value; bump width; truncation cap
  std::vector<double> k;       // wave vector for Cosine
  std::vector<double> shift;   // u0(y) = f(y - shift); empty means 0

  static InitialCondition constant(double c) { return {Kind::Constant, c, {}, {}}; }
  static InitialCondition cosine(std::vector<double> k) { return {Kind::Cosine, 1.0, std::move(k), {}}; }
  static InitialCondition gaussian_bump(double width) { return {Kind::GaussianBump, width, {}, {}}; }
  static InitialCondition quadratic() { return {Kind::Quadratic, 0, {}, {}}; }
  static InitialCondition quadratic_truncated(double cap) { return {Kind::QuadraticTruncated, cap, {}, {}}; }

  InitialCondition shifted(std::vector<double> s) const {
    InitialCondition c = *this;
    c.shift = std::move(s);
    return c;
  }

  double operator()(std::span<const double> y) const {
    double r2 = 0, dot = 0;
    for (std::size_t i = 0; i < y.size(); ++i) {
      const double u = y[i] - (shift.empty() ? 0.0 : shift[i]);
      r2 += u * u;
      if (kind == Kind::Cosine) dot += k.at(i) * u;
    }
    switch (kind) {
      case Kind::Constant: return value;
      case Kind::Cosine: return std::cos(dot);
      case Kind::GaussianBump: return std::exp(-0.5 * r2 / (value * value));
      case Kind::Quadratic: return r2;
      case Kind::QuadraticTruncated: return std::min(r2, value);
    }
    return 0;
  }

  /// E[u0(x + sqrt(s) Z)] in closed form; NaN when none is available.
  double heat(std::span<const double> x, double s) const {
    const std::size_t d = x.size();
    double r2 = 0, dot = 0, k2 = 0;
    for (std::size_t i = 0; i < d; ++i) {
      const double u = x[i] - (shift.empty() ? 0.0 : shift[i]);
      r2 += u * u;
      if (kind == Kind::Cosine) {
        dot += k.at(i) * u;
        k2 += k[i] * k[i];
      }
    }
    switch (kind) {
      case Kind::Constant: return value;
      case Kind::Cosine: return std::exp(-0.5 * s * k2) * std::cos(dot);
      case Kind::GaussianBump: {
        const double w2 = value * value;
        return std::pow(w2 / (w2 + s), 0.5 * static_cast<double>(d)) * std::exp(-0.5 * r2 / (w2 + s));
      }
      case Kind::Quadratic: return r2 + static_cast<double>(d) * s;
      case Kind::QuadraticTruncated: return std::numeric_limits<double>::quiet_NaN();
    }
    return 0;
  }
};

/// Gauss-Hermite rule for the standard normal weight (Golub-Welsch).
inline QuadratureRule gauss_hermite(std::size_t n) {
  Eigen::MatrixXd J = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (std::size_t i = 1; i < n; ++i)
    J(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i - 1)) =
        J(static_cast<Eigen::Index>(i - 1), static_cast<Eigen::Index>(i)) = std::sqrt(static_cast<double>(i));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(J);
  QuadratureRule r;
  for (std::size_t i = 0; i < n; ++i) {
    r.nodes.push_back(es.eigenvalues()(static_cast<Eigen::Index>(i)));
    const double v = es.eigenvectors()(0, static_cast<Eigen::Index>(i));
    r.weights.push_back(v * v);
  }
  return r;
}

/// Homogenized solution u(t,x) = E[u0(x + sqrt(a t) Z)] for the diffusion
/// matrix a * I, by tensor Gauss-Hermite quadrature.
inline double homogenized_reference(double t, std::span<const double> x, const InitialCondition& u0, double a,
                                    std::size_t nodes = 24) {
  if (!(a > 0)) throw InvalidArgument("homogenized_reference: diffusion coefficient must be positive");
  const std::size_t d = x.size();
  const auto gh = gauss_hermite(nodes);
  const double s = std::sqrt(a * t);
  std::vector<std::size_t> idx(d, 0);
  std::vector<double> y(d);
  double total = 0;
  while (true) {
    double w = 1;
    for (std::size_t i = 0; i < d; ++i) {
      y[i] = x[i] + s * gh.nodes[idx[i]];
      w *= gh.weights[idx[i]];
    }
    total += w * u0(y);
    std::size_t i = 0;
    while (i < d && ++idx[i] == nodes) idx[i++] = 0;
    if (i == d) break;
  }
  return total;
}

// ---------------------------------------------------------------------------
// Gaussian identity for a frozen path
// ---------------------------------------------------------------------------

struct GaussianIdentityReport {
  double exponent_first = 0;   // beta^2/2 eps^{d-2} int int (psi_e*psi_e)(phi_e*phi_e)
  double exponent_middle = 0;  // beta^2/2 eps^-4 int int (psi*psi)(./eps^2)(phi*phi)(./eps)
  double exponent_last = 0;    // beta^2/2 int int over [0, t/eps^2] of the Brownian-rescaled path
  double max_rel_discrepancy = 0;
};

/// Evaluates the three lines of the Gaussian identity on a frozen path over
/// [0, t]; the last line uses the path t -> W(eps^2 t) / eps on the stretched grid.
inline GaussianIdentityReport gaussian_identity_check(const DiscretePath& path, const MollifierPair& pair, double beta,
                                                      double eps) {
  if (path.dim() != pair.d) throw InvalidArgument("gaussian_identity_check: dimension mismatch");
  const int d = pair.d;
  const double c = 0.5 * beta * beta;
  GaussianIdentityReport r;

  const MollifierPair pe = scaled_pair(pair, eps);
  const KernelForm first(TimeCorrelation::self_convolved(pe.psi_conv), SpatialPotential::self_convolved(pe.phi_conv, d));
  r.exponent_first = c * std::pow(eps, d - 2) * hamiltonian(path, first);

  const KernelForm middle(TimeCorrelation::self_convolved(stretched_table(*pair.psi_conv, eps * eps)),
                          SpatialPotential::self_convolved(stretched_table(*pair.phi_conv, eps), d));
  r.exponent_middle = c * std::pow(eps, -4) * hamiltonian(path, middle);

  const DiscretePath stretched = diffusive_rescale(path, 1.0 / eps);
  const KernelForm last(TimeCorrelation::self_convolved(pair.psi_conv), SpatialPotential::self_convolved(pair.phi_conv, d));
  r.exponent_last = c * hamiltonian(stretched, last);

  const double e1 = std::exp(r.exponent_first), e2 = std::exp(r.exponent_middle), e3 = std::exp(r.exponent_last);
  r.max_rel_discrepancy =
      std::max({std::abs(e1 - e2) / e2, std::abs(e1 - e3) / e3, std::abs(e2 - e3) / e3});
  return r;
}

struct NoiseOracleReport {
  double mc_mean = 0;          // mean of exp{beta eps^{(d-2)/2} M} over noise draws
  double mc_se = 0;
  double predicted = 0;        // exp{ variance / 2 } with the quadrature variance
  double quad_variance = 0;    // beta^2 eps^{d-2} int int (psi_e*psi_e)(phi_e*phi_e) by the tables
  double lattice_variance = 0; // the same variance from the noise lattice
  std::size_t cells = 0;
  std::size_t draws = 0;
  double z_score() const { return mc_se > 0 ? (mc_mean - predicted) / mc_se : 0.0; }
};

/// Direct simulation of white noise on a space-time lattice of cell sizes
/// (h_time, h_space): M = int_0^t B_eps(s, W_s) ds = sum_c g_c sqrt(|c|) Z_c with
/// g(r, y) = int_0^t psi_eps(s - r) phi_eps(W_s - y) ds by the path-grid trapezoid.
inline NoiseOracleReport direct_noise_oracle(const DiscretePath& path, const MollifierPair& pair, double beta,
                                             double eps, double h_time, double h_space, std::size_t draws,
                                             std::uint64_t seed, std::size_t threads = default_threads()) {
  const int d = pair.d;
  if (path.dim() != d) throw InvalidArgument("direct_noise_oracle: dimension mismatch");
  const MollifierPair pe = scaled_pair(pair, eps);
  const double a = beta * std::pow(eps, 0.5 * (d - 2));
  const std::size_t n = path.grid.n_steps;
  const double dt = path.grid.dt;
  const auto x = path.positions();
  const auto cw = trapezoid_weights(n, dt);

  const double hw = pe.psi.radius(), R = pe.phi.radius();
  std::vector<double> lo(d), hi(d);
  for (int c = 0; c < d; ++c) {
    lo[c] = hi[c] = 0;
    for (std::size_t k = 0; k <= n; ++k) {
      lo[c] = std::min(lo[c], x[k * d + c]);
      hi[c] = std::max(hi[c], x[k * d + c]);
    }
    lo[c] -= R;
    hi[c] += R;
  }
  const double r_lo = -hw, r_hi = path.grid.T + hw;
  const std::size_t nr = static_cast<std::size_t>(std::ceil((r_hi - r_lo) / h_time));
  std::vector<std::size_t> ny(d);
  std::size_t space_cells = 1;
  for (int c = 0; c < d; ++c) {
    ny[c] = static_cast<std::size_t>(std::ceil((hi[c] - lo[c]) / h_space));
    space_cells *= ny[c];
  }
  const double vol = h_time * std::pow(h_space, d);
  std::vector<double> coef;
  std::vector<double> y(d), diff(d);
  for (std::size_t ir = 0; ir < nr; ++ir) {
    const double r = r_lo + (static_cast<double>(ir) + 0.5) * h_time;
    for (std::size_t cell = 0; cell < space_cells; ++cell) {
      std::size_t rem = cell;
      for (int c = 0; c < d; ++c) {
        y[c] = lo[c] + (static_cast<double>(rem % ny[c]) + 0.5) * h_space;
        rem /= ny[c];
      }
      double g = 0;
      for (std::size_t k = 0; k <= n; ++k) {
        const double pt = pe.psi(static_cast<double>(k) * dt - r);
        if (pt == 0) continue;
        const double r2 = squared_distance(x.data() + k * d, y.data(), d);
        if (r2 >= R * R) continue;
        g += cw[k] * pt * pe.phi(std::sqrt(r2));
      }
      if (g != 0) coef.push_back(a * g * std::sqrt(vol));
    }
  }
  NoiseOracleReport rep;
  rep.cells = coef.size();
  rep.draws = draws;
  for (double v : coef) rep.lattice_variance += v * v;
  const KernelForm form(TimeCorrelation::self_convolved(pe.psi_conv), SpatialPotential::self_convolved(pe.phi_conv, d));
  rep.quad_variance = a * a * hamiltonian(path, form);
  rep.predicted = std::exp(0.5 * rep.quad_variance);

  const std::size_t blocks = 64;
  std::vector<double> sums(blocks, 0), sq(blocks, 0);
  parallel_for(blocks, threads, [&](std::size_t b) {
    Rng rng(stream_seed(seed, b));
    const std::size_t lo_i = draws * b / blocks, hi_i = draws * (b + 1) / blocks;
    for (std::size_t i = lo_i; i < hi_i; ++i) {
      double m = 0;
      for (double v : coef) m += v * rng.normal();
      const double e = std::exp(m);
      sums[b] += e;
      sq[b] += e * e;
    }
  });
  double s = 0, s2 = 0;
  for (std::size_t b = 0; b < blocks; ++b) {
    s += sums[b];
    s2 += sq[b];
  }
  const double nd = static_cast<double>(draws);
  rep.mc_mean = s / nd;
  rep.mc_se = std::sqrt(std::max(0.0, s2 / nd - rep.mc_mean * rep.mc_mean) / (nd - 1));
  return rep;
}

// ---------------------------------------------------------------------------
// Annealed ratio
// ---------------------------------------------------------------------------

enum class RatioRoute { Gibbs, Importance };

struct SheConfig {
  int d = 3;
  double beta = 1;
  double t = 1;
  std::vector<double> x{0, 0, 0};
  double eps = 0.5;
  InitialCondition u0 = InitialCondition::cosine({1, 0, 0});
  double psi_half_width = 0.5;
  double phi_radius = 0.3;
  double dt = 1.0 / 16;                // microscopic path step
  McmcSettings mcmc{.block_length = 16, .sweeps = 20000, .burn_in = 500, .thin = 2, .chains = 4};
  std::size_t importance_samples = 20000;
  RatioRoute route = RatioRoute::Gibbs;
  std::uint64_t seed = 0;
};

struct RatioEstimate {
  double ratio = 0;
  double se = 0;
  double n_eff = 0;
  double T = 0;  // microscopic horizon t / eps^2
  RatioRoute route = RatioRoute::Gibbs;
};

/// E[u_eps(t, x)] / Z = E_Q[u0(x + eps W_T)], T = t / eps^2, Q the Gibbs
/// measure of the effective kernel on [0, T].
inline RatioEstimate annealed_ratio(const SheConfig& cfg, const MollifierPair& pair,
                                    std::size_t threads = default_threads()) {
  if (!(cfg.eps > 0 && cfg.eps <= 1)) throw InvalidArgument("annealed_ratio: eps must lie in (0, 1]");
  if (cfg.d < 3) throw RejectedParameters("annealed_ratio: the heat-equation regime requires d >= 3");
  if (static_cast<int>(cfg.x.size()) != cfg.d || pair.d != cfg.d) throw InvalidArgument("annealed_ratio: dimension mismatch");
  const auto kernel = effective_kernel(pair, cfg.beta);
  const PathGrid grid = make_grid(cfg.t / (cfg.eps * cfg.eps), cfg.dt, cfg.d);
  const int d = cfg.d;
  RatioEstimate out;
  out.T = grid.T;
  out.route = cfg.route;
  auto u_at = [&](const double* end) {
    double y[16];
    for (int c = 0; c < d; ++c) y[c] = cfg.x[c] + cfg.eps * end[c];
    return cfg.u0(std::span<const double>(y, d));
  };

  if (cfg.route == RatioRoute::Gibbs) {
    GibbsConfig gc{kernel, grid, cfg.mcmc, cfg.seed};
    auto run = run_chains(
        gc, [&](const GibbsChain& ch) { return std::vector<double>{u_at(ch.node(grid.n_steps))}; }, threads);
    const auto e = pooled_mean(component_series(run, 0));
    out.ratio = e.mean;
    out.se = e.se;
    out.n_eff = e.n_eff;
    if (e.n_eff < cfg.mcmc.min_effective_samples)
      throw DegenerateSample("annealed_ratio: effective sample size " + std::to_string(e.n_eff) + " below floor");
    return out;
  }

  const std::size_t N = cfg.importance_samples;
  std::vector<double> lw(N), u(N);
  const LagKernel h(kernel.form(), grid.dt, grid.n_steps);
  parallel_for(N, threads, [&](std::size_t i) {
    const auto p = sample_path(grid, stream_seed(cfg.seed, i));
    const auto x = p.positions();
    lw[i] = kernel.beta() == 0 ? 0.0 : kernel.beta() * hamiltonian_positions(x.data(), grid.n_steps, d, h);
    u[i] = u_at(x.data() + grid.n_steps * d);
  });
  double mx = *std::max_element(lw.begin(), lw.end());
  double sw = 0, sw2 = 0, swu = 0;
  std::vector<double> w(N);
  for (std::size_t i = 0; i < N; ++i) {
    w[i] = std::exp(lw[i] - mx);
    sw += w[i];
    swu += w[i] * u[i];
  }
  out.ratio = swu / sw;
  double var = 0;
  for (std::size_t i = 0; i < N; ++i) {
    const double wn = w[i] / sw;
    sw2 += wn * wn;
    var += wn * wn * (u[i] - out.ratio) * (u[i] - out.ratio);
  }
  out.se = std::sqrt(var);
  out.n_eff = 1.0 / sw2;
  if (out.n_eff < cfg.mcmc.min_effective_samples)
    throw DegenerateSample("annealed_ratio: importance weights degenerate (ESS " + std::to_string(out.n_eff) + ")");
  return out;
}

// ---------------------------------------------------------------------------
// Partition growth
// ---------------------------------------------------------------------------

struct PartitionGrowth {
  std::vector<double> eps;
  std::vector<double> horizon;  // t / eps^2
  std::vector<double> log_z;
  std::vector<double> log_z_se;
  LinearFit fit;                // log Z = theta1 + theta0 * horizon
  double theta0 = 0;
  double theta1 = 0;
  bool poor_fit = false;
};

/// log Z_{beta,eps,t} by thermodynamic integration along a uniform grid of
/// Gibbs couplings, then a linear fit against t / eps^2.
inline PartitionGrowth partition_growth(const MollifierPair& pair, double beta, double t,
                                        const std::vector<double>& eps_list, double dt, const McmcSettings& mcmc,
                                        std::size_t beta_nodes, std::uint64_t seed, double min_r2 = 0.99,
                                        std::size_t threads = default_threads()) {
  if (eps_list.size() < 3) throw InvalidArgument("partition_growth: need at least three values of eps");
  if (beta_nodes < 2) throw InvalidArgument("partition_growth: need at least two coupling nodes");
  const auto kernel = effective_kernel(pair, beta);
  std::vector<double> grid(beta_nodes);
  for (std::size_t i = 0; i < beta_nodes; ++i)
    grid[i] = kernel.beta() * static_cast<double>(i) / static_cast<double>(beta_nodes - 1);
  PartitionGrowth out;
  for (std::size_t k = 0; k < eps_list.size(); ++k) {
    const double e = eps_list[k];
    out.eps.push_back(e);
    const PathGrid g = make_grid(t / (e * e), dt, pair.d);
    out.horizon.push_back(g.T);
    if (kernel.beta() == 0) {
      out.log_z.push_back(0);
      out.log_z_se.push_back(0);
      continue;
    }
    GibbsConfig gc{kernel, g, mcmc, stream_seed(seed, k)};
    const auto lz = log_partition(gc, grid, std::numeric_limits<double>::infinity(), threads);
    out.log_z.push_back(lz.log_z.back());
    out.log_z_se.push_back(lz.log_z_se.back());
  }
  out.fit = linear_fit(out.horizon, out.log_z);
  out.theta0 = out.fit.slope;
  out.theta1 = out.fit.intercept;
  out.poor_fit = kernel.beta() > 0 && out.fit.r_squared < min_r2;
  return out;
}

}  // namespace gibbspath
