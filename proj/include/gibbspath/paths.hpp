#pragma once

// Time-gridded Brownian paths stored as increments, the double-integral
// Hamiltonian, occupation fields and diffusive rescaling.

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "gibbspath/error.hpp"
#include "gibbspath/interactions.hpp"
#include "gibbspath/numerics.hpp"

namespace gibbspath {

struct PathGrid {
  double T = 1;
  double dt = 1;
  int d = 1;
  std::size_t n_steps = 1;
};

/// Grid with T an integer multiple of dt; T is recomputed as n_steps * dt.
inline PathGrid make_grid(double T, double dt, int d) {
  if (!(T > 0) || !(dt > 0)) throw InvalidArgument("PathGrid: T and dt must be positive");
  if (d < 1) throw InvalidArgument("PathGrid: dimension must be >= 1");
  const double ratio = T / dt;
  const double n = std::round(ratio);
  if (n < 1 || std::abs(ratio - n) > 1e-9 * std::max(1.0, ratio))
    throw InvalidArgument("PathGrid: T = " + std::to_string(T) + " is not an integer multiple of dt = " +
                          std::to_string(dt));
  return {n * dt, dt, d, static_cast<std::size_t>(n)};
}

/// Increments of a path anchored at the origin; row-major n_steps x d.
struct DiscretePath {
  PathGrid grid;
  std::vector<double> increments;
  std::uint64_t seed = 0;

  std::size_t size() const { return grid.n_steps; }
  int dim() const { return grid.d; }
  const double* increment(std::size_t k) const { return increments.data() + k * grid.d; }

  /// Positions at the n_steps + 1 grid nodes, row-major.
  std::vector<double> positions() const {
    const int d = grid.d;
    std::vector<double> x((grid.n_steps + 1) * d, 0.0);
    for (std::size_t k = 0; k < grid.n_steps; ++k)
      for (int c = 0; c < d; ++c) x[(k + 1) * d + c] = x[k * d + c] + increments[k * d + c];
    return x;
  }

  std::vector<double> position(std::size_t k) const {
    if (k > grid.n_steps) throw InvalidArgument("position: node index out of range");
    std::vector<double> x(grid.d, 0.0);
    for (std::size_t j = 0; j < k; ++j)
      for (int c = 0; c < grid.d; ++c) x[c] += increments[j * grid.d + c];
    return x;
  }

  std::vector<double> endpoint() const { return position(grid.n_steps); }
};

inline DiscretePath zero_path(const PathGrid& grid) {
  return {grid, std::vector<double>(grid.n_steps * grid.d, 0.0), 0};
}

inline DiscretePath sample_path(const PathGrid& grid, std::uint64_t seed) {
  Rng rng(seed);
  DiscretePath p{grid, std::vector<double>(grid.n_steps * grid.d), seed};
  const double s = std::sqrt(grid.dt);
  for (double& v : p.increments) v = s * rng.normal();
  return p;
}

/// Levy refinement: each increment is split at its midpoint with the
/// conditional Brownian law, so the coarse nodes are kept exactly.
inline DiscretePath refine_path(const DiscretePath& p, std::uint64_t seed) {
  Rng rng(seed);
  PathGrid g = p.grid;
  g.dt *= 0.5;
  g.n_steps *= 2;
  DiscretePath out{g, std::vector<double>(g.n_steps * g.d), p.seed};
  const double s = 0.5 * std::sqrt(p.grid.dt);
  for (std::size_t k = 0; k < p.grid.n_steps; ++k)
    for (int c = 0; c < g.d; ++c) {
      const double half = 0.5 * p.increments[k * g.d + c], z = s * rng.normal();
      out.increments[(2 * k) * g.d + c] = half + z;
      out.increments[(2 * k + 1) * g.d + c] = half - z;
    }
  return out;
}

inline DiscretePath time_reverse(const DiscretePath& p) {
  DiscretePath out = p;
  const std::size_t n = p.grid.n_steps;
  const int d = p.grid.d;
  for (std::size_t k = 0; k < n; ++k)
    for (int c = 0; c < d; ++c) out.increments[k * d + c] = -p.increments[(n - 1 - k) * d + c];
  return out;
}

/// The path restricted to [0, k * dt].
inline DiscretePath truncate_path(const DiscretePath& p, std::size_t steps) {
  if (steps == 0 || steps > p.grid.n_steps) throw InvalidArgument("truncate_path: bad step count");
  PathGrid g = p.grid;
  g.n_steps = steps;
  g.T = static_cast<double>(steps) * g.dt;
  return {g, std::vector<double>(p.increments.begin(), p.increments.begin() + steps * g.d), p.seed};
}

// ---------------------------------------------------------------------------
// Pair evaluation on a time grid
// ---------------------------------------------------------------------------

/// Kernel H(m dt, x) for integer lags m, with the lag factor precomputed.
/// Lags at or beyond `max_lag` vanish.
class LagKernel {
 public:
  LagKernel(const KernelForm& form, double dt, std::size_t n_steps) : form_(form), dt_(dt) {
    const double support = form.time_support();
    if (std::isfinite(support)) {
      max_lag_ = static_cast<std::size_t>(std::floor(support / dt + 1e-9)) + 1;
      max_lag_ = std::min(max_lag_, n_steps + 1);
    } else {
      max_lag_ = n_steps + 1;
    }
    lag_.resize(max_lag_ + 1);
    massless_ = form.shape() == KernelForm::Shape::MasslessNelson;
    for (std::size_t m = 0; m <= max_lag_; ++m) {
      const double t = static_cast<double>(m) * dt;
      lag_[m] = massless_ ? std::pow(1.0 + t, form.massless_theta()) : form.rho()(t);
    }
    diag_ = form(0.0, 0.0);
    if (!std::isfinite(diag_)) diag_ = singular_diagonal();
  }

  /// H(m dt, x) given |x|^2; lag must be < max_lag().
  double operator()(std::size_t m, double r2) const {
    if (massless_) return 1.0 / (r2 + lag_[m]);
    const double a = lag_[m];
    return a == 0.0 ? 0.0 : a * form_.v().radial_sq(r2);
  }

  /// Value used at coincident grid times (i = j).
  double diagonal() const { return diag_; }
  /// Lags m with m >= max_lag() contribute nothing.
  std::size_t max_lag() const { return max_lag_; }
  double dt() const { return dt_; }
  const KernelForm& form() const { return form_; }

 private:
  // For |x|^{-p} with eta = 0 the diagonal node carries the average of
  // rho(0) E|W_t - W_s|^{-p} over a dt x dt cell:
  //   E|Z|^{-p} |t-s|^{-p/2},  cell mean of |t-s|^{-q} = 2 dt^{-q} / ((1-q)(2-q)).
  double singular_diagonal() const {
    const auto& v = form_.v();
    if (v.kind() != SpatialPotential::Kind::CoulombPower || v.p() >= 2)
      throw NonFiniteValue("diagonal value H(0,0) is infinite and no cell average is available");
    const double p = v.p(), q = 0.5 * p, d = v.dim();
    const double gauss = std::pow(2.0, -q) * std::tgamma(0.5 * (d - p)) / std::tgamma(0.5 * d);
    return form_.rho()(0) * gauss * 2.0 * std::pow(dt_, -q) / ((1 - q) * (2 - q));
  }

  KernelForm form_;
  double dt_;
  std::size_t max_lag_ = 0;
  std::vector<double> lag_;
  bool massless_ = false;
  double diag_ = 0;
};

inline double squared_distance(const double* a, const double* b, int d) {
  double s = 0;
  for (int c = 0; c < d; ++c) {
    const double u = a[c] - b[c];
    s += u * u;
  }
  return s;
}

/// Trapezoid double sum  sum_{i,j} w_i w_j H((j-i) dt, X_j - X_i)  over
/// nodes 0..n of a position array (row-major, d columns).
inline double hamiltonian_positions(const double* x, std::size_t n, int d, const LagKernel& h) {
  const double dt = h.dt();
  auto w = [&](std::size_t i) { return (i == 0 || i == n) ? 0.5 * dt : dt; };
  double diag = 0;
  for (std::size_t i = 0; i <= n; ++i) diag += w(i) * w(i);
  double total = diag * h.diagonal();
  double off = 0;
  const std::size_t M = std::min(h.max_lag(), n + 1);
  for (std::size_t m = 1; m < M; ++m) {
    for (std::size_t i = 0; i + m <= n; ++i) {
      const double val = h(m, squared_distance(x + (i + m) * d, x + i * d, d));
      off += w(i) * w(i + m) * val;
    }
  }
  total += 2 * off;
  if (!std::isfinite(total)) throw NonFiniteValue("hamiltonian: non-finite energy (coincident positions under a singular potential)");
  return total;
}

/// Trapezoid quadrature of int_0^T int_0^T H(t-s, W_t - W_s) ds dt.
inline double hamiltonian(const DiscretePath& path, const KernelForm& form) {
  if (form.dim() != path.dim()) throw InvalidArgument("hamiltonian: kernel and path dimensions differ");
  const LagKernel h(form, path.grid.dt, path.grid.n_steps);
  const auto x = path.positions();
  return hamiltonian_positions(x.data(), path.grid.n_steps, path.dim(), h);
}

inline double hamiltonian(const DiscretePath& path, const InteractionKernel& kernel) {
  return hamiltonian(path, kernel.form());
}

/// Cross term  sum_{i in A, j in B} w^A_i w^B_j H(lag, X_j - X_i)  between two
/// adjacent blocks of m steps each; `a` and `b` are position arrays of m+1
/// nodes, b starting at the last node of a. Trapezoid weights are per block.
inline double block_cross_energy(const double* a, const double* b, std::size_t m, int d, const LagKernel& h) {
  const double dt = h.dt();
  auto w = [&](std::size_t i) { return (i == 0 || i == m) ? 0.5 * dt : dt; };
  double s = 0;
  const std::size_t M = h.max_lag();
  for (std::size_t i = 0; i <= m; ++i) {
    // lag between node i of a and node j of b is (m - i) + j
    const std::size_t base = m - i;
    if (base >= M) continue;
    for (std::size_t j = 0; j <= m && base + j < M; ++j) {
      const std::size_t lag = base + j;
      const double val = lag == 0 ? h.diagonal() : h(lag, squared_distance(b + j * d, a + i * d, d));
      s += w(i) * w(j) * val;
    }
  }
  return s;
}

// ---------------------------------------------------------------------------
// Occupation fields
// ---------------------------------------------------------------------------

/// Lambda_V(x) = int_0^1 V(W_s - x) ds by the trapezoid rule on the path grid.
inline double lambda_field(const DiscretePath& path, const SpatialPotential& v, std::span<const double> x) {
  if (std::abs(path.grid.T - 1.0) > 1e-12) throw InvalidArgument("lambda_field: path horizon must be 1");
  if (static_cast<int>(x.size()) != path.dim() || v.dim() != path.dim())
    throw InvalidArgument("lambda_field: dimension mismatch");
  const auto pos = path.positions();
  const std::size_t n = path.grid.n_steps;
  const int d = path.dim();
  double s = 0;
  for (std::size_t i = 0; i <= n; ++i) {
    const double w = (i == 0 || i == n) ? 0.5 : 1.0;
    s += w * v.radial_sq(squared_distance(pos.data() + i * d, x.data(), d));
  }
  s *= path.grid.dt;
  if (!std::isfinite(s)) throw NonFiniteValue("lambda_field: evaluation point lies on the path under a singular potential");
  return s;
}

/// Mollified local time L_1(x) of a one-dimensional path on [0, 1].
inline double local_time(const DiscretePath& path, double x, double kappa) {
  if (path.dim() != 1) throw InvalidArgument("local_time: requires d = 1");
  const auto v = SpatialPotential::mollified_delta(kappa, 1);
  const double pt[1] = {x};
  return lambda_field(path, v, pt);
}

// ---------------------------------------------------------------------------
// Diffusive scaling
// ---------------------------------------------------------------------------

/// t -> eps W(t / eps^2): horizon and step scale by eps^2, increments by eps.
inline DiscretePath diffusive_rescale(const DiscretePath& path, double eps) {
  if (!(eps > 0)) throw InvalidArgument("diffusive_rescale: eps must be positive");
  DiscretePath out = path;
  out.grid.T = path.grid.T * eps * eps;
  out.grid.dt = path.grid.dt * eps * eps;
  for (double& v : out.increments) v *= eps;
  return out;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------
//
// CSV:    "# T=<T>,dt=<dt>,d=<d>,seed=<seed>" then one row of d increments per step.
// Binary: "GPATH001", f64 T, f64 dt, u32 d, u64 seed, u64 n_steps, then
//         n_steps*d f64 increments row-major (little-endian host order).

inline void write_path_csv(const DiscretePath& p, std::ostream& out) {
  out << std::setprecision(17) << "# T=" << p.grid.T << ",dt=" << p.grid.dt << ",d=" << p.grid.d
      << ",seed=" << p.seed << "\n";
  for (std::size_t k = 0; k < p.grid.n_steps; ++k) {
    for (int c = 0; c < p.grid.d; ++c) out << (c ? "," : "") << p.increments[k * p.grid.d + c];
    out << "\n";
  }
}

inline DiscretePath read_path_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line.rfind("# T=", 0) != 0) throw InvalidArgument("path csv: missing header");
  double T = 0, dt = 0;
  int d = 0;
  unsigned long long seed = 0;
  if (std::sscanf(line.c_str(), "# T=%lf,dt=%lf,d=%d,seed=%llu", &T, &dt, &d, &seed) != 4)
    throw InvalidArgument("path csv: malformed header '" + line + "'");
  DiscretePath p{make_grid(T, dt, d), {}, seed};
  p.increments.reserve(p.grid.n_steps * d);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) p.increments.push_back(std::stod(cell));
  }
  if (p.increments.size() != p.grid.n_steps * static_cast<std::size_t>(d))
    throw InvalidArgument("path csv: expected " + std::to_string(p.grid.n_steps * d) + " values, got " +
                          std::to_string(p.increments.size()));
  return p;
}

inline void write_path_binary(const DiscretePath& p, std::ostream& out) {
  const char magic[8] = {'G', 'P', 'A', 'T', 'H', '0', '0', '1'};
  out.write(magic, 8);
  const std::uint32_t d = static_cast<std::uint32_t>(p.grid.d);
  const std::uint64_t seed = p.seed, n = p.grid.n_steps;
  out.write(reinterpret_cast<const char*>(&p.grid.T), sizeof(double));
  out.write(reinterpret_cast<const char*>(&p.grid.dt), sizeof(double));
  out.write(reinterpret_cast<const char*>(&d), sizeof d);
  out.write(reinterpret_cast<const char*>(&seed), sizeof seed);
  out.write(reinterpret_cast<const char*>(&n), sizeof n);
  out.write(reinterpret_cast<const char*>(p.increments.data()),
            static_cast<std::streamsize>(p.increments.size() * sizeof(double)));
}

inline DiscretePath read_path_binary(std::istream& in) {
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, "GPATH001", 8) != 0) throw InvalidArgument("path binary: bad magic");
  double T, dt;
  std::uint32_t d;
  std::uint64_t seed, n;
  in.read(reinterpret_cast<char*>(&T), sizeof T);
  in.read(reinterpret_cast<char*>(&dt), sizeof dt);
  in.read(reinterpret_cast<char*>(&d), sizeof d);
  in.read(reinterpret_cast<char*>(&seed), sizeof seed);
  in.read(reinterpret_cast<char*>(&n), sizeof n);
  if (!in) throw InvalidArgument("path binary: truncated header");
  DiscretePath p{PathGrid{T, dt, static_cast<int>(d), static_cast<std::size_t>(n)}, std::vector<double>(n * d), seed};
  in.read(reinterpret_cast<char*>(p.increments.data()), static_cast<std::streamsize>(n * d * sizeof(double)));
  if (!in) throw InvalidArgument("path binary: truncated increments");
  return p;
}

}  // namespace gibbspath
