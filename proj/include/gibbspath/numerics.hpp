#pragma once

// Small numerical toolkit shared by every module: quadrature rules,
// seeded random streams, summary statistics and a deterministic
// parallel-for.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <numbers>
#include <random>
#include <span>
#include <thread>
#include <vector>

#include "gibbspath/error.hpp"

namespace gibbspath {

inline constexpr double kPi = std::numbers::pi;

// ---------------------------------------------------------------------------
// Random streams
// ---------------------------------------------------------------------------

/// SplitMix64 finalizer; used to derive independent stream seeds.
constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Seed for replica `index` of a run seeded with `seed`.
constexpr std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t index) {
  return splitmix64(seed ^ splitmix64(index + 0x632BE59BD9B4E019ULL));
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(splitmix64(seed)) {}

  double normal() { return normal_(engine_); }
  double uniform() { return uniform_(engine_); }
  /// Uniform integer in [0, n).
  std::size_t index(std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
  }
  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

// ---------------------------------------------------------------------------
// Special functions
// ---------------------------------------------------------------------------

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

/// Standard normal quantile (Acklam's rational approximation refined by one
/// Newton step; ~1e-15 relative).
inline double normal_quantile(double p) {
  if (p <= 0.0 || p >= 1.0) throw InvalidArgument("normal_quantile: p outside (0,1)");
  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                                 -2.759285104469687e+02, 1.383577518672690e+02,
                                 -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                                 -1.556989798598866e+02, 6.680131188771972e+01,
                                 -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                 -2.400758277161838e+00, -2.549732539343734e+00,
                                 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                                 2.445134137142996e+00, 3.754408661907416e+00};
  double x;
  if (p < 0.02425) {
    const double q = std::sqrt(-2 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
  } else if (p > 1 - 0.02425) {
    const double q = std::sqrt(-2 * std::log(1 - p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
  } else {
    const double q = p - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1);
  }
  const double e = normal_cdf(x) - p;
  const double u = e * std::sqrt(2 * kPi) * std::exp(x * x / 2);
  return x - u / (1 + x * u / 2);
}

/// Two-sided 97.5% Student-t quantile for `dof` degrees of freedom.
inline double student_t975(std::size_t dof) {
  static constexpr double table[] = {0,      12.706, 4.303, 3.182, 2.776, 2.571, 2.447,
                                     2.365,  2.306,  2.262, 2.228, 2.201, 2.179, 2.160,
                                     2.145,  2.131,  2.120, 2.110, 2.101, 2.093, 2.086,
                                     2.080,  2.074,  2.069, 2.064, 2.060, 2.056, 2.052,
                                     2.048,  2.045,  2.042};
  if (dof == 0) throw InvalidArgument("student_t975: zero degrees of freedom");
  if (dof <= 30) return table[dof];
  return 1.959964 + 2.4 / static_cast<double>(dof);
}

// ---------------------------------------------------------------------------
// Quadrature
// ---------------------------------------------------------------------------

struct QuadratureRule {
  std::vector<double> nodes;
  std::vector<double> weights;
};

/// n-point Gauss-Legendre rule mapped to [a, b].
inline QuadratureRule gauss_legendre(std::size_t n, double a = -1.0, double b = 1.0) {
  QuadratureRule rule;
  rule.nodes.resize(n);
  rule.weights.resize(n);
  const double mid = 0.5 * (a + b), half = 0.5 * (b - a);
  for (std::size_t i = 0; i < (n + 1) / 2; ++i) {
    double z = std::cos(kPi * (static_cast<double>(i) + 0.75) / (static_cast<double>(n) + 0.5));
    double dp = 0;
    for (int iter = 0; iter < 100; ++iter) {
      double p0 = 1, p1 = 0;
      for (std::size_t k = 1; k <= n; ++k) {
        const double p2 = p1;
        p1 = p0;
        p0 = ((2.0 * k - 1) * z * p1 - (k - 1.0) * p2) / static_cast<double>(k);
      }
      dp = static_cast<double>(n) * (z * p0 - p1) / (z * z - 1);
      const double dz = p0 / dp;
      z -= dz;
      if (std::abs(dz) < 1e-16) break;
    }
    // recompute derivative at the converged root
    double p0 = 1, p1 = 0;
    for (std::size_t k = 1; k <= n; ++k) {
      const double p2 = p1;
      p1 = p0;
      p0 = ((2.0 * k - 1) * z * p1 - (k - 1.0) * p2) / static_cast<double>(k);
    }
    dp = static_cast<double>(n) * (z * p0 - p1) / (z * z - 1);
    const double w = 2.0 / ((1 - z * z) * dp * dp);
    rule.nodes[i] = mid - half * z;
    rule.nodes[n - 1 - i] = mid + half * z;
    rule.weights[i] = rule.weights[n - 1 - i] = half * w;
  }
  return rule;
}

/// Composite Gauss-Legendre over `panels` equal panels of [a, b].
inline QuadratureRule composite_gauss(std::size_t panels, std::size_t order, double a, double b) {
  QuadratureRule out;
  const double h = (b - a) / static_cast<double>(panels);
  const auto base = gauss_legendre(order);
  for (std::size_t p = 0; p < panels; ++p) {
    const double lo = a + h * static_cast<double>(p);
    for (std::size_t i = 0; i < order; ++i) {
      out.nodes.push_back(lo + 0.5 * h * (base.nodes[i] + 1));
      out.weights.push_back(0.5 * h * base.weights[i]);
    }
  }
  return out;
}

/// Tanh-sinh (double exponential) quadrature on [a, b]; tolerant of
/// integrable endpoint singularities. `f` receives (x, distance to a,
/// distance to b) so singular integrands can be evaluated without
/// cancellation near the endpoints.
inline double tanh_sinh(const std::function<double(double, double, double)>& f, double a, double b,
                        int levels = 7, double h0 = 1.0, double t_max = 3.2) {
  const double half = 0.5 * (b - a);
  auto term = [&](double t) {
    const double s = 0.5 * kPi * std::sinh(t);
    const double c = std::cosh(s);
    const double w = 0.5 * kPi * std::cosh(t) / (c * c);
    // distance of the node from each endpoint, computed without cancellation
    const double e = std::exp(-2 * std::abs(s));
    const double near = half * 2 * e / (1 + e);  // half*(1 - tanh|s|)
    const double dl = s < 0 ? near : 2 * half - near;
    const double dr = s < 0 ? 2 * half - near : near;
    if (dl <= 0 || dr <= 0) return 0.0;
    return half * w * f(s < 0 ? a + dl : b - dr, dl, dr);
  };
  double h = h0;
  double sum = term(0);
  for (double t = h; t <= t_max; t += h) sum += term(t) + term(-t);
  double estimate = h * sum;
  for (int level = 1; level < levels; ++level) {
    h *= 0.5;
    double extra = 0;
    for (double t = h; t <= t_max; t += 2 * h) extra += term(t) + term(-t);
    sum += extra;
    estimate = h * sum;
  }
  return estimate;
}

/// Trapezoid weights for n+1 equispaced nodes with spacing h.
inline std::vector<double> trapezoid_weights(std::size_t n, double h) {
  std::vector<double> w(n + 1, h);
  w.front() = w.back() = 0.5 * h;
  if (n == 0) w[0] = 0;
  return w;
}

// ---------------------------------------------------------------------------
// Statistics
// ---------------------------------------------------------------------------

struct MeanSe {
  double mean = 0;
  double se = 0;
};

inline double mean(std::span<const double> x) {
  if (x.empty()) return 0;
  double s = 0;
  for (double v : x) s += v;
  return s / static_cast<double>(x.size());
}

/// Unbiased sample variance.
inline double sample_variance(std::span<const double> x) {
  if (x.size() < 2) return 0;
  const double m = mean(x);
  double s = 0;
  for (double v : x) s += (v - m) * (v - m);
  return s / static_cast<double>(x.size() - 1);
}

inline MeanSe mean_se(std::span<const double> x) {
  return {mean(x), std::sqrt(sample_variance(x) / static_cast<double>(std::max<std::size_t>(x.size(), 1)))};
}

/// Batch-means estimate of the mean and its standard error for a
/// correlated series.
inline MeanSe batch_means(std::span<const double> x, std::size_t batches = 32) {
  const std::size_t n = x.size();
  if (n < 2 * batches) return mean_se(x);
  const std::size_t b = n / batches;
  std::vector<double> means(batches);
  for (std::size_t k = 0; k < batches; ++k) means[k] = mean(x.subspan(k * b, b));
  return {mean(x), std::sqrt(sample_variance(means) / static_cast<double>(batches))};
}

struct LinearFit {
  double slope = 0;
  double intercept = 0;
  double slope_se = 0;
  double intercept_se = 0;
  double r_squared = 0;
  std::size_t n = 0;
};

/// Ordinary least squares y = intercept + slope x.
inline LinearFit linear_fit(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw InvalidArgument("linear_fit: need >= 2 matched points");
  const std::size_t n = x.size();
  const double mx = mean(x), my = mean(y);
  double sxx = 0, sxy = 0, syy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  LinearFit fit;
  fit.n = n;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  double rss = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = y[i] - fit.intercept - fit.slope * x[i];
    rss += r * r;
  }
  fit.r_squared = syy > 0 ? 1 - rss / syy : 1.0;
  if (n > 2) {
    const double s2 = rss / static_cast<double>(n - 2);
    fit.slope_se = std::sqrt(s2 / sxx);
    fit.intercept_se = std::sqrt(s2 * (1.0 / static_cast<double>(n) + mx * mx / sxx));
  }
  return fit;
}

// ---------------------------------------------------------------------------
// Histograms
// ---------------------------------------------------------------------------

/// Equal-width bin edges covering [lo, hi].
inline std::vector<double> uniform_edges(double lo, double hi, std::size_t bins) {
  if (!(hi > lo) || bins == 0) throw InvalidArgument("uniform_edges: need hi > lo and bins > 0");
  std::vector<double> e(bins + 1);
  for (std::size_t i = 0; i <= bins; ++i) e[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(bins);
  return e;
}

/// Weighted histogram normalized to total mass 1; values outside the edges
/// are clamped into the first/last bin. Empty weights mean unit weights.
inline std::vector<double> binned_distribution(std::span<const double> values, std::span<const double> weights,
                                               std::span<const double> edges) {
  const std::size_t bins = edges.size() - 1;
  std::vector<double> h(bins, 0.0);
  double total = 0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double w = weights.empty() ? 1.0 : weights[i];
    auto it = std::upper_bound(edges.begin(), edges.end(), values[i]);
    std::size_t b = it == edges.begin() ? 0 : static_cast<std::size_t>(it - edges.begin()) - 1;
    if (b >= bins) b = bins - 1;
    h[b] += w;
    total += w;
  }
  if (total > 0)
    for (double& v : h) v /= total;
  return h;
}

/// Total variation distance 1/2 sum |p - q| between two histograms.
inline double tv_distance(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw InvalidArgument("tv_distance: histogram sizes differ");
  double s = 0;
  for (std::size_t i = 0; i < p.size(); ++i) s += std::abs(p[i] - q[i]);
  return 0.5 * s;
}

// ---------------------------------------------------------------------------
// Deterministic parallel loop
// ---------------------------------------------------------------------------

/// Runs fn(i) for i in [0, n) on up to `threads` workers using a fixed
/// contiguous partition. Each index writes only its own output slot, so the
/// result does not depend on the worker count.
template <class Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn&& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  pool.reserve(threads);
  for (std::size_t t = 0; t < threads; ++t) {
    const std::size_t lo = n * t / threads, hi = n * (t + 1) / threads;
    pool.emplace_back([lo, hi, &fn, &err = errors[t]] {
      try {
        for (std::size_t i = lo; i < hi; ++i) fn(i);
      } catch (...) {
        err = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

/// Process-wide default worker count (set from the CLI `--threads` flag).
inline std::size_t& default_threads() {
  static std::size_t threads = 1;
  return threads;
}

}  // namespace gibbspath
