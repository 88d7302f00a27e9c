#pragma once

// Smooth compactly supported bumps and their tabulated self-convolutions.

#include <cmath>
#include <memory>
#include <vector>

#include "gibbspath/error.hpp"
#include "gibbspath/numerics.hpp"

namespace gibbspath {

/// Radial table on a uniform grid of [0, support]; linear interpolation,
/// zero at and beyond the support edge.
class RadialTable {
 public:
  RadialTable(double support, std::vector<double> values)
      : support_(support), values_(std::move(values)) {
    if (support_ <= 0 || values_.size() < 2) throw InvalidArgument("RadialTable: empty table");
    step_ = support_ / static_cast<double>(values_.size() - 1);
    inv_step_ = 1.0 / step_;
  }

  double operator()(double r) const {
    r = std::abs(r);
    if (r >= support_) return 0.0;
    const double u = r * inv_step_;
    const auto k = static_cast<std::size_t>(u);
    const double frac = u - static_cast<double>(k);
    return values_[k] + frac * (values_[k + 1] - values_[k]);
  }

  double support() const { return support_; }
  double step() const { return step_; }
  const std::vector<double>& values() const { return values_; }
  double max_value() const {
    double m = 0;
    for (double v : values_) m = std::max(m, v);
    return m;
  }

 private:
  double support_;
  double step_ = 0;
  double inv_step_ = 0;
  std::vector<double> values_;
};

/// Surface area of the unit sphere in R^d.
inline double unit_sphere_area(int d) {
  return 2.0 * std::pow(kPi, 0.5 * d) / std::tgamma(0.5 * d);
}

/// Normalized radial bump c * exp(-1/(1 - (|x|/radius)^2)) on the ball of
/// the given radius in R^dim. For dim = 1 this is an even bump on
/// [-radius, radius].
class Bump {
 public:
  Bump(double radius, int dim) : radius_(radius), dim_(dim) {
    if (radius <= 0) throw InvalidArgument("Bump: radius must be positive");
    if (dim < 1) throw InvalidArgument("Bump: dimension must be >= 1");
    norm_ = 1.0;
    norm_ = 1.0 / total_mass_unnormalized();
  }

  double radius() const { return radius_; }
  int dim() const { return dim_; }

  double operator()(double r) const {
    const double u = std::abs(r) / radius_;
    if (u >= 1.0) return 0.0;
    return norm_ * std::exp(-1.0 / (1.0 - u * u));
  }

  /// Integral over R^dim, by radial Gauss-Legendre quadrature.
  double total_mass() const { return total_mass_unnormalized(); }

  /// Integral of the square over R^dim.
  double l2_norm_squared() const {
    const auto rule = composite_gauss(64, 12, 0.0, radius_);
    double s = 0;
    for (std::size_t i = 0; i < rule.nodes.size(); ++i) {
      const double r = rule.nodes[i], f = (*this)(r);
      s += rule.weights[i] * radial_measure(r) * f * f;
    }
    return s;
  }

  /// Same bump rescaled to width radius*scale and renormalized:
  /// scale^{-dim} b(x/scale).
  Bump scaled(double scale) const { return Bump(radius_ * scale, dim_); }

 private:
  double radial_measure(double r) const {
    if (dim_ == 1) return 2.0;
    return unit_sphere_area(dim_) * std::pow(r, dim_ - 1);
  }

  double total_mass_unnormalized() const {
    const auto rule = composite_gauss(64, 12, 0.0, radius_);
    double s = 0;
    for (std::size_t i = 0; i < rule.nodes.size(); ++i)
      s += rule.weights[i] * radial_measure(rule.nodes[i]) * (*this)(rule.nodes[i]);
    return s;
  }

  double radius_;
  int dim_;
  double norm_ = 1.0;
};

/// (b * b) for an even 1-D bump, tabulated on [0, 2 radius] with
/// `table_intervals` cells. The convolution integral at each node is a
/// uniform trapezoid sum with `quad_intervals` cells.
inline std::shared_ptr<const RadialTable> self_convolve_1d(const Bump& b, std::size_t table_intervals = 2048,
                                                           std::size_t quad_intervals = 4096) {
  if (b.dim() != 1) throw InvalidArgument("self_convolve_1d: bump must be one-dimensional");
  const double h = b.radius();
  const double support = 2 * h;
  std::vector<double> values(table_intervals + 1);
  for (std::size_t k = 0; k <= table_intervals; ++k) {
    const double tau = support * static_cast<double>(k) / static_cast<double>(table_intervals);
    // integrand b(s) b(tau - s), nonzero for s in [tau - h, h]
    const double lo = tau - h, hi = h;
    if (hi <= lo) {
      values[k] = 0;
      continue;
    }
    const double ds = (hi - lo) / static_cast<double>(quad_intervals);
    double s = 0;
    for (std::size_t i = 1; i < quad_intervals; ++i) {
      const double x = lo + ds * static_cast<double>(i);
      s += b(x) * b(tau - x);
    }
    values[k] = s * ds;  // endpoint terms vanish
  }
  values.back() = 0;
  return std::make_shared<const RadialTable>(support, std::move(values));
}

/// Radial self-convolution (b * b)(r) of a radial bump in R^d, d >= 2,
/// tabulated on [0, 2 radius]:
///   (b*b)(r) = |S^{d-2}| int_0^R s^{d-1} b(s) int_0^pi b(|r e1 - s w|) sin^{d-2} th dth ds.
inline std::shared_ptr<const RadialTable> self_convolve_radial(const Bump& b, std::size_t table_intervals = 1024,
                                                               std::size_t panels = 16, std::size_t order = 8) {
  const int d = b.dim();
  if (d == 1) return self_convolve_1d(b, table_intervals);
  const double R = b.radius();
  const double support = 2 * R;
  const double sphere = unit_sphere_area(d - 1);
  const auto s_rule = composite_gauss(panels, order, 0.0, R);
  const auto unit = gauss_legendre(order);
  std::vector<double> values(table_intervals + 1);
  for (std::size_t k = 0; k <= table_intervals; ++k) {
    const double r = support * static_cast<double>(k) / static_cast<double>(table_intervals);
    double total = 0;
    for (std::size_t i = 0; i < s_rule.nodes.size(); ++i) {
      const double s = s_rule.nodes[i];
      const double bs = b(s);
      if (bs == 0) continue;
      double inner;
      if (r == 0) {
        // integrand independent of the angle
        const double ang = std::sqrt(kPi) * std::tgamma(0.5 * (d - 1)) / std::tgamma(0.5 * d);
        inner = bs * ang;
      } else {
        // restrict the angle to where |r e1 - s w| < R
        const double c = (r * r + s * s - R * R) / (2 * r * s);
        if (c >= 1) continue;
        const double theta_max = c <= -1 ? kPi : std::acos(c);
        inner = 0;
        const double hp = theta_max / static_cast<double>(panels);
        for (std::size_t p = 0; p < panels; ++p) {
          for (std::size_t q = 0; q < order; ++q) {
            const double th = hp * (static_cast<double>(p) + 0.5 * (unit.nodes[q] + 1));
            const double dist2 = std::max(0.0, r * r + s * s - 2 * r * s * std::cos(th));
            inner += 0.5 * hp * unit.weights[q] * b(std::sqrt(dist2)) * std::pow(std::sin(th), d - 2);
          }
        }
      }
      total += s_rule.weights[i] * std::pow(s, d - 1) * bs * inner;
    }
    values[k] = sphere * total;
  }
  values.back() = 0;
  return std::make_shared<const RadialTable>(support, std::move(values));
}

}  // namespace gibbspath
