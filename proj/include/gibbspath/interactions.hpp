#pragma once

// Pair interactions H(t, x) = rho(t) V(x): time correlations, spatial
// potentials, joint presets and the admissibility classification.

#include <cmath>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gibbspath/error.hpp"
#include "gibbspath/mollifier.hpp"
#include "gibbspath/numerics.hpp"

namespace gibbspath {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

// ---------------------------------------------------------------------------
// Time correlation rho
// ---------------------------------------------------------------------------

class TimeCorrelation {
 public:
  enum class Kind { CompactBox, PolynomialDecay, Exponential, SelfConvolvedMollifier };

  static TimeCorrelation compact_box(double half_width, double amplitude = 1.0) {
    if (half_width <= 0) throw InvalidArgument("CompactBox: half_width must be positive");
    return TimeCorrelation(Kind::CompactBox, amplitude, half_width, nullptr);
  }
  /// amplitude * (1 + |t|)^(-theta)
  static TimeCorrelation polynomial(double theta, double amplitude = 1.0) {
    return TimeCorrelation(Kind::PolynomialDecay, amplitude, theta, nullptr);
  }
  /// amplitude * exp(-omega0 |t|)
  static TimeCorrelation exponential(double omega0, double amplitude = 1.0) {
    if (omega0 <= 0) throw InvalidArgument("Exponential: omega0 must be positive");
    return TimeCorrelation(Kind::Exponential, amplitude, omega0, nullptr);
  }
  /// amplitude * (psi * psi)(t) from a tabulated self-convolution.
  static TimeCorrelation self_convolved(std::shared_ptr<const RadialTable> table, double amplitude = 1.0) {
    if (!table) throw InvalidArgument("SelfConvolvedMollifier: missing table");
    const double support = table->support();
    return TimeCorrelation(Kind::SelfConvolvedMollifier, amplitude, support, std::move(table));
  }

  double operator()(double t) const {
    t = std::abs(t);
    switch (kind_) {
      case Kind::CompactBox: return t > param_ ? 0.0 : amplitude_;
      case Kind::PolynomialDecay: return amplitude_ * std::pow(1.0 + t, -param_);
      case Kind::Exponential: return amplitude_ * std::exp(-param_ * t);
      case Kind::SelfConvolvedMollifier: return amplitude_ * (*table_)(t);
    }
    return 0.0;
  }

  Kind kind() const { return kind_; }
  double amplitude() const { return amplitude_; }
  /// half_width, theta, omega0 or table support depending on the kind.
  double parameter() const { return param_; }
  bool compact() const { return kind_ == Kind::CompactBox || kind_ == Kind::SelfConvolvedMollifier; }
  /// Half-length of the support; infinite for the decaying kinds.
  double support() const { return compact() ? param_ : kInf; }
  const std::shared_ptr<const RadialTable>& table() const { return table_; }

 private:
  TimeCorrelation(Kind k, double amplitude, double param, std::shared_ptr<const RadialTable> table)
      : kind_(k), amplitude_(amplitude), param_(param), table_(std::move(table)) {
    if (amplitude < 0) throw InvalidArgument("TimeCorrelation: amplitude must be nonnegative");
  }

  Kind kind_;
  double amplitude_;
  double param_;
  std::shared_ptr<const RadialTable> table_;
};

// ---------------------------------------------------------------------------
// Spatial potential V
// ---------------------------------------------------------------------------

class SpatialPotential {
 public:
  enum class Kind { Bounded, CoulombPower, MollifiedDelta, SelfConvolvedMollifier };
  enum class BoundedShape { Constant, Lorentzian, Table };

  /// V == value.
  static SpatialPotential constant(double value, int dim) {
    SpatialPotential v(Kind::Bounded, dim);
    v.shape_ = BoundedShape::Constant;
    v.amplitude_ = value;
    return v;
  }
  /// amplitude / (1 + |x|^2).
  static SpatialPotential lorentzian(double amplitude, int dim) {
    SpatialPotential v(Kind::Bounded, dim);
    v.shape_ = BoundedShape::Lorentzian;
    v.amplitude_ = amplitude;
    return v;
  }
  /// Radial table (compact support, finite sup).
  static SpatialPotential tabulated(std::shared_ptr<const RadialTable> table, int dim) {
    if (!table) throw InvalidArgument("Bounded: missing table");
    SpatialPotential v(Kind::Bounded, dim);
    v.shape_ = BoundedShape::Table;
    v.table_ = std::move(table);
    return v;
  }
  /// (|x|^2 + eta^2)^(-p/2); eta = 0 is the true Coulomb-type power.
  static SpatialPotential coulomb(double p, double eta, int dim) {
    if (p <= 0) throw InvalidArgument("CoulombPower: p must be positive");
    if (eta < 0) throw InvalidArgument("CoulombPower: eta must be nonnegative");
    SpatialPotential v(Kind::CoulombPower, dim);
    v.p_ = p;
    v.eta_ = eta;
    return v;
  }
  /// Triangular mollification of delta_0 in d = 1: (1/kappa)(1 - |x|/kappa)_+.
  /// Positive definite (its Fourier transform is a squared sinc).
  static SpatialPotential mollified_delta(double kappa, int dim = 1) {
    if (kappa <= 0) throw InvalidArgument("MollifiedDelta: kappa must be positive");
    SpatialPotential v(Kind::MollifiedDelta, dim);
    v.kappa_ = kappa;
    return v;
  }
  /// (phi * phi)(x) from a tabulated radial self-convolution.
  static SpatialPotential self_convolved(std::shared_ptr<const RadialTable> table, int dim, double amplitude = 1.0) {
    if (!table) throw InvalidArgument("SelfConvolvedMollifier: missing table");
    SpatialPotential v(Kind::SelfConvolvedMollifier, dim);
    v.table_ = std::move(table);
    v.amplitude_ = amplitude;
    return v;
  }

  /// V as a function of r = |x|.
  double radial(double r) const {
    r = std::abs(r);
    switch (kind_) {
      case Kind::Bounded:
        switch (shape_) {
          case BoundedShape::Constant: return amplitude_;
          case BoundedShape::Lorentzian: return amplitude_ / (1.0 + r * r);
          case BoundedShape::Table: return (*table_)(r);
        }
        return 0.0;
      case Kind::CoulombPower: {
        const double q = r * r + eta_ * eta_;
        if (q == 0.0) return kInf;
        return p_ == 1.0 ? 1.0 / std::sqrt(q) : std::pow(q, -0.5 * p_);
      }
      case Kind::MollifiedDelta: return r >= kappa_ ? 0.0 : (1.0 - r / kappa_) / kappa_;
      case Kind::SelfConvolvedMollifier: return amplitude_ * (*table_)(r);
    }
    return 0.0;
  }

  /// V evaluated at squared radius (avoids a sqrt for the kinds that allow it).
  double radial_sq(double r2) const {
    if (kind_ == Kind::CoulombPower) {
      const double q = r2 + eta_ * eta_;
      if (q == 0.0) return kInf;
      return p_ == 1.0 ? 1.0 / std::sqrt(q) : std::pow(q, -0.5 * p_);
    }
    if (kind_ == Kind::Bounded && shape_ == BoundedShape::Constant) return amplitude_;
    if (kind_ == Kind::Bounded && shape_ == BoundedShape::Lorentzian) return amplitude_ / (1.0 + r2);
    return radial(std::sqrt(r2));
  }

  /// V(x) for a point in R^d.
  double operator()(std::span<const double> x) const {
    if (static_cast<int>(x.size()) != dim_)
      throw InvalidArgument("SpatialPotential: point has dimension " + std::to_string(x.size()) +
                            ", potential has dimension " + std::to_string(dim_));
    double r2 = 0;
    for (double c : x) r2 += c * c;
    return radial_sq(r2);
  }

  /// sup_x V(x); infinite for unregularized Coulomb.
  double sup() const {
    switch (kind_) {
      case Kind::Bounded:
        return shape_ == BoundedShape::Table ? table_->max_value() : amplitude_;
      case Kind::CoulombPower: return eta_ == 0 ? kInf : std::pow(eta_, -p_);
      case Kind::MollifiedDelta: return 1.0 / kappa_;
      case Kind::SelfConvolvedMollifier: return amplitude_ * table_->max_value();
    }
    return kInf;
  }

  /// Radius beyond which V vanishes (infinite if it never does).
  double support_radius() const {
    switch (kind_) {
      case Kind::Bounded: return shape_ == BoundedShape::Table ? table_->support() : kInf;
      case Kind::CoulombPower: return kInf;
      case Kind::MollifiedDelta: return kappa_;
      case Kind::SelfConvolvedMollifier: return table_->support();
    }
    return kInf;
  }

  Kind kind() const { return kind_; }
  BoundedShape bounded_shape() const { return shape_; }
  int dim() const { return dim_; }
  double p() const { return p_; }
  double eta() const { return eta_; }
  double kappa() const { return kappa_; }
  double amplitude() const { return amplitude_; }
  const std::shared_ptr<const RadialTable>& table() const { return table_; }

 private:
  SpatialPotential(Kind k, int dim) : kind_(k), dim_(dim) {
    if (dim < 1) throw InvalidArgument("SpatialPotential: dimension must be >= 1");
  }

  Kind kind_;
  int dim_;
  BoundedShape shape_ = BoundedShape::Constant;
  double amplitude_ = 1.0;
  double p_ = 1.0;
  double eta_ = 0.0;
  double kappa_ = 0.0;
  std::shared_ptr<const RadialTable> table_;
};

/// Integral of a 1-D potential over R by trapezoid quadrature with nodes on
/// the kinks of the mollified delta.
inline double integrate_line(const SpatialPotential& v, std::size_t intervals = 4096) {
  if (v.dim() != 1) throw InvalidArgument("integrate_line: potential must be one-dimensional");
  const double R = v.support_radius();
  if (!std::isfinite(R)) throw InvalidArgument("integrate_line: potential without compact support");
  const double h = 2 * R / static_cast<double>(intervals);
  double s = 0;
  for (std::size_t i = 0; i <= intervals; ++i) {
    const double x = -R + h * static_cast<double>(i);
    const double w = (i == 0 || i == intervals) ? 0.5 : 1.0;
    s += w * v.radial(x);
  }
  return s * h;
}

// ---------------------------------------------------------------------------
// Joint kernel
// ---------------------------------------------------------------------------

/// An evaluable pair interaction without coupling constant: either a product
/// rho(t) V(x) or the massless-boson closed form 1/(|x|^2 + (1+|t|)^theta).
class KernelForm {
 public:
  enum class Shape { Product, MasslessNelson };

  KernelForm(TimeCorrelation rho, SpatialPotential v) : rho_(std::move(rho)), v_(std::move(v)) {}

  static KernelForm massless_nelson(double theta, int dim = 3) {
    KernelForm f(TimeCorrelation::polynomial(theta), SpatialPotential::lorentzian(1.0, dim));
    f.shape_ = Shape::MasslessNelson;
    f.theta_ = theta;
    return f;
  }

  /// Polaron form exp(-omega0 |t|) / (|x|^2 + eta^2)^(1/2).
  static KernelForm polaron(double omega0, double eta, int dim = 3) {
    return KernelForm(TimeCorrelation::exponential(omega0), SpatialPotential::coulomb(1.0, eta, dim));
  }

  /// H(t, r) with r = |x|.
  double operator()(double t, double r) const {
    if (shape_ == Shape::MasslessNelson) return 1.0 / (r * r + std::pow(1.0 + std::abs(t), theta_));
    const double a = rho_(t);
    return a == 0.0 ? 0.0 : a * v_.radial(r);
  }

  /// H(t, x) for a point x in R^d.
  double operator()(double t, std::span<const double> x) const {
    if (static_cast<int>(x.size()) != dim())
      throw InvalidArgument("KernelForm: point dimension mismatch");
    double r2 = 0;
    for (double c : x) r2 += c * c;
    return at_sq(t, r2);
  }

  /// H(t, r) given r^2.
  double at_sq(double t, double r2) const {
    if (shape_ == Shape::MasslessNelson) return 1.0 / (r2 + std::pow(1.0 + std::abs(t), theta_));
    const double a = rho_(t);
    return a == 0.0 ? 0.0 : a * v_.radial_sq(r2);
  }

  /// For a fixed time lag, the spatial part: H(t, x) = time_factor(t) * space(r^2).
  /// Product kernels only.
  double time_factor(double t) const { return rho_(t); }

  Shape shape() const { return shape_; }
  const TimeCorrelation& rho() const { return rho_; }
  const SpatialPotential& v() const { return v_; }
  double massless_theta() const { return theta_; }
  int dim() const { return v_.dim(); }
  /// Half-length of the time support (infinite for long-range kernels).
  double time_support() const { return shape_ == Shape::MasslessNelson ? kInf : rho_.support(); }
  /// sup_x H(t, x) envelope at time t.
  double rho_envelope(double t) const {
    return shape_ == Shape::MasslessNelson ? std::pow(1.0 + std::abs(t), -theta_) : rho_(t);
  }
  /// sup_x V-envelope sup_t H(t, x) evaluated at x = 0.
  double v_sup() const { return shape_ == Shape::MasslessNelson ? 1.0 : rho_(0) > 0 ? v_.sup() : 0.0; }

 private:
  TimeCorrelation rho_;
  SpatialPotential v_;
  Shape shape_ = Shape::Product;
  double theta_ = 0;
};

enum class AdmissibilityClass { LongRangeBounded, CompactSingular, Delta1D, MollifierProduct };

inline const char* to_string(AdmissibilityClass c) {
  switch (c) {
    case AdmissibilityClass::LongRangeBounded: return "LongRangeBounded";
    case AdmissibilityClass::CompactSingular: return "CompactSingular";
    case AdmissibilityClass::Delta1D: return "Delta1D";
    case AdmissibilityClass::MollifierProduct: return "MollifierProduct";
  }
  return "?";
}

/// Classifies a kernel form or throws RejectedParameters naming the
/// violated inequality.
inline AdmissibilityClass validate_admissibility(const KernelForm& form) {
  using TK = TimeCorrelation::Kind;
  using SK = SpatialPotential::Kind;
  const auto& rho = form.rho();
  const auto& v = form.v();
  const int d = form.dim();

  if (form.shape() == KernelForm::Shape::MasslessNelson) {
    if (!(form.massless_theta() > 2))
      throw RejectedParameters("massless kernel: time envelope exponent theta = " +
                               std::to_string(form.massless_theta()) + " violates theta > 2");
    return AdmissibilityClass::LongRangeBounded;
  }

  // time envelope admissible for the long-range bounded class
  auto long_range_ok = [&]() {
    switch (rho.kind()) {
      case TK::PolynomialDecay:
        if (!(rho.parameter() > 2))
          throw RejectedParameters("time correlation (1+|t|)^(-theta) with theta = " +
                                   std::to_string(rho.parameter()) +
                                   " and unbounded support violates theta > 2");
        return true;
      default: return true;  // compact or exponential decay are dominated by any power
    }
  };

  if (v.kind() == SK::SelfConvolvedMollifier && rho.kind() == TK::SelfConvolvedMollifier)
    return AdmissibilityClass::MollifierProduct;

  if (v.kind() == SK::MollifiedDelta) {
    if (d != 1)
      throw RejectedParameters("delta potential requires d = 1, got d = " + std::to_string(d));
    if (!rho.compact()) throw RejectedParameters("delta potential requires a compactly supported time correlation");
    return AdmissibilityClass::Delta1D;
  }

  if (v.kind() == SK::CoulombPower) {
    if (d < 3) throw RejectedParameters("Coulomb-type potential requires d >= 3, got d = " + std::to_string(d));
    if (!(v.p() < 0.5 * d))
      throw RejectedParameters("Coulomb-type potential |x|^(-p) with p = " + std::to_string(v.p()) +
                               " violates p < d/2 = " + std::to_string(0.5 * d));
    if (rho.compact()) return AdmissibilityClass::CompactSingular;
    if (v.eta() > 0 && long_range_ok()) return AdmissibilityClass::LongRangeBounded;
    throw RejectedParameters("singular potential (eta = 0) with non-compact time correlation is not covered");
  }

  if (!std::isfinite(v.sup())) throw RejectedParameters("potential violates sup V < infinity");
  long_range_ok();
  return AdmissibilityClass::LongRangeBounded;
}

/// Validated kernel: form, Gibbs inverse temperature beta and class.
/// The Gibbs weight is exp{beta * int int H(t-s, W_t - W_s) ds dt}.
class InteractionKernel {
 public:
  InteractionKernel(KernelForm form, double beta)
      : form_(std::move(form)), beta_(beta), class_(validate_admissibility(form_)) {
    if (beta < 0) throw RejectedParameters("beta must be nonnegative");
  }

  const KernelForm& form() const { return form_; }
  double beta() const { return beta_; }
  AdmissibilityClass admissibility() const { return class_; }
  int dim() const { return form_.dim(); }
  InteractionKernel with_beta(double beta) const { return InteractionKernel(form_, beta); }

 private:
  KernelForm form_;
  double beta_;
  AdmissibilityClass class_;
};

// free-function spellings of the evaluators
inline double eval_rho(const TimeCorrelation& rho, double t) { return rho(t); }
inline double eval_v(const SpatialPotential& v, std::span<const double> x) { return v(x); }
inline double eval_h(const KernelForm& h, double t, std::span<const double> x) { return h(t, x); }

// ---------------------------------------------------------------------------
// Coulomb split 1/|x| = V_eta(x) + Y_eta(x)
// ---------------------------------------------------------------------------

struct CoulombSplit {
  double regular;    // 1/sqrt(|x|^2 + eta^2)
  double remainder;  // 1/|x| - regular
};

inline CoulombSplit coulomb_split(double r, double eta) {
  if (r <= 0) throw InvalidArgument("coulomb_split: x = 0");
  const double q = std::sqrt(r * r + eta * eta);
  // eta^2 / ((r + q) q r) avoids cancellation in 1/r - 1/q
  return {1.0 / q, eta * eta / ((r + q) * q * r)};
}

inline CoulombSplit coulomb_split(std::span<const double> x, double eta) {
  if (x.size() != 3) throw InvalidArgument("coulomb_split: defined for d = 3");
  double r2 = 0;
  for (double c : x) r2 += c * c;
  return coulomb_split(std::sqrt(r2), eta);
}

/// b = sup_u u^{3/2} phi(u) with phi(u) = 1/(u sqrt(1+u^2) (u + sqrt(1+u^2))),
/// so that Y_eta(x) <= b sqrt(eta) |x|^{-3/2}.
inline double coulomb_split_constant() {
  auto g = [](double u) {
    const double q = std::sqrt(1 + u * u);
    return std::sqrt(u) / (q * (u + q));
  };
  double best_u = 0, best = 0;
  for (int i = 1; i <= 4000; ++i) {
    const double u = 0.001 * i;
    if (g(u) > best) best = g(u), best_u = u;
  }
  double lo = std::max(1e-6, best_u - 0.001), hi = best_u + 0.001;
  for (int it = 0; it < 200; ++it) {
    const double m1 = lo + (hi - lo) / 3, m2 = hi - (hi - lo) / 3;
    if (g(m1) < g(m2)) lo = m1;
    else hi = m2;
  }
  return g(0.5 * (lo + hi));
}

// ---------------------------------------------------------------------------
// Named presets
// ---------------------------------------------------------------------------

using ParamMap = std::map<std::string, double>;

inline double param_or(const ParamMap& p, const std::string& key, double fallback) {
  auto it = p.find(key);
  return it == p.end() ? fallback : it->second;
}

/// Spatial mollifier table phi*phi for radius R in R^d (cached per call site).
inline std::shared_ptr<const RadialTable> mollifier_space_table(double radius, int dim) {
  return self_convolve_radial(Bump(radius, dim));
}
inline std::shared_ptr<const RadialTable> mollifier_time_table(double half_width) {
  return self_convolve_1d(Bump(half_width, 1));
}

/// Preset names and their documented parameters (defaults in brackets):
///   massless_nelson   theta [2.5], d [3], beta [1]
///   polaron           omega0 [1], eta [0.05], d [3], beta [1]
///   poly_bounded      theta [2.5], amplitude [1], v_amplitude [1], d [3], beta [1]
///   compact_coulomb   half_width [0.5], p [1], eta [0.05], d [3], beta [1]
///   delta_1d          half_width [0.5], kappa [0.05], beta [1]
///   mollifier_product psi_half_width [0.5], phi_radius [0.3], d [3], beta [1]
/// For mollifier_product, beta is the noise strength of the heat equation and
/// the Gibbs coupling of the resulting kernel is beta^2 / 2.
inline InteractionKernel make_preset(const std::string& name, const ParamMap& p = {}) {
  const int d = static_cast<int>(param_or(p, "d", 3));
  const double beta = param_or(p, "beta", 1.0);
  if (name == "massless_nelson")
    return InteractionKernel(KernelForm::massless_nelson(param_or(p, "theta", 2.5), d), beta);
  if (name == "polaron")
    return InteractionKernel(KernelForm::polaron(param_or(p, "omega0", 1.0), param_or(p, "eta", 0.05), d), beta);
  if (name == "poly_bounded")
    return InteractionKernel(KernelForm(TimeCorrelation::polynomial(param_or(p, "theta", 2.5), param_or(p, "amplitude", 1.0)),
                                        SpatialPotential::lorentzian(param_or(p, "v_amplitude", 1.0), d)),
                             beta);
  if (name == "compact_coulomb")
    return InteractionKernel(KernelForm(TimeCorrelation::compact_box(param_or(p, "half_width", 0.5)),
                                        SpatialPotential::coulomb(param_or(p, "p", 1.0), param_or(p, "eta", 0.05), d)),
                             beta);
  if (name == "delta_1d")
    return InteractionKernel(KernelForm(TimeCorrelation::compact_box(param_or(p, "half_width", 0.5)),
                                        SpatialPotential::mollified_delta(param_or(p, "kappa", 0.05), 1)),
                             beta);
  if (name == "mollifier_product") {
    auto rho = TimeCorrelation::self_convolved(mollifier_time_table(param_or(p, "psi_half_width", 0.5)));
    auto v = SpatialPotential::self_convolved(mollifier_space_table(param_or(p, "phi_radius", 0.3), d), d);
    return InteractionKernel(KernelForm(rho, v), 0.5 * beta * beta);
  }
  throw InvalidArgument("unknown kernel preset '" + name + "'");
}

inline bool is_preset_name(const std::string& name) {
  for (const char* n : {"massless_nelson", "polaron", "poly_bounded", "compact_coulomb", "delta_1d", "mollifier_product"})
    if (name == n) return true;
  return false;
}

}  // namespace gibbspath
