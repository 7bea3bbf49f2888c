#pragma once

// Model families, link/variance/quasi-likelihood functions, parameter
// containers and declarative covariate construction.

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "sts/error.hpp"

namespace sts {

enum class FamilyKind { NonNegative, RealValued, Bounded };

inline const char* to_string(FamilyKind kind) {
  switch (kind) {
    case FamilyKind::NonNegative: return "nonnegative";
    case FamilyKind::RealValued: return "real";
    case FamilyKind::Bounded: return "bounded";
  }
  return "?";
}

/// One of the three semiparametric families plus its shape parameters.
///
/// NonNegative: log link, V(mu) = mu^p.
/// RealValued:  identity link, V(mu) = 1.
/// Bounded:     link g(z) = -log z, V(z) = z(1 - z). Responses live on the
///              proportion scale; binomial counts enter as y/m.
class ModelFamily {
 public:
  static ModelFamily non_negative(double p) {
    if (!(p > 0.0) || !std::isfinite(p)) {
      throw DomainError("variance power p must be positive", "p=" + std::to_string(p));
    }
    return ModelFamily(FamilyKind::NonNegative, p, std::nullopt, std::nullopt);
  }

  static ModelFamily real_valued() {
    return ModelFamily(FamilyKind::RealValued, 0.0, std::nullopt, std::nullopt);
  }

  /// Bounded continuous proportions (dispersion unknown, 0 < phi < 1).
  static ModelFamily bounded() {
    return ModelFamily(FamilyKind::Bounded, 1.0, std::nullopt, std::nullopt);
  }

  /// Binary responses, phi fixed to 1.
  static ModelFamily binary() { return ModelFamily(FamilyKind::Bounded, 1.0, std::nullopt, 1.0); }

  /// Binomial(m) responses observed as proportions, phi fixed to m.
  static ModelFamily binomial(int m) {
    if (m < 1) {
      throw DomainError("binomial trial count must be >= 1", "m=" + std::to_string(m));
    }
    return ModelFamily(FamilyKind::Bounded, 1.0, m, static_cast<double>(m));
  }

  FamilyKind kind() const noexcept { return kind_; }
  double p() const noexcept { return p_; }
  std::optional<int> trials() const noexcept { return m_; }
  std::optional<double> phi_known() const noexcept { return phi_known_; }

  /// Dispersion multiplying V(mu) on the scale the responses are observed on.
  /// Binomial proportions y/m have conditional variance mu(1 - mu)/m, so the
  /// declared phi = m maps to 1/m here.
  double effective_dispersion(double phi) const noexcept {
    if (kind_ == FamilyKind::Bounded && m_) {
      return 1.0 / static_cast<double>(*m_);
    }
    return phi;
  }

 private:
  ModelFamily(FamilyKind kind, double p, std::optional<int> m, std::optional<double> phi_known)
      : kind_(kind), p_(p), m_(m), phi_known_(phi_known) {}

  FamilyKind kind_;
  double p_;
  std::optional<int> m_;
  std::optional<double> phi_known_;
};

/// theta = (beta, phi, sigma2, rho).
struct ParameterSet {
  Eigen::VectorXd beta;
  double phi = 1.0;
  double sigma2 = 1.0;
  double rho = 0.0;
};

/// Checks the family-independent and latent-process constraints on theta.
inline void validate(const ModelFamily& family, const ParameterSet& params) {
  if (!(params.phi > 0.0)) {
    throw DomainError("dispersion phi must be positive", "phi=" + std::to_string(params.phi));
  }
  if (!(params.sigma2 > 0.0)) {
    throw DomainError("latent variance sigma2 must be positive",
                      "sigma2=" + std::to_string(params.sigma2));
  }
  if (family.kind() == FamilyKind::Bounded) {
    if (!(params.rho > 0.0 && params.rho < 1.0)) {
      throw DomainError("gamma latent process requires 0 < rho < 1",
                        "rho=" + std::to_string(params.rho));
    }
    if (!family.phi_known() && !(params.phi < 1.0)) {
      throw DomainError("bounded continuous responses require 0 < phi < 1",
                        "phi=" + std::to_string(params.phi));
    }
    if (family.phi_known() && params.phi != *family.phi_known()) {
      throw DomainError("phi must equal the known dispersion for binary/binomial responses",
                        "phi=" + std::to_string(params.phi));
    }
  } else if (!(std::abs(params.rho) < 1.0)) {
    throw DomainError("Gaussian latent process requires |rho| < 1",
                      "rho=" + std::to_string(params.rho));
  }
}

// ---------------------------------------------------------------------------
// Link, variance and quasi-likelihood

/// h(eta), the inverse link.
inline double link_inverse(const ModelFamily& family, double eta) {
  switch (family.kind()) {
    case FamilyKind::NonNegative: return std::exp(eta);
    case FamilyKind::RealValued: return eta;
    case FamilyKind::Bounded:
      if (!(eta > 0.0)) {
        throw DomainError("bounded family needs a positive linear predictor",
                          "eta=" + std::to_string(eta));
      }
      return std::exp(-eta);
  }
  return eta;
}

/// g(mu), the link.
inline double link(const ModelFamily& family, double mu) {
  switch (family.kind()) {
    case FamilyKind::NonNegative:
      if (!(mu > 0.0)) throw DomainError("mean must be positive", "mu=" + std::to_string(mu));
      return std::log(mu);
    case FamilyKind::RealValued: return mu;
    case FamilyKind::Bounded:
      if (!(mu > 0.0 && mu < 1.0)) {
        throw DomainError("mean must lie in (0,1)", "mu=" + std::to_string(mu));
      }
      return -std::log(mu);
  }
  return mu;
}

inline void check_mean_space(const ModelFamily& family, double mu) {
  switch (family.kind()) {
    case FamilyKind::NonNegative:
      if (!(mu > 0.0) || !std::isfinite(mu)) {
        throw DomainError("mean must be positive", "mu=" + std::to_string(mu));
      }
      return;
    case FamilyKind::RealValued:
      if (!std::isfinite(mu)) throw DomainError("mean must be finite");
      return;
    case FamilyKind::Bounded:
      if (!(mu > 0.0 && mu < 1.0)) {
        throw DomainError("mean must lie in (0,1)", "mu=" + std::to_string(mu));
      }
      return;
  }
}

inline void check_support(const ModelFamily& family, double y) {
  switch (family.kind()) {
    case FamilyKind::NonNegative:
      if (!(y >= 0.0) || !std::isfinite(y)) {
        throw DomainError("response must be non-negative", "y=" + std::to_string(y));
      }
      return;
    case FamilyKind::RealValued:
      if (!std::isfinite(y)) throw DomainError("response must be finite");
      return;
    case FamilyKind::Bounded:
      if (!(y >= 0.0 && y <= 1.0)) {
        throw DomainError("response must lie in [0,1]", "y=" + std::to_string(y));
      }
      return;
  }
}

inline double variance_function(const ModelFamily& family, double mu) {
  check_mean_space(family, mu);
  switch (family.kind()) {
    case FamilyKind::NonNegative: return std::pow(mu, family.p());
    case FamilyKind::RealValued: return 1.0;
    case FamilyKind::Bounded: return mu * (1.0 - mu);
  }
  return 1.0;
}

namespace detail {

// Within this distance of 1 or 2 the power-variance Q switches to its
// logarithmic closed form.
inline constexpr double kPowerSwitchTol = 1e-9;

/// Part of Q(y; mu) that depends on mu, i.e. Q(y; mu) = kernel(mu) - kernel(y).
/// Stays finite at y = 0 for every p, which is all the fitter needs.
inline double q_kernel(const ModelFamily& family, double y, double mu) {
  switch (family.kind()) {
    case FamilyKind::NonNegative: {
      const double p = family.p();
      if (std::abs(p - 1.0) < kPowerSwitchTol) return y * std::log(mu) - mu;
      if (std::abs(p - 2.0) < kPowerSwitchTol) return -y / mu - std::log(mu);
      return y * std::pow(mu, 1.0 - p) / (1.0 - p) - std::pow(mu, 2.0 - p) / (2.0 - p);
    }
    case FamilyKind::RealValued: return y * mu - 0.5 * mu * mu;
    case FamilyKind::Bounded: {
      // y log(mu) + (1 - y) log(1 - mu), with 0 * log(.) = 0 at the boundary.
      double k = 0.0;
      if (y > 0.0) k += y * std::log(mu);
      if (y < 1.0) k += (1.0 - y) * std::log1p(-mu);
      return k;
    }
  }
  return 0.0;
}

}  // namespace detail

/// Q(y; mu) = integral from y to mu of (y - u)/V(u) du, in closed form.
/// Maximal (= 0) at mu = y. For NonNegative with y = 0 and p >= 2 the
/// integral diverges and -infinity is returned.
inline double q_function(const ModelFamily& family, double y, double mu) {
  check_support(family, y);
  check_mean_space(family, mu);
  switch (family.kind()) {
    case FamilyKind::NonNegative: {
      const double p = family.p();
      if (std::abs(p - 1.0) < detail::kPowerSwitchTol) {
        const double ylogy = y > 0.0 ? y * (std::log(mu) - std::log(y)) : 0.0;
        return ylogy + y - mu;
      }
      if (y == 0.0) {
        if (p >= 2.0) return -std::numeric_limits<double>::infinity();
        return -std::pow(mu, 2.0 - p) / (2.0 - p);
      }
      if (std::abs(p - 2.0) < detail::kPowerSwitchTol) {
        return std::log(y / mu) - y / mu + 1.0;
      }
      return y / (1.0 - p) * (std::pow(mu, 1.0 - p) - std::pow(y, 1.0 - p)) -
             (std::pow(mu, 2.0 - p) - std::pow(y, 2.0 - p)) / (2.0 - p);
    }
    case FamilyKind::RealValued: return y * mu - 0.5 * mu * mu - 0.5 * y * y;
    case FamilyKind::Bounded: {
      if (y == 0.0) return std::log1p(-mu);
      if (y == 1.0) return std::log(mu);
      return y * (std::log(mu / (1.0 - mu)) - std::log(y / (1.0 - y))) + std::log1p(-mu) -
             std::log1p(-y);
    }
  }
  return 0.0;
}

// ---------------------------------------------------------------------------
// Covariates

struct Intercept {};
struct LinearTrend {};     // t/n
struct QuadraticTrend {};  // (t/n)^2
struct Cosine { double period; };
struct Sine { double period; };
struct AbsBreak { double t0; double scale; };  // |t - t0| / scale

using CovariateTerm = std::variant<Intercept, LinearTrend, QuadraticTrend, Cosine, Sine, AbsBreak>;

inline std::string term_name(const CovariateTerm& term) {
  struct Visitor {
    std::string operator()(Intercept) const { return "intercept"; }
    std::string operator()(LinearTrend) const { return "t/n"; }
    std::string operator()(QuadraticTrend) const { return "(t/n)^2"; }
    std::string operator()(const Cosine& c) const { return "cos(2pi t/" + num(c.period) + ")"; }
    std::string operator()(const Sine& s) const { return "sin(2pi t/" + num(s.period) + ")"; }
    std::string operator()(const AbsBreak& b) const {
      return "|t-" + num(b.t0) + "|/" + num(b.scale);
    }
    static std::string num(double v) {
      std::string s = std::to_string(v);
      s.erase(s.find_last_not_of('0') + 1);
      if (!s.empty() && s.back() == '.') s.pop_back();
      return s;
    }
  };
  return std::visit(Visitor{}, term);
}

/// Value of a covariate term at time t (1-based) for sample size n.
inline double evaluate_term(const CovariateTerm& term, std::size_t t, std::size_t n) {
  const double td = static_cast<double>(t);
  const double frac = td / static_cast<double>(n);
  struct Visitor {
    double td, frac;
    double operator()(Intercept) const { return 1.0; }
    double operator()(LinearTrend) const { return frac; }
    double operator()(QuadraticTrend) const { return frac * frac; }
    double operator()(const Cosine& c) const { return std::cos(2.0 * std::numbers::pi * td / c.period); }
    double operator()(const Sine& s) const { return std::sin(2.0 * std::numbers::pi * td / s.period); }
    double operator()(const AbsBreak& b) const { return std::abs(td - b.t0) / b.scale; }
  };
  return std::visit(Visitor{td, frac}, term);
}

inline void validate_term(const CovariateTerm& term, std::size_t n) {
  if (const auto* c = std::get_if<Cosine>(&term); c && !(c->period > 0.0)) {
    throw DomainError("harmonic period must be positive");
  }
  if (const auto* s = std::get_if<Sine>(&term); s && !(s->period > 0.0)) {
    throw DomainError("harmonic period must be positive");
  }
  if (const auto* b = std::get_if<AbsBreak>(&term)) {
    if (!(b->scale > 0.0)) throw DomainError("break scale must be positive");
    if (!(b->t0 >= 1.0 && b->t0 <= static_cast<double>(n))) {
      throw DomainError("break point must satisfy 1 <= t0 <= n",
                        "t0=" + std::to_string(b->t0) + " n=" + std::to_string(n));
    }
  }
}

/// n x q covariate matrix; row t-1 holds x_nt.
struct DesignMatrix {
  Eigen::MatrixXd x;
  std::vector<std::string> names;
  // Set by build_design when the columns are numerically rank deficient.
  std::optional<std::string> rank_warning;

  std::size_t n() const noexcept { return static_cast<std::size_t>(x.rows()); }
  std::size_t q() const noexcept { return static_cast<std::size_t>(x.cols()); }
};

/// Ratio of smallest to largest singular value.
inline double condition_ratio(const Eigen::MatrixXd& x) {
  if (x.cols() == 0 || x.rows() < x.cols()) return 0.0;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(x);
  const auto& s = svd.singularValues();
  return s(0) > 0.0 ? s(s.size() - 1) / s(0) : 0.0;
}

inline constexpr double kRankTolerance = 1e-10;

inline bool full_column_rank(const Eigen::MatrixXd& x) {
  return condition_ratio(x) > kRankTolerance;
}

inline DesignMatrix build_design(const std::vector<CovariateTerm>& terms, std::size_t n) {
  if (n < 1) throw DomainError("sample size must be >= 1");
  if (terms.empty()) throw DomainError("design needs at least one covariate term");
  DesignMatrix design;
  design.x.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(terms.size()));
  for (std::size_t j = 0; j < terms.size(); ++j) {
    validate_term(terms[j], n);
    design.names.push_back(term_name(terms[j]));
    for (std::size_t t = 1; t <= n; ++t) {
      design.x(static_cast<Eigen::Index>(t - 1), static_cast<Eigen::Index>(j)) =
          evaluate_term(terms[j], t, n);
    }
  }
  if (!full_column_rank(design.x)) {
    design.rank_warning = "design is rank deficient (singular value ratio <= 1e-10)";
  }
  return design;
}

/// Wraps an already-evaluated covariate matrix.
inline DesignMatrix design_from_matrix(Eigen::MatrixXd x, std::vector<std::string> names) {
  DesignMatrix design{std::move(x), std::move(names), std::nullopt};
  if (!full_column_rank(design.x)) {
    design.rank_warning = "design is rank deficient (singular value ratio <= 1e-10)";
  }
  return design;
}

/// Linear predictor x_nt' beta for every t.
inline Eigen::VectorXd linear_predictor(const DesignMatrix& design, const Eigen::VectorXd& beta) {
  if (static_cast<std::size_t>(beta.size()) != design.q()) {
    throw DomainError("beta length does not match design columns",
                      "q=" + std::to_string(design.q()) + " len=" + std::to_string(beta.size()));
  }
  return design.x * beta;
}

}  // namespace sts
