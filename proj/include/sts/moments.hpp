#pragma once

// Closed-form marginal moments and autocorrelations of the three families.

#include <Eigen/Dense>

#include <cmath>
#include <string>
#include <vector>

#include "sts/error.hpp"
#include "sts/model.hpp"

namespace sts {

namespace detail {
// Below this latent variance w and v are replaced by their limit 1.
inline constexpr double kTinyLatentVariance = 1e-8;
}  // namespace detail

/// v(x, y) = ((1 + x)^2 / (1 + 2x + x^2 (1 - y)))^(1/x), evaluated in log space.
inline double v_function(double x, double y) {
  if (!(x > 0.0)) throw DomainError("v(x, y) requires x > 0", "x=" + std::to_string(x));
  if (x < detail::kTinyLatentVariance) return 1.0;
  const double log_ratio = 2.0 * std::log1p(x) - std::log1p(2.0 * x + x * x * (1.0 - y));
  return std::exp(log_ratio / x);
}

/// w(x) = ((1 + x)^2 / (1 + 2x))^(1/x) = E(exp(-2 alpha_t)) for the shifted gamma latent.
inline double w_function(double x) {
  if (!(x > 0.0)) throw DomainError("w(x) requires x > 0", "x=" + std::to_string(x));
  if (x < detail::kTinyLatentVariance) return 1.0;
  return std::exp((2.0 * std::log1p(x) - std::log1p(2.0 * x)) / x);
}

/// Var(epsilon_t) = exp(sigma2) - 1 for the log-normal latent factor.
inline double lognormal_factor_variance(double sigma2) { return std::expm1(sigma2); }

/// Cov(epsilon_{t+k}, epsilon_t) = exp(sigma2 rho^k) - 1.
inline double lognormal_factor_autocov(double sigma2, double rho, int k) {
  return std::expm1(sigma2 * std::pow(rho, k));
}

/// mu_t = h(x_nt' beta) for every row of the design.
inline Eigen::VectorXd marginal_mean(const ModelFamily& family, const DesignMatrix& design,
                                     const Eigen::VectorXd& beta) {
  const Eigen::VectorXd eta = linear_predictor(design, beta);
  if (family.kind() == FamilyKind::Bounded) {
    std::string bad;
    for (Eigen::Index t = 0; t < eta.size(); ++t) {
      if (!(eta(t) > 0.0)) {
        if (!bad.empty()) bad += ",";
        bad += std::to_string(t + 1);
      }
    }
    if (!bad.empty()) {
      throw DomainError("bounded family needs x_nt' beta > 0 for every t", "t=" + bad);
    }
  }
  Eigen::VectorXd mu(eta.size());
  for (Eigen::Index t = 0; t < eta.size(); ++t) mu(t) = link_inverse(family, eta(t));
  return mu;
}

/// Var(Y_t) given the marginal mean mu_t.
inline double marginal_variance(const ModelFamily& family, const ParameterSet& params, double mu) {
  check_mean_space(family, mu);
  const double s2 = params.sigma2;
  if (!(s2 > 0.0)) throw DomainError("sigma2 must be positive");
  const double phi = family.effective_dispersion(params.phi);
  switch (family.kind()) {
    case FamilyKind::NonNegative: {
      const double p = family.p();
      // (sigma_eps^2 + 1)^(p(p-1)/2) = exp(sigma2 p (p-1)/2)
      return phi * std::pow(mu, p) * std::exp(s2 * p * (p - 1.0) / 2.0) +
             mu * mu * lognormal_factor_variance(s2);
    }
    case FamilyKind::RealValued: return phi + s2;
    case FamilyKind::Bounded:
      return phi * mu + mu * mu * ((1.0 - phi) * w_function(s2) - 1.0);
  }
  return 0.0;
}

/// Cov(Y_{t+k}, Y_t) for k >= 1.
inline double autocovariance(const ModelFamily& family, const ParameterSet& params, double mu_t,
                             double mu_tk, int k) {
  if (k < 1) throw DomainError("autocovariance lag must be >= 1", "k=" + std::to_string(k));
  check_mean_space(family, mu_t);
  check_mean_space(family, mu_tk);
  const double s2 = params.sigma2;
  switch (family.kind()) {
    case FamilyKind::NonNegative:
      return mu_tk * mu_t * lognormal_factor_autocov(s2, params.rho, k);
    case FamilyKind::RealValued: return s2 * std::pow(params.rho, k);
    case FamilyKind::Bounded:
      return mu_tk * mu_t * (v_function(s2, std::pow(params.rho, k)) - 1.0);
  }
  return 0.0;
}

/// Corr(Y_{t+k}, Y_t) for k >= 1.
inline double autocorrelation(const ModelFamily& family, const ParameterSet& params, double mu_t,
                              double mu_tk, int k) {
  const double var_t = marginal_variance(family, params, mu_t);
  const double var_tk = marginal_variance(family, params, mu_tk);
  if (!(var_t > 0.0) || !(var_tk > 0.0)) {
    throw DomainError("autocorrelation undefined for zero variance");
  }
  if (family.kind() == FamilyKind::NonNegative) {
    // Normalised form: rho_eps(k) / sqrt([a_{t+k} + 1][a_t + 1]) with
    // a_t = phi mu_t^(p-2) exp(sigma2 p(p-1)/2) / sigma_eps^2; avoids mu^p products.
    const double s2 = params.sigma2;
    const double p = family.p();
    const double eps_var = lognormal_factor_variance(s2);
    const double rho_eps = lognormal_factor_autocov(s2, params.rho, k) / eps_var;
    const double scale = params.phi * std::exp(s2 * p * (p - 1.0) / 2.0) / eps_var;
    const double a_t = scale * std::pow(mu_t, p - 2.0);
    const double a_tk = scale * std::pow(mu_tk, p - 2.0);
    return rho_eps / std::sqrt((a_tk + 1.0) * (a_t + 1.0));
  }
  return autocovariance(family, params, mu_t, mu_tk, k) / std::sqrt(var_t * var_tk);
}

/// Moments of one series evaluated along a design.
struct MomentReport {
  Eigen::VectorXd mean;
  Eigen::VectorXd variance;
  ModelFamily family;
  ParameterSet params;

  /// Cov(Y_{t+k}, Y_t), t 1-based; k = 0 gives the variance.
  double autocov(std::size_t t, int k) const {
    check_index(t, k);
    if (k == 0) return variance(static_cast<Eigen::Index>(t - 1));
    return autocovariance(family, params, mean(static_cast<Eigen::Index>(t - 1)),
                          mean(static_cast<Eigen::Index>(t - 1 + k)), k);
  }

  double acf(std::size_t t, int k) const {
    check_index(t, k);
    if (k == 0) return 1.0;
    return autocorrelation(family, params, mean(static_cast<Eigen::Index>(t - 1)),
                           mean(static_cast<Eigen::Index>(t - 1 + k)), k);
  }

 private:
  void check_index(std::size_t t, int k) const {
    if (t < 1 || k < 0 || t + static_cast<std::size_t>(k) > static_cast<std::size_t>(mean.size())) {
      throw DomainError("moment index out of range",
                        "t=" + std::to_string(t) + " k=" + std::to_string(k));
    }
  }
};

inline MomentReport moment_report(const ModelFamily& family, const DesignMatrix& design,
                                  const ParameterSet& params) {
  MomentReport report{marginal_mean(family, design, params.beta), {}, family, params};
  report.variance.resize(report.mean.size());
  for (Eigen::Index t = 0; t < report.mean.size(); ++t) {
    report.variance(t) = marginal_variance(family, params, report.mean(t));
  }
  return report;
}

}  // namespace sts
