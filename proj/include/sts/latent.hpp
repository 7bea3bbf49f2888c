#pragma once

// Latent Gaussian AR(1) and shifted gamma AR(1) processes, and conditional
// response generation given a latent path.

#include <Eigen/Dense>
#include <boost/random/bernoulli_distribution.hpp>
#include <boost/random/beta_distribution.hpp>
#include <boost/random/binomial_distribution.hpp>
#include <boost/random/gamma_distribution.hpp>
#include <boost/random/normal_distribution.hpp>
#include <boost/random/poisson_distribution.hpp>

#include <cmath>
#include <cstdint>
#include <string>

#include "sts/error.hpp"
#include "sts/model.hpp"
#include "sts/rng.hpp"

namespace sts {

enum class LatentKind { GaussianAR1, ShiftedGammaAR1 };

/// Latent process parameters. `c` is derived (gaussian_intercept), never set
/// by callers directly.
struct LatentSpec {
  LatentKind kind = LatentKind::GaussianAR1;
  double sigma2 = 1.0;
  double rho = 0.0;
  double c = 0.0;
};

struct SeedRecord {
  std::uint64_t seed = 0;
  std::uint64_t stream = 0;
};

struct LatentPath {
  Eigen::VectorXd alpha;
  LatentSpec spec;
  SeedRecord seed;

  std::size_t size() const noexcept { return static_cast<std::size_t>(alpha.size()); }
};

/// Multiplicative latent factor entering the conditional mean:
/// exp(alpha) for log-link families, exp(-alpha) for the bounded family.
inline double latent_factor(const ModelFamily& family, double alpha) {
  return family.kind() == FamilyKind::Bounded ? std::exp(-alpha) : std::exp(alpha);
}

/// Intercept c of the Gaussian AR(1) that makes E(exp(alpha_t)) = 1 (log link)
/// or E(alpha_t) = 0 (identity link).
inline double gaussian_intercept(const ModelFamily& family, double sigma2, double rho) {
  if (!(sigma2 >= 0.0) || !(std::abs(rho) < 1.0)) {
    throw DomainError("Gaussian AR(1) requires sigma2 >= 0 and |rho| < 1");
  }
  switch (family.kind()) {
    case FamilyKind::NonNegative: return -sigma2 * (1.0 - rho) / 2.0;
    case FamilyKind::RealValued: return 0.0;
    case FamilyKind::Bounded:
      throw DomainError("the bounded family is driven by the shifted gamma process");
  }
  return 0.0;
}

inline LatentSpec gaussian_spec(const ModelFamily& family, double sigma2, double rho) {
  return {LatentKind::GaussianAR1, sigma2, rho, gaussian_intercept(family, sigma2, rho)};
}

inline LatentSpec gamma_spec(double sigma2, double rho) {
  return {LatentKind::ShiftedGammaAR1, sigma2, rho, 0.0};
}

/// Latent spec implied by a family and theta.
inline LatentSpec latent_spec_for(const ModelFamily& family, const ParameterSet& params) {
  if (family.kind() == FamilyKind::Bounded) return gamma_spec(params.sigma2, params.rho);
  return gaussian_spec(family, params.sigma2, params.rho);
}

/// alpha_t = c + rho alpha_{t-1} + eta_t with alpha_0 from the stationary law
/// N(c/(1-rho), sigma2). sigma2 is the stationary variance, so the
/// innovations have variance sigma2 (1 - rho^2).
inline LatentPath simulate_gaussian_ar1(double sigma2, double rho, double c, std::size_t n,
                                        Philox4x32& rng) {
  if (!(sigma2 > 0.0) || !(std::abs(rho) < 1.0) || n < 1 || !std::isfinite(c)) {
    throw DomainError("invalid Gaussian AR(1) parameters",
                      "sigma2=" + std::to_string(sigma2) + " rho=" + std::to_string(rho));
  }
  LatentPath path;
  path.spec = {LatentKind::GaussianAR1, sigma2, rho, c};
  path.seed = {rng.seed(), rng.stream()};
  path.alpha.resize(static_cast<Eigen::Index>(n));

  boost::random::normal_distribution<double> stationary(c / (1.0 - rho), std::sqrt(sigma2));
  boost::random::normal_distribution<double> innovation(0.0, std::sqrt(sigma2 * (1.0 - rho * rho)));
  double prev = stationary(rng);
  for (Eigen::Index t = 0; t < path.alpha.size(); ++t) {
    prev = c + rho * prev + innovation(rng);
    path.alpha(t) = prev;
  }
  return path;
}

inline LatentPath simulate_gaussian_ar1(double sigma2, double rho, double c, std::size_t n,
                                        std::uint64_t seed, std::uint64_t stream = 0) {
  Philox4x32 rng(seed, stream);
  return simulate_gaussian_ar1(sigma2, rho, c, n, rng);
}

/// GAR(1) with Gamma(mean 1, variance sigma2) marginals.
///
/// Transition from Z_{t-1} = z: draw N ~ Poisson(kappa rho z), add the sum of
/// N Exponential(kappa) variables (drawn as one Gamma(N, 1/kappa)) and an
/// innovation Gamma(shape 1/sigma2, rate kappa), kappa = 1/(sigma2 (1 - rho)).
/// Returns the unshifted Z path.
inline LatentPath simulate_gar1(double sigma2, double rho, std::size_t n, Philox4x32& rng) {
  if (!(sigma2 > 0.0) || !(rho > 0.0 && rho < 1.0) || n < 1) {
    throw DomainError("GAR(1) requires sigma2 > 0 and 0 < rho < 1",
                      "sigma2=" + std::to_string(sigma2) + " rho=" + std::to_string(rho));
  }
  LatentPath path;
  path.spec = gamma_spec(sigma2, rho);
  path.seed = {rng.seed(), rng.stream()};
  path.alpha.resize(static_cast<Eigen::Index>(n));

  const double kappa = 1.0 / (sigma2 * (1.0 - rho));
  const double shape = 1.0 / sigma2;
  boost::random::gamma_distribution<double> marginal(shape, sigma2);
  boost::random::gamma_distribution<double> innovation(shape, 1.0 / kappa);

  double z = marginal(rng);
  for (Eigen::Index t = 0; t < path.alpha.size(); ++t) {
    double next = innovation(rng);
    const double rate = kappa * rho * z;
    if (rate > 0.0) {
      boost::random::poisson_distribution<long long, double> count(rate);
      const long long jumps = count(rng);
      if (jumps > 0) {
        boost::random::gamma_distribution<double> thinned(static_cast<double>(jumps), 1.0 / kappa);
        next += thinned(rng);
      }
    }
    z = next;
    path.alpha(t) = z;
  }
  return path;
}

inline LatentPath simulate_gar1(double sigma2, double rho, std::size_t n, std::uint64_t seed,
                                std::uint64_t stream = 0) {
  Philox4x32 rng(seed, stream);
  return simulate_gar1(sigma2, rho, n, rng);
}

/// log(1 + sigma2)/sigma2, the constant removed from Z_t.
inline double gar1_shift(double sigma2) {
  if (!(sigma2 > 0.0)) throw DomainError("sigma2 must be positive");
  return std::log1p(sigma2) / sigma2;
}

/// alpha_t = Z_t - log(1 + sigma2)/sigma2, so that E(exp(-alpha_t)) = 1.
inline LatentPath shift_gar1(LatentPath z_path, double sigma2) {
  if (!z_path.alpha.allFinite() || z_path.alpha.size() < 1) {
    throw DomainError("GAR(1) path must be non-empty and finite");
  }
  z_path.alpha.array() -= gar1_shift(sigma2);
  z_path.spec.sigma2 = sigma2;
  return z_path;
}

/// Draws the latent path implied by a spec.
inline LatentPath simulate_latent(const LatentSpec& spec, std::size_t n, Philox4x32& rng) {
  if (spec.kind == LatentKind::GaussianAR1) {
    return simulate_gaussian_ar1(spec.sigma2, spec.rho, spec.c, n, rng);
  }
  return shift_gar1(simulate_gar1(spec.sigma2, spec.rho, n, rng), spec.sigma2);
}

// ---------------------------------------------------------------------------
// Responses

enum class ConditionalDistribution { Gamma, Poisson, Normal, Beta, Bernoulli, Binomial };

inline const char* to_string(ConditionalDistribution dist) {
  switch (dist) {
    case ConditionalDistribution::Gamma: return "gamma";
    case ConditionalDistribution::Poisson: return "poisson";
    case ConditionalDistribution::Normal: return "normal";
    case ConditionalDistribution::Beta: return "beta";
    case ConditionalDistribution::Bernoulli: return "bernoulli";
    case ConditionalDistribution::Binomial: return "binomial";
  }
  return "?";
}

/// Rejects distribution/family/theta combinations whose moments cannot match
/// mean mu_t and variance phi V(mu_t).
inline void check_compatible(const ModelFamily& family, const ParameterSet& params,
                             ConditionalDistribution dist) {
  using D = ConditionalDistribution;
  const auto fail = [&](const std::string& why) {
    throw DomainError(std::string(to_string(dist)) + " responses: " + why);
  };
  switch (family.kind()) {
    case FamilyKind::NonNegative:
      if (dist != D::Gamma && dist != D::Poisson) fail("need a non-negative family law");
      if (dist == D::Poisson && (std::abs(family.p() - 1.0) > 1e-12 || params.phi != 1.0)) {
        fail("Poisson needs p = 1 and phi = 1");
      }
      return;
    case FamilyKind::RealValued:
      if (dist != D::Normal) fail("real-valued family uses normal responses");
      return;
    case FamilyKind::Bounded:
      if (dist == D::Beta) {
        if (family.phi_known()) fail("beta responses need the continuous bounded family");
        if (!(params.phi > 0.0 && params.phi < 1.0)) fail("beta needs 0 < phi < 1");
        return;
      }
      if (dist == D::Bernoulli) {
        if (!family.phi_known() || family.trials() || params.phi != 1.0) {
          fail("Bernoulli needs the binary family with phi = 1");
        }
        return;
      }
      if (dist == D::Binomial) {
        if (!family.trials()) fail("binomial needs a trial count m");
        return;
      }
      fail("bounded family uses beta, Bernoulli or binomial responses");
  }
}

/// Independent draws of Y_t given alpha_t with conditional mean
/// mu~_t = h(x_nt' beta + alpha_t) and variance phi V(mu~_t).
///
/// Gamma:    shape mu^(2-p)/phi, scale phi mu^(p-1).
/// Normal:   N(mu, phi).
/// Beta:     a = mu (1/phi - 1), b = (1 - mu)(1/phi - 1).
/// Binomial: count ~ Bin(m, mu) emitted as count/m (variance mu(1-mu)/m).
inline Eigen::VectorXd generate_response(const ModelFamily& family, const DesignMatrix& design,
                                         const ParameterSet& params, const LatentPath& path,
                                         ConditionalDistribution dist, Philox4x32& rng) {
  using D = ConditionalDistribution;
  if (path.size() != design.n()) {
    throw DomainError("latent path length differs from design rows",
                      "path=" + std::to_string(path.size()) + " n=" + std::to_string(design.n()));
  }
  check_compatible(family, params, dist);
  const Eigen::VectorXd eta = linear_predictor(design, params.beta) + path.alpha;
  Eigen::VectorXd y(eta.size());
  for (Eigen::Index t = 0; t < eta.size(); ++t) {
    if (family.kind() == FamilyKind::Bounded && !(eta(t) > 0.0)) {
      throw DomainError("conditional mean left (0,1)", "t=" + std::to_string(t + 1));
    }
    const double mu = link_inverse(family, eta(t));
    double draw = 0.0;
    switch (dist) {
      case D::Gamma: {
        const double p = family.p();
        boost::random::gamma_distribution<double> law(std::pow(mu, 2.0 - p) / params.phi,
                                                      params.phi * std::pow(mu, p - 1.0));
        draw = law(rng);
        break;
      }
      case D::Poisson: {
        boost::random::poisson_distribution<long long, double> law(mu);
        draw = static_cast<double>(law(rng));
        break;
      }
      case D::Normal: {
        boost::random::normal_distribution<double> law(mu, std::sqrt(params.phi));
        draw = law(rng);
        break;
      }
      case D::Beta: {
        const double precision = 1.0 / params.phi - 1.0;
        boost::random::beta_distribution<double> law(mu * precision, (1.0 - mu) * precision);
        draw = law(rng);
        break;
      }
      case D::Bernoulli: {
        boost::random::bernoulli_distribution<double> law(mu);
        draw = law(rng) ? 1.0 : 0.0;
        break;
      }
      case D::Binomial: {
        const int m = *family.trials();
        boost::random::binomial_distribution<int, double> law(m, mu);
        draw = static_cast<double>(law(rng)) / m;
        break;
      }
    }
    if (!std::isfinite(draw)) {
      throw DomainError("response draw is not finite", "t=" + std::to_string(t + 1));
    }
    y(t) = draw;
  }
  return y;
}

inline Eigen::VectorXd generate_response(const ModelFamily& family, const DesignMatrix& design,
                                         const ParameterSet& params, const LatentPath& path,
                                         ConditionalDistribution dist, std::uint64_t seed,
                                         std::uint64_t stream = 0) {
  Philox4x32 rng(seed, stream);
  return generate_response(family, design, params, path, dist, rng);
}

}  // namespace sts
