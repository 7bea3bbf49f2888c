#pragma once

// Method-of-moments estimation of the nuisance parameters (phi, sigma2, rho)
// from residuals around fitted means.
//
// Each estimator is split in two: a reduction of (y, mu_hat) to the handful
// of sums the estimating equations need, and the closed-form / root-finding
// step on those sums. Population moments can be fed straight into the second
// step.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "sts/error.hpp"
#include "sts/model.hpp"
#include "sts/moments.hpp"

namespace sts {

struct NuisanceEstimate {
  double phi_hat = std::numeric_limits<double>::quiet_NaN();
  double sigma2_hat = std::numeric_limits<double>::quiet_NaN();
  double rho_hat = std::numeric_limits<double>::quiet_NaN();
  bool valid = false;
  // Why the estimate is invalid; empty when valid.
  std::string reason;
  // Intermediate sample moments, keyed by name (M1, M2, c1, ...).
  std::map<std::string, double> diagnostics;
};

/// Sums over residuals r_t = y_t - mu_t shared by all three estimators.
/// Lag sums run over t = 1..n-k.
struct ResidualMoments {
  std::size_t n = 0;
  double sum_sq = 0.0;             // sum r_t^2
  double lag_cross[3] = {0, 0, 0};  // [k] = sum r_t r_{t+k}, k = 1, 2
  double lag_mean[3] = {0, 0, 0};   // [k] = sum mu_t mu_{t+k}
  double sum_mu = 0.0;
  double sum_mu_sq = 0.0;
  double sum_mu_p = 0.0;  // sum mu_t^p (power-variance family only)
};

inline ResidualMoments residual_moments(const Eigen::VectorXd& y, const Eigen::VectorXd& mu_hat,
                                        double p = 1.0) {
  if (y.size() != mu_hat.size()) throw DomainError("y and mu_hat differ in length");
  if (y.size() < 3) throw DomainError("method of moments needs n >= 3");
  ResidualMoments m;
  const Eigen::Index n = y.size();
  m.n = static_cast<std::size_t>(n);
  const Eigen::VectorXd r = y - mu_hat;
  m.sum_sq = r.squaredNorm();
  for (int k = 1; k <= 2; ++k) {
    m.lag_cross[k] = r.head(n - k).dot(r.tail(n - k));
    m.lag_mean[k] = mu_hat.head(n - k).dot(mu_hat.tail(n - k));
  }
  m.sum_mu = mu_hat.sum();
  m.sum_mu_sq = mu_hat.squaredNorm();
  m.sum_mu_p = mu_hat.array().pow(p).sum();
  return m;
}

namespace detail {

inline NuisanceEstimate invalid(NuisanceEstimate est, std::string reason) {
  est.valid = false;
  est.reason = std::move(reason);
  return est;
}

inline bool all_finite(const NuisanceEstimate& e) {
  return std::isfinite(e.phi_hat) && std::isfinite(e.sigma2_hat) && std::isfinite(e.rho_hat);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Non-negative family: M_k = log(sum r_t r_{t+k} / sum mu_t mu_{t+k} + 1) = sigma2 rho^k

inline NuisanceEstimate mm_nonneg(const ResidualMoments& m, double p) {
  NuisanceEstimate est;
  double big_m[3] = {0, 0, 0};
  for (int k = 1; k <= 2; ++k) {
    const double arg = m.lag_cross[k] / m.lag_mean[k] + 1.0;
    est.diagnostics["ratio" + std::to_string(k)] = arg;
    if (!(arg > 0.0)) return detail::invalid(est, "moment ratio " + std::to_string(k) + " <= 0");
    big_m[k] = std::log(arg);
    est.diagnostics["M" + std::to_string(k)] = big_m[k];
  }
  if (big_m[1] == 0.0 || big_m[2] == 0.0) return detail::invalid(est, "zero lag moment");
  est.rho_hat = big_m[2] / big_m[1];
  // M1^2 / M2 inverts M_k = sigma2 rho^k.
  est.sigma2_hat = big_m[1] * big_m[1] / big_m[2];
  est.phi_hat = (m.sum_sq - std::expm1(est.sigma2_hat) * m.sum_mu_sq) /
                (std::exp(est.sigma2_hat * p * (p - 1.0) / 2.0) * m.sum_mu_p);
  if (!detail::all_finite(est)) return detail::invalid(est, "non-finite estimate");
  if (!(std::abs(est.rho_hat) < 1.0)) return detail::invalid(est, "rho outside (-1, 1)");
  if (!(est.sigma2_hat > 0.0)) return detail::invalid(est, "sigma2 <= 0");
  if (!(est.phi_hat > 0.0)) return detail::invalid(est, "phi <= 0");
  est.valid = true;
  return est;
}

inline NuisanceEstimate mm_nonneg(const Eigen::VectorXd& y, const Eigen::VectorXd& mu_hat,
                                  double p) {
  if ((mu_hat.array() <= 0.0).any()) throw DomainError("fitted means must be positive");
  return mm_nonneg(residual_moments(y, mu_hat, p), p);
}

// ---------------------------------------------------------------------------
// Real-valued family

inline NuisanceEstimate mm_real(const ResidualMoments& m) {
  NuisanceEstimate est;
  const double n = static_cast<double>(m.n);
  const double s1 = m.lag_cross[1];
  const double s2 = m.lag_cross[2];
  est.diagnostics["lag1_sum"] = s1;
  est.diagnostics["lag2_sum"] = s2;
  est.diagnostics["mean_square"] = m.sum_sq / n;
  if (s1 == 0.0 || s2 == 0.0) return detail::invalid(est, "zero lag sum");
  est.rho_hat = s2 / s1;
  est.sigma2_hat = s1 * s1 / (n * s2);
  est.phi_hat = m.sum_sq / n - est.sigma2_hat;
  if (!detail::all_finite(est)) return detail::invalid(est, "non-finite estimate");
  if (!(std::abs(est.rho_hat) < 1.0)) return detail::invalid(est, "rho outside (-1, 1)");
  if (!(est.sigma2_hat > 0.0)) return detail::invalid(est, "sigma2 <= 0");
  if (!(est.phi_hat > 0.0)) return detail::invalid(est, "phi <= 0");
  est.valid = true;
  return est;
}

inline NuisanceEstimate mm_real(const Eigen::VectorXd& y, const Eigen::VectorXd& mu_hat) {
  return mm_real(residual_moments(y, mu_hat));
}

// ---------------------------------------------------------------------------
// Bounded family: v(sigma2, rho^k) = c_k, k = 1, 2

/// The y solving v(x, y) = c for fixed x.
inline double v_inverse(double x, double c) {
  // (1+x)^2 c^(-x) - 1 - 2x, computed as expm1(2 log1p(x) - x log c) - 2x.
  const double a = std::expm1(2.0 * std::log1p(x) - x * std::log(c)) - 2.0 * x;
  return 1.0 - a / (x * x);
}

struct LatentRoot {
  double sigma2 = 0.0;
  double rho = 0.0;
  int sign_changes = 0;
};

/// Solves v(x, rho) = c1, v(x, rho^2) = c2 for (x, rho). Brackets sign changes
/// of f(x) = v_inverse(x, c1)^2 - v_inverse(x, c2) on a 200-point log grid over
/// [1e-6, 50] and bisects the smallest one to 1e-10 in x.
inline std::optional<LatentRoot> solve_bounded_latent(double c1, double c2) {
  constexpr double lo = 1e-6;
  constexpr double hi = 50.0;
  constexpr int grid = 200;
  const auto f = [&](double x) {
    const double y1 = v_inverse(x, c1);
    return y1 * y1 - v_inverse(x, c2);
  };
  const double step = std::log(hi / lo) / (grid - 1);
  std::optional<std::pair<double, double>> bracket;
  int changes = 0;
  double x_prev = lo;
  double f_prev = f(lo);
  for (int i = 1; i < grid; ++i) {
    const double x = lo * std::exp(step * i);
    const double fx = f(x);
    if (std::isfinite(f_prev) && std::isfinite(fx) && (f_prev == 0.0 || (f_prev < 0.0) != (fx < 0.0))) {
      ++changes;
      if (!bracket) bracket = {x_prev, x};
    }
    x_prev = x;
    f_prev = fx;
  }
  if (!bracket) return std::nullopt;

  auto [a, b] = *bracket;
  double fa = f(a);
  while (b - a > 1e-10 * std::max(1.0, a)) {
    const double mid = 0.5 * (a + b);
    const double fm = f(mid);
    if (fm == 0.0) {
      a = b = mid;
      break;
    }
    if ((fm < 0.0) == (fa < 0.0)) {
      a = mid;
      fa = fm;
    } else {
      b = mid;
    }
  }
  LatentRoot root;
  root.sigma2 = 0.5 * (a + b);
  root.rho = v_inverse(root.sigma2, c1);
  root.sign_changes = changes;
  return root;
}

inline NuisanceEstimate mm_bounded(const ResidualMoments& m, std::optional<double> phi_known) {
  NuisanceEstimate est;
  double c[3] = {0, 0, 0};
  for (int k = 1; k <= 2; ++k) {
    c[k] = m.lag_cross[k] / m.lag_mean[k] + 1.0;
    est.diagnostics["c" + std::to_string(k)] = c[k];
  }
  if (!(c[1] > 1.0) || !(c[2] > 1.0)) {
    return detail::invalid(est, "no positive dependence signal (c_k <= 1)");
  }
  const auto root = solve_bounded_latent(c[1], c[2]);
  if (!root) return detail::invalid(est, "no root of the latent moment equations in [1e-6, 50]");
  est.diagnostics["sign_changes"] = root->sign_changes;
  est.sigma2_hat = root->sigma2;
  est.rho_hat = root->rho;
  if (phi_known) {
    est.phi_hat = *phi_known;
  } else {
    const double w = w_function(est.sigma2_hat);
    est.diagnostics["w"] = w;
    est.phi_hat = (m.sum_sq - (w - 1.0) * m.sum_mu_sq) / (m.sum_mu - w * m.sum_mu_sq);
  }
  if (!detail::all_finite(est)) return detail::invalid(est, "non-finite estimate");
  if (!(est.rho_hat > 0.0 && est.rho_hat < 1.0)) return detail::invalid(est, "rho outside (0, 1)");
  if (!(est.sigma2_hat > 0.0)) return detail::invalid(est, "sigma2 <= 0");
  if (!phi_known && !(est.phi_hat > 0.0 && est.phi_hat < 1.0)) {
    return detail::invalid(est, "phi outside (0, 1)");
  }
  est.valid = true;
  return est;
}

inline NuisanceEstimate mm_bounded(const Eigen::VectorXd& y, const Eigen::VectorXd& mu_hat,
                                   std::optional<double> phi_known = std::nullopt) {
  if ((mu_hat.array() <= 0.0).any() || (mu_hat.array() >= 1.0).any()) {
    throw DomainError("fitted means must lie in (0, 1)");
  }
  return mm_bounded(residual_moments(y, mu_hat), phi_known);
}

/// Dispatches to the family's estimator.
inline NuisanceEstimate mm_estimate(const ModelFamily& family, const Eigen::VectorXd& y,
                                    const Eigen::VectorXd& mu_hat) {
  switch (family.kind()) {
    case FamilyKind::NonNegative: return mm_nonneg(y, mu_hat, family.p());
    case FamilyKind::RealValued: return mm_real(y, mu_hat);
    case FamilyKind::Bounded: return mm_bounded(y, mu_hat, family.phi_known());
  }
  return {};
}

}  // namespace sts
