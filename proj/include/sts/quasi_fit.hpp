#pragma once

// Quasi-likelihood estimation of beta by Fisher scoring.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <sstream>
#include <string>

#include "sts/error.hpp"
#include "sts/model.hpp"

namespace sts {

struct FitOptions {
  int max_iter = 100;
  double tol = 1e-8;
  std::optional<Eigen::VectorXd> init;
};

struct FitResult {
  Eigen::VectorXd beta_hat;
  int iterations = 0;
  bool converged = false;
  // Max-norm of the last scoring step relative to max(1, |beta|).
  double final_score_norm = 0.0;
  double q_value = 0.0;
  double pearson_phi = 0.0;
  Eigen::VectorXd naive_se;
};

/// Thrown when scoring runs out of iterations; carries the last iterate.
class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& message, Eigen::VectorXd last)
      : Error("no_convergence", message, describe(last)), last_(std::move(last)) {}
  const Eigen::VectorXd& last_iterate() const noexcept { return last_; }

 private:
  static std::string describe(const Eigen::VectorXd& b) {
    std::ostringstream os;
    os.precision(17);
    os << "last beta = [";
    for (Eigen::Index i = 0; i < b.size(); ++i) os << (i ? ", " : "") << b(i);
    os << "]";
    return os.str();
  }
  Eigen::VectorXd last_;
};

namespace detail {

/// mu_t and the pieces of the scoring update at a given beta.
/// score = sum_t x_t w_t (y_t - mu_t), info = sum_t x_t x_t' i_t, where
/// w_t = (dmu/deta)/V(mu) and i_t = (dmu/deta)^2/V(mu).
struct ScoreTerms {
  Eigen::VectorXd mu;
  Eigen::VectorXd score;
  Eigen::MatrixXd info;
};

inline bool feasible(const ModelFamily& family, const DesignMatrix& design,
                     const Eigen::VectorXd& beta) {
  if (family.kind() != FamilyKind::Bounded) return beta.allFinite();
  return beta.allFinite() && (design.x * beta).minCoeff() > 0.0;
}

inline Eigen::VectorXd fitted_mean(const ModelFamily& family, const DesignMatrix& design,
                                   const Eigen::VectorXd& beta) {
  const Eigen::VectorXd eta = linear_predictor(design, beta);
  Eigen::VectorXd mu(eta.size());
  for (Eigen::Index t = 0; t < eta.size(); ++t) mu(t) = link_inverse(family, eta(t));
  return mu;
}

inline ScoreTerms score_terms(const ModelFamily& family, const DesignMatrix& design,
                              const Eigen::VectorXd& beta, const Eigen::VectorXd& y) {
  ScoreTerms st;
  st.mu = fitted_mean(family, design, beta);
  const Eigen::Index n = y.size();
  Eigen::VectorXd w(n), info_w(n);
  for (Eigen::Index t = 0; t < n; ++t) {
    const double mu = st.mu(t);
    check_mean_space(family, mu);
    switch (family.kind()) {
      case FamilyKind::NonNegative: {
        // dmu/deta = mu, V = mu^p
        const double m1p = std::pow(mu, 1.0 - family.p());
        w(t) = m1p;
        info_w(t) = m1p * mu;
        break;
      }
      case FamilyKind::RealValued:
        w(t) = 1.0;
        info_w(t) = 1.0;
        break;
      case FamilyKind::Bounded:
        // dmu/deta = -mu, V = mu(1 - mu)
        w(t) = -1.0 / (1.0 - mu);
        info_w(t) = mu / (1.0 - mu);
        break;
    }
  }
  st.score = design.x.transpose() * (w.array() * (y - st.mu).array()).matrix();
  st.info = design.x.transpose() * info_w.asDiagonal() * design.x;
  return st;
}

inline double q_kernel_sum(const ModelFamily& family, const Eigen::VectorXd& y,
                           const Eigen::VectorXd& mu) {
  double total = 0.0;
  for (Eigen::Index t = 0; t < y.size(); ++t) total += q_kernel(family, y(t), mu(t));
  return total;
}

inline Eigen::VectorXd least_squares(const Eigen::MatrixXd& x, const Eigen::VectorXd& z) {
  return x.colPivHouseholderQr().solve(z);
}

/// Deterministic feasible starting value.
inline Eigen::VectorXd initial_beta(const ModelFamily& family, const DesignMatrix& design,
                                    const Eigen::VectorXd& y) {
  switch (family.kind()) {
    case FamilyKind::RealValued: return least_squares(design.x, y);
    case FamilyKind::NonNegative: {
      const double offset = (y.array() == 0.0).any() ? 0.1 * y.mean() : 0.0;
      Eigen::VectorXd z = (y.array() + offset).log().matrix();
      if (!z.allFinite()) z = Eigen::VectorXd::Zero(y.size());
      return least_squares(design.x, z);
    }
    case FamilyKind::Bounded: {
      const Eigen::VectorXd z = (-(y.array().max(0.01).min(0.99)).log()).matrix();
      Eigen::VectorXd beta = least_squares(design.x, z);
      if (feasible(family, design, beta)) return beta;
      // Shrink toward the intercept-only point -log(mean y).
      Eigen::Index intercept = -1;
      for (Eigen::Index j = 0; j < design.x.cols(); ++j) {
        if ((design.x.col(j).array() == 1.0).all()) {
          intercept = j;
          break;
        }
      }
      if (intercept < 0) {
        throw DomainError("no feasible start: bounded design without an intercept column");
      }
      Eigen::VectorXd anchor = Eigen::VectorXd::Zero(beta.size());
      anchor(intercept) = -std::log(std::clamp(y.mean(), 0.01, 0.99));
      double s = 1.0;
      for (int i = 0; i < 60 && !feasible(family, design, beta); ++i) {
        s *= 0.5;
        beta = s * beta + (1.0 - s) * anchor;
      }
      return feasible(family, design, beta) ? beta : anchor;
    }
  }
  return Eigen::VectorXd::Zero(design.x.cols());
}

}  // namespace detail

/// U(beta) = sum_t D_t (y_t - mu_t)/V(mu_t), the gradient of sum_t Q(y_t; mu_t(beta)).
inline Eigen::VectorXd quasi_score(const ModelFamily& family, const DesignMatrix& design,
                                   const Eigen::VectorXd& beta, const Eigen::VectorXd& y) {
  if (static_cast<std::size_t>(y.size()) != design.n()) {
    throw DomainError("response length differs from design rows");
  }
  if (family.kind() == FamilyKind::Bounded && !detail::feasible(family, design, beta)) {
    throw DomainError("bounded family needs x_nt' beta > 0 for every t");
  }
  return detail::score_terms(family, design, beta, y).score;
}

/// Log-quasi-likelihood sum_t Q(y_t; mu_t(beta)).
inline double quasi_loglik(const ModelFamily& family, const DesignMatrix& design,
                           const Eigen::VectorXd& beta, const Eigen::VectorXd& y) {
  const Eigen::VectorXd mu = detail::fitted_mean(family, design, beta);
  double total = 0.0;
  for (Eigen::Index t = 0; t < y.size(); ++t) total += q_function(family, y(t), mu(t));
  return total;
}

inline FitResult fit_beta(const ModelFamily& family, const DesignMatrix& design,
                          const Eigen::VectorXd& y, const FitOptions& options = {}) {
  const auto n = static_cast<Eigen::Index>(design.n());
  const auto q = static_cast<Eigen::Index>(design.q());
  if (y.size() != n) throw DomainError("response length differs from design rows");
  if (n <= q) throw RankError("need more observations than covariates");
  if (!full_column_rank(design.x)) {
    throw RankError("design is rank deficient",
                    "singular value ratio " + std::to_string(condition_ratio(design.x)));
  }
  for (Eigen::Index t = 0; t < n; ++t) check_support(family, y(t));

  Eigen::VectorXd beta = options.init ? *options.init : detail::initial_beta(family, design, y);
  if (beta.size() != q) throw DomainError("initial beta has the wrong length");
  if (!detail::feasible(family, design, beta)) {
    throw DomainError("initial beta leaves the mean space");
  }

  FitResult result;
  detail::ScoreTerms st = detail::score_terms(family, design, beta, y);
  double objective = detail::q_kernel_sum(family, y, st.mu);

  for (int iter = 1; iter <= options.max_iter; ++iter) {
    const Eigen::VectorXd step = st.info.ldlt().solve(st.score);
    const double rel = step.cwiseAbs().maxCoeff() / std::max(1.0, beta.cwiseAbs().maxCoeff());
    result.iterations = iter;
    result.final_score_norm = rel;
    if (rel < options.tol) {
      result.converged = true;
      break;
    }

    double scale = 1.0;
    Eigen::VectorXd candidate = beta + step;
    double candidate_obj = -std::numeric_limits<double>::infinity();
    bool accepted = false;
    for (int halving = 0; halving <= 30; ++halving) {
      if (detail::feasible(family, design, candidate)) {
        candidate_obj = detail::q_kernel_sum(family, y, detail::fitted_mean(family, design, candidate));
        // Ascent up to rounding in the n-term sum.
        const double slack = 1e-12 * (1.0 + std::abs(objective));
        if (std::isfinite(candidate_obj) && candidate_obj >= objective - slack) {
          accepted = true;
          break;
        }
      }
      scale *= 0.5;
      candidate = beta + scale * step;
    }
    if (!accepted) break;
    beta = candidate;
    objective = candidate_obj;
    st = detail::score_terms(family, design, beta, y);
  }

  if (!result.converged) {
    throw ConvergenceError("quasi-likelihood scoring did not converge in " +
                               std::to_string(options.max_iter) + " iterations",
                           beta);
  }

  result.beta_hat = beta;
  result.q_value = quasi_loglik(family, design, beta, y);

  double pearson = 0.0;
  for (Eigen::Index t = 0; t < n; ++t) {
    const double r = y(t) - st.mu(t);
    pearson += r * r / variance_function(family, st.mu(t));
  }
  result.pearson_phi = pearson / static_cast<double>(n - q);
  const Eigen::MatrixXd cov = result.pearson_phi * st.info.inverse();
  result.naive_se = cov.diagonal().cwiseSqrt();
  return result;
}

}  // namespace sts
