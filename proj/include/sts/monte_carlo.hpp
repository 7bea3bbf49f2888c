#pragma once

// Parametric Monte Carlo: simulation studies, simulated standard errors and
// standardized-estimate diagnostics.

#include <Eigen/Dense>
#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "sts/error.hpp"
#include "sts/latent.hpp"
#include "sts/mm.hpp"
#include "sts/model.hpp"
#include "sts/quasi_fit.hpp"
#include "sts/rng.hpp"

namespace sts {

struct StudyConfig {
  ModelFamily family = ModelFamily::real_valued();
  std::vector<CovariateTerm> terms;
  ParameterSet true_params;
  ConditionalDistribution conditional = ConditionalDistribution::Normal;
  std::size_t n = 0;
  std::size_t replicas = 200;
  std::uint64_t master_seed = 0;
  std::uint32_t max_redraws = 100;
  FitOptions fit;
};

/// Estimates of one accepted replica: beta_hat followed by (phi, sigma2, rho).
struct ReplicaEstimate {
  Eigen::VectorXd theta;
  std::uint32_t redraws = 0;
};

struct StudyResult {
  std::vector<std::string> names;  // beta names..., "phi", "sigma2", "rho"
  Eigen::VectorXd truth;           // empty when unknown
  Eigen::VectorXd mean;
  std::optional<Eigen::VectorXd> se;  // absent for a single replica
  Eigen::MatrixXd estimates;          // replicas x (q + 3), row r = replica r
  std::vector<std::uint32_t> redraws;
  std::size_t total_simulations = 0;
  std::optional<Eigen::MatrixXd> standardized;  // (estimate - mean)/se

  std::size_t replicas() const noexcept { return static_cast<std::size_t>(estimates.rows()); }
};

/// Raised when a replica keeps producing invalid estimates.
class ReplicaError : public Error {
 public:
  ReplicaError(std::size_t replica, const std::string& last_reason)
      : Error("replica_failed",
              "replica " + std::to_string(replica) + " exceeded the redraw limit",
              "replica=" + std::to_string(replica) + " last_reason=" + last_reason),
        replica_(replica) {}
  std::size_t replica() const noexcept { return replica_; }

 private:
  std::size_t replica_;
};

inline std::vector<std::string> parameter_names(const DesignMatrix& design) {
  std::vector<std::string> names;
  for (std::size_t j = 0; j < design.q(); ++j) names.push_back("beta" + std::to_string(j));
  names.insert(names.end(), {"phi", "sigma2", "rho"});
  return names;
}

/// One simulated data set: latent path plus responses.
struct SimulatedSeries {
  LatentPath latent;
  Eigen::VectorXd y;
};

/// Draws (alpha, y) for replica `replica`, attempt `redraw`, from
/// independent latent and response substreams of `seed`.
inline SimulatedSeries simulate_series(const ModelFamily& family, const DesignMatrix& design,
                                       const ParameterSet& params, ConditionalDistribution dist,
                                       std::uint64_t seed, std::uint64_t replica = 0,
                                       std::uint32_t redraw = 0) {
  validate(family, params);
  Philox4x32 latent_rng(seed, substream(replica, redraw, StreamPurpose::Latent));
  Philox4x32 response_rng(seed, substream(replica, redraw, StreamPurpose::Response));
  SimulatedSeries s;
  s.latent = simulate_latent(latent_spec_for(family, params), design.n(), latent_rng);
  s.y = generate_response(family, design, params, s.latent, dist, response_rng);
  return s;
}

/// Full estimation pipeline on one series: QL for beta, then MM.
struct PipelineEstimate {
  FitResult fit;
  NuisanceEstimate nuisance;
};

inline PipelineEstimate estimate_all(const ModelFamily& family, const DesignMatrix& design,
                                     const Eigen::VectorXd& y, const FitOptions& options = {}) {
  PipelineEstimate out;
  out.fit = fit_beta(family, design, y, options);
  const Eigen::VectorXd mu_hat = detail::fitted_mean(family, design, out.fit.beta_hat);
  out.nuisance = mm_estimate(family, y, mu_hat);
  return out;
}

namespace detail {

inline ReplicaEstimate run_replica(const ModelFamily& family, const DesignMatrix& design,
                                   const ParameterSet& params, ConditionalDistribution dist,
                                   std::uint64_t seed, std::size_t replica,
                                   std::uint32_t max_redraws, const FitOptions& options) {
  std::string last_reason;
  for (std::uint32_t redraw = 0; redraw <= max_redraws; ++redraw) {
    const SimulatedSeries series = simulate_series(family, design, params, dist, seed, replica, redraw);
    try {
      const PipelineEstimate est = estimate_all(family, design, series.y, options);
      if (est.nuisance.valid) {
        ReplicaEstimate out;
        const auto q = est.fit.beta_hat.size();
        out.theta.resize(q + 3);
        out.theta.head(q) = est.fit.beta_hat;
        out.theta(q) = est.nuisance.phi_hat;
        out.theta(q + 1) = est.nuisance.sigma2_hat;
        out.theta(q + 2) = est.nuisance.rho_hat;
        out.redraws = redraw;
        return out;
      }
      last_reason = est.nuisance.reason;
    } catch (const ConvergenceError& e) {
      // A non-convergent fit is discarded like an out-of-range MM estimate.
      last_reason = e.what();
    }
  }
  throw ReplicaError(replica, last_reason);
}

}  // namespace detail

/// Mean and (if replicas > 1) sample SD of every column.
inline void summarize(StudyResult& result) {
  const auto rows = result.estimates.rows();
  result.mean = result.estimates.colwise().mean();
  if (rows < 2) {
    result.se.reset();
    result.standardized.reset();
    return;
  }
  const Eigen::MatrixXd centered = result.estimates.rowwise() - result.mean.transpose();
  Eigen::VectorXd sd = (centered.colwise().squaredNorm() / static_cast<double>(rows - 1)).cwiseSqrt();
  result.se = sd;
  Eigen::MatrixXd z = centered;
  for (Eigen::Index j = 0; j < z.cols(); ++j) {
    if (sd(j) > 0.0) z.col(j) /= sd(j);
    else z.col(j).setConstant(std::numeric_limits<double>::quiet_NaN());
  }
  result.standardized = z;
}

/// Simulates `replicas` data sets at `params`, estimates everything on each,
/// redrawing invalid MM replicas. Replica r only ever touches substreams
/// (seed, r, *), and results are stored by replica index, so the output does
/// not depend on `threads`.
inline StudyResult simulate_and_estimate(const ModelFamily& family, const DesignMatrix& design,
                                         const ParameterSet& params, ConditionalDistribution dist,
                                         std::size_t replicas, std::uint64_t seed,
                                         std::uint32_t max_redraws = 100,
                                         const FitOptions& options = {}, unsigned threads = 1) {
  if (replicas < 1) throw ConfigError("replicas must be >= 1");
  validate(family, params);
  check_compatible(family, params, dist);
  if (static_cast<std::size_t>(params.beta.size()) != design.q()) {
    throw DomainError("beta length does not match design columns");
  }

  std::vector<ReplicaEstimate> slots(replicas);
  std::vector<std::exception_ptr> errors(replicas);
  std::atomic<std::size_t> next{0};
  const auto worker = [&] {
    for (std::size_t r = next++; r < replicas; r = next++) {
      try {
        slots[r] = detail::run_replica(family, design, params, dist, seed, r, max_redraws, options);
      } catch (...) {
        errors[r] = std::current_exception();
      }
    }
  };
  const unsigned workers = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(replicas)));
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned i = 0; i < workers; ++i) pool.emplace_back(worker);
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  StudyResult result;
  result.names = parameter_names(design);
  result.truth.resize(static_cast<Eigen::Index>(design.q() + 3));
  result.truth << params.beta, params.phi, params.sigma2, params.rho;
  result.estimates.resize(static_cast<Eigen::Index>(replicas), result.truth.size());
  result.total_simulations = 0;
  for (std::size_t r = 0; r < replicas; ++r) {
    result.estimates.row(static_cast<Eigen::Index>(r)) = slots[r].theta.transpose();
    result.redraws.push_back(slots[r].redraws);
    result.total_simulations += 1 + slots[r].redraws;
  }
  summarize(result);
  return result;
}

inline StudyResult run_study(const StudyConfig& config, unsigned threads = 1) {
  if (config.replicas < 1) throw ConfigError("replicas must be >= 1");
  const DesignMatrix design = build_design(config.terms, config.n);
  return simulate_and_estimate(config.family, design, config.true_params, config.conditional,
                               config.replicas, config.master_seed, config.max_redraws, config.fit,
                               threads);
}

/// Simulated standard errors at a fitted theta: re-simulate under the
/// declared conditional law, refit, and take the empirical SDs.
inline StudyResult mc_standard_errors(const ModelFamily& family, const DesignMatrix& design,
                                      const ParameterSet& theta_hat, ConditionalDistribution dist,
                                      std::size_t replicas, std::uint64_t seed,
                                      unsigned threads = 1, std::uint32_t max_redraws = 100,
                                      const FitOptions& options = {}) {
  return simulate_and_estimate(family, design, theta_hat, dist, replicas, seed, max_redraws, options,
                               threads);
}

// ---------------------------------------------------------------------------
// Diagnostics

struct ParameterDiagnostics {
  std::string name;
  bool degenerate = false;  // zero spread, nothing standardized
  std::vector<double> standardized;  // sorted ascending
  std::vector<double> bin_edges;     // 21 edges
  std::vector<std::size_t> bin_counts;
  std::vector<std::pair<double, double>> qq;  // (normal quantile, sample quantile)
  double ks_statistic = std::numeric_limits<double>::quiet_NaN();
};

/// Kolmogorov-Smirnov distance between a sorted sample and N(0, 1).
inline double ks_standard_normal(const std::vector<double>& sorted) {
  const boost::math::normal_distribution<double> normal;
  const double n = static_cast<double>(sorted.size());
  double d = 0.0;
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    const double f = boost::math::cdf(normal, sorted[i]);
    d = std::max({d, (static_cast<double>(i) + 1.0) / n - f, f - static_cast<double>(i) / n});
  }
  return d;
}

inline std::vector<ParameterDiagnostics> standardized_diagnostics(
    const Eigen::MatrixXd& estimates, const std::vector<std::string>& names) {
  constexpr std::size_t kMinReplicas = 30;
  constexpr int kBins = 20;
  if (static_cast<std::size_t>(estimates.rows()) < kMinReplicas) {
    throw DomainError("diagnostics need at least 30 replicas",
                      "replicas=" + std::to_string(estimates.rows()));
  }
  if (static_cast<std::size_t>(estimates.cols()) != names.size()) {
    throw DomainError("one name per estimate column required");
  }
  const boost::math::normal_distribution<double> normal;
  const auto rows = estimates.rows();
  std::vector<ParameterDiagnostics> out;
  for (Eigen::Index j = 0; j < estimates.cols(); ++j) {
    ParameterDiagnostics diag;
    diag.name = names[static_cast<std::size_t>(j)];
    const Eigen::VectorXd col = estimates.col(j);
    const double mean = col.mean();
    const double sd = std::sqrt((col.array() - mean).square().sum() / static_cast<double>(rows - 1));
    if (!(sd > 0.0) || !std::isfinite(sd)) {
      diag.degenerate = true;
      out.push_back(std::move(diag));
      continue;
    }
    for (Eigen::Index r = 0; r < rows; ++r) diag.standardized.push_back((col(r) - mean) / sd);
    std::sort(diag.standardized.begin(), diag.standardized.end());

    const double lo = diag.standardized.front();
    const double hi = diag.standardized.back();
    const double width = (hi - lo) / kBins;
    for (int b = 0; b <= kBins; ++b) diag.bin_edges.push_back(lo + width * b);
    diag.bin_counts.assign(kBins, 0);
    for (double z : diag.standardized) {
      const int b = std::min(kBins - 1, static_cast<int>((z - lo) / width));
      ++diag.bin_counts[static_cast<std::size_t>(b)];
    }

    for (std::size_t i = 0; i < diag.standardized.size(); ++i) {
      const double prob = (static_cast<double>(i) + 0.5) / static_cast<double>(rows);
      diag.qq.emplace_back(boost::math::quantile(normal, prob), diag.standardized[i]);
    }
    diag.ks_statistic = ks_standard_normal(diag.standardized);
    out.push_back(std::move(diag));
  }
  return out;
}

}  // namespace sts
