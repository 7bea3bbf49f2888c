#include <gtest/gtest.h>

#include <random>

#include "sts/monte_carlo.hpp"
#include "sts/quasi_fit.hpp"

using namespace sts;

namespace {

DesignMatrix random_design(std::mt19937_64& gen, std::size_t n, int q) {
  std::normal_distribution<double> z;
  Eigen::MatrixXd x(static_cast<Eigen::Index>(n), q);
  std::vector<std::string> names;
  for (int j = 0; j < q; ++j) {
    names.push_back("x" + std::to_string(j));
    for (Eigen::Index t = 0; t < x.rows(); ++t) x(t, j) = j == 0 ? 1.0 : z(gen);
  }
  return design_from_matrix(x, names);
}

// Fourth-order central difference of sum_t Q(y_t; mu_t(beta)).
Eigen::VectorXd numeric_score(const ModelFamily& f, const DesignMatrix& d, const Eigen::VectorXd& beta,
                              const Eigen::VectorXd& y) {
  Eigen::VectorXd g(beta.size());
  for (Eigen::Index j = 0; j < beta.size(); ++j) {
    const double h = 1e-3 * std::max(1.0, std::abs(beta(j)));
    const auto at = [&](double s) {
      Eigen::VectorXd b = beta;
      b(j) += s * h;
      return quasi_loglik(f, d, b, y);
    };
    g(j) = (-at(2) + 8 * at(1) - 8 * at(-1) + at(-2)) / (12 * h);
  }
  return g;
}

}  // namespace

TEST(QuasiScore, ZeroAtLeastSquares) {
  std::mt19937_64 gen(1);
  const auto d = random_design(gen, 80, 4);
  std::normal_distribution<double> z;
  Eigen::VectorXd y(80);
  for (auto& v : y) v = z(gen);
  const Eigen::VectorXd ols = d.x.colPivHouseholderQr().solve(y);
  EXPECT_LT(quasi_score(ModelFamily::real_valued(), d, ols, y).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(QuasiScore, ZeroAtLogMeanForInterceptOnly) {
  const auto d = build_design({Intercept{}}, 6);
  Eigen::VectorXd y(6);
  y << 0.5, 2.0, 0.0, 7.25, 1.5, 3.0;
  const Eigen::VectorXd b = Eigen::VectorXd::Constant(1, std::log(y.mean()));
  EXPECT_NEAR(quasi_score(ModelFamily::non_negative(1), d, b, y)(0), 0.0, 1e-12);
  const Eigen::VectorXd y2 = y.array() + 0.1;
  const Eigen::VectorXd b2 = Eigen::VectorXd::Constant(1, std::log(y2.mean()));
  EXPECT_NEAR(quasi_score(ModelFamily::non_negative(2), d, b2, y2)(0), 0.0, 1e-12);
}

TEST(QuasiScore, RejectsInfeasibleBoundedBeta) {
  const auto d = build_design({Intercept{}}, 3);
  EXPECT_THROW(quasi_score(ModelFamily::bounded(), d, Eigen::VectorXd::Constant(1, -0.1),
                           Eigen::Vector3d(0.2, 0.3, 0.4)),
               DomainError);
}

TEST(QuasiScore, MatchesFiniteDifferences) {
  std::mt19937_64 gen(2);
  std::uniform_real_distribution<double> u(0, 1);
  const std::vector<ModelFamily> families = {ModelFamily::non_negative(1), ModelFamily::non_negative(1.5),
                                             ModelFamily::non_negative(2), ModelFamily::non_negative(3),
                                             ModelFamily::real_valued(), ModelFamily::bounded()};
  for (const auto& f : families) {
    double worst = 0.0;
    for (int rep = 0; rep < 100; ++rep) {
      const std::size_t n = 60;
      const auto d = build_design({Intercept{}, LinearTrend{}, Cosine{12}}, n);
      Eigen::VectorXd beta(3);
      ParameterSet p;
      ConditionalDistribution dist = ConditionalDistribution::Normal;
      if (f.kind() == FamilyKind::Bounded) {
        // x'beta > 1 keeps eta + alpha positive under the shifted latent.
        beta << 2.1 + u(gen), u(gen) - 0.5, u(gen) - 0.5;
        p = {beta, 0.05 + 0.5 * u(gen), 0.1 + u(gen), 0.1 + 0.8 * u(gen)};
        dist = ConditionalDistribution::Beta;
      } else if (f.kind() == FamilyKind::NonNegative) {
        beta << 2 * u(gen) - 1, u(gen) - 0.5, u(gen) - 0.5;
        const bool poisson = f.p() == 1.0;
        p = {beta, poisson ? 1.0 : 0.05 + u(gen), 0.1 + u(gen), 1.8 * u(gen) - 0.9};
        dist = poisson ? ConditionalDistribution::Poisson : ConditionalDistribution::Gamma;
      } else {
        beta << 4 * u(gen) - 2, 4 * u(gen) - 2, 4 * u(gen) - 2;
        p = {beta, 0.1 + 3 * u(gen), 0.1 + u(gen), 1.8 * u(gen) - 0.9};
      }
      const Eigen::VectorXd y = simulate_series(f, d, p, dist, 1000 + static_cast<std::uint64_t>(rep)).y;
      // Evaluate away from the data-generating point.
      Eigen::VectorXd at = beta;
      at(1) += 0.2 * (u(gen) - 0.5);
      at(2) += 0.2 * (u(gen) - 0.5);
      if (!detail::feasible(f, d, at)) at = beta;
      const Eigen::VectorXd analytic = quasi_score(f, d, at, y);
      const Eigen::VectorXd numeric = numeric_score(f, d, at, y);
      const double rel = (analytic - numeric).cwiseAbs().maxCoeff() / std::max(1.0, analytic.cwiseAbs().maxCoeff());
      worst = std::max(worst, rel);
    }
    EXPECT_LE(worst, 1e-6) << to_string(f.kind()) << " p=" << f.p();
  }
}

TEST(FitBeta, RealValuedEqualsLeastSquares) {
  std::mt19937_64 gen(3);
  std::normal_distribution<double> z;
  for (int rep = 0; rep < 20; ++rep) {
    const auto d = random_design(gen, 100, 5);
    Eigen::VectorXd y(100);
    for (auto& v : y) v = 3 * z(gen) + 1;
    const Eigen::VectorXd normal_eq = (d.x.transpose() * d.x).ldlt().solve(d.x.transpose() * y);
    const auto fit = fit_beta(ModelFamily::real_valued(), d, y);
    EXPECT_TRUE(fit.converged);
    EXPECT_LT((fit.beta_hat - normal_eq).cwiseAbs().maxCoeff(), 1e-10);

    const Eigen::VectorXd resid = y - d.x * normal_eq;
    const double s2 = resid.squaredNorm() / (100 - 5);
    const Eigen::VectorXd se = (s2 * (d.x.transpose() * d.x).inverse()).diagonal().cwiseSqrt();
    EXPECT_LT((fit.naive_se - se).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(FitBeta, InterceptOnlyMeanIsSampleMean) {
  const auto d = build_design({Intercept{}}, 7);
  Eigen::VectorXd y(7);
  y << 0.0, 3.0, 1.0, 0.5, 12.0, 2.0, 0.25;
  const auto poisson = fit_beta(ModelFamily::non_negative(1), d, y);
  EXPECT_NEAR(std::exp(poisson.beta_hat(0)), y.mean(), 1e-10 * y.mean());
  Eigen::VectorXd pos = y.array() + 0.5;
  const auto gamma = fit_beta(ModelFamily::non_negative(2), d, pos);
  EXPECT_NEAR(std::exp(gamma.beta_hat(0)), pos.mean(), 1e-10 * pos.mean());
  // p = 2 also copes with exact zeros through the kernel form.
  const auto gamma_zero = fit_beta(ModelFamily::non_negative(2), d, y);
  EXPECT_NEAR(std::exp(gamma_zero.beta_hat(0)), y.mean(), 1e-10 * y.mean());
}

TEST(FitBeta, PoissonFixedPoint) {
  const auto d = build_design({Intercept{}, LinearTrend{}, Sine{12}}, 300);
  const ParameterSet p{Eigen::Vector3d(1.0, 0.5, -0.3), 1.0, 0.4, 0.5};
  const auto y = simulate_series(ModelFamily::non_negative(1), d, p, ConditionalDistribution::Poisson, 5).y;
  const auto fit = fit_beta(ModelFamily::non_negative(1), d, y);
  const Eigen::VectorXd u = quasi_score(ModelFamily::non_negative(1), d, fit.beta_hat, y);
  const auto st = detail::score_terms(ModelFamily::non_negative(1), d, fit.beta_hat, y);
  const Eigen::VectorXd step = st.info.ldlt().solve(u);
  EXPECT_LT(step.cwiseAbs().maxCoeff() / std::max(1.0, fit.beta_hat.cwiseAbs().maxCoeff()), 1e-8);
}

TEST(FitBeta, BoundedStaysFeasible) {
  const auto d = build_design({Intercept{}, LinearTrend{}, QuadraticTrend{}}, 500);
  const ParameterSet p{Eigen::Vector3d(1, 0.3, 0.5), 0.1, 0.3, 0.8};
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto y = simulate_series(ModelFamily::bounded(), d, p, ConditionalDistribution::Beta, s).y;
    const auto fit = fit_beta(ModelFamily::bounded(), d, y);
    EXPECT_TRUE(fit.converged);
    EXPECT_GT((d.x * fit.beta_hat).minCoeff(), 0.0);
    EXPECT_LT(quasi_score(ModelFamily::bounded(), d, fit.beta_hat, y).cwiseAbs().maxCoeff(), 1e-5);
  }
}

TEST(FitBeta, BoundedHandlesBinaryResponses) {
  const auto d = build_design({Intercept{}, LinearTrend{}}, 400);
  const ParameterSet p{Eigen::Vector2d(1.2, 0.5), 1.0, 0.3, 0.7};
  const auto y = simulate_series(ModelFamily::binary(), d, p, ConditionalDistribution::Bernoulli, 9).y;
  const auto fit = fit_beta(ModelFamily::binary(), d, y);
  EXPECT_TRUE(fit.converged);
  EXPECT_GT((d.x * fit.beta_hat).minCoeff(), 0.0);
}

TEST(FitBeta, RankDeficientDesignRejected) {
  const auto d = build_design({Intercept{}, Cosine{12}, Cosine{12}}, 50);
  const Eigen::VectorXd y = Eigen::VectorXd::LinSpaced(50, 1, 2);
  EXPECT_THROW(fit_beta(ModelFamily::real_valued(), d, y), RankError);
  const auto small = build_design({Intercept{}, LinearTrend{}}, 2);
  EXPECT_THROW(fit_beta(ModelFamily::real_valued(), small, Eigen::Vector2d(1, 2)), RankError);
}

TEST(FitBeta, ColumnPermutationPermutesEstimates) {
  const std::vector<CovariateTerm> terms = {Intercept{}, Cosine{12}, Sine{12}};
  const std::vector<CovariateTerm> perm = {Sine{12}, Intercept{}, Cosine{12}};
  const auto d1 = build_design(terms, 400);
  const auto d2 = build_design(perm, 400);
  const ParameterSet p{Eigen::Vector3d(5, -0.2, 0.4), 0.1, 0.5, 0.6};
  const auto y = simulate_series(ModelFamily::non_negative(2), d1, p, ConditionalDistribution::Gamma, 3).y;
  const auto a = fit_beta(ModelFamily::non_negative(2), d1, y);
  const auto b = fit_beta(ModelFamily::non_negative(2), d2, y);
  EXPECT_NEAR(a.beta_hat(0), b.beta_hat(1), 1e-10);
  EXPECT_NEAR(a.beta_hat(1), b.beta_hat(2), 1e-10);
  EXPECT_NEAR(a.beta_hat(2), b.beta_hat(0), 1e-10);
}

TEST(FitBeta, NonConvergenceCarriesLastIterate) {
  const auto d = build_design({Intercept{}, Cosine{12}, Sine{12}}, 300);
  const ParameterSet p{Eigen::Vector3d(5, -0.2, 0.4), 0.1, 0.5, 0.6};
  const auto y = simulate_series(ModelFamily::non_negative(2), d, p, ConditionalDistribution::Gamma, 4).y;
  FitOptions opt;
  opt.max_iter = 1;
  try {
    fit_beta(ModelFamily::non_negative(2), d, y, opt);
    FAIL() << "expected ConvergenceError";
  } catch (const ConvergenceError& e) {
    EXPECT_EQ(e.code(), "no_convergence");
    EXPECT_EQ(e.last_iterate().size(), 3);
    EXPECT_TRUE(e.last_iterate().allFinite());
  }
}

TEST(FitBeta, RejectsBadInputs) {
  const auto d = build_design({Intercept{}}, 4);
  EXPECT_THROW(fit_beta(ModelFamily::non_negative(2), d, Eigen::Vector4d(1, -1, 2, 3)), DomainError);
  EXPECT_THROW(fit_beta(ModelFamily::bounded(), d, Eigen::Vector4d(0.1, 1.2, 0.3, 0.4)), DomainError);
  EXPECT_THROW(fit_beta(ModelFamily::real_valued(), d, Eigen::Vector3d(1, 2, 3)), DomainError);
  FitOptions opt;
  opt.init = Eigen::VectorXd::Constant(1, -1.0);
  EXPECT_THROW(fit_beta(ModelFamily::bounded(), d, Eigen::Vector4d(0.1, 0.2, 0.3, 0.4), opt), DomainError);
}

TEST(FitBeta, QValueAndPearsonDispersion) {
  const auto d = build_design({Intercept{}}, 5);
  const Eigen::VectorXd y = (Eigen::VectorXd(5) << 1, 2, 3, 4, 5).finished();
  const auto fit = fit_beta(ModelFamily::real_valued(), d, y);
  EXPECT_NEAR(fit.beta_hat(0), 3.0, 1e-12);
  EXPECT_NEAR(fit.pearson_phi, 2.5, 1e-12);
  EXPECT_NEAR(fit.q_value, -0.5 * 10.0, 1e-12);
  EXPECT_NEAR(fit.naive_se(0), std::sqrt(2.5 / 5), 1e-12);
}
