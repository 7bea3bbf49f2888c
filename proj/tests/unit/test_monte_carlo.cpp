#include <gtest/gtest.h>

#include <cstring>
#include <numeric>
#include <random>

#include "sts/monte_carlo.hpp"

using namespace sts;

namespace {

StudyConfig bounded_config(std::size_t n, std::size_t replicas) {
  StudyConfig c;
  c.family = ModelFamily::bounded();
  c.terms = {Intercept{}, LinearTrend{}, QuadraticTrend{}};
  c.true_params = {Eigen::Vector3d(1, 0.3, 0.5), 0.1, 0.3, 0.8};
  c.conditional = ConditionalDistribution::Beta;
  c.n = n;
  c.replicas = replicas;
  c.master_seed = 99;
  return c;
}

// Short, weakly dependent real series: the MM estimates are often invalid.
StudyConfig redraw_prone_config(std::size_t replicas) {
  StudyConfig c;
  c.family = ModelFamily::real_valued();
  c.terms = {Intercept{}};
  c.true_params = {Eigen::VectorXd::Zero(1), 1.0, 0.2, 0.1};
  c.conditional = ConditionalDistribution::Normal;
  c.n = 20;
  c.replicas = replicas;
  c.master_seed = 5;
  return c;
}

bool bit_identical(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())) == 0;
}

}  // namespace

TEST(RunStudy, IndependentOfThreadCount) {
  const auto c = bounded_config(300, 40);
  const auto one = run_study(c, 1);
  const auto three = run_study(c, 3);
  EXPECT_TRUE(bit_identical(one.estimates, three.estimates));
  EXPECT_EQ(one.redraws, three.redraws);
  EXPECT_TRUE(bit_identical(one.mean, three.mean));
  ASSERT_TRUE(one.se && three.se);
  EXPECT_TRUE(bit_identical(*one.se, *three.se));

  const auto again = run_study(c, 2);
  EXPECT_TRUE(bit_identical(one.estimates, again.estimates));
}

TEST(RunStudy, SeedChangesResults) {
  auto c = bounded_config(300, 5);
  const auto a = run_study(c);
  c.master_seed += 1;
  const auto b = run_study(c);
  EXPECT_FALSE(bit_identical(a.estimates, b.estimates));
}

TEST(RunStudy, RedrawAccounting) {
  const auto c = redraw_prone_config(100);
  const auto r = run_study(c, 2);
  const std::size_t redraws = std::accumulate(r.redraws.begin(), r.redraws.end(), std::size_t{0});
  EXPECT_GT(redraws, 0u);
  EXPECT_EQ(r.total_simulations, c.replicas + redraws);

  // Replay every replica by hand and count attempts independently.
  const auto d = build_design(c.terms, c.n);
  std::size_t attempts = 0;
  for (std::size_t rep = 0; rep < c.replicas; ++rep) {
    for (std::uint32_t k = 0;; ++k) {
      ++attempts;
      const auto y = simulate_series(c.family, d, c.true_params, c.conditional, c.master_seed, rep, k).y;
      const auto est = estimate_all(c.family, d, y);
      if (est.nuisance.valid) {
        EXPECT_EQ(r.redraws[rep], k);
        EXPECT_EQ(r.estimates(static_cast<Eigen::Index>(rep), 3), est.nuisance.rho_hat);
        break;
      }
    }
  }
  EXPECT_EQ(attempts, r.total_simulations);
}

TEST(RunStudy, NoInvalidRowsRemain) {
  const auto r = run_study(redraw_prone_config(100));
  EXPECT_EQ(r.replicas(), 100u);
  for (Eigen::Index i = 0; i < r.estimates.rows(); ++i) {
    EXPECT_GT(r.estimates(i, 1), 0.0);
    EXPECT_GT(r.estimates(i, 2), 0.0);
    EXPECT_LT(std::abs(r.estimates(i, 3)), 1.0);
  }
}

TEST(RunStudy, RedrawLimitRaisesReplicaError) {
  auto c = redraw_prone_config(100);
  c.max_redraws = 0;
  try {
    run_study(c);
    FAIL() << "expected ReplicaError";
  } catch (const ReplicaError& e) {
    EXPECT_EQ(e.code(), "replica_failed");
    EXPECT_NE(e.context().find("replica=" + std::to_string(e.replica())), std::string::npos);
    EXPECT_NE(e.context().find("last_reason="), std::string::npos);
  }
}

TEST(RunStudy, SingleReplicaHasNoStandardErrors) {
  const auto r = run_study(bounded_config(200, 1));
  EXPECT_FALSE(r.se.has_value());
  EXPECT_FALSE(r.standardized.has_value());
  EXPECT_TRUE(bit_identical(r.mean, r.estimates.row(0).transpose()));
}

TEST(RunStudy, RejectsBadConfigs) {
  auto c = bounded_config(200, 0);
  EXPECT_THROW(run_study(c), ConfigError);
  c.replicas = 2;
  c.true_params.rho = 1.0;
  EXPECT_THROW(run_study(c), DomainError);
  c = bounded_config(200, 2);
  c.conditional = ConditionalDistribution::Gamma;
  EXPECT_THROW(run_study(c), DomainError);
  c = bounded_config(200, 2);
  c.terms.pop_back();
  EXPECT_THROW(run_study(c), DomainError);
}

TEST(RunStudy, NamesAndTruthLayout) {
  const auto r = run_study(bounded_config(200, 3));
  EXPECT_EQ(r.names, (std::vector<std::string>{"beta0", "beta1", "beta2", "phi", "sigma2", "rho"}));
  EXPECT_EQ(r.truth(3), 0.1);
  EXPECT_EQ(r.truth(5), 0.8);
  EXPECT_EQ(r.estimates.cols(), 6);
}

TEST(RunStudy, RealValuedBetaMeansAtLargeN) {
  StudyConfig c;
  c.family = ModelFamily::real_valued();
  c.terms = {Intercept{}, LinearTrend{}, Cosine{6}};
  c.true_params = {Eigen::Vector3d(0.1, 0.5, 0.7), 3, 1, 0.5};
  c.conditional = ConditionalDistribution::Normal;
  c.n = 2000;
  c.replicas = 200;
  c.master_seed = 2024;
  const auto r = run_study(c);
  EXPECT_NEAR(r.mean(0), 0.096, 0.05);
  EXPECT_NEAR(r.mean(1), 0.502, 0.05);
  EXPECT_NEAR(r.mean(2), 0.699, 0.05);
}

TEST(McStandardErrors, LeastSquaresLimit) {
  // rho = 0 and a vanishing latent variance leave an ordinary linear model.
  const auto d = build_design({Intercept{}, LinearTrend{}}, 100);
  const ParameterSet p{Eigen::Vector2d(1.0, -2.0), 2.0, 1e-8, 0.0};
  const auto r = mc_standard_errors(ModelFamily::real_valued(), d, p, ConditionalDistribution::Normal, 4000, 31, 1);
  ASSERT_TRUE(r.se.has_value());
  const Eigen::VectorXd ls = (2.0 * (d.x.transpose() * d.x).inverse()).diagonal().cwiseSqrt();
  for (int j = 0; j < 2; ++j) {
    EXPECT_NEAR((*r.se)(j) / ls(j), 1.0, 0.05) << j;
  }
}

TEST(StandardizedDiagnostics, NormalInputFollowsDiagonal) {
  std::mt19937_64 gen(17);
  std::normal_distribution<double> z;
  Eigen::MatrixXd x(10000, 1);
  for (Eigen::Index i = 0; i < x.rows(); ++i) x(i, 0) = z(gen);
  const auto diag = standardized_diagnostics(x, {"z"});
  ASSERT_EQ(diag.size(), 1u);
  const auto& d = diag[0];
  EXPECT_FALSE(d.degenerate);
  ASSERT_EQ(d.qq.size(), 10000u);
  for (std::size_t i = 500; i < 9500; ++i) {
    EXPECT_NEAR(d.qq[i].second, d.qq[i].first, 0.05) << i;
  }
  EXPECT_EQ(d.bin_edges.size(), 21u);
  EXPECT_EQ(std::accumulate(d.bin_counts.begin(), d.bin_counts.end(), std::size_t{0}), 10000u);
  EXPECT_LT(d.ks_statistic, 0.02);
}

TEST(StandardizedDiagnostics, ConstantColumnIsDegenerate) {
  Eigen::MatrixXd x = Eigen::MatrixXd::Constant(50, 2, 3.0);
  x.col(1) = Eigen::VectorXd::LinSpaced(50, 0, 1);
  const auto diag = standardized_diagnostics(x, {"c", "lin"});
  EXPECT_TRUE(diag[0].degenerate);
  EXPECT_TRUE(diag[0].qq.empty());
  EXPECT_FALSE(diag[1].degenerate);
}

TEST(StandardizedDiagnostics, NeedsThirtyReplicas) {
  EXPECT_THROW(standardized_diagnostics(Eigen::MatrixXd::Random(29, 1), {"a"}), DomainError);
  EXPECT_NO_THROW(standardized_diagnostics(Eigen::MatrixXd::Random(30, 1), {"a"}));
  EXPECT_THROW(standardized_diagnostics(Eigen::MatrixXd::Random(30, 2), {"a"}), DomainError);
}

TEST(StandardizedDiagnostics, KsStatisticKnownValue) {
  // One point at 0: max(1 - 0.5, 0.5 - 0) = 0.5.
  EXPECT_DOUBLE_EQ(ks_standard_normal({0.0}), 0.5);
}

TEST(StandardizedDiagnostics, NonNegativeInterceptLooksNormal) {
  StudyConfig c;
  c.family = ModelFamily::non_negative(2);
  c.terms = {Intercept{}, Cosine{12}, Sine{12}};
  c.true_params = {Eigen::Vector3d(5, -0.2, 0.4), 0.1, 0.5, 0.6};
  c.conditional = ConditionalDistribution::Gamma;
  c.n = 1000;
  c.replicas = 200;
  c.master_seed = 2024;
  const auto r = run_study(c);
  const auto diag = standardized_diagnostics(r.estimates, r.names);
  EXPECT_EQ(diag[0].name, "beta0");
  EXPECT_LT(diag[0].ks_statistic, 0.1);
}
