#include "gmm_audit/inference.hpp"
#include "gmm_audit/monte_carlo.hpp"
#include "gmm_audit/parallel.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

namespace ga = gmm_audit;

namespace {

ga::Dataset column(std::vector<double> xs) {
  ga::RowMatrix m(static_cast<ga::Index>(xs.size()), 1);
  for (std::size_t i = 0; i < xs.size(); ++i) m(static_cast<ga::Index>(i), 0) = xs[i];
  return ga::Dataset(std::move(m), {"x"});
}

ga::MomentModel mean_square() { return ga::builtin_model("mean_square_match", {{"x", {"x"}}}, {"x"}); }

ga::FitStrategy identity_weight(ga::Index k) { return ga::fixed_weight_strategy(ga::WeightMatrix::identity(k)); }

/// Fixed 50-row just-identified IV sample built from deterministic trigonometric sequences.
ga::Dataset fixed_iv_rows() {
  ga::RowMatrix m(50, 3);
  for (ga::Index i = 0; i < 50; ++i) {
    const double t = static_cast<double>(i);
    const double z = std::sin(1.3 * t + 0.2);
    const double w = 0.8 * z + 0.3 * std::cos(2.1 * t);
    m(i, 0) = 1.5 * w + 0.5 * std::sin(0.7 * t + 1.0) * (1.0 + std::abs(z));
    m(i, 1) = w;
    m(i, 2) = z;
  }
  return ga::Dataset(std::move(m), {"y", "w", "z"});
}

/// Fixed 50-row heteroskedastic regression sample with an intercept column.
ga::Dataset fixed_ols_rows() {
  ga::RowMatrix m(50, 3);
  for (ga::Index i = 0; i < 50; ++i) {
    const double t = static_cast<double>(i);
    const double x = std::cos(0.9 * t) + 1.0;
    m(i, 0) = 2.0 * x + (0.2 + x) * std::sin(1.7 * t + 0.3);
    m(i, 1) = 1.0;
    m(i, 2) = x;
  }
  return ga::Dataset(std::move(m), {"y", "one", "x"});
}

void expect_symmetric_psd(const ga::Matrix& c) {
  EXPECT_LE((c - c.transpose()).cwiseAbs().maxCoeff(), 1e-12 * std::max(1.0, c.cwiseAbs().maxCoeff()));
  EXPECT_GE(ga::linalg::eigen_range(ga::linalg::symmetrize(c)).min, -1e-10);
}

ga::Matrix random_spd(std::mt19937_64& rng, ga::Index k) {
  std::normal_distribution<double> nd;
  ga::Matrix a(k, k);
  for (ga::Index i = 0; i < k * k; ++i) a(i) = nd(rng);
  return a * a.transpose() + 0.1 * ga::Matrix::Identity(k, k);
}

}  // namespace

TEST(ConventionalCov, CollapsesForIdentityPieces) {
  ga::GmmFit f;
  f.psi_hat = ga::Vector::Zero(2);
  f.weight = ga::WeightMatrix::identity(2);
  f.stats.gamma_hat = -ga::Matrix::Identity(2, 2);
  f.stats.sigma_hat = ga::Matrix::Identity(2, 2);
  f.stats.g_bar = ga::Vector::Zero(2);
  f.stats.n = 100;
  f.h = ga::Vector::Unit(2, 0);
  const auto c = ga::conventional_cov(f);
  EXPECT_LE((c.cov_psi - ga::Matrix::Identity(2, 2) / 100.0).norm(), 1e-15);
  EXPECT_NEAR(c.se_theta, 0.1, 1e-15);
}

TEST(ConventionalCov, EfficientWeightSimplifies) {
  const auto data = ga::mc::MeanSquareDgp{}.simulate(300, 12);
  const auto f = ga::fit(mean_square(), data, ga::two_step_strategy());
  // evaluate the sandwich with W = Sigma_hat^-1 at psi_hat
  ga::GmmFit g = f;
  g.weight = ga::WeightMatrix::from(ga::linalg::inverse_spd(f.stats.sigma_hat, "Sigma"));
  const ga::Matrix& gamma = g.stats.gamma_hat;
  const ga::Matrix expected =
      ga::linalg::inverse_spd(gamma.transpose() * g.weight.values() * gamma, "bread") / 300.0;
  EXPECT_LE((ga::conventional_cov(g).cov_psi - expected).norm(), 1e-10 * expected.norm());
}

TEST(ConventionalCov, MatchesDirectIvSandwich) {
  const auto data = fixed_iv_rows();
  const auto model = ga::builtin_model("linear_iv", {{"y", {"y"}}, {"w", {"w"}}, {"z", {"z"}}}, data.column_names());
  const auto f = ga::fit(model, data, identity_weight(1));
  EXPECT_NEAR(f.theta_hat, 1.5181389777223104, 1e-10);
  const auto c = ga::conventional_cov(f);
  EXPECT_NEAR(c.cov_psi(0, 0), 0.02830639110747441, 1e-10);
  expect_symmetric_psd(c.cov_psi);
}

TEST(RobustCov, MatchesHc0SandwichForRegressionMoments) {
  const auto data = fixed_ols_rows();
  const auto model =
      ga::builtin_model("linear_iv", {{"y", {"y"}}, {"w", {"one", "x"}}, {"z", {"one", "x"}}}, data.column_names());
  const auto f = ga::fit(model, data, identity_weight(2));
  EXPECT_NEAR(f.psi_hat(0), 0.06369475572006808, 1e-10);
  EXPECT_NEAR(f.psi_hat(1), 1.9931848262135248, 1e-10);
  ga::Matrix hc0(2, 2);
  hc0 << 0.01468913702882608, -0.01849346154998282, -0.01849346154998282, 0.04109611124047938;
  EXPECT_LE((ga::robust_cov(f, model, data).cov_psi - hc0).cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_LE((ga::conventional_cov(f).cov_psi - hc0).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(RobustCov, EqualsConventionalWhenJustIdentified) {
  std::mt19937_64 rng(31);
  std::normal_distribution<double> nd;
  for (int t = 0; t < 20; ++t) {
    ga::RowMatrix m(150, 5);
    for (ga::Index i = 0; i < 150; ++i) {
      const double z1 = nd(rng), z2 = nd(rng);
      const double w1 = z1 + 0.3 * nd(rng), w2 = 0.5 * z1 + z2 + 0.3 * nd(rng);
      m.row(i) << w1 - w2 + (1.0 + std::abs(z1)) * nd(rng), w1, w2, z1, z2;
    }
    const ga::Dataset data(m, {"y", "w1", "w2", "z1", "z2"});
    const auto model =
        ga::builtin_model("linear_iv", {{"y", {"y"}}, {"w", {"w1", "w2"}}, {"z", {"z1", "z2"}}}, data.column_names());
    const auto f = ga::fit(model, data, ga::fixed_weight_strategy(ga::WeightMatrix::from(random_spd(rng, 2))));
    const auto conv = ga::conventional_cov(f), rob = ga::robust_cov(f, model, data);
    EXPECT_LE((conv.cov_psi - rob.cov_psi).norm(), 1e-6 * conv.cov_psi.norm());
    EXPECT_NEAR(conv.se_theta, rob.se_theta, 1e-6 * conv.se_theta);
  }
}

TEST(RobustCov, StandardErrorsIgnoreWeightScale) {
  std::mt19937_64 rng(32);
  const auto data = ga::mc::MeanSquareDgp{}.simulate(400, 3);
  for (int t = 0; t < 5; ++t) {
    const ga::Matrix w = random_spd(rng, 2);
    const auto a = ga::fit(mean_square(), data, ga::fixed_weight_strategy(ga::WeightMatrix::from(w)));
    for (double c : {0.01, 25.0}) {
      const auto b = ga::fit(mean_square(), data, ga::fixed_weight_strategy(ga::WeightMatrix::from(c * w)));
      EXPECT_NEAR(ga::conventional_cov(a).se_theta, ga::conventional_cov(b).se_theta, 1e-8);
      EXPECT_NEAR(ga::robust_cov(a, mean_square(), data).se_theta, ga::robust_cov(b, mean_square(), data).se_theta,
                  1e-8);
    }
  }
}

TEST(RobustCov, SymmetricPsdAndConsistentWithDeltaMethod) {
  const auto data = ga::mc::MeanSquareDgp{}.simulate(500, 4);
  const auto f = ga::fit(mean_square(), data, identity_weight(2));
  for (const auto& c : {ga::conventional_cov(f), ga::robust_cov(f, mean_square(), data)}) {
    expect_symmetric_psd(c.cov_psi);
    EXPECT_GE(c.se_theta, 0.0);
    EXPECT_NEAR(c.se_theta * c.se_theta, f.h.dot(c.cov_psi * f.h), 1e-14);
  }
}

TEST(RobustCov, TracksPlainBootstrapUnderMisspecification) {
  const auto data = ga::mc::MeanSquareDgp{}.simulate(500, 20240911);
  const auto strategy = identity_weight(2);
  const auto f = ga::fit(mean_square(), data, strategy);
  ga::BootstrapSettings bs;
  bs.replications = 2000;
  bs.seed = 5;
  const auto boot = ga::bootstrap(mean_square(), data, strategy, f, bs);
  const double robust = ga::robust_cov(f, mean_square(), data).se_theta;
  EXPECT_NEAR(robust, boot.se, 0.10 * boot.se);
}

TEST(JStatistic, ClosedFormForLinearMoments) {
  ga::MomentModel m;
  m.name = "two_means";
  m.k = 2;
  m.p = 1;
  m.g = [](ga::RowView x, const ga::Vector& psi, std::span<double> out) {
    out[0] = x[0] - psi(0);
    out[1] = x[1] - psi(0);
  };
  ga::RowMatrix rows(100, 2);
  rows.col(0).setConstant(1.0);
  rows.col(1).setConstant(2.0);
  ga::Vector psi;
  const double j = ga::j_statistic_fixed(m, ga::Dataset(rows, {"a", "b"}), ga::Matrix::Identity(2, 2), {}, &psi);
  EXPECT_NEAR(j, 50.0, 1e-8);
  EXPECT_NEAR(psi(0), 1.5, 1e-10);
}

TEST(JStatistic, ThreePointOracle) {
  const auto j = ga::j_statistic(mean_square(), column({1, 2, 3}));
  EXPECT_NEAR(j.j, 21.0 / 8.0, 1e-8);
  EXPECT_EQ(j.df, 1);
  EXPECT_NEAR(ga::chi_square_tail(j.j, j.df), std::erfc(std::sqrt(j.j / 2.0)), 1e-12);
}

TEST(JStatistic, ZeroWhenJustIdentified) {
  const auto data = fixed_iv_rows();
  const auto model = ga::builtin_model("linear_iv", {{"y", {"y"}}, {"w", {"w"}}, {"z", {"z"}}}, data.column_names());
  const auto j = ga::j_statistic(model, data);
  EXPECT_NEAR(j.j, 0.0, 1e-8);
  EXPECT_EQ(j.df, 0);
  EXPECT_EQ(ga::chi_square_tail(j.j, j.df), 1.0);
}

TEST(JStatistic, NonNegativeOnRandomSamples) {
  const ga::mc::LinearIvDgp dgp{ga::Vector::Constant(3, 0.7), 1.0, 0.5, ga::Vector::Constant(3, 0.0)};
  for (std::uint64_t s = 0; s < 10; ++s) EXPECT_GE(ga::j_statistic(dgp.model(), dgp.simulate(200, s)).j, 0.0);
}

TEST(ChiSquareTail, KnownQuantiles) {
  EXPECT_NEAR(ga::chi_square_tail(7.814727903251178, 3), 0.05, 1e-12);
  EXPECT_NEAR(ga::chi_square_tail(3.841458820694124, 1), 0.05, 1e-12);
}

TEST(Bootstrap, IdenticalRowsGiveADegenerateInterval) {
  const auto data = column(std::vector<double>(40, 1.5));
  ga::BootstrapSettings bs;
  bs.replications = 200;
  const auto r = ga::bootstrap(mean_square(), data, identity_weight(2), bs);
  EXPECT_EQ(r.draws.size(), 200U);
  EXPECT_NEAR(r.se, 0.0, 1e-12);
  EXPECT_NEAR(r.ci_lo, 1.5, 1e-10);
  EXPECT_NEAR(r.ci_hi, 1.5, 1e-10);
  EXPECT_TRUE(r.ci_valid);
}

TEST(Bootstrap, DeterministicForSeedAndThreadCount) {
  const auto data = ga::mc::MeanSquareDgp{}.simulate(200, 6);
  ga::BootstrapSettings bs;
  bs.replications = 150;
  bs.seed = 77;
  ga::set_threads(1);
  const auto a = ga::bootstrap(mean_square(), data, identity_weight(2), bs);
  ga::set_threads(3);
  const auto b = ga::bootstrap(mean_square(), data, identity_weight(2), bs);
  ga::set_threads(0);
  EXPECT_EQ(a.draws, b.draws);
  EXPECT_EQ(a.ci_lo, b.ci_lo);
  bs.seed = 78;
  EXPECT_NE(ga::bootstrap(mean_square(), data, identity_weight(2), bs).draws, a.draws);
}

TEST(Bootstrap, SmallReplicationCountIsFlagged) {
  ga::BootstrapSettings bs;
  bs.replications = 20;
  const auto r = ga::bootstrap(mean_square(), ga::mc::MeanSquareDgp{}.simulate(100, 1), identity_weight(2), bs);
  EXPECT_FALSE(r.ci_valid);
  EXPECT_LE(r.ci_lo, r.ci_hi);
}

TEST(Bootstrap, TooManyFailedReplicatesIsAnError) {
  // one poisoned row out of ten appears in most resamples
  ga::MomentModel m = mean_square();
  m.g = [](ga::RowView x, const ga::Vector& psi, std::span<double> out) {
    out[0] = x[0] - psi(0);
    out[1] = x[0] > 50.0 ? std::numeric_limits<double>::quiet_NaN() : x[0] * x[0] - psi(0) * psi(0);
  };
  const auto clean = column({1, 2, 3, 1, 2, 3, 1, 2, 3, 2});
  const auto poisoned = column({1, 2, 3, 1, 2, 3, 1, 2, 3, 99});
  const auto strategy = identity_weight(2);
  const auto f = ga::fit(m, clean, strategy);
  ga::BootstrapSettings bs;
  bs.replications = 100;
  try {
    ga::bootstrap(m, poisoned, strategy, f, bs);
    FAIL() << "expected a bootstrap-instability error";
  } catch (const ga::BootstrapInstabilityError& e) {
    EXPECT_GT(e.failures().size(), 5U);
  }
}

TEST(Bootstrap, RecenteredMomentsVanishAtTheOriginalEstimate) {
  const auto data = ga::mc::MeanSquareDgp{}.simulate(300, 8);
  const auto f = ga::fit(mean_square(), data, identity_weight(2));
  EXPECT_GT(f.stats.g_bar.norm(), 1e-3);
  const auto rec = ga::recentered_model(mean_square(), data, f.psi_hat);
  EXPECT_LE(ga::mean_moments(rec, data, f.psi_hat).norm(), 1e-14);
}

TEST(Bootstrap, PlainSpreadExceedsRecenteredUnderMisspecification) {
  const auto data = ga::mc::MeanSquareDgp{}.simulate(500, 20240912);
  const auto strategy = identity_weight(2);
  const auto f = ga::fit(mean_square(), data, strategy);
  ga::BootstrapSettings bs;
  bs.replications = 2000;
  bs.seed = 9;
  const auto plain = ga::bootstrap(mean_square(), data, strategy, f, bs);
  bs.scheme = ga::BootstrapScheme::recentered;
  const auto rec = ga::bootstrap(mean_square(), data, strategy, f, bs);
  EXPECT_GT(plain.se, rec.se);
}

TEST(Bootstrap, PlainSeTracksConventionalUnderCorrectSpecification) {
  const ga::mc::LinearIvDgp dgp{ga::Vector::Constant(2, 0.8), 1.0, 0.5, ga::Vector::Constant(2, 0.0)};
  const auto data = dgp.simulate(500, 21);
  const auto strategy = identity_weight(2);
  const auto f = ga::fit(dgp.model(), data, strategy);
  ga::BootstrapSettings bs;
  bs.replications = 4000;
  bs.seed = 10;
  const auto boot = ga::bootstrap(dgp.model(), data, strategy, f, bs);
  const double conv = ga::conventional_cov(f).se_theta;
  EXPECT_NEAR(boot.se, conv, 0.15 * conv);
}

TEST(Bootstrap, PlainPercentileCoverageUnderCorrectSpecification) {
  const ga::mc::LinearIvDgp dgp{ga::Vector::Constant(2, 0.8), 1.0, 0.5, ga::Vector::Constant(2, 0.0)};
  const auto cov = ga::mc::bootstrap_coverage(dgp, ga::WeightMatrix::identity(2), 1.0, 300, 500, 199, 20240913);
  EXPECT_EQ(cov.failures, 0U);
  EXPECT_NEAR(cov.plain(), 0.95, 0.03);
}
