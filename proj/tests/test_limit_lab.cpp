#include "gmm_audit/limit_lab.hpp"
#include "gmm_audit/monte_carlo.hpp"
#include "gmm_audit/verification.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

namespace ga = gmm_audit;
namespace ll = gmm_audit::limit_lab;

namespace {

/// Gamma = (1, 1)', Sigma = I, h = 1.
ll::LimitProblem two_equal_moments() {
  ll::LimitProblem pr;
  pr.gamma = ga::Matrix::Ones(2, 1);
  pr.sigma = ga::Matrix::Identity(2, 2);
  pr.h = ga::Vector::Ones(1);
  pr.eta = ga::Vector::Zero(2);
  pr.phi = ga::Vector::Zero(1);
  return pr;
}

ga::Vector vec(std::initializer_list<double> xs) {
  ga::Vector v(static_cast<ga::Index>(xs.size()));
  ga::Index i = 0;
  for (double x : xs) v(i++) = x;
  return v;
}

/// W G (G'WG)^-1 h
ga::Vector direction_of(const ga::Matrix& gamma, const ga::Vector& h, const ga::Matrix& w) {
  const ga::Matrix gw = gamma.transpose() * w;
  return gw.transpose() * ga::Vector((gw * gamma).ldlt().solve(h));
}

}  // namespace

TEST(CanonicalForm, TwoEqualMoments) {
  const auto pr = two_equal_moments();
  const auto c = ll::canonical_form(pr);
  EXPECT_NEAR(c.lambda(0, 0), -0.5, 1e-15);
  EXPECT_NEAR(c.lambda(0, 1), -0.5, 1e-15);
  EXPECT_NEAR(c.sigma_star_phi(0, 0), 0.5, 1e-15);
  ASSERT_EQ(c.m.rows(), 1);
  EXPECT_LE((c.m * pr.gamma).norm(), 1e-15);
  EXPECT_LE((c.q * c.q_inv - ga::Matrix::Identity(2, 2)).norm(), 1e-14);
  // the Z block is determined up to the scale of its row
  const ga::Vector y = vec({1.0, -1.0});
  const ga::Vector z = c.m * y;
  EXPECT_NEAR(z.dot(c.sigma_star_z.ldlt().solve(z)), 2.0, 1e-14);
}

TEST(CanonicalForm, JustIdentifiedHasAnEmptyZBlock) {
  ll::LimitProblem pr;
  pr.gamma = -ga::Matrix::Identity(3, 3);
  pr.sigma = ga::Matrix::Identity(3, 3);
  pr.h = vec({1, 0, 0});
  pr.eta = ga::Vector::Zero(3);
  pr.phi = ga::Vector::Zero(3);
  const auto c = ll::canonical_form(pr);
  EXPECT_EQ(c.m.rows(), 0);
  EXPECT_EQ(c.sigma_star_z.rows(), 0);
  EXPECT_LE((c.lambda - ga::Matrix::Identity(3, 3)).norm(), 1e-15);
  const ga::Vector y = vec({0.3, -2.0, 1.1});
  EXPECT_NEAR(ll::j_analog(pr, y).j, 0.0, 1e-15);
  const auto est = ll::phi_hat(pr, ga::WeightMatrix::identity(3), y);
  EXPECT_LE((est.phi - y).norm(), 1e-15);
}

TEST(CanonicalForm, RandomInstancesSatisfyTheIdentities) {
  std::mt19937_64 rng(5);
  for (int t = 0; t < 200; ++t) {
    const auto pr = ll::random_instance(rng, 5, 2);
    const auto c = ll::canonical_form(pr);
    const ga::Index k = pr.k(), p = pr.p();
    const ga::Matrix qsq = c.q * pr.sigma * c.q.transpose();
    EXPECT_LE((c.q * c.q_inv - ga::Matrix::Identity(k, k)).norm(), 1e-10);
    EXPECT_LE((c.m * pr.gamma).norm(), 1e-10);
    EXPECT_LE((c.lambda * pr.sigma * c.m.transpose()).norm(), 1e-10);
    EXPECT_LE(qsq.topRightCorner(p, k - p).norm(), 1e-10);
    EXPECT_LE((qsq.topLeftCorner(p, p) - c.sigma_star_phi).norm(), 1e-10);
    EXPECT_LE((qsq.bottomRightCorner(k - p, k - p) - c.sigma_star_z).norm(), 1e-10);
  }
}

TEST(Draw, DeterministicPerSeed) {
  std::mt19937_64 rng(6);
  const auto pr = ll::random_instance(rng);
  EXPECT_EQ(ll::draw(pr, 12), ll::draw(pr, 12));
  EXPECT_NE(ll::draw(pr, 12), ll::draw(pr, 13));
}

TEST(Draw, NegligibleNoiseGivesTheMean) {
  auto pr = two_equal_moments();
  pr.sigma *= 1e-12;
  pr.phi = vec({0.7});
  pr.eta = vec({0.2, -0.4});
  const ga::Vector mean = -pr.gamma * pr.phi + pr.eta;
  EXPECT_LE((ll::draw(pr, 1) - mean).cwiseAbs().maxCoeff(), 1e-5);
}

TEST(Draw, SampleMeanWithinCltBound) {
  std::mt19937_64 rng(7);
  const auto pr = ll::random_instance(rng, 4, 2);
  const ga::Vector mean = -pr.gamma * pr.phi + pr.eta;
  ga::Vector sum = ga::Vector::Zero(pr.k());
  const int draws = 100000;
  for (int i = 0; i < draws; ++i) sum += ll::draw(pr, static_cast<std::uint64_t>(i));
  const double bound = 4.0 * std::sqrt(pr.sigma.diagonal().maxCoeff() / draws);
  EXPECT_LE((sum / draws - mean).cwiseAbs().maxCoeff(), bound);
}

TEST(PhiHat, TwoEqualMomentsWithIdentityWeight) {
  const auto est = ll::phi_hat(two_equal_moments(), ga::WeightMatrix::identity(2), vec({1.0, -1.0}));
  EXPECT_NEAR(est.theta, 0.0, 1e-15);
  EXPECT_NEAR(est.var_theta, 0.5, 1e-15);
}

TEST(PhiHat, InvariantToWeightScale) {
  std::mt19937_64 rng(8);
  const auto pr = ll::random_instance(rng);
  const ga::Vector y = ll::draw(pr, 3);
  const ga::Matrix s_inv = pr.sigma.inverse();
  const auto a = ll::phi_hat(pr.gamma, pr.sigma, pr.h, ga::linalg::symmetrize(s_inv), y);
  const auto b = ll::phi_hat(pr.gamma, pr.sigma, pr.h, ga::linalg::symmetrize(7.0 * s_inv), y);
  EXPECT_NEAR(a.theta, b.theta, 1e-12 * std::max(1.0, std::abs(a.theta)));
  EXPECT_NEAR(a.var_theta, b.var_theta, 1e-12 * a.var_theta);
}

TEST(JAnalog, TwoEqualMoments) {
  const auto j = ll::j_analog(two_equal_moments(), vec({1.0, -1.0}));
  EXPECT_NEAR(j.j, 2.0, 1e-14);
  EXPECT_NEAR(j.via_canonical, 2.0, 1e-14);
}

TEST(JAnalog, ZeroInTheRangeOfGamma) {
  std::mt19937_64 rng(9);
  const auto pr = ll::random_instance(rng);
  const ga::Vector y = -pr.gamma * ga::Vector::Constant(pr.p(), 0.8);
  EXPECT_NEAR(ll::j_analog(pr, y).j, 0.0, 1e-12);
}

TEST(WeightForDirection, ConstructedExampleIsPositiveDefinite) {
  const ga::Matrix gamma = vec({1.0, 0.0});
  const auto w = ll::weight_for_direction(gamma, vec({1.0}), vec({1.0, 1.0}));
  ga::Matrix expected(2, 2);
  expected << 1.0, 1.0, 1.0, 2.0;
  EXPECT_LE((w.values() - expected).norm(), 1e-14);
  EXPECT_NEAR(w.eig_min(), (3.0 - std::sqrt(5.0)) / 2.0, 1e-14);
  EXPECT_NEAR(w.eig_max(), (3.0 + std::sqrt(5.0)) / 2.0, 1e-14);
  EXPECT_LE((direction_of(gamma, vec({1.0}), w.values()) - vec({1.0, 1.0})).norm(), 1e-14);
}

TEST(WeightForDirection, DirectionInRangeGivesTheIdentity) {
  const ga::Matrix gamma = vec({1.0, 0.0});
  const auto w = ll::weight_for_direction(gamma, vec({1.0}), vec({1.0, 0.0}));
  EXPECT_LE((w.values() - ga::Matrix::Identity(2, 2)).norm(), 1e-14);
}

TEST(WeightForDirection, InvalidDirectionIsRejected) {
  const ga::Matrix gamma = vec({1.0, 0.0});
  try {
    ll::weight_for_direction(gamma, vec({1.0}), vec({2.0, 1.0}));
    FAIL() << "expected a direction error";
  } catch (const ga::DirectionError& e) {
    EXPECT_NEAR(e.residual(), 1.0, 1e-15);
  }
}

TEST(WeightForDirection, ReproducesRandomDirections) {
  std::mt19937_64 rng(10);
  std::normal_distribution<double> nd;
  for (int t = 0; t < 200; ++t) {
    ga::Matrix gamma(4, 2);
    for (ga::Index i = 0; i < 8; ++i) gamma(i) = nd(rng);
    const ga::Vector h = vec({nd(rng), nd(rng)});
    const ga::Vector u = gamma * (gamma.transpose() * gamma).ldlt().solve(h);
    const ga::Matrix null_proj =
        ga::Matrix::Identity(4, 4) - gamma * (gamma.transpose() * gamma).ldlt().solve(gamma.transpose());
    ga::Vector r(4);
    for (ga::Index i = 0; i < 4; ++i) r(i) = nd(rng);
    const ga::Vector q = u + null_proj * r;
    EXPECT_LE((gamma.transpose() * q - h).norm(), 1e-10 * std::max(1.0, h.norm()));
    const auto w = ll::weight_for_direction(gamma, h, q);
    EXPECT_GT(w.eig_min(), 0.0);
    EXPECT_LE((direction_of(gamma, h, w.values()) - q).norm(), 1e-8 * std::max(1.0, q.norm()));
  }
}

TEST(ExactInterval, TwoEqualMoments) {
  const auto pr = two_equal_moments();
  const ga::Vector y = vec({1.0, -1.0});
  const auto ex = ll::exact_interval(pr, y, 1.0);
  EXPECT_NEAR(ex.interval.lo, -1.0, 1e-14);
  EXPECT_NEAR(ex.interval.hi, 1.0, 1e-14);
  EXPECT_NEAR(ex.sigma_eff, std::sqrt(0.5), 1e-15);
  EXPECT_NEAR(ex.j, 2.0, 1e-14);
  EXPECT_NEAR(ll::phi_hat(pr, ex.lower_weight, y).theta, -1.0, 1e-8);
  EXPECT_NEAR(ll::phi_hat(pr, ex.upper_weight, y).theta, 1.0, 1e-8);

  // brute force over random PD weights: containment and near-attainment
  std::mt19937_64 rng(11);
  double lo = 0.0, hi = 0.0;
  for (int d = 0; d < 10000; ++d) {
    const auto est = ll::phi_hat(pr.gamma, pr.sigma, pr.h, ga::random_weight(2, 1e6, rng), y);
    if (est.var_theta > 2.0 * 0.5) continue;
    EXPECT_TRUE(ex.interval.contains(est.theta, 1e-8)) << est.theta;
    lo = std::min(lo, est.theta);
    hi = std::max(hi, est.theta);
  }
  EXPECT_LT(lo, -0.9);
  EXPECT_GT(hi, 0.9);
}

TEST(ExactInterval, ZeroCostOrZeroJIsAPoint) {
  const auto pr = two_equal_moments();
  const auto a = ll::exact_interval(pr, vec({1.0, -1.0}), 0.0);
  EXPECT_NEAR(a.interval.width(), 0.0, 1e-15);
  const auto b = ll::exact_interval(pr, vec({0.5, 0.5}), 1.0);
  EXPECT_EQ(b.interval.lo, b.interval.hi);
  EXPECT_NEAR(b.interval.lo, -0.5, 1e-15);
}

TEST(Verification, ReducedSuitesPass) {
  ll::ExactIntervalCheck ex;
  ex.instances = 40;
  ex.omegas = 500;
  ex.seed = 101;
  const auto r1 = ll::check_exact_interval(ex);
  EXPECT_TRUE(r1.passed) << r1.detail;
  ll::CorollaryCheck co;
  co.instances = 10;
  co.omegas = 500;
  co.seed = 102;
  const auto r2 = ll::check_corollaries(co);
  EXPECT_TRUE(r2.min_max_t.passed) << r2.min_max_t.detail;
  EXPECT_TRUE(r2.cs.passed) << r2.cs.detail;
  ll::CanonicalCheck ca;
  ca.instances = 50;
  ca.seed = 103;
  const auto r3 = ll::check_canonical(ca);
  EXPECT_TRUE(r3.passed) << r3.detail;
  const auto r4 = ll::check_v_surjectivity();
  EXPECT_TRUE(r4.passed) << r4.detail;
}

TEST(LocalMonteCarlo, CorrectSpecificationRecoversTheTruth) {
  const ga::mc::LinearIvDgp dgp{ga::Vector::Constant(4, 0.5), 1.0, 0.5, ga::Vector::Zero(4)};
  ga::mc::LocalSettings s;
  s.n_grid = {2000};
  s.reps = 150;
  s.n_draws = 5;
  s.seed = 12;
  const auto r = ga::mc::mc_local(dgp, s);
  const auto& sum = r.at(2000);
  EXPECT_EQ(sum.failed, 0U);
  EXPECT_NEAR(sum.mean_j, 3.0, 3.0 * std::sqrt(6.0 / 150.0));
  std::vector<double> theta, se;
  for (const auto& row : r.rows) {
    theta.push_back(row.theta_eff);
    se.push_back(row.se_eff);
  }
  EXPECT_NEAR(ga::mc::median(theta), 1.0, 3.0 * 1.2533 * ga::mc::median(se) / std::sqrt(150.0));
}

TEST(LocalMonteCarlo, DeterministicPerSeed) {
  const ga::mc::LinearIvDgp dgp{ga::Vector::Constant(3, 0.5), 1.0, 0.5, vec({1.0, -1.0, 0.0})};
  ga::mc::LocalSettings s;
  s.n_grid = {300, 600};
  s.reps = 12;
  s.n_draws = 10;
  s.seed = 13;
  EXPECT_EQ(ga::mc::local_rows_csv(ga::mc::mc_local(dgp, s)), ga::mc::local_rows_csv(ga::mc::mc_local(dgp, s)));
  s.n_grid = {600, 300};
  EXPECT_THROW(ga::mc::mc_local(dgp, s), ga::ConfigError);
}

TEST(LocalMonteCarlo, ScaledDistanceShrinksUnderDrift) {
  const ga::mc::LinearIvDgp dgp{ga::Vector::Constant(4, 0.5), 1.0, 0.5, vec({1.5, -1.0, 0.5, 0.0})};
  ga::mc::LocalSettings s;
  s.reps = 50;
  s.seed = 14;
  const auto r = ga::mc::mc_local(dgp, s);
  EXPECT_LT(r.at(8000).median_scaled_dh, r.at(500).median_scaled_dh);
}
