#include <gtest/gtest.h>

#include <cmath>

#include "heavyrush/simulate.hpp"

using namespace heavyrush;
using Eigen::Index;

namespace {

template <class F>
ErrorCode code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::IoError;
}

Eigen::MatrixXd noise(std::uint64_t seed, Index n, Index T) {
  RandomStream rng(seed);
  Eigen::MatrixXd b(n, T);
  for (Index t = 0; t < T; ++t)
    for (Index i = 0; i < n; ++i) b(i, t) = rng.normal(0.0, 0.5);
  return b;
}

SimulationScenario small_scenario() {
  SimulationScenario sc;
  sc.graph = ring_graph(6);
  sc.T = 8;
  sc.replicates = 3;
  sc.seed = 77;
  sc.contamination = {1, 4};
  return sc;
}

}  // namespace

TEST(ContaminationTest, MatchesStraightLineOracle) {
  const Eigen::MatrixXd b = noise(1, 5, 12);
  RandomStream rng(42, StreamPurpose::Contamination, 3);
  RandomStream oracle = rng;
  const ContaminationRecord rec = contaminate(rng, b, {3, 0}, 0.4, 0.8, 1.0, 1.5);

  Eigen::MatrixXd expected = b;
  for (std::size_t j : {std::size_t{3}, std::size_t{0}}) {
    bool prev = false;
    for (Index t = 0; t < b.cols(); ++t) {
      const double m_abs = std::max(std::fabs(b.col(t).minCoeff()), std::fabs(b.col(t).maxCoeff()));
      EXPECT_DOUBLE_EQ(rec.range[t], m_abs);
      bool r;
      if (t == 0) {
        r = oracle.uniform() < 0.4;
      } else if (oracle.uniform() < 0.8) {
        r = prev;
      } else {
        r = oracle.uniform() < 0.4;
      }
      const double c = m_abs + 0.5 * m_abs * oracle.uniform();
      EXPECT_EQ(rec.r(static_cast<Index>(j), t), r);
      EXPECT_NEAR(rec.c(static_cast<Index>(j), t), c, 1e-12);
      if (r) expected(static_cast<Index>(j), t) += c;
      prev = r;
    }
  }
  EXPECT_TRUE(rec.b_after.isApprox(expected, 1e-14));
  EXPECT_TRUE(rec.b_before == b);
}

TEST(ContaminationTest, OnlyTargetsChangeAndMagnitudesInRange) {
  const Eigen::MatrixXd b = noise(2, 7, 40);
  RandomStream rng(3);
  const ContaminationRecord rec = contaminate(rng, b, {2, 5});
  for (Index i = 0; i < b.rows(); ++i) {
    const bool target = i == 2 || i == 5;
    for (Index t = 0; t < b.cols(); ++t) {
      const double diff = rec.b_after(i, t) - b(i, t);
      if (!target) {
        EXPECT_EQ(diff, 0.0);
        EXPECT_FALSE(rec.r(i, t));
        continue;
      }
      EXPECT_GE(rec.c(i, t), rec.range[t]);
      EXPECT_LE(rec.c(i, t), 1.5 * rec.range[t]);
      EXPECT_NEAR(diff, rec.r(i, t) ? rec.c(i, t) : 0.0, 1e-12);
    }
  }
}

TEST(ContaminationTest, IndicatorChainIsStationaryAtQ) {
  const Index T = 100000;
  const Eigen::MatrixXd b = noise(4, 2, T);
  RandomStream rng(5);
  const ContaminationRecord rec = contaminate(rng, b, {0}, 0.4, 0.8);
  double ones = 0.0, stay = 0.0, prev_ones = 0.0;
  for (Index t = 0; t < T; ++t) {
    ones += rec.r(0, t);
    if (t > 0 && rec.r(0, t - 1)) {
      prev_ones += 1.0;
      stay += rec.r(0, t);
    }
  }
  EXPECT_NEAR(ones / static_cast<double>(T), 0.4, 0.02);
  // P(r_t = 1 | r_{t-1} = 1) = persist + (1 - persist) q
  EXPECT_NEAR(stay / prev_ones, 0.8 + 0.2 * 0.4, 0.01);
}

TEST(ContaminationTest, InputErrors) {
  const Eigen::MatrixXd b = noise(6, 3, 4);
  RandomStream rng(7);
  EXPECT_EQ(code_of([&] { contaminate(rng, b, {}); }), ErrorCode::InvalidArgument);
  EXPECT_EQ(code_of([&] { contaminate(rng, b, {3}); }), ErrorCode::IndexOutOfRange);
  EXPECT_EQ(code_of([&] { contaminate(rng, b, {0}, 1.2); }), ErrorCode::ParameterOutOfRange);
  EXPECT_EQ(code_of([&] { contaminate(rng, b, {0}, 0.4, 0.8, 2.0, 1.0); }), ErrorCode::ParameterOutOfRange);
}

TEST(LatentTest, UnitKappaReducesToLeroux) {
  const SpatialGraph g = ring_graph(7);
  RandomStream a(9, StreamPurpose::Generation, 1), b = a;
  const Eigen::MatrixXd x = generate_heavy_rushworth_latents(a, g, 5, 0.6, 0.4, 0.7, Eigen::VectorXd::Ones(7));
  const Eigen::MatrixXd y = generate_rushworth_latents(b, g, 5, 0.6, 0.4, 0.7);
  EXPECT_TRUE(x == y);
}

TEST(LatentTest, FirstSliceCovarianceMatchesLerouxPrecision) {
  const std::size_t n = 4;
  const SpatialGraph g = ring_graph(n);
  const double lambda = 0.7, sigma = 0.5;
  // Dense oracle: Q = lambda (D - W) + (1 - lambda) I on the 4-cycle.
  Eigen::MatrixXd q = Eigen::MatrixXd::Zero(4, 4);
  for (Index i = 0; i < 4; ++i) {
    q(i, i) = lambda * 2.0 + (1.0 - lambda);
    q(i, (i + 1) % 4) = -lambda;
    q(i, (i + 3) % 4) = -lambda;
  }
  const Eigen::MatrixXd expected = sigma * sigma * q.inverse();

  RandomStream rng(10);
  const int draws = 40000;
  Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(4, 4);
  for (int s = 0; s < draws; ++s) {
    const Eigen::VectorXd v = generate_rushworth_latents(rng, g, 1, lambda, sigma, 0.5).col(0);
    acc += v * v.transpose();
  }
  acc /= draws;
  for (Index i = 0; i < 4; ++i)
    for (Index j = 0; j < 4; ++j) EXPECT_NEAR(acc(i, j), expected(i, j), 0.03 * expected(0, 0));
}

TEST(LatentTest, TemporalRegressionRecoversAlpha) {
  const SpatialGraph g = ring_graph(5);
  RandomStream rng(11);
  const Eigen::MatrixXd b = generate_rushworth_latents(rng, g, 4000, 0.5, 0.3, 0.6);
  double num = 0.0, den = 0.0;
  for (Index t = 1; t < b.cols(); ++t) {
    num += b.col(t).dot(b.col(t - 1));
    den += b.col(t - 1).squaredNorm();
  }
  EXPECT_NEAR(num / den, 0.6, 0.03);
}

TEST(LatentTest, ParameterChecks) {
  const SpatialGraph g = ring_graph(4);
  RandomStream rng(12);
  EXPECT_EQ(code_of([&] { generate_rushworth_latents(rng, g, 0, 0.5, 0.3, 0.5); }), ErrorCode::InvalidArgument);
  EXPECT_EQ(code_of([&] { generate_rushworth_latents(rng, g, 3, 1.0, 0.3, 0.5); }), ErrorCode::ParameterOutOfRange);
  EXPECT_EQ(code_of([&] { generate_rushworth_latents(rng, g, 3, 0.5, 0.0, 0.5); }), ErrorCode::ParameterOutOfRange);
  EXPECT_EQ(code_of([&] { generate_rushworth_latents(rng, g, 3, 0.5, 0.3, 1.5); }), ErrorCode::ParameterOutOfRange);
}

TEST(KappaDrawTest, AdmissibleAndPositive) {
  const SpatialGraph g = ring_graph(12);
  RandomStream rng(13);
  for (int rep = 0; rep < 20; ++rep) {
    const Eigen::VectorXd k = draw_admissible_kappa(rng, g, 0.9, 3.0);
    EXPECT_TRUE((k.array() > 0.0).all());
    EXPECT_TRUE(build_congdon_precision(g, 0.9, k).positive_definite());
  }
  // Large nu concentrates kappa around one.
  const Eigen::VectorXd k = draw_admissible_kappa(rng, g, 0.5, 4000.0);
  EXPECT_LT((k.array() - 1.0).abs().maxCoeff(), 0.15);
  EXPECT_EQ(code_of([&] { draw_admissible_kappa(rng, g, 0.5, 0.0); }), ErrorCode::ParameterOutOfRange);
}

TEST(OffsetTest, PopulationOffsetsHandExample) {
  Eigen::MatrixXi y = Eigen::MatrixXi::Zero(2, 10);
  y(0, 0) = 40;
  y(1, 3) = 60;
  Eigen::VectorXd p(2);
  p << 100.0, 900.0;
  const Eigen::VectorXd e = compute_offsets(y, p, 10);
  EXPECT_NEAR(e[0], 1.0, 1e-12);
  EXPECT_NEAR(e[1], 9.0, 1e-12);
  EXPECT_NEAR(e.sum() * 10.0, y.sum(), 1e-9);
  EXPECT_EQ(code_of([&] { compute_offsets(y, Eigen::VectorXd::Zero(2), 10); }), ErrorCode::ZeroPopulation);
}

TEST(OffsetTest, CategoryBands) {
  EXPECT_EQ(offset_category(0.0), OffsetCategory::Small);
  EXPECT_EQ(offset_category(25.999), OffsetCategory::Small);
  EXPECT_EQ(offset_category(26.0), OffsetCategory::MediumLow);
  EXPECT_EQ(offset_category(44.9), OffsetCategory::MediumLow);
  EXPECT_EQ(offset_category(45.0), OffsetCategory::Medium);
  EXPECT_EQ(offset_category(108.0), OffsetCategory::MediumHigh);
  EXPECT_EQ(offset_category(147.0), OffsetCategory::High);
  EXPECT_EQ(to_string(OffsetCategory::MediumHigh), "Medium high");
}

TEST(CountsTest, MeansFollowLogLinearPredictor) {
  RandomStream rng(14);
  Eigen::VectorXd e(2);
  e << 5.0, 50.0;
  Eigen::MatrixXd b = Eigen::MatrixXd::Zero(2, 20000);
  b.row(1).setConstant(-0.5);
  Eigen::VectorXd beta(1);
  beta << 0.3;
  Eigen::MatrixXd x(2, 1);
  x << 1.0, -1.0;
  const Eigen::MatrixXi y = generate_counts(rng, e, -1.0, beta, x, b);
  const double m0 = 5.0 * std::exp(-1.0 + 0.3), m1 = 50.0 * std::exp(-1.0 - 0.3 - 0.5);
  EXPECT_NEAR(y.row(0).cast<double>().mean(), m0, 4.0 * std::sqrt(m0 / 20000.0));
  EXPECT_NEAR(y.row(1).cast<double>().mean(), m1, 4.0 * std::sqrt(m1 / 20000.0));
  EXPECT_TRUE((y.array() >= 0).all());
}

TEST(ScenarioTest, ReplicatesAreReproducibleAndIndependentlyAddressable) {
  const SimulationScenario sc = small_scenario();
  const auto a = simulate_study(sc);
  const auto b = simulate_study(sc);
  ASSERT_EQ(a.size(), 3u);
  for (std::size_t r = 0; r < a.size(); ++r) {
    EXPECT_TRUE(a[r].data.counts == b[r].data.counts);
    EXPECT_TRUE(a[r].b == b[r].b);
  }
  EXPECT_FALSE(a[0].data.counts == a[1].data.counts);
  const auto single = simulate_replicate(sc, 2, scenario_offsets(sc));
  EXPECT_TRUE(single.data.counts == a[2].data.counts);
  EXPECT_EQ(a[0].outlier_truth, (std::vector<bool>{false, true, false, false, true, false}));
  EXPECT_TRUE(a[0].kappa.isOnes());
  // Offsets are study-wide.
  EXPECT_TRUE(a[0].data.offsets == a[2].data.offsets);
}

TEST(ScenarioTest, SharedLatentsRepeatAcrossReplicates) {
  SimulationScenario sc = small_scenario();
  sc.latents = LatentSharing::Shared;
  sc.nu = 4.0;
  const auto d = simulate_study(sc);
  EXPECT_TRUE(d[0].b == d[1].b);
  EXPECT_TRUE(d[0].kappa == d[2].kappa);
  EXPECT_FALSE(d[0].data.counts == d[1].data.counts);
}

TEST(ScenarioTest, ValidationErrors) {
  SimulationScenario sc = small_scenario();
  sc.contamination = {6};
  EXPECT_EQ(code_of([&] { sc.validate(); }), ErrorCode::IndexOutOfRange);
  sc = small_scenario();
  sc.offsets = Eigen::VectorXd::Ones(5);
  EXPECT_EQ(code_of([&] { sc.validate(); }), ErrorCode::DimensionMismatch);
  sc = small_scenario();
  sc.replicates = 0;
  EXPECT_EQ(code_of([&] { sc.validate(); }), ErrorCode::InvalidArgument);
}
