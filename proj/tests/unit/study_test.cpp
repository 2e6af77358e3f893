#include <gtest/gtest.h>

#include <algorithm>

#include "heavyrush/study.hpp"

using namespace heavyrush;

namespace {

SimulationScenario tiny(std::size_t replicates) {
  SimulationScenario sc;
  sc.graph = ring_graph(5);
  sc.T = 6;
  sc.replicates = replicates;
  sc.seed = 31;
  sc.offset_mean = 60.0;
  sc.contamination = {2};
  return sc;
}

ChainConfig quick() {
  ChainConfig c;
  c.iterations = 2000;
  c.burn_in = 1000;
  c.thin = 2;
  c.chains = 2;
  c.seed = 4;
  c.leapfrog_steps = 32;
  c.path_jitter = 0.5;
  return c;
}

StudyRun make_run(std::size_t r, bool failed, double waic, std::vector<bool> flags, std::vector<bool> truth) {
  StudyRun run;
  run.replicate = r;
  run.model = "HRalpha";
  run.failed = failed;
  run.waic = waic;
  run.mse_overall = waic / 10.0;
  run.mse_contaminated = waic / 5.0;
  run.flags = flags;
  run.detection = score_detection(flags, truth, std::vector<std::string>(truth.size(), "Small"));
  return run;
}

}  // namespace

TEST(StudyTest, SingleReplicateWithoutKappaHasNoDetection) {
  const StudyReport rep = run_study(tiny(1), {"R1"}, quick());
  ASSERT_EQ(rep.runs.size(), 1u);
  const StudyRun& run = rep.run(0, "R1");
  EXPECT_FALSE(run.detection.has_value());
  EXPECT_TRUE(run.flags.empty());
  const ModelAggregate& agg = rep.aggregate("R1");
  EXPECT_FALSE(agg.detection.has_value());
  EXPECT_TRUE(agg.detection_frequency.empty());
}

TEST(StudyTest, ReportIsIndependentOfThreadCount) {
  const SimulationScenario sc = tiny(2);
  const std::vector<std::string> models{"Ralpha", "HRalpha"};
  const StudyReport a = run_study(sc, models, quick(), 1);
  const StudyReport b = run_study(sc, models, quick(), 2);
  ASSERT_EQ(a.runs.size(), 4u);
  for (std::size_t k = 0; k < a.runs.size(); ++k) {
    EXPECT_EQ(a.runs[k].replicate, b.runs[k].replicate);
    EXPECT_EQ(a.runs[k].model, b.runs[k].model);
    EXPECT_EQ(a.runs[k].waic, b.runs[k].waic);
    EXPECT_EQ(a.runs[k].mse_overall, b.runs[k].mse_overall);
    EXPECT_EQ(a.runs[k].flags, b.runs[k].flags);
  }
  // Runs are replicate-major with models in the given order.
  EXPECT_EQ(a.runs[1].model, "HRalpha");
  EXPECT_EQ(a.runs[2].replicate, 1u);
}

TEST(StudyTest, ScoresSatisfyInvariants) {
  const SimulationScenario sc = tiny(2);
  const StudyReport rep = run_study(sc, {"HRalpha"}, quick());
  const std::size_t n = sc.areas();
  for (const auto& run : rep.runs) {
    ASSERT_TRUE(run.mse_contaminated && run.mse_clean);
    // Overall MSE is a cell-weighted mean of the two subsets.
    EXPECT_GE(run.mse_overall, std::min(*run.mse_contaminated, *run.mse_clean) - 1e-9);
    EXPECT_LE(run.mse_overall, std::max(*run.mse_contaminated, *run.mse_clean) + 1e-9);
    const double weighted = (*run.mse_contaminated * 1.0 + *run.mse_clean * static_cast<double>(n - 1)) /
                            static_cast<double>(n);
    EXPECT_NEAR(run.mse_overall, weighted, 1e-9 * std::max(1.0, weighted));
    ASSERT_EQ(run.flags.size(), n);
    ASSERT_TRUE(run.detection);
    EXPECT_EQ(run.detection->overall.tp + run.detection->overall.fn, 1u);
  }
  const ModelAggregate& agg = rep.aggregate("HRalpha");
  ASSERT_GT(agg.fits, 0u);
  ASSERT_EQ(agg.detection_frequency.size(), n);
  for (std::size_t i = 0; i < n; ++i) {
    double count = 0.0;
    for (const auto& run : rep.runs)
      if (!run.failed) count += run.flags[i] ? 1.0 : 0.0;
    EXPECT_DOUBLE_EQ(agg.detection_frequency[i], 100.0 * count / static_cast<double>(agg.fits));
  }
  EXPECT_EQ(rep.categories.size(), n);
  EXPECT_EQ(rep.contaminated, (std::vector<bool>{false, false, true, false, false}));
}

TEST(StudyTest, FailedFitsAreExcludedFromAggregates) {
  const std::vector<bool> truth{true, false, false};
  std::vector<StudyRun> runs{make_run(0, false, 100.0, {true, false, false}, truth),
                             make_run(1, true, 9999.0, {false, true, true}, truth),
                             make_run(2, false, 120.0, {true, true, false}, truth)};
  const ModelAggregate a = detail::aggregate_runs("HRalpha", runs, 3);
  EXPECT_EQ(a.fits, 2u);
  EXPECT_EQ(a.failed, 1u);
  EXPECT_DOUBLE_EQ(a.waic, 110.0);
  EXPECT_DOUBLE_EQ(a.mse_overall, 11.0);
  EXPECT_DOUBLE_EQ(*a.mse_contaminated, 22.0);
  EXPECT_EQ(a.detection_frequency, (std::vector<double>{100.0, 50.0, 0.0}));
  ASSERT_TRUE(a.detection);
  EXPECT_EQ(a.detection->overall.tp, 2u);
  EXPECT_EQ(a.detection->overall.fp, 1u);
  EXPECT_EQ(a.detection->overall.tn, 3u);
  EXPECT_DOUBLE_EQ(*a.detection->specificity(), 75.0);
}

TEST(StudyTest, AllFailedLeavesEmptyAggregate) {
  const std::vector<bool> truth{true, false};
  const ModelAggregate a =
      detail::aggregate_runs("HRalpha", {make_run(0, true, 5.0, {true, false}, truth)}, 2);
  EXPECT_EQ(a.fits, 0u);
  EXPECT_EQ(a.failed, 1u);
  EXPECT_FALSE(a.detection.has_value());
  EXPECT_FALSE(a.mse_contaminated.has_value());
}

TEST(StudyTest, RejectsEmptyModelListAndUnknownLookups) {
  EXPECT_THROW(run_study(tiny(1), {}, quick()), Error);
  EXPECT_THROW(run_study(tiny(1), {"XYZ"}, quick()), Error);
  const StudyReport rep = run_study(tiny(1), {"R1"}, quick());
  EXPECT_THROW(rep.aggregate("HR1"), Error);
  EXPECT_THROW(rep.run(3, "R1"), Error);
}
