#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>

#include "heavyrush/diagnostics.hpp"
#include "heavyrush/fit.hpp"
#include "heavyrush/simulate.hpp"

namespace heavyrush {

/// Scores of one model fitted to one replicate.
struct StudyRun {
  std::size_t replicate = 0;
  std::string model;
  bool failed = false;
  std::string failure;  ///< why the fit was excluded; empty when it was not
  double max_rhat = 0.0;
  std::size_t divergences = 0;
  double waic = 0.0;
  double p_w = 0.0;
  std::optional<double> mse_contaminated;  ///< absent without contamination
  std::optional<double> mse_clean;         ///< absent when every area is contaminated
  double mse_overall = 0.0;
  std::vector<bool> flags;  ///< per-area outlier flags; empty for models without kappa
  std::optional<DetectionScore> detection;
};

/// Means over the non-failed fits of one model.
struct ModelAggregate {
  std::string model;
  std::size_t fits = 0;
  std::size_t failed = 0;
  double waic = 0.0;
  double p_w = 0.0;
  std::optional<double> mse_contaminated;
  std::optional<double> mse_clean;
  double mse_overall = 0.0;
  std::optional<DetectionScore> detection;   ///< confusion counts pooled over replicates
  std::vector<double> detection_frequency;   ///< per area, percent of fits flagging it
};

struct StudyReport {
  std::size_t replicates = 0;
  std::size_t areas = 0;
  std::size_t times = 0;
  std::uint64_t seed = 0;
  std::vector<std::string> models;
  Eigen::VectorXd offsets;
  std::vector<std::string> categories;  ///< offset category per area
  std::vector<bool> contaminated;       ///< per area
  std::vector<StudyRun> runs;           ///< replicate-major, models in the given order
  std::vector<ModelAggregate> aggregates;

  const ModelAggregate& aggregate(const std::string& model) const {
    for (const auto& a : aggregates)
      if (a.model == model) return a;
    fail(ErrorCode::InvalidArgument, "study has no model " + model);
  }
  const StudyRun& run(std::size_t replicate, const std::string& model) const {
    for (const auto& r : runs)
      if (r.replicate == replicate && r.model == model) return r;
    fail(ErrorCode::InvalidArgument, "study has no run for " + model);
  }
};

/// Scores one completed fit against the replicate's truth.
inline StudyRun score_fit(const FitResult& fit, const SimulatedDataset& ds,
                          const std::vector<std::string>& categories) {
  StudyRun run;
  run.replicate = ds.replicate;
  run.model = std::string(fit.spec.tag());
  run.max_rhat = fit.max_rhat;
  run.divergences = fit.divergences;
  run.waic = fit.waic.waic;
  run.p_w = fit.waic.p_w;
  const Eigen::MatrixXd observed = ds.data.counts.cast<double>();
  const std::vector<bool>& truth = ds.outlier_truth;
  std::vector<bool> clean(truth.size()), all(truth.size(), true);
  for (std::size_t i = 0; i < truth.size(); ++i) clean[i] = !truth[i];
  if (std::find(truth.begin(), truth.end(), true) != truth.end()) {
    run.mse_contaminated = compute_mse(fit.fitted_mean, observed, truth);
  }
  if (std::find(clean.begin(), clean.end(), true) != clean.end()) {
    run.mse_clean = compute_mse(fit.fitted_mean, observed, clean);
  }
  run.mse_overall = compute_mse(fit.fitted_mean, observed, all);
  if (fit.outliers) {
    run.flags = fit.outliers->flag;
    run.detection = score_detection(run.flags, truth, categories);
  }
  if (!fit.converged()) {
    run.failed = true;
    run.failure = "max split R-hat " + std::to_string(fit.max_rhat) + " exceeds 1.1";
  }
  return run;
}

namespace detail {

inline void add_counts(ConfusionCounts& into, const ConfusionCounts& c) {
  into.tp += c.tp;
  into.fn += c.fn;
  into.tn += c.tn;
  into.fp += c.fp;
}

inline ModelAggregate aggregate_runs(const std::string& model, const std::vector<StudyRun>& runs,
                                     std::size_t areas) {
  ModelAggregate a;
  a.model = model;
  std::vector<double> flagged(areas, 0.0);
  double contaminated = 0.0, clean = 0.0;
  std::size_t n_contaminated = 0, n_clean = 0;
  for (const auto& r : runs) {
    if (r.model != model) continue;
    if (r.failed) {
      ++a.failed;
      continue;
    }
    ++a.fits;
    a.waic += r.waic;
    a.p_w += r.p_w;
    a.mse_overall += r.mse_overall;
    if (r.mse_contaminated) {
      contaminated += *r.mse_contaminated;
      ++n_contaminated;
    }
    if (r.mse_clean) {
      clean += *r.mse_clean;
      ++n_clean;
    }
    if (r.detection) {
      if (!a.detection) a.detection = DetectionScore{};
      add_counts(a.detection->overall, r.detection->overall);
      for (const auto& [cat, c] : r.detection->by_category) add_counts(a.detection->by_category[cat], c);
      for (std::size_t i = 0; i < areas && i < r.flags.size(); ++i) flagged[i] += r.flags[i] ? 1.0 : 0.0;
    }
  }
  if (a.fits > 0) {
    const double k = static_cast<double>(a.fits);
    a.waic /= k;
    a.p_w /= k;
    a.mse_overall /= k;
    if (n_contaminated > 0) a.mse_contaminated = contaminated / static_cast<double>(n_contaminated);
    if (n_clean > 0) a.mse_clean = clean / static_cast<double>(n_clean);
    if (a.detection) {
      for (double f : flagged) a.detection_frequency.push_back(100.0 * f / k);
    }
  }
  return a;
}

}  // namespace detail

/// Called after each fit completes; calls are serialized.
using StudyProgress = std::function<void(const StudyRun&)>;

/**
 * @brief Simulates every replicate, fits each model to it and aggregates the scores.
 *
 * Fit (r, model) uses `cfg` with stream_key = r, so each fit is a pure
 * function of the scenario, the model and the configuration. Jobs run on up
 * to `threads` workers (chains inside a fit stay sequential); results are
 * stored by job index, so the report does not depend on scheduling. A fit
 * that throws, or whose max split R-hat exceeds 1.1, is marked failed and
 * left out of the aggregates.
 */
inline StudyReport run_study(const SimulationScenario& sc, const std::vector<std::string>& models,
                             const ChainConfig& cfg, std::size_t threads = 1,
                             const StudyProgress& progress = {}) {
  sc.validate();
  cfg.validate();
  require(!models.empty(), ErrorCode::InvalidArgument, "a study needs at least one model");
  std::vector<ModelSpec> specs;
  for (const auto& m : models) specs.push_back(ModelSpec::from_tag(m));

  StudyReport rep;
  rep.replicates = sc.replicates;
  rep.areas = sc.areas();
  rep.times = sc.T;
  rep.seed = sc.seed;
  for (const auto& s : specs) rep.models.emplace_back(s.tag());
  rep.offsets = scenario_offsets(sc);
  for (Index i = 0; i < rep.offsets.size(); ++i) {
    rep.categories.emplace_back(to_string(offset_category(rep.offsets[i])));
  }
  rep.contaminated.assign(sc.areas(), false);
  for (std::size_t j : sc.contamination) rep.contaminated[j] = true;

  const std::vector<SimulatedDataset> data = simulate_study(sc);
  const std::size_t jobs = data.size() * specs.size();
  rep.runs.resize(jobs);
  std::atomic<std::size_t> next{0};
  std::mutex report_mutex;
  auto worker = [&] {
    for (std::size_t k = next++; k < jobs; k = next++) {
      const std::size_t r = k / specs.size();
      const ModelSpec& spec = specs[k % specs.size()];
      ChainConfig c = cfg;
      c.stream_key = r;
      c.threads = 1;
      StudyRun run;
      try {
        const FitResult fit = fit_model(data[r].data, sc.graph, spec, c);
        run = score_fit(fit, data[r], rep.categories);
      } catch (const std::exception& e) {
        run.replicate = r;
        run.model = std::string(spec.tag());
        run.failed = true;
        run.failure = e.what();
      }
      rep.runs[k] = run;
      if (progress) {
        std::lock_guard<std::mutex> lock(report_mutex);
        progress(rep.runs[k]);
      }
    }
  };
  const std::size_t pool_size = std::clamp<std::size_t>(threads, 1, jobs);
  if (pool_size == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < pool_size; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  for (const auto& m : rep.models) rep.aggregates.push_back(detail::aggregate_runs(m, rep.runs, rep.areas));
  return rep;
}

}  // namespace heavyrush
