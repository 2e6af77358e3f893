#pragma once

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "heavyrush/report.hpp"

namespace heavyrush {

/// Exit status contract of the command-line tool.
enum class ExitCode : int { Success = 0, InputError = 1, ConvergenceWarning = 2 };

/// Everything `fit` needs; assembled from a config file and flags.
struct FitOptions {
  InputPaths inputs;
  std::string model = "HRalpha";
  ChainConfig chain = [] {
    ChainConfig c;
    c.iterations = 10000;
    c.burn_in = 5000;
    return c;
  }();
  std::filesystem::path out = ".";
};

/**
 * @brief Reads a run-configuration document into FitOptions.
 *
 * Relative paths resolve against `base_dir`. Keys absent from `j` keep the
 * values already in `opts`, so flags can be layered on afterwards.
 */
inline void apply_run_config(const Json& j, const std::filesystem::path& base_dir, FitOptions& opts) {
  run_config_validator().require_valid(j, "config");
  auto path = [&](const char* key) {
    const std::filesystem::path p(j[key].get<std::string>());
    return p.is_absolute() ? p : base_dir / p;
  };
  if (j.contains("counts")) opts.inputs.counts = path("counts");
  if (j.contains("adjacency")) opts.inputs.adjacency = path("adjacency");
  if (j.contains("covariates")) opts.inputs.covariates = path("covariates");
  if (j.contains("population")) opts.inputs.population = path("population");
  if (j.contains("out")) opts.out = path("out");
  opts.inputs.one_based = j.value("one_based", opts.inputs.one_based);
  opts.inputs.standardize = j.value("standardize", opts.inputs.standardize);
  if (j.contains("model")) opts.model = j["model"].get<std::string>();
  apply_chain_settings(j, opts.chain);
}

struct FitOutcome {
  Json report;
  bool converged = false;
  ExitCode exit_code() const { return converged ? ExitCode::Success : ExitCode::ConvergenceWarning; }
};

/**
 * @brief Fits one model and writes fit_report.json, summary.csv, draws.csv,
 * loglik.csv, fitted.csv and (kappa models) outliers.csv into `out`.
 */
inline FitOutcome cmd_fit(const FitOptions& opts) {
  require(!opts.inputs.counts.empty(), ErrorCode::InvalidArgument, "no counts file given");
  require(!opts.inputs.adjacency.empty(), ErrorCode::InvalidArgument, "no adjacency file given");
  const ModelSpec spec = ModelSpec::from_tag(normalize_model_tag(opts.model));
  opts.chain.validate();
  const ParsedInput in = parse_dataset(opts.inputs);
  const FitResult fit = fit_model(in.data, in.graph, spec, opts.chain);

  FitInputs fi;
  fi.offsets_source = in.offsets_from_population ? "population" : "offset_column";
  fi.covariates = in.covariates;
  fi.paths.emplace_back("counts", opts.inputs.counts.string());
  fi.paths.emplace_back("adjacency", opts.inputs.adjacency.string());
  if (opts.inputs.covariates) fi.paths.emplace_back("covariates", opts.inputs.covariates->string());
  if (opts.inputs.population) fi.paths.emplace_back("population", opts.inputs.population->string());

  FitOutcome outcome;
  outcome.report = fit_report(fit, in.data, in.graph, fi);
  outcome.converged = fit.converged();
  std::filesystem::create_directories(opts.out);
  write_json_file(opts.out / "fit_report.json", outcome.report);
  {
    auto f = open_output(opts.out / "summary.csv");
    write_summary_csv(f, fit.summary);
  }
  {
    auto f = open_output(opts.out / "draws.csv");
    write_draws_csv(f, fit);
  }
  {
    auto f = open_output(opts.out / "loglik.csv");
    write_loglik_csv(f, fit, in.data.counts.rows());
  }
  {
    auto f = open_output(opts.out / "fitted.csv");
    write_fitted_csv(f, fit, in.data);
  }
  if (fit.outliers) {
    auto f = open_output(opts.out / "outliers.csv");
    write_outliers_csv(f, *fit.outliers);
  }
  return outcome;
}

inline std::string replicate_stem(std::size_t r) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%03zu", r);
  return buf;
}

/**
 * @brief Writes dataset_RRR.csv and truth_RRR.json per replicate plus adjacency.csv
 * (and covariates.csv when the scenario has covariates) into `out`.
 *
 * @return the dataset files written, in replicate order.
 */
inline std::vector<std::filesystem::path> cmd_simulate(const std::filesystem::path& scenario_path,
                                                       const std::filesystem::path& out) {
  const ScenarioFile file = load_scenario(scenario_path);
  const SimulationScenario& sc = file.scenario;
  std::filesystem::create_directories(out);
  {
    auto f = open_output(out / "adjacency.csv");
    write_adjacency_csv(f, sc.graph);
  }
  if (sc.covariates.cols() > 0) {
    auto f = open_output(out / "covariates.csv");
    f << "area";
    for (Index k = 0; k < sc.covariates.cols(); ++k) f << ",x" << k;
    f << '\n';
    for (Index i = 0; i < sc.covariates.rows(); ++i) {
      f << i;
      for (Index k = 0; k < sc.covariates.cols(); ++k) f << ',' << format_number(sc.covariates(i, k));
      f << '\n';
    }
  }
  std::vector<std::filesystem::path> written;
  for (const auto& ds : simulate_study(sc)) {
    const auto path = out / ("dataset_" + replicate_stem(ds.replicate) + ".csv");
    {
      auto f = open_output(path);
      write_counts_csv(f, ds.data);
    }
    write_json_file(out / ("truth_" + replicate_stem(ds.replicate) + ".json"), truth_json(sc, ds));
    written.push_back(path);
  }
  return written;
}

struct StudyOptions {
  std::filesystem::path scenario;
  std::vector<std::string> models;  ///< empty: the scenario's list, else all six
  std::filesystem::path out = ".";
  std::optional<Json> chain_overrides;  ///< applied after the scenario's "fit" settings
  std::size_t threads = 1;
};

struct StudyOutcome {
  StudyReport report;
  Json document;
};

/**
 * @brief Runs a simulation study and writes study_report.json, study_runs.csv,
 * detection_frequency.csv and sensitivity_table.csv into `out`.
 */
inline StudyOutcome cmd_study(const StudyOptions& opts, const StudyProgress& progress = {}) {
  const ScenarioFile file = load_scenario(opts.scenario);
  std::vector<std::string> models = opts.models;
  if (models.empty()) models = file.models;
  if (models.empty()) models = all_model_tags();
  for (auto& m : models) m = normalize_model_tag(m);
  ChainConfig cfg;
  if (file.fit_settings) apply_chain_settings(*file.fit_settings, cfg);
  if (opts.chain_overrides) apply_chain_settings(*opts.chain_overrides, cfg);
  cfg.validate();
  StudyOutcome outcome;
  outcome.report = run_study(file.scenario, models, cfg, opts.threads, progress);
  outcome.document = study_report_json(outcome.report, file.scenario, cfg);
  std::filesystem::create_directories(opts.out);
  write_json_file(opts.out / "study_report.json", outcome.document);
  {
    auto f = open_output(opts.out / "study_runs.csv");
    write_study_runs_csv(f, outcome.report);
  }
  {
    auto f = open_output(opts.out / "detection_frequency.csv");
    write_detection_frequency_csv(f, outcome.report);
  }
  {
    auto f = open_output(opts.out / "sensitivity_table.csv");
    write_sensitivity_table_csv(f, outcome.report);
  }
  return outcome;
}

struct DiagnoseOutcome {
  PosteriorSummary summary;
  std::optional<WaicResult> waic;
  double max_rhat = 1.0;
  bool converged() const { return max_rhat <= kRhatThreshold; }
};

/**
 * @brief Recomputes split R-hat, ESS and (when loglik.csv is present) WAIC
 * from the draws a previous `fit` stored in `dir`.
 */
inline DiagnoseOutcome cmd_diagnose(const std::filesystem::path& dir) {
  DiagnoseOutcome out;
  const StoredDraws draws = read_stored_draws(read_csv(dir / "draws.csv"));
  require(!draws.chains.empty(), ErrorCode::InsufficientDraws, (dir / "draws.csv").string() + ": no draws");
  for (std::size_t j = 0; j < draws.names.size(); ++j) {
    ScalarChains per_chain;
    for (const auto& m : draws.chains) {
      const auto col = m.col(static_cast<Index>(j));
      per_chain.emplace_back(col.data(), col.data() + col.size());
    }
    out.summary.push_back(summarize_scalar(draws.names[j], per_chain));
    if (!std::isnan(out.summary.back().rhat)) out.max_rhat = std::max(out.max_rhat, out.summary.back().rhat);
  }
  if (std::filesystem::exists(dir / "loglik.csv")) {
    const StoredDraws ll = read_stored_draws(read_csv(dir / "loglik.csv"));
    Index rows = 0;
    for (const auto& m : ll.chains) rows += m.rows();
    Eigen::MatrixXd pooled(rows, static_cast<Index>(ll.names.size()));
    Index r = 0;
    for (const auto& m : ll.chains) {
      pooled.middleRows(r, m.rows()) = m;
      r += m.rows();
    }
    out.waic = compute_waic(pooled);
  }
  return out;
}

}  // namespace heavyrush
