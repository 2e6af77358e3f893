#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "heavyrush/io.hpp"
#include "heavyrush/schema.hpp"
#include "heavyrush/study.hpp"

namespace heavyrush {

/// Canonical tag from any of "HRLPCalpha", "HR-LPC(alpha)", "HR-LPC-alpha", "hr-lpc-alpha".
inline std::string normalize_model_tag(std::string_view raw) {
  std::string t;
  for (char c : raw) {
    if (c == '-' || c == '(' || c == ')' || c == '_' || c == ' ') continue;
    t += c;
  }
  std::string upper;
  for (char c : t) upper += static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  for (const auto& tag : all_model_tags()) {
    std::string u;
    for (char c : tag) u += static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    if (u == upper) return tag;
  }
  fail(ErrorCode::InvalidArgument, "unknown model tag '" + std::string(raw) + "'");
}

inline std::string_view to_string(MetricKind m) noexcept {
  switch (m) {
    case MetricKind::Unit: return "unit";
    case MetricKind::Diagonal: return "diagonal";
    case MetricKind::LowRank: return "low_rank";
  }
  return "low_rank";
}

inline std::string_view to_string(LatentParametrization p) noexcept {
  return p == LatentParametrization::Centred ? "centred" : "scale_noncentred";
}

inline MetricKind parse_metric(std::string_view s) {
  if (s == "unit") return MetricKind::Unit;
  if (s == "diagonal") return MetricKind::Diagonal;
  if (s == "low_rank") return MetricKind::LowRank;
  fail(ErrorCode::InvalidArgument, "unknown metric '" + std::string(s) + "'");
}

inline LatentParametrization parse_latents(std::string_view s) {
  if (s == "centred") return LatentParametrization::Centred;
  if (s == "scale_noncentred") return LatentParametrization::ScaleNoncentred;
  fail(ErrorCode::InvalidArgument, "unknown latent parametrization '" + std::string(s) + "'");
}

/// Finite numbers as-is; NaN and infinities become null.
inline Json number_or_null(double x) { return std::isfinite(x) ? Json(x) : Json(nullptr); }

inline Json to_json(const ChainConfig& c) {
  Json j;
  j["iterations"] = c.iterations;
  j["burn_in"] = c.burn_in;
  j["thin"] = c.thin;
  j["chains"] = c.chains;
  j["seed"] = c.seed;
  j["leapfrog_steps"] = c.leapfrog_steps;
  j["path_jitter"] = c.path_jitter;
  j["target_acceptance"] = c.target_acceptance;
  j["metric"] = to_string(c.metric);
  j["max_metric_rank"] = c.max_metric_rank;
  j["latents"] = to_string(c.latents);
  return j;
}

/**
 * @brief Overrides the fields of `c` present in `j`.
 *
 * Keys not describing a chain setting are ignored; callers validate the
 * document against its schema first.
 */
inline void apply_chain_settings(const Json& j, ChainConfig& c) {
  if (j.contains("iterations")) c.iterations = j["iterations"].get<std::size_t>();
  if (j.contains("burn_in")) c.burn_in = j["burn_in"].get<std::size_t>();
  if (j.contains("thin")) c.thin = j["thin"].get<std::size_t>();
  if (j.contains("chains")) c.chains = j["chains"].get<std::size_t>();
  if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
  if (j.contains("leapfrog_steps")) c.leapfrog_steps = j["leapfrog_steps"].get<std::size_t>();
  if (j.contains("path_jitter")) c.path_jitter = j["path_jitter"].get<double>();
  if (j.contains("target_acceptance")) c.target_acceptance = j["target_acceptance"].get<double>();
  if (j.contains("metric")) c.metric = parse_metric(j["metric"].get<std::string>());
  if (j.contains("max_metric_rank")) c.max_metric_rank = j["max_metric_rank"].get<std::size_t>();
  if (j.contains("latents")) c.latents = parse_latents(j["latents"].get<std::string>());
  if (j.contains("threads")) c.threads = j["threads"].get<std::size_t>();
}

inline Json to_json(const ModelSpec& s) {
  Json j;
  j["tag"] = s.tag();
  j["label"] = s.label();
  j["kappa_prior"] = s.kappa_prior == KappaPrior::None               ? "none"
                     : s.kappa_prior == KappaPrior::IndependentGamma ? "independent_gamma"
                                                                     : "log_pcar";
  j["alpha"] = s.estimates_alpha() ? "estimated" : "fixed_one";
  Json p;
  p["beta0_sd"] = s.beta0_sd;
  p["beta_sd"] = s.beta_sd;
  p["sigma_scale"] = s.sigma_scale;
  p["sum_to_zero_sd_per_area"] = s.sum_to_zero_sd_per_area;
  if (s.has_kappa()) p["nu_rate"] = s.nu_rate;
  if (s.kappa_prior == KappaPrior::LogPCAR) p["rho"] = s.rho;
  j["priors"] = p;
  return j;
}

inline Json to_json(const WaicResult& w) {
  Json j;
  j["waic"] = w.waic;
  j["p_w"] = w.p_w;
  j["lppd"] = w.lppd;
  return j;
}

inline Json to_json(const ConfusionCounts& c) {
  Json j;
  j["tp"] = c.tp;
  j["fn"] = c.fn;
  j["tn"] = c.tn;
  j["fp"] = c.fp;
  const auto se = c.sensitivity(), sp = c.specificity();
  j["sensitivity"] = se ? Json(*se) : Json(nullptr);
  j["specificity"] = sp ? Json(*sp) : Json(nullptr);
  return j;
}

inline Json to_json(const DetectionScore& d) {
  Json j;
  j["overall"] = to_json(d.overall);
  Json by = Json::object();
  for (auto c : all_offset_categories()) {
    const auto it = d.by_category.find(std::string(to_string(c)));
    if (it != d.by_category.end()) by[std::string(to_string(c))] = to_json(it->second);
  }
  j["by_category"] = by;
  return j;
}

inline Json to_json(const OutlierReport& o) {
  Json j;
  j["rule"] = "upper 95% credible bound of kappa below 1";
  Json flagged = Json::array(), areas = Json::array();
  for (std::size_t i = 0; i < o.flag.size(); ++i) {
    if (o.flag[i]) flagged.push_back(i);
    Json a;
    a["area"] = i;
    a["kappa_mean"] = o.mean[i];
    a["kappa_upper"] = o.upper[i];
    a["flag"] = static_cast<bool>(o.flag[i]);
    areas.push_back(a);
  }
  j["flagged"] = flagged;
  j["areas"] = areas;
  return j;
}

/// Provenance of the fitted data echoed into the report.
struct FitInputs {
  std::string offsets_source = "supplied";  ///< "population", "offset_column" or "supplied"
  std::optional<CovariateTable> covariates;
  std::vector<std::pair<std::string, std::string>> paths;  ///< role, path as given
};

/**
 * @brief FitReport document; validated against the fit-report schema before it is returned.
 *
 * `mse` is the mean squared error of the draw-wise fitted means against the
 * observed counts over all cells.
 */
inline Json fit_report(const FitResult& fit, const Dataset& data, const SpatialGraph& g, const FitInputs& inputs) {
  Json j;
  j["schema_version"] = kSchemaVersion;
  j["tool"] = "heavyrush";
  j["model"] = to_json(fit.spec);
  Json d;
  d["areas"] = data.counts.rows();
  d["times"] = data.counts.cols();
  d["edges"] = g.edges().size();
  d["offsets_source"] = inputs.offsets_source;
  if (!inputs.paths.empty()) {
    Json p;
    for (const auto& [role, path] : inputs.paths) p[role] = path;
    d["inputs"] = p;
  }
  Json cov = Json::array();
  if (inputs.covariates) {
    const auto& c = *inputs.covariates;
    for (std::size_t k = 0; k < c.names.size(); ++k) {
      Json e;
      e["name"] = c.names[k];
      e["center"] = c.center[static_cast<Index>(k)];
      e["scale"] = c.scale[static_cast<Index>(k)];
      cov.push_back(e);
    }
    d["standardized"] = c.standardized;
  }
  d["covariates"] = cov;
  j["data"] = d;
  j["config"] = to_json(fit.config);
  j["seed"] = fit.config.seed;
  Json st;
  st["converged"] = fit.converged();
  st["max_rhat"] = fit.max_rhat;
  st["rhat_threshold"] = kRhatThreshold;
  st["divergences"] = fit.divergences;
  j["status"] = st;
  Json chains = Json::array();
  for (const auto& c : fit.chains) {
    Json e;
    e["chain"] = c.chain_id;
    e["step_size"] = c.step_size;
    e["mean_acceptance"] = c.mean_acceptance;
    e["divergences"] = c.divergences;
    e["metric_rank"] = c.metric_rank;
    e["retained"] = c.draws.rows();
    chains.push_back(e);
  }
  j["chains"] = chains;
  j["waic"] = to_json(fit.waic);
  std::vector<bool> all(static_cast<std::size_t>(data.counts.rows()), true);
  j["mse"] = compute_mse(fit.fitted_mean, data.counts.cast<double>(), all);
  Json summary = Json::array();
  for (const auto& p : fit.summary) {
    Json e;
    e["parameter"] = p.name;
    e["mean"] = p.mean;
    e["sd"] = p.sd;
    e["q025"] = p.q025;
    e["q975"] = p.q975;
    e["rhat"] = number_or_null(p.rhat);
    e["ess"] = number_or_null(p.ess);
    summary.push_back(e);
  }
  j["summary"] = summary;
  if (fit.outliers) j["outliers"] = to_json(*fit.outliers);
  fit_report_validator().require_valid(j, "fit report");
  return j;
}

/// Scenario read from JSON together with the optional study settings it carries.
struct ScenarioFile {
  SimulationScenario scenario;
  std::vector<std::string> models;    ///< empty when the file lists none
  std::optional<Json> fit_settings;   ///< the "fit" object, if any
  std::string description;
};

namespace detail {

inline Eigen::VectorXd read_area_values(const std::filesystem::path& path, std::size_t n, std::string_view column) {
  const CsvTable t = read_csv(path);
  const std::size_t ca = t.column("area"), cv = t.column(column);
  Eigen::VectorXd v = Eigen::VectorXd::Constant(as_index(n), std::nan(""));
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const std::size_t a = parse_index(t, r, ca);
    require(a < n, ErrorCode::IndexOutOfRange, t.where(r) + ": area outside the graph");
    v[as_index(a)] = parse_real(t, r, cv);
  }
  for (Index i = 0; i < v.size(); ++i)
    require(!std::isnan(v[i]), ErrorCode::MissingCell, t.source + ": no value for area " + std::to_string(i));
  return v;
}

}  // namespace detail

/**
 * @brief Builds a scenario from its JSON document.
 *
 * Relative file paths resolve against `base_dir`. Schema violations and
 * semantic errors are reported with the JSON pointer of the offending value.
 */
inline ScenarioFile parse_scenario(const Json& j, const std::filesystem::path& base_dir) {
  scenario_validator().require_valid(j, "scenario");
  ScenarioFile out;
  SimulationScenario& sc = out.scenario;
  auto resolve = [&](const std::string& p) {
    const std::filesystem::path path(p);
    return path.is_absolute() ? path : base_dir / path;
  };
  const Json& g = j["graph"];
  if (g.contains("ring")) {
    sc.graph = ring_graph(g["ring"].get<std::size_t>());
  } else {
    const std::size_t n = g["areas"].get<std::size_t>();
    sc.graph = read_adjacency(read_csv(resolve(g["adjacency"].get<std::string>())), n,
                              g.value("one_based", false));
  }
  const std::size_t n = sc.graph.size();
  sc.T = j["T"].get<std::size_t>();
  sc.replicates = j["replicates"].get<std::size_t>();
  sc.seed = j["seed"].get<std::uint64_t>();
  sc.beta0 = j.value("beta0", sc.beta0);
  sc.lambda = j.value("lambda", sc.lambda);
  sc.sigma = j.value("sigma", sc.sigma);
  sc.alpha = j.value("alpha", sc.alpha);
  if (j.contains("nu")) sc.nu = j["nu"].get<double>();
  if (j.contains("beta")) {
    const auto b = j["beta"].get<std::vector<double>>();
    sc.beta = Eigen::Map<const Eigen::VectorXd>(b.data(), static_cast<Index>(b.size()));
    require(j.contains("covariates"), ErrorCode::SchemaViolation, "scenario: /covariates: required when /beta is given");
    sc.covariates = read_covariates(read_csv(resolve(j["covariates"].get<std::string>())), n, true).values;
    require(sc.covariates.cols() == sc.beta.size(), ErrorCode::SchemaViolation,
            "scenario: /beta: length differs from the number of covariate columns");
  }
  if (j.contains("offsets")) {
    const Json& o = j["offsets"];
    if (o.is_string()) {
      sc.offsets = detail::read_area_values(resolve(o.get<std::string>()), n, "offset");
    } else {
      const auto v = o.get<std::vector<double>>();
      require(v.size() == n, ErrorCode::SchemaViolation, "scenario: /offsets: needs one entry per area");
      sc.offsets = Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Index>(v.size()));
    }
  }
  sc.offset_mean = j.value("offset_mean", sc.offset_mean);
  if (j.contains("contamination")) {
    const Json& c = j["contamination"];
    sc.contamination = c["targets"].get<std::vector<std::size_t>>();
    for (std::size_t k = 0; k < sc.contamination.size(); ++k) {
      require(sc.contamination[k] < n, ErrorCode::SchemaViolation,
              "scenario: /contamination/targets/" + std::to_string(k) + ": area outside the graph");
    }
    sc.q = c.value("q", sc.q);
    sc.persist = c.value("persist", sc.persist);
    if (c.contains("multiplier")) {
      sc.mult_lo = c["multiplier"][0].get<double>();
      sc.mult_hi = c["multiplier"][1].get<double>();
      require(sc.mult_lo <= sc.mult_hi, ErrorCode::SchemaViolation,
              "scenario: /contamination/multiplier: bounds are not ordered");
    }
  }
  if (j.contains("latents")) {
    sc.latents = j["latents"] == "shared" ? LatentSharing::Shared : LatentSharing::PerReplicate;
  }
  if (j.contains("models")) out.models = j["models"].get<std::vector<std::string>>();
  if (j.contains("fit")) out.fit_settings = j["fit"];
  out.description = j.value("description", std::string());
  sc.validate();
  return out;
}

inline Json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(in.good(), ErrorCode::IoError, "cannot open " + path.string());
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorCode::ParseError, path.string() + ": " + e.what());
  }
}

inline ScenarioFile load_scenario(const std::filesystem::path& path) {
  return parse_scenario(read_json_file(path), path.parent_path());
}

/// Scenario parameters echoed into truth files and study reports.
inline Json scenario_echo(const SimulationScenario& sc) {
  Json j;
  j["areas"] = sc.areas();
  j["T"] = sc.T;
  j["replicates"] = sc.replicates;
  j["seed"] = sc.seed;
  j["beta0"] = sc.beta0;
  j["beta"] = std::vector<double>(sc.beta.data(), sc.beta.data() + sc.beta.size());
  j["lambda"] = sc.lambda;
  j["sigma"] = sc.sigma;
  j["alpha"] = sc.alpha;
  j["nu"] = sc.nu ? Json(*sc.nu) : Json(nullptr);
  Json c;
  c["targets"] = sc.contamination;
  c["q"] = sc.q;
  c["persist"] = sc.persist;
  c["multiplier"] = {sc.mult_lo, sc.mult_hi};
  c["r_process"] = "independent per target area";
  j["contamination"] = c;
  j["latents"] = sc.latents == LatentSharing::Shared ? "shared" : "per_replicate";
  return j;
}

/// Truth sidecar of one simulated replicate.
inline Json truth_json(const SimulationScenario& sc, const SimulatedDataset& ds) {
  Json j;
  j["schema_version"] = kSchemaVersion;
  j["replicate"] = ds.replicate;
  j["parameters"] = scenario_echo(sc);
  j["kappa"] = std::vector<double>(ds.kappa.data(), ds.kappa.data() + ds.kappa.size());
  Json areas = Json::array();
  for (std::size_t i = 0; i < ds.outlier_truth.size(); ++i)
    if (ds.outlier_truth[i]) areas.push_back(i);
  j["contaminated_areas"] = areas;
  Json r = Json::array();
  if (ds.contamination) {
    for (std::size_t j2 : ds.contamination->targets) {
      std::vector<int> row;
      for (Index t = 0; t < ds.contamination->r.cols(); ++t) row.push_back(ds.contamination->r(as_index(j2), t) ? 1 : 0);
      Json e;
      e["area"] = j2;
      e["r"] = row;
      r.push_back(e);
    }
  }
  j["r"] = r;
  Json b = Json::array();
  for (Index i = 0; i < ds.b.rows(); ++i) {
    std::vector<double> row(static_cast<std::size_t>(ds.b.cols()));
    for (Index t = 0; t < ds.b.cols(); ++t) row[static_cast<std::size_t>(t)] = ds.b(i, t);
    b.push_back(row);
  }
  j["b"] = b;
  return j;
}

inline Json to_json(const StudyRun& r) {
  Json j;
  j["replicate"] = r.replicate;
  j["model"] = r.model;
  j["failed"] = r.failed;
  if (r.failed) j["failure"] = r.failure;
  j["max_rhat"] = number_or_null(r.max_rhat);
  j["divergences"] = r.divergences;
  j["waic"] = number_or_null(r.waic);
  j["p_w"] = number_or_null(r.p_w);
  j["mse_contaminated"] = r.mse_contaminated ? Json(*r.mse_contaminated) : Json(nullptr);
  j["mse_clean"] = r.mse_clean ? Json(*r.mse_clean) : Json(nullptr);
  j["mse_overall"] = number_or_null(r.mse_overall);
  if (r.detection) {
    Json flagged = Json::array();
    for (std::size_t i = 0; i < r.flags.size(); ++i)
      if (r.flags[i]) flagged.push_back(i);
    j["flagged"] = flagged;
    j["detection"] = to_json(*r.detection);
  }
  return j;
}

inline Json to_json(const ModelAggregate& a) {
  Json j;
  j["model"] = a.model;
  j["fits"] = a.fits;
  j["failed"] = a.failed;
  j["waic"] = a.fits ? Json(a.waic) : Json(nullptr);
  j["p_w"] = a.fits ? Json(a.p_w) : Json(nullptr);
  j["mse_contaminated"] = a.mse_contaminated ? Json(*a.mse_contaminated) : Json(nullptr);
  j["mse_clean"] = a.mse_clean ? Json(*a.mse_clean) : Json(nullptr);
  j["mse_overall"] = a.fits ? Json(a.mse_overall) : Json(nullptr);
  if (a.detection) {
    j["detection"] = to_json(*a.detection);
    j["detection_frequency"] = a.detection_frequency;
  }
  return j;
}

inline Json study_report_json(const StudyReport& rep, const SimulationScenario& sc, const ChainConfig& cfg) {
  Json j;
  j["schema_version"] = kSchemaVersion;
  j["tool"] = "heavyrush";
  j["scenario"] = scenario_echo(sc);
  j["config"] = to_json(cfg);
  j["models"] = rep.models;
  Json areas = Json::array();
  for (std::size_t i = 0; i < rep.areas; ++i) {
    Json a;
    a["area"] = i;
    a["offset"] = rep.offsets[as_index(i)];
    a["category"] = rep.categories[i];
    a["contaminated"] = static_cast<bool>(rep.contaminated[i]);
    areas.push_back(a);
  }
  j["areas"] = areas;
  Json runs = Json::array();
  for (const auto& r : rep.runs) runs.push_back(to_json(r));
  j["runs"] = runs;
  Json agg = Json::array();
  for (const auto& a : rep.aggregates) agg.push_back(to_json(a));
  j["aggregates"] = agg;
  study_report_validator().require_valid(j, "study report");
  return j;
}

inline std::string optional_cell(const std::optional<double>& v) { return v ? format_number(*v) : std::string(); }

/// One row per replicate x model.
inline void write_study_runs_csv(std::ostream& out, const StudyReport& rep) {
  out << "replicate,model,failed,max_rhat,divergences,waic,p_w,mse_contaminated,mse_clean,mse_overall,"
         "sensitivity,specificity,flagged\n";
  for (const auto& r : rep.runs) {
    std::string flagged;
    for (std::size_t i = 0; i < r.flags.size(); ++i) {
      if (!r.flags[i]) continue;
      if (!flagged.empty()) flagged += ' ';
      flagged += std::to_string(i);
    }
    out << r.replicate << ',' << r.model << ',' << (r.failed ? 1 : 0) << ',' << format_number(r.max_rhat) << ','
        << r.divergences << ',' << format_number(r.waic) << ',' << format_number(r.p_w) << ','
        << optional_cell(r.mse_contaminated) << ',' << optional_cell(r.mse_clean) << ','
        << format_number(r.mse_overall) << ','
        << (r.detection ? optional_cell(r.detection->sensitivity()) : std::string()) << ','
        << (r.detection ? optional_cell(r.detection->specificity()) : std::string()) << ',' << flagged << '\n';
  }
}

/// One row per area: offset, category, truth and the detection frequency of each kappa model.
inline void write_detection_frequency_csv(std::ostream& out, const StudyReport& rep) {
  out << "area,offset,category,contaminated";
  std::vector<const ModelAggregate*> models;
  for (const auto& a : rep.aggregates) {
    if (a.detection_frequency.empty()) continue;
    models.push_back(&a);
    out << ',' << a.model;
  }
  out << '\n';
  for (std::size_t i = 0; i < rep.areas; ++i) {
    out << i << ',' << format_number(rep.offsets[as_index(i)]) << ',' << rep.categories[i] << ','
        << (rep.contaminated[i] ? 1 : 0);
    for (const auto* a : models) out << ',' << format_number(a->detection_frequency[i]);
    out << '\n';
  }
}

/// Sensitivity and specificity per offset category and overall, one column per kappa model.
inline void write_sensitivity_table_csv(std::ostream& out, const StudyReport& rep) {
  std::vector<const ModelAggregate*> models;
  out << "measure,category";
  for (const auto& a : rep.aggregates) {
    if (!a.detection) continue;
    models.push_back(&a);
    out << ',' << a.model;
  }
  out << '\n';
  for (const bool sens : {true, false}) {
    auto cell = [&](const ConfusionCounts& c) {
      return optional_cell(sens ? c.sensitivity() : c.specificity());
    };
    for (auto cat : all_offset_categories()) {
      out << (sens ? "Sensitivity" : "Specificity") << ',' << to_string(cat);
      for (const auto* a : models) {
        const auto it = a->detection->by_category.find(std::string(to_string(cat)));
        out << ',' << (it == a->detection->by_category.end() ? std::string() : cell(it->second));
      }
      out << '\n';
    }
    out << (sens ? "Sensitivity" : "Specificity") << ",Overall";
    for (const auto* a : models) out << ',' << cell(a->detection->overall);
    out << '\n';
  }
}

inline void write_json_file(const std::filesystem::path& path, const Json& j) {
  auto out = open_output(path);
  out << j.dump(2) << '\n';
}

}  // namespace heavyrush
