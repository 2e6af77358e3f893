#pragma once

#include <algorithm>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "heavyrush/diagnostics.hpp"
#include "heavyrush/model.hpp"
#include "heavyrush/sampler.hpp"

namespace heavyrush {

/// Convergence threshold on split R-hat used for fit status and exit codes.
inline constexpr double kRhatThreshold = 1.1;

/**
 * @brief Draws and derived quantities of one model fit.
 *
 * Constrained draws are laid out per chain as retained x parameters in the
 * order of `parameter_names`: beta0, beta[k], sigma, lambda, [alpha],
 * [nu, kappa[i]], b[i][t] (t-major). Pooled matrices stack chain 0 first.
 */
struct FitResult {
  ModelSpec spec;
  ChainConfig config;
  std::vector<ChainOutput> chains;
  std::vector<std::string> parameter_names;
  std::vector<Eigen::MatrixXd> constrained;  ///< per chain
  Eigen::MatrixXd loglik;                    ///< pooled S x (n T), cell index i + n t
  Eigen::MatrixXd fitted_mean;               ///< n x T posterior mean of E_i exp(eta_it)
  PosteriorSummary summary;
  std::optional<OutlierReport> outliers;
  WaicResult waic;
  double max_rhat = 1.0;
  std::size_t divergences = 0;

  bool converged() const noexcept { return max_rhat <= kRhatThreshold; }

  std::size_t parameter_index(const std::string& name) const {
    const auto it = std::find(parameter_names.begin(), parameter_names.end(), name);
    require(it != parameter_names.end(), ErrorCode::InvalidArgument, "no parameter named " + name);
    return static_cast<std::size_t>(it - parameter_names.begin());
  }

  /// Pooled draws of one named parameter.
  std::vector<double> pooled(const std::string& name) const {
    const auto j = static_cast<Index>(parameter_index(name));
    std::vector<double> out;
    for (const auto& c : constrained)
      for (Index k = 0; k < c.rows(); ++k) out.push_back(c(k, j));
    return out;
  }

  const ParameterSummary& summary_of(const std::string& name) const {
    return summary.at(parameter_index(name));
  }
};

inline std::vector<std::string> parameter_names(const HeavyRushworthModel& m) {
  const auto& L = m.layout();
  std::vector<std::string> names{"beta0"};
  for (Index k = 0; k < L.p; ++k) names.push_back("beta[" + std::to_string(k) + "]");
  names.push_back("sigma");
  names.push_back("lambda");
  if (m.spec().estimates_alpha()) names.push_back("alpha");
  if (m.spec().has_kappa()) {
    names.push_back("nu");
    for (Index i = 0; i < L.n; ++i) names.push_back("kappa[" + std::to_string(i) + "]");
  }
  for (Index t = 0; t < L.T; ++t)
    for (Index i = 0; i < L.n; ++i)
      names.push_back("b[" + std::to_string(i) + "][" + std::to_string(t) + "]");
  return names;
}

/// Flattens a constrained state in the order of parameter_names().
inline Eigen::VectorXd flatten_state(const HeavyRushworthModel& m, const ParameterState& s) {
  const auto& L = m.layout();
  std::vector<double> v{s.beta0};
  for (Index k = 0; k < L.p; ++k) v.push_back(s.beta[k]);
  v.push_back(s.sigma);
  v.push_back(s.lambda);
  if (m.spec().estimates_alpha()) v.push_back(s.alpha);
  if (m.spec().has_kappa()) {
    v.push_back(s.nu);
    for (Index i = 0; i < L.n; ++i) v.push_back(s.kappa[i]);
  }
  for (Index t = 0; t < L.T; ++t)
    for (Index i = 0; i < L.n; ++i) v.push_back(s.b(i, t));
  return Eigen::Map<Eigen::VectorXd>(v.data(), static_cast<Index>(v.size()));
}

/// Index of the first kappa column in the constrained layout, or -1.
inline Index kappa_column(const HeavyRushworthModel& m) {
  if (!m.spec().has_kappa()) return -1;
  return 1 + m.layout().p + 2 + (m.spec().estimates_alpha() ? 1 : 0) + 1;
}

/**
 * @brief Derives summaries, WAIC, fitted means and outlier flags from chain output.
 */
inline FitResult assemble_fit(const HeavyRushworthModel& model, const ChainConfig& cfg,
                              std::vector<ChainOutput> chains) {
  FitResult fit;
  fit.spec = model.spec();
  fit.config = cfg;
  fit.parameter_names = parameter_names(model);
  const Index n = model.layout().n, T = model.layout().T;
  const Index P = static_cast<Index>(fit.parameter_names.size());
  std::size_t total = 0;
  for (const auto& c : chains) total += static_cast<std::size_t>(c.draws.rows());
  fit.loglik.resize(static_cast<Index>(total), n * T);
  fit.fitted_mean = Eigen::MatrixXd::Zero(n, T);

  Index row = 0;
  for (const auto& c : chains) {
    Eigen::MatrixXd con(c.draws.rows(), P);
    for (Index k = 0; k < c.draws.rows(); ++k) {
      const ParameterState s = model.constrain(c.draws.row(k).transpose());
      con.row(k) = flatten_state(model, s).transpose();
      const Eigen::MatrixXd ll = model.cell_log_likelihood(s);
      fit.loglik.row(row) = Eigen::Map<const Eigen::RowVectorXd>(ll.data(), n * T);
      fit.fitted_mean += model.fitted_means(s);
      ++row;
    }
    fit.divergences += c.divergences;
    fit.constrained.push_back(std::move(con));
  }
  fit.fitted_mean /= static_cast<double>(total);
  fit.chains = std::move(chains);

  fit.max_rhat = 1.0;
  for (Index j = 0; j < P; ++j) {
    ScalarChains per_chain;
    for (const auto& con : fit.constrained) {
      per_chain.emplace_back(con.col(j).data(), con.col(j).data() + con.rows());
    }
    fit.summary.push_back(summarize_scalar(fit.parameter_names[static_cast<std::size_t>(j)], per_chain));
    const double r = fit.summary.back().rhat;
    if (!std::isnan(r)) fit.max_rhat = std::max(fit.max_rhat, r);
  }
  fit.waic = compute_waic(fit.loglik);
  if (model.spec().has_kappa()) {
    const Index k0 = kappa_column(model);
    Eigen::MatrixXd kd(static_cast<Index>(total), n);
    Index r = 0;
    for (const auto& con : fit.constrained) {
      kd.middleRows(r, con.rows()) = con.middleCols(k0, n);
      r += con.rows();
    }
    fit.outliers = detect_outliers(kd);
  }
  return fit;
}

/**
 * @brief Fits one model variant: initialization, chains and assembly.
 *
 * Chain c starts from model.initial_point drawn from stream
 * (seed, Initialization, c, stream_key), retried up to 100 times.
 */
inline FitResult fit_model(const HeavyRushworthModel& model, const ChainConfig& cfg) {
  cfg.validate();
  const auto& L = model.layout();
  const bool scaled = cfg.latents == LatentParametrization::ScaleNoncentred;
  const GradientTarget model_target = [&model](const Eigen::VectorXd& u, Eigen::VectorXd& g) {
    return model.log_posterior(u, g);
  };
  const GradientTarget scaled_target = [&model, &L](const Eigen::VectorXd& v, Eigen::VectorXd& g) {
    Eigen::VectorXd u = v;
    const double sigma = std::exp(v[L.s]);
    u.segment(L.b, L.n * L.T) *= sigma;
    const double lp = model.log_posterior(u, g);
    if (!std::isfinite(lp)) return lp;
    auto gb = g.segment(L.b, L.n * L.T);
    g[L.s] += gb.dot(u.segment(L.b, L.n * L.T)) + static_cast<double>(L.n * L.T);
    gb *= sigma;
    return lp + static_cast<double>(L.n * L.T) * v[L.s];
  };
  const GradientTarget& target = scaled ? scaled_target : model_target;
  auto to_sampler = [&](Eigen::VectorXd u) {
    if (scaled) u.segment(L.b, L.n * L.T) /= std::exp(u[L.s]);
    return u;
  };
  std::vector<Eigen::VectorXd> inits;
  for (std::size_t c = 0; c < cfg.chains; ++c) {
    RandomStream rng(cfg.seed, StreamPurpose::Initialization, c, cfg.stream_key);
    inits.push_back(find_initial_point(
        target, [&](RandomStream& r) { return to_sampler(model.initial_point(r)); }, rng));
  }
  std::vector<ChainOutput> chains = run_chains(target, cfg, inits);
  if (scaled) {
    for (auto& c : chains) {
      for (Index k = 0; k < c.draws.rows(); ++k) {
        c.draws.row(k).segment(L.b, L.n * L.T) *= std::exp(c.draws(k, L.s));
        c.log_density[static_cast<std::size_t>(k)] -= static_cast<double>(L.n * L.T) * c.draws(k, L.s);
      }
    }
  }
  return assemble_fit(model, cfg, std::move(chains));
}

inline FitResult fit_model(const Dataset& data, const SpatialGraph& g, const ModelSpec& spec,
                           const ChainConfig& cfg) {
  return fit_model(HeavyRushworthModel(data, g, spec), cfg);
}

}  // namespace heavyrush
