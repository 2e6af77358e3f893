#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <boost/math/distributions/normal.hpp>
#include <Eigen/Dense>

#include "heavyrush/error.hpp"

namespace heavyrush {

/// Per-chain draws of one scalar quantity.
using ScalarChains = std::vector<std::vector<double>>;

namespace detail {

inline void check_chains(const ScalarChains& chains, std::size_t min_chains) {
  require(chains.size() >= min_chains, ErrorCode::InsufficientDraws,
          "need at least " + std::to_string(min_chains) + " chain(s)");
  for (const auto& c : chains) {
    require(c.size() >= 4, ErrorCode::InsufficientDraws, "need at least 4 draws per chain");
    require(c.size() == chains.front().size(), ErrorCode::DimensionMismatch,
            "all chains must have the same length");
  }
}

inline double mean(std::span<const double> x) {
  return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

inline double sample_variance(std::span<const double> x) {
  const double m = mean(x);
  double acc = 0.0;
  for (double v : x) acc += (v - m) * (v - m);
  return acc / static_cast<double>(x.size() - 1);
}

/// Each chain cut into a first and second half; the middle draw of odd chains is dropped.
inline ScalarChains split_halves(const ScalarChains& chains) {
  ScalarChains out;
  for (const auto& c : chains) {
    const std::size_t h = c.size() / 2;
    out.emplace_back(c.begin(), c.begin() + static_cast<std::ptrdiff_t>(h));
    out.emplace_back(c.end() - static_cast<std::ptrdiff_t>(h), c.end());
  }
  return out;
}

/// Potential scale reduction on already-split chains.
inline double rhat_of(const ScalarChains& chains) {
  const double n = static_cast<double>(chains.front().size());
  std::vector<double> means, vars;
  for (const auto& c : chains) {
    means.push_back(mean(c));
    vars.push_back(sample_variance(c));
  }
  const double w = mean(vars);
  const double b = n * sample_variance(means);
  if (!(w > 0.0)) return b > 0.0 ? std::numeric_limits<double>::infinity() : 1.0;
  const double var_plus = (n - 1.0) / n * w + b / n;
  return std::sqrt(var_plus / w);
}

/// Normal scores of pooled ranks, (r - 3/8) / (S + 1/4), ties given their average rank.
inline ScalarChains rank_normalize(const ScalarChains& chains) {
  std::vector<std::pair<double, std::size_t>> pooled;
  for (const auto& c : chains)
    for (double v : c) pooled.emplace_back(v, pooled.size());
  std::sort(pooled.begin(), pooled.end());
  const double total = static_cast<double>(pooled.size());
  std::vector<double> score(pooled.size());
  const boost::math::normal_distribution<> std_normal;
  for (std::size_t k = 0; k < pooled.size();) {
    std::size_t e = k;
    while (e + 1 < pooled.size() && pooled[e + 1].first == pooled[k].first) ++e;
    const double rank = 0.5 * static_cast<double>(k + e) + 1.0;
    const double z = boost::math::quantile(std_normal, (rank - 0.375) / (total + 0.25));
    for (std::size_t j = k; j <= e; ++j) score[pooled[j].second] = z;
    k = e + 1;
  }
  ScalarChains out;
  std::size_t pos = 0;
  for (const auto& c : chains) {
    out.emplace_back(score.begin() + static_cast<std::ptrdiff_t>(pos),
                     score.begin() + static_cast<std::ptrdiff_t>(pos + c.size()));
    pos += c.size();
  }
  return out;
}

}  // namespace detail

/**
 * @brief Split R-hat: the largest of the classic, rank-normalized (bulk)
 * and folded rank-normalized (tail) statistics on half-chains.
 *
 * Identical constant chains give 1; constant chains at different values give +inf.
 *
 * \see Vehtari, A., Gelman, A., Simpson, D., Carpenter, B. and Burkner, P.-C.
 * 2021. Rank-normalization, folding, and localization. Bayesian Analysis 16(2).
 */
inline double split_rhat(const ScalarChains& chains) {
  detail::check_chains(chains, 2);
  const ScalarChains split = detail::split_halves(chains);
  const double classic = detail::rhat_of(split);
  if (!std::isfinite(classic)) return classic;
  bool constant = true;
  for (const auto& c : split)
    for (double v : c) constant = constant && v == split.front().front();
  if (constant) return 1.0;

  const double bulk = detail::rhat_of(detail::rank_normalize(split));
  std::vector<double> pooled;
  for (const auto& c : split) pooled.insert(pooled.end(), c.begin(), c.end());
  std::nth_element(pooled.begin(), pooled.begin() + static_cast<std::ptrdiff_t>(pooled.size() / 2),
                   pooled.end());
  double median = pooled[pooled.size() / 2];
  if (pooled.size() % 2 == 0) {
    median = 0.5 * (median + *std::max_element(pooled.begin(),
                                                pooled.begin() + static_cast<std::ptrdiff_t>(pooled.size() / 2)));
  }
  ScalarChains folded = split;
  for (auto& c : folded)
    for (double& v : c) v = std::fabs(v - median);
  const double tail = detail::rhat_of(detail::rank_normalize(folded));
  return std::max({classic, bulk, tail});
}

/**
 * @brief Multi-chain effective sample size with Geyer's initial monotone
 * positive-pair truncation, clipped to [1, total draws].
 *
 * A single chain is accepted.
 *
 * \see Geyer, C.J. 1992. Practical Markov chain Monte Carlo. Statistical Science 7(4).
 */
inline double effective_sample_size(const ScalarChains& chains) {
  detail::check_chains(chains, 1);
  const std::size_t m = chains.size();
  const std::size_t n = chains.front().size();
  const double total = static_cast<double>(m * n);

  std::vector<double> means(m), vars(m);
  for (std::size_t c = 0; c < m; ++c) {
    means[c] = detail::mean(chains[c]);
    vars[c] = detail::sample_variance(chains[c]);
  }
  const double w = detail::mean(vars);
  const double b = m > 1 ? static_cast<double>(n) * detail::sample_variance(means) : 0.0;
  const double dn = static_cast<double>(n);
  const double var_plus = (dn - 1.0) / dn * w + b / dn;
  if (!(var_plus > 0.0) || !(w > 0.0)) return 1.0;

  // Biased autocovariance at lag k averaged over chains.
  auto acov = [&](std::size_t k) {
    double acc = 0.0;
    for (std::size_t c = 0; c < m; ++c) {
      double s = 0.0;
      for (std::size_t i = 0; i + k < n; ++i) s += (chains[c][i] - means[c]) * (chains[c][i + k] - means[c]);
      acc += s / dn;
    }
    return acc / static_cast<double>(m);
  };
  auto rho = [&](std::size_t k) { return 1.0 - (w - acov(k)) / var_plus; };

  double sum_pairs = 0.0;
  double prev_pair = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k + 1 < n; k += 2) {
    double pair = (k == 0 ? 1.0 : rho(k)) + rho(k + 1);
    if (pair < 0.0) break;
    pair = std::min(pair, prev_pair);
    sum_pairs += pair;
    prev_pair = pair;
  }
  const double tau = -1.0 + 2.0 * sum_pairs;
  const double ess = tau > 0.0 ? total / tau : total;
  return std::clamp(ess, 1.0, total);
}

/// WAIC and its ingredients; waic = -2 (lppd - p_w).
struct WaicResult {
  double waic = 0.0;
  double p_w = 0.0;
  double lppd = 0.0;
};

/**
 * @brief WAIC from an S x cells matrix of pointwise log-densities.
 *
 * lppd sums the per-cell log of the mean density (log-mean-exp); p_w sums
 * the per-cell sample variances (divisor S - 1).
 */
inline WaicResult compute_waic(const Eigen::MatrixXd& loglik) {
  require(loglik.rows() >= 2, ErrorCode::InsufficientDraws, "WAIC needs at least two draws");
  require(loglik.allFinite(), ErrorCode::InvalidArgument, "pointwise log-densities must be finite");
  const double s = static_cast<double>(loglik.rows());
  WaicResult out;
  for (Eigen::Index j = 0; j < loglik.cols(); ++j) {
    const auto col = loglik.col(j).array();
    const double mx = col.maxCoeff();
    out.lppd += mx + std::log((col - mx).exp().sum() / s);
    const double mu = col.mean();
    out.p_w += (col - mu).square().sum() / (s - 1.0);
  }
  out.waic = -2.0 * (out.lppd - out.p_w);
  return out;
}

/// Mean squared error over all time points of the masked areas.
inline double compute_mse(const Eigen::MatrixXd& fitted, const Eigen::MatrixXd& observed,
                          const std::vector<bool>& area_mask) {
  require(fitted.rows() == observed.rows() && fitted.cols() == observed.cols() &&
              area_mask.size() == static_cast<std::size_t>(fitted.rows()),
          ErrorCode::DimensionMismatch, "compute_mse dimension mismatch");
  double acc = 0.0;
  std::size_t cells = 0;
  for (Eigen::Index i = 0; i < fitted.rows(); ++i) {
    if (!area_mask[static_cast<std::size_t>(i)]) continue;
    acc += (fitted.row(i) - observed.row(i)).squaredNorm();
    cells += static_cast<std::size_t>(fitted.cols());
  }
  require(cells > 0, ErrorCode::EmptyMask, "MSE mask selects no areas");
  return acc / static_cast<double>(cells);
}

/// Linear-interpolation (type 7) quantile of `sorted` at probability p.
inline double quantile_sorted(std::span<const double> sorted, double p) {
  require(!sorted.empty(), ErrorCode::InsufficientDraws, "quantile of an empty sample");
  const double h = (static_cast<double>(sorted.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

inline double quantile(std::vector<double> draws, double p) {
  std::sort(draws.begin(), draws.end());
  return quantile_sorted(draws, p);
}

/// Equal-tailed interval at the given level; needs at least 2/(1-level) draws.
inline std::pair<double, double> credible_interval(std::vector<double> draws, double level = 0.95) {
  require(level > 0.0 && level < 1.0, ErrorCode::InvalidArgument, "level must lie in (0,1)");
  const double needed = std::ceil(2.0 / (1.0 - level) - 1e-9);
  require(static_cast<double>(draws.size()) >= needed, ErrorCode::InsufficientDraws,
          "too few draws for a credible interval at this level");
  std::sort(draws.begin(), draws.end());
  return {quantile_sorted(draws, 0.5 * (1.0 - level)), quantile_sorted(draws, 0.5 * (1.0 + level))};
}

/// Per-area kappa summaries and the outlier flag (upper 97.5% quantile < 1).
struct OutlierReport {
  std::vector<double> upper;
  std::vector<double> mean;
  std::vector<bool> flag;
};

/// `kappa_draws` is S x n (pooled draws).
inline OutlierReport detect_outliers(const Eigen::MatrixXd& kappa_draws) {
  require(kappa_draws.cols() > 0, ErrorCode::KappaAbsent, "model has no kappa parameters");
  OutlierReport rep;
  for (Eigen::Index i = 0; i < kappa_draws.cols(); ++i) {
    std::vector<double> d(kappa_draws.col(i).data(), kappa_draws.col(i).data() + kappa_draws.rows());
    const double up = credible_interval(d, 0.95).second;
    rep.upper.push_back(up);
    rep.mean.push_back(kappa_draws.col(i).mean());
    rep.flag.push_back(up < 1.0);
  }
  return rep;
}

struct ConfusionCounts {
  std::size_t tp = 0, fn = 0, tn = 0, fp = 0;

  /// 100 TP / (TP + FN); absent without positives.
  std::optional<double> sensitivity() const {
    if (tp + fn == 0) return std::nullopt;
    return 100.0 * static_cast<double>(tp) / static_cast<double>(tp + fn);
  }
  /// 100 TN / (TN + FP); absent without negatives.
  std::optional<double> specificity() const {
    if (tn + fp == 0) return std::nullopt;
    return 100.0 * static_cast<double>(tn) / static_cast<double>(tn + fp);
  }
};

struct DetectionScore {
  ConfusionCounts overall;
  std::map<std::string, ConfusionCounts> by_category;

  std::optional<double> sensitivity() const { return overall.sensitivity(); }
  std::optional<double> specificity() const { return overall.specificity(); }
};

inline DetectionScore score_detection(const std::vector<bool>& flags, const std::vector<bool>& truth,
                                      const std::vector<std::string>& categories) {
  require(flags.size() == truth.size() && categories.size() == truth.size(),
          ErrorCode::DimensionMismatch, "flags, truth and categories must have equal length");
  DetectionScore s;
  for (std::size_t i = 0; i < flags.size(); ++i) {
    auto& cat = s.by_category[categories[i]];
    for (ConfusionCounts* c : {&s.overall, &cat}) {
      if (truth[i]) {
        (flags[i] ? c->tp : c->fn)++;
      } else {
        (flags[i] ? c->fp : c->tn)++;
      }
    }
  }
  return s;
}

/// Posterior summary of one scalar parameter.
struct ParameterSummary {
  std::string name;
  double mean = 0.0;
  double sd = 0.0;
  double q025 = 0.0;
  double q975 = 0.0;
  double rhat = 1.0;
  double ess = 1.0;
};

using PosteriorSummary = std::vector<ParameterSummary>;

/// Summarizes one scalar from per-chain draws (R-hat needs two or more chains; one chain reports NaN).
inline ParameterSummary summarize_scalar(std::string name, const ScalarChains& chains) {
  ParameterSummary s;
  s.name = std::move(name);
  std::vector<double> pooled;
  for (const auto& c : chains) pooled.insert(pooled.end(), c.begin(), c.end());
  require(pooled.size() >= 2, ErrorCode::InsufficientDraws, "need at least two draws");
  s.mean = detail::mean(pooled);
  s.sd = std::sqrt(detail::sample_variance(pooled));
  std::sort(pooled.begin(), pooled.end());
  s.q025 = quantile_sorted(pooled, 0.025);
  s.q975 = quantile_sorted(pooled, 0.975);
  s.rhat = chains.size() >= 2 ? split_rhat(chains) : std::numeric_limits<double>::quiet_NaN();
  s.ess = effective_sample_size(chains);
  return s;
}

}  // namespace heavyrush
