#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "heavyrush/error.hpp"
#include "heavyrush/gmrf.hpp"
#include "heavyrush/graph.hpp"
#include "heavyrush/model.hpp"
#include "heavyrush/rng.hpp"

namespace heavyrush {

using BoolMatrix = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>;

/**
 * @brief Latent effects from the Congdon-structured autoregressive GMRF.
 *
 * b_{.1} ~ N(0, sigma^2 Q_C^{-1}) and b_{.t} | b_{.t-1} ~ N(alpha b_{.t-1}, sigma^2 Q_C^{-1}).
 * One factorization serves every time slice. Returns an n x T matrix.
 */
inline Eigen::MatrixXd generate_heavy_rushworth_latents(RandomStream& rng, const SpatialGraph& g,
                                                        std::size_t T, double lambda, double sigma,
                                                        double alpha, const Eigen::VectorXd& kappa) {
  require(T > 0, ErrorCode::InvalidArgument, "T must be positive");
  require(lambda >= 0.0 && lambda < 1.0, ErrorCode::ParameterOutOfRange, "lambda must lie in [0,1)");
  require(std::fabs(alpha) <= 1.0, ErrorCode::ParameterOutOfRange, "|alpha| must not exceed 1");
  require(sigma > 0.0, ErrorCode::ParameterOutOfRange, "sigma must be positive");
  const auto q = build_congdon_precision(g, lambda, kappa);
  require(q.positive_definite(), ErrorCode::NotPositiveDefinite,
          "Congdon precision is not positive definite at the requested kappa");
  const Index n = as_index(g.size());
  Eigen::MatrixXd b(n, as_index(T));
  b.col(0) = sample_gmrf(rng, Eigen::VectorXd::Zero(n), *q.factor, sigma);
  for (Index t = 1; t < b.cols(); ++t) {
    b.col(t) = sample_gmrf(rng, alpha * b.col(t - 1), *q.factor, sigma);
  }
  return b;
}

/// Leroux-structured latent effects; identical stream usage to the kappa = 1 case above.
inline Eigen::MatrixXd generate_rushworth_latents(RandomStream& rng, const SpatialGraph& g,
                                                  std::size_t T, double lambda, double sigma,
                                                  double alpha) {
  return generate_heavy_rushworth_latents(rng, g, T, lambda, sigma, alpha,
                                          Eigen::VectorXd::Ones(as_index(g.size())));
}

/**
 * @brief kappa_i ~ Gamma(nu/2, nu/2) i.i.d., redrawn as a whole vector until
 * the Congdon precision at `lambda` is positive definite.
 *
 * This samples the gamma prior truncated to the region where the latent
 * model exists, the same support the fitted posterior has.
 */
inline Eigen::VectorXd draw_admissible_kappa(RandomStream& rng, const SpatialGraph& g, double lambda,
                                             double nu, std::size_t max_attempts = 10000) {
  require(nu > 0.0, ErrorCode::ParameterOutOfRange, "nu must be positive");
  const Index n = as_index(g.size());
  Eigen::VectorXd kappa(n);
  for (std::size_t a = 0; a < max_attempts; ++a) {
    for (Index i = 0; i < n; ++i) kappa[i] = rng.gamma(0.5 * nu, 0.5 * nu);
    if (build_congdon_precision(g, lambda, kappa).positive_definite()) return kappa;
  }
  fail(ErrorCode::NotPositiveDefinite, "no admissible kappa vector found for this graph and lambda");
}

/// Contamination indicators, magnitudes and the latent matrix before and after.
struct ContaminationRecord {
  BoolMatrix r;               ///< n x T; true where the cell was inflated
  Eigen::MatrixXd c;          ///< n x T; drawn magnitudes for target rows, zero elsewhere
  Eigen::VectorXd range;      ///< M_t = max(|min_i b_it|, |max_i b_it|) of the clean column
  Eigen::MatrixXd b_before;
  Eigen::MatrixXd b_after;
  std::vector<std::size_t> targets;
};

/**
 * @brief Additive outlier contamination of selected areas.
 *
 * For each target j (independently, in the given order) and t = 0..T-1:
 * r_{j0} ~ Ber(q); later r_{jt} keeps r_{j,t-1} with probability `persist`
 * and is otherwise redrawn from Ber(q). A magnitude c_{jt} ~ U(lo M_t, hi M_t)
 * is drawn for every target cell and added where r_{jt} = 1. M_t is taken
 * from the uncontaminated column.
 */
inline ContaminationRecord contaminate(RandomStream& rng, const Eigen::MatrixXd& b,
                                       const std::vector<std::size_t>& targets, double q = 0.4,
                                       double persist = 0.8, double mult_lo = 1.0,
                                       double mult_hi = 1.5) {
  require(!targets.empty(), ErrorCode::InvalidArgument, "contamination needs at least one target");
  require(q >= 0.0 && q <= 1.0 && persist >= 0.0 && persist <= 1.0, ErrorCode::ParameterOutOfRange,
          "contamination probabilities must lie in [0,1]");
  require(mult_lo <= mult_hi && mult_lo >= 0.0, ErrorCode::ParameterOutOfRange,
          "inflation multipliers must be ordered and non-negative");
  for (std::size_t j : targets) {
    require(j < static_cast<std::size_t>(b.rows()), ErrorCode::IndexOutOfRange,
            "contamination target " + std::to_string(j) + " is not an area");
  }
  ContaminationRecord rec;
  rec.targets = targets;
  rec.b_before = b;
  rec.b_after = b;
  rec.r = BoolMatrix::Constant(b.rows(), b.cols(), false);
  rec.c = Eigen::MatrixXd::Zero(b.rows(), b.cols());
  rec.range.resize(b.cols());
  for (Index t = 0; t < b.cols(); ++t) {
    rec.range[t] = std::max(std::fabs(b.col(t).minCoeff()), std::fabs(b.col(t).maxCoeff()));
  }
  for (std::size_t j : targets) {
    const Index jj = as_index(j);
    bool prev = false;
    for (Index t = 0; t < b.cols(); ++t) {
      bool r = false;
      if (t == 0) {
        r = rng.bernoulli(q);
      } else {
        r = rng.uniform() < persist ? prev : rng.bernoulli(q);
      }
      const double c = rng.uniform(mult_lo * rec.range[t], mult_hi * rec.range[t]);
      rec.r(jj, t) = r;
      rec.c(jj, t) = c;
      if (r) rec.b_after(jj, t) = rec.b_before(jj, t) + c;
      prev = r;
    }
  }
  return rec;
}

/// E_i = (sum_{i,t} Y_it / sum_i P_i) P_i / T.
inline Eigen::VectorXd compute_offsets(const Eigen::MatrixXi& counts, const Eigen::VectorXd& population,
                                       std::size_t T) {
  require(population.size() == counts.rows(), ErrorCode::DimensionMismatch,
          "population needs one entry per area");
  require(T > 0, ErrorCode::InvalidArgument, "T must be positive");
  const double total_pop = population.sum();
  require(total_pop > 0.0, ErrorCode::ZeroPopulation, "total population must be positive");
  const double total_y = counts.cast<double>().sum();
  return (total_y / total_pop) * population / static_cast<double>(T);
}

enum class OffsetCategory { Small, MediumLow, Medium, MediumHigh, High };

inline std::string_view to_string(OffsetCategory c) noexcept {
  switch (c) {
    case OffsetCategory::Small: return "Small";
    case OffsetCategory::MediumLow: return "Medium low";
    case OffsetCategory::Medium: return "Medium";
    case OffsetCategory::MediumHigh: return "Medium high";
    case OffsetCategory::High: return "High";
  }
  return "Small";
}

inline const std::vector<OffsetCategory>& all_offset_categories() {
  static const std::vector<OffsetCategory> all{OffsetCategory::Small, OffsetCategory::MediumLow,
                                               OffsetCategory::Medium, OffsetCategory::MediumHigh,
                                               OffsetCategory::High};
  return all;
}

/// Half-open bands [0,26), [26,45), [45,108), [108,147), [147,inf).
inline OffsetCategory offset_category(double e) {
  require(e >= 0.0, ErrorCode::InvalidArgument, "offset must be non-negative");
  if (e < 26.0) return OffsetCategory::Small;
  if (e < 45.0) return OffsetCategory::MediumLow;
  if (e < 108.0) return OffsetCategory::Medium;
  if (e < 147.0) return OffsetCategory::MediumHigh;
  return OffsetCategory::High;
}

/// Y_it ~ Pois(E_i exp(beta0 + x_i' beta + b_it)), drawn column by column.
inline Eigen::MatrixXi generate_counts(RandomStream& rng, const Eigen::VectorXd& offsets, double beta0,
                                       const Eigen::VectorXd& beta, const Eigen::MatrixXd& covariates,
                                       const Eigen::MatrixXd& b) {
  require(offsets.size() == b.rows(), ErrorCode::DimensionMismatch, "offsets need one entry per area");
  require((offsets.array() > 0.0).all(), ErrorCode::NonPositiveOffset, "offsets must be positive");
  Eigen::VectorXd fixed = Eigen::VectorXd::Constant(b.rows(), beta0);
  if (beta.size() > 0) {
    require(covariates.rows() == b.rows() && covariates.cols() == beta.size(),
            ErrorCode::DimensionMismatch, "covariates do not match beta");
    fixed += covariates * beta;
  }
  Eigen::MatrixXi y(b.rows(), b.cols());
  for (Index t = 0; t < b.cols(); ++t) {
    for (Index i = 0; i < b.rows(); ++i) {
      const double mean = offsets[i] * std::exp(fixed[i] + b(i, t));
      y(i, t) = static_cast<int>(rng.poisson(mean));
    }
  }
  return y;
}

/// Offsets E_i ~ Pois(mean), redrawn until positive.
inline Eigen::VectorXd generate_poisson_offsets(RandomStream& rng, std::size_t n, double mean) {
  require(mean > 0.0, ErrorCode::InvalidArgument, "offset mean must be positive");
  Eigen::VectorXd e(as_index(n));
  for (Index i = 0; i < e.size(); ++i) {
    std::int64_t v = 0;
    while (v == 0) v = rng.poisson(mean);
    e[i] = static_cast<double>(v);
  }
  return e;
}

/// How latent effects are shared across replicates.
enum class LatentSharing { PerReplicate, Shared };

/**
 * @brief Everything needed to generate replicate datasets.
 *
 * Latent effects come from the Leroux model unless `nu` is set, in which
 * case kappa_i ~ Gamma(nu/2, nu/2) and the Congdon model is used.
 */
struct SimulationScenario {
  SpatialGraph graph;
  std::size_t T = 0;
  double beta0 = -1.0;
  Eigen::VectorXd beta;        ///< p, may be empty
  Eigen::MatrixXd covariates;  ///< n x p, may be empty
  double lambda = 0.7;
  double sigma = 0.3;
  double alpha = 0.85;
  std::optional<double> nu;
  std::optional<Eigen::VectorXd> offsets;  ///< supplied E; otherwise Pois(offset_mean)
  double offset_mean = 40.0;
  std::vector<std::size_t> contamination;  ///< target areas; empty disables contamination
  double q = 0.4;
  double persist = 0.8;
  double mult_lo = 1.0;
  double mult_hi = 1.5;
  std::size_t replicates = 1;
  std::uint64_t seed = 0;
  LatentSharing latents = LatentSharing::PerReplicate;

  std::size_t areas() const noexcept { return graph.size(); }

  void validate() const {
    require(T > 0, ErrorCode::InvalidArgument, "scenario T must be positive");
    require(replicates > 0, ErrorCode::InvalidArgument, "scenario needs at least one replicate");
    require(mult_lo <= mult_hi, ErrorCode::ParameterOutOfRange, "inflation multipliers must be ordered");
    for (std::size_t j : contamination) {
      require(j < areas(), ErrorCode::IndexOutOfRange,
              "contaminated area " + std::to_string(j) + " is not in the graph");
    }
    if (offsets) {
      require(static_cast<std::size_t>(offsets->size()) == areas(), ErrorCode::DimensionMismatch,
              "scenario offsets need one entry per area");
      require((offsets->array() > 0.0).all(), ErrorCode::NonPositiveOffset, "offsets must be positive");
    }
    if (beta.size() > 0) {
      require(covariates.rows() == as_index(areas()) && covariates.cols() == beta.size(),
              ErrorCode::DimensionMismatch, "scenario covariates do not match beta");
    }
    if (nu) require(*nu > 0.0, ErrorCode::ParameterOutOfRange, "nu must be positive");
  }
};

/// One generated replicate with its ground truth.
struct SimulatedDataset {
  std::size_t replicate = 0;
  Dataset data;
  Eigen::MatrixXd b;                 ///< latent effects used for the counts (after contamination)
  Eigen::VectorXd kappa;             ///< true kappa (ones for Leroux generation)
  std::optional<ContaminationRecord> contamination;
  std::vector<bool> outlier_truth;   ///< per area: member of the contamination set
};

/// Study-wide offsets: supplied, or Pois(offset_mean) from the Offsets stream.
inline Eigen::VectorXd scenario_offsets(const SimulationScenario& sc) {
  if (sc.offsets) return *sc.offsets;
  RandomStream rng(sc.seed, StreamPurpose::Offsets);
  return generate_poisson_offsets(rng, sc.areas(), sc.offset_mean);
}

/**
 * @brief Generates replicate `r` from stream identifiers (seed, purpose, key).
 *
 * The key is 0 for latent and contamination streams when latents are
 * shared, otherwise r. Counts always use the replicate's own stream.
 */
inline SimulatedDataset simulate_replicate(const SimulationScenario& sc, std::size_t r,
                                           const Eigen::VectorXd& offsets) {
  sc.validate();
  const std::uint64_t key = sc.latents == LatentSharing::Shared ? 0 : r;
  const Index n = as_index(sc.areas());
  SimulatedDataset out;
  out.replicate = r;

  RandomStream gen(sc.seed, StreamPurpose::Generation, key);
  out.kappa = sc.nu ? draw_admissible_kappa(gen, sc.graph, sc.lambda, *sc.nu) : Eigen::VectorXd::Ones(n);
  Eigen::MatrixXd b = generate_heavy_rushworth_latents(gen, sc.graph, sc.T, sc.lambda, sc.sigma,
                                                       sc.alpha, out.kappa);
  out.outlier_truth.assign(sc.areas(), false);
  if (!sc.contamination.empty()) {
    RandomStream cont(sc.seed, StreamPurpose::Contamination, key);
    out.contamination = contaminate(cont, b, sc.contamination, sc.q, sc.persist, sc.mult_lo, sc.mult_hi);
    b = out.contamination->b_after;
    for (std::size_t j : sc.contamination) out.outlier_truth[j] = true;
  }
  RandomStream counts_rng(sc.seed, StreamPurpose::Counts, r);
  Eigen::MatrixXd x = sc.covariates;
  if (x.size() == 0) x.resize(n, 0);
  const Eigen::MatrixXi y = generate_counts(counts_rng, offsets, sc.beta0, sc.beta, x, b);
  out.data = make_dataset(y, offsets, x);
  out.b = std::move(b);
  return out;
}

inline std::vector<SimulatedDataset> simulate_study(const SimulationScenario& sc) {
  sc.validate();
  const Eigen::VectorXd offsets = scenario_offsets(sc);
  std::vector<SimulatedDataset> out;
  out.reserve(sc.replicates);
  for (std::size_t r = 0; r < sc.replicates; ++r) out.push_back(simulate_replicate(sc, r, offsets));
  return out;
}

}  // namespace heavyrush
