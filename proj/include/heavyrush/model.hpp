#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <boost/math/special_functions/digamma.hpp>
#include <Eigen/Dense>

#include "heavyrush/error.hpp"
#include "heavyrush/gmrf.hpp"
#include "heavyrush/graph.hpp"
#include "heavyrush/rng.hpp"

namespace heavyrush {

enum class KappaPrior { None, IndependentGamma, LogPCAR };
enum class AlphaMode { FixedOne, Estimated };

/**
 * @brief Which model variant to fit, plus every prior hyperparameter.
 *
 * The six combinations of (kappa_prior, alpha_mode) are addressed by the
 * tags R1, Ralpha, HR1, HRalpha, HRLPC1 and HRLPCalpha.
 */
struct ModelSpec {
  KappaPrior kappa_prior = KappaPrior::None;
  AlphaMode alpha_mode = AlphaMode::Estimated;
  double nu_rate = 0.25;                 ///< rate of the exponential prior on nu
  double rho = 0.99;                     ///< PCAR dependence for the log-PCAR prior
  double beta0_sd = 1.0;
  double beta_sd = 1.0;
  double sigma_scale = 0.1;              ///< half-normal scale for sigma
  double sum_to_zero_sd_per_area = 0.001;  ///< sd of sum_i b_{i1} is this times n

  bool has_kappa() const noexcept { return kappa_prior != KappaPrior::None; }
  bool estimates_alpha() const noexcept { return alpha_mode == AlphaMode::Estimated; }

  std::string tag() const {
    std::string base = kappa_prior == KappaPrior::None               ? "R"
                       : kappa_prior == KappaPrior::IndependentGamma ? "HR"
                                                                     : "HRLPC";
    return base + (estimates_alpha() ? "alpha" : "1");
  }

  /// Human-facing label, e.g. "HR-LPC(alpha)".
  std::string label() const {
    std::string base = kappa_prior == KappaPrior::None               ? "R"
                       : kappa_prior == KappaPrior::IndependentGamma ? "HR"
                                                                     : "HR-LPC";
    return base + (estimates_alpha() ? "(alpha)" : "(1)");
  }

  static ModelSpec from_tag(std::string_view tag) {
    ModelSpec spec;
    std::string_view rest;
    if (tag.starts_with("HRLPC")) {
      spec.kappa_prior = KappaPrior::LogPCAR;
      spec.nu_rate = 1.0 / 0.3;
      rest = tag.substr(5);
    } else if (tag.starts_with("HR")) {
      spec.kappa_prior = KappaPrior::IndependentGamma;
      spec.nu_rate = 1.0 / 4.0;
      rest = tag.substr(2);
    } else if (tag.starts_with("R")) {
      spec.kappa_prior = KappaPrior::None;
      rest = tag.substr(1);
    } else {
      fail(ErrorCode::InvalidArgument, "unknown model tag '" + std::string(tag) + "'");
    }
    if (rest == "1") {
      spec.alpha_mode = AlphaMode::FixedOne;
    } else if (rest == "alpha") {
      spec.alpha_mode = AlphaMode::Estimated;
    } else {
      fail(ErrorCode::InvalidArgument, "unknown model tag '" + std::string(tag) + "'");
    }
    return spec;
  }
};

inline const std::vector<std::string>& all_model_tags() {
  static const std::vector<std::string> tags{"R1", "Ralpha", "HR1", "HRalpha", "HRLPC1", "HRLPCalpha"};
  return tags;
}

/// Panel of counts with time-constant offsets and area-level covariates.
struct Dataset {
  Eigen::MatrixXi counts;       ///< n x T
  Eigen::VectorXd offsets;      ///< n
  Eigen::MatrixXd covariates;   ///< n x p (p may be 0)

  std::size_t areas() const noexcept { return static_cast<std::size_t>(counts.rows()); }
  std::size_t times() const noexcept { return static_cast<std::size_t>(counts.cols()); }
  std::size_t covariate_count() const noexcept { return static_cast<std::size_t>(covariates.cols()); }
};

inline Dataset make_dataset(Eigen::MatrixXi counts, Eigen::VectorXd offsets,
                            Eigen::MatrixXd covariates = {}) {
  require(counts.rows() > 0 && counts.cols() > 0, ErrorCode::DimensionMismatch,
          "counts must be a non-empty n x T matrix");
  if (covariates.size() == 0) covariates.resize(counts.rows(), 0);
  require(offsets.size() == counts.rows() && covariates.rows() == counts.rows(),
          ErrorCode::DimensionMismatch, "offsets and covariates need one row per area");
  require((counts.array() >= 0).all(), ErrorCode::NegativeCount, "counts must be non-negative");
  for (Index i = 0; i < offsets.size(); ++i) {
    require(offsets[i] > 0.0 && std::isfinite(offsets[i]), ErrorCode::NonPositiveOffset,
            "offset of area " + std::to_string(i) + " must be positive");
  }
  require(covariates.allFinite(), ErrorCode::InvalidArgument, "covariates must be finite");
  return {std::move(counts), std::move(offsets), std::move(covariates)};
}

/// One point in the constrained parameter space.
struct ParameterState {
  double beta0 = 0.0;
  Eigen::VectorXd beta;
  double sigma = 1.0;
  double lambda = 0.5;
  double alpha = 1.0;
  Eigen::VectorXd kappa;  ///< all ones for Rushworth variants
  double nu = 1.0;
  Eigen::VectorXd z;      ///< log-PCAR auxiliary; log kappa_i = -nu/2 + z_i
  Eigen::MatrixXd b;      ///< n x T latent effects
};

/**
 * @brief Positions of each block inside the flat unconstrained vector.
 *
 * Order: beta0, beta, s, l, [a], [log kappa | z], [m], b (time-major:
 * b_{.1} first, then b_{.2}, ...). Absent blocks have length zero.
 */
struct ParameterLayout {
  Index n = 0, T = 0, p = 0;
  Index beta0 = 0, beta = 0, s = 0, l = 0, a = -1, kappa = -1, m = -1, b = 0, dim = 0;

  ParameterLayout() = default;
  ParameterLayout(const ModelSpec& spec, Index areas, Index times, Index covs)
      : n(areas), T(times), p(covs) {
    Index pos = 0;
    beta0 = pos++;
    beta = pos;
    pos += p;
    s = pos++;
    l = pos++;
    if (spec.estimates_alpha()) a = pos++;
    if (spec.has_kappa()) {
      kappa = pos;
      pos += n;
      m = pos++;
    }
    b = pos;
    pos += n * T;
    dim = pos;
  }
};

namespace detail {

inline double softplus(double x) noexcept {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

inline double logistic(double x) noexcept {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

/// ln(1 - tanh(a)^2), stable for large |a|.
inline double log_sech2(double a) noexcept {
  const double x = std::fabs(a);
  return std::log(4.0) - 2.0 * (x + std::log1p(std::exp(-2.0 * x)));
}

inline constexpr double kLogSqrt2Pi = 0.91893853320467274178;

inline double normal_lpdf(double x, double sd) noexcept {
  return -0.5 * (x / sd) * (x / sd) - std::log(sd) - kLogSqrt2Pi;
}

/// Contract a symmetric matrix restricted to the Congdon pattern against dQ.
struct PatternContraction {
  double dlambda = 0.0;
  Eigen::VectorXd dkappa;
};

template <typename Diag, typename Edge>
PatternContraction contract_pattern(const SpatialGraph& g, double lambda,
                                    const Eigen::VectorXd& kappa, Diag diag_entry,
                                    Edge edge_entry) {
  PatternContraction out;
  const Index n = as_index(g.size());
  out.dkappa = Eigen::VectorXd::Zero(n);
  for (Index i = 0; i < n; ++i) {
    const double d = static_cast<double>(g.degree(static_cast<std::size_t>(i)));
    const double mii = diag_entry(i);
    out.dlambda += kappa[i] * (d - 1.0) * mii;
    out.dkappa[i] += ((1.0 - lambda) + lambda * d) * mii;
  }
  for (std::size_t e = 0; e < g.edges().size(); ++e) {
    const Index i = as_index(g.edges()[e].first), j = as_index(g.edges()[e].second);
    const double mij = edge_entry(e, i, j);
    out.dlambda -= 2.0 * kappa[i] * kappa[j] * mij;
    out.dkappa[i] -= 2.0 * lambda * kappa[j] * mij;
    out.dkappa[j] -= 2.0 * lambda * kappa[i] * mij;
  }
  return out;
}

}  // namespace detail

/**
 * @brief Heavy Rushworth log-posterior over a fixed dataset and graph.
 *
 * Holds immutable inputs plus spec-derived constants (the scaled PCAR
 * precision for the log-PCAR prior). All evaluation methods are const and
 * allocate their own workspaces, so one instance may be shared across threads.
 */
class HeavyRushworthModel {
 public:
  HeavyRushworthModel(Dataset data, SpatialGraph graph, ModelSpec spec)
      : data_(std::move(data)), graph_(std::move(graph)), spec_(spec) {
    require(data_.areas() == graph_.size(), ErrorCode::DimensionMismatch,
            "dataset and graph disagree on the number of areas");
    require(spec_.rho >= 0.0 && spec_.rho < 1.0, ErrorCode::ParameterOutOfRange,
            "rho must lie in [0,1)");
    require(spec_.nu_rate > 0.0 && spec_.sigma_scale > 0.0 && spec_.beta0_sd > 0.0 &&
                spec_.beta_sd > 0.0 && spec_.sum_to_zero_sd_per_area > 0.0,
            ErrorCode::InvalidArgument, "prior scales must be positive");
    layout_ = ParameterLayout(spec_, as_index(data_.areas()), as_index(data_.times()),
                              as_index(data_.covariate_count()));
    log_offsets_ = data_.offsets.array().log();
    counts_ = data_.counts.cast<double>();
    likelihood_constant_ = 0.0;
    for (Index t = 0; t < counts_.cols(); ++t) {
      for (Index i = 0; i < counts_.rows(); ++i) {
        likelihood_constant_ += counts_(i, t) * log_offsets_[i] - std::lgamma(counts_(i, t) + 1.0);
      }
    }
    if (spec_.kappa_prior == KappaPrior::LogPCAR) {
      pcar_ = build_scaled_pcar_precision(graph_, spec_.rho);
      pcar_log_det_ = cholesky(pcar_->matrix).log_det();
    }
  }

  const Dataset& data() const noexcept { return data_; }
  const SpatialGraph& graph() const noexcept { return graph_; }
  const ModelSpec& spec() const noexcept { return spec_; }
  const ParameterLayout& layout() const noexcept { return layout_; }
  Index dimension() const noexcept { return layout_.dim; }
  const std::optional<ScaledPcar>& scaled_pcar() const noexcept { return pcar_; }

  // ---------------------------------------------------------------- transforms

  ParameterState constrain(const Eigen::VectorXd& u) const {
    require(u.size() == layout_.dim, ErrorCode::DimensionMismatch,
            "unconstrained vector has the wrong length");
    const auto& L = layout_;
    ParameterState s;
    s.beta0 = u[L.beta0];
    s.beta = u.segment(L.beta, L.p);
    s.sigma = std::exp(u[L.s]);
    s.lambda = detail::logistic(u[L.l]);
    s.alpha = spec_.estimates_alpha() ? std::tanh(u[L.a]) : 1.0;
    switch (spec_.kappa_prior) {
      case KappaPrior::None:
        s.kappa = Eigen::VectorXd::Ones(L.n);
        s.nu = std::numeric_limits<double>::quiet_NaN();
        break;
      case KappaPrior::IndependentGamma:
        s.kappa = u.segment(L.kappa, L.n).array().exp();
        s.nu = std::exp(u[L.m]);
        break;
      case KappaPrior::LogPCAR:
        s.nu = std::exp(u[L.m]);
        s.z = u.segment(L.kappa, L.n);
        s.kappa = (s.z.array() - 0.5 * s.nu).exp();
        break;
    }
    s.b = Eigen::Map<const Eigen::MatrixXd>(u.data() + L.b, L.n, L.T);
    return s;
  }

  Eigen::VectorXd unconstrain(const ParameterState& s) const {
    const auto& L = layout_;
    require(s.beta.size() == L.p && s.b.rows() == L.n && s.b.cols() == L.T,
            ErrorCode::DimensionMismatch, "state dimensions do not match the model");
    Eigen::VectorXd u(L.dim);
    u[L.beta0] = s.beta0;
    u.segment(L.beta, L.p) = s.beta;
    u[L.s] = std::log(s.sigma);
    u[L.l] = std::log(s.lambda) - std::log1p(-s.lambda);
    if (spec_.estimates_alpha()) u[L.a] = std::atanh(s.alpha);
    if (spec_.kappa_prior == KappaPrior::IndependentGamma) {
      u.segment(L.kappa, L.n) = s.kappa.array().log();
      u[L.m] = std::log(s.nu);
    } else if (spec_.kappa_prior == KappaPrior::LogPCAR) {
      u.segment(L.kappa, L.n) = s.z;
      u[L.m] = std::log(s.nu);
    }
    u.segment(L.b, L.n * L.T) = Eigen::Map<const Eigen::VectorXd>(s.b.data(), L.n * L.T);
    return u;
  }

  // ----------------------------------------------------------------- densities

  /// Per-cell Poisson log-pmf, n x T (ln Y! included).
  Eigen::MatrixXd cell_log_likelihood(const ParameterState& s) const {
    const Eigen::MatrixXd eta = linear_predictor(s);
    Eigen::MatrixXd out(eta.rows(), eta.cols());
    for (Index t = 0; t < eta.cols(); ++t) {
      for (Index i = 0; i < eta.rows(); ++i) {
        const double y = counts_(i, t);
        out(i, t) = y * (log_offsets_[i] + eta(i, t)) - data_.offsets[i] * std::exp(eta(i, t)) -
                    std::lgamma(y + 1.0);
      }
    }
    return out;
  }

  /// Posterior-predictive Poisson means E_i exp(eta_it), n x T.
  Eigen::MatrixXd fitted_means(const ParameterState& s) const {
    Eigen::MatrixXd eta = linear_predictor(s);
    for (Index t = 0; t < eta.cols(); ++t) {
      eta.col(t) = data_.offsets.array() * eta.col(t).array().exp();
    }
    return eta;
  }

  double log_likelihood(const ParameterState& s) const {
    const Eigen::MatrixXd eta = linear_predictor(s);
    double acc = likelihood_constant_;
    for (Index t = 0; t < eta.cols(); ++t) {
      acc += (counts_.col(t).array() * eta.col(t).array() -
              data_.offsets.array() * eta.col(t).array().exp())
                 .sum();
    }
    return acc;
  }

  /// All prior terms including the latent GMRF layers and the soft sum-to-zero term.
  double log_prior(const ParameterState& s) const { return prior_terms(s, nullptr); }

  /// Log posterior on the unconstrained scale; -inf if the precision is not PD.
  double log_posterior(const Eigen::VectorXd& u) const {
    return evaluate(u, nullptr);
  }

  /// Value and gradient in one pass. `grad` is left unspecified when the value is -inf.
  double log_posterior(const Eigen::VectorXd& u, Eigen::VectorXd& grad) const {
    grad.resize(layout_.dim);
    return evaluate(u, &grad);
  }

  Eigen::VectorXd grad_log_posterior(const Eigen::VectorXd& u) const {
    Eigen::VectorXd g;
    const double v = log_posterior(u, g);
    require(std::isfinite(v), ErrorCode::GradientUnavailable,
            "log posterior is not finite at this point");
    return g;
  }

  /// Prior-bulk starting point: beta0 ~ N(0,0.1), b ~ N(0,0.01), sigma 0.1, lambda 0.5,
  /// alpha 0.5, kappa 1, nu at its prior mean.
  Eigen::VectorXd initial_point(RandomStream& rng) const {
    const auto& L = layout_;
    ParameterState s;
    s.beta0 = rng.normal(0.0, 0.1);
    s.beta = Eigen::VectorXd(L.p);
    for (Index k = 0; k < L.p; ++k) s.beta[k] = rng.normal(0.0, 0.1);
    s.sigma = 0.1;
    s.lambda = 0.5;
    s.alpha = spec_.estimates_alpha() ? 0.5 : 1.0;
    s.nu = 1.0 / spec_.nu_rate;
    s.kappa = Eigen::VectorXd::Ones(L.n);
    s.z = Eigen::VectorXd::Constant(L.n, 0.5 * s.nu);
    s.b = Eigen::MatrixXd(L.n, L.T);
    for (Index t = 0; t < L.T; ++t) {
      for (Index i = 0; i < L.n; ++i) s.b(i, t) = rng.normal(0.0, 0.01);
    }
    return unconstrain(s);
  }

 private:
  Eigen::MatrixXd linear_predictor(const ParameterState& s) const {
    require(s.b.rows() == layout_.n && s.b.cols() == layout_.T && s.beta.size() == layout_.p,
            ErrorCode::DimensionMismatch, "state dimensions do not match the dataset");
    Eigen::VectorXd fixed = Eigen::VectorXd::Constant(layout_.n, s.beta0);
    if (layout_.p > 0) fixed += data_.covariates * s.beta;
    Eigen::MatrixXd eta = s.b;
    eta.colwise() += fixed;
    return eta;
  }

  struct Gradient {
    double beta0 = 0.0;
    Eigen::VectorXd beta;
    double sigma = 0.0, lambda = 0.0, alpha = 0.0, nu = 0.0;
    Eigen::VectorXd kappa, z;
    Eigen::MatrixXd b;
  };

  // Prior terms; accumulates constrained-scale gradients into `g` when non-null.
  double prior_terms(const ParameterState& s, Gradient* g) const {
    const Index n = layout_.n, T = layout_.T;
    if (!(s.sigma > 0.0) || !(s.lambda >= 0.0 && s.lambda <= 1.0)) {
      return -std::numeric_limits<double>::infinity();
    }
    if (spec_.estimates_alpha() && !(s.alpha > -1.0 && s.alpha < 1.0)) {
      return -std::numeric_limits<double>::infinity();
    }
    if (!(s.kappa.array() > 0.0).all() || !s.kappa.allFinite()) {
      return -std::numeric_limits<double>::infinity();
    }

    // Latent autoregressive GMRF layers share a single factorization.
    const PrecisionMatrix q = congdon_precision_entries(graph_, s.lambda, s.kappa);
    const auto factor = CholeskyFactor::attempt(q);
    if (!factor) return -std::numeric_limits<double>::infinity();

    const double alpha = spec_.estimates_alpha() ? s.alpha : 1.0;
    Eigen::MatrixXd resid = s.b;
    for (Index t = T - 1; t >= 1; --t) resid.col(t) -= alpha * s.b.col(t - 1);
    const Eigen::MatrixXd q_resid = q.entries * resid;
    const double quad = resid.cwiseProduct(q_resid).sum();
    const double sig2 = s.sigma * s.sigma;
    const double dn = static_cast<double>(n), dT = static_cast<double>(T);

    double lp = dT * (0.5 * factor->log_det() - dn * std::log(s.sigma) - dn * detail::kLogSqrt2Pi) -
                0.5 * quad / sig2;

    const double sum_sd = spec_.sum_to_zero_sd_per_area * dn;
    const double first_sum = s.b.col(0).sum();
    lp += detail::normal_lpdf(first_sum, sum_sd);

    lp += detail::normal_lpdf(s.beta0, spec_.beta0_sd);
    for (Index k = 0; k < s.beta.size(); ++k) lp += detail::normal_lpdf(s.beta[k], spec_.beta_sd);
    lp += std::log(2.0) + detail::normal_lpdf(s.sigma, spec_.sigma_scale);
    if (spec_.estimates_alpha()) lp -= std::log(2.0);

    if (g) {
      const Eigen::MatrixXd gr = -q_resid / sig2;
      g->b += gr;
      for (Index t = 1; t < T; ++t) {
        g->b.col(t - 1) -= alpha * gr.col(t);
        g->alpha -= gr.col(t).dot(s.b.col(t - 1));
      }
      g->b.col(0).array() -= first_sum / (sum_sd * sum_sd);
      g->sigma += -dT * dn / s.sigma + quad / (sig2 * s.sigma) - s.sigma / (spec_.sigma_scale * spec_.sigma_scale);
      g->beta0 += -s.beta0 / (spec_.beta0_sd * spec_.beta0_sd);
      g->beta.array() += -s.beta.array() / (spec_.beta_sd * spec_.beta_sd);

      const Eigen::MatrixXd cov = factor->inverse();
      const auto from_cov = detail::contract_pattern(
          graph_, s.lambda, s.kappa, [&](Index i) { return cov(i, i); },
          [&](std::size_t, Index i, Index j) { return cov(i, j); });
      const auto from_quad = detail::contract_pattern(
          graph_, s.lambda, s.kappa, [&](Index i) { return resid.row(i).squaredNorm(); },
          [&](std::size_t, Index i, Index j) { return resid.row(i).dot(resid.row(j)); });
      g->lambda += 0.5 * dT * from_cov.dlambda - 0.5 * from_quad.dlambda / sig2;
      g->kappa += 0.5 * dT * from_cov.dkappa - 0.5 * from_quad.dkappa / sig2;
    }

    if (spec_.kappa_prior == KappaPrior::IndependentGamma) {
      const double shape = 0.5 * s.nu;
      lp += std::log(spec_.nu_rate) - spec_.nu_rate * s.nu;
      const Eigen::ArrayXd log_kappa = s.kappa.array().log();
      lp += dn * (shape * std::log(shape) - std::lgamma(shape)) +
            ((shape - 1.0) * log_kappa - shape * s.kappa.array()).sum();
      if (g) {
        g->nu += -spec_.nu_rate +
                 0.5 * (dn * (std::log(shape) + 1.0 - boost::math::digamma(shape)) +
                        (log_kappa - s.kappa.array()).sum());
        g->kappa.array() += (shape - 1.0) / s.kappa.array() - shape;
      }
    } else if (spec_.kappa_prior == KappaPrior::LogPCAR) {
      lp += std::log(spec_.nu_rate) - spec_.nu_rate * s.nu;
      const Eigen::VectorXd qz = pcar_->matrix.entries * s.z;
      const double zq = s.z.dot(qz);
      lp += 0.5 * pcar_log_det_ - 0.5 * dn * std::log(s.nu) - dn * detail::kLogSqrt2Pi -
            0.5 * zq / s.nu;
      if (g) {
        g->nu += -spec_.nu_rate - 0.5 * dn / s.nu + 0.5 * zq / (s.nu * s.nu);
        g->z -= qz / s.nu;
      }
    }
    return lp;
  }

  double evaluate(const Eigen::VectorXd& u, Eigen::VectorXd* grad) const {
    const auto& L = layout_;
    require(u.size() == L.dim, ErrorCode::DimensionMismatch,
            "unconstrained vector has the wrong length");
    if (!u.allFinite()) return -std::numeric_limits<double>::infinity();
    const ParameterState s = constrain(u);

    Gradient g;
    Gradient* gp = nullptr;
    if (grad) {
      g.beta = Eigen::VectorXd::Zero(L.p);
      g.kappa = Eigen::VectorXd::Zero(L.n);
      g.z = Eigen::VectorXd::Zero(L.n);
      g.b = Eigen::MatrixXd::Zero(L.n, L.T);
      gp = &g;
    }

    double lp = prior_terms(s, gp);
    if (!std::isfinite(lp)) return -std::numeric_limits<double>::infinity();

    // Likelihood.
    const Eigen::MatrixXd eta = linear_predictor(s);
    double ll = likelihood_constant_;
    Eigen::MatrixXd resid_count(L.n, L.T);
    for (Index t = 0; t < L.T; ++t) {
      const Eigen::ArrayXd mu = data_.offsets.array() * eta.col(t).array().exp();
      ll += (counts_.col(t).array() * eta.col(t).array() - mu).sum();
      if (grad) resid_count.col(t) = counts_.col(t).array() - mu;
    }
    lp += ll;

    // Change-of-variables terms.
    const double l = u[L.l];
    lp += u[L.s];
    lp += l - 2.0 * detail::softplus(l);
    if (spec_.estimates_alpha()) lp += detail::log_sech2(u[L.a]);
    if (spec_.kappa_prior == KappaPrior::IndependentGamma) lp += u.segment(L.kappa, L.n).sum();
    if (spec_.has_kappa()) lp += u[L.m];

    if (!std::isfinite(lp)) return -std::numeric_limits<double>::infinity();
    if (!grad) return lp;

    g.b += resid_count;
    const Eigen::VectorXd area_resid = resid_count.rowwise().sum();
    g.beta0 += area_resid.sum();
    if (L.p > 0) g.beta += data_.covariates.transpose() * area_resid;

    Eigen::VectorXd& out = *grad;
    out[L.beta0] = g.beta0;
    out.segment(L.beta, L.p) = g.beta;
    out[L.s] = s.sigma * g.sigma + 1.0;
    const double lam_jac = detail::logistic(l) * detail::logistic(-l);
    out[L.l] = lam_jac * g.lambda + (1.0 - 2.0 * s.lambda);
    if (spec_.estimates_alpha()) out[L.a] = (1.0 - s.alpha * s.alpha) * g.alpha - 2.0 * s.alpha;
    if (spec_.kappa_prior == KappaPrior::IndependentGamma) {
      out.segment(L.kappa, L.n) = (g.kappa.array() * s.kappa.array() + 1.0).matrix();
      out[L.m] = s.nu * g.nu + 1.0;
    } else if (spec_.kappa_prior == KappaPrior::LogPCAR) {
      const Eigen::VectorXd chain = g.kappa.cwiseProduct(s.kappa);
      out.segment(L.kappa, L.n) = g.z + chain;
      const double dnu = g.nu - 0.5 * chain.sum();
      out[L.m] = s.nu * dnu + 1.0;
    }
    out.segment(L.b, L.n * L.T) = Eigen::Map<const Eigen::VectorXd>(g.b.data(), L.n * L.T);
    return lp;
  }

  Dataset data_;
  SpatialGraph graph_;
  ModelSpec spec_;
  ParameterLayout layout_;
  Eigen::VectorXd log_offsets_;
  Eigen::MatrixXd counts_;
  double likelihood_constant_ = 0.0;
  std::optional<ScaledPcar> pcar_;
  double pcar_log_det_ = 0.0;
};

// Free-function forms of the model operations.

inline double log_likelihood(const ParameterState& s, const Dataset& data, const SpatialGraph& g) {
  return HeavyRushworthModel(data, g, ModelSpec{}).log_likelihood(s);
}

inline double log_prior(const ParameterState& s, const ModelSpec& spec, const Dataset& data,
                        const SpatialGraph& g) {
  return HeavyRushworthModel(data, g, spec).log_prior(s);
}

inline double log_posterior(const Eigen::VectorXd& u, const Dataset& data, const ModelSpec& spec,
                            const SpatialGraph& g) {
  return HeavyRushworthModel(data, g, spec).log_posterior(u);
}

inline Eigen::VectorXd grad_log_posterior(const Eigen::VectorXd& u, const Dataset& data,
                                          const ModelSpec& spec, const SpatialGraph& g) {
  return HeavyRushworthModel(data, g, spec).grad_log_posterior(u);
}

}  // namespace heavyrush
