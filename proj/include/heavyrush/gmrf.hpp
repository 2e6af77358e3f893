#pragma once

#include <cmath>
#include <cstddef>
#include <memory>
#include <numbers>
#include <optional>
#include <variant>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include "heavyrush/error.hpp"
#include "heavyrush/graph.hpp"
#include "heavyrush/rng.hpp"

namespace heavyrush {

using Index = Eigen::Index;
using SparseMatrix = Eigen::SparseMatrix<double>;

inline Index as_index(std::size_t i) noexcept { return static_cast<Index>(i); }

enum class PrecisionStructure { Leroux, Congdon, ScaledPCAR, General };

/**
 * @brief Sparse symmetric precision matrix (both triangles stored).
 *
 * The diagonal is always present in the sparsity pattern, even when zero;
 * off-diagonal entries only occur on edges of the generating graph.
 */
struct PrecisionMatrix {
  SparseMatrix entries;
  PrecisionStructure structure = PrecisionStructure::General;

  Index size() const noexcept { return entries.rows(); }
  double operator()(Index i, Index j) const { return entries.coeff(i, j); }
  Eigen::MatrixXd dense() const { return Eigen::MatrixXd(entries); }
};

/// Factorizations at or below this dimension use a dense LLT.
inline constexpr std::size_t kDenseFactorMax = 64;
/// Largest dimension for which an explicit dense inverse is formed.
inline constexpr std::size_t kDenseInverseCap = 2000;

/**
 * @brief Cholesky factor of a positive definite precision matrix.
 *
 * Small matrices use a dense LLT; larger ones a simplicial sparse LLT with a
 * fixed AMD fill-reducing ordering. Both backends expose the same operations.
 * Copies share the underlying immutable factorization.
 */
class CholeskyFactor {
 public:
  using DenseLLT = Eigen::LLT<Eigen::MatrixXd>;
  using SparseLLT = Eigen::SimplicialLLT<SparseMatrix, Eigen::Lower, Eigen::AMDOrdering<int>>;

  /// Returns an empty optional when the matrix is not positive definite.
  static std::optional<CholeskyFactor> attempt(const PrecisionMatrix& p,
                                               std::size_t dense_max = kDenseFactorMax) {
    CholeskyFactor f;
    f.n_ = p.size();
    if (static_cast<std::size_t>(p.size()) <= dense_max) {
      auto llt = std::make_shared<DenseLLT>(p.dense());
      if (llt->info() != Eigen::Success) return std::nullopt;
      const auto diag = llt->matrixLLT().diagonal();
      if (!(diag.array() > 0.0).all() || !diag.allFinite()) return std::nullopt;
      f.log_det_ = 2.0 * diag.array().log().sum();
      f.dense_ = std::move(llt);
    } else {
      auto llt = std::make_shared<SparseLLT>(p.entries);
      if (llt->info() != Eigen::Success) return std::nullopt;
      const Eigen::VectorXd diag = SparseMatrix(llt->matrixL()).diagonal();
      if (!(diag.array() > 0.0).all() || !diag.allFinite()) return std::nullopt;
      f.log_det_ = 2.0 * diag.array().log().sum();
      f.sparse_ = std::move(llt);
    }
    return f;
  }

  Index size() const noexcept { return n_; }

  /// log det of the factored precision matrix.
  double log_det() const noexcept { return log_det_; }

  Eigen::VectorXd solve(const Eigen::VectorXd& rhs) const {
    return dense_ ? Eigen::VectorXd(dense_->solve(rhs)) : Eigen::VectorXd(sparse_->solve(rhs));
  }

  /// x with Cov(x) = P^{-1} when z is standard normal: x = P^{-1}_perm L^{-T} z.
  Eigen::VectorXd colour(const Eigen::VectorXd& z) const {
    if (dense_) return dense_->matrixU().solve(z);
    Eigen::VectorXd y = sparse_->matrixU().solve(z);
    return sparse_->permutationPinv() * y;
  }

  /// Dense inverse of the precision (covariance up to scale).
  Eigen::MatrixXd inverse() const {
    require(static_cast<std::size_t>(n_) <= kDenseInverseCap, ErrorCode::SizeLimitExceeded,
            "dense inverse requested above the size cap");
    const Eigen::MatrixXd id = Eigen::MatrixXd::Identity(n_, n_);
    if (dense_) return dense_->solve(id);
    return sparse_->solve(id);
  }

  /// L L^T mapped back to the original ordering.
  Eigen::MatrixXd reconstruct() const {
    if (dense_) return dense_->reconstructedMatrix();
    const Eigen::MatrixXd l = SparseMatrix(sparse_->matrixL());
    const Eigen::MatrixXd permuted = l * l.transpose();
    return sparse_->permutationPinv() * permuted * sparse_->permutationP();
  }

  bool is_dense() const noexcept { return static_cast<bool>(dense_); }

 private:
  CholeskyFactor() = default;

  Index n_ = 0;
  double log_det_ = 0.0;
  std::shared_ptr<const DenseLLT> dense_;
  std::shared_ptr<const SparseLLT> sparse_;
};

inline CholeskyFactor cholesky(const PrecisionMatrix& p, std::size_t dense_max = kDenseFactorMax) {
  auto f = CholeskyFactor::attempt(p, dense_max);
  if (!f) fail(ErrorCode::NotPositiveDefinite, "precision matrix is not positive definite");
  return *std::move(f);
}

namespace detail {

inline PrecisionMatrix assemble(const SpatialGraph& g, const Eigen::VectorXd& diag,
                                const std::vector<double>& offdiag, PrecisionStructure tag) {
  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(g.size() + 2 * g.edges().size());
  for (std::size_t i = 0; i < g.size(); ++i) trips.emplace_back(as_index(i), as_index(i), diag[as_index(i)]);
  for (std::size_t e = 0; e < g.edges().size(); ++e) {
    const auto [i, j] = g.edges()[e];
    trips.emplace_back(as_index(i), as_index(j), offdiag[e]);
    trips.emplace_back(as_index(j), as_index(i), offdiag[e]);
  }
  PrecisionMatrix p;
  p.structure = tag;
  p.entries.resize(as_index(g.size()), as_index(g.size()));
  p.entries.setFromTriplets(trips.begin(), trips.end());
  p.entries.makeCompressed();
  return p;
}

inline void check_unit_interval(double v, const char* name) {
  require(v >= 0.0 && v <= 1.0, ErrorCode::ParameterOutOfRange,
          std::string(name) + " must lie in [0,1]");
}

}  // namespace detail

/// Leroux precision (1-lambda) I + lambda (D - W).
inline PrecisionMatrix build_leroux_precision(const SpatialGraph& g, double lambda) {
  detail::check_unit_interval(lambda, "lambda");
  Eigen::VectorXd diag(as_index(g.size()));
  for (std::size_t i = 0; i < g.size(); ++i) {
    diag[as_index(i)] = (1.0 - lambda) + lambda * static_cast<double>(g.degree(i));
  }
  std::vector<double> off(g.edges().size(), -lambda);
  return detail::assemble(g, diag, off, PrecisionStructure::Leroux);
}

/// Congdon precision: diagonal kappa_i (1-lambda+lambda d_i), edges -lambda kappa_i kappa_j.
inline PrecisionMatrix congdon_precision_entries(const SpatialGraph& g, double lambda,
                                                 const Eigen::VectorXd& kappa) {
  detail::check_unit_interval(lambda, "lambda");
  require(static_cast<std::size_t>(kappa.size()) == g.size(), ErrorCode::DimensionMismatch,
          "kappa length must equal the number of areas");
  require((kappa.array() > 0.0).all(), ErrorCode::NonPositiveKappa, "every kappa must be positive");
  Eigen::VectorXd diag(as_index(g.size()));
  for (std::size_t i = 0; i < g.size(); ++i) {
    diag[as_index(i)] =
        kappa[as_index(i)] * ((1.0 - lambda) + lambda * static_cast<double>(g.degree(i)));
  }
  std::vector<double> off(g.edges().size());
  for (std::size_t e = 0; e < g.edges().size(); ++e) {
    const auto [i, j] = g.edges()[e];
    off[e] = -lambda * kappa[as_index(i)] * kappa[as_index(j)];
  }
  return detail::assemble(g, diag, off, PrecisionStructure::Congdon);
}

struct CongdonPrecision {
  PrecisionMatrix matrix;
  std::optional<CholeskyFactor> factor;  ///< set iff the matrix is positive definite

  bool positive_definite() const noexcept { return factor.has_value(); }
};

/// Congdon precision plus the outcome of an attempted factorization.
inline CongdonPrecision build_congdon_precision(const SpatialGraph& g, double lambda,
                                                const Eigen::VectorXd& kappa) {
  CongdonPrecision out{congdon_precision_entries(g, lambda, kappa), std::nullopt};
  out.factor = CholeskyFactor::attempt(out.matrix);
  return out;
}

struct ScaledPcar {
  PrecisionMatrix matrix;  ///< h_rho (D - rho W)
  double h = 1.0;          ///< geometric mean of the unscaled marginal variances
};

/**
 * @brief Proper CAR precision D - rho W scaled so that the geometric mean of
 * the marginal variances is one.
 *
 * The scale is exp(mean_i ln[(D - rho W)^{-1}]_ii), taken from an exact
 * dense inverse. Matrices larger than `dense_cap` are rejected.
 */
inline ScaledPcar build_scaled_pcar_precision(const SpatialGraph& g, double rho,
                                              std::size_t dense_cap = kDenseInverseCap) {
  require(rho >= 0.0 && rho < 1.0, ErrorCode::ParameterOutOfRange, "rho must lie in [0,1)");
  require(g.size() <= dense_cap, ErrorCode::SizeLimitExceeded,
          "scaled PCAR needs a dense inverse; graph exceeds the configured cap");
  for (std::size_t i = 0; i < g.size(); ++i) {
    require(g.degree(i) > 0, ErrorCode::IsolatedArea,
            "area " + std::to_string(i) + " has no neighbours; D - rho W is singular");
  }
  Eigen::VectorXd diag(as_index(g.size()));
  for (std::size_t i = 0; i < g.size(); ++i) diag[as_index(i)] = static_cast<double>(g.degree(i));
  std::vector<double> off(g.edges().size(), -rho);
  PrecisionMatrix q = detail::assemble(g, diag, off, PrecisionStructure::ScaledPCAR);

  const Eigen::MatrixXd dense = q.dense();
  Eigen::LLT<Eigen::MatrixXd> llt(dense);
  require(llt.info() == Eigen::Success, ErrorCode::NotPositiveDefinite,
          "D - rho W is not positive definite");
  const Eigen::MatrixXd inv = llt.solve(Eigen::MatrixXd::Identity(dense.rows(), dense.cols()));
  const double h = std::exp(inv.diagonal().array().log().mean());
  q.entries *= h;
  return {std::move(q), h};
}

/**
 * @brief Log density of N(mean, scale^2 P^{-1}) at x, given a factor of P.
 */
inline double gmrf_log_density(const Eigen::VectorXd& x, const Eigen::VectorXd& mean,
                               const PrecisionMatrix& p, const CholeskyFactor& factor,
                               double scale) {
  require(x.size() == p.size() && mean.size() == p.size() && factor.size() == p.size(),
          ErrorCode::DimensionMismatch, "gmrf_log_density dimension mismatch");
  require(scale > 0.0, ErrorCode::InvalidArgument, "scale must be positive");
  const double n = static_cast<double>(x.size());
  const Eigen::VectorXd r = x - mean;
  const double quad = r.dot(p.entries * r);
  return 0.5 * factor.log_det() - n * std::log(scale) - 0.5 * n * std::log(2.0 * std::numbers::pi) -
         0.5 * quad / (scale * scale);
}

inline double gmrf_log_density(const Eigen::VectorXd& x, const Eigen::VectorXd& mean,
                               const PrecisionMatrix& p, double scale) {
  return gmrf_log_density(x, mean, p, cholesky(p), scale);
}

/// Exact draw from N(mean, scale^2 P^{-1}).
inline Eigen::VectorXd sample_gmrf(RandomStream& rng, const Eigen::VectorXd& mean,
                                   const CholeskyFactor& factor, double scale) {
  require(mean.size() == factor.size(), ErrorCode::DimensionMismatch,
          "sample_gmrf dimension mismatch");
  Eigen::VectorXd z(mean.size());
  for (Index i = 0; i < z.size(); ++i) z[i] = rng.normal();
  return mean + scale * factor.colour(z);
}

inline Eigen::VectorXd sample_gmrf(RandomStream& rng, const Eigen::VectorXd& mean,
                                   const PrecisionMatrix& p, double scale) {
  return sample_gmrf(rng, mean, cholesky(p), scale);
}

struct ConditionalMoments {
  double mean = 0.0;
  double variance = 0.0;
};

/**
 * @brief Full conditional of b_{it} given b_{-i,t} and b_{.,t-1} under the
 * Congdon-structured autoregressive prior.
 *
 * `t` is 0-based; at t = 0 the autoregressive terms drop out. `b` is n x T.
 */
inline ConditionalMoments conditional_moments_congdon(std::size_t i, std::size_t t,
                                                      const Eigen::MatrixXd& b, double alpha,
                                                      double lambda, double sigma,
                                                      const Eigen::VectorXd& kappa,
                                                      const SpatialGraph& g) {
  require(static_cast<std::size_t>(b.rows()) == g.size() &&
              static_cast<std::size_t>(kappa.size()) == g.size(),
          ErrorCode::DimensionMismatch, "conditional_moments_congdon dimension mismatch");
  require(i < g.size() && t < static_cast<std::size_t>(b.cols()), ErrorCode::IndexOutOfRange,
          "area or time index out of range");
  const Index ii = as_index(i), tt = as_index(t);
  const double a = t == 0 ? 0.0 : alpha;
  auto prev = [&](Index j) { return t == 0 ? 0.0 : b(j, tt - 1); };
  const double denom = (1.0 - lambda) + lambda * static_cast<double>(g.degree(i));
  double acc = 0.0;
  for (std::size_t j : g.neighbours(i)) {
    const Index jj = as_index(j);
    acc += kappa[jj] * (b(jj, tt) - a * prev(jj));
  }
  return {a * prev(ii) + lambda / denom * acc, sigma * sigma / (kappa[ii] * denom)};
}

}  // namespace heavyrush
