#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <functional>
#include <limits>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>

#include "heavyrush/error.hpp"
#include "heavyrush/rng.hpp"

namespace heavyrush {

using Index = Eigen::Index;

/// Structure of the inverse metric adapted during burn-in.
enum class MetricKind {
  Unit,      ///< identity; no adaptation
  Diagonal,  ///< windowed marginal variances
  LowRank,   ///< diagonal plus the leading eigen-directions of the rescaled warm-up covariance
};

/// Coordinates in which fit_model presents the latent block to the sampler.
enum class LatentParametrization {
  Centred,          ///< b itself
  ScaleNoncentred,  ///< b / sigma
};

/**
 * @brief Run-length and tuning settings for static-path HMC.
 *
 * Burn-in iterations adapt the step size and the metric
 * and are discarded; thinning applies to post-burn-in iterations only.
 */
struct ChainConfig {
  std::size_t iterations = 5000;
  std::size_t burn_in = 2500;
  std::size_t thin = 5;
  std::size_t chains = 2;
  std::uint64_t seed = 0;
  std::size_t leapfrog_steps = 32;
  double path_jitter = 0.0;  ///< steps drawn uniformly from L(1 -+ path_jitter) each iteration
  double target_acceptance = 0.8;
  MetricKind metric = MetricKind::LowRank;
  std::size_t max_metric_rank = 10;  ///< cap on low-rank directions
  std::size_t threads = 1;
  LatentParametrization latents = LatentParametrization::Centred;
  std::uint64_t stream_key = 0;  ///< extra stream identifier, e.g. the replicate of a study fit

  std::size_t retained_per_chain() const noexcept {
    return iterations > burn_in ? (iterations - burn_in) / thin : 0;
  }

  void validate() const {
    require(iterations > 0 && thin > 0 && chains > 0 && leapfrog_steps > 0,
            ErrorCode::InvalidArgument, "iterations, thin, chains and leapfrog steps must be positive");
    require(burn_in < iterations, ErrorCode::InvalidArgument, "burn-in must be shorter than the run");
    require(retained_per_chain() >= 50, ErrorCode::InvalidArgument,
            "configuration retains fewer than 50 draws per chain");
    require(target_acceptance > 0.0 && target_acceptance < 1.0, ErrorCode::InvalidArgument,
            "target acceptance must lie in (0,1)");
    require(path_jitter >= 0.0 && path_jitter < 1.0, ErrorCode::InvalidArgument,
            "path jitter must lie in [0,1)");
  }
};

/// Retained draws and transition statistics of one chain.
struct ChainOutput {
  std::size_t chain_id = 0;
  Eigen::MatrixXd draws;            ///< retained x dim, unconstrained scale
  std::vector<double> log_density;  ///< target value of each retained draw
  double step_size = 0.0;           ///< step size used after burn-in
  std::vector<double> step_size_trace;  ///< step size used at every iteration
  Eigen::VectorXd inverse_metric_diagonal;  ///< D of the adapted metric
  std::size_t metric_rank = 0;              ///< low-rank directions in the adapted metric
  double mean_acceptance = 0.0;     ///< mean Metropolis acceptance probability after burn-in
  std::size_t divergences = 0;      ///< post-burn-in transitions with |energy error| > 1000
  std::vector<double> energy_errors;  ///< H(proposal) - H(current) after burn-in
};

/// Log density with gradient; returns -inf outside the support.
using GradientTarget = std::function<double(const Eigen::VectorXd&, Eigen::VectorXd&)>;

/**
 * @brief Dual averaging of log step size towards a target acceptance rate.
 *
 * \see Hoffman, M.D. and Gelman, A. 2014. The No-U-Turn sampler. JMLR 15.
 */
class DualAveraging {
 public:
  explicit DualAveraging(double step_size, double target, double t0 = 10.0, double gamma = 0.05,
                         double kappa = 0.75)
      : mu_(std::log(10.0 * step_size)), target_(target), t0_(t0), gamma_(gamma), kappa_(kappa),
        log_step_(std::log(step_size)) {}

  void restart(double step_size) {
    mu_ = std::log(10.0 * step_size);
    log_step_ = std::log(step_size);
    log_step_bar_ = 0.0;
    h_bar_ = 0.0;
    count_ = 0;
  }

  void observe(double accept_prob) {
    ++count_;
    const double m = static_cast<double>(count_);
    const double w = 1.0 / (m + t0_);
    h_bar_ = (1.0 - w) * h_bar_ + w * (target_ - accept_prob);
    log_step_ = mu_ - std::sqrt(m) / gamma_ * h_bar_;
    const double eta = std::pow(m, -kappa_);
    log_step_bar_ = eta * log_step_ + (1.0 - eta) * log_step_bar_;
  }

  double step_size() const { return std::exp(log_step_); }
  double final_step_size() const { return count_ == 0 ? std::exp(log_step_) : std::exp(log_step_bar_); }

 private:
  double mu_, target_, t0_, gamma_, kappa_;
  double log_step_;
  double log_step_bar_ = 0.0;
  double h_bar_ = 0.0;
  std::size_t count_ = 0;
};

/**
 * @brief Inverse metric D^{1/2} (I + V diag(lambda - 1) V^T) D^{1/2}.
 *
 * D is diagonal and V has orthonormal columns, so momenta are drawn exactly
 * as D^{-1/2} (I + V diag(lambda^{-1/2} - 1) V^T) z.
 */
class Metric {
 public:
  Metric() = default;
  explicit Metric(Index dim) : sd_(Eigen::VectorXd::Ones(dim)), basis_(dim, 0) {}
  Metric(Eigen::VectorXd variance, Eigen::MatrixXd basis, Eigen::VectorXd eigenvalues)
      : sd_(variance.cwiseSqrt()), basis_(std::move(basis)), eig_(std::move(eigenvalues)) {}

  Index dimension() const noexcept { return sd_.size(); }
  Index rank() const noexcept { return basis_.cols(); }
  Eigen::VectorXd variance() const { return sd_.cwiseAbs2(); }
  const Eigen::MatrixXd& basis() const noexcept { return basis_; }
  const Eigen::VectorXd& eigenvalues() const noexcept { return eig_; }

  Eigen::VectorXd apply_inverse(const Eigen::VectorXd& p) const {
    Eigen::VectorXd y = sd_.cwiseProduct(p);
    if (rank() > 0) y += basis_ * (eig_.array() - 1.0).matrix().cwiseProduct(basis_.transpose() * y);
    return sd_.cwiseProduct(y);
  }

  double kinetic(const Eigen::VectorXd& p) const { return 0.5 * p.dot(apply_inverse(p)); }

  Eigen::VectorXd sample_momentum(RandomStream& rng) const {
    Eigen::VectorXd z(sd_.size());
    for (Index i = 0; i < z.size(); ++i) z[i] = rng.normal();
    if (rank() > 0) {
      z += basis_ * (eig_.array().rsqrt() - 1.0).matrix().cwiseProduct(basis_.transpose() * z);
    }
    return z.cwiseQuotient(sd_);
  }

 private:
  Eigen::VectorXd sd_;
  Eigen::MatrixXd basis_;
  Eigen::VectorXd eig_;
};

namespace detail {

struct Transition {
  double accept_prob = 0.0;
  double energy_error = std::numeric_limits<double>::infinity();
  bool accepted = false;
};

struct WarmupWindows {
  std::size_t start = 0;
  std::vector<std::size_t> ends;
};

/**
 * @brief Stan-style warm-up windows: a 75-iteration opening buffer, doubling
 * windows from 25, and a closing step-size-only buffer of max(50, warmup/10).
 */
inline WarmupWindows metric_windows(std::size_t warmup) {
  WarmupWindows w;
  std::size_t init_buffer = 75, term_buffer = std::max<std::size_t>(50, warmup / 10), base = 25;
  if (warmup < 20) return w;
  if (init_buffer + base + term_buffer > warmup) {
    init_buffer = static_cast<std::size_t>(0.15 * static_cast<double>(warmup));
    term_buffer = static_cast<std::size_t>(0.1 * static_cast<double>(warmup));
    base = warmup - init_buffer - term_buffer;
  }
  w.start = init_buffer;
  const std::size_t slow_end = warmup - term_buffer;
  std::size_t start = init_buffer, size = base;
  while (start < slow_end) {
    std::size_t end = start + size;
    if (end + 2 * size > slow_end) end = slow_end;
    w.ends.push_back(end);
    start = end;
    size *= 2;
  }
  return w;
}

/**
 * @brief Metric estimate from the draws of one adaptation window (rows).
 *
 * Variances are shrunk towards 1e-3 as in Stan. For LowRank, eigen-directions
 * of the covariance of the standardized draws are kept when their eigenvalue
 * clears the Marchenko-Pastur noise edge (1 + sqrt(d/(N-1)))^2, at most
 * `max_rank` of them.
 */
inline Metric estimate_metric(const Eigen::MatrixXd& draws, MetricKind kind, Index max_rank) {
  const Index n = draws.rows(), d = draws.cols();
  const double dn = static_cast<double>(n);
  const Eigen::RowVectorXd mean = draws.colwise().mean();
  const Eigen::MatrixXd centred = draws.rowwise() - mean;
  Eigen::VectorXd var = centred.colwise().squaredNorm().transpose() / std::max(dn - 1.0, 1.0);
  var = ((dn / (dn + 5.0)) * var.array() + 1e-3 * (5.0 / (dn + 5.0))).matrix();
  if (kind != MetricKind::LowRank || n < 3 || max_rank <= 0) {
    return Metric(var, Eigen::MatrixXd(d, 0), Eigen::VectorXd(0));
  }
  const Eigen::MatrixXd y = centred * var.cwiseSqrt().cwiseInverse().asDiagonal();
  Eigen::MatrixXd vecs;
  Eigen::VectorXd vals;
  if (n < d) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(y * y.transpose() / (dn - 1.0));
    vals = es.eigenvalues();
    vecs = y.transpose() * es.eigenvectors();
    for (Index j = 0; j < vecs.cols(); ++j) {
      const double norm = vecs.col(j).norm();
      if (norm > 0.0) vecs.col(j) /= norm;
    }
  } else {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(y.transpose() * y / (dn - 1.0));
    vals = es.eigenvalues();
    vecs = es.eigenvectors();
  }
  const double ratio = static_cast<double>(d) / (dn - 1.0);
  const double edge = (1.0 + std::sqrt(ratio)) * (1.0 + std::sqrt(ratio));
  std::vector<Index> keep;
  for (Index j = vals.size() - 1; j >= 0 && static_cast<Index>(keep.size()) < max_rank; --j) {
    if (vals[j] > edge) keep.push_back(j);
  }
  Eigen::MatrixXd basis(d, static_cast<Index>(keep.size()));
  Eigen::VectorXd eig(static_cast<Index>(keep.size()));
  for (std::size_t k = 0; k < keep.size(); ++k) {
    basis.col(static_cast<Index>(k)) = vecs.col(keep[k]);
    eig[static_cast<Index>(k)] = vals[keep[k]];
  }
  // Re-orthonormalize against round-off in the Gram route.
  if (basis.cols() > 0) {
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(basis);
    basis = qr.householderQ() * Eigen::MatrixXd::Identity(d, basis.cols());
  }
  return Metric(var, basis, eig);
}

class HmcKernel {
 public:
  HmcKernel(const GradientTarget& target, Eigen::VectorXd x)
      : target_(target), x_(std::move(x)), metric_(x_.size()) {
    grad_.resize(x_.size());
    logp_ = target_(x_, grad_);
  }

  double log_density() const { return logp_; }
  const Eigen::VectorXd& position() const { return x_; }
  const Metric& metric() const { return metric_; }
  void set_metric(Metric m) { metric_ = std::move(m); }

  Transition transition(RandomStream& rng, double eps, std::size_t steps) {
    Eigen::VectorXd p = metric_.sample_momentum(rng);
    const double h0 = -logp_ + metric_.kinetic(p);

    Eigen::VectorXd x = x_;
    Eigen::VectorXd g = grad_;
    double logp = logp_;
    bool finite = true;
    for (std::size_t s = 0; s < steps; ++s) {
      p += 0.5 * eps * g;
      x += eps * metric_.apply_inverse(p);
      logp = target_(x, g);
      if (!std::isfinite(logp)) {
        finite = false;
        break;
      }
      p += 0.5 * eps * g;
    }

    Transition tr;
    if (finite) {
      tr.energy_error = -logp + metric_.kinetic(p) - h0;
      tr.accept_prob = std::isfinite(tr.energy_error) ? std::min(1.0, std::exp(-tr.energy_error)) : 0.0;
    }
    if (finite && rng.uniform() < tr.accept_prob) {
      x_ = std::move(x);
      grad_ = std::move(g);
      logp_ = logp;
      tr.accepted = true;
    }
    return tr;
  }

  /// Doubling/halving search for a step size with one-step acceptance near one half.
  double reasonable_step_size(RandomStream& rng, double eps) {
    auto accept_at = [&](double e) {
      const Eigen::VectorXd x0 = x_, g0 = grad_;
      const double l0 = logp_;
      const Transition tr = transition(rng, e, 1);
      x_ = x0;
      grad_ = g0;
      logp_ = l0;
      return tr.accept_prob;
    };
    double a = accept_at(eps);
    const int direction = a > 0.5 ? 1 : -1;
    for (int k = 0; k < 60; ++k) {
      if (direction == 1 ? !(a > 0.5) : !(a < 0.5)) break;
      eps = direction == 1 ? eps * 2.0 : eps * 0.5;
      a = accept_at(eps);
    }
    return eps;
  }

 private:
  const GradientTarget& target_;
  Eigen::VectorXd x_;
  Eigen::VectorXd grad_;
  Metric metric_;
  double logp_;
};

}  // namespace detail

/**
 * @brief Static-path HMC with dual-averaging step size adaptation.
 *
 * Each transition draws a momentum, runs `leapfrog_steps` leapfrog steps and
 * applies a Metropolis correction; trajectories that leave the support are
 * rejected. During burn-in the step size is adapted and, unless the metric
 * is Unit, the metric is re-estimated at the end of each warm-up window. The
 * random stream is derived from (cfg.seed, chain_id, cfg.stream_key) only.
 */
inline ChainOutput run_chain(const GradientTarget& target, const ChainConfig& cfg,
                             std::size_t chain_id, const Eigen::VectorXd& init) {
  cfg.validate();
  RandomStream rng(cfg.seed, StreamPurpose::Chain, chain_id, cfg.stream_key);
  detail::HmcKernel kernel(target, init);
  require(std::isfinite(kernel.log_density()), ErrorCode::InitializationFailure,
          "target is not finite at the initial point of chain " + std::to_string(chain_id));

  const Index dim = init.size();
  double eps = kernel.reasonable_step_size(rng, 0.1);
  DualAveraging adapt(eps, cfg.target_acceptance);

  const auto windows = cfg.metric == MetricKind::Unit ? detail::WarmupWindows{}
                                                      : detail::metric_windows(cfg.burn_in);
  std::size_t next_window = 0;
  std::size_t window_begin = windows.start;
  std::vector<Eigen::VectorXd> window_draws;

  ChainOutput out;
  out.chain_id = chain_id;
  const std::size_t keep = cfg.retained_per_chain();
  out.draws.resize(static_cast<Index>(keep), dim);
  out.log_density.reserve(keep);
  out.step_size_trace.reserve(cfg.iterations);
  out.energy_errors.reserve(cfg.iterations - cfg.burn_in);

  double accept_sum = 0.0;
  std::size_t kept = 0;
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    const bool warmup = it < cfg.burn_in;
    if (warmup) eps = adapt.step_size();
    out.step_size_trace.push_back(eps);
    std::size_t steps = cfg.leapfrog_steps;
    if (cfg.path_jitter > 0.0) {
      const double len = static_cast<double>(cfg.leapfrog_steps) * (1.0 + cfg.path_jitter * (2.0 * rng.uniform() - 1.0));
      steps = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(len)));
    }
    const auto tr = kernel.transition(rng, eps, steps);

    if (warmup) {
      adapt.observe(tr.accept_prob);
      if (next_window < windows.ends.size() && it >= window_begin) {
        window_draws.push_back(kernel.position());
        if (it + 1 == windows.ends[next_window]) {
          Eigen::MatrixXd w(static_cast<Index>(window_draws.size()), dim);
          for (std::size_t k = 0; k < window_draws.size(); ++k) w.row(static_cast<Index>(k)) = window_draws[k];
          kernel.set_metric(detail::estimate_metric(w, cfg.metric, static_cast<Index>(cfg.max_metric_rank)));
          eps = kernel.reasonable_step_size(rng, adapt.step_size());
          adapt.restart(eps);
          ++next_window;
          window_begin = it + 1;
          window_draws.clear();
        }
      }
      if (it + 1 == cfg.burn_in) eps = adapt.final_step_size();
      continue;
    }

    accept_sum += tr.accept_prob;
    out.energy_errors.push_back(tr.energy_error);
    if (std::fabs(tr.energy_error) > 1000.0) ++out.divergences;
    const std::size_t post = it - cfg.burn_in + 1;
    if (post % cfg.thin == 0 && kept < keep) {
      out.draws.row(static_cast<Index>(kept)) = kernel.position().transpose();
      out.log_density.push_back(kernel.log_density());
      ++kept;
    }
  }
  out.step_size = eps;
  out.inverse_metric_diagonal = kernel.metric().variance();
  out.metric_rank = static_cast<std::size_t>(kernel.metric().rank());
  out.mean_acceptance = accept_sum / static_cast<double>(cfg.iterations - cfg.burn_in);
  return out;
}

/// Draws fresh starting points until the target is finite.
inline Eigen::VectorXd find_initial_point(const GradientTarget& target,
                                          const std::function<Eigen::VectorXd(RandomStream&)>& generate,
                                          RandomStream& rng, std::size_t attempts = 100) {
  Eigen::VectorXd grad;
  for (std::size_t k = 0; k < attempts; ++k) {
    Eigen::VectorXd x = generate(rng);
    grad.resize(x.size());
    const double v = target(x, grad);
    if (std::isfinite(v) && grad.allFinite()) return x;
  }
  fail(ErrorCode::InitializationFailure,
       "no finite starting point found in " + std::to_string(attempts) + " attempts");
}

/**
 * @brief Runs `inits.size()` independent chains, up to `cfg.threads` at a time.
 *
 * Results are ordered by chain index and are identical for any thread count.
 */
inline std::vector<ChainOutput> run_chains(const GradientTarget& target, const ChainConfig& cfg,
                                           const std::vector<Eigen::VectorXd>& inits) {
  cfg.validate();
  require(!inits.empty(), ErrorCode::InvalidArgument, "at least one chain is required");
  const std::size_t n = inits.size();
  std::vector<ChainOutput> outputs(n);
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t c = next++; c < n; c = next++) {
      try {
        outputs[c] = run_chain(target, cfg, c, inits[c]);
      } catch (...) {
        errors[c] = std::current_exception();
      }
    }
  };
  const std::size_t threads = std::clamp<std::size_t>(cfg.threads, 1, n);
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  for (std::size_t c = 0; c < n; ++c) {
    if (!errors[c]) continue;
    try {
      std::rethrow_exception(errors[c]);
    } catch (const Error& e) {
      throw Error(e.code(), "chain " + std::to_string(c) + ": " + e.what());
    } catch (const std::exception& e) {
      throw Error(ErrorCode::InvalidArgument, "chain " + std::to_string(c) + ": " + e.what());
    }
  }
  return outputs;
}

}  // namespace heavyrush
