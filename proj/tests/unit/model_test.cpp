#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include <boost/math/distributions/exponential.hpp>
#include <boost/math/distributions/gamma.hpp>
#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/poisson.hpp>

#include "heavyrush/model.hpp"

using namespace heavyrush;

namespace {

Dataset random_dataset(RandomStream& rng, Index n, Index T, Index p) {
  Eigen::MatrixXi y(n, T);
  Eigen::VectorXd e(n);
  Eigen::MatrixXd x(n, p);
  for (Index i = 0; i < n; ++i) {
    e[i] = 2.0 + 20.0 * rng.uniform();
    for (Index t = 0; t < T; ++t) y(i, t) = static_cast<int>(rng.poisson(e[i] * 1.1));
    for (Index k = 0; k < p; ++k) x(i, k) = rng.normal();
  }
  return make_dataset(y, e, x);
}

SpatialGraph small_graph() { return build_graph(4, {{0, 1}, {1, 2}, {2, 3}, {0, 2}}); }

Eigen::VectorXd random_point(RandomStream& rng, const HeavyRushworthModel& m) {
  const auto& L = m.layout();
  Eigen::VectorXd u(L.dim);
  u[L.beta0] = rng.normal(0.0, 0.5);
  for (Index k = 0; k < L.p; ++k) u[L.beta + k] = rng.normal(0.0, 0.5);
  u[L.s] = rng.uniform(std::log(0.05), std::log(1.0));
  u[L.l] = rng.normal(0.0, 1.5);
  if (L.a >= 0) u[L.a] = rng.normal(0.0, 0.7);
  if (L.kappa >= 0) {
    const bool pcar = m.spec().kappa_prior == KappaPrior::LogPCAR;
    u[L.m] = pcar ? rng.normal(std::log(0.3), 0.5) : rng.normal(std::log(4.0), 0.5);
    const double nu = std::exp(u[L.m]);
    for (Index i = 0; i < L.n; ++i) u[L.kappa + i] = (pcar ? 0.5 * nu : 0.0) + rng.normal(0.0, 0.3);
  }
  for (Index k = 0; k < L.n * L.T; ++k) u[L.b + k] = rng.normal(0.0, 0.3);
  return u;
}

Eigen::MatrixXd dense_congdon(const SpatialGraph& g, double lambda, const Eigen::VectorXd& kappa) {
  const Eigen::MatrixXd w = dense_weights(g);
  const Index n = w.rows();
  Eigen::MatrixXd q(n, n);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < n; ++j) {
      q(i, j) = i == j ? kappa[i] * (1 - lambda + lambda * w.row(i).sum())
                       : -lambda * w(i, j) * kappa[i] * kappa[j];
    }
  }
  return q;
}

double normal_log(double x, double sd) {
  return -0.5 * std::log(2 * std::numbers::pi) - std::log(sd) - 0.5 * (x / sd) * (x / sd);
}

double dense_mvn(const Eigen::VectorXd& x, const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov) {
  const Eigen::VectorXd r = x - mean;
  const double n = static_cast<double>(x.size());
  return -0.5 * std::log(cov.determinant()) - 0.5 * n * std::log(2 * std::numbers::pi) -
         0.5 * r.dot(cov.inverse() * r);
}

// Second, straight-line implementation of the full target on the unconstrained scale.
double oracle_log_posterior(const Eigen::VectorXd& u, const Dataset& d, const SpatialGraph& g,
                            const ModelSpec& spec) {
  using boost::math::pdf;
  const Index n = static_cast<Index>(d.areas()), T = static_cast<Index>(d.times());
  const Index p = static_cast<Index>(d.covariate_count());
  Index pos = 0;
  const double beta0 = u[pos++];
  const Eigen::VectorXd beta = u.segment(pos, p);
  pos += p;
  const double s = u[pos++], l = u[pos++];
  const double sigma = std::exp(s), lambda = 1.0 / (1.0 + std::exp(-l));
  double alpha = 1.0, a = 0.0;
  if (spec.alpha_mode == AlphaMode::Estimated) {
    a = u[pos++];
    alpha = std::tanh(a);
  }
  Eigen::VectorXd kappa = Eigen::VectorXd::Ones(n), raw;
  double nu = 0.0, m = 0.0;
  if (spec.kappa_prior != KappaPrior::None) {
    raw = u.segment(pos, n);
    pos += n;
    m = u[pos++];
    nu = std::exp(m);
    kappa = spec.kappa_prior == KappaPrior::IndependentGamma ? Eigen::VectorXd(raw.array().exp())
                                                             : Eigen::VectorXd((raw.array() - nu / 2).exp());
  }
  const Eigen::MatrixXd b = Eigen::Map<const Eigen::MatrixXd>(u.data() + pos, n, T);

  double lp = 0.0;
  for (Index i = 0; i < n; ++i) {
    for (Index t = 0; t < T; ++t) {
      const double mean = d.offsets[i] * std::exp(beta0 + d.covariates.row(i).dot(beta) + b(i, t));
      const double y = d.counts(i, t);
      lp += y * std::log(mean) - mean - std::lgamma(y + 1);
    }
  }
  const Eigen::MatrixXd q = dense_congdon(g, lambda, kappa);
  const Eigen::MatrixXd cov = q.inverse() * sigma * sigma;
  lp += dense_mvn(b.col(0), Eigen::VectorXd::Zero(n), cov);
  for (Index t = 1; t < T; ++t) lp += dense_mvn(b.col(t), alpha * b.col(t - 1), cov);
  lp += normal_log(b.col(0).sum(), 0.001 * static_cast<double>(n));
  lp += normal_log(beta0, 1.0);
  for (Index k = 0; k < p; ++k) lp += normal_log(beta[k], 1.0);
  lp += std::log(2.0) + normal_log(sigma, 0.1);
  if (spec.alpha_mode == AlphaMode::Estimated) lp += std::log(0.5);
  if (spec.kappa_prior == KappaPrior::IndependentGamma) {
    lp += std::log(pdf(boost::math::exponential_distribution<>(0.25), nu));
    const boost::math::gamma_distribution<> gd(nu / 2, 2 / nu);
    for (Index i = 0; i < n; ++i) lp += std::log(pdf(gd, kappa[i]));
  } else if (spec.kappa_prior == KappaPrior::LogPCAR) {
    lp += std::log(pdf(boost::math::exponential_distribution<>(1 / 0.3), nu));
    const Eigen::MatrixXd w = dense_weights(g);
    Eigen::MatrixXd qr = -0.99 * w;
    qr.diagonal() = w.rowwise().sum();
    const Eigen::MatrixXd inv = qr.inverse();
    const double h = std::exp(inv.diagonal().array().log().mean());
    lp += dense_mvn(raw, Eigen::VectorXd::Zero(n), nu * inv / h);
  }
  // Jacobians.
  lp += s + std::log(lambda * (1 - lambda));
  if (spec.alpha_mode == AlphaMode::Estimated) lp += std::log(1 - alpha * alpha);
  if (spec.kappa_prior == KappaPrior::IndependentGamma) lp += raw.sum();
  if (spec.kappa_prior != KappaPrior::None) lp += m;
  return lp;
}

class ModelVariant : public ::testing::TestWithParam<std::string> {};

}  // namespace

TEST(ModelSpec, TagsRoundTrip) {
  for (const auto& tag : all_model_tags()) EXPECT_EQ(ModelSpec::from_tag(tag).tag(), tag);
  EXPECT_EQ(ModelSpec::from_tag("HRLPCalpha").label(), "HR-LPC(alpha)");
  EXPECT_DOUBLE_EQ(ModelSpec::from_tag("HR1").nu_rate, 0.25);
  EXPECT_DOUBLE_EQ(ModelSpec::from_tag("HRLPC1").nu_rate, 1.0 / 0.3);
  EXPECT_THROW(ModelSpec::from_tag("X1"), Error);
  EXPECT_THROW(ModelSpec::from_tag("HR2"), Error);
}

TEST(Dataset, Validation) {
  Eigen::MatrixXi y(1, 1);
  y << -1;
  try {
    make_dataset(y, Eigen::VectorXd::Ones(1));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NegativeCount);
  }
  y << 1;
  try {
    make_dataset(y, Eigen::VectorXd::Zero(1));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NonPositiveOffset);
  }
}

TEST(LogLikelihood, Examples) {
  const auto g = build_graph(2, {{0, 1}});
  const Dataset zero = make_dataset(Eigen::MatrixXi::Zero(2, 3), Eigen::Vector2d(1.5, 2.5));
  const HeavyRushworthModel m(zero, g, ModelSpec{});
  ParameterState s;
  s.beta = Eigen::VectorXd(0);
  s.b = Eigen::MatrixXd::Zero(2, 3);
  EXPECT_NEAR(m.log_likelihood(s), -3.0 * (1.5 + 2.5), 1e-14);

  Eigen::MatrixXi y(1, 1);
  y << 2;
  const HeavyRushworthModel one(make_dataset(y, Eigen::VectorXd::Ones(1)),
                                build_graph(1, std::vector<Edge>{}), ModelSpec{});
  s.b = Eigen::MatrixXd::Zero(1, 1);
  EXPECT_NEAR(one.log_likelihood(s), -1.0 - std::log(2.0), 1e-14);
}

TEST(LogLikelihood, MatchesPmfOracleAndIncrementRule) {
  RandomStream rng(31);
  const auto d = random_dataset(rng, 4, 3, 2);
  const HeavyRushworthModel m(d, small_graph(), ModelSpec{});
  const ParameterState s = m.constrain(random_point(rng, m));
  double oracle = 0.0;
  for (Index i = 0; i < 4; ++i) {
    for (Index t = 0; t < 3; ++t) {
      const double mean = d.offsets[i] * std::exp(s.beta0 + d.covariates.row(i).dot(s.beta) + s.b(i, t));
      oracle += std::log(boost::math::pdf(boost::math::poisson_distribution<>(mean), d.counts(i, t)));
    }
  }
  EXPECT_NEAR(m.log_likelihood(s), oracle, 1e-10);
  EXPECT_NEAR(m.cell_log_likelihood(s).sum(), oracle, 1e-10);

  Dataset bumped = d;
  bumped.counts(2, 1) += 1;
  const HeavyRushworthModel mb(bumped, small_graph(), ModelSpec{});
  const double eta = std::log(d.offsets[2]) + s.beta0 + d.covariates.row(2).dot(s.beta) + s.b(2, 1);
  EXPECT_NEAR(mb.log_likelihood(s) - m.log_likelihood(s), eta - std::log(d.counts(2, 1) + 1.0), 1e-10);
}

TEST(LogPrior, GammaKappaTermAtOne) {
  RandomStream rng(32);
  const auto d = random_dataset(rng, 4, 2, 0);
  const auto spec = ModelSpec::from_tag("HR1");
  const HeavyRushworthModel m(d, small_graph(), spec);
  ParameterState s;
  s.beta = Eigen::VectorXd(0);
  s.sigma = 0.1;
  s.lambda = 0.5;
  s.nu = 4.0;
  s.kappa = Eigen::VectorXd::Ones(4);
  s.b = Eigen::MatrixXd::Zero(4, 2);
  ParameterState r = s;
  const HeavyRushworthModel mr(d, small_graph(), ModelSpec::from_tag("R1"));
  const double exp_term = std::log(0.25) - 0.25 * 4.0;
  EXPECT_NEAR(m.log_prior(s) - mr.log_prior(r), 4 * (std::log(4.0) - 2.0) + exp_term, 1e-12);
}

TEST(LogPrior, RushworthTermsAtZero) {
  const auto g = small_graph();
  const Dataset d = make_dataset(Eigen::MatrixXi::Zero(4, 2), Eigen::VectorXd::Ones(4));
  const HeavyRushworthModel m(d, g, ModelSpec::from_tag("R1"));
  ParameterState s;
  s.beta = Eigen::VectorXd(0);
  s.sigma = 0.1;
  s.lambda = 0.3;
  s.kappa = Eigen::VectorXd::Ones(4);
  s.b = Eigen::MatrixXd::Zero(4, 2);
  const Eigen::MatrixXd cov = dense_congdon(g, 0.3, s.kappa).inverse() * 0.01;
  const double expected = 2 * dense_mvn(Eigen::VectorXd::Zero(4), Eigen::VectorXd::Zero(4), cov) +
                          std::log(boost::math::pdf(boost::math::normal_distribution<>(0, 0.004), 0.0)) +
                          std::log(boost::math::pdf(boost::math::normal_distribution<>(0, 1), 0.0)) +
                          std::log(2 * boost::math::pdf(boost::math::normal_distribution<>(0, 0.1), 0.1));
  EXPECT_NEAR(m.log_prior(s), expected, 1e-10);
}

TEST(LogPrior, LogPcarAtZero) {
  const auto g = small_graph();
  const Dataset d = make_dataset(Eigen::MatrixXi::Zero(4, 2), Eigen::VectorXd::Ones(4));
  const auto spec = ModelSpec::from_tag("HRLPC1");
  const HeavyRushworthModel m(d, g, spec);
  const HeavyRushworthModel r(d, g, ModelSpec::from_tag("R1"));
  ParameterState s;
  s.beta = Eigen::VectorXd(0);
  s.sigma = 0.2;
  s.lambda = 0.4;
  s.nu = 0.5;
  s.z = Eigen::VectorXd::Zero(4);
  s.kappa = Eigen::VectorXd::Constant(4, std::exp(-0.25));
  s.b = Eigen::MatrixXd::Zero(4, 2);
  ParameterState sr = s;
  sr.kappa = Eigen::VectorXd::Ones(4);
  // Difference = z term + exponential prior + change in the b-layer normalizer.
  const Eigen::MatrixXd qs = m.scaled_pcar()->matrix.dense();
  const double z_term = 0.5 * std::log((qs / 0.5).determinant()) - 2.0 * std::log(2 * std::numbers::pi);
  const double nu_term = std::log(1 / 0.3) - 0.5 / 0.3;
  const double layer = std::log(dense_congdon(g, 0.4, s.kappa).determinant()) -
                       std::log(dense_congdon(g, 0.4, sr.kappa).determinant());
  EXPECT_NEAR(m.log_prior(s) - r.log_prior(sr), z_term + nu_term + layer, 1e-10);
}

TEST(Transforms, Examples) {
  RandomStream rng(33);
  const auto d = random_dataset(rng, 4, 3, 1);
  const HeavyRushworthModel m(d, small_graph(), ModelSpec::from_tag("HRalpha"));
  Eigen::VectorXd u = random_point(rng, m);
  u[m.layout().s] = 0.0;
  u[m.layout().l] = 0.0;
  const auto s = m.constrain(u);
  EXPECT_DOUBLE_EQ(s.sigma, 1.0);
  EXPECT_DOUBLE_EQ(s.lambda, 0.5);
}

TEST_P(ModelVariant, RoundTrip) {
  RandomStream rng(34);
  const auto d = random_dataset(rng, 4, 3, 2);
  const HeavyRushworthModel m(d, small_graph(), ModelSpec::from_tag(GetParam()));
  for (int k = 0; k < 50; ++k) {
    const Eigen::VectorXd u = random_point(rng, m);
    ASSERT_LT((m.unconstrain(m.constrain(u)) - u).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST_P(ModelVariant, MatchesStraightLineOracle) {
  RandomStream rng(35);
  const auto g = build_graph(3, {{0, 1}, {1, 2}});
  const auto d = random_dataset(rng, 3, 4, 1);
  const auto spec = ModelSpec::from_tag(GetParam());
  const HeavyRushworthModel m(d, g, spec);
  int checked = 0;
  for (int k = 0; k < 200 && checked < 50; ++k) {
    const Eigen::VectorXd u = random_point(rng, m);
    const double v = m.log_posterior(u);
    if (!std::isfinite(v)) continue;
    ASSERT_NEAR(v, oracle_log_posterior(u, d, g, spec), 1e-9 * std::max(1.0, std::fabs(v)));
    ++checked;
  }
  EXPECT_EQ(checked, 50);
}

TEST_P(ModelVariant, GradientMatchesCentralDifferences) {
  RandomStream rng(36);
  const auto d = random_dataset(rng, 4, 3, 1);
  const HeavyRushworthModel m(d, small_graph(), ModelSpec::from_tag(GetParam()));
  int checked = 0;
  const double h = 1e-5;
  for (int k = 0; k < 1000 && checked < 100; ++k) {
    Eigen::VectorXd u = random_point(rng, m);
    Eigen::VectorXd grad;
    if (!std::isfinite(m.log_posterior(u, grad))) continue;
    bool finite = true;
    for (Index j = 0; j < u.size() && finite; ++j) {
      // Fourth-order central stencil.
      double f[4];
      const double offsets[4] = {-2 * h, -h, h, 2 * h};
      for (int k2 = 0; k2 < 4; ++k2) {
        Eigen::VectorXd v = u;
        v[j] += offsets[k2];
        f[k2] = m.log_posterior(v);
      }
      if (!std::all_of(f, f + 4, [](double x) { return std::isfinite(x); })) {
        finite = false;
        break;
      }
      const double numeric = (f[0] - 8 * f[1] + 8 * f[2] - f[3]) / (12 * h);
      ASSERT_LT(std::fabs(grad[j] - numeric) / std::max(1.0, std::fabs(grad[j])), 1e-6)
          << "coordinate " << j << " analytic " << grad[j] << " numeric " << numeric;
    }
    if (finite) ++checked;
  }
  EXPECT_EQ(checked, 100);
}

TEST_P(ModelVariant, RelabellingByAutomorphism) {
  RandomStream rng(37);
  const auto g = ring_graph(5);
  const auto d = random_dataset(rng, 5, 3, 1);
  const HeavyRushworthModel m(d, g, ModelSpec::from_tag(GetParam()));
  // Reflection i -> (5 - i) mod 5 is an automorphism of the 5-cycle.
  Eigen::PermutationMatrix<Eigen::Dynamic> perm(5);
  for (int i = 0; i < 5; ++i) perm.indices()[i] = (5 - i) % 5;
  Dataset dp = d;
  dp.counts = perm * d.counts;
  dp.offsets = perm * d.offsets;
  dp.covariates = perm * d.covariates;
  const HeavyRushworthModel mp(dp, g, ModelSpec::from_tag(GetParam()));
  for (int k = 0; k < 10; ++k) {
    const Eigen::VectorXd u = random_point(rng, m);
    ParameterState s = m.constrain(u);
    ParameterState sp = s;
    sp.b = perm * s.b;
    sp.kappa = perm * s.kappa;
    if (s.z.size() > 0) sp.z = perm * s.z;
    const double a = m.log_posterior(u), b = mp.log_posterior(mp.unconstrain(sp));
    if (!std::isfinite(a)) continue;
    ASSERT_NEAR(a, b, 1e-9 * std::max(1.0, std::fabs(a)));
  }
}

INSTANTIATE_TEST_SUITE_P(AllTags, ModelVariant,
                         ::testing::Values("R1", "Ralpha", "HR1", "HRalpha", "HRLPC1", "HRLPCalpha"));

TEST(Gradient, DecoupledCase) {
  // lambda = 0, alpha = 0: b-gradient is Y - mu - b kappa / sigma^2 (+ sum-to-zero at t = 0).
  RandomStream rng(38);
  const auto d = random_dataset(rng, 4, 3, 0);
  const HeavyRushworthModel m(d, small_graph(), ModelSpec::from_tag("HRalpha"));
  ParameterState s = m.constrain(random_point(rng, m));
  s.lambda = 1e-300;
  s.alpha = 0.0;
  const Eigen::VectorXd u = m.unconstrain(s);
  const auto sc = m.constrain(u);
  const Eigen::VectorXd g = m.grad_log_posterior(u);
  const Eigen::MatrixXd mu = m.fitted_means(sc);
  const double sum_sd = 0.001 * 4;
  for (Index t = 0; t < 3; ++t) {
    for (Index i = 0; i < 4; ++i) {
      double expected = d.counts(i, t) - mu(i, t) - sc.b(i, t) * sc.kappa[i] / (sc.sigma * sc.sigma);
      if (t == 0) expected -= sc.b.col(0).sum() / (sum_sd * sum_sd);
      EXPECT_NEAR(g[m.layout().b + t * 4 + i], expected, 1e-6 * std::max(1.0, std::fabs(expected)));
    }
  }
}

TEST(Gradient, RushworthAndPinnedKappaShareStructure) {
  RandomStream rng(39);
  const auto d = random_dataset(rng, 4, 3, 1);
  const HeavyRushworthModel r(d, small_graph(), ModelSpec::from_tag("Ralpha"));
  const HeavyRushworthModel h(d, small_graph(), ModelSpec::from_tag("HRalpha"));
  const Eigen::VectorXd ur = random_point(rng, r);
  ParameterState s = r.constrain(ur);
  s.nu = 4.0;
  const Eigen::VectorXd uh = h.unconstrain(s);
  const Eigen::VectorXd gr = r.grad_log_posterior(ur), gh = h.grad_log_posterior(uh);
  const auto& lr = r.layout();
  const auto& lh = h.layout();
  for (Index j : {lr.beta0, lr.beta, lr.s, lr.l, lr.a}) {
    const Index jh = j == lr.beta0 ? lh.beta0 : j == lr.beta ? lh.beta : j == lr.s ? lh.s : j == lr.l ? lh.l : lh.a;
    EXPECT_NEAR(gr[j], gh[jh], 1e-9 * std::max(1.0, std::fabs(gr[j])));
  }
  EXPECT_TRUE(gr.segment(lr.b, 12).isApprox(gh.segment(lh.b, 12), 1e-12));
}

TEST(Gradient, UnavailableOutsideSupport) {
  // kappa contrast large enough to break positive definiteness of Q_C.
  const auto g = build_graph(2, {{0, 1}});
  const Dataset d = make_dataset(Eigen::MatrixXi::Ones(2, 2), Eigen::VectorXd::Ones(2));
  const HeavyRushworthModel m(d, g, ModelSpec::from_tag("HR1"));
  ParameterState s;
  s.beta = Eigen::VectorXd(0);
  s.sigma = 0.1;
  s.lambda = 0.99;
  s.nu = 4.0;
  s.kappa = Eigen::Vector2d(10.0, 10.0);
  s.b = Eigen::MatrixXd::Zero(2, 2);
  const Eigen::VectorXd u = m.unconstrain(s);
  EXPECT_EQ(m.log_posterior(u), -std::numeric_limits<double>::infinity());
  try {
    m.grad_log_posterior(u);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::GradientUnavailable);
  }
}

// The joint posterior has no interior mode (sigma -> 0 funnel), so the ascent
// runs over (beta0, b) with the hyperparameters held fixed.
TEST(Gradient, AscentReachesStationaryPoint) {
  RandomStream rng(40);
  const auto d = random_dataset(rng, 4, 3, 0);
  const HeavyRushworthModel m(d, small_graph(), ModelSpec::from_tag("Ralpha"));
  RandomStream init(41);
  Eigen::VectorXd u = m.initial_point(init);
  const auto& L = m.layout();
  std::vector<Index> free{L.beta0};
  for (Index k = 0; k < L.n * L.T; ++k) free.push_back(L.b + k);
  const Index k = static_cast<Index>(free.size());
  auto sub_grad = [&](const Eigen::VectorXd& x) {
    const Eigen::VectorXd g = m.grad_log_posterior(x);
    Eigen::VectorXd out(k);
    for (Index j = 0; j < k; ++j) out[j] = g[free[j]];
    return out;
  };
  for (int it = 0; it < 200; ++it) {
    const Eigen::VectorXd g = sub_grad(u);
    if (g.norm() < 1e-9) break;
    Eigen::MatrixXd hess(k, k);
    for (Index j = 0; j < k; ++j) {
      Eigen::VectorXd up = u, dn = u;
      up[free[j]] += 1e-6;
      dn[free[j]] -= 1e-6;
      hess.col(j) = (sub_grad(up) - sub_grad(dn)) / 2e-6;
    }
    hess = 0.5 * (hess + hess.transpose()).eval();
    const Eigen::VectorXd step = hess.ldlt().solve(-g);
    double t = 1.0;
    const double f0 = m.log_posterior(u);
    for (;;) {
      Eigen::VectorXd cand = u;
      for (Index j = 0; j < k; ++j) cand[free[j]] += t * step[j];
      if (m.log_posterior(cand) >= f0 || t < 1e-8) {
        u = cand;
        break;
      }
      t *= 0.5;
    }
  }
  EXPECT_LT(sub_grad(u).norm(), 1e-3);
  // A stationary point of the analytic gradient must be a local maximum of the value.
  const double f0 = m.log_posterior(u);
  for (Index j = 0; j < k; ++j) {
    for (double e : {-1e-4, 1e-4}) {
      Eigen::VectorXd v = u;
      v[free[j]] += e;
      EXPECT_LE(m.log_posterior(v), f0 + 1e-9);
    }
  }
}
