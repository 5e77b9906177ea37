#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "seqbed/utilities.hpp"

using namespace seqbed;

namespace {

ParticleRatios flat_ratios(double design, const Eigen::MatrixXd& thetas, int summary_dim) {
  ParticleRatios r;
  r.design = design;
  r.own_summaries = Eigen::MatrixXd::Zero(thetas.rows(), summary_dim);
  for (Eigen::Index i = 0; i < thetas.rows(); ++i) {
    RatioModel m;
    m.beta = Eigen::VectorXd::Zero(summary_dim + 1);
    m.scaler = FeatureScaler::identity(summary_dim);
    m.theta = thetas.row(i).transpose();
    r.models.push_back(m);
  }
  return r;
}

// Population covariance written out with loops.
Eigen::MatrixXd covariance_oracle(const Eigen::MatrixXd& t) {
  const Eigen::Index n = t.rows(), p = t.cols();
  Eigen::MatrixXd c = Eigen::MatrixXd::Zero(p, p);
  for (Eigen::Index a = 0; a < p; ++a) {
    for (Eigen::Index b = 0; b < p; ++b) {
      double ma = 0.0, mb = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        ma += t(i, a);
        mb += t(i, b);
      }
      ma /= n;
      mb /= n;
      for (Eigen::Index i = 0; i < n; ++i) c(a, b) += (t(i, a) - ma) * (t(i, b) - mb) / n;
    }
  }
  return c;
}

LfireConfig small_config() {
  LfireConfig cfg;
  cfg.n_like = 50;
  cfg.n_marginal = 50;
  return cfg;
}

}  // namespace

TEST_CASE("utility kinds parse") {
  for (UtilityKind k : {UtilityKind::mi, UtilityKind::mi_weighted, UtilityKind::bd_opt, UtilityKind::bd_opt_stable}) {
    CHECK(parse_utility_kind(to_string(k)) == k);
  }
  CHECK_THROWS_AS(parse_utility_kind("entropy"), std::invalid_argument);
}

TEST_CASE("flat ratios carry no information") {
  Rng rng(1);
  Eigen::MatrixXd thetas(40, 2);
  for (Eigen::Index i = 0; i < thetas.size(); ++i) thetas.data()[i] = uniform01(rng);
  const ParticleRatios r = flat_ratios(0.5, thetas, 3);
  CHECK(mi_from_ratios(r).value == 0.0);
  CHECK(mi_from_ratios(r, Eigen::VectorXd::LinSpaced(40, 0.1, 3.0)).value == 0.0);

  const double prior_det = covariance_oracle(thetas).determinant();
  BdOptOptions mean_agg;
  mean_agg.aggregation = Aggregation::mean;
  CHECK(bd_opt_from_ratios(r, thetas).value == doctest::Approx(1.0 / prior_det).epsilon(1e-10));
  CHECK(bd_opt_from_ratios(r, thetas, mean_agg).value == doctest::Approx(1.0 / prior_det).epsilon(1e-10));
  CHECK(bd_opt_stable_from_ratios(r, thetas).value == doctest::Approx(-std::log(prior_det)).epsilon(1e-10));
}

TEST_CASE("BD-Opt hand values") {
  SUBCASE("1-D posterior variance 0.25") {
    const Eigen::MatrixXd thetas = Eigen::Vector2d(-0.5, 0.5);
    CHECK(bd_opt_from_ratios(flat_ratios(0.0, thetas, 1), thetas).value == doctest::Approx(4.0));
  }
  SUBCASE("2-D covariance 0.25 I") {
    Eigen::MatrixXd thetas(4, 2);
    thetas << -0.5, -0.5, -0.5, 0.5, 0.5, -0.5, 0.5, 0.5;
    CHECK(covariance_oracle(thetas).isApprox(0.25 * Eigen::Matrix2d::Identity()));
    const UtilityEstimate s = bd_opt_stable_from_ratios(flat_ratios(0.0, thetas, 1), thetas);
    CHECK(s.value == doctest::Approx(-std::log(0.0625)));
    CHECK(s.value == doctest::Approx(2.7726).epsilon(1e-4));
  }
  SUBCASE("reweighting by the ratios") {
    // Ratios 3:1 on two points at 0 and 1: weighted variance 3/16.
    ParticleRatios r = flat_ratios(0.0, Eigen::Vector2d(0.0, 1.0), 1);
    r.models[0].beta[0] = std::log(3.0);
    CHECK(bd_opt_from_ratios(r, Eigen::Vector2d(0.0, 1.0)).value == doctest::Approx(16.0 / 3.0));
  }
  SUBCASE("singular covariance hits the cap") {
    const Eigen::MatrixXd thetas = Eigen::MatrixXd::Constant(5, 1, 0.3);
    const UtilityEstimate e = bd_opt_from_ratios(flat_ratios(0.0, thetas, 1), thetas);
    CHECK(e.n_capped == 5);
    CHECK(e.value == doctest::Approx(1e12));
  }
}

TEST_CASE("weighted covariance") {
  Eigen::MatrixXd thetas(3, 1);
  thetas << 0.0, 1.0, 2.0;
  // weights 1, 0, 1: mean 1, variance 1
  CHECK(weighted_covariance(thetas, Eigen::Vector3d(1.0, 0.0, 1.0))(0, 0) == doctest::Approx(1.0));
}

TEST_CASE("MI estimates on the death model") {
  const auto model = make_model(ModelKind::death);
  Rng rng(2);
  const ParticleSet prior(model->sample_prior(200, rng), model->spec().bounds);
  const LfireConfig cfg = small_config();

  SUBCASE("permuting particles does not change the estimate") {
    std::vector<int> perm(200);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Eigen::MatrixXd shuffled(200, 1);
    for (int i = 0; i < 200; ++i) shuffled.row(i) = prior.thetas().row(perm[static_cast<std::size_t>(i)]);
    const UtilityEstimate a = estimate_mi(1.0, prior.thetas(), prior, *model, 77, cfg);
    const UtilityEstimate b = estimate_mi(1.0, shuffled, prior, *model, 77, cfg);
    CHECK(a.value == doctest::Approx(b.value).epsilon(1e-12));
  }
  SUBCASE("thread count does not change the estimate") {
    LfireConfig one = cfg, many = cfg;
    one.threads = 1;
    many.threads = 3;
    const UtilityEstimate a = estimate_mi(1.0, prior.thetas(), prior, *model, 5, one, true);
    const UtilityEstimate b = estimate_mi(1.0, prior.thetas(), prior, *model, 5, many, true);
    CHECK(a.value == b.value);
    REQUIRE(a.ratio_models.size() == 200);
    CHECK(a.ratio_models[13].beta == b.ratio_models[13].beta);
  }
  SUBCASE("weighted and plain estimators coincide at k = 1") {
    const UtilityEstimate a = estimate_mi(1.0, prior.thetas(), prior, *model, 9, cfg);
    const UtilityEstimate b = estimate_mi_weighted(1.0, prior, *model, 9, cfg);
    CHECK(a.value == doctest::Approx(b.value).epsilon(1e-12));
  }
  SUBCASE("weighted estimator after an update") {
    // k = 2: reweight by a fitted ratio at tau = 1 and compare paired runs.
    UtilityEstimate first = estimate_mi(1.0, prior.thetas(), prior, *model, 11, cfg, true);
    const ParticleSet posterior = update_weights(prior, first.ratio_models, model->summarize({40.0}));
    Rng draw(12);
    const Eigen::MatrixXd thetas = sample_belief(posterior, 200, draw);
    const UtilityEstimate a = estimate_mi(2.0, thetas, posterior, *model, 13, cfg);
    const UtilityEstimate b = estimate_mi_weighted(2.0, posterior, *model, 13, cfg);
    CHECK(std::abs(a.value - b.value) < 3.0 * std::hypot(a.standard_error, b.standard_error));
  }
  SUBCASE("Jensen ordering of the BD-Opt forms") {
    BdOptOptions mean_agg;
    mean_agg.aggregation = Aggregation::mean;
    for (double d : {0.3, 1.0, 2.5}) {
      const UtilityEstimate stable = bd_opt_stable(d, prior.thetas(), prior, *model, 21, cfg, mean_agg);
      const UtilityEstimate plain = bd_opt(d, prior.thetas(), prior, *model, 21, cfg, mean_agg);
      CHECK(stable.value <= std::log(plain.value) + 1e-12);
    }
  }
  SUBCASE("evaluation keeps per-particle terms") {
    const UtilityEstimate e = evaluate_utility(UtilityKind::mi, 1.0, prior.thetas(), prior, *model, 3, cfg);
    REQUIRE(e.per_particle.has_value());
    CHECK(e.per_particle->mean() == doctest::Approx(e.value));
    CHECK(e.n_particles == 200);
    CHECK(e.seed == 3);
  }
}

TEST_CASE("too many non-finite log-ratios fail the estimate") {
  Eigen::MatrixXd thetas = Eigen::VectorXd::LinSpaced(10, 0.0, 1.0);
  ParticleRatios r = flat_ratios(0.0, thetas, 1);
  r.models[0].beta[0] = std::nan("");
  const UtilityEstimate ok = mi_from_ratios(r);
  CHECK(ok.n_dropped == 1);
  r.models[1].beta[0] = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(mi_from_ratios(r), UtilityError);
  r = flat_ratios(0.0, thetas, 1);
  r.models[2].beta[0] = 80.0;
  const UtilityEstimate clipped = mi_from_ratios(r);
  CHECK(clipped.n_clipped == 1);
  CHECK(clipped.value == doctest::Approx(5.0));
}

TEST_CASE("nested Monte-Carlo reference MI") {
  const auto death = make_model(ModelKind::death);
  Rng rng(3);
  const ReferenceMi early = reference_mi(0.05, *death, 1000, 1000, rng);
  const ReferenceMi mid = reference_mi(1.0, *death, 1000, 1000, rng);
  const ReferenceMi late = reference_mi(4.0, *death, 1000, 1000, rng);
  CHECK(early.value < mid.value);
  CHECK(late.value < mid.value);
  for (const ReferenceMi& r : {early, mid, late}) CHECK(r.value >= -3.0 * r.standard_error);

  const ReferenceMi repeat = reference_mi(1.0, *death, 1000, 1000, rng);
  CHECK(std::abs(repeat.value - mid.value) < 3.0 * std::hypot(repeat.standard_error, mid.standard_error));

  const auto osc = make_model(ModelKind::oscillation);
  const ReferenceMi zero = reference_mi(0.0, *osc, 500, 500, rng);
  CHECK(std::abs(zero.value) < 1e-12);
  CHECK(reference_mi(1e-3, *osc, 500, 500, rng).value < 0.01);

  CHECK_THROWS_AS(reference_mi(1.0, *make_model(ModelKind::sir), 10, 10, rng), std::invalid_argument);
}

TEST_CASE("death MI peaks near tau = 1") {
  const auto model = make_model(ModelKind::death);
  Rng rng(4);
  const ParticleSet prior(model->sample_prior(300, rng), model->spec().bounds);
  double best = -1.0, arg = 0.0;
  for (int i = 0; i < 15; ++i) {
    const double tau = 0.1 + i * (3.9 / 14.0);
    const double v = estimate_mi(tau, prior.thetas(), prior, *model, 100 + i, LfireConfig{}).value;
    if (v > best) {
      best = v;
      arg = tau;
    }
  }
  CHECK(arg >= 0.6);
  CHECK(arg <= 1.4);
}
