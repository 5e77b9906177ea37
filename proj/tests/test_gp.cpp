#include <doctest.h>

#include <cmath>
#include <numbers>

#include "seqbed/bayesopt.hpp"
#include "seqbed/gp.hpp"

using namespace seqbed;

TEST_CASE("Matern-5/2 kernel") {
  CHECK(matern52(0.3, 0.3, 0.7, 2.5) == 2.5);
  CHECK(matern52(0.1, 0.9, 0.4, 1.3) == matern52(0.9, 0.1, 0.4, 1.3));
  const double a = std::sqrt(5.0);
  const double oracle = (1.0 + a + 5.0 / 3.0) * std::exp(-a);
  CHECK(matern52(0.0, 0.4, 0.4, 1.0) == doctest::Approx(oracle).epsilon(1e-14));
  CHECK(std::abs(oracle - 0.5244) < 1e-3);  // closed form gives 0.52399
  CHECK(matern52(0.0f, 0.4f, 0.4f, 1.0f) == doctest::Approx(oracle).epsilon(1e-6));
}

TEST_CASE("expected improvement") {
  CHECK(expected_improvement(0.2, 0.0, 0.5) == 0.0);
  CHECK(expected_improvement(0.5, 0.0, 0.5) == 0.0);
  CHECK(expected_improvement(0.9, 0.0, 0.5) == doctest::Approx(0.4));
  const double sigma = 0.37;
  CHECK(expected_improvement(1.0, sigma, 1.0) == doctest::Approx(sigma / std::sqrt(2.0 * std::numbers::pi)));
  CHECK(expected_improvement(1.0, sigma, 1.0) == doctest::Approx(0.39894 * sigma).epsilon(1e-5));
  Rng rng(1);
  for (int i = 0; i < 2000; ++i) {
    const double m = 20.0 * uniform01(rng) - 10.0;
    const double s = 5.0 * uniform01(rng);
    const double b = 20.0 * uniform01(rng) - 10.0;
    CHECK(expected_improvement(m, s, b) >= 0.0);
  }
}

TEST_CASE("single-point posterior matches the closed form") {
  const GpHyperparams h{0.3, 1.7, 0.05};
  const GpSurrogate gp(Eigen::VectorXd::Constant(1, 0.2), Eigen::VectorXd::Constant(1, 1.4), 0.0, 1.0, h, false);
  for (double x : {0.0, 0.2, 0.35, 0.9}) {
    const double k = matern52(x, 0.2, h.lengthscale, h.signal_var);
    const double denom = h.signal_var + h.noise_var;
    const GpPrediction p = gp.predict(x);
    CHECK(p.mean == doctest::Approx(k / denom * 1.4).epsilon(1e-12));
    CHECK(p.variance == doctest::Approx(h.signal_var - k * k / denom).epsilon(1e-12));
  }
}

TEST_CASE("interpolation and prior reversion") {
  const Eigen::VectorXd x = Eigen::VectorXd::LinSpaced(6, 0.0, 1.0);
  const Eigen::VectorXd y = (2.0 * x.array() + 0.3 * x.array().square()).matrix();
  const GpHyperparams h{0.5, 1.0, 1e-10};
  const GpSurrogate gp(x, y, 0.0, 1.0, h);
  for (Eigen::Index i = 0; i < x.size(); ++i) CHECK(std::abs(gp.predict(x[i]).mean - y[i]) < 1e-6);

  const GpPrediction far = gp.predict(50.0);
  CHECK(far.mean == doctest::Approx(y.mean()).epsilon(1e-9));
  const double var_y = (y.array() - y.mean()).square().mean();
  CHECK(far.variance == doctest::Approx(h.signal_var * var_y).epsilon(1e-9));
}

TEST_CASE("marginal likelihood gradient matches finite differences") {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    Eigen::VectorXd x(5), y(5);
    for (int i = 0; i < 5; ++i) {
      x[i] = uniform01(rng);
      y[i] = std::normal_distribution<double>(0.0, 1.0)(rng);
    }
    const Eigen::Vector3d p(std::log(0.05 + 0.5 * uniform01(rng)), std::log(0.5 + uniform01(rng)),
                            std::log(0.01 + 0.2 * uniform01(rng)));
    const LogMarginalLikelihood at = gp_log_marginal_likelihood(x, y, p);
    REQUIRE(at.ok);
    for (int j = 0; j < 3; ++j) {
      const double h = 1e-5;
      Eigen::Vector3d up = p, down = p;
      up[j] += h;
      down[j] -= h;
      const double fd = (gp_log_marginal_likelihood(x, y, up).value -
                         gp_log_marginal_likelihood(x, y, down).value) / (2.0 * h);
      CHECK(std::abs(at.gradient[j] - fd) <= 1e-4 * std::max(std::abs(fd), 1e-3));
    }
  }
}

TEST_CASE("hyperparameter fit") {
  Rng rng(3);
  Eigen::VectorXd x(12), y(12);
  for (int i = 0; i < 12; ++i) {
    x[i] = 2.0 * std::numbers::pi * uniform01(rng);
    y[i] = std::sin(x[i]) + 0.05 * std::normal_distribution<double>(0.0, 1.0)(rng);
  }
  const GpConfig cfg;
  const GpSurrogate gp = gp_fit(x, y, 0.0, 2.0 * std::numbers::pi, cfg);
  const GpHyperparams& h = gp.hyperparams();
  CHECK(!gp.fallback);
  CHECK(h.lengthscale >= cfg.min_lengthscale);
  CHECK(h.lengthscale <= cfg.max_lengthscale);
  CHECK(h.noise_var >= cfg.noise_floor);
  // the optimum beats the starting points
  const Eigen::VectorXd xu = x / (2.0 * std::numbers::pi);
  const Eigen::VectorXd yz = (y.array() - y.mean()) / std::sqrt((y.array() - y.mean()).square().mean());
  for (double ell : {0.05, 0.1, 0.2, 0.5, 1.0}) {
    CHECK(gp.log_marginal_likelihood() >=
          gp_log_marginal_likelihood(xu, yz, Eigen::Vector3d(std::log(ell), 0.0, std::log(0.1))).value);
  }
  const double scale2 = gp.target_scale() * gp.target_scale();
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    CHECK(gp.predict(x[i]).variance / scale2 <= h.noise_var + 1e-8);
  }
  CHECK(std::abs(gp.predict(std::numbers::pi / 2).mean - 1.0) < 0.2);

  CHECK_THROWS_AS(gp_fit(Eigen::VectorXd::Constant(3, 1.0), y.head(3), 0.0, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(gp_fit(x.head(1), y.head(1), 0.0, 1.0), std::invalid_argument);
}

TEST_CASE("Bayesian optimization") {
  const DesignDomain continuous{0.0, 2.0 * std::numbers::pi, false};
  SUBCASE("concave toy objective") {
    BoConfig cfg;
    cfg.budget = 15;
    Rng rng(4);
    const BoResult r = bo_optimize([](double d, std::uint64_t) { return -(d - 1.5) * (d - 1.5); },
                                   continuous, cfg, rng);
    CHECK(std::abs(r.d_star - 1.5) < 0.1);
    CHECK(r.trace.evaluations.size() == 15);
    CHECK(r.trace.grid.size() == cfg.grid_points);
    for (std::size_t i = 0; i < r.trace.evaluations.size(); ++i) {
      for (std::size_t j = 0; j < i; ++j) {
        CHECK(std::abs(r.trace.evaluations[i].design - r.trace.evaluations[j].design) > 1e-6);
      }
    }
  }
  SUBCASE("discrete domain") {
    const DesignDomain discrete{1.0, 145.0, true};
    Rng rng(5);
    Rng noise(6);
    const BoResult r = bo_optimize(
        [&](double d, std::uint64_t) {
          return -std::pow((d - 100.0) / 40.0, 2) + 0.05 * std::normal_distribution<double>(0.0, 1.0)(noise);
        },
        discrete, default_bo_config(discrete), rng);
    CHECK(discrete.contains(r.d_star));
    CHECK(r.trace.evaluations.size() == 25);
    std::vector<double> seen;
    for (const BoEvaluation& e : r.trace.evaluations) {
      CHECK(discrete.contains(e.design));
      CHECK(std::find(seen.begin(), seen.end(), e.design) == seen.end());
      seen.push_back(e.design);
    }
    CHECK(std::abs(r.d_star - 100.0) < 20.0);
  }
  SUBCASE("small discrete domains stop when exhausted") {
    Rng rng(7);
    BoConfig cfg;
    cfg.budget = 30;
    const BoResult r = bo_optimize([](double d, std::uint64_t) { return -std::abs(d - 3.0); },
                                   DesignDomain{1.0, 6.0, true}, cfg, rng);
    CHECK(r.trace.evaluations.size() == 6);
    CHECK(r.d_star == 3.0);
  }
  SUBCASE("failures are retried once then skipped") {
    Rng rng(8);
    BoConfig cfg;
    cfg.budget = 10;
    int calls = 0;
    const BoResult r = bo_optimize(
        [&](double d, std::uint64_t) {
          ++calls;
          if (d > 5.0) throw std::runtime_error("simulated failure");
          return -(d - 2.0) * (d - 2.0);
        },
        continuous, cfg, rng);
    int failed = 0;
    for (const BoEvaluation& e : r.trace.evaluations) {
      if (!e.ok) {
        ++failed;
        CHECK(e.attempts == 2);
        CHECK(e.error == "simulated failure");
      }
    }
    CHECK(failed >= 1);
    CHECK(calls == static_cast<int>(r.trace.evaluations.size()) + failed);
    CHECK(!r.trace.log.empty());
    CHECK(std::abs(r.d_star - 2.0) < 0.3);
  }
  SUBCASE("every evaluation failing is an error") {
    Rng rng(9);
    BoConfig cfg;
    cfg.budget = 6;
    CHECK_THROWS_AS(bo_optimize([](double, std::uint64_t) -> double { throw std::runtime_error("no"); },
                                continuous, cfg, rng),
                    BoError);
  }
  SUBCASE("trace is reproducible under a fixed seed") {
    BoConfig cfg;
    cfg.budget = 12;
    const auto noisy = [](double d, std::uint64_t seed) {
      Rng r(seed);
      return std::sin(d) + 0.1 * std::normal_distribution<double>(0.0, 1.0)(r);
    };
    Rng a(10), b(10);
    const BoResult x = bo_optimize(noisy, continuous, cfg, a);
    const BoResult y = bo_optimize(noisy, continuous, cfg, b);
    REQUIRE(x.trace.evaluations.size() == y.trace.evaluations.size());
    for (std::size_t i = 0; i < x.trace.evaluations.size(); ++i) {
      CHECK(x.trace.evaluations[i].design == y.trace.evaluations[i].design);
      CHECK(x.trace.evaluations[i].value == y.trace.evaluations[i].value);
      CHECK(x.trace.evaluations[i].seed == y.trace.evaluations[i].seed);
    }
    CHECK(x.trace.mean == y.trace.mean);
    CHECK(x.d_star == y.d_star);
  }
}
