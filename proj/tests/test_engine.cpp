#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <thread>

#include "seqbed/engine.hpp"
#include "seqbed/persist.hpp"
#include "seqbed/server.hpp"

// after Eigen: <resolv.h> defines a _res macro that clashes with Eigen internals
#include <httplib.h>

using namespace seqbed;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

RunConfig small_config(ModelKind kind, std::uint64_t seed = 3) {
  RunConfig c = make_config(kind);
  c.particles = 120;
  c.utility_draws = 120;
  c.iterations = 3;
  c.seed = seed;
  c.bo.budget = 7;
  c.bo.n_init = 3;
  c.lfire.n_like = 30;
  c.lfire.n_marginal = 30;
  c.posterior.samples = 2000;
  return c;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("seqbed_test_" + name);
  fs::remove_all(p);
  return p;
}

std::string dump(const RunState& s) { return state_to_json(s).dump(); }

}  // namespace

#ifdef SEQBED_CONFIG_DIR
TEST_CASE("shipped configs load") {
  int n = 0;
  for (const auto& entry : fs::directory_iterator(SEQBED_CONFIG_DIR)) {
    if (entry.path().extension() != ".json") continue;
    CAPTURE(entry.path().string());
    const RunConfig c = load_config(entry.path());
    CHECK_NOTHROW(validate_config(c));
    CHECK(config_to_json(parse_config(config_to_json(c))) == config_to_json(c));
    ++n;
  }
  CHECK(n >= 4);
}
#endif

TEST_CASE("config parsing") {
  SUBCASE("defaults per model") {
    const RunConfig osc = parse_config(json{{"model", "oscillation"}});
    CHECK(osc.particles == 1000);
    CHECK(osc.iterations == 4);
    CHECK(osc.ess_fraction == 0.5);
    CHECK(osc.bo.budget == 30);
    CHECK(osc.oracle.theta_true[0] == 0.5);
    const RunConfig cell = parse_config(json{{"model", "cell"}});
    CHECK(cell.particles == 300);
    CHECK(cell.bo.budget == 25);
    CHECK(cell.oracle.theta_true[1] == 0.001);
    CHECK(parse_config(json{{"model", "sir"}}).oracle.theta_true[0] == 0.15);
    CHECK(parse_config(json{{"model", "sir"}}).bo.n_init == 10);
    CHECK(osc.bo.n_init == 5);
    CHECK(parse_config(json{{"model", "death"}}).oracle.theta_true[0] == 1.5);
  }
  SUBCASE("overrides and nesting") {
    const RunConfig c = parse_config(json::parse(R"({
      "model": {"name": "death", "t_max": 6.0, "population": 40},
      "particles": 200, "utility": "bd_opt_stable", "seed": 9,
      "oracle": {"kind": "interactive"},
      "bo": {"budget": 12, "gp": {"restarts": 3}},
      "lfire": {"n_like": 50, "cross_validate": true}
    })"));
    CHECK(c.model_options.death.t_max == 6.0);
    CHECK(c.model_options.death.population == 40);
    CHECK(c.utility_draws == 200);  // follows particles unless given
    CHECK(c.utility == UtilityKind::bd_opt_stable);
    CHECK(c.oracle.kind == OracleKind::interactive);
    CHECK(c.bo.budget == 12);
    CHECK(c.bo.gp.restarts == 3);
    CHECK(c.lfire.n_like == 50);
    CHECK(c.lfire.cross_validate);
    CHECK(make_model(c)->spec().design_domain.hi == 6.0);
  }
  SUBCASE("round trip") {
    RunConfig c = small_config(ModelKind::sir);
    c.oracle.theta_true = Eigen::Vector2d(0.2, 0.1);
    const json j = config_to_json(c);
    CHECK(config_to_json(parse_config(j)) == j);
  }
  SUBCASE("rejections") {
    CHECK_THROWS_AS(parse_config(json{{"model", "oscillation"}, {"particle", 10}}), ConfigError);
    CHECK_THROWS_AS(parse_config(json{{"model", "pendulum"}}), ConfigError);
    CHECK_THROWS_AS(parse_config(json{{"particles", 10}}), ConfigError);
    CHECK_THROWS_AS(parse_config(json{{"model", "oscillation"}, {"iterations", 0}}), ConfigError);
    CHECK_THROWS_AS(parse_config(json{{"model", "oscillation"}, {"particles", 1}}), ConfigError);
    CHECK_THROWS_AS(parse_config(json{{"model", "oscillation"}, {"ess_fraction", 0.0}}), ConfigError);
    CHECK_THROWS_AS(parse_config(json{{"model", "oscillation"}, {"ess_fraction", 1.5}}), ConfigError);
    CHECK_THROWS_AS(parse_config(json{{"model", "sir"}, {"oracle", {{"theta_true", {0.6, 0.1}}}}}),
                    ConfigError);
    CHECK_THROWS_AS(parse_config(json{{"model", "sir"}, {"oracle", {{"theta_true", {0.1}}}}}),
                    ConfigError);
    CHECK_THROWS_AS(parse_config(json{{"model", {{"name", "death"}, {"rows", 3}}}}), ConfigError);
    CHECK_THROWS_AS(parse_config(json{{"model", "death"}, {"utility", "entropy"}}), ConfigError);
  }
}

TEST_CASE("simulated campaign") {
  const RunConfig config = small_config(ModelKind::oscillation);
  RunState state = initialize(config);
  CHECK(state.status == RunStatus::running);
  CHECK(state.prior.size() == 120);
  run_until_blocked(state);

  CHECK(state.status == RunStatus::done);
  CHECK(state.k == 3);
  REQUIRE(state.history.size() == 3);
  CHECK_THROWS_AS(run_iteration(state), StateError);
  CHECK_THROWS_AS(observe(state, {0.1}), StateError);

  SUBCASE("history is consistent") {
    const auto model = make_model(config);
    for (const IterationRecord& r : state.history) {
      CHECK(model->spec().design_domain.contains(r.design));
      CHECK(r.design == r.bo.d_star);
      CHECK(r.ratio_models.size() == 120);
      CHECK(r.surface.size() == r.bo.evaluations.size());
      CHECK(static_cast<int>(r.surface.size()) <= config.bo.budget);
      CHECK(r.observation == simulated_oracle(*model, config.oracle.theta_true, r.design, config.seed, r.k));
      CHECK(r.particles.iteration() == r.k);
    }
    CHECK_FALSE(state.history[0].resampled);
    CHECK(state.history[0].utility_draws == 120);
  }
  SUBCASE("full-run determinism") {
    RunState again = initialize(config);
    run_until_blocked(again);
    CHECK(dump(again) == dump(state));
  }
  SUBCASE("a different seed gives a different run") {
    RunState other = initialize(small_config(ModelKind::oscillation, 4));
    run_iteration(other);
    CHECK(other.history[0].surface[0].seed != state.history[0].surface[0].seed);
  }
}

TEST_CASE("resampling follows the ESS threshold") {
  RunConfig config = small_config(ModelKind::death);
  config.iterations = 4;
  config.ess_fraction = 0.9;
  RunState state = initialize(config);
  run_until_blocked(state);
  int resamples = 0;
  for (const IterationRecord& r : state.history) {
    const bool below = r.ess_before < config.ess_fraction * config.particles;
    CHECK(r.resampled == (r.k > 1 && below));
    if (r.resampled) {
      ++resamples;
      CHECK(r.particles.bounds().contains(r.particles.thetas().row(0).transpose()));
      CHECK(r.utility_draws == config.particles);
    }
  }
  // every resample event is preceded by an ESS event below the threshold
  double last_ess = -1.0, last_threshold = -1.0;
  int events = 0;
  for (const RunEvent& e : state.events) {
    if (e.type == "ess") {
      last_ess = e.data["ess"];
      last_threshold = e.data["threshold"];
    } else if (e.type == "resample") {
      ++events;
      CHECK(last_ess < last_threshold);
      CHECK(e.k > 1);
    }
  }
  CHECK(events == resamples);
  CHECK(resamples >= 1);
}

TEST_CASE("oracle draws use their own stream") {
  RunConfig a = small_config(ModelKind::death);
  a.iterations = 1;
  RunConfig b = a;
  b.oracle.theta_true[0] = 0.4;
  RunState sa = initialize(a), sb = initialize(b);
  run_iteration(sa);
  run_iteration(sb);
  const IterationRecord& ra = sa.history[0];
  const IterationRecord& rb = sb.history[0];
  CHECK(ra.design == rb.design);
  REQUIRE(ra.surface.size() == rb.surface.size());
  for (std::size_t i = 0; i < ra.surface.size(); ++i) {
    CHECK(ra.surface[i].value == rb.surface[i].value);
    CHECK(ra.surface[i].seed == rb.surface[i].seed);
  }
  const auto model = make_model(a);
  const Observation y1 = simulated_oracle(*model, a.oracle.theta_true, 1.0, 5, 1);
  CHECK(simulated_oracle(*model, a.oracle.theta_true, 1.0, 5, 1) == y1);
}

TEST_CASE("resuming from disk reproduces the run") {
  const RunConfig config = small_config(ModelKind::sir);
  RunState full = initialize(config);
  run_until_blocked(full);

  const fs::path dir = scratch("resume");
  RunState part = initialize(config);
  run_iteration(part);
  save_state(part, dir);
  RunState resumed = load_state(dir);
  CHECK(dump(resumed) == dump(part));
  run_until_blocked(resumed);
  CHECK(dump(resumed) == dump(full));
  fs::remove_all(dir);
}

TEST_CASE("persistence") {
  RunState state = initialize(small_config(ModelKind::death));
  run_iteration(state);
  const fs::path dir = scratch("persist");
  save_state(state, dir);
  for (const char* f : {"manifest.json", "iteration_000.json", "iteration_001.json", "surface_k001.csv",
                        "bo_trace_k001.csv"}) {
    CHECK(fs::exists(dir / f));
  }
  const json manifest = read_json(dir / "manifest.json");
  CHECK(manifest["schema_version"] == kSchemaVersion);
  CHECK(manifest["k"] == 1);
  CHECK(manifest["status"] == "running");

  SUBCASE("round trip is exact") {
    const RunState loaded = load_state(dir);
    CHECK(dump(loaded) == dump(state));
    CHECK(loaded.particles.log_weights() == state.particles.log_weights());
  }
  SUBCASE("zero weights survive as null") {
    Eigen::VectorXd logw = state.particles.log_weights();
    logw[0] = -std::numeric_limits<double>::infinity();
    state.history.back().particles = ParticleSet(state.particles.thetas(), logw, state.particles.bounds(), 1);
    state.particles = state.history.back().particles;
    save_state(state, dir);
    const RunState loaded = load_state(dir);
    CHECK(std::isinf(loaded.particles.log_weights()[0]));
    CHECK(loaded.particles.weights()[0] == 0.0);
    CHECK(loaded.particles.bounds().upper[0] == std::numeric_limits<double>::infinity());
  }
  SUBCASE("side files") {
    std::ifstream in(dir / "surface_k001.csv");
    std::string header;
    std::getline(in, header);
    CHECK(header.rfind("design,value,standard_error", 0) == 0);
    int rows = 0;
    for (std::string line; std::getline(in, line);) ++rows;
    CHECK(rows == static_cast<int>(state.history[0].surface.size()));
  }
  SUBCASE("a fresh campaign in the same directory drops old iterations") {
    save_state(initialize(small_config(ModelKind::death)), dir);
    CHECK_FALSE(fs::exists(dir / "iteration_001.json"));
    CHECK_FALSE(fs::exists(dir / "surface_k001.csv"));
    CHECK(load_state(dir).k == 0);
  }
  SUBCASE("schema version is checked") {
    json doc = state_to_json(state);
    doc["schema_version"] = 99;
    CHECK_THROWS_AS(state_from_json(doc), PersistError);
  }
  fs::remove_all(dir);
}

TEST_CASE("interactive observations") {
  RunConfig config = small_config(ModelKind::death);
  config.oracle.kind = OracleKind::interactive;
  RunState state = initialize(config);
  CHECK_THROWS_AS(observe(state, {10}), StateError);
  run_iteration(state);
  REQUIRE(state.status == RunStatus::awaiting_observation);
  REQUIRE(state.pending.has_value());
  CHECK(state.k == 0);
  CHECK(state.history.empty());
  CHECK_THROWS_AS(run_iteration(state), StateError);

  const std::string before = dump(state);
  CHECK_THROWS_AS(observe(state, {51}), ObservationError);
  CHECK_THROWS_AS(observe(state, {-1}), ObservationError);
  CHECK_THROWS_AS(observe(state, {12.5}), ObservationError);
  CHECK_THROWS_AS(observe(state, {3, 4}), ObservationError);
  CHECK(dump(state) == before);

  const double design = state.pending->design;
  observe(state, {30});
  CHECK(state.k == 1);
  CHECK(state.status == RunStatus::running);
  CHECK_FALSE(state.pending.has_value());
  CHECK(state.history[0].design == design);
  CHECK(state.history[0].observation == Observation{30});

  // the update is exactly the stored ratio models at the observed summary
  const auto model = make_model(config);
  const ParticleSet expected =
      update_weights(state.prior, state.history[0].ratio_models, model->summarize({30}));
  CHECK(state.particles.log_weights() == expected.log_weights());

  const fs::path dir = scratch("interactive");
  save_state(state, dir);
  CHECK(load_state(dir).particles.log_weights() == state.particles.log_weights());
  fs::remove_all(dir);
}

TEST_CASE("an oscillation observation at t = 2.196 leaves two modes") {
  RunConfig config = make_config(ModelKind::oscillation);
  config.oracle.kind = OracleKind::interactive;
  config.iterations = 1;
  config.bo.budget = 3;
  // with the fixed default penalty the cubic log-ratio overweights w near pi
  // and leaves a third bump at ~15% of the peak; cross-validation removes it
  config.lfire.cross_validate = true;
  RunState state = initialize(config);
  run_iteration(state);
  REQUIRE(state.pending.has_value());
  // replace the proposal with the design from the published run
  const auto model = make_model(config);
  const double t = 2.196;
  state.pending->design = t;
  state.pending->ratio_models =
      fit_particle_ratios(t, state.prior.thetas(), state.prior, *model, 77, config.lfire).models;
  observe(state, {0.790});
  CHECK(state.status == RunStatus::done);
  const PosteriorSummary post = summarize_posterior(state, 1);
  const MarginalSummary& m = post.marginals[0];
  REQUIRE(m.modes.size() == 2);
  CHECK(m.modes[0] == doctest::Approx(0.415).epsilon(0.1));
  CHECK(m.modes[1] == doctest::Approx(1.015).epsilon(0.1));
  const bool covers = std::any_of(m.hpd_region.begin(), m.hpd_region.end(),
                                  [](const Interval& iv) { return iv.contains(0.5); });
  CHECK(covers);
}

TEST_CASE("posterior summaries") {
  RunState state = initialize(small_config(ModelKind::sir));
  run_iteration(state);
  const PosteriorSummary post = summarize_posterior(state, 1);
  REQUIRE(post.marginals.size() == 2);
  CHECK(post.marginals[0].name == "beta");
  CHECK(post.marginals[1].name == "gamma");
  for (const MarginalSummary& m : post.marginals) {
    CHECK(m.kde.grid.size() == 512);
    CHECK(m.hpdi.lo < m.mean);
    CHECK(m.mean < m.hpdi.hi);
  }
  REQUIRE(post.joint.has_value());
  CHECK(post.joint->density.rows() == 64);
  CHECK(post.joint->density.cols() == 64);
  // the gridded joint density integrates to about one
  const double dx = post.joint->x[1] - post.joint->x[0];
  const double dy = post.joint->y[1] - post.joint->y[0];
  CHECK(post.joint->density.sum() * dx * dy == doctest::Approx(1.0).epsilon(0.05));
  CHECK(summarize_posterior(state, 1).marginals[0].mean == post.marginals[0].mean);
  CHECK_THROWS_AS(summarize_posterior(state, 2), std::out_of_range);

  SUBCASE("prior summary at k = 0") {
    const PosteriorSummary prior = summarize_posterior(state, 0);
    CHECK(prior.marginals[0].mean == doctest::Approx(0.25).epsilon(0.1));
  }
  SUBCASE("point-mass belief has a narrow interval") {
    Eigen::VectorXd logw = Eigen::VectorXd::Constant(state.particles.size(), -std::numeric_limits<double>::infinity());
    logw[5] = 0.0;
    state.history[0].particles = ParticleSet(state.particles.thetas(), logw, state.particles.bounds(), 1);
    const PosteriorSummary point = summarize_posterior(state, 1);
    CHECK(point.marginals[0].hpdi.width() < 1e-6);
    CHECK(point.marginals[0].mean == doctest::Approx(state.particles.thetas()(5, 0)));
  }
}

TEST_CASE("utility surface dump") {
  RunState state = initialize(small_config(ModelKind::death));
  const std::vector<double> designs{0.5, 1.0, 2.0};
  const std::vector<SurfacePoint> s = utility_surface(state, 0, designs, UtilityKind::mi);
  REQUIRE(s.size() == 3);
  for (const SurfacePoint& p : s) CHECK(p.ok);
  CHECK(s[0].value != s[1].value);
  const std::vector<SurfacePoint> again = utility_surface(state, 0, designs, UtilityKind::mi);
  CHECK(again[2].value == s[2].value);
  CHECK(utility_surface(state, 0, {9.0}, UtilityKind::mi)[0].design == 4.0);
}

TEST_CASE("HTTP API") {
  RunConfig config = small_config(ModelKind::death);
  config.oracle.kind = OracleKind::interactive;
  config.iterations = 2;
  const fs::path dir = scratch("http");
  Server server(initialize(config), dir);
  const int port = server.bind("127.0.0.1", 0);
  REQUIRE(port > 0);
  std::thread thread([&] { server.serve(); });
  server.wait_until_ready();
  httplib::Client client("127.0.0.1", port);
  client.set_read_timeout(120, 0);

  auto get = [&](const std::string& path) {
    auto res = client.Get(path);
    REQUIRE(res);
    return std::make_pair(res->status, json::parse(res->body));
  };
  auto post = [&](const std::string& path, const std::string& body) {
    auto res = client.Post(path, body, "application/json");
    REQUIRE(res);
    return std::make_pair(res->status, json::parse(res->body));
  };

  auto [code, state] = get("/state");
  CHECK(code == 200);
  CHECK(state["status"] == "running");
  CHECK(state["k"] == 0);
  CHECK(state["iterations"] == 2);
  CHECK(state["ess"] == doctest::Approx(120.0));
  CHECK(state["pending"].is_null());
  CHECK(state["param_names"] == json{"b"});
  CHECK(state.contains("timestamp_ms"));

  CHECK(post("/observe", R"({"y": 10})").first == 409);
  CHECK(get("/surface").first == 404);
  CHECK(get("/posterior?iteration=0").first == 200);
  CHECK(get("/posterior?iteration=1").first == 404);
  CHECK(get("/posterior?iteration=x").first == 400);

  std::tie(code, state) = post("/step", "");
  CHECK(code == 200);
  CHECK(state["status"] == "awaiting_observation");
  CHECK(state["pending"]["k"] == 1);
  const double design = state["pending"]["design"];
  CHECK(post("/step", "").first == 409);

  std::tie(code, state) = get("/surface");
  CHECK(code == 200);
  CHECK(state["iteration"] == 1);
  CHECK(state["design"] == design);
  CHECK(state["grid"].size() == state["gp_mean"].size());
  CHECK(state["evaluations"].size() == 7);

  auto [bad, error] = post("/observe", R"({"y": 51})");
  CHECK(bad == 400);
  CHECK(error["error"].get<std::string>().find("50") != std::string::npos);
  CHECK(post("/observe", R"({"value": 5})").first == 400);
  CHECK(post("/observe", R"({"y": "ten"})").first == 400);
  CHECK(get("/state").second["status"] == "awaiting_observation");

  std::tie(code, state) = post("/observe", R"({"y": 25})");
  CHECK(code == 200);
  CHECK(state["k"] == 1);
  CHECK(state["history"][0]["observation"] == json{25.0});
  CHECK(state["history"][0]["design"] == design);

  std::tie(code, state) = get("/posterior?iteration=1");
  CHECK(code == 200);
  CHECK(state["marginals"][0]["name"] == "b");
  CHECK(state["marginals"][0]["grid"].size() == 512);
  CHECK(state["marginals"][0]["hpdi"].size() == 2);

  // the state directory follows every mutation
  CHECK(load_state(dir).k == 1);
  CHECK(server.snapshot()->k == 1);

  std::tie(code, state) = post("/reset", R"({"config": {"model": "oscillation", "particles": 50}})");
  CHECK(code == 200);
  CHECK(state["k"] == 0);
  CHECK(state["model"] == "oscillation");
  CHECK(state["particles"] == 50);
  CHECK(post("/reset", R"({"config": {"model": "oscillation", "nope": 1}})").first == 400);
  CHECK(load_state(dir).config.model == ModelKind::oscillation);

  server.stop();
  thread.join();
  fs::remove_all(dir);
}

#ifdef SEQBED_CLI
TEST_CASE("command line") {
  const fs::path dir = scratch("cli");
  fs::create_directories(dir);
  {
    std::ofstream cfg(dir / "config.json");
    cfg << R"({"model": "death", "particles": 80, "iterations": 2, "seed": 5,
               "bo": {"budget": 5, "n_init": 3}, "lfire": {"n_like": 20, "n_marginal": 20}})";
  }
  const std::string cli = SEQBED_CLI;
  const auto run = [](const std::string& cmd) { return std::system((cmd + " > /dev/null 2>&1").c_str()); };
  const std::string out = (dir / "run").string();
  CHECK(run(cli + " run --config " + (dir / "config.json").string() + " --out " + out) == 0);
  const RunState state = load_state(out);
  CHECK(state.status == RunStatus::done);
  CHECK(state.k == 2);

  CHECK(run(cli + " posterior --state " + out + " --iteration 1 --out " + (dir / "post.json").string()) == 0);
  CHECK(read_json(dir / "post.json")["iteration"] == 1);

  CHECK(run(cli + " surface --design-grid 0.5:2:4 --state " + out + " --iteration 1 --out " +
            (dir / "surface.csv").string()) == 0);
  std::ifstream in(dir / "surface.csv");
  int lines = 0;
  for (std::string line; std::getline(in, line);) ++lines;
  CHECK(lines == 5);

  CHECK(run(cli + " surface --design-grid 0.5:2 --config " + (dir / "config.json").string()) != 0);
  CHECK(run(cli + " run --config " + (dir / "missing.json").string() + " --out " + out) != 0);
  fs::remove_all(dir);
}
#endif
