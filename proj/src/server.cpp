#include "seqbed/server.hpp"

#include <chrono>

#include <httplib.h>

#include "seqbed/persist.hpp"

namespace seqbed {

using nlohmann::json;

namespace {

json vec(const Eigen::VectorXd& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    out.push_back(std::isfinite(v[i]) ? json(v[i]) : json(nullptr));
  }
  return out;
}

void reply(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void fail(httplib::Response& res, int status, const std::string& message) {
  reply(res, status, {{"error", message}});
}

// Parses ?iteration=k; returns fallback when the parameter is absent.
int iteration_param(const httplib::Request& req, int fallback) {
  if (!req.has_param("iteration")) return fallback;
  const std::string text = req.get_param_value("iteration");
  std::size_t used = 0;
  const int k = std::stoi(text, &used);
  if (used != text.size()) throw std::invalid_argument("iteration must be an integer");
  return k;
}

}  // namespace

json state_payload(const RunState& state) {
  const auto model = make_model(state.config);
  const ModelSpec& spec = model->spec();
  json history = json::array();
  for (const IterationRecord& r : state.history) {
    history.push_back({{"k", r.k},
                       {"design", r.design},
                       {"observation", r.observation},
                       {"ess_before", r.ess_before},
                       {"ess_after", r.particles.ess()},
                       {"resampled", r.resampled},
                       {"zeroed", r.zeroed}});
  }
  json pending = nullptr;
  if (state.pending) {
    pending = {{"k", state.pending->k},
               {"design", state.pending->design},
               {"ess_before", state.pending->ess_before},
               {"resampled", state.pending->resampled}};
  }
  json events = json::array();
  for (const RunEvent& e : state.events) {
    events.push_back({{"k", e.k}, {"type", e.type}, {"message", e.message}, {"data", e.data}});
  }
  const auto now = std::chrono::duration_cast<std::chrono::milliseconds>(
      std::chrono::system_clock::now().time_since_epoch());
  json out = {{"status", to_string(state.status)},
              {"k", state.k},
              {"iterations", state.config.iterations},
              {"ess", state.particles.ess()},
              {"particles", state.particles.size()},
              {"model", to_string(state.config.model)},
              {"utility", to_string(state.config.utility)},
              {"param_names", spec.param_names},
              {"param_bounds", {{"lower", vec(spec.bounds.lower)}, {"upper", vec(spec.bounds.upper)}}},
              {"design_domain",
               {{"lo", spec.design_domain.lo},
                {"hi", spec.design_domain.hi},
                {"discrete", spec.design_domain.discrete}}},
              {"oracle", state.config.oracle.kind == OracleKind::simulated ? "simulated" : "interactive"},
              {"history", history},
              {"pending", pending},
              {"events", events},
              {"revision", state.revision},
              {"timestamp_ms", now.count()}};
  if (state.config.oracle.kind == OracleKind::simulated) out["theta_true"] = vec(state.config.oracle.theta_true);
  return out;
}

json surface_payload(const RunState& state, int k) {
  const IterationRecord* rec = nullptr;
  if (k >= 1 && k <= state.k) {
    rec = &state.history[static_cast<std::size_t>(k - 1)];
  } else if (state.pending && state.pending->k == k) {
    rec = &*state.pending;
  }
  if (!rec) throw std::out_of_range("no utility surface for iteration " + std::to_string(k));
  json evaluations = json::array();
  for (const SurfacePoint& p : rec->surface) {
    evaluations.push_back({{"design", p.design},
                           {"value", p.ok ? json(p.value) : json(nullptr)},
                           {"standard_error", p.ok ? json(p.standard_error) : json(nullptr)},
                           {"n_dropped", p.n_dropped},
                           {"ok", p.ok},
                           {"error", p.error}});
  }
  return {{"iteration", rec->k},
          {"utility", to_string(state.config.utility)},
          {"design", rec->design},
          {"raw_best_design", rec->bo.raw_best_design},
          {"raw_best_value", rec->bo.raw_best_value},
          {"grid", vec(rec->bo.grid)},
          {"gp_mean", vec(rec->bo.mean)},
          {"gp_variance", vec(rec->bo.variance)},
          {"evaluations", evaluations}};
}

Server::Server(RunState state, std::filesystem::path state_dir)
    : dir_(std::move(state_dir)), http_(std::make_unique<httplib::Server>()) {
  save_state(state, dir_);
  snapshot_ = std::make_shared<const RunState>(std::move(state));
  install_routes();
}

Server::~Server() { stop(); }

std::shared_ptr<const RunState> Server::snapshot() const {
  std::lock_guard lock(snapshot_mutex_);
  return snapshot_;
}

void Server::publish(RunState state) {
  save_state(state, dir_);
  auto next = std::make_shared<const RunState>(std::move(state));
  std::lock_guard lock(snapshot_mutex_);
  snapshot_ = std::move(next);
}

int Server::bind(const std::string& host, int port) {
  if (port == 0) return http_->bind_to_any_port(host);
  if (!http_->bind_to_port(host, port)) {
    throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port));
  }
  return port;
}

void Server::serve() { http_->listen_after_bind(); }
void Server::stop() {
  if (http_) http_->stop();
}
void Server::wait_until_ready() const { http_->wait_until_ready(); }

void Server::install_routes() {
  http_->set_default_headers({{"Access-Control-Allow-Origin", "*"},
                              {"Access-Control-Allow-Headers", "Content-Type"},
                              {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"}});
  http_->Options(".*", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

  http_->Get("/state", [this](const httplib::Request&, httplib::Response& res) {
    reply(res, 200, state_payload(*snapshot()));
  });

  http_->Get("/posterior", [this](const httplib::Request& req, httplib::Response& res) {
    const auto state = snapshot();
    try {
      const int k = iteration_param(req, state->k);
      if (k < 0 || k > state->k) {
        fail(res, 404, "iteration " + std::to_string(k) + " is not completed");
        return;
      }
      reply(res, 200, to_json(summarize_posterior(*state, k)));
    } catch (const std::invalid_argument& e) {
      fail(res, 400, e.what());
    }
  });

  http_->Get("/surface", [this](const httplib::Request& req, httplib::Response& res) {
    const auto state = snapshot();
    try {
      const int latest = state->pending ? state->pending->k : state->k;
      reply(res, 200, surface_payload(*state, iteration_param(req, latest)));
    } catch (const std::out_of_range& e) {
      fail(res, 404, e.what());
    } catch (const std::invalid_argument& e) {
      fail(res, 400, e.what());
    }
  });

  // One iteration per call; {"until": "blocked"} keeps going until an
  // observation is needed or the campaign is done.
  http_->Post("/step", [this](const httplib::Request& req, httplib::Response& res) {
    std::lock_guard command(command_mutex_);
    RunState state = *snapshot();
    bool until_blocked = false;
    if (!req.body.empty()) {
      const json body = json::parse(req.body, nullptr, false);
      if (body.is_discarded() || !body.is_object()) {
        fail(res, 400, "body must be a JSON object");
        return;
      }
      until_blocked = body.value("until", std::string()) == "blocked";
    }
    if (state.status != RunStatus::running) {
      fail(res, 409, "campaign is " + to_string(state.status));
      return;
    }
    try {
      if (until_blocked) {
        run_until_blocked(state);
      } else {
        run_iteration(state);
      }
    } catch (const std::exception& e) {
      fail(res, 500, e.what());
      return;
    }
    publish(state);
    reply(res, 200, state_payload(*snapshot()));
  });

  http_->Post("/observe", [this](const httplib::Request& req, httplib::Response& res) {
    std::lock_guard command(command_mutex_);
    RunState state = *snapshot();
    if (state.status != RunStatus::awaiting_observation) {
      fail(res, 409, "no observation is pending (campaign is " + to_string(state.status) + ")");
      return;
    }
    const json body = json::parse(req.body, nullptr, false);
    if (body.is_discarded() || !body.is_object() || !body.contains("y")) {
      fail(res, 400, "body must be a JSON object with a 'y' field");
      return;
    }
    Observation y;
    const json& value = body["y"];
    if (value.is_number()) {
      y.push_back(value.get<double>());
    } else if (value.is_array() && std::all_of(value.begin(), value.end(),
                                               [](const json& v) { return v.is_number(); })) {
      y = value.get<Observation>();
    } else {
      fail(res, 400, "'y' must be a number or an array of numbers");
      return;
    }
    try {
      observe(state, y);
    } catch (const ObservationError& e) {
      fail(res, 400, e.what());
      return;
    }
    publish(state);
    reply(res, 200, state_payload(*snapshot()));
  });

  http_->Post("/reset", [this](const httplib::Request& req, httplib::Response& res) {
    std::lock_guard command(command_mutex_);
    RunConfig config = snapshot()->config;
    if (!req.body.empty()) {
      const json body = json::parse(req.body, nullptr, false);
      if (body.is_discarded() || !body.is_object()) {
        fail(res, 400, "body must be a JSON object");
        return;
      }
      try {
        if (body.contains("config")) config = parse_config(body["config"]);
      } catch (const ConfigError& e) {
        fail(res, 400, e.what());
        return;
      }
    }
    publish(initialize(config));
    reply(res, 200, state_payload(*snapshot()));
  });
}

}  // namespace seqbed
