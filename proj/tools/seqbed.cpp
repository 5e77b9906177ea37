// Command-line front end: batch campaigns, the HTTP server and data dumps.

#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "seqbed/config.hpp"
#include "seqbed/engine.hpp"
#include "seqbed/persist.hpp"
#include "seqbed/server.hpp"

namespace fs = std::filesystem;
using namespace seqbed;

namespace {

Server* g_server = nullptr;

void emit(const std::string& text, const std::string& out) {
  if (out.empty() || out == "-") {
    std::cout << text;
  } else {
    write_file(out, text);
  }
}

std::vector<double> parse_design_grid(const std::string& spec) {
  double lo = 0.0, hi = 0.0;
  int n = 0;
  char c1 = 0, c2 = 0;
  std::istringstream in(spec);
  if (!(in >> lo >> c1 >> hi >> c2 >> n) || c1 != ':' || c2 != ':' || n < 1 || !in.eof()) {
    throw CLI::ValidationError("--design-grid", "expected lo:hi:n, got '" + spec + "'");
  }
  std::vector<double> grid;
  for (int i = 0; i < n; ++i) grid.push_back(n == 1 ? lo : lo + (hi - lo) * i / (n - 1.0));
  return grid;
}

void print_iteration(const IterationRecord& r) {
  std::printf("k=%d  ess_before=%.1f%s  d*=%.6g  y*=[", r.k, r.ess_before,
              r.resampled ? " (resampled)" : "", r.design);
  for (std::size_t i = 0; i < r.observation.size(); ++i) {
    std::printf(i ? ", %.6g" : "%.6g", r.observation[i]);
  }
  std::printf("]  ess_after=%.1f\n", r.particles.ess());
  std::fflush(stdout);
}

int cmd_run(const std::string& config_path, const std::string& out_dir, bool resume) {
  RunState state;
  if (resume && fs::exists(fs::path(out_dir) / "manifest.json")) {
    state = load_state(out_dir);
    std::printf("resuming at k=%d (%s)\n", state.k, to_string(state.status).c_str());
  } else {
    state = initialize(load_config(config_path));
  }
  save_state(state, out_dir);
  while (state.status == RunStatus::running) {
    run_iteration(state);
    save_state(state, out_dir);
    if (state.status != RunStatus::awaiting_observation) print_iteration(state.history.back());
  }
  if (state.status == RunStatus::awaiting_observation) {
    std::printf("awaiting an observation at d*=%.6g; continue with 'serve --state %s'\n",
                state.pending->design, out_dir.c_str());
    return 0;
  }
  for (const MarginalSummary& m : summarize_posterior(state, state.k).marginals) {
    std::printf("%s: mean=%.6g  95%% HPDI=[%.6g, %.6g]\n", m.name.c_str(), m.mean, m.hpdi.lo,
                m.hpdi.hi);
  }
  return 0;
}

int cmd_serve(const std::string& state_dir, const std::string& config_path,
              const std::string& host, int port) {
  RunState state;
  if (fs::exists(fs::path(state_dir) / "manifest.json")) {
    state = load_state(state_dir);
  } else if (!config_path.empty()) {
    state = initialize(load_config(config_path));
  } else {
    std::cerr << "no run state in " << state_dir << "; pass --config to start one\n";
    return 2;
  }
  Server server(std::move(state), state_dir);
  const int bound = server.bind(host, port);
  std::printf("serving %s on http://%s:%d\n", state_dir.c_str(), host.c_str(), bound);
  std::fflush(stdout);
  g_server = &server;
  std::signal(SIGINT, [](int) {
    if (g_server) g_server->stop();
  });
  std::signal(SIGTERM, [](int) {
    if (g_server) g_server->stop();
  });
  server.serve();
  g_server = nullptr;
  return 0;
}

int cmd_surface(const std::string& grid_spec, const std::string& config_path,
                const std::string& state_dir, int iteration, const std::string& utility,
                const std::string& out) {
  const std::vector<double> designs = parse_design_grid(grid_spec);
  RunState state;
  int k = 0;
  if (!state_dir.empty()) {
    state = load_state(state_dir);
    k = iteration < 0 ? state.k : iteration;
  } else if (!config_path.empty()) {
    state = initialize(load_config(config_path));
  } else {
    throw CLI::ValidationError("surface", "pass --config or --state");
  }
  const UtilityKind kind = utility.empty() ? state.config.utility : parse_utility_kind(utility);
  emit(surface_csv(utility_surface(state, k, designs, kind)), out);
  return 0;
}

int cmd_posterior(const std::string& state_dir, int iteration, const std::string& out) {
  const RunState state = load_state(state_dir);
  const int k = iteration < 0 ? state.k : iteration;
  emit(to_json(summarize_posterior(state, k)).dump(1) + "\n", out);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sequential Bayesian experimental design for implicit models"};
  app.require_subcommand(1);

  std::string config_path, out_dir, state_dir, host = "127.0.0.1", grid_spec, utility, out;
  int port = 8080;
  int iteration = -1;
  bool resume = false;

  auto* run = app.add_subcommand("run", "run a campaign with the simulated oracle");
  run->add_option("--config", config_path, "JSON config file")->required()->check(CLI::ExistingFile);
  run->add_option("--out", out_dir, "run-state directory")->required();
  run->add_flag("--resume", resume, "continue the run stored in --out if there is one");

  auto* serve = app.add_subcommand("serve", "serve a campaign over HTTP");
  serve->add_option("--state", state_dir, "run-state directory")->required();
  serve->add_option("--config", config_path, "config for a new campaign when --state is empty");
  serve->add_option("--port", port, "TCP port (0 picks a free one)");
  serve->add_option("--host", host, "interface to bind");

  auto* surface = app.add_subcommand("surface", "dump the utility on a design grid as CSV");
  surface->add_option("--design-grid", grid_spec, "lo:hi:n")->required();
  surface->add_option("--config", config_path, "config; the surface is taken under the prior");
  surface->add_option("--state", state_dir, "run-state directory");
  surface->add_option("--iteration", iteration, "belief after iteration k (default: latest)");
  surface->add_option("--utility", utility, "mi, mi_weighted, bd_opt or bd_opt_stable");
  surface->add_option("--out", out, "output file (default stdout)");

  auto* posterior = app.add_subcommand("posterior", "dump posterior KDE and HPDI as JSON");
  posterior->add_option("--state", state_dir, "run-state directory")->required();
  posterior->add_option("--iteration", iteration, "iteration k (default: latest)");
  posterior->add_option("--out", out, "output file (default stdout)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) return cmd_run(config_path, out_dir, resume);
    if (*serve) return cmd_serve(state_dir, config_path, host, port);
    if (*surface) return cmd_surface(grid_spec, config_path, state_dir, iteration, utility, out);
    if (*posterior) return cmd_posterior(state_dir, iteration, out);
  } catch (const CLI::Error& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
