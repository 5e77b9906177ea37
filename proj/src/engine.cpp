#include "seqbed/engine.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <numeric>

namespace seqbed {

std::string to_string(RunStatus status) {
  switch (status) {
    case RunStatus::running: return "running";
    case RunStatus::awaiting_observation: return "awaiting_observation";
    case RunStatus::done: return "done";
  }
  return "unknown";
}

RunStatus parse_run_status(std::string_view name) {
  if (name == "running") return RunStatus::running;
  if (name == "awaiting_observation") return RunStatus::awaiting_observation;
  if (name == "done") return RunStatus::done;
  throw std::invalid_argument("unknown run status '" + std::string(name) + "'");
}

RunState initialize(const RunConfig& config) {
  validate_config(config);
  const auto model = make_model(config);
  Rng rng = make_rng(config.seed, Stream::prior);
  RunState state;
  state.config = config;
  state.prior = ParticleSet(model->sample_prior(config.particles, rng), model->spec().bounds, 0);
  state.particles = state.prior;
  return state;
}

Observation simulated_oracle(const Model& model, const Eigen::VectorXd& theta_true, double design,
                             std::uint64_t seed, int k) {
  Rng rng = make_rng(seed, Stream::oracle, static_cast<std::uint64_t>(k));
  return model.simulate(theta_true, design, rng).raw;
}

namespace {

void add_event(RunState& state, int k, std::string type, std::string message,
               nlohmann::json data = nlohmann::json::object()) {
  state.events.push_back({k, std::move(type), std::move(message), std::move(data)});
}

// Applies the observation to a finished (or pending) iteration and appends it
// to the history. Everything that can fail runs before the state is touched.
void commit(RunState& state, IterationRecord rec, const Observation& y, const Model& model) {
  model.validate(y);
  const Eigen::VectorXd summary = model.summarize(y);
  WeightUpdateReport report;
  ParticleSet updated = update_weights(rec.particles, rec.ratio_models, summary, &report);
  if (report.zeroed == updated.size()) {
    throw ObservationError("observation gives zero weight to every particle");
  }
  updated.set_iteration(rec.k);

  rec.observation = y;
  rec.observed_summary = summary;
  rec.zeroed = report.zeroed;
  rec.particles = std::move(updated);

  const int k = rec.k;
  add_event(state, k, "observation", "observed y at d* = " + std::to_string(rec.design),
            {{"design", rec.design}, {"observation", y}});
  if (rec.zeroed > 0) {
    add_event(state, k, "zeroed",
              std::to_string(rec.zeroed) + " particles got a non-finite ratio and zero weight",
              {{"count", rec.zeroed}});
  }
  state.particles = rec.particles;
  state.history.push_back(std::move(rec));
  state.pending.reset();
  state.k = k;
  state.status = state.k >= state.config.iterations ? RunStatus::done : RunStatus::running;
  ++state.revision;
}

}  // namespace

void run_iteration(RunState& original) {
  if (original.status != RunStatus::running) {
    throw StateError("run_iteration: campaign is " + to_string(original.status));
  }
  // work on a copy so a failed iteration leaves the caller's state untouched
  RunState state = original;
  const RunConfig& c = state.config;
  const auto model = make_model(c);
  const int k = state.k + 1;
  const auto stream_index = static_cast<std::uint64_t>(k);

  IterationRecord rec;
  rec.k = k;
  ParticleSet current = state.particles;
  rec.ess_before = current.ess();
  const double threshold = c.ess_fraction * current.size();
  add_event(state, k, "ess", "ESS before iteration " + std::to_string(k),
            {{"ess", rec.ess_before}, {"threshold", threshold}});

  Eigen::MatrixXd draws;
  if (k == 1) {
    draws = current.thetas();
  } else if (rec.ess_before < threshold) {
    Rng rng = make_rng(c.seed, Stream::resample, stream_index);
    current = resample(current, rng, c.resample, &rec.resample_report);
    rec.resampled = true;
    draws = current.thetas();
    add_event(state, k, "resample", "ESS below threshold; particles resampled",
              {{"ess", rec.ess_before},
               {"threshold", threshold},
               {"sigma", rec.resample_report.sigma},
               {"fallbacks", rec.resample_report.fallbacks}});
  } else {
    Rng rng = make_rng(c.seed, Stream::belief, stream_index);
    draws = sample_belief(current, c.utility_draws, rng);
  }
  rec.utility_draws = c.utility == UtilityKind::mi_weighted ? current.size()
                                                            : static_cast<int>(draws.rows());

  std::map<std::uint64_t, UtilityEstimate> estimates;
  const BoObjective objective = [&](double design, std::uint64_t seed) {
    UtilityEstimate est = evaluate_utility(c.utility, design, draws, current, *model, seed, c.lfire,
                                           false, c.bd_opt);
    const double value = est.value;
    est.per_particle.reset();
    estimates[seed] = std::move(est);
    return value;
  };
  Rng bo_rng = make_rng(c.seed, Stream::bo, stream_index);
  BoResult bo = bo_optimize(objective, model->spec().design_domain, c.bo, bo_rng);
  rec.design = bo.d_star;
  for (const BoEvaluation& e : bo.trace.evaluations) {
    SurfacePoint p;
    p.design = e.design;
    p.value = e.value;
    p.seed = e.seed;
    p.attempts = e.attempts;
    p.ok = e.ok;
    p.error = e.error;
    if (const auto it = estimates.find(e.seed); e.ok && it != estimates.end()) {
      p.standard_error = it->second.standard_error;
      p.n_dropped = it->second.n_dropped;
      p.n_clipped = it->second.n_clipped;
      p.n_capped = it->second.n_capped;
    }
    rec.surface.push_back(std::move(p));
  }
  for (const std::string& line : bo.trace.log) add_event(state, k, "bo", line);
  rec.bo = std::move(bo.trace);

  // ratio models of the particles themselves at d*, used by the weight update
  const ParticleRatios final_fit =
      fit_particle_ratios(rec.design, current.thetas(), current, *model,
                          derive_seed(c.seed, Stream::final_fit, stream_index), c.lfire);
  rec.ratio_models = final_fit.models;
  rec.particles = std::move(current);

  if (c.oracle.kind == OracleKind::simulated) {
    const Observation y = simulated_oracle(*model, c.oracle.theta_true, rec.design, c.seed, k);
    commit(state, std::move(rec), y, *model);
  } else {
    state.pending = std::move(rec);
    state.status = RunStatus::awaiting_observation;
    ++state.revision;
  }
  original = std::move(state);
}

void observe(RunState& state, const Observation& y) {
  if (state.status != RunStatus::awaiting_observation || !state.pending) {
    throw StateError("observe: no observation is pending");
  }
  const auto model = make_model(state.config);
  commit(state, *state.pending, y, *model);
}

void run_until_blocked(RunState& state) {
  while (state.status == RunStatus::running) run_iteration(state);
}

const ParticleSet& particles_at(const RunState& state, int k) {
  if (k < 0 || k > state.k) {
    throw std::out_of_range("iteration " + std::to_string(k) + " is not completed (have " +
                            std::to_string(state.k) + ")");
  }
  return k == 0 ? state.prior : state.history[static_cast<std::size_t>(k - 1)].particles;
}

PosteriorSummary summarize_posterior(const RunState& state, int k) {
  const ParticleSet& particles = particles_at(state, k);
  const PosteriorConfig& pc = state.config.posterior;
  Rng rng = make_rng(state.config.seed, Stream::posterior, static_cast<std::uint64_t>(k));
  const std::vector<int> idx = sample_belief_indices(particles, pc.samples, rng);
  const auto model = make_model(state.config);
  const ModelSpec& spec = model->spec();

  PosteriorSummary out;
  out.iteration = k;
  out.samples = pc.samples;
  std::vector<double> column(idx.size());
  for (int j = 0; j < particles.dim(); ++j) {
    for (std::size_t s = 0; s < idx.size(); ++s) column[s] = particles.thetas()(idx[s], j);
    MarginalSummary m;
    m.name = spec.param_names[static_cast<std::size_t>(j)];
    m.mean = std::accumulate(column.begin(), column.end(), 0.0) / static_cast<double>(column.size());
    m.kde = gaussian_kde(column, pc.grid_points);
    m.hpdi = hpdi(m.kde);
    m.hpd_region = hpd_region(m.kde);
    for (int i : kde_modes(m.kde)) m.modes.push_back(m.kde.grid[i]);
    out.marginals.push_back(std::move(m));
  }

  if (particles.dim() == 2) {
    // the draws only repeat particle rows, so the KDE sums over distinct
    // particles weighted by how often each was drawn
    Eigen::VectorXd counts = Eigen::VectorXd::Zero(particles.size());
    for (int i : idx) counts[i] += 1.0;
    const double n = static_cast<double>(idx.size());
    const double factor = std::pow(n, -1.0 / 6.0);  // Scott's rule in two dimensions
    JointKde joint;
    Eigen::MatrixXd kernels[2];
    double h[2];
    for (int j = 0; j < 2; ++j) {
      const Eigen::VectorXd& grid = out.marginals[static_cast<std::size_t>(j)].kde.grid;
      double mean = 0.0, var = 0.0;
      for (int i : idx) mean += particles.thetas()(i, j);
      mean /= n;
      for (int i : idx) var += std::pow(particles.thetas()(i, j) - mean, 2);
      const double sd = std::sqrt(var / std::max(1.0, n - 1.0));
      h[j] = sd > 0.0 ? sd * factor : out.marginals[static_cast<std::size_t>(j)].kde.bandwidth;
      const Eigen::VectorXd axis = Eigen::VectorXd::LinSpaced(pc.joint_grid_points, grid[0],
                                                              grid[grid.size() - 1]);
      kernels[j].resize(axis.size(), particles.size());
      for (int p = 0; p < particles.size(); ++p) {
        kernels[j].col(p) =
            (-0.5 * ((axis.array() - particles.thetas()(p, j)) / h[j]).square()).exp();
      }
      (j == 0 ? joint.x : joint.y) = axis;
    }
    joint.density = kernels[0] * counts.asDiagonal() * kernels[1].transpose() /
                    (n * 2.0 * std::numbers::pi * h[0] * h[1]);
    out.joint = std::move(joint);
  }
  return out;
}

std::vector<SurfacePoint> utility_surface(const RunState& state, int k,
                                          const std::vector<double>& designs, UtilityKind kind) {
  const RunConfig& c = state.config;
  const auto model = make_model(c);
  const ParticleSet& particles = particles_at(state, k);
  const auto next = static_cast<std::uint64_t>(k + 1);
  Eigen::MatrixXd draws;
  if (k == 0) {
    draws = particles.thetas();
  } else {
    Rng rng = make_rng(c.seed, Stream::belief, next);
    draws = sample_belief(particles, c.utility_draws, rng);
  }
  std::vector<SurfacePoint> out;
  for (std::size_t i = 0; i < designs.size(); ++i) {
    SurfacePoint p;
    p.design = model->spec().design_domain.snap(designs[i]);
    p.seed = derive_seed(derive_seed(c.seed, Stream::utility, next), Stream::utility, i);
    p.attempts = 1;
    try {
      const UtilityEstimate est =
          evaluate_utility(kind, p.design, draws, particles, *model, p.seed, c.lfire, false, c.bd_opt);
      p.value = est.value;
      p.standard_error = est.standard_error;
      p.n_dropped = est.n_dropped;
      p.n_clipped = est.n_clipped;
      p.n_capped = est.n_capped;
      p.ok = true;
    } catch (const std::exception& e) {
      p.error = e.what();
    }
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace seqbed
