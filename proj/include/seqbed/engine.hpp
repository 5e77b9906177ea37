#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "seqbed/bayesopt.hpp"
#include "seqbed/belief.hpp"
#include "seqbed/config.hpp"
#include "seqbed/models.hpp"
#include "seqbed/ratio.hpp"
#include "seqbed/utilities.hpp"

namespace seqbed {

enum class RunStatus { running, awaiting_observation, done };

std::string to_string(RunStatus status);
RunStatus parse_run_status(std::string_view name);

/// One utility evaluation made by the optimizer, with the estimator's
/// diagnostics. Failed attempts keep ok = false and the error text.
struct SurfacePoint {
  double design = 0.0;
  double value = 0.0;
  double standard_error = 0.0;
  int n_dropped = 0;
  int n_clipped = 0;
  int n_capped = 0;
  std::uint64_t seed = 0;
  int attempts = 0;
  bool ok = false;
  std::string error;
};

struct IterationRecord {
  int k = 0;
  double ess_before = 0.0;
  bool resampled = false;
  ResampleReport resample_report;
  int utility_draws = 0;  // belief draws handed to the utility
  double design = 0.0;    // d*_k
  BoTrace bo;
  std::vector<SurfacePoint> surface;  // aligned with bo.evaluations
  Observation observation;            // empty while pending
  Eigen::VectorXd observed_summary;
  int zeroed = 0;
  std::vector<RatioModel> ratio_models;  // one per particle, fitted at d*_k
  ParticleSet particles;                 // after the weight update (before it while pending)
};

struct RunEvent {
  int k = 0;
  std::string type;  // ess, resample, bo, zeroed, observation
  std::string message;
  nlohmann::json data;
};

struct RunState {
  RunConfig config;
  RunStatus status = RunStatus::running;
  int k = 0;  // completed iterations
  ParticleSet prior;
  ParticleSet particles;  // current belief
  std::vector<IterationRecord> history;
  std::optional<IterationRecord> pending;
  std::vector<RunEvent> events;
  std::uint64_t revision = 0;  // bumped by every mutation
};

class StateError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Prior particles drawn from the prior stream of the master seed.
RunState initialize(const RunConfig& config);

/// Runs iteration k + 1 up to the oracle. With the simulated oracle the
/// observation is committed immediately; with the interactive oracle the
/// state moves to awaiting_observation. Requires status running.
void run_iteration(RunState& state);

/// Completes a pending iteration with a raw observation. On a schema
/// violation throws ObservationError and leaves the state untouched.
void observe(RunState& state, const Observation& y);

/// Calls run_iteration until the state is awaiting an observation or done.
void run_until_blocked(RunState& state);

/// One simulator draw at (theta_true, d) from the oracle stream of iteration k.
Observation simulated_oracle(const Model& model, const Eigen::VectorXd& theta_true, double design,
                             std::uint64_t seed, int k);

/// Particle set after iteration k (k = 0 is the prior).
const ParticleSet& particles_at(const RunState& state, int k);

struct MarginalSummary {
  std::string name;
  double mean = 0.0;
  Interval hpdi;
  std::vector<Interval> hpd_region;
  std::vector<double> modes;
  Kde1d kde;
};

struct JointKde {
  Eigen::VectorXd x, y;
  Eigen::MatrixXd density;  // density(i, j) at (x[i], y[j])
};

struct PosteriorSummary {
  int iteration = 0;
  int samples = 0;
  std::vector<MarginalSummary> marginals;
  std::optional<JointKde> joint;  // two-parameter models only
};

/// Draws config.posterior.samples from the belief after iteration k and
/// summarizes each dimension with a Silverman KDE and its 95% HPDI.
PosteriorSummary summarize_posterior(const RunState& state, int k);

/// Utility values at the given designs under the belief after iteration k,
/// drawn the same way the optimizer would at iteration k + 1.
std::vector<SurfacePoint> utility_surface(const RunState& state, int k,
                                          const std::vector<double>& designs, UtilityKind kind);

}  // namespace seqbed
