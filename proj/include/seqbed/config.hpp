#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>

#include <json.hpp>

#include "seqbed/bayesopt.hpp"
#include "seqbed/belief.hpp"
#include "seqbed/models.hpp"
#include "seqbed/ratio.hpp"
#include "seqbed/utilities.hpp"

namespace seqbed {

enum class OracleKind { simulated, interactive };

struct OracleConfig {
  OracleKind kind = OracleKind::simulated;
  Eigen::VectorXd theta_true;  // used by the simulated oracle
};

struct PosteriorConfig {
  int samples = 10000;
  int grid_points = 512;
  int joint_grid_points = 64;  // per axis, two-parameter models only
};

/// Everything that defines a campaign. Model-dependent defaults are filled in
/// by make_config / parse_config.
struct RunConfig {
  ModelKind model = ModelKind::oscillation;
  ModelOptions model_options;
  int particles = 1000;
  int utility_draws = 1000;  // belief draws per utility evaluation
  int iterations = 4;
  UtilityKind utility = UtilityKind::mi;
  double ess_fraction = 0.5;  // resample when ESS < ess_fraction * N
  std::uint64_t seed = 0;
  OracleConfig oracle;
  BoConfig bo;
  LfireConfig lfire;
  BdOptOptions bd_opt;
  ResampleOptions resample;
  PosteriorConfig posterior;
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Defaults for a model: N = 1000 (300 for cell), BO budget 30 (25 for the
/// discrete cell domain), and the reference true parameters.
RunConfig make_config(ModelKind model);

/// Parses a JSON config. Unknown keys are rejected so typos do not silently
/// fall back to defaults.
RunConfig parse_config(const nlohmann::json& doc);
RunConfig load_config(const std::filesystem::path& path);
nlohmann::json config_to_json(const RunConfig& config);

/// Throws ConfigError when an invariant (K >= 1, N >= 2, ...) is violated.
void validate_config(const RunConfig& config);

std::unique_ptr<Model> make_model(const RunConfig& config);

}  // namespace seqbed
