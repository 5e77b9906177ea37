#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "seqbed/belief.hpp"
#include "seqbed/models.hpp"
#include "seqbed/ratio.hpp"
#include "seqbed/rng.hpp"

namespace seqbed {

enum class UtilityKind { mi, mi_weighted, bd_opt, bd_opt_stable };

std::string to_string(UtilityKind kind);
UtilityKind parse_utility_kind(std::string_view name);

/// Log-ratios are clipped to this magnitude before averaging.
inline constexpr double kLogRatioClip = 50.0;

class UtilityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct UtilityEstimate {
  double design = 0.0;
  double value = 0.0;
  double standard_error = 0.0;
  int n_particles = 0;
  int n_dropped = 0;  // non-finite log-ratios
  int n_clipped = 0;
  int n_capped = 0;   // BD-Opt draws with a singular posterior covariance
  std::uint64_t seed = 0;
  std::optional<Eigen::VectorXd> per_particle;  // log-ratios (MI) or per-draw terms (BD-Opt)
  std::vector<RatioModel> ratio_models;          // kept only on request
};

/// One ratio model per parameter row, fitted at a common design against a
/// shared marginal sample, plus each row's own simulated summary y^(i).
struct ParticleRatios {
  double design = 0.0;
  std::vector<RatioModel> models;
  Eigen::MatrixXd own_summaries;
  Eigen::MatrixXd marginal;
};

/// Per-row random streams are keyed by the parameter value (and its occurrence
/// count among identical rows), so permuting rows permutes results.
ParticleRatios fit_particle_ratios(double design, const Eigen::MatrixXd& thetas,
                                   const ParticleSet& belief, const Model& model,
                                   std::uint64_t seed, const LfireConfig& config);

/// Monte-Carlo MI from fitted ratios, with optional per-row weights
/// (self-normalized). Empty weights mean a plain average.
UtilityEstimate mi_from_ratios(const ParticleRatios& ratios,
                               const Eigen::VectorXd& weights = Eigen::VectorXd());

/// MI utility at design d for the given belief draws thetas; the marginal
/// sample comes from `belief`.
UtilityEstimate estimate_mi(double design, const Eigen::MatrixXd& thetas, const ParticleSet& belief,
                            const Model& model, std::uint64_t seed, const LfireConfig& config,
                            bool keep_models = false);

/// As above with n draws from the belief (categorical on the weights).
UtilityEstimate estimate_mi(double design, const ParticleSet& belief, const Model& model, int n,
                            Rng& rng, const LfireConfig& config);

/// MI from the weighted particle set directly, without drawing from it.
UtilityEstimate estimate_mi_weighted(double design, const ParticleSet& particles,
                                     const Model& model, std::uint64_t seed,
                                     const LfireConfig& config, bool keep_models = false);

enum class Aggregation { median, mean };

struct BdOptOptions {
  Aggregation aggregation = Aggregation::median;
  double precision_cap = 1e12;
};

/// log det of the ratio-reweighted covariance of thetas for every simulated
/// draw; singular covariances map to -log(cap).
Eigen::VectorXd posterior_log_dets(const ParticleRatios& ratios, const Eigen::MatrixXd& thetas,
                                   double precision_cap, int* n_capped = nullptr);

/// Weighted covariance sum_j w_j (theta_j - mean)(theta_j - mean)' with
/// self-normalized weights.
Eigen::MatrixXd weighted_covariance(const Eigen::MatrixXd& thetas, const Eigen::VectorXd& weights);

UtilityEstimate bd_opt_from_ratios(const ParticleRatios& ratios, const Eigen::MatrixXd& thetas,
                                   const BdOptOptions& options = {});
UtilityEstimate bd_opt_stable_from_ratios(const ParticleRatios& ratios,
                                          const Eigen::MatrixXd& thetas,
                                          const BdOptOptions& options = {});

UtilityEstimate bd_opt(double design, const Eigen::MatrixXd& thetas, const ParticleSet& belief,
                       const Model& model, std::uint64_t seed, const LfireConfig& config,
                       const BdOptOptions& options = {});
UtilityEstimate bd_opt(double design, const ParticleSet& belief, const Model& model, int n,
                       Rng& rng, const LfireConfig& config, const BdOptOptions& options = {});

UtilityEstimate bd_opt_stable(double design, const Eigen::MatrixXd& thetas,
                              const ParticleSet& belief, const Model& model, std::uint64_t seed,
                              const LfireConfig& config, const BdOptOptions& options = {});
UtilityEstimate bd_opt_stable(double design, const ParticleSet& belief, const Model& model, int n,
                              Rng& rng, const LfireConfig& config,
                              const BdOptOptions& options = {});

/// Dispatches on kind. For mi_weighted the thetas argument is ignored and the
/// particle set is used with its weights.
UtilityEstimate evaluate_utility(UtilityKind kind, double design, const Eigen::MatrixXd& thetas,
                                 const ParticleSet& belief, const Model& model,
                                 std::uint64_t seed, const LfireConfig& config,
                                 bool keep_models = false, const BdOptOptions& options = {});

struct ReferenceMi {
  double value = 0.0;
  double standard_error = 0.0;
};

/// Nested Monte-Carlo MI under the prior using the model's exact likelihood.
ReferenceMi reference_mi(double design, const Model& model, int n_outer, int n_inner, Rng& rng);

}  // namespace seqbed
