#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "seqbed/gp.hpp"
#include "seqbed/models.hpp"
#include "seqbed/rng.hpp"

namespace seqbed {

/// Expected improvement of a Gaussian predictive N(mean, std^2) over `best`.
template <typename Scalar>
Scalar expected_improvement(Scalar mean, Scalar std_dev, Scalar best) {
  using std::erfc;
  using std::exp;
  using std::sqrt;
  const Scalar gap = mean - best;
  if (!(std_dev > Scalar(0))) return gap > Scalar(0) ? gap : Scalar(0);
  const Scalar z = gap / std_dev;
  const Scalar cdf = Scalar(0.5) * erfc(-z / sqrt(Scalar(2)));
  const Scalar pdf = exp(Scalar(-0.5) * z * z) / sqrt(Scalar(2) * std::numbers::pi_v<Scalar>);
  const Scalar ei = gap * cdf + std_dev * pdf;
  return ei > Scalar(0) ? ei : Scalar(0);
}

struct BoConfig {
  int budget = 30;
  int n_init = 5;
  int n_seeds = 50;          // uniform starting points for continuous EI search
  int grid_points = 200;     // dense grid for the trace and the final GP-mean argmax
  double duplicate_tol = 1e-6;
  GpConfig gp;
};

/// Budget default for a domain: 30 continuous, 25 discrete.
BoConfig default_bo_config(const DesignDomain& domain);

class BoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct BoEvaluation {
  double design = 0.0;
  double value = 0.0;
  std::uint64_t seed = 0;
  int attempts = 0;
  bool ok = false;
  std::string error;  // message of the last failure when !ok
};

struct BoTrace {
  std::vector<BoEvaluation> evaluations;  // in evaluation order, failures included
  std::vector<std::string> log;
  Eigen::VectorXd grid, mean, variance;   // final surrogate on a dense grid
  double d_star = 0.0;
  double raw_best_design = 0.0;
  double raw_best_value = 0.0;
  GpHyperparams hyperparams;
};

struct BoResult {
  double d_star = 0.0;
  GpSurrogate surrogate;
  BoTrace trace;
};

/// Noisy objective evaluated at a design with a given random seed; throwing
/// marks the attempt as failed.
using BoObjective = std::function<double(double design, std::uint64_t seed)>;

/// Maximizes the objective over the domain. Each attempt receives a fresh seed
/// drawn from rng. The returned optimum is the argmax of the final GP mean.
BoResult bo_optimize(const BoObjective& objective, const DesignDomain& domain,
                     const BoConfig& config, Rng& rng);

}  // namespace seqbed
