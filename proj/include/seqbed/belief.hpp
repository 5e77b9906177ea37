#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "seqbed/models.hpp"
#include "seqbed/ratio.hpp"
#include "seqbed/rng.hpp"

namespace seqbed {

/// Effective sample size (sum w)^2 / sum w^2 of unnormalized non-negative weights.
template <typename Derived>
typename Derived::Scalar ess(const Eigen::DenseBase<Derived>& weights) {
  using Scalar = typename Derived::Scalar;
  const Scalar total = weights.sum();
  if (!(total > Scalar(0))) throw std::invalid_argument("ess: all weights are zero");
  return total * total / weights.derived().array().square().sum();
}

/// Weighted particle approximation of the current belief. Weights are kept as
/// log-weights, so products of many ratios do not underflow; -inf marks a
/// particle with zero weight.
class ParticleSet {
 public:
  ParticleSet() = default;
  /// Equal weights (w = 1).
  ParticleSet(Eigen::MatrixXd thetas, ParamBounds bounds, int iteration = 0);
  ParticleSet(Eigen::MatrixXd thetas, Eigen::VectorXd log_weights, ParamBounds bounds,
              int iteration);

  int size() const { return static_cast<int>(thetas_.rows()); }
  int dim() const { return static_cast<int>(thetas_.cols()); }
  int iteration() const { return iteration_; }
  void set_iteration(int k) { iteration_ = k; }

  const Eigen::MatrixXd& thetas() const { return thetas_; }
  const Eigen::VectorXd& log_weights() const { return log_weights_; }
  const ParamBounds& bounds() const { return bounds_; }

  /// Weights rescaled so that the largest equals 1.
  Eigen::VectorXd weights() const;
  Eigen::VectorXd normalized_weights() const;
  double ess() const;
  bool uniform() const;

 private:
  Eigen::MatrixXd thetas_;
  Eigen::VectorXd log_weights_;
  ParamBounds bounds_;
  int iteration_ = 0;
};

struct WeightUpdateReport {
  int zeroed = 0;  // particles whose ratio evaluated to a non-finite value
};

/// Multiplies each particle's weight by its own ratio model evaluated at the
/// observed summary: w_k = w_{k-1} * r_k(y*). ratios[i] belongs to particle i.
ParticleSet update_weights(const ParticleSet& particles, std::span<const RatioModel> ratios,
                           const Eigen::Ref<const Eigen::VectorXd>& observed_summary,
                           WeightUpdateReport* report = nullptr);

/// Categorical draw of particle indices according to the normalized weights.
std::vector<int> sample_belief_indices(const ParticleSet& particles, int n, Rng& rng);
/// n x dim matrix of draws (with replacement) from the particle set.
Eigen::MatrixXd sample_belief(const ParticleSet& particles, int n, Rng& rng);

/// Per-dimension min/range map onto the unit cube.
struct UnitScaler {
  Eigen::VectorXd min;
  Eigen::VectorXd range;
  std::vector<bool> passthrough;  // dimensions with zero range are left unscaled
};

struct UnitTransform {
  Eigen::MatrixXd thetas;
  ParamBounds bounds;
  UnitScaler scaler;
};

UnitTransform transform_unit(const Eigen::MatrixXd& thetas, const ParamBounds& bounds);
Eigen::MatrixXd inverse_transform(const UnitScaler& scaler, const Eigen::MatrixXd& thetas);

/// Median distance of each point to its nearest other point. Exact pairwise
/// scan up to 2000 points, KD-tree beyond.
double nn_median_distance(const Eigen::MatrixXd& points);
double nn_median_distance_kdtree(const Eigen::MatrixXd& points);

struct ResampleOptions {
  int max_attempts = 1000;
  double degenerate_sigma = 1e-3;  // used when the median NN distance is zero
};

struct ResampleReport {
  double delta = 0.0;
  double sigma = 0.0;
  int fallbacks = 0;  // particles emitted unperturbed after max_attempts rejections
  int rejections = 0;
};

/// Truncated mixture-of-Gaussians resampling in the unit cube. Output weights
/// are all 1 and every particle lies inside the prior bounds.
ParticleSet resample(const ParticleSet& particles, Rng& rng, const ResampleOptions& options = {},
                     ResampleReport* report = nullptr);

// Visualization helpers; never used for inference.

double silverman_bandwidth(std::span<const double> samples);

struct Kde1d {
  Eigen::VectorXd grid;
  Eigen::VectorXd density;
  double bandwidth = 0.0;
};

/// Gaussian KDE evaluated on an evenly spaced grid of `points` nodes spanning
/// the samples plus 3 bandwidths on each side.
Kde1d gaussian_kde(std::span<const double> samples, int points = 512, double bandwidth = -1.0);

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
  bool contains(double x) const { return x >= lo && x <= hi; }
  double width() const { return hi - lo; }
};

/// Narrowest contiguous grid interval holding `mass` of the KDE.
Interval hpdi(const Kde1d& kde, double mass = 0.95);
/// Highest-density region as disjoint intervals (one per retained mode).
std::vector<Interval> hpd_region(const Kde1d& kde, double mass = 0.95);
/// Indices of grid-local maxima whose density exceeds `fraction` of the peak.
std::vector<int> kde_modes(const Kde1d& kde, double fraction = 0.1);

}  // namespace seqbed
