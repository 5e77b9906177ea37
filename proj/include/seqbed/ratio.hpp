#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <vector>

#include "seqbed/models.hpp"
#include "seqbed/rng.hpp"

namespace seqbed {

class ParticleSet;

/// Settings of the penalized logistic-regression ratio fit.
struct LfireConfig {
  int n_like = 100;      // likelihood samples per parameter (includes the utility's own draw)
  int n_marginal = 100;  // marginal samples shared by all fits at one design
  double lambda = -1.0;  // ridge strength in standardized space; <= 0 means 1 / num_samples
  bool cross_validate = false;  // choose lambda from a 5-point log grid by 5-fold CV
  int max_iter = 100;
  double tol = 1e-6;  // on the gradient norm of the mean penalized loss
  int threads = 0;    // 0 = hardware concurrency
};

/// Per-feature z-scoring learned from the pooled training set.
struct FeatureScaler {
  Eigen::VectorXd mean;
  Eigen::VectorXd scale;
  std::vector<bool> active;  // false for zero-variance columns dropped from the fit

  static FeatureScaler identity(int dim);
  Eigen::VectorXd apply(const Eigen::Ref<const Eigen::VectorXd>& summary) const;
};

struct FitDiagnostics {
  double loss = 0.0;  // mean penalized logistic loss at the optimum
  double lambda = 0.0;
  int n_like = 0;
  int n_marginal = 0;
  int iterations = 0;
  double grad_norm = 0.0;
  std::vector<int> dropped_features;
};

/// Log-linear density-ratio model log r(y) = beta' [1, z(psi(y))] fitted for
/// one (theta, design) pair. beta[0] is the intercept; dropped features carry
/// a zero coefficient.
struct RatioModel {
  Eigen::VectorXd beta;
  FeatureScaler scaler;
  Eigen::VectorXd theta;
  double design = 0.0;
  FitDiagnostics diagnostics;

  int summary_dim() const { return static_cast<int>(beta.size()) - 1; }
  /// Coefficients acting on the raw summary: log r = c[0] + c.tail' psi.
  Eigen::VectorXd raw_coefficients() const;
};

class FitError : public std::runtime_error {
 public:
  FitError(const std::string& what, Eigen::VectorXd last_beta, double grad_norm)
      : std::runtime_error(what), last_beta(std::move(last_beta)), grad_norm(grad_norm) {}

  Eigen::VectorXd last_beta;
  double grad_norm;
};

/// Fits the ratio between the likelihood sample (rows of likelihood_summaries,
/// label 1) and the marginal sample (label 0). Rows are canonically sorted
/// before fitting, so the result does not depend on their order.
RatioModel train_ratio(const Eigen::VectorXd& theta, double design,
                       const Eigen::MatrixXd& likelihood_summaries,
                       const Eigen::MatrixXd& marginal_summaries, const LfireConfig& config = {});

double log_ratio(const RatioModel& model, const Eigen::Ref<const Eigen::VectorXd>& summary);

/// m summary rows of the belief-predictive distribution at design d.
Eigen::MatrixXd sample_marginal(double design, const ParticleSet& belief, int m,
                                const Model& model, Rng& rng);

/// Mean penalized logistic loss of a fitted model on held-out data.
double logistic_loss(const RatioModel& model, const Eigen::MatrixXd& likelihood_summaries,
                     const Eigen::MatrixXd& marginal_summaries);

}  // namespace seqbed
