#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <string>

namespace seqbed {

/// Matérn-5/2 covariance between two scalar inputs.
template <typename Scalar>
Scalar matern52(Scalar x, Scalar x_prime, Scalar lengthscale, Scalar signal_var) {
  using std::abs;
  using std::exp;
  using std::sqrt;
  const Scalar a = sqrt(Scalar(5)) * abs(x - x_prime) / lengthscale;
  return signal_var * (Scalar(1) + a + a * a / Scalar(3)) * exp(-a);
}

/// Hyperparameters in the surrogate's internal units: inputs mapped to [0, 1],
/// targets z-scored.
struct GpHyperparams {
  double lengthscale = 0.2;
  double signal_var = 1.0;
  double noise_var = 1e-6;
};

struct GpConfig {
  int restarts = 5;
  double min_lengthscale = 0.01;  // fraction of the domain width
  double max_lengthscale = 10.0;
  double min_signal_var = 1e-3;
  double max_signal_var = 1e3;
  double noise_floor = 1e-6;  // relative to the target variance
  double max_noise_var = 10.0;
  int max_iter = 200;
};

struct LogMarginalLikelihood {
  double value = 0.0;
  Eigen::Vector3d gradient = Eigen::Vector3d::Zero();  // d/d(log l, log s2, log sn2)
  bool ok = false;                                     // factorization succeeded
};

/// Log marginal likelihood of a zero-mean GP and its gradient with respect to
/// (log lengthscale, log signal variance, log noise variance).
LogMarginalLikelihood gp_log_marginal_likelihood(const Eigen::VectorXd& x,
                                                 const Eigen::VectorXd& y,
                                                 const Eigen::Vector3d& log_params);

struct GpPrediction {
  double mean = 0.0;
  double variance = 0.0;  // latent function variance, no noise
};

class GpSurrogate {
 public:
  GpSurrogate() = default;
  /// Conditions on (inputs, targets) with fixed hyperparameters. When
  /// `standardize` is false the targets are used as given with a zero prior
  /// mean. Throws std::runtime_error if the kernel matrix is not positive definite.
  GpSurrogate(Eigen::VectorXd inputs, Eigen::VectorXd targets, double lo, double hi,
              GpHyperparams hyper, bool standardize = true);

  GpPrediction predict(double x) const;

  const Eigen::VectorXd& inputs() const { return inputs_; }
  const Eigen::VectorXd& targets() const { return targets_; }
  const GpHyperparams& hyperparams() const { return hyper_; }
  double target_mean() const { return y_mean_; }
  double target_scale() const { return y_scale_; }
  double log_marginal_likelihood() const { return lml_; }

  /// Set when hyperparameter search failed and the median heuristic was used.
  bool fallback = false;
  std::string note;

 private:
  Eigen::VectorXd inputs_, targets_;
  Eigen::VectorXd unit_inputs_;
  double lo_ = 0.0, width_ = 1.0;
  double y_mean_ = 0.0, y_scale_ = 1.0;
  GpHyperparams hyper_;
  Eigen::LLT<Eigen::MatrixXd> llt_;
  Eigen::VectorXd alpha_;
  double lml_ = 0.0;
};

/// Fits hyperparameters by multi-start projected gradient ascent on the log
/// marginal likelihood. Needs at least two distinct inputs.
GpSurrogate gp_fit(const Eigen::VectorXd& inputs, const Eigen::VectorXd& targets, double lo,
                   double hi, const GpConfig& config = {});

}  // namespace seqbed
