#include "seqbed/gp.hpp"

#include <algorithm>
#include <array>
#include <numbers>
#include <stdexcept>
#include <vector>

namespace seqbed {

namespace {

Eigen::MatrixXd kernel_matrix(const Eigen::VectorXd& x, double lengthscale, double signal_var) {
  const Eigen::Index n = x.size();
  Eigen::MatrixXd k(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    k(i, i) = signal_var;
    for (Eigen::Index j = 0; j < i; ++j) {
      k(i, j) = k(j, i) = matern52(x[i], x[j], lengthscale, signal_var);
    }
  }
  return k;
}

}  // namespace

LogMarginalLikelihood gp_log_marginal_likelihood(const Eigen::VectorXd& x,
                                                 const Eigen::VectorXd& y,
                                                 const Eigen::Vector3d& log_params) {
  const double ell = std::exp(log_params[0]);
  const double s2 = std::exp(log_params[1]);
  const double sn2 = std::exp(log_params[2]);
  const Eigen::Index n = x.size();

  const Eigen::MatrixXd signal = kernel_matrix(x, ell, s2);
  Eigen::MatrixXd k = signal;
  k.diagonal().array() += sn2;
  const Eigen::LLT<Eigen::MatrixXd> llt(k);
  LogMarginalLikelihood out;
  if (llt.info() != Eigen::Success) return out;
  const Eigen::VectorXd alpha = llt.solve(y);
  const Eigen::MatrixXd k_inv = llt.solve(Eigen::MatrixXd::Identity(n, n));
  const Eigen::MatrixXd inner = alpha * alpha.transpose() - k_inv;

  double log_det = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) log_det += std::log(llt.matrixL()(i, i));
  out.value = -0.5 * y.dot(alpha) - log_det - 0.5 * static_cast<double>(n) *
                                                   std::log(2.0 * std::numbers::pi);

  // dk/dlog(l) = s2 a^2 (1 + a) exp(-a) / 3 with a = sqrt(5) r / l
  Eigen::MatrixXd d_ell = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < i; ++j) {
      const double a = std::sqrt(5.0) * std::abs(x[i] - x[j]) / ell;
      d_ell(i, j) = d_ell(j, i) = s2 * a * a * (1.0 + a) * std::exp(-a) / 3.0;
    }
  }
  out.gradient[0] = 0.5 * (inner.cwiseProduct(d_ell)).sum();
  out.gradient[1] = 0.5 * (inner.cwiseProduct(signal)).sum();
  out.gradient[2] = 0.5 * sn2 * inner.trace();
  out.ok = std::isfinite(out.value);
  return out;
}

GpSurrogate::GpSurrogate(Eigen::VectorXd inputs, Eigen::VectorXd targets, double lo, double hi,
                         GpHyperparams hyper, bool standardize)
    : inputs_(std::move(inputs)), targets_(std::move(targets)), lo_(lo), hyper_(hyper) {
  if (inputs_.size() != targets_.size() || inputs_.size() == 0) {
    throw std::invalid_argument("GpSurrogate: inputs and targets must be non-empty and aligned");
  }
  width_ = hi > lo ? hi - lo : 1.0;
  unit_inputs_ = (inputs_.array() - lo_) / width_;
  if (standardize) {
    y_mean_ = targets_.mean();
    const double sd = std::sqrt((targets_.array() - y_mean_).square().mean());
    y_scale_ = sd > 0.0 ? sd : 1.0;
  }
  const Eigen::VectorXd y = (targets_.array() - y_mean_) / y_scale_;
  Eigen::MatrixXd k = kernel_matrix(unit_inputs_, hyper_.lengthscale, hyper_.signal_var);
  k.diagonal().array() += hyper_.noise_var;
  llt_.compute(k);
  if (llt_.info() != Eigen::Success) {
    throw std::runtime_error("GpSurrogate: kernel matrix is not positive definite");
  }
  alpha_ = llt_.solve(y);
  double log_det = 0.0;
  for (Eigen::Index i = 0; i < k.rows(); ++i) log_det += std::log(llt_.matrixL()(i, i));
  lml_ = -0.5 * y.dot(alpha_) - log_det -
         0.5 * static_cast<double>(y.size()) * std::log(2.0 * std::numbers::pi);
}

GpPrediction GpSurrogate::predict(double x) const {
  const double u = (x - lo_) / width_;
  Eigen::VectorXd k(unit_inputs_.size());
  for (Eigen::Index i = 0; i < k.size(); ++i) {
    k[i] = matern52(u, unit_inputs_[i], hyper_.lengthscale, hyper_.signal_var);
  }
  const Eigen::VectorXd v = llt_.matrixL().solve(k);
  GpPrediction p;
  p.mean = y_mean_ + y_scale_ * k.dot(alpha_);
  p.variance = std::max(0.0, hyper_.signal_var - v.squaredNorm()) * y_scale_ * y_scale_;
  return p;
}

GpSurrogate gp_fit(const Eigen::VectorXd& inputs, const Eigen::VectorXd& targets, double lo,
                   double hi, const GpConfig& config) {
  if (inputs.size() != targets.size()) {
    throw std::invalid_argument("gp_fit: inputs and targets differ in length");
  }
  if (inputs.size() < 2 || inputs.maxCoeff() == inputs.minCoeff()) {
    throw std::invalid_argument("gp_fit: needs at least two distinct inputs");
  }
  const double width = hi > lo ? hi - lo : 1.0;
  const Eigen::VectorXd x = (inputs.array() - lo) / width;
  const double mean = targets.mean();
  const double sd = std::sqrt((targets.array() - mean).square().mean());
  const Eigen::VectorXd y = (targets.array() - mean) / (sd > 0.0 ? sd : 1.0);

  const Eigen::Vector3d lower(std::log(config.min_lengthscale), std::log(config.min_signal_var),
                              std::log(config.noise_floor));
  const Eigen::Vector3d upper(std::log(config.max_lengthscale), std::log(config.max_signal_var),
                              std::log(std::max(config.max_noise_var, config.noise_floor)));
  const auto project = [&](Eigen::Vector3d p) { return p.cwiseMax(lower).cwiseMin(upper); };

  constexpr std::array<double, 5> start_lengthscales{0.05, 0.1, 0.2, 0.5, 1.0};
  Eigen::Vector3d best_params = Eigen::Vector3d::Zero();
  double best_value = -std::numeric_limits<double>::infinity();
  const int restarts = std::clamp(config.restarts, 1, static_cast<int>(start_lengthscales.size()));
  for (int r = 0; r < restarts; ++r) {
    Eigen::Vector3d p =
        project(Eigen::Vector3d(std::log(start_lengthscales[static_cast<std::size_t>(r)]), 0.0,
                                std::log(0.1)));
    LogMarginalLikelihood cur = gp_log_marginal_likelihood(x, y, p);
    if (!cur.ok) continue;
    double step = 0.1;
    for (int it = 0; it < config.max_iter && step > 1e-10; ++it) {
      if ((project(p + cur.gradient) - p).norm() < 1e-6) break;
      const Eigen::Vector3d cand = project(p + step * cur.gradient);
      const LogMarginalLikelihood next = gp_log_marginal_likelihood(x, y, cand);
      if (next.ok && next.value > cur.value) {
        p = cand;
        cur = next;
        step *= 1.5;
      } else {
        step *= 0.5;
      }
    }
    if (cur.value > best_value) {
      best_value = cur.value;
      best_params = p;
    }
  }

  if (std::isfinite(best_value)) {
    const GpHyperparams hyper{std::exp(best_params[0]), std::exp(best_params[1]),
                              std::exp(best_params[2])};
    return GpSurrogate(inputs, targets, lo, hi, hyper);
  }

  std::vector<double> gaps;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    for (Eigen::Index j = 0; j < i; ++j) {
      if (x[i] != x[j]) gaps.push_back(std::abs(x[i] - x[j]));
    }
  }
  std::nth_element(gaps.begin(), gaps.begin() + static_cast<std::ptrdiff_t>(gaps.size() / 2),
                   gaps.end());
  GpHyperparams hyper{std::clamp(gaps[gaps.size() / 2], config.min_lengthscale,
                                 config.max_lengthscale),
                      1.0, std::max(config.noise_floor, 1e-2)};
  for (int attempt = 0;; ++attempt) {
    try {
      GpSurrogate gp(inputs, targets, lo, hi, hyper);
      gp.fallback = true;
      gp.note = "hyperparameter search failed; median-heuristic lengthscale " +
                std::to_string(hyper.lengthscale);
      return gp;
    } catch (const std::runtime_error&) {
      if (attempt >= 10) throw;
      hyper.noise_var *= 10.0;
    }
  }
}

}  // namespace seqbed
