#include "seqbed/ratio.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

#include "seqbed/belief.hpp"

namespace seqbed {

namespace {

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Eigen::MatrixXd sorted_rows(const Eigen::MatrixXd& m) {
  std::vector<Eigen::Index> order(static_cast<std::size_t>(m.rows()));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      if (m(a, c) != m(b, c)) return m(a, c) < m(b, c);
    }
    return false;
  });
  Eigen::MatrixXd out(m.rows(), m.cols());
  for (std::size_t r = 0; r < order.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = m.row(order[r]);
  return out;
}

struct Problem {
  Eigen::MatrixXd x;  // intercept + active standardized features
  Eigen::VectorXd y;  // 1 = likelihood, 0 = marginal
};

struct Solution {
  Eigen::VectorXd beta;
  double loss = 0.0;
  int iterations = 0;
  double grad_norm = 0.0;
};

double objective(const Problem& p, const Eigen::VectorXd& beta, double lambda) {
  const Eigen::VectorXd eta = p.x * beta;
  double f = 0.0;
  for (Eigen::Index i = 0; i < eta.size(); ++i) f += softplus(eta[i]) - p.y[i] * eta[i];
  f /= static_cast<double>(eta.size());
  return f + 0.5 * lambda * beta.tail(beta.size() - 1).squaredNorm();
}

// Damped Newton with Armijo backtracking on the ridge-penalized logistic loss.
Solution solve_logistic(const Problem& p, double lambda, int max_iter, double tol) {
  const Eigen::Index dim = p.x.cols();
  const double n = static_cast<double>(p.x.rows());
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(dim);
  double f = objective(p, beta, lambda);
  double grad_norm = 0.0;
  for (int it = 0; it <= max_iter; ++it) {
    const Eigen::VectorXd eta = p.x * beta;
    Eigen::VectorXd resid(eta.size());
    Eigen::VectorXd curv(eta.size());
    for (Eigen::Index i = 0; i < eta.size(); ++i) {
      const double s = sigmoid(eta[i]);
      resid[i] = s - p.y[i];
      curv[i] = s * (1.0 - s);
    }
    Eigen::VectorXd grad = p.x.transpose() * resid / n;
    grad.tail(dim - 1) += lambda * beta.tail(dim - 1);
    grad_norm = grad.norm();
    if (grad_norm <= tol) return {beta, f, it, grad_norm};
    if (it == max_iter) break;

    Eigen::MatrixXd hess = p.x.transpose() * curv.asDiagonal() * p.x / n;
    hess.diagonal().tail(dim - 1).array() += lambda;
    hess.diagonal().array() += 1e-12;
    const Eigen::VectorXd step = -hess.ldlt().solve(grad);
    const double slope = grad.dot(step);
    double t = 1.0;
    double f_new = objective(p, beta + step, lambda);
    for (int k = 0; k < 60 && !(f_new <= f + 1e-4 * t * slope); ++k) {
      t *= 0.5;
      f_new = objective(p, beta + t * step, lambda);
    }
    if (!std::isfinite(f_new)) break;
    beta += t * step;
    f = f_new;
  }
  throw FitError("ratio fit did not converge: gradient norm " + std::to_string(grad_norm),
                 beta, grad_norm);
}

Problem build_problem(const Eigen::MatrixXd& like, const Eigen::MatrixXd& marg,
                      const FeatureScaler& scaler) {
  const int active = static_cast<int>(std::count(scaler.active.begin(), scaler.active.end(), true));
  const Eigen::Index n1 = like.rows();
  const Eigen::Index n0 = marg.rows();
  Problem p;
  p.x.resize(n1 + n0, active + 1);
  p.y.resize(n1 + n0);
  for (Eigen::Index i = 0; i < n1 + n0; ++i) {
    const auto row = i < n1 ? like.row(i) : marg.row(i - n1);
    p.x(i, 0) = 1.0;
    int c = 1;
    for (Eigen::Index j = 0; j < row.size(); ++j) {
      if (scaler.active[static_cast<std::size_t>(j)]) {
        p.x(i, c++) = (row[j] - scaler.mean[j]) / scaler.scale[j];
      }
    }
    p.y[i] = i < n1 ? 1.0 : 0.0;
  }
  return p;
}

Eigen::MatrixXd select_rows(const Eigen::MatrixXd& m, int fold, int folds, bool keep) {
  std::vector<Eigen::Index> idx;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    if ((i % folds == fold) != keep) idx.push_back(i);
  }
  Eigen::MatrixXd out(static_cast<Eigen::Index>(idx.size()), m.cols());
  for (std::size_t r = 0; r < idx.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = m.row(idx[r]);
  return out;
}

}  // namespace

FeatureScaler FeatureScaler::identity(int dim) {
  return {Eigen::VectorXd::Zero(dim), Eigen::VectorXd::Ones(dim),
          std::vector<bool>(static_cast<std::size_t>(dim), true)};
}

Eigen::VectorXd FeatureScaler::apply(const Eigen::Ref<const Eigen::VectorXd>& summary) const {
  return ((summary - mean).array() / scale.array()).matrix();
}

Eigen::VectorXd RatioModel::raw_coefficients() const {
  const int p = summary_dim();
  Eigen::VectorXd c(p + 1);
  c[0] = beta[0];
  for (int j = 0; j < p; ++j) {
    if (scaler.active[static_cast<std::size_t>(j)]) {
      c[j + 1] = beta[j + 1] / scaler.scale[j];
      c[0] -= c[j + 1] * scaler.mean[j];
    } else {
      c[j + 1] = 0.0;
    }
  }
  return c;
}

double log_ratio(const RatioModel& model, const Eigen::Ref<const Eigen::VectorXd>& summary) {
  if (summary.size() != model.summary_dim()) {
    throw std::invalid_argument("log_ratio: summary has " + std::to_string(summary.size()) +
                                " entries, model expects " + std::to_string(model.summary_dim()));
  }
  double v = model.beta[0];
  for (Eigen::Index j = 0; j < summary.size(); ++j) {
    if (model.scaler.active[static_cast<std::size_t>(j)]) {
      v += model.beta[j + 1] * (summary[j] - model.scaler.mean[j]) / model.scaler.scale[j];
    }
  }
  return v;
}

RatioModel train_ratio(const Eigen::VectorXd& theta, double design,
                       const Eigen::MatrixXd& likelihood_summaries,
                       const Eigen::MatrixXd& marginal_summaries, const LfireConfig& config) {
  if (likelihood_summaries.rows() == 0 || marginal_summaries.rows() == 0) {
    throw std::invalid_argument("train_ratio: empty sample set");
  }
  if (likelihood_summaries.cols() != marginal_summaries.cols()) {
    throw std::invalid_argument("train_ratio: sample sets differ in summary dimension");
  }
  const Eigen::MatrixXd like = sorted_rows(likelihood_summaries);
  const Eigen::MatrixXd marg = sorted_rows(marginal_summaries);
  const auto dim = static_cast<int>(like.cols());
  const double n1 = static_cast<double>(like.rows());
  const double n0 = static_cast<double>(marg.rows());

  RatioModel model;
  model.theta = theta;
  model.design = design;
  FeatureScaler& scaler = model.scaler;
  scaler = FeatureScaler::identity(dim);
  for (int j = 0; j < dim; ++j) {
    const double mean = (like.col(j).sum() + marg.col(j).sum()) / (n1 + n0);
    const double ss = (like.col(j).array() - mean).square().sum() +
                      (marg.col(j).array() - mean).square().sum();
    const double sd = std::sqrt(ss / (n1 + n0));
    scaler.mean[j] = mean;
    if (sd > 1e-12 * (1.0 + std::abs(mean))) {
      scaler.scale[j] = sd;
    } else {
      scaler.active[static_cast<std::size_t>(j)] = false;
      model.diagnostics.dropped_features.push_back(j);
    }
  }

  const double base_lambda = config.lambda > 0 ? config.lambda : 1.0 / (n1 + n0);
  double lambda = base_lambda;
  if (config.cross_validate && like.rows() >= 5 && marg.rows() >= 5) {
    constexpr int folds = 5;
    constexpr std::array<double, 5> grid{0.01, 0.1, 1.0, 10.0, 100.0};
    double best = std::numeric_limits<double>::infinity();
    for (double mult : grid) {
      double held_out = 0.0;
      for (int fold = 0; fold < folds; ++fold) {
        LfireConfig inner = config;
        inner.cross_validate = false;
        inner.lambda = base_lambda * mult;
        const RatioModel m = train_ratio(theta, design, select_rows(like, fold, folds, true),
                                         select_rows(marg, fold, folds, true), inner);
        held_out += logistic_loss(m, select_rows(like, fold, folds, false),
                                  select_rows(marg, fold, folds, false));
      }
      if (held_out < best) {
        best = held_out;
        lambda = base_lambda * mult;
      }
    }
  }

  const Problem problem = build_problem(like, marg, scaler);
  const Solution sol = solve_logistic(problem, lambda, config.max_iter, config.tol);

  model.beta = Eigen::VectorXd::Zero(dim + 1);
  model.beta[0] = sol.beta[0] - std::log(n1 / n0);
  int c = 1;
  for (int j = 0; j < dim; ++j) {
    if (scaler.active[static_cast<std::size_t>(j)]) model.beta[j + 1] = sol.beta[c++];
  }
  model.diagnostics.loss = sol.loss;
  model.diagnostics.lambda = lambda;
  model.diagnostics.n_like = static_cast<int>(n1);
  model.diagnostics.n_marginal = static_cast<int>(n0);
  model.diagnostics.iterations = sol.iterations;
  model.diagnostics.grad_norm = sol.grad_norm;
  return model;
}

double logistic_loss(const RatioModel& model, const Eigen::MatrixXd& likelihood_summaries,
                     const Eigen::MatrixXd& marginal_summaries) {
  const double n1 = static_cast<double>(likelihood_summaries.rows());
  const double n0 = static_cast<double>(marginal_summaries.rows());
  const double offset = std::log(n1 / n0);
  double total = 0.0;
  for (Eigen::Index i = 0; i < likelihood_summaries.rows(); ++i) {
    total += softplus(-(log_ratio(model, likelihood_summaries.row(i).transpose()) + offset));
  }
  for (Eigen::Index i = 0; i < marginal_summaries.rows(); ++i) {
    total += softplus(log_ratio(model, marginal_summaries.row(i).transpose()) + offset);
  }
  return total / (n1 + n0);
}

Eigen::MatrixXd sample_marginal(double design, const ParticleSet& belief, int m,
                                const Model& model, Rng& rng) {
  const Eigen::MatrixXd thetas = sample_belief(belief, m, rng);
  Eigen::MatrixXd out(m, model.spec().summary_dim);
  for (int i = 0; i < m; ++i) {
    out.row(i) = model.simulate(thetas.row(i).transpose(), design, rng).summary.transpose();
  }
  return out;
}

}  // namespace seqbed
