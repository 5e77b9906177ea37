#include "seqbed/utilities.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <map>
#include <numeric>

#include "seqbed/parallel.hpp"

namespace seqbed {

std::string to_string(UtilityKind kind) {
  switch (kind) {
    case UtilityKind::mi: return "mi";
    case UtilityKind::mi_weighted: return "mi_weighted";
    case UtilityKind::bd_opt: return "bd_opt";
    case UtilityKind::bd_opt_stable: return "bd_opt_stable";
  }
  return "unknown";
}

UtilityKind parse_utility_kind(std::string_view name) {
  if (name == "mi") return UtilityKind::mi;
  if (name == "mi_weighted") return UtilityKind::mi_weighted;
  if (name == "bd_opt") return UtilityKind::bd_opt;
  if (name == "bd_opt_stable") return UtilityKind::bd_opt_stable;
  throw std::invalid_argument("unknown utility '" + std::string(name) + "'");
}

namespace {

std::vector<std::uint64_t> row_keys(const Eigen::MatrixXd& thetas) {
  std::vector<std::uint64_t> keys(static_cast<std::size_t>(thetas.rows()));
  std::map<std::uint64_t, std::uint64_t> seen;
  for (Eigen::Index i = 0; i < thetas.rows(); ++i) {
    std::uint64_t h = 0x243f6a8885a308d3ULL;
    for (Eigen::Index j = 0; j < thetas.cols(); ++j) {
      h = splitmix64(h ^ std::bit_cast<std::uint64_t>(thetas(i, j)));
    }
    const std::uint64_t occurrence = seen[h]++;
    keys[static_cast<std::size_t>(i)] = splitmix64(h + occurrence);
  }
  return keys;
}

double log_sum_exp(const Eigen::Ref<const Eigen::VectorXd>& v) {
  const double top = v.maxCoeff();
  if (!std::isfinite(top)) return top;
  return top + std::log((v.array() - top).unaryExpr([](double x) { return std::exp(x); }).sum());
}

}  // namespace

ParticleRatios fit_particle_ratios(double design, const Eigen::MatrixXd& thetas,
                                   const ParticleSet& belief, const Model& model,
                                   std::uint64_t seed, const LfireConfig& config) {
  if (config.n_like < 1 || config.n_marginal < 1) {
    throw std::invalid_argument("fit_particle_ratios: sample counts must be positive");
  }
  const auto n = static_cast<std::size_t>(thetas.rows());
  const int sdim = model.spec().summary_dim;
  ParticleRatios out;
  out.design = design;
  Rng marginal_rng = make_rng(seed, Stream::marginal);
  out.marginal = sample_marginal(design, belief, config.n_marginal, model, marginal_rng);
  out.models.resize(n);
  out.own_summaries.resize(static_cast<Eigen::Index>(n), sdim);

  const std::vector<std::uint64_t> keys = row_keys(thetas);
  parallel_for(n, resolve_threads(config.threads), [&](std::size_t i) {
    const auto row = static_cast<Eigen::Index>(i);
    const Eigen::VectorXd theta = thetas.row(row).transpose();
    Rng rng = make_rng(seed, Stream::likelihood, keys[i]);
    Eigen::MatrixXd like(config.n_like, sdim);
    for (int r = 0; r < config.n_like; ++r) {
      like.row(r) = model.simulate(theta, design, rng).summary.transpose();
    }
    out.own_summaries.row(row) = like.row(0);
    out.models[i] = train_ratio(theta, design, like, out.marginal, config);
  });
  return out;
}

UtilityEstimate mi_from_ratios(const ParticleRatios& ratios, const Eigen::VectorXd& weights) {
  const auto n = static_cast<Eigen::Index>(ratios.models.size());
  UtilityEstimate est;
  est.design = ratios.design;
  est.n_particles = static_cast<int>(n);
  Eigen::VectorXd logr(n);
  Eigen::VectorXd w = weights.size() == n ? weights : Eigen::VectorXd::Ones(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    double v = log_ratio(ratios.models[static_cast<std::size_t>(i)],
                         ratios.own_summaries.row(i).transpose());
    if (!std::isfinite(v)) {
      ++est.n_dropped;
      w[i] = 0.0;
      v = 0.0;
    } else if (std::abs(v) > kLogRatioClip) {
      ++est.n_clipped;
      v = std::clamp(v, -kLogRatioClip, kLogRatioClip);
    }
    logr[i] = v;
  }
  if (est.n_dropped * 10 > n) {
    throw UtilityError("more than 10% of log-ratios were non-finite at design " +
                       std::to_string(ratios.design));
  }
  const double total = w.sum();
  if (!(total > 0.0)) throw UtilityError("utility weights sum to zero");
  const Eigen::VectorXd wn = w / total;
  est.value = wn.dot(logr);
  est.standard_error = std::sqrt((wn.array().square() * (logr.array() - est.value).square()).sum());
  est.per_particle = std::move(logr);
  return est;
}

UtilityEstimate estimate_mi(double design, const Eigen::MatrixXd& thetas, const ParticleSet& belief,
                            const Model& model, std::uint64_t seed, const LfireConfig& config,
                            bool keep_models) {
  ParticleRatios ratios = fit_particle_ratios(design, thetas, belief, model, seed, config);
  UtilityEstimate est = mi_from_ratios(ratios);
  est.seed = seed;
  if (keep_models) est.ratio_models = std::move(ratios.models);
  return est;
}

UtilityEstimate estimate_mi(double design, const ParticleSet& belief, const Model& model, int n,
                            Rng& rng, const LfireConfig& config) {
  const std::uint64_t seed = rng();
  const Eigen::MatrixXd thetas = sample_belief(belief, n, rng);
  return estimate_mi(design, thetas, belief, model, seed, config);
}

UtilityEstimate estimate_mi_weighted(double design, const ParticleSet& particles,
                                     const Model& model, std::uint64_t seed,
                                     const LfireConfig& config, bool keep_models) {
  ParticleRatios ratios =
      fit_particle_ratios(design, particles.thetas(), particles, model, seed, config);
  UtilityEstimate est = mi_from_ratios(ratios, particles.weights());
  est.seed = seed;
  if (keep_models) est.ratio_models = std::move(ratios.models);
  return est;
}

Eigen::MatrixXd weighted_covariance(const Eigen::MatrixXd& thetas, const Eigen::VectorXd& weights) {
  const Eigen::VectorXd w = weights / weights.sum();
  const Eigen::RowVectorXd mean = w.transpose() * thetas;
  const Eigen::MatrixXd centred = thetas.rowwise() - mean;
  return centred.transpose() * w.asDiagonal() * centred;
}

Eigen::VectorXd posterior_log_dets(const ParticleRatios& ratios, const Eigen::MatrixXd& thetas,
                                   double precision_cap, int* n_capped) {
  const auto n = static_cast<Eigen::Index>(ratios.models.size());
  const Eigen::Index p = ratios.own_summaries.cols();
  Eigen::MatrixXd coeffs(n, p + 1);
  for (Eigen::Index j = 0; j < n; ++j) {
    coeffs.row(j) = ratios.models[static_cast<std::size_t>(j)].raw_coefficients().transpose();
  }
  Eigen::MatrixXd features(n, p + 1);
  features.col(0).setOnes();
  features.rightCols(p) = ratios.own_summaries;
  // logr(j, i): ratio model of particle j evaluated at draw i
  const Eigen::MatrixXd logr = coeffs * features.transpose();

  const double floor = -std::log(precision_cap);
  Eigen::VectorXd out(n);
  int capped = 0;
  Eigen::VectorXd w(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    double top = -std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < n; ++j) {
      const double v = logr(j, i);
      w[j] = std::isfinite(v) ? std::clamp(v, -kLogRatioClip, kLogRatioClip)
                              : -std::numeric_limits<double>::infinity();
      top = std::max(top, w[j]);
    }
    double log_det = -std::numeric_limits<double>::infinity();
    if (std::isfinite(top)) {
      const Eigen::VectorXd wi =
          (w.array() - top).unaryExpr([](double x) { return std::exp(x); }).matrix();
      const Eigen::MatrixXd cov = weighted_covariance(thetas, wi);
      const double det = cov.determinant();
      if (det > 0.0 && std::isfinite(det)) log_det = std::log(det);
    }
    if (!(log_det > floor)) {
      log_det = floor;
      ++capped;
    }
    out[i] = log_det;
  }
  if (n_capped) *n_capped = capped;
  return out;
}

namespace {

UtilityEstimate summarize_terms(const ParticleRatios& ratios, Eigen::VectorXd terms,
                                Aggregation aggregation) {
  UtilityEstimate est;
  est.design = ratios.design;
  est.n_particles = static_cast<int>(terms.size());
  const double n = static_cast<double>(terms.size());
  const double mean = terms.mean();
  const double sd = std::sqrt((terms.array() - mean).square().sum() / std::max(n - 1.0, 1.0));
  est.standard_error = sd / std::sqrt(n);
  if (aggregation == Aggregation::mean) {
    est.value = mean;
  } else {
    std::vector<double> v(terms.data(), terms.data() + terms.size());
    const std::size_t mid = v.size() / 2;
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
    est.value = v[mid];
    if (v.size() % 2 == 0) {
      est.value = 0.5 * (est.value +
                         *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid)));
    }
  }
  est.per_particle = std::move(terms);
  return est;
}

}  // namespace

UtilityEstimate bd_opt_from_ratios(const ParticleRatios& ratios, const Eigen::MatrixXd& thetas,
                                   const BdOptOptions& options) {
  int capped = 0;
  const Eigen::VectorXd log_dets =
      posterior_log_dets(ratios, thetas, options.precision_cap, &capped);
  UtilityEstimate est =
      summarize_terms(ratios, (-log_dets.array()).exp().matrix(), options.aggregation);
  est.n_capped = capped;
  return est;
}

UtilityEstimate bd_opt_stable_from_ratios(const ParticleRatios& ratios,
                                          const Eigen::MatrixXd& thetas,
                                          const BdOptOptions& options) {
  int capped = 0;
  const Eigen::VectorXd log_dets =
      posterior_log_dets(ratios, thetas, options.precision_cap, &capped);
  UtilityEstimate est = summarize_terms(ratios, -log_dets, Aggregation::mean);
  est.n_capped = capped;
  return est;
}

UtilityEstimate bd_opt(double design, const Eigen::MatrixXd& thetas, const ParticleSet& belief,
                       const Model& model, std::uint64_t seed, const LfireConfig& config,
                       const BdOptOptions& options) {
  const ParticleRatios ratios = fit_particle_ratios(design, thetas, belief, model, seed, config);
  UtilityEstimate est = bd_opt_from_ratios(ratios, thetas, options);
  est.seed = seed;
  return est;
}

UtilityEstimate bd_opt(double design, const ParticleSet& belief, const Model& model, int n,
                       Rng& rng, const LfireConfig& config, const BdOptOptions& options) {
  const std::uint64_t seed = rng();
  const Eigen::MatrixXd thetas = sample_belief(belief, n, rng);
  return bd_opt(design, thetas, belief, model, seed, config, options);
}

UtilityEstimate bd_opt_stable(double design, const Eigen::MatrixXd& thetas,
                              const ParticleSet& belief, const Model& model, std::uint64_t seed,
                              const LfireConfig& config, const BdOptOptions& options) {
  const ParticleRatios ratios = fit_particle_ratios(design, thetas, belief, model, seed, config);
  UtilityEstimate est = bd_opt_stable_from_ratios(ratios, thetas, options);
  est.seed = seed;
  return est;
}

UtilityEstimate bd_opt_stable(double design, const ParticleSet& belief, const Model& model, int n,
                              Rng& rng, const LfireConfig& config, const BdOptOptions& options) {
  const std::uint64_t seed = rng();
  const Eigen::MatrixXd thetas = sample_belief(belief, n, rng);
  return bd_opt_stable(design, thetas, belief, model, seed, config, options);
}

UtilityEstimate evaluate_utility(UtilityKind kind, double design, const Eigen::MatrixXd& thetas,
                                 const ParticleSet& belief, const Model& model,
                                 std::uint64_t seed, const LfireConfig& config, bool keep_models,
                                 const BdOptOptions& options) {
  switch (kind) {
    case UtilityKind::mi:
      return estimate_mi(design, thetas, belief, model, seed, config, keep_models);
    case UtilityKind::mi_weighted:
      return estimate_mi_weighted(design, belief, model, seed, config, keep_models);
    case UtilityKind::bd_opt: return bd_opt(design, thetas, belief, model, seed, config, options);
    case UtilityKind::bd_opt_stable:
      return bd_opt_stable(design, thetas, belief, model, seed, config, options);
  }
  throw std::invalid_argument("unknown utility kind");
}

ReferenceMi reference_mi(double design, const Model& model, int n_outer, int n_inner, Rng& rng) {
  if (!model.has_likelihood()) {
    throw std::invalid_argument("reference_mi: " + to_string(model.spec().kind) +
                                " model has no analytic likelihood");
  }
  const Eigen::MatrixXd outer = model.sample_prior(n_outer, rng);
  const Eigen::MatrixXd inner = model.sample_prior(n_inner, rng);
  Eigen::VectorXd terms(n_outer);
  Eigen::VectorXd inner_ll(n_inner);
  for (int i = 0; i < n_outer; ++i) {
    const Eigen::VectorXd theta = outer.row(i).transpose();
    const Observation y = model.simulate(theta, design, rng).raw;
    for (int j = 0; j < n_inner; ++j) {
      inner_ll[j] = model.log_likelihood(y, inner.row(j).transpose(), design);
    }
    terms[i] = model.log_likelihood(y, theta, design) -
               (log_sum_exp(inner_ll) - std::log(static_cast<double>(n_inner)));
  }
  const double mean = terms.mean();
  const double sd = std::sqrt((terms.array() - mean).square().sum() / std::max(n_outer - 1, 1));
  return {mean, sd / std::sqrt(static_cast<double>(n_outer))};
}

}  // namespace seqbed
