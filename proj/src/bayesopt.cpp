#include "seqbed/bayesopt.hpp"

#include <algorithm>
#include <numeric>
#include <optional>

namespace seqbed {

BoConfig default_bo_config(const DesignDomain& domain) {
  BoConfig config;
  config.budget = domain.discrete ? 25 : 30;
  return config;
}

namespace {

class Driver {
 public:
  Driver(const BoObjective& objective, const DesignDomain& domain, const BoConfig& config,
         Rng& rng)
      : objective_(objective), domain_(domain), config_(config), rng_(rng) {}

  BoResult run();

 private:
  void evaluate(double design);
  bool evaluated(double design) const;
  std::vector<double> initial_designs() const;
  std::optional<double> propose(const GpSurrogate& gp);
  std::optional<double> random_unevaluated();
  double ei_at(const GpSurrogate& gp, double x, double best) const;
  std::optional<GpSurrogate> fit() const;
  double refine_max(const std::function<double(double)>& f, double x) const;

  const BoObjective& objective_;
  const DesignDomain& domain_;
  const BoConfig& config_;
  Rng& rng_;
  BoTrace trace_;
};

bool Driver::evaluated(double design) const {
  const double tol = domain_.discrete ? 0.0 : config_.duplicate_tol;
  return std::any_of(trace_.evaluations.begin(), trace_.evaluations.end(),
                     [&](const BoEvaluation& e) { return std::abs(e.design - design) <= tol; });
}

void Driver::evaluate(double design) {
  BoEvaluation e;
  e.design = design;
  for (int attempt = 0; attempt < 2 && !e.ok; ++attempt) {
    e.seed = rng_();
    e.attempts = attempt + 1;
    try {
      e.value = objective_(design, e.seed);
      if (!std::isfinite(e.value)) throw std::runtime_error("non-finite utility value");
      e.ok = true;
      e.error.clear();
    } catch (const std::exception& ex) {
      e.error = ex.what();
      trace_.log.push_back("utility evaluation at " + std::to_string(design) + " failed (attempt " +
                           std::to_string(attempt + 1) + "): " + ex.what());
    }
  }
  if (!e.ok) trace_.log.push_back("skipping design " + std::to_string(design));
  trace_.evaluations.push_back(std::move(e));
}

std::vector<double> Driver::initial_designs() const {
  const int n = std::max(1, std::min(config_.n_init, config_.budget));
  std::vector<double> out;
  for (int i = 0; i < n; ++i) {
    double d;
    if (domain_.discrete) {
      d = n == 1 ? 0.5 * (domain_.lo + domain_.hi)
                 : domain_.lo + domain_.width() * i / static_cast<double>(n - 1);
    } else {
      d = domain_.lo + domain_.width() * (i + 0.5) / static_cast<double>(n);
    }
    d = domain_.snap(d);
    if (std::find(out.begin(), out.end(), d) == out.end()) out.push_back(d);
  }
  return out;
}

std::optional<GpSurrogate> Driver::fit() const {
  std::vector<double> xs, ys;
  for (const BoEvaluation& e : trace_.evaluations) {
    if (!e.ok) continue;
    xs.push_back(e.design);
    ys.push_back(e.value);
  }
  if (xs.size() < 2 || *std::max_element(xs.begin(), xs.end()) ==
                           *std::min_element(xs.begin(), xs.end())) {
    return std::nullopt;
  }
  const Eigen::VectorXd x = Eigen::Map<const Eigen::VectorXd>(xs.data(), static_cast<Eigen::Index>(xs.size()));
  const Eigen::VectorXd y = Eigen::Map<const Eigen::VectorXd>(ys.data(), static_cast<Eigen::Index>(ys.size()));
  return gp_fit(x, y, domain_.lo, domain_.hi, config_.gp);
}

double Driver::ei_at(const GpSurrogate& gp, double x, double best) const {
  const GpPrediction p = gp.predict(x);
  return expected_improvement(p.mean, std::sqrt(p.variance), best);
}

// Coordinate pattern search for a local maximum of f inside the domain.
double Driver::refine_max(const std::function<double(double)>& f, double x) const {
  double fx = f(x);
  double step = 0.05 * domain_.width();
  while (step > 1e-6 * domain_.width()) {
    bool moved = false;
    for (double cand : {x - step, x + step}) {
      cand = std::clamp(cand, domain_.lo, domain_.hi);
      const double fc = f(cand);
      if (fc > fx) {
        x = cand;
        fx = fc;
        moved = true;
        break;
      }
    }
    if (!moved) step *= 0.5;
  }
  return x;
}

std::optional<double> Driver::random_unevaluated() {
  for (int tries = 0; tries < 1000; ++tries) {
    const double d = domain_.snap(domain_.lo + domain_.width() * uniform01(rng_));
    if (!evaluated(d)) return d;
  }
  if (domain_.discrete) {
    for (double d = domain_.lo; d <= domain_.hi; d += 1.0) {
      if (!evaluated(d)) return d;
    }
  }
  return std::nullopt;
}

std::optional<double> Driver::propose(const GpSurrogate& gp) {
  double best = -std::numeric_limits<double>::infinity();
  for (const BoEvaluation& e : trace_.evaluations) {
    if (e.ok) best = std::max(best, gp.predict(e.design).mean);
  }

  if (domain_.discrete) {
    std::optional<double> arg;
    double top = -1.0;
    for (double d = domain_.lo; d <= domain_.hi; d += 1.0) {
      if (evaluated(d)) continue;
      const double v = ei_at(gp, d, best);
      if (v > top) {
        top = v;
        arg = d;
      }
    }
    return arg;
  }

  struct Candidate {
    double x, ei;
  };
  std::vector<Candidate> cands;
  for (int i = 0; i < config_.n_seeds; ++i) {
    const double x = domain_.lo + domain_.width() * uniform01(rng_);
    cands.push_back({x, ei_at(gp, x, best)});
  }
  std::stable_sort(cands.begin(), cands.end(),
                   [](const Candidate& a, const Candidate& b) { return a.ei > b.ei; });
  const std::size_t refined = std::min<std::size_t>(5, cands.size());
  const auto ei = [&](double x) { return ei_at(gp, x, best); };
  for (std::size_t i = 0; i < refined; ++i) {
    const double x = refine_max(ei, cands[i].x);
    cands.push_back({x, ei(x)});
  }
  std::stable_sort(cands.begin(), cands.end(),
                   [](const Candidate& a, const Candidate& b) { return a.ei > b.ei; });
  for (const Candidate& c : cands) {
    if (!evaluated(c.x)) return c.x;
  }
  return random_unevaluated();
}

BoResult Driver::run() {
  if (config_.budget < 1) throw std::invalid_argument("bo_optimize: budget must be positive");
  for (double d : initial_designs()) evaluate(d);

  while (static_cast<int>(trace_.evaluations.size()) < config_.budget) {
    const std::optional<GpSurrogate> gp = fit();
    std::optional<double> next = gp ? propose(*gp) : random_unevaluated();
    if (gp && gp->fallback) trace_.log.push_back(gp->note);
    if (!next) break;
    evaluate(*next);
  }

  bool any = false;
  for (const BoEvaluation& e : trace_.evaluations) {
    if (e.ok && (!any || e.value > trace_.raw_best_value)) {
      trace_.raw_best_value = e.value;
      trace_.raw_best_design = e.design;
      any = true;
    }
  }
  if (!any) throw BoError("every utility evaluation failed");

  BoResult result;
  const std::optional<GpSurrogate> gp = fit();
  if (!gp) {
    trace_.log.push_back("too few successful evaluations for a surrogate; using the best raw value");
    trace_.d_star = trace_.raw_best_design;
  } else {
    result.surrogate = *gp;
    trace_.hyperparams = gp->hyperparams();
    std::vector<double> grid;
    if (domain_.discrete) {
      for (double d = domain_.lo; d <= domain_.hi; d += 1.0) grid.push_back(d);
    } else {
      const int n = std::max(2, config_.grid_points);
      for (int i = 0; i < n; ++i) grid.push_back(domain_.lo + domain_.width() * i / (n - 1.0));
    }
    const auto n = static_cast<Eigen::Index>(grid.size());
    trace_.grid.resize(n);
    trace_.mean.resize(n);
    trace_.variance.resize(n);
    double best_x = grid.front();
    double best_mean = -std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < n; ++i) {
      const GpPrediction p = gp->predict(grid[static_cast<std::size_t>(i)]);
      trace_.grid[i] = grid[static_cast<std::size_t>(i)];
      trace_.mean[i] = p.mean;
      trace_.variance[i] = p.variance;
      if (p.mean > best_mean) {
        best_mean = p.mean;
        best_x = trace_.grid[i];
      }
    }
    if (!domain_.discrete) {
      for (const BoEvaluation& e : trace_.evaluations) {
        if (e.ok && gp->predict(e.design).mean > best_mean) {
          best_mean = gp->predict(e.design).mean;
          best_x = e.design;
        }
      }
      best_x = refine_max([&](double x) { return gp->predict(x).mean; }, best_x);
    }
    trace_.d_star = domain_.snap(best_x);
  }
  result.d_star = trace_.d_star;
  result.trace = std::move(trace_);
  return result;
}

}  // namespace

BoResult bo_optimize(const BoObjective& objective, const DesignDomain& domain,
                     const BoConfig& config, Rng& rng) {
  return Driver(objective, domain, config, rng).run();
}

}  // namespace seqbed
