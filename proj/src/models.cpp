#include "seqbed/models.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

namespace seqbed {

namespace {

bool is_integral(double v) { return std::isfinite(v) && v == std::floor(v); }

double log_binomial_pmf(int k, int n, double log_p, double log_q) {
  const double log_choose =
      std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0);
  // 0 * log(0) terms are zero
  const double a = k == 0 ? 0.0 : k * log_p;
  const double b = k == n ? 0.0 : (n - k) * log_q;
  return log_choose + a + b;
}

}  // namespace

std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::oscillation: return "oscillation";
    case ModelKind::death: return "death";
    case ModelKind::sir: return "sir";
    case ModelKind::cell: return "cell";
  }
  return "unknown";
}

ModelKind parse_model_kind(std::string_view name) {
  if (name == "oscillation") return ModelKind::oscillation;
  if (name == "death") return ModelKind::death;
  if (name == "sir") return ModelKind::sir;
  if (name == "cell") return ModelKind::cell;
  throw std::invalid_argument("unknown model '" + std::string(name) + "'");
}

bool DesignDomain::contains(double d) const {
  if (!(d >= lo && d <= hi)) return false;
  return !discrete || d == std::round(d);
}

double DesignDomain::snap(double d) const {
  const double c = std::clamp(d, lo, hi);
  return discrete ? std::round(c) : c;
}

bool ParamBounds::contains(const Eigen::Ref<const Eigen::VectorXd>& theta) const {
  for (Eigen::Index j = 0; j < theta.size(); ++j) {
    if (!(theta[j] >= lower[j] && theta[j] <= upper[j])) return false;
  }
  return true;
}

int steps_to(double tau, double dt) {
  return static_cast<int>(std::llround(std::max(tau, 0.0) / dt));
}

Eigen::VectorXd oscillation_summary(double y) {
  Eigen::VectorXd s(3);
  s << y, y * y, y * y * y;
  return s;
}

Eigen::VectorXd death_summary(int infected) {
  const double i = infected;
  Eigen::VectorXd s(3);
  s << i, i * i, i * i * i;
  return s;
}

Eigen::VectorXd sir_summary(int infected, int recovered) {
  const double i = infected;
  const double r = recovered;
  Eigen::VectorXd s(9);
  s << i, i * i, i * i * i, r, r * r, r * r * r, i * r, i * i * r, i * r * r;
  return s;
}

Eigen::VectorXd cell_summary(int hamming, int count) {
  Eigen::VectorXd s(2);
  s << hamming, count;
  return s;
}

SimOutput simulate_oscillation(double omega, double t, Rng& rng,
                               const OscillationOptions& opts) {
  const double y = std::normal_distribution<double>(std::sin(omega * t), opts.noise_sd)(rng);
  return {{y}, oscillation_summary(y)};
}

SimOutput simulate_death(double b, double tau, Rng& rng, const DeathOptions& opts) {
  const int n = opts.population;
  const double p_inf = -std::expm1(-b * opts.dt);
  const int steps = steps_to(tau, opts.dt);
  int infected = 0;
  for (int s = 0; s < steps && infected < n; ++s) {
    infected += binomial(n - infected, p_inf, rng);
  }
  return {{static_cast<double>(infected)}, death_summary(infected)};
}

SimOutput simulate_sir(double beta, double gamma, double tau, Rng& rng,
                       const SirOptions& opts) {
  const int n = opts.population;
  int s = n - 1;
  int i = 1;
  int r = 0;
  const int steps = steps_to(tau, opts.dt);
  for (int step = 0; step < steps && i > 0; ++step) {
    const double p_inf = beta * static_cast<double>(i) / n;
    const int d_inf = binomial(s, p_inf, rng);
    const int d_rec = binomial(i, gamma, rng);
    s -= d_inf;
    i += d_inf - d_rec;
    r += d_rec;
  }
  return {{static_cast<double>(s), static_cast<double>(i), static_cast<double>(r)},
          sir_summary(i, r)};
}

namespace {

class CellLattice {
 public:
  CellLattice(const CellOptions& opts, Rng& rng) : opts_(opts), grid_(opts.rows * opts.cols, 0) {
    const int region = opts.initial_rows * opts.cols;
    if (opts.initial_cells > region || opts.initial_rows > opts.rows) {
      throw SimulationError("cell model: initial cells do not fit in the seeding rows");
    }
    std::vector<int> sites(region);
    std::iota(sites.begin(), sites.end(), 0);
    for (int k = 0; k < opts.initial_cells; ++k) {
      const int j = std::uniform_int_distribution<int>(k, region - 1)(rng);
      std::swap(sites[k], sites[j]);
      grid_[sites[k]] = 1;
      cells_.push_back(sites[k]);
    }
  }

  void step(double pm, double pp, Rng& rng) {
    std::shuffle(cells_.begin(), cells_.end(), rng);
    const std::size_t active = cells_.size();
    for (std::size_t c = 0; c < active; ++c) {
      if (uniform01(rng) < pm) {
        const int target = neighbour(cells_[c], rng);
        if (target >= 0 && !grid_[target]) {
          grid_[cells_[c]] = 0;
          grid_[target] = 1;
          cells_[c] = target;
        }
      }
      if (uniform01(rng) < pp) {
        const int target = neighbour(cells_[c], rng);
        if (target >= 0 && !grid_[target]) {
          grid_[target] = 1;
          cells_.push_back(target);
        }
      }
    }
  }

  const CellGrid& grid() const { return grid_; }
  int count() const { return static_cast<int>(cells_.size()); }

 private:
  // Uniform von Neumann neighbour, or -1 when the draw leaves the grid.
  int neighbour(int site, Rng& rng) const {
    const int r = site / opts_.cols;
    const int c = site % opts_.cols;
    switch (std::uniform_int_distribution<int>(0, 3)(rng)) {
      case 0: return r > 0 ? site - opts_.cols : -1;
      case 1: return r + 1 < opts_.rows ? site + opts_.cols : -1;
      case 2: return c > 0 ? site - 1 : -1;
      default: return c + 1 < opts_.cols ? site + 1 : -1;
    }
  }

  CellOptions opts_;
  CellGrid grid_;
  std::vector<int> cells_;
};

void check_frame(int frame, const CellOptions& opts) {
  if (frame < 1 || frame > opts.frames) {
    throw SimulationError("cell model: frame " + std::to_string(frame) + " outside 1.." +
                          std::to_string(opts.frames));
  }
}

}  // namespace

SimOutput simulate_cell(double pm, double pp, int frame, Rng& rng, const CellOptions& opts) {
  check_frame(frame, opts);
  CellLattice lattice(opts, rng);
  const CellGrid initial = lattice.grid();
  for (int s = 1; s < frame; ++s) lattice.step(pm, pp, rng);
  int hamming = 0;
  for (std::size_t k = 0; k < initial.size(); ++k) hamming += initial[k] != lattice.grid()[k];
  const int count = lattice.count();
  return {{static_cast<double>(hamming), static_cast<double>(count)},
          cell_summary(hamming, count)};
}

std::vector<CellGrid> simulate_cell_trajectory(double pm, double pp, int last_frame, Rng& rng,
                                               const CellOptions& opts) {
  check_frame(last_frame, opts);
  CellLattice lattice(opts, rng);
  std::vector<CellGrid> frames{lattice.grid()};
  for (int s = 1; s < last_frame; ++s) {
    lattice.step(pm, pp, rng);
    frames.push_back(lattice.grid());
  }
  return frames;
}

double truncated_normal_mean(double mu, double sd) {
  const double alpha = -mu / sd;
  const double pdf = std::exp(-0.5 * alpha * alpha) / std::sqrt(2.0 * std::numbers::pi);
  const double tail = 0.5 * std::erfc(alpha / std::sqrt(2.0));  // 1 - Phi(alpha)
  return mu + sd * pdf / tail;
}

double Model::log_likelihood(const Observation&, const Eigen::Ref<const Eigen::VectorXd>&,
                             double) const {
  throw std::logic_error(to_string(spec().kind) + " model has no tractable likelihood");
}

namespace {

ParamBounds make_bounds(std::initializer_list<double> lo, std::initializer_list<double> hi) {
  ParamBounds b;
  b.lower = Eigen::Map<const Eigen::VectorXd>(lo.begin(), static_cast<Eigen::Index>(lo.size()));
  b.upper = Eigen::Map<const Eigen::VectorXd>(hi.begin(), static_cast<Eigen::Index>(hi.size()));
  return b;
}

void expect_size(const Observation& y, std::size_t n, const char* model) {
  if (y.size() != n) {
    throw ObservationError(std::string(model) + " observation needs " + std::to_string(n) +
                           " value(s), got " + std::to_string(y.size()));
  }
}

class OscillationModel final : public Model {
 public:
  explicit OscillationModel(OscillationOptions opts)
      : Model({ModelKind::oscillation, {0.0, 2.0 * std::numbers::pi, false}, 1,
               make_bounds({0.0}, {std::numbers::pi}), 3, {"omega"}}),
        opts_(opts) {}

  Eigen::MatrixXd sample_prior(int n, Rng& rng) const override {
    std::uniform_real_distribution<double> u(0.0, std::numbers::pi);
    Eigen::MatrixXd out(n, 1);
    for (int i = 0; i < n; ++i) out(i, 0) = u(rng);
    return out;
  }

  SimOutput simulate(const Eigen::Ref<const Eigen::VectorXd>& theta, double design,
                     Rng& rng) const override {
    return simulate_oscillation(theta[0], design, rng, opts_);
  }

  void validate(const Observation& y) const override {
    expect_size(y, 1, "oscillation");
    if (!std::isfinite(y[0])) throw ObservationError("oscillation observation must be finite");
  }

  Eigen::VectorXd summarize(const Observation& y) const override {
    validate(y);
    return oscillation_summary(y[0]);
  }

  bool has_likelihood() const override { return true; }

  double log_likelihood(const Observation& y, const Eigen::Ref<const Eigen::VectorXd>& theta,
                        double design) const override {
    const double z = (y[0] - std::sin(theta[0] * design)) / opts_.noise_sd;
    return -0.5 * z * z - std::log(opts_.noise_sd) - 0.5 * std::log(2.0 * std::numbers::pi);
  }

 private:
  OscillationOptions opts_;
};

class DeathModel final : public Model {
 public:
  explicit DeathModel(DeathOptions opts)
      : Model({ModelKind::death, {0.0, opts.t_max, false}, 1,
               make_bounds({0.0}, {std::numeric_limits<double>::infinity()}), 3, {"b"}}),
        opts_(opts) {}

  Eigen::MatrixXd sample_prior(int n, Rng& rng) const override {
    std::normal_distribution<double> normal(opts_.prior_mean, opts_.prior_sd);
    Eigen::MatrixXd out(n, 1);
    for (int i = 0; i < n; ++i) {
      double b;
      do {
        b = normal(rng);
      } while (b <= 0.0);
      out(i, 0) = b;
    }
    return out;
  }

  SimOutput simulate(const Eigen::Ref<const Eigen::VectorXd>& theta, double design,
                     Rng& rng) const override {
    return simulate_death(theta[0], design, rng, opts_);
  }

  void validate(const Observation& y) const override {
    expect_size(y, 1, "death");
    if (!is_integral(y[0]) || y[0] < 0 || y[0] > opts_.population) {
      throw ObservationError("death observation must be an integer in [0, " +
                             std::to_string(opts_.population) + "]");
    }
  }

  Eigen::VectorXd summarize(const Observation& y) const override {
    validate(y);
    return death_summary(static_cast<int>(y[0]));
  }

  bool has_likelihood() const override { return true; }

  // S(tau) = N - I(tau) ~ Bin(N, exp(-b * tau)) with tau on the simulator's step grid.
  double log_likelihood(const Observation& y, const Eigen::Ref<const Eigen::VectorXd>& theta,
                        double design) const override {
    const int n = opts_.population;
    const int susceptible = n - static_cast<int>(y[0]);
    const double elapsed = steps_to(design, opts_.dt) * opts_.dt;
    const double log_q = -theta[0] * elapsed;
    const double log_1mq = std::log(-std::expm1(log_q));
    return log_binomial_pmf(susceptible, n, log_q, log_1mq);
  }

 private:
  DeathOptions opts_;
};

class SirModel final : public Model {
 public:
  explicit SirModel(SirOptions opts)
      : Model({ModelKind::sir, {0.0, opts.t_max, false}, 2,
               make_bounds({0.0, 0.0}, {opts.prior_hi, opts.prior_hi}), 9, {"beta", "gamma"}}),
        opts_(opts) {}

  Eigen::MatrixXd sample_prior(int n, Rng& rng) const override {
    std::uniform_real_distribution<double> u(0.0, opts_.prior_hi);
    Eigen::MatrixXd out(n, 2);
    for (int i = 0; i < n; ++i) {
      out(i, 0) = u(rng);
      out(i, 1) = u(rng);
    }
    return out;
  }

  SimOutput simulate(const Eigen::Ref<const Eigen::VectorXd>& theta, double design,
                     Rng& rng) const override {
    return simulate_sir(theta[0], theta[1], design, rng, opts_);
  }

  void validate(const Observation& y) const override {
    expect_size(y, 3, "sir");
    double total = 0.0;
    for (double v : y) {
      if (!is_integral(v) || v < 0) {
        throw ObservationError("sir populations must be non-negative integers");
      }
      total += v;
    }
    if (total != opts_.population) {
      throw ObservationError("sir populations must sum to " + std::to_string(opts_.population));
    }
  }

  Eigen::VectorXd summarize(const Observation& y) const override {
    validate(y);
    return sir_summary(static_cast<int>(y[1]), static_cast<int>(y[2]));
  }

 private:
  SirOptions opts_;
};

class CellModel final : public Model {
 public:
  explicit CellModel(CellOptions opts)
      : Model({ModelKind::cell, {1.0, static_cast<double>(opts.frames), true}, 2,
               make_bounds({0.0, 0.0}, {opts.pm_hi, opts.pp_hi}), 2, {"pm", "pp"}}),
        opts_(opts) {}

  Eigen::MatrixXd sample_prior(int n, Rng& rng) const override {
    std::uniform_real_distribution<double> um(0.0, opts_.pm_hi);
    std::uniform_real_distribution<double> up(0.0, opts_.pp_hi);
    Eigen::MatrixXd out(n, 2);
    for (int i = 0; i < n; ++i) {
      out(i, 0) = um(rng);
      out(i, 1) = up(rng);
    }
    return out;
  }

  SimOutput simulate(const Eigen::Ref<const Eigen::VectorXd>& theta, double design,
                     Rng& rng) const override {
    return simulate_cell(theta[0], theta[1], static_cast<int>(std::lround(design)), rng, opts_);
  }

  void validate(const Observation& y) const override {
    expect_size(y, 2, "cell");
    const double sites = static_cast<double>(opts_.rows) * opts_.cols;
    if (!is_integral(y[0]) || y[0] < 0 || y[0] > sites) {
      throw ObservationError("cell Hamming distance must be an integer in [0, grid size]");
    }
    if (!is_integral(y[1]) || y[1] < opts_.initial_cells || y[1] > sites) {
      throw ObservationError("cell count must be an integer >= " +
                             std::to_string(opts_.initial_cells));
    }
  }

  Eigen::VectorXd summarize(const Observation& y) const override {
    validate(y);
    return cell_summary(static_cast<int>(y[0]), static_cast<int>(y[1]));
  }

 private:
  CellOptions opts_;
};

}  // namespace

std::unique_ptr<Model> make_model(ModelKind kind, const ModelOptions& opts) {
  switch (kind) {
    case ModelKind::oscillation: return std::make_unique<OscillationModel>(opts.oscillation);
    case ModelKind::death: return std::make_unique<DeathModel>(opts.death);
    case ModelKind::sir: return std::make_unique<SirModel>(opts.sir);
    case ModelKind::cell: return std::make_unique<CellModel>(opts.cell);
  }
  throw std::invalid_argument("unknown model kind");
}

}  // namespace seqbed
