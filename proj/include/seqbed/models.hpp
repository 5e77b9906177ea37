#pragma once

#include <Eigen/Dense>

#include <memory>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "seqbed/rng.hpp"

namespace seqbed {

enum class ModelKind { oscillation, death, sir, cell };

std::string to_string(ModelKind kind);
ModelKind parse_model_kind(std::string_view name);

/// A one-dimensional design space: either the interval [lo, hi] or the
/// integers {lo, ..., hi}.
struct DesignDomain {
  double lo = 0.0;
  double hi = 1.0;
  bool discrete = false;

  double width() const { return hi - lo; }
  bool contains(double d) const;
  /// Clamps into the domain and, for discrete domains, rounds to the nearest member.
  double snap(double d) const;
};

/// Axis-aligned support of the prior. Infinite entries mean unbounded.
struct ParamBounds {
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;

  bool contains(const Eigen::Ref<const Eigen::VectorXd>& theta) const;
};

struct ModelSpec {
  ModelKind kind = ModelKind::oscillation;
  DesignDomain design_domain;
  int param_dim = 1;
  ParamBounds bounds;
  int summary_dim = 1;
  std::vector<std::string> param_names;
};

/// Raw observation as a flat vector: oscillation [y], death [I],
/// sir [S, I, R], cell [hamming, count].
using Observation = std::vector<double>;

struct SimOutput {
  Observation raw;
  Eigen::VectorXd summary;
};

class SimulationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ObservationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Tunable constants of the four simulators. Defaults reproduce the published
// case studies; the cell defaults are full scale.
struct OscillationOptions {
  double noise_sd = 0.1;
};

struct DeathOptions {
  int population = 50;
  double dt = 0.01;
  double t_max = 4.0;
  double prior_mean = 1.0;
  double prior_sd = 1.0;
};

struct SirOptions {
  int population = 50;
  double dt = 0.01;
  double t_max = 10.0;
  double prior_hi = 0.5;
};

struct CellOptions {
  int rows = 27;
  int cols = 36;
  int initial_cells = 110;
  int initial_rows = 10;  // cells start in the top rows of the grid
  int frames = 145;
  double pm_hi = 1.0;
  double pp_hi = 0.005;
};

struct ModelOptions {
  OscillationOptions oscillation;
  DeathOptions death;
  SirOptions sir;
  CellOptions cell;
};

SimOutput simulate_oscillation(double omega, double t, Rng& rng,
                               const OscillationOptions& opts = {});
SimOutput simulate_death(double b, double tau, Rng& rng, const DeathOptions& opts = {});
SimOutput simulate_sir(double beta, double gamma, double tau, Rng& rng,
                       const SirOptions& opts = {});
SimOutput simulate_cell(double pm, double pp, int frame, Rng& rng,
                        const CellOptions& opts = {});

/// Occupancy grid of the lattice cell model, row-major, 1 = occupied.
using CellGrid = std::vector<unsigned char>;

/// All frames 1..last_frame of one cell-model trajectory (frame 1 is the
/// initial placement).
std::vector<CellGrid> simulate_cell_trajectory(double pm, double pp, int last_frame, Rng& rng,
                                               const CellOptions& opts = {});

Eigen::VectorXd oscillation_summary(double y);
Eigen::VectorXd death_summary(int infected);
Eigen::VectorXd sir_summary(int infected, int recovered);
Eigen::VectorXd cell_summary(int hamming, int count);

/// Number of whole simulator steps needed to reach time tau.
int steps_to(double tau, double dt);

/// An implicit model: prior sampler, stochastic simulator and fixed summary
/// statistics. Implementations are immutable and safe to share across threads.
class Model {
 public:
  virtual ~Model() = default;

  const ModelSpec& spec() const { return spec_; }

  /// n x param_dim matrix of i.i.d. prior draws.
  virtual Eigen::MatrixXd sample_prior(int n, Rng& rng) const = 0;
  virtual SimOutput simulate(const Eigen::Ref<const Eigen::VectorXd>& theta, double design,
                             Rng& rng) const = 0;

  /// Checks a raw observation against the model's observation schema.
  virtual void validate(const Observation& y) const = 0;
  virtual Eigen::VectorXd summarize(const Observation& y) const = 0;

  virtual bool has_likelihood() const { return false; }
  virtual double log_likelihood(const Observation& y,
                                const Eigen::Ref<const Eigen::VectorXd>& theta,
                                double design) const;

 protected:
  explicit Model(ModelSpec spec) : spec_(std::move(spec)) {}

 private:
  ModelSpec spec_;
};

std::unique_ptr<Model> make_model(ModelKind kind, const ModelOptions& opts = {});

/// Mean of Normal(mu, sd) truncated to (0, inf).
double truncated_normal_mean(double mu, double sd);

}  // namespace seqbed
