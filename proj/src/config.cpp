#include "seqbed/config.hpp"

#include <fstream>
#include <set>

namespace seqbed {

using nlohmann::json;

namespace {

class Section {
 public:
  Section(const json& doc, std::string path) : doc_(doc), path_(std::move(path)) {
    if (!doc_.is_object()) throw ConfigError(path_ + " must be an object");
  }

  template <typename T>
  bool get(const std::string& key, T& out) {
    used_.insert(key);
    const auto it = doc_.find(key);
    if (it == doc_.end() || it->is_null()) return false;
    try {
      out = it->get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(path_ + "." + key + ": " + e.what());
    }
    return true;
  }

  const json* child(const std::string& key) {
    used_.insert(key);
    const auto it = doc_.find(key);
    return it == doc_.end() || it->is_null() ? nullptr : &*it;
  }

  void finish() const {
    for (const auto& item : doc_.items()) {
      if (!used_.contains(item.key())) throw ConfigError("unknown config key " + path_ + "." + item.key());
    }
  }

  const std::string& path() const { return path_; }

 private:
  const json& doc_;
  std::string path_;
  std::set<std::string> used_;
};

void parse_model_options(Section& s, RunConfig& c) {
  switch (c.model) {
    case ModelKind::oscillation:
      s.get("noise_sd", c.model_options.oscillation.noise_sd);
      break;
    case ModelKind::death: {
      DeathOptions& o = c.model_options.death;
      s.get("population", o.population);
      s.get("dt", o.dt);
      s.get("t_max", o.t_max);
      s.get("prior_mean", o.prior_mean);
      s.get("prior_sd", o.prior_sd);
      break;
    }
    case ModelKind::sir: {
      SirOptions& o = c.model_options.sir;
      s.get("population", o.population);
      s.get("dt", o.dt);
      s.get("t_max", o.t_max);
      s.get("prior_hi", o.prior_hi);
      break;
    }
    case ModelKind::cell: {
      CellOptions& o = c.model_options.cell;
      s.get("rows", o.rows);
      s.get("cols", o.cols);
      s.get("initial_cells", o.initial_cells);
      s.get("initial_rows", o.initial_rows);
      s.get("frames", o.frames);
      s.get("pm_hi", o.pm_hi);
      s.get("pp_hi", o.pp_hi);
      break;
    }
  }
  s.finish();
}

json model_options_json(const RunConfig& c) {
  json j;
  j["name"] = to_string(c.model);
  switch (c.model) {
    case ModelKind::oscillation:
      j["noise_sd"] = c.model_options.oscillation.noise_sd;
      break;
    case ModelKind::death: {
      const DeathOptions& o = c.model_options.death;
      j["population"] = o.population;
      j["dt"] = o.dt;
      j["t_max"] = o.t_max;
      j["prior_mean"] = o.prior_mean;
      j["prior_sd"] = o.prior_sd;
      break;
    }
    case ModelKind::sir: {
      const SirOptions& o = c.model_options.sir;
      j["population"] = o.population;
      j["dt"] = o.dt;
      j["t_max"] = o.t_max;
      j["prior_hi"] = o.prior_hi;
      break;
    }
    case ModelKind::cell: {
      const CellOptions& o = c.model_options.cell;
      j["rows"] = o.rows;
      j["cols"] = o.cols;
      j["initial_cells"] = o.initial_cells;
      j["initial_rows"] = o.initial_rows;
      j["frames"] = o.frames;
      j["pm_hi"] = o.pm_hi;
      j["pp_hi"] = o.pp_hi;
      break;
    }
  }
  return j;
}

BoConfig model_bo_defaults(ModelKind model, const ModelOptions& options) {
  BoConfig bo = default_bo_config(make_model(model, options)->spec().design_domain);
  // five starts on [0, 10] are two time units apart and straddle the narrow
  // early-time MI peak; ten keep the spacing close to the death model's
  if (model == ModelKind::sir) bo.n_init = 10;
  return bo;
}

}  // namespace

RunConfig make_config(ModelKind model) {
  RunConfig c;
  c.model = model;
  switch (model) {
    case ModelKind::oscillation: c.oracle.theta_true = Eigen::VectorXd::Constant(1, 0.5); break;
    case ModelKind::death: c.oracle.theta_true = Eigen::VectorXd::Constant(1, 1.5); break;
    case ModelKind::sir: c.oracle.theta_true = Eigen::Vector2d(0.15, 0.05); break;
    case ModelKind::cell:
      c.oracle.theta_true = Eigen::Vector2d(0.35, 0.001);
      c.particles = 300;
      c.utility_draws = 300;
      break;
  }
  c.bo = model_bo_defaults(model, c.model_options);
  return c;
}

RunConfig parse_config(const json& doc) {
  Section root(doc, "config");
  const json* model_node = root.child("model");
  if (!model_node) throw ConfigError("config.model is required");

  std::string name;
  if (model_node->is_string()) {
    name = model_node->get<std::string>();
  } else if (model_node->is_object() && model_node->contains("name") &&
             (*model_node)["name"].is_string()) {
    name = (*model_node)["name"].get<std::string>();
  } else {
    throw ConfigError("config.model must be a model name or an object with a name");
  }
  RunConfig c;
  try {
    c = make_config(parse_model_kind(name));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (model_node->is_object()) {
    Section m(*model_node, "config.model");
    std::string ignored;
    m.get("name", ignored);
    parse_model_options(m, c);
  }
  // domain-dependent defaults follow the (possibly overridden) model options
  c.bo = model_bo_defaults(c.model, c.model_options);

  const bool particles_set = root.get("particles", c.particles);
  if (!root.get("utility_draws", c.utility_draws) && particles_set) c.utility_draws = c.particles;
  root.get("iterations", c.iterations);
  std::string utility;
  if (root.get("utility", utility)) {
    try {
      c.utility = parse_utility_kind(utility);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
  }
  root.get("ess_fraction", c.ess_fraction);
  root.get("seed", c.seed);
  int threads = -1;
  if (root.get("threads", threads)) c.lfire.threads = threads;

  if (const json* node = root.child("oracle")) {
    Section s(*node, "config.oracle");
    std::string kind;
    if (s.get("kind", kind)) {
      if (kind == "simulated") {
        c.oracle.kind = OracleKind::simulated;
      } else if (kind == "interactive") {
        c.oracle.kind = OracleKind::interactive;
      } else {
        throw ConfigError("config.oracle.kind must be 'simulated' or 'interactive'");
      }
    }
    std::vector<double> theta;
    if (s.get("theta_true", theta)) {
      c.oracle.theta_true = Eigen::Map<Eigen::VectorXd>(theta.data(), static_cast<Eigen::Index>(theta.size()));
    }
    s.finish();
  }
  if (const json* node = root.child("bo")) {
    Section s(*node, "config.bo");
    s.get("budget", c.bo.budget);
    s.get("n_init", c.bo.n_init);
    s.get("seeds", c.bo.n_seeds);
    s.get("grid_points", c.bo.grid_points);
    s.get("duplicate_tol", c.bo.duplicate_tol);
    if (const json* gp = s.child("gp")) {
      Section g(*gp, "config.bo.gp");
      g.get("restarts", c.bo.gp.restarts);
      g.get("min_lengthscale", c.bo.gp.min_lengthscale);
      g.get("max_lengthscale", c.bo.gp.max_lengthscale);
      g.get("min_signal_var", c.bo.gp.min_signal_var);
      g.get("max_signal_var", c.bo.gp.max_signal_var);
      g.get("noise_floor", c.bo.gp.noise_floor);
      g.get("max_noise_var", c.bo.gp.max_noise_var);
      g.get("max_iter", c.bo.gp.max_iter);
      g.finish();
    }
    s.finish();
  }
  if (const json* node = root.child("lfire")) {
    Section s(*node, "config.lfire");
    s.get("n_like", c.lfire.n_like);
    s.get("n_marginal", c.lfire.n_marginal);
    s.get("lambda", c.lfire.lambda);
    s.get("cross_validate", c.lfire.cross_validate);
    s.get("max_iter", c.lfire.max_iter);
    s.get("tol", c.lfire.tol);
    s.finish();
  }
  if (const json* node = root.child("bd_opt")) {
    Section s(*node, "config.bd_opt");
    std::string agg;
    if (s.get("aggregation", agg)) {
      if (agg == "median") {
        c.bd_opt.aggregation = Aggregation::median;
      } else if (agg == "mean") {
        c.bd_opt.aggregation = Aggregation::mean;
      } else {
        throw ConfigError("config.bd_opt.aggregation must be 'median' or 'mean'");
      }
    }
    s.get("precision_cap", c.bd_opt.precision_cap);
    s.finish();
  }
  if (const json* node = root.child("resample")) {
    Section s(*node, "config.resample");
    s.get("max_attempts", c.resample.max_attempts);
    s.get("degenerate_sigma", c.resample.degenerate_sigma);
    s.finish();
  }
  if (const json* node = root.child("posterior")) {
    Section s(*node, "config.posterior");
    s.get("samples", c.posterior.samples);
    s.get("grid_points", c.posterior.grid_points);
    s.get("joint_grid_points", c.posterior.joint_grid_points);
    s.finish();
  }
  root.finish();
  validate_config(c);
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  json doc;
  try {
    doc = json::parse(in, nullptr, true, true);  // comments allowed
  } catch (const json::parse_error& e) {
    throw ConfigError("config file " + path.string() + ": " + e.what());
  }
  return parse_config(doc);
}

json config_to_json(const RunConfig& c) {
  json j;
  j["model"] = model_options_json(c);
  j["particles"] = c.particles;
  j["utility_draws"] = c.utility_draws;
  j["iterations"] = c.iterations;
  j["utility"] = to_string(c.utility);
  j["ess_fraction"] = c.ess_fraction;
  j["seed"] = c.seed;
  j["threads"] = c.lfire.threads;
  j["oracle"] = {{"kind", c.oracle.kind == OracleKind::simulated ? "simulated" : "interactive"},
                 {"theta_true", std::vector<double>(c.oracle.theta_true.data(),
                                                    c.oracle.theta_true.data() + c.oracle.theta_true.size())}};
  j["bo"] = {{"budget", c.bo.budget},
             {"n_init", c.bo.n_init},
             {"seeds", c.bo.n_seeds},
             {"grid_points", c.bo.grid_points},
             {"duplicate_tol", c.bo.duplicate_tol},
             {"gp",
              {{"restarts", c.bo.gp.restarts},
               {"min_lengthscale", c.bo.gp.min_lengthscale},
               {"max_lengthscale", c.bo.gp.max_lengthscale},
               {"min_signal_var", c.bo.gp.min_signal_var},
               {"max_signal_var", c.bo.gp.max_signal_var},
               {"noise_floor", c.bo.gp.noise_floor},
               {"max_noise_var", c.bo.gp.max_noise_var},
               {"max_iter", c.bo.gp.max_iter}}}};
  j["lfire"] = {{"n_like", c.lfire.n_like},         {"n_marginal", c.lfire.n_marginal},
                {"lambda", c.lfire.lambda},         {"cross_validate", c.lfire.cross_validate},
                {"max_iter", c.lfire.max_iter},     {"tol", c.lfire.tol}};
  j["bd_opt"] = {{"aggregation", c.bd_opt.aggregation == Aggregation::median ? "median" : "mean"},
                 {"precision_cap", c.bd_opt.precision_cap}};
  j["resample"] = {{"max_attempts", c.resample.max_attempts},
                   {"degenerate_sigma", c.resample.degenerate_sigma}};
  j["posterior"] = {{"samples", c.posterior.samples},
                    {"grid_points", c.posterior.grid_points},
                    {"joint_grid_points", c.posterior.joint_grid_points}};
  return j;
}

void validate_config(const RunConfig& c) {
  const auto require = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
  };
  require(c.iterations >= 1, "iterations must be >= 1");
  require(c.particles >= 2, "particles must be >= 2");
  require(c.utility_draws >= 2, "utility_draws must be >= 2");
  require(c.ess_fraction > 0.0 && c.ess_fraction <= 1.0, "ess_fraction must lie in (0, 1]");
  require(c.bo.budget >= 1, "bo.budget must be >= 1");
  require(c.bo.n_init >= 1, "bo.n_init must be >= 1");
  require(c.bo.n_seeds >= 1, "bo.seeds must be >= 1");
  require(c.bo.grid_points >= 2, "bo.grid_points must be >= 2");
  require(c.lfire.n_like >= 1 && c.lfire.n_marginal >= 1, "lfire sample counts must be >= 1");
  require(c.lfire.max_iter >= 1, "lfire.max_iter must be >= 1");
  require(c.bd_opt.precision_cap > 0.0, "bd_opt.precision_cap must be positive");
  require(c.resample.max_attempts >= 1, "resample.max_attempts must be >= 1");
  require(c.posterior.samples >= 2, "posterior.samples must be >= 2");
  require(c.posterior.grid_points >= 2, "posterior.grid_points must be >= 2");
  require(c.posterior.joint_grid_points >= 2, "posterior.joint_grid_points must be >= 2");

  const auto model = make_model(c);
  const ModelSpec& spec = model->spec();
  require(c.oracle.theta_true.size() == spec.param_dim,
          "oracle.theta_true must have " + std::to_string(spec.param_dim) + " entries");
  require(spec.bounds.contains(c.oracle.theta_true), "oracle.theta_true lies outside the prior support");
  switch (c.model) {
    case ModelKind::oscillation: require(c.model_options.oscillation.noise_sd > 0.0, "noise_sd must be positive"); break;
    case ModelKind::death: {
      const DeathOptions& o = c.model_options.death;
      require(o.population >= 1 && o.dt > 0.0 && o.t_max > 0.0 && o.prior_sd > 0.0,
              "death options must be positive");
      break;
    }
    case ModelKind::sir: {
      const SirOptions& o = c.model_options.sir;
      require(o.population >= 2 && o.dt > 0.0 && o.t_max > 0.0 && o.prior_hi > 0.0,
              "sir options must be positive");
      break;
    }
    case ModelKind::cell: {
      const CellOptions& o = c.model_options.cell;
      require(o.rows >= 1 && o.cols >= 1 && o.frames >= 1, "cell grid and frames must be positive");
      require(o.initial_rows >= 1 && o.initial_rows <= o.rows, "cell initial_rows must lie in [1, rows]");
      require(o.initial_cells >= 0 && o.initial_cells <= o.initial_rows * o.cols,
              "cell initial_cells must fit in the initial rows");
      break;
    }
  }
}

std::unique_ptr<Model> make_model(const RunConfig& config) {
  return make_model(config.model, config.model_options);
}

}  // namespace seqbed
