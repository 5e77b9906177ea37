#include "seqbed/persist.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <limits>
#include <set>
#include <sstream>

namespace seqbed {

using nlohmann::json;

namespace {

json number(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

double number_from(const json& j, double null_value) {
  return j.is_null() ? null_value : j.get<double>();
}

json vec(const Eigen::VectorXd& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(number(v[i]));
  return out;
}

Eigen::VectorXd vec_from(const json& j, double null_value = std::numeric_limits<double>::quiet_NaN()) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    v[static_cast<Eigen::Index>(i)] = number_from(j[i], null_value);
  }
  return v;
}

json mat(const Eigen::MatrixXd& m) {
  json out = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) out.push_back(vec(m.row(r).transpose()));
  return out;
}

Eigen::MatrixXd mat_from(const json& j, Eigen::Index cols) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(j.size()), cols);
  for (std::size_t r = 0; r < j.size(); ++r) {
    if (static_cast<Eigen::Index>(j[r].size()) != cols) throw PersistError("ragged matrix in state file");
    m.row(static_cast<Eigen::Index>(r)) = vec_from(j[r]).transpose();
  }
  return m;
}

json event_json(const RunEvent& e) {
  return {{"k", e.k}, {"type", e.type}, {"message", e.message}, {"data", e.data}};
}

RunEvent event_from(const json& j) {
  return {j.at("k").get<int>(), j.at("type").get<std::string>(), j.at("message").get<std::string>(),
          j.at("data")};
}

json surface_point_json(const SurfacePoint& p) {
  return {{"design", p.design},       {"value", number(p.value)}, {"standard_error", number(p.standard_error)},
          {"n_dropped", p.n_dropped}, {"n_clipped", p.n_clipped}, {"n_capped", p.n_capped},
          {"seed", p.seed},           {"attempts", p.attempts},   {"ok", p.ok},
          {"error", p.error}};
}

SurfacePoint surface_point_from(const json& j) {
  SurfacePoint p;
  p.design = j.at("design").get<double>();
  p.value = number_from(j.at("value"), std::numeric_limits<double>::quiet_NaN());
  p.standard_error = number_from(j.at("standard_error"), std::numeric_limits<double>::quiet_NaN());
  p.n_dropped = j.at("n_dropped").get<int>();
  p.n_clipped = j.at("n_clipped").get<int>();
  p.n_capped = j.at("n_capped").get<int>();
  p.seed = j.at("seed").get<std::uint64_t>();
  p.attempts = j.at("attempts").get<int>();
  p.ok = j.at("ok").get<bool>();
  p.error = j.at("error").get<std::string>();
  return p;
}

std::string iteration_file(int k) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "iteration_%03d.json", k);
  return buf;
}

std::string side_file(const char* stem, int k) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%s_k%03d.csv", stem, k);
  return buf;
}

std::string dump(const json& j) { return j.dump(1) + "\n"; }

json manifest_json(const RunState& state) {
  json files = json::array({iteration_file(0)});
  for (const IterationRecord& r : state.history) files.push_back(iteration_file(r.k));
  json events = json::array();
  for (const RunEvent& e : state.events) events.push_back(event_json(e));
  return {{"schema_version", kSchemaVersion},
          {"config", config_to_json(state.config)},
          {"status", to_string(state.status)},
          {"k", state.k},
          {"revision", state.revision},
          {"events", events},
          {"iterations", files},
          {"pending", state.pending ? json("pending.json") : json(nullptr)}};
}

}  // namespace

json to_json(const ParticleSet& p) {
  return {{"iteration", p.iteration()},
          {"thetas", mat(p.thetas())},
          {"log_weights", vec(p.log_weights())},
          {"bounds", {{"lower", vec(p.bounds().lower)}, {"upper", vec(p.bounds().upper)}}}};
}

ParticleSet particles_from_json(const json& j) {
  ParamBounds bounds;
  bounds.lower = vec_from(j.at("bounds").at("lower"), -std::numeric_limits<double>::infinity());
  bounds.upper = vec_from(j.at("bounds").at("upper"), std::numeric_limits<double>::infinity());
  Eigen::MatrixXd thetas = mat_from(j.at("thetas"), bounds.lower.size());
  Eigen::VectorXd logw = vec_from(j.at("log_weights"), -std::numeric_limits<double>::infinity());
  return ParticleSet(std::move(thetas), std::move(logw), std::move(bounds),
                     j.at("iteration").get<int>());
}

json to_json(const RatioModel& m) {
  const FitDiagnostics& d = m.diagnostics;
  return {{"beta", vec(m.beta)},
          {"scaler", {{"mean", vec(m.scaler.mean)}, {"scale", vec(m.scaler.scale)}, {"active", m.scaler.active}}},
          {"theta", vec(m.theta)},
          {"design", m.design},
          {"diagnostics",
           {{"loss", number(d.loss)},
            {"lambda", d.lambda},
            {"n_like", d.n_like},
            {"n_marginal", d.n_marginal},
            {"iterations", d.iterations},
            {"grad_norm", number(d.grad_norm)},
            {"dropped_features", d.dropped_features}}}};
}

RatioModel ratio_model_from_json(const json& j) {
  RatioModel m;
  m.beta = vec_from(j.at("beta"));
  m.scaler.mean = vec_from(j.at("scaler").at("mean"));
  m.scaler.scale = vec_from(j.at("scaler").at("scale"));
  m.scaler.active = j.at("scaler").at("active").get<std::vector<bool>>();
  m.theta = vec_from(j.at("theta"));
  m.design = j.at("design").get<double>();
  const json& d = j.at("diagnostics");
  m.diagnostics.loss = number_from(d.at("loss"), std::numeric_limits<double>::quiet_NaN());
  m.diagnostics.lambda = d.at("lambda").get<double>();
  m.diagnostics.n_like = d.at("n_like").get<int>();
  m.diagnostics.n_marginal = d.at("n_marginal").get<int>();
  m.diagnostics.iterations = d.at("iterations").get<int>();
  m.diagnostics.grad_norm = number_from(d.at("grad_norm"), std::numeric_limits<double>::quiet_NaN());
  m.diagnostics.dropped_features = d.at("dropped_features").get<std::vector<int>>();
  return m;
}

json to_json(const IterationRecord& r) {
  json surface = json::array();
  for (const SurfacePoint& p : r.surface) surface.push_back(surface_point_json(p));
  json models = json::array();
  for (const RatioModel& m : r.ratio_models) models.push_back(to_json(m));
  const BoTrace& t = r.bo;
  return {{"k", r.k},
          {"ess_before", r.ess_before},
          {"resampled", r.resampled},
          {"resample",
           {{"delta", r.resample_report.delta},
            {"sigma", r.resample_report.sigma},
            {"fallbacks", r.resample_report.fallbacks},
            {"rejections", r.resample_report.rejections}}},
          {"utility_draws", r.utility_draws},
          {"design", r.design},
          {"evaluations", surface},
          {"bo",
           {{"log", t.log},
            {"grid", vec(t.grid)},
            {"gp_mean", vec(t.mean)},
            {"gp_variance", vec(t.variance)},
            {"d_star", t.d_star},
            {"raw_best_design", t.raw_best_design},
            {"raw_best_value", t.raw_best_value},
            {"hyperparams",
             {{"lengthscale", t.hyperparams.lengthscale},
              {"signal_var", t.hyperparams.signal_var},
              {"noise_var", t.hyperparams.noise_var}}}}},
          {"observation", vec(Eigen::Map<const Eigen::VectorXd>(r.observation.data(),
                                                                 static_cast<Eigen::Index>(r.observation.size())))},
          {"observed_summary", vec(r.observed_summary)},
          {"zeroed", r.zeroed},
          {"ratio_models", models},
          {"particles", to_json(r.particles)}};
}

IterationRecord record_from_json(const json& j) {
  IterationRecord r;
  r.k = j.at("k").get<int>();
  r.ess_before = j.at("ess_before").get<double>();
  r.resampled = j.at("resampled").get<bool>();
  const json& rs = j.at("resample");
  r.resample_report.delta = rs.at("delta").get<double>();
  r.resample_report.sigma = rs.at("sigma").get<double>();
  r.resample_report.fallbacks = rs.at("fallbacks").get<int>();
  r.resample_report.rejections = rs.at("rejections").get<int>();
  r.utility_draws = j.at("utility_draws").get<int>();
  r.design = j.at("design").get<double>();
  for (const json& p : j.at("evaluations")) {
    SurfacePoint sp = surface_point_from(p);
    r.bo.evaluations.push_back({sp.design, sp.value, sp.seed, sp.attempts, sp.ok, sp.error});
    r.surface.push_back(std::move(sp));
  }
  const json& bo = j.at("bo");
  r.bo.log = bo.at("log").get<std::vector<std::string>>();
  r.bo.grid = vec_from(bo.at("grid"));
  r.bo.mean = vec_from(bo.at("gp_mean"));
  r.bo.variance = vec_from(bo.at("gp_variance"));
  r.bo.d_star = bo.at("d_star").get<double>();
  r.bo.raw_best_design = bo.at("raw_best_design").get<double>();
  r.bo.raw_best_value = bo.at("raw_best_value").get<double>();
  r.bo.hyperparams.lengthscale = bo.at("hyperparams").at("lengthscale").get<double>();
  r.bo.hyperparams.signal_var = bo.at("hyperparams").at("signal_var").get<double>();
  r.bo.hyperparams.noise_var = bo.at("hyperparams").at("noise_var").get<double>();
  const Eigen::VectorXd y = vec_from(j.at("observation"));
  r.observation.assign(y.data(), y.data() + y.size());
  r.observed_summary = vec_from(j.at("observed_summary"));
  r.zeroed = j.at("zeroed").get<int>();
  for (const json& m : j.at("ratio_models")) r.ratio_models.push_back(ratio_model_from_json(m));
  r.particles = particles_from_json(j.at("particles"));
  return r;
}

json to_json(const PosteriorSummary& s) {
  json marginals = json::array();
  for (const MarginalSummary& m : s.marginals) {
    json region = json::array();
    for (const Interval& iv : m.hpd_region) region.push_back({iv.lo, iv.hi});
    marginals.push_back({{"name", m.name},
                         {"mean", m.mean},
                         {"hpdi", {m.hpdi.lo, m.hpdi.hi}},
                         {"hpd_region", region},
                         {"modes", m.modes},
                         {"bandwidth", m.kde.bandwidth},
                         {"grid", vec(m.kde.grid)},
                         {"density", vec(m.kde.density)}});
  }
  json out = {{"iteration", s.iteration}, {"samples", s.samples}, {"marginals", marginals}};
  if (s.joint) {
    out["joint"] = {{"x", vec(s.joint->x)}, {"y", vec(s.joint->y)}, {"density", mat(s.joint->density)}};
  } else {
    out["joint"] = nullptr;
  }
  return out;
}

json state_to_json(const RunState& state) {
  json j = manifest_json(state);
  j.erase("iterations");
  j["prior"] = to_json(state.prior);
  json history = json::array();
  for (const IterationRecord& r : state.history) history.push_back(to_json(r));
  j["history"] = history;
  j["pending"] = state.pending ? to_json(*state.pending) : json(nullptr);
  return j;
}

RunState state_from_json(const json& j) {
  const int version = j.at("schema_version").get<int>();
  if (version != kSchemaVersion) {
    throw PersistError("unsupported state schema version " + std::to_string(version));
  }
  RunState s;
  try {
    s.config = parse_config(j.at("config"));
    s.status = parse_run_status(j.at("status").get<std::string>());
    s.k = j.at("k").get<int>();
    s.revision = j.at("revision").get<std::uint64_t>();
    for (const json& e : j.at("events")) s.events.push_back(event_from(e));
    s.prior = particles_from_json(j.at("prior"));
    for (const json& r : j.at("history")) s.history.push_back(record_from_json(r));
    if (!j.at("pending").is_null()) s.pending = record_from_json(j.at("pending"));
  } catch (const json::exception& e) {
    throw PersistError(std::string("malformed state: ") + e.what());
  }
  if (static_cast<int>(s.history.size()) != s.k) {
    throw PersistError("state history length does not match k");
  }
  if (s.pending.has_value() != (s.status == RunStatus::awaiting_observation)) {
    throw PersistError("pending iteration does not match the run status");
  }
  s.particles = s.history.empty() ? s.prior : s.history.back().particles;
  return s;
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw PersistError("cannot write " + tmp.string());
    out << text;
    if (!out) throw PersistError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

json read_json(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw PersistError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw PersistError(path.string() + ": " + e.what());
  }
}

std::string surface_csv(const std::vector<SurfacePoint>& points) {
  std::ostringstream out;
  out << std::setprecision(17);
  out << "design,value,standard_error,n_dropped,n_clipped,n_capped,seed,attempts,ok\n";
  for (const SurfacePoint& p : points) {
    out << p.design << ',';
    if (p.ok) out << p.value << ',' << p.standard_error;
    else out << ',';
    out << ',' << p.n_dropped << ',' << p.n_clipped << ',' << p.n_capped << ',' << p.seed << ','
        << p.attempts << ',' << (p.ok ? 1 : 0) << '\n';
  }
  return out.str();
}

std::string bo_trace_csv(const BoTrace& trace) {
  std::ostringstream out;
  out << std::setprecision(17);
  out << "design,gp_mean,gp_variance\n";
  for (Eigen::Index i = 0; i < trace.grid.size(); ++i) {
    out << trace.grid[i] << ',' << trace.mean[i] << ',' << trace.variance[i] << '\n';
  }
  return out.str();
}

void save_state(const RunState& state, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_file(dir / iteration_file(0), dump({{"k", 0}, {"particles", to_json(state.prior)}}));
  const auto write_record = [&](const IterationRecord& r, const std::string& name) {
    write_file(dir / name, dump(to_json(r)));
    write_file(dir / side_file("surface", r.k), surface_csv(r.surface));
    write_file(dir / side_file("bo_trace", r.k), bo_trace_csv(r.bo));
  };
  std::set<std::string> keep{"manifest.json", iteration_file(0)};
  for (const IterationRecord& r : state.history) {
    write_record(r, iteration_file(r.k));
    keep.insert({iteration_file(r.k), side_file("surface", r.k), side_file("bo_trace", r.k)});
  }
  if (state.pending) {
    write_record(*state.pending, "pending.json");
    const int k = state.pending->k;
    keep.insert({"pending.json", side_file("surface", k), side_file("bo_trace", k)});
  }
  // drop leftovers of an earlier campaign in the same directory
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    const bool ours = name == "pending.json" || name.starts_with("iteration_") ||
                      name.starts_with("surface_k") || name.starts_with("bo_trace_k");
    if (ours && !keep.contains(name)) std::filesystem::remove(entry.path());
  }
  // the manifest goes last: it is what makes the other files part of the run
  write_file(dir / "manifest.json", dump(manifest_json(state)));
}

RunState load_state(const std::filesystem::path& dir) {
  const json manifest = read_json(dir / "manifest.json");
  json doc = manifest;
  doc.erase("iterations");
  const json& files = manifest.at("iterations");
  if (files.empty()) throw PersistError("manifest lists no prior file");
  doc["prior"] = read_json(dir / files[0].get<std::string>()).at("particles");
  doc["history"] = json::array();
  for (std::size_t i = 1; i < files.size(); ++i) {
    doc["history"].push_back(read_json(dir / files[i].get<std::string>()));
  }
  doc["pending"] = manifest.at("pending").is_null()
                       ? json(nullptr)
                       : read_json(dir / manifest.at("pending").get<std::string>());
  return state_from_json(doc);
}

}  // namespace seqbed
