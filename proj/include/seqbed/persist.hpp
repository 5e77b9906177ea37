#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "seqbed/engine.hpp"

namespace seqbed {

inline constexpr int kSchemaVersion = 1;

class PersistError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// JSON encodings. Non-finite numbers are written as null: log-weights decode
// null as -inf, lower/upper bounds as -inf/+inf.
nlohmann::json to_json(const ParticleSet& particles);
ParticleSet particles_from_json(const nlohmann::json& j);
nlohmann::json to_json(const RatioModel& model);
RatioModel ratio_model_from_json(const nlohmann::json& j);
nlohmann::json to_json(const IterationRecord& record);
IterationRecord record_from_json(const nlohmann::json& j);
nlohmann::json to_json(const PosteriorSummary& summary);

/// The whole run state as one document. Serialization is deterministic, so
/// two identical runs produce identical text.
nlohmann::json state_to_json(const RunState& state);
RunState state_from_json(const nlohmann::json& j);

/// Writes manifest.json, iteration_000.json (prior), iteration_KKK.json per
/// completed iteration, pending.json while awaiting an observation, and the
/// surface_kKKK.csv / bo_trace_kKKK.csv side-files. Files are replaced
/// atomically.
void save_state(const RunState& state, const std::filesystem::path& dir);
RunState load_state(const std::filesystem::path& dir);

std::string surface_csv(const std::vector<SurfacePoint>& points);
std::string bo_trace_csv(const BoTrace& trace);

/// Writes text to path through a temporary file and a rename.
void write_file(const std::filesystem::path& path, const std::string& text);
nlohmann::json read_json(const std::filesystem::path& path);

}  // namespace seqbed
