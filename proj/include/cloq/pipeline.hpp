#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "cloq/diagnostics.hpp"
#include "cloq/lowrank.hpp"
#include "cloq/ptq.hpp"
#include "cloq/tensor_store.hpp"

#include "json.hpp"

namespace cloq {

/// Full pipeline configuration. Serializes losslessly to/from JSON; CLI flags
/// override file values.
struct RunConfig {
  std::string input_bundle;
  std::string output_bundle;
  std::vector<std::string> layers;  // layer-id globs; empty selects all
  PtqConfig ptq;
  InitConfig init;
  int workers = 1;
  std::uint64_t seed = 0;  // reserved for stochastic fixtures; pipeline is deterministic
  std::string report_path;  // empty: "<output_bundle>.report.json"
  bool keep_going = false;
  bool emit_codes = false;
  bool quantize_only = false;

  static RunConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
  void validate() const;  // throws ConfigError
};

struct RunOutcome {
  RunReport report;
  std::vector<std::string> failed_layers;  // nonempty only with keep_going
};

/// Scans `*/W` entries into layer records; picks up `<id>/gram` or
/// `<id>/acts` companions. Throws if a layer carries both.
std::vector<LayerRecord> scan_layers(const TensorBundle& bundle);

/// `*` and `?` glob match on layer ids.
bool glob_match(std::string_view pattern, std::string_view name);
std::vector<LayerRecord> select_layers(const std::vector<LayerRecord>& records,
                                       const std::vector<std::string>& patterns);

/// Worker count after the CLOQ_WORKERS environment override.
int effective_workers(const RunConfig& config);

/// Runs the pipeline: per-layer calibration -> PTQ -> low-rank init in a
/// work pool, writes the output bundle and a JSON report. Deterministic for a
/// fixed config and input, independent of worker count.
RunOutcome run(const RunConfig& config);

struct ConfigDiagnostic {
  std::string field;
  std::string message;
};

/// Schema and cross-field checks without running; reaches into the input
/// bundle (when readable) for per-layer rank/dimension checks.
std::vector<ConfigDiagnostic> validate_config_file(const std::filesystem::path& path);

/// Replaces each selected layer's activations with its Gram matrix; all other
/// entries are copied bit-exact.
void precompute_grams(const std::filesystem::path& input, const std::filesystem::path& output,
                      const std::vector<std::string>& layer_patterns);

}  // namespace cloq
