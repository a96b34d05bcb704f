#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "causalmm/decode.hpp"
#include "causalmm/metrics.hpp"
#include "causalmm/scm.hpp"
#include "causalmm/synth.hpp"

namespace causalmm {

// Either a saved dataset directory or generation parameters.
struct DatasetSource {
  std::optional<std::filesystem::path> dir;
  std::uint64_t seed = 0;
  std::size_t cases = 200;
  double bias = 0.0;
};

struct BenchConfig {
  DatasetSource dataset;
  std::vector<DecodeMode> modes{DecodeMode::regular};
  DecodeConfig decode;  // mode is overridden per evaluated mode
  bool emit_steps = false;
};

struct SweepGrid {
  std::vector<Modality> modalities;
  std::vector<CounterfactualKind> kinds;
  std::vector<LayerRange> vision_ranges;
  std::vector<LayerRange> language_ranges;
  std::vector<double> gammas;
  std::vector<double> epsilons;
};

struct AblationConfig {
  DatasetSource dataset;
  DecodeConfig decode;  // gamma/eps replaced by the grid values
  InterventionParams params;
  std::uint64_t spec_seed = 0;
  SweepGrid sweep;
};

// Relative dataset directories resolve against base_dir. ConfigError
// carries the JSON path of the offending field.
BenchConfig parse_bench_config(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
AblationConfig parse_ablation_config(const nlohmann::json& j, const std::filesystem::path& base_dir = {});

nlohmann::json read_json_file(const std::filesystem::path& file);

SynthDataset load_source(const DatasetSource& source);

// Per-case view of cfg: decode and intervention seeds are derived from the
// case index so cases are independent of evaluation order.
DecodeConfig case_config(const DecodeConfig& cfg, std::size_t case_index);

// Mean over cases and steps of softmax(orig) - softmax(cf) for one modality.
struct EffectSummary {
  std::size_t steps = 0;
  double yes = 0.0;  // YES component
  double no = 0.0;   // NO component
  double l1 = 0.0;   // mean L1 norm of the difference
};

nlohmann::json to_json(const EffectSummary& e);

struct Evaluation {
  Metrics metrics;
  std::vector<Label> predictions;
  std::optional<EffectSummary> vision_effect;
  std::optional<EffectSummary> language_effect;
  std::vector<std::string> steps_jsonl;  // filled when requested
};

// Runs generate_causal on every case. Model errors are rethrown with the
// case index prepended.
Evaluation evaluate(const SynthDataset& ds, const DecodeConfig& cfg, bool keep_steps = false);

struct RunReport {
  nlohmann::json report;
  std::string csv;
  std::vector<std::string> steps_jsonl;
  std::vector<std::string> log;
};

RunReport run_benchmark(const BenchConfig& cfg);
RunReport run_benchmark(const std::filesystem::path& cfg_file);
RunReport run_ablation(const AblationConfig& cfg);
RunReport run_ablation(const std::filesystem::path& cfg_file);

// report.json, metrics.csv and (when non-empty) steps.jsonl.
void write_report(const RunReport& r, const std::filesystem::path& out_dir);

// Metrics fields formatted with "%.6f".
std::string csv_number(double v);

// Bias on the grid 0, step, 2*step, ... (up to max_bias) whose regular
// accuracy lies in [lo, hi] and is closest to their midpoint; nullopt if
// no grid point qualifies.
std::optional<double> find_moderate_bias(const SynthDataset& ds, double lo = 0.55, double hi = 0.85,
                                         double step = 0.25, double max_bias = 10.0);

struct ScmCheckResult {
  std::size_t trials = 0;
  double max_abs_diff = 0.0;   // backdoor_adjust vs intervene_oracle
  double confounded_tv = 0.0;  // observational vs interventional
  bool passed = false;
};

// Random SCMs with cardinalities in [2, 5] plus the constructed confounded
// binary SCM.
ScmCheckResult run_scm_check(std::size_t trials, std::uint64_t seed);

// The binary SCM with a strong confounder used by run_scm_check.
DiscreteSCM confounded_scm();

nlohmann::json to_json(const ScmCheckResult& r);

}  // namespace causalmm
