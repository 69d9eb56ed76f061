#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "localsym/discovery.hpp"
#include "localsym/geometry.hpp"
#include "localsym/lie.hpp"
#include "localsym/tasks.hpp"

namespace localsym {

inline constexpr const char* kToolVersion = "0.1.0";
inline constexpr int kFormatVersion = 1;

/// What to run: a named synthetic generator with parameters, or a dataset
/// file produced earlier by gen-data.
struct TaskSpec {
  std::string name;          // heat | l1 | arctan | quadratic (empty if dataset_path set)
  std::string dataset_path;  // load instead of generating
  HeatConfig heat;
  std::size_t n_samples = 4096;  // vector tasks
  double range = 2.0;            // l1
  std::size_t dim = 4;           // quadratic
};

struct RunConfig {
  TaskSpec task;
  std::optional<Atlas> atlas;  // required for field tasks
  std::string atlas_path;      // provenance when loaded from file
  PredictorSpec predictor;
  DiscoveryConfig discovery;
  std::string out_dir = ".";
  std::uint64_t seed = 0;
  bool has_seed = false;

  void validate() const;
};

RunConfig load_run_config(const std::string& path);
void save_run_config(const RunConfig& cfg, const std::string& path);

struct ManifestCoset {
  Tensor matrix;
  double loss = 0.0;
  double det = 0.0;
};

/// Everything a discovery run reports, in a self-describing, losslessly
/// round-tripping form.
struct ResultsManifest {
  int format_version = kFormatVersion;
  std::string tool_version = kToolVersion;
  double wall_clock_sec = 0.0;
  std::string config_echo;  // serialized run config
  double epsilon = 0.3;     // duplicate threshold used
  std::vector<Tensor> generators;
  std::vector<ManifestCoset> cosets;
  std::optional<InvariantMetric> metric;
  std::string loss_trace_file;
  std::vector<std::string> stages_completed;
  std::string error;  // non-empty when a stage aborted (partial results)
};

void save_manifest(const ResultsManifest& m, const std::string& path);
ResultsManifest load_manifest(const std::string& path);

void save_atlas(const Atlas& atlas, const std::string& path);
Atlas load_atlas(const std::string& path);

/// Datasets persist as a human-readable manifest plus a raw little-endian
/// float64 blob (X then Y, sample-major, row-major within a sample).
void save_field_dataset(const FieldDataset& ds, const std::string& manifest_path);
FieldDataset load_field_dataset(const std::string& manifest_path);
void save_vector_dataset(const VectorDataset& ds, const std::string& manifest_path);
VectorDataset load_vector_dataset(const std::string& manifest_path);

/// True when the manifest at the path describes a vector dataset.
bool dataset_is_vector(const std::string& manifest_path);

/// 8-bit binary PGM with [-max|entry|, +max|entry|] mapped linearly onto
/// [0, 255], so zero lands on 128.
void export_heatmap(const Tensor& matrix, const std::string& path);

// stage artifacts for the step-by-step CLI commands
void save_predictors(const std::vector<Predictor>& preds, const std::string& path);
std::vector<Predictor> load_predictors(const std::string& path);
void save_basis(const LieBasis& basis, const std::vector<double>& trace,
                const std::string& path);
LieBasis load_basis(const std::string& path, std::vector<double>* trace = nullptr);
void save_coset_bank(const CosetBank& bank, const std::string& path);
CosetBank load_coset_bank(const std::string& path);

struct TraceRow {
  std::string stage;
  int chart = -1;  // -1 for stages without a chart
  std::size_t epoch = 0;
  double loss = 0.0;
};
void save_loss_traces(const std::vector<TraceRow>& rows, const std::string& path);

struct VerifyReport {
  bool ok = true;
  std::vector<std::string> lines;  // one human-readable line per check
};

/// Recompute the manifest's invariants: |det| of every coset, pairwise
/// component distances above epsilon, metric residual and unit norm.
VerifyReport verify_manifest(const ResultsManifest& m);

struct PipelineOutputs {
  DiscoveryResult result;
  ResultsManifest manifest;
  std::string manifest_path;
};

/// Full run from a config: resolve the task, train, discover, filter,
/// optionally extract the metric, and persist manifest + loss traces under
/// cfg.out_dir. On a stage failure the partial manifest is still written and
/// the error rethrown with the stage name attached.
PipelineOutputs run_pipeline(const RunConfig& cfg);

}  // namespace localsym
