#pragma once

#include <map>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "casdc/config.hpp"
#include "casdc/dataset.hpp"
#include "casdc/discriminator.hpp"
#include "casdc/evaluation.hpp"

namespace casdc {

// Train/test sources before splitting. For synthetic data these depend on
// the run seed; file-backed sources are shared by all runs.
struct SourcePair {
  Dataset train;
  Dataset test;
};

SourcePair load_sources(const ExperimentConfig& config, std::uint64_t run_seed);

// Effective partition seed under the configured seed policy.
std::uint64_t effective_partition_seed(const ExperimentConfig& config,
                                       std::uint64_t run_seed);

// Partition plus split, honoring ku_unit (class-level keeps the partition
// as-is; sample-level marks every unknown class KU and then subsamples the
// KU training rows at ku_fraction).
struct PreparedData {
  ClassPartition partition;
  SplitResult split;
};
PreparedData prepare_data(const ExperimentConfig& config,
                          const SourcePair& sources, std::uint64_t run_seed);

// Everything one seed produces. Metrics keys are fixed (alphabetical in the
// CSV) so reruns are byte-identical.
struct SeedResult {
  std::uint64_t seed = 0;
  ClassPartition partition;
  std::map<std::string, double> metrics;
  CCRCurve curve;
  Projection projection;
};

// Full single-seed pipeline: split, train both networks, prototypes,
// threshold, cascade evaluation, metrics; persists checkpoints, telemetry,
// partition and CSVs under seed_dir. Throws Error with a "stage <name>:"
// prefix on failure, after persisting whatever telemetry exists.
SeedResult run_seed(const ExperimentConfig& config, const SourcePair& sources,
                    std::uint64_t run_seed,
                    const std::filesystem::path& seed_dir);

struct RunReport {
  std::string config_hash;
  std::string calibration_mode;
  std::vector<std::uint64_t> seeds;
  std::vector<std::map<std::string, double>> per_seed;  // aligned with seeds
  std::map<std::string, double> mean;
  std::map<std::string, double> stddev;  // empty when fewer than 2 seeds
  std::vector<std::string> artifacts;    // paths relative to the output dir

  nlohmann::json to_json() const;
};

// Multi-seed experiment. Writes runreport.json, metrics.csv, metrics.json,
// curve.csv, projection.csv, partition.json (first seed's artifacts at the
// top level) plus one seed_<n>/ directory per run.
RunReport run_experiment(const ExperimentConfig& config);

// Aggregation helper, exposed for verification: mean and sample standard
// deviation (n-1) per metric key.
void aggregate_metrics(const std::vector<std::map<std::string, double>>& rows,
                       std::map<std::string, double>& mean,
                       std::map<std::string, double>& stddev);

// Writes metrics.csv and metrics.json for a report. Rows are ordered
// (seeds, then mean, then std; metrics alphabetical) and doubles printed
// with %.17g, so identical reports serialize byte-identically.
void write_metrics_files(const RunReport& report,
                         const std::filesystem::path& out_dir);

struct SweepCell {
  double value = 0.0;
  std::string config_hash;
  bool failed = false;
  std::string error;
  double auroc_mean = 0.0;
  double auroc_std = 0.0;  // 0 when fewer than 2 seeds
};

// One run_experiment per grid value; a failed cell is marked and the sweep
// continues. Cells run concurrently when config.jobs > 1 (each cell owns
// its directory and stays internally single-threaded). Results land in
// sweep_beta.csv / sweep_ku.csv under the base output dir.
std::vector<SweepCell> sweep_beta(const ExperimentConfig& base,
                                  const std::vector<double>& beta_values);
std::vector<SweepCell> sweep_ku_fraction(const ExperimentConfig& base,
                                         const std::vector<double>& fractions);

}  // namespace casdc
