#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "casdc/dataset.hpp"
#include "casdc/discriminator.hpp"
#include "casdc/embedding.hpp"
#include "casdc/net.hpp"

namespace casdc {

enum class SourceKind { synthetic, idx, container };
// Whether the partition seed is shared by all runs or derived per run seed.
enum class SeedPolicy { fixed, per_run };
// Whether ku_fraction selects unknown classes or unknown training samples.
enum class KuUnit { classes, samples };

struct SyntheticSpec {
  int n_classes = 10;
  int train_per_class = 200;
  int test_per_class = 100;
  int dim = 10;
  double class_separation = 10.0;
  std::uint64_t data_seed = 1234;
};

struct IdxSpec {
  std::string train_images;
  std::string train_labels;
  std::string test_images;
  std::string test_labels;
  IdxNormalization normalization;
};

struct ContainerSpec {
  std::string train;
  std::string test;
};

struct PartitionSpec {
  int n_known = 6;
  double ku_fraction = 0.5;
  std::uint64_t seed = 0;
  SeedPolicy seed_policy = SeedPolicy::fixed;
  KuUnit ku_unit = KuUnit::classes;
};

// Architecture + optimizer settings for one of the two networks. The
// per-run seed overrides TrainConfig::seed, so it is not part of the file
// schema.
struct ModelSpec {
  std::string architecture = "mlp";  // "mlp" or "convnet"
  std::vector<std::size_t> hidden{64};
  std::vector<std::size_t> channels{8, 16, 32};
  std::size_t embed_dim = 128;  // embedding only
  bool normalize = false;       // embedding only: unit-norm output stage
  TrainConfig train;
};

struct EvalSpec {
  std::vector<double> tpr_grid;  // default: 0.05 .. 1.00 in 20 steps
  bool accepted_only_denominator = false;
  std::size_t projection_max_points = 2000;
};

struct ExperimentConfig {
  SourceKind source = SourceKind::synthetic;
  SyntheticSpec synthetic;
  IdxSpec idx;
  ContainerSpec container;
  PartitionSpec partition;
  ModelSpec embedding;
  ModelSpec classifier;
  TripletLossConfig loss;
  ThresholdPolicy threshold;
  EvalSpec eval;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::string output_dir = "runs/exp";
  bool deterministic = true;
  int jobs = 1;

  void validate() const;

  nlohmann::json to_json() const;
  static ExperimentConfig from_json(const nlohmann::json& j);
  static ExperimentConfig from_file(const std::filesystem::path& path);

  // Identity of the experiment: everything except output_dir, jobs and the
  // determinism switch (those change where/how it runs, not what it
  // computes). The hash is FNV-1a over the canonical dump.
  nlohmann::json canonical_json() const;
  std::string hash() const;
};

std::vector<double> default_tpr_grid();

}  // namespace casdc
