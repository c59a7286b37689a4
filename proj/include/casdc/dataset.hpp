#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace casdc {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Sample role with respect to a class partition. KK = known known,
// KU = known unknown (unknown class available during training),
// UU = unknown unknown (seen only at test time).
enum class Role : std::uint8_t { KK = 0, KU = 1, UU = 2 };

const char* role_name(Role r);

// Assignment of source-dataset class ids to the three roles. The three sets
// are pairwise disjoint and KU ∪ UU covers every non-known class.
struct ClassPartition {
  std::vector<int> known;            // sorted
  std::vector<int> known_unknown;    // sorted
  std::vector<int> unknown_unknown;  // sorted
  std::uint64_t seed = 0;
  std::string note;  // set when rounding produced an empty KU set

  bool is_known(int class_id) const;
  bool is_known_unknown(int class_id) const;
  Role role_of(int class_id) const;  // throws DataError for unlisted classes

  nlohmann::json to_json() const;
  static ClassPartition from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static ClassPartition load(const std::filesystem::path& path);
};

struct LabeledSample {
  std::vector<double> features;  // flattened, row-major over feature_shape
  int class_label = 0;
  Role role = Role::KK;
};

struct Dataset {
  std::vector<LabeledSample> samples;
  int class_count = 0;  // number of distinct class labels present
  std::vector<std::size_t> feature_shape;

  std::size_t size() const { return samples.size(); }
  std::size_t feature_size() const;
  std::vector<int> distinct_labels() const;  // sorted

  // Rows are samples, columns the flattened features.
  Matrix feature_matrix() const;
  Matrix feature_matrix(const std::vector<std::size_t>& indices) const;
  std::vector<Role> roles() const;
};

// Deterministically assigns class ids to roles. Classes are sorted, then
// shuffled with the seed; the first n_known become known, the next
// round_half_up(ku_fraction * remaining) become known unknowns, the rest
// unknown unknowns. ku_fraction in [0, 1].
ClassPartition make_partition(const std::vector<int>& all_classes, int n_known,
                              double ku_fraction, std::uint64_t seed);

struct SplitResult {
  Dataset train_kk;
  Dataset train_ku;
  Dataset test;  // known-class samples keep role KK; KU and UU classes are
                 // both role UU here (known unknowns count as unknowns at
                 // test time)
};

// Materializes the training and test universes from separate train/test
// sources. Every partition class must appear in both sources.
SplitResult split_dataset(const Dataset& train_source,
                          const Dataset& test_source,
                          const ClassPartition& partition);

// Unit-covariance Gaussian clusters. Class means sit on a lattice with
// spacing class_separation, so pairwise mean distances are >= the requested
// separation by construction. Labels are 1..n_classes. Deterministic given
// the seed (bitwise).
Dataset generate_synthetic(int n_classes, int samples_per_class, int dim,
                           double class_separation, std::uint64_t seed);

// Feature normalization applied by the IDX loader: raw bytes are scaled to
// [0, 1] and then standardized as (x - mean) / std. The defaults are the
// conventional MNIST constants; other datasets record their constants in the
// experiment config.
struct IdxNormalization {
  double mean = 0.1307;
  double stddev = 0.3081;
};

// Loads a dataset. Supported formats:
//   "container" — the tensor container written by save_dataset
//   "idx"       — IDX image format; `path` names the images file and the
//                 labels file is derived by replacing "images" -> "labels"
//                 and "idx3" -> "idx1" in the filename
Dataset load_dataset(const std::filesystem::path& path,
                     const std::string& format,
                     const IdxNormalization& norm = {});

// IDX pair loader with explicit paths.
Dataset load_idx(const std::filesystem::path& images_path,
                 const std::filesystem::path& labels_path,
                 const IdxNormalization& norm = {});

void save_dataset(const Dataset& ds, const std::filesystem::path& path);

}  // namespace casdc
