#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "casdc/classifier.hpp"
#include "casdc/dataset.hpp"
#include "casdc/embedding.hpp"

namespace casdc {

// Mean embeddings of the known-known and known-unknown training clusters.
// Only mu_ku enters the decision rule; mu_kk is kept for diagnostics such as
// inter-prototype distance reporting.
struct Prototypes {
  Vector mu_kk;
  Vector mu_ku;

  double inter_prototype_distance() const;  // squared Euclidean

  nlohmann::json to_json() const;
  static Prototypes from_json(const nlohmann::json& j);
};

// Componentwise means; rows of each matrix are embedding vectors.
Prototypes compute_prototypes(const Matrix& embeddings_kk,
                              const Matrix& embeddings_ku);

// Squared Euclidean distance to the known-unknown prototype.
double distance_score(const Vector& embedding, const Vector& mu_ku);

enum class CalibrationMode { target_tpr_on_test, target_tpr_on_holdout, fixed };

CalibrationMode calibration_mode_from_string(const std::string& s);
const char* calibration_mode_name(CalibrationMode m);

struct ThresholdPolicy {
  CalibrationMode mode = CalibrationMode::target_tpr_on_test;
  double target_tpr = 0.95;  // meaningful unless mode == fixed
  double tau = 0.0;          // used directly when mode == fixed

  void validate() const;
  nlohmann::json to_json() const;
  static ThresholdPolicy from_json(const nlohmann::json& j);
};

struct CalibrationResult {
  double tau = 0.0;
  double achieved_tpr = 0.0;
  // Set when target_tpr = 1.0 is unattainable because some known distance
  // is exactly zero; achieved_tpr then reports the attainable maximum.
  bool target_unattainable = false;
};

// Fixed quantile convention: sort distances ascending, k = floor((1 -
// target) * n) (with a 1e-9 nudge so exact integer products of the target
// grid land on the intended k), tau = k-th smallest (1-indexed); k = 0 means
// tau = 0. A sample is accepted (detected known) when its distance is
// strictly greater than tau.
CalibrationResult calibrate_threshold(const std::vector<double>& known_distances,
                                      double target_tpr);

enum class Decision : std::uint8_t { known = 0, unknown = 1 };

// The binary discriminant: known iff d(e, mu_ku) > tau; the boundary d ==
// tau is unknown.
Decision discriminate(const Vector& embedding, const Prototypes& prototypes,
                      double tau);

struct CascadePrediction {
  Decision decision = Decision::unknown;
  std::optional<int> class_label;  // present exactly when decision == known
  double distance = 0.0;           // to mu_ku
};

// Two-stage inference: embed, discriminate, and only consult the classifier
// on a known decision. classifier_invocations (optional) counts how often
// the classifier actually ran.
CascadePrediction predict_cascade(const std::vector<double>& features,
                                  const EmbeddingModel& g,
                                  const Prototypes& prototypes, double tau,
                                  const ClassifierModel& f,
                                  std::uint64_t* classifier_invocations = nullptr);

std::vector<CascadePrediction> predict_cascade_batch(
    const Dataset& inputs, const EmbeddingModel& g, const Prototypes& prototypes,
    double tau, const ClassifierModel& f,
    std::uint64_t* classifier_invocations = nullptr);

}  // namespace casdc
