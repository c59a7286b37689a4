#include "casdc/discriminator.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

#include "casdc/errors.hpp"

namespace casdc {

double Prototypes::inter_prototype_distance() const {
  return (mu_kk - mu_ku).squaredNorm();
}

nlohmann::json Prototypes::to_json() const {
  std::vector<double> kk(mu_kk.data(), mu_kk.data() + mu_kk.size());
  std::vector<double> ku(mu_ku.data(), mu_ku.data() + mu_ku.size());
  return nlohmann::json{{"mu_kk", kk}, {"mu_ku", ku}};
}

Prototypes Prototypes::from_json(const nlohmann::json& j) {
  const auto kk = j.at("mu_kk").get<std::vector<double>>();
  const auto ku = j.at("mu_ku").get<std::vector<double>>();
  if (kk.size() != ku.size())
    throw FormatError("prototypes: mu_kk and mu_ku dimensions differ");
  Prototypes p;
  p.mu_kk = Eigen::Map<const Vector>(kk.data(), static_cast<Eigen::Index>(kk.size()));
  p.mu_ku = Eigen::Map<const Vector>(ku.data(), static_cast<Eigen::Index>(ku.size()));
  return p;
}

Prototypes compute_prototypes(const Matrix& embeddings_kk,
                              const Matrix& embeddings_ku) {
  if (embeddings_kk.rows() == 0)
    throw DataError("compute_prototypes: the known-known embedding set is empty");
  if (embeddings_ku.rows() == 0)
    throw DataError(
        "compute_prototypes: the known-unknown embedding set is empty");
  if (embeddings_kk.cols() != embeddings_ku.cols())
    throw ShapeError("compute_prototypes: embedding dimensions differ");
  Prototypes p;
  p.mu_kk = embeddings_kk.colwise().mean().transpose();
  p.mu_ku = embeddings_ku.colwise().mean().transpose();
  if (!p.mu_kk.allFinite() || !p.mu_ku.allFinite())
    throw DataError("compute_prototypes: non-finite prototype");
  return p;
}

double distance_score(const Vector& embedding, const Vector& mu_ku) {
  if (embedding.size() != mu_ku.size())
    throw ShapeError("distance_score: dimension mismatch (" +
                     std::to_string(embedding.size()) + " vs " +
                     std::to_string(mu_ku.size()) + ")");
  return (embedding - mu_ku).squaredNorm();
}

CalibrationMode calibration_mode_from_string(const std::string& s) {
  if (s == "target_tpr_on_test") return CalibrationMode::target_tpr_on_test;
  if (s == "target_tpr_on_holdout")
    return CalibrationMode::target_tpr_on_holdout;
  if (s == "fixed") return CalibrationMode::fixed;
  throw ConfigError("unknown calibration mode '" + s + "'");
}

const char* calibration_mode_name(CalibrationMode m) {
  switch (m) {
    case CalibrationMode::target_tpr_on_test:
      return "target_tpr_on_test";
    case CalibrationMode::target_tpr_on_holdout:
      return "target_tpr_on_holdout";
    case CalibrationMode::fixed:
      return "fixed";
  }
  return "?";
}

void ThresholdPolicy::validate() const {
  if (!std::isfinite(tau) || tau < 0.0)
    throw ConfigError("threshold policy: tau must be finite and >= 0");
  if (mode != CalibrationMode::fixed &&
      !(target_tpr > 0.0 && target_tpr <= 1.0))
    throw ConfigError("threshold policy: target_tpr must lie in (0, 1]");
}

nlohmann::json ThresholdPolicy::to_json() const {
  return nlohmann::json{{"calibration_mode", calibration_mode_name(mode)},
                        {"target_tpr", target_tpr},
                        {"tau", tau}};
}

ThresholdPolicy ThresholdPolicy::from_json(const nlohmann::json& j) {
  ThresholdPolicy p;
  p.mode = calibration_mode_from_string(
      j.at("calibration_mode").get<std::string>());
  p.target_tpr = j.value("target_tpr", 0.95);
  p.tau = j.value("tau", 0.0);
  p.validate();
  return p;
}

CalibrationResult calibrate_threshold(const std::vector<double>& known_distances,
                                      double target_tpr) {
  if (known_distances.empty())
    throw DataError("calibrate_threshold: empty distance list");
  if (target_tpr <= 0.0 || target_tpr > 1.0)
    throw ConfigError("calibrate_threshold: target_tpr must lie in (0, 1]");

  std::vector<double> sorted = known_distances;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();

  // k-th smallest order statistic, k = floor((1 - target) * n). The nudge
  // keeps exact-integer products from landing one below their value.
  const double k_real = (1.0 - target_tpr) * static_cast<double>(n);
  const std::size_t k = static_cast<std::size_t>(std::floor(k_real + 1e-9));

  CalibrationResult out;
  if (k == 0) {
    out.tau = 0.0;
    if (sorted.front() <= 0.0) out.target_unattainable = true;
  } else {
    out.tau = sorted[k - 1];
  }
  const std::size_t accepted = static_cast<std::size_t>(
      std::count_if(sorted.begin(), sorted.end(),
                    [&](double d) { return d > out.tau; }));
  out.achieved_tpr = static_cast<double>(accepted) / static_cast<double>(n);
  return out;
}

Decision discriminate(const Vector& embedding, const Prototypes& prototypes,
                      double tau) {
  if (tau < 0.0) throw ConfigError("discriminate: tau must be >= 0");
  return distance_score(embedding, prototypes.mu_ku) > tau ? Decision::known
                                                           : Decision::unknown;
}

CascadePrediction predict_cascade(const std::vector<double>& features,
                                  const EmbeddingModel& g,
                                  const Prototypes& prototypes, double tau,
                                  const ClassifierModel& f,
                                  std::uint64_t* classifier_invocations) {
  const Vector e = embed_one(g, features);
  CascadePrediction out;
  out.distance = distance_score(e, prototypes.mu_ku);
  if (out.distance > tau) {
    out.decision = Decision::known;
    if (classifier_invocations) ++*classifier_invocations;
    out.class_label = classify(f, features).predicted_class;
  } else {
    out.decision = Decision::unknown;
  }
  return out;
}

std::vector<CascadePrediction> predict_cascade_batch(
    const Dataset& inputs, const EmbeddingModel& g, const Prototypes& prototypes,
    double tau, const ClassifierModel& f,
    std::uint64_t* classifier_invocations) {
  std::vector<CascadePrediction> out;
  out.reserve(inputs.size());
  for (const LabeledSample& s : inputs.samples)
    out.push_back(
        predict_cascade(s.features, g, prototypes, tau, f,
                        classifier_invocations));
  return out;
}

}  // namespace casdc
