#pragma once

#include <optional>
#include <string>
#include <vector>

#include "casdc/classifier.hpp"
#include "casdc/dataset.hpp"

namespace casdc {

// One test sample's scoring record. score is the distance to mu_ku (or a
// baseline score); in every case higher means "more known". Knowns are the
// positive class.
struct EvalRecord {
  double score = 0.0;
  bool is_known = false;
  std::optional<int> true_class;       // present iff is_known
  std::optional<int> predicted_class;  // required on knowns for CCR

  void validate() const;
};

// Exact rank-based AUROC (Mann-Whitney), ties at half credit via average
// ranks. Needs at least one known and one unknown record.
double auroc(const std::vector<EvalRecord>& records);

// Calibrates the acceptance threshold on the known scores at target_tpr
// (same order-statistic convention as the discriminator), then counts
// correctly classified accepted knowns. By default the denominator is all
// known records, so rejected knowns count as failures; the accepted-only
// variant sits behind the flag for comparison.
double ccr_at_tpr(const std::vector<EvalRecord>& records, double target_tpr,
                  bool accepted_only_denominator = false);

struct CCRCurve {
  std::vector<std::pair<double, double>> points;  // (tpr, ccr)
};

// Pointwise ccr_at_tpr over a strictly increasing grid in (0, 1].
CCRCurve ccr_curve(const std::vector<EvalRecord>& records,
                   const std::vector<double>& tpr_grid);

// Good-Classifier-style baseline scores from the closed-set classifier.
// Higher max logit / max softmax means "more known"; both feed the same
// auroc machinery as the cascade scores.
std::vector<double> baseline_max_logit(const ClassifierModel& f,
                                       const Dataset& inputs);
std::vector<double> baseline_max_softmax(const ClassifierModel& f,
                                         const Dataset& inputs);

struct ProjectedPoint {
  double x = 0.0;
  double y = 0.0;
  std::string tag;
};

struct Projection {
  std::vector<ProjectedPoint> points;
  std::string method;  // recorded in output metadata
};

// Deterministic 2-D projection for embedding-space plots. Two-dimensional
// input is returned centered ("center"); higher dimensions use the top two
// principal components ("pca") with a fixed sign convention (the largest
// absolute coefficient of each axis is positive). Needs >= 3 points.
Projection project_2d(const Matrix& embeddings,
                      const std::vector<std::string>& tags);

void write_curve_csv(const CCRCurve& curve, const std::filesystem::path& path);
CCRCurve read_curve_csv(const std::filesystem::path& path);
void write_projection_csv(const Projection& proj,
                          const std::filesystem::path& path);
Projection read_projection_csv(const std::filesystem::path& path);

}  // namespace casdc
