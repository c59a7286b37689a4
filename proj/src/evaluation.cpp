#include "casdc/evaluation.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "casdc/discriminator.hpp"
#include "casdc/errors.hpp"

namespace casdc {

void EvalRecord::validate() const {
  if (is_known != true_class.has_value())
    throw MetricError("eval record: true_class must be present iff is_known");
  if (!std::isfinite(score))
    throw MetricError("eval record: non-finite score");
}

double auroc(const std::vector<EvalRecord>& records) {
  std::size_t n_pos = 0, n_neg = 0;
  for (const EvalRecord& r : records) {
    r.validate();
    (r.is_known ? n_pos : n_neg)++;
  }
  if (n_pos == 0 || n_neg == 0)
    throw MetricError(
        "auroc undefined: need at least one known and one unknown record");

  // Average ranks over the pooled scores, then the Mann-Whitney statistic.
  std::vector<std::size_t> idx(records.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return records[a].score < records[b].score;
  });

  std::vector<double> rank(records.size());
  std::size_t i = 0;
  while (i < idx.size()) {
    std::size_t j = i;
    while (j + 1 < idx.size() &&
           records[idx[j + 1]].score == records[idx[i]].score)
      ++j;
    const double avg =
        (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
    for (std::size_t k = i; k <= j; ++k) rank[idx[k]] = avg;
    i = j + 1;
  }

  double rank_sum_pos = 0.0;
  for (std::size_t r = 0; r < records.size(); ++r)
    if (records[r].is_known) rank_sum_pos += rank[r];

  const double u = rank_sum_pos - static_cast<double>(n_pos) *
                                      (static_cast<double>(n_pos) + 1.0) / 2.0;
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

double ccr_at_tpr(const std::vector<EvalRecord>& records, double target_tpr,
                  bool accepted_only_denominator) {
  std::vector<double> known_scores;
  for (const EvalRecord& r : records) {
    r.validate();
    if (!r.is_known) continue;
    if (!r.predicted_class.has_value())
      throw MetricError("ccr_at_tpr: known record without a prediction");
    known_scores.push_back(r.score);
  }
  if (known_scores.empty())
    throw MetricError("ccr_at_tpr: no known records");

  const double tau = calibrate_threshold(known_scores, target_tpr).tau;

  std::size_t accepted = 0, correct = 0;
  for (const EvalRecord& r : records) {
    if (!r.is_known || r.score <= tau) continue;
    ++accepted;
    if (*r.predicted_class == *r.true_class) ++correct;
  }
  const std::size_t denom =
      accepted_only_denominator ? accepted : known_scores.size();
  if (denom == 0) return 0.0;
  return static_cast<double>(correct) / static_cast<double>(denom);
}

CCRCurve ccr_curve(const std::vector<EvalRecord>& records,
                   const std::vector<double>& tpr_grid) {
  if (tpr_grid.empty()) throw ConfigError("ccr_curve: empty TPR grid");
  for (std::size_t i = 0; i < tpr_grid.size(); ++i) {
    if (tpr_grid[i] <= 0.0 || tpr_grid[i] > 1.0)
      throw ConfigError("ccr_curve: grid values must lie in (0, 1]");
    if (i > 0 && tpr_grid[i] <= tpr_grid[i - 1])
      throw ConfigError("ccr_curve: grid must be strictly increasing");
  }
  CCRCurve curve;
  curve.points.reserve(tpr_grid.size());
  for (double t : tpr_grid) curve.points.emplace_back(t, ccr_at_tpr(records, t));
  return curve;
}

std::vector<double> baseline_max_logit(const ClassifierModel& f,
                                       const Dataset& inputs) {
  const Matrix logits = logits_batch(f, inputs.feature_matrix());
  std::vector<double> scores(static_cast<std::size_t>(logits.rows()));
  for (Eigen::Index r = 0; r < logits.rows(); ++r)
    scores[static_cast<std::size_t>(r)] = logits.row(r).maxCoeff();
  return scores;
}

std::vector<double> baseline_max_softmax(const ClassifierModel& f,
                                         const Dataset& inputs) {
  const Matrix logits = logits_batch(f, inputs.feature_matrix());
  std::vector<double> scores(static_cast<std::size_t>(logits.rows()));
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double m = logits.row(r).maxCoeff();
    const double denom = (logits.row(r).array() - m).exp().sum();
    scores[static_cast<std::size_t>(r)] = 1.0 / denom;  // exp(0) / sum
  }
  return scores;
}

Projection project_2d(const Matrix& embeddings,
                      const std::vector<std::string>& tags) {
  if (embeddings.rows() < 3)
    throw DataError("project_2d: need at least 3 embeddings");
  if (tags.size() != static_cast<std::size_t>(embeddings.rows()))
    throw ShapeError("project_2d: one tag per embedding required");

  const Eigen::RowVectorXd mean = embeddings.colwise().mean();
  const Matrix centered = embeddings.rowwise() - mean;

  Projection out;
  out.points.resize(static_cast<std::size_t>(embeddings.rows()));

  if (embeddings.cols() == 2) {
    out.method = "center";
    for (Eigen::Index r = 0; r < centered.rows(); ++r) {
      out.points[static_cast<std::size_t>(r)] = {centered(r, 0), centered(r, 1),
                                                 tags[static_cast<std::size_t>(r)]};
    }
    return out;
  }
  if (embeddings.cols() < 2)
    throw ShapeError("project_2d: embeddings must have at least 2 dimensions");

  const Matrix cov = centered.transpose() * centered /
                     static_cast<double>(centered.rows() - 1);
  Eigen::SelfAdjointEigenSolver<Matrix> solver(cov);
  if (solver.info() != Eigen::Success)
    throw MetricError("project_2d: eigendecomposition failed");

  // Eigenvalues come back ascending; take the last two columns and fix the
  // sign so the projection is reproducible.
  Matrix axes(embeddings.cols(), 2);
  axes.col(0) = solver.eigenvectors().col(embeddings.cols() - 1);
  axes.col(1) = solver.eigenvectors().col(embeddings.cols() - 2);
  for (int c = 0; c < 2; ++c) {
    Eigen::Index arg = 0;
    axes.col(c).cwiseAbs().maxCoeff(&arg);
    if (axes(arg, c) < 0.0) axes.col(c) = -axes.col(c);
  }

  const Matrix proj = centered * axes;
  out.method = "pca";
  for (Eigen::Index r = 0; r < proj.rows(); ++r)
    out.points[static_cast<std::size_t>(r)] = {proj(r, 0), proj(r, 1),
                                               tags[static_cast<std::size_t>(r)]};
  return out;
}

namespace {

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void write_curve_csv(const CCRCurve& curve, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << "tpr,ccr\n";
  for (const auto& [tpr, ccr] : curve.points)
    out << fmt_double(tpr) << "," << fmt_double(ccr) << "\n";
}

CCRCurve read_curve_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open: " + path.string());
  CCRCurve curve;
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos)
      throw FormatError("curve csv: malformed line '" + line + "'");
    curve.points.emplace_back(std::stod(line.substr(0, comma)),
                              std::stod(line.substr(comma + 1)));
  }
  return curve;
}

void write_projection_csv(const Projection& proj,
                          const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << "x,y,tag,method=" << proj.method << "\n";
  for (const ProjectedPoint& p : proj.points)
    out << fmt_double(p.x) << "," << fmt_double(p.y) << "," << p.tag << "\n";
}

Projection read_projection_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open: " + path.string());
  Projection proj;
  std::string line;
  if (std::getline(in, line)) {
    const auto pos = line.find("method=");
    if (pos != std::string::npos) proj.method = line.substr(pos + 7);
  }
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto c1 = line.find(',');
    const auto c2 = line.find(',', c1 + 1);
    if (c1 == std::string::npos || c2 == std::string::npos)
      throw FormatError("projection csv: malformed line '" + line + "'");
    proj.points.push_back({std::stod(line.substr(0, c1)),
                           std::stod(line.substr(c1 + 1, c2 - c1 - 1)),
                           line.substr(c2 + 1)});
  }
  return proj;
}

}  // namespace casdc
