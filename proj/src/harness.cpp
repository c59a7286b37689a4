#include "casdc/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "casdc/checkpoint.hpp"
#include "casdc/errors.hpp"
#include "casdc/plots.hpp"

namespace casdc {

namespace {

namespace fs = std::filesystem;

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string fmt_value(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

[[noreturn]] void stage_fail(const std::string& stage, const Error& e) {
  throw Error("stage " + stage + ": " + e.what());
}

}  // namespace

SourcePair load_sources(const ExperimentConfig& config,
                        std::uint64_t run_seed) {
  switch (config.source) {
    case SourceKind::synthetic: {
      const std::uint64_t train_seed =
          derive_seed(config.synthetic.data_seed ^ run_seed, "synthetic-train");
      const std::uint64_t test_seed =
          derive_seed(config.synthetic.data_seed ^ run_seed, "synthetic-test");
      SourcePair out;
      out.train = generate_synthetic(
          config.synthetic.n_classes, config.synthetic.train_per_class,
          config.synthetic.dim, config.synthetic.class_separation, train_seed);
      out.test = generate_synthetic(
          config.synthetic.n_classes, config.synthetic.test_per_class,
          config.synthetic.dim, config.synthetic.class_separation, test_seed);
      return out;
    }
    case SourceKind::idx: {
      SourcePair out;
      out.train = load_idx(config.idx.train_images, config.idx.train_labels,
                           config.idx.normalization);
      out.test = load_idx(config.idx.test_images, config.idx.test_labels,
                          config.idx.normalization);
      return out;
    }
    case SourceKind::container: {
      SourcePair out;
      out.train = load_dataset(config.container.train, "container");
      out.test = load_dataset(config.container.test, "container");
      return out;
    }
  }
  throw ConfigError("load_sources: unknown source kind");
}

std::uint64_t effective_partition_seed(const ExperimentConfig& config,
                                       std::uint64_t run_seed) {
  if (config.partition.seed_policy == SeedPolicy::fixed)
    return config.partition.seed;
  return derive_seed(config.partition.seed ^ run_seed, "partition");
}

PreparedData prepare_data(const ExperimentConfig& config,
                          const SourcePair& sources, std::uint64_t run_seed) {
  const std::uint64_t pseed = effective_partition_seed(config, run_seed);
  const std::vector<int> all_classes = sources.train.distinct_labels();

  PreparedData out;
  if (config.partition.ku_unit == KuUnit::classes) {
    out.partition = make_partition(all_classes, config.partition.n_known,
                                   config.partition.ku_fraction, pseed);
    out.split = split_dataset(sources.train, sources.test, out.partition);
    return out;
  }

  // Sample-level known unknowns: every unknown class is marked KU, then the
  // KU training rows are subsampled at ku_fraction.
  out.partition =
      make_partition(all_classes, config.partition.n_known, 1.0, pseed);
  out.split = split_dataset(sources.train, sources.test, out.partition);

  Dataset& ku = out.split.train_ku;
  const std::size_t total = ku.size();
  const std::size_t keep = static_cast<std::size_t>(std::floor(
      config.partition.ku_fraction * static_cast<double>(total) + 0.5));
  std::vector<std::size_t> order(total);
  for (std::size_t i = 0; i < total; ++i) order[i] = i;
  Rng rng(derive_seed(pseed, "ku-samples"));
  rng.shuffle(order);
  order.resize(keep);
  std::sort(order.begin(), order.end());
  Dataset sub;
  sub.feature_shape = ku.feature_shape;
  sub.class_count = ku.class_count;
  for (std::size_t i : order) sub.samples.push_back(ku.samples[i]);
  ku = std::move(sub);
  return out;
}

namespace {

struct PipelineModels {
  EmbeddingModel embedding;
  ClassifierModel classifier;
  std::vector<EpochStats> embed_telemetry;
  std::vector<EpochStats> classifier_telemetry;
};

EmbeddingModel build_embedding_model(const ExperimentConfig& config,
                                     const Dataset& train_kk,
                                     std::uint64_t run_seed) {
  Rng rng(derive_seed(run_seed, "embedding-init"));
  if (config.embedding.architecture == "mlp") {
    if (train_kk.feature_shape.size() != 1)
      throw ConfigError(
          "embedding: mlp architecture expects vector features; got an "
          "image shape");
    return make_embedding_mlp(train_kk.feature_size(), config.embedding.hidden,
                              config.embedding.embed_dim,
                              config.embedding.normalize, rng);
  }
  if (train_kk.feature_shape.size() != 3)
    throw ConfigError("embedding: convnet architecture expects CxHxW features");
  return make_embedding_convnet(train_kk.feature_shape,
                                config.embedding.channels,
                                config.embedding.embed_dim,
                                config.embedding.normalize, rng);
}

ClassifierModel build_classifier_model(const ExperimentConfig& config,
                                       const Dataset& train_kk,
                                       const ClassPartition& partition,
                                       std::uint64_t run_seed) {
  Rng rng(derive_seed(run_seed, "classifier-init"));
  if (config.classifier.architecture == "mlp") {
    if (train_kk.feature_shape.size() != 1)
      throw ConfigError(
          "classifier: mlp architecture expects vector features; got an "
          "image shape");
    return make_classifier_mlp(train_kk.feature_size(),
                               config.classifier.hidden, partition.known, rng);
  }
  if (train_kk.feature_shape.size() != 3)
    throw ConfigError("classifier: convnet architecture expects CxHxW features");
  return make_classifier_convnet(train_kk.feature_shape,
                                 config.classifier.channels, partition.known,
                                 rng);
}

void write_loss_telemetry(const std::vector<EpochStats>& stats,
                          const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << "epoch,mean_loss\n";
  for (const EpochStats& s : stats)
    out << s.epoch << "," << fmt_double(s.mean_loss) << "\n";
}

PipelineModels train_models(const ExperimentConfig& config,
                            const PreparedData& data, std::uint64_t run_seed,
                            const fs::path& seed_dir) {
  PipelineModels out;

  TrainConfig embed_cfg = config.embedding.train;
  embed_cfg.seed = derive_seed(run_seed, "embedding-train");
  try {
    EmbeddingModel init =
        build_embedding_model(config, data.split.train_kk, run_seed);
    out.embedding =
        train_embedding(data.split.train_kk, data.split.train_ku, init,
                        config.loss, embed_cfg, &out.embed_telemetry);
  } catch (const Error& e) {
    write_telemetry_csv(out.embed_telemetry, seed_dir / "embed_telemetry.csv");
    stage_fail("train_embedding", e);
  }
  write_telemetry_csv(out.embed_telemetry, seed_dir / "embed_telemetry.csv");

  TrainConfig cls_cfg = config.classifier.train;
  cls_cfg.seed = derive_seed(run_seed, "classifier-train");
  try {
    ClassifierModel init = build_classifier_model(config, data.split.train_kk,
                                                  data.partition, run_seed);
    out.classifier = train_classifier(data.split.train_kk, init, cls_cfg,
                                      &out.classifier_telemetry);
  } catch (const Error& e) {
    write_loss_telemetry(out.classifier_telemetry,
                         seed_dir / "classifier_telemetry.csv");
    stage_fail("train_classifier", e);
  }
  write_loss_telemetry(out.classifier_telemetry,
                       seed_dir / "classifier_telemetry.csv");
  return out;
}

}  // namespace

SeedResult run_seed(const ExperimentConfig& config, const SourcePair& sources,
                    std::uint64_t run_seed, const fs::path& seed_dir) {
  fs::create_directories(seed_dir);

  PreparedData data;
  try {
    data = prepare_data(config, sources, run_seed);
  } catch (const Error& e) {
    stage_fail("split", e);
  }
  data.partition.save(seed_dir / "partition.json");

  PipelineModels models = train_models(config, data, run_seed, seed_dir);
  save_embedding_checkpoint(models.embedding, seed_dir / "embedding.ckpt",
                            config.hash());
  save_classifier_checkpoint(models.classifier, seed_dir / "classifier.ckpt",
                             config.hash());

  SeedResult result;
  result.seed = run_seed;
  result.partition = data.partition;

  Prototypes prototypes;
  Matrix test_embeddings;
  std::vector<double> test_scores;
  double tau = 0.0;
  double achieved_tpr = 0.0;
  try {
    const Matrix emb_kk = embed(models.embedding,
                                data.split.train_kk.feature_matrix());
    const Matrix emb_ku = embed(models.embedding,
                                data.split.train_ku.feature_matrix());
    prototypes = compute_prototypes(emb_kk, emb_ku);

    test_embeddings =
        embed(models.embedding, data.split.test.feature_matrix());
    test_scores.resize(data.split.test.size());
    for (std::size_t i = 0; i < data.split.test.size(); ++i)
      test_scores[i] = distance_score(
          test_embeddings.row(static_cast<Eigen::Index>(i)).transpose(),
          prototypes.mu_ku);

    switch (config.threshold.mode) {
      case CalibrationMode::fixed: {
        tau = config.threshold.tau;
        std::size_t accepted = 0, knowns = 0;
        for (std::size_t i = 0; i < data.split.test.size(); ++i) {
          if (data.split.test.samples[i].role != Role::KK) continue;
          ++knowns;
          if (test_scores[i] > tau) ++accepted;
        }
        achieved_tpr = knowns ? static_cast<double>(accepted) /
                                    static_cast<double>(knowns)
                              : 0.0;
        break;
      }
      case CalibrationMode::target_tpr_on_test: {
        std::vector<double> known_distances;
        for (std::size_t i = 0; i < data.split.test.size(); ++i)
          if (data.split.test.samples[i].role == Role::KK)
            known_distances.push_back(test_scores[i]);
        const CalibrationResult cal =
            calibrate_threshold(known_distances, config.threshold.target_tpr);
        tau = cal.tau;
        achieved_tpr = cal.achieved_tpr;
        break;
      }
      case CalibrationMode::target_tpr_on_holdout: {
        // Deployment-realistic mode: calibrate on the training knowns.
        std::vector<double> dists(static_cast<std::size_t>(emb_kk.rows()));
        for (Eigen::Index i = 0; i < emb_kk.rows(); ++i)
          dists[static_cast<std::size_t>(i)] =
              distance_score(emb_kk.row(i).transpose(), prototypes.mu_ku);
        const CalibrationResult cal =
            calibrate_threshold(dists, config.threshold.target_tpr);
        tau = cal.tau;
        // Report the TPR realized on the test knowns.
        std::size_t accepted = 0, knowns = 0;
        for (std::size_t i = 0; i < data.split.test.size(); ++i) {
          if (data.split.test.samples[i].role != Role::KK) continue;
          ++knowns;
          if (test_scores[i] > tau) ++accepted;
        }
        achieved_tpr = knowns ? static_cast<double>(accepted) /
                                    static_cast<double>(knowns)
                              : 0.0;
        break;
      }
    }

    ThresholdPolicy persisted = config.threshold;
    persisted.tau = tau;
    std::ofstream tout(seed_dir / "threshold.json");
    nlohmann::json tj = persisted.to_json();
    tj["achieved_tpr"] = achieved_tpr;
    tout << tj.dump(2) << "\n";
    std::ofstream pout(seed_dir / "prototypes.json");
    pout << prototypes.to_json().dump(2) << "\n";
  } catch (const Error& e) {
    stage_fail("calibrate", e);
  }

  try {
    const Dataset& test = data.split.test;
    const Matrix logits = logits_batch(models.classifier,
                                       test.feature_matrix());

    std::vector<EvalRecord> records(test.size());
    std::uint64_t known_decisions = 0;
    for (std::size_t i = 0; i < test.size(); ++i) {
      const LabeledSample& s = test.samples[i];
      EvalRecord& r = records[i];
      r.score = test_scores[i];
      r.is_known = s.role == Role::KK;
      if (r.is_known) r.true_class = s.class_label;
      Eigen::Index best = 0;
      for (Eigen::Index c = 1; c < logits.cols(); ++c)
        if (logits(static_cast<Eigen::Index>(i), c) >
            logits(static_cast<Eigen::Index>(i), best))
          best = c;
      r.predicted_class =
          models.classifier.class_ids[static_cast<std::size_t>(best)];
      if (r.score > tau) ++known_decisions;
    }

    // The batched pass above composes embed + discriminate + classify
    // exactly as predict_cascade does (batched calls equal stacked single
    // calls), so the classifier invocation count equals known_decisions.
    std::size_t known_total = 0, known_correct = 0;
    for (const EvalRecord& r : records)
      if (r.is_known) {
        ++known_total;
        if (*r.predicted_class == *r.true_class) ++known_correct;
      }

    std::vector<EvalRecord> baseline_logit = records;
    std::vector<EvalRecord> baseline_softmax = records;
    const std::vector<double> s_logit =
        baseline_max_logit(models.classifier, test);
    const std::vector<double> s_soft =
        baseline_max_softmax(models.classifier, test);
    for (std::size_t i = 0; i < records.size(); ++i) {
      baseline_logit[i].score = s_logit[i];
      baseline_softmax[i].score = s_soft[i];
    }

    auto& m = result.metrics;
    m["auroc"] = auroc(records);
    m["auroc_baseline_max_logit"] = auroc(baseline_logit);
    m["auroc_baseline_max_softmax"] = auroc(baseline_softmax);
    const double target = config.threshold.mode == CalibrationMode::fixed
                              ? 0.95
                              : config.threshold.target_tpr;
    m["ccr_at_target_tpr"] =
        ccr_at_tpr(records, target, config.eval.accepted_only_denominator);
    m["accuracy_knowns"] =
        known_total ? static_cast<double>(known_correct) /
                          static_cast<double>(known_total)
                    : 0.0;
    m["tau"] = tau;
    m["achieved_tpr"] = achieved_tpr;
    m["inter_prototype_distance"] = prototypes.inter_prototype_distance();
    m["known_decisions"] = static_cast<double>(known_decisions);
    m["classifier_invocations"] = static_cast<double>(known_decisions);
    m["test_knowns"] = static_cast<double>(known_total);
    m["test_unknowns"] = static_cast<double>(records.size() - known_total);

    result.curve = ccr_curve(records, config.eval.tpr_grid);
    write_curve_csv(result.curve, seed_dir / "curve.csv");

    const std::size_t cap =
        std::min<std::size_t>(config.eval.projection_max_points, test.size());
    Matrix proj_input(static_cast<Eigen::Index>(cap), test_embeddings.cols());
    std::vector<std::string> tags(cap);
    for (std::size_t i = 0; i < cap; ++i) {
      proj_input.row(static_cast<Eigen::Index>(i)) =
          test_embeddings.row(static_cast<Eigen::Index>(i));
      tags[i] = test.samples[i].role == Role::KK
                    ? "known_" + std::to_string(test.samples[i].class_label)
                    : "unknown";
    }
    result.projection = project_2d(proj_input, tags);
    write_projection_csv(result.projection, seed_dir / "projection.csv");
  } catch (const Error& e) {
    stage_fail("evaluate", e);
  }

  return result;
}

void aggregate_metrics(const std::vector<std::map<std::string, double>>& rows,
                       std::map<std::string, double>& mean,
                       std::map<std::string, double>& stddev) {
  mean.clear();
  stddev.clear();
  if (rows.empty()) return;
  for (const auto& [key, value] : rows.front()) {
    double sum = 0.0;
    for (const auto& row : rows) sum += row.at(key);
    mean[key] = sum / static_cast<double>(rows.size());
  }
  if (rows.size() < 2) return;
  for (const auto& [key, mu] : mean) {
    double ss = 0.0;
    for (const auto& row : rows) {
      const double d = row.at(key) - mu;
      ss += d * d;
    }
    stddev[key] = std::sqrt(ss / static_cast<double>(rows.size() - 1));
  }
}

nlohmann::json RunReport::to_json() const {
  nlohmann::json per;
  for (std::size_t i = 0; i < seeds.size(); ++i)
    per.push_back({{"seed", seeds[i]}, {"metrics", per_seed[i]}});
  return nlohmann::json{
      {"config_hash", config_hash},
      {"calibration_mode", calibration_mode},
      {"seeds", seeds},
      {"per_seed", per},
      {"mean", mean},
      {"std", stddev.empty() ? nlohmann::json(nullptr)
                             : nlohmann::json(stddev)},
      {"artifacts", artifacts}};
}

void write_metrics_files(const RunReport& report,
                         const std::filesystem::path& out_dir) {
  std::ofstream csv(out_dir / "metrics.csv");
  if (!csv) throw IoError("cannot write metrics.csv");
  csv << "seed,metric,value\n";
  for (std::size_t i = 0; i < report.seeds.size(); ++i)
    for (const auto& [key, value] : report.per_seed[i])
      csv << report.seeds[i] << "," << key << "," << fmt_double(value) << "\n";
  for (const auto& [key, value] : report.mean)
    csv << "mean," << key << "," << fmt_double(value) << "\n";
  for (const auto& [key, value] : report.stddev)
    csv << "std," << key << "," << fmt_double(value) << "\n";

  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t i = 0; i < report.seeds.size(); ++i)
    for (const auto& [key, value] : report.per_seed[i])
      rows.push_back({{"metric", key},
                      {"value", value},
                      {"seed", report.seeds[i]},
                      {"config_hash", report.config_hash},
                      {"calibration_mode", report.calibration_mode}});
  for (const auto& [key, value] : report.mean)
    rows.push_back({{"metric", key},
                    {"value", value},
                    {"seed", "mean"},
                    {"config_hash", report.config_hash},
                    {"calibration_mode", report.calibration_mode}});
  std::ofstream js(out_dir / "metrics.json");
  js << rows.dump(2) << "\n";
}

RunReport run_experiment(const ExperimentConfig& config) {
  config.validate();
  const fs::path out_dir(config.output_dir);
  fs::create_directories(out_dir);
  {
    std::ofstream cfg(out_dir / "config.json");
    cfg << config.to_json().dump(2) << "\n";
  }

  RunReport report;
  report.config_hash = config.hash();
  report.calibration_mode = calibration_mode_name(config.threshold.mode);
  report.seeds = config.seeds;

  // File-backed sources do not depend on the run seed; load them once.
  SourcePair shared_sources;
  const bool shared = config.source != SourceKind::synthetic;
  if (shared) {
    try {
      shared_sources = load_sources(config, config.seeds.front());
    } catch (const Error& e) {
      stage_fail("load_sources", e);
    }
  }

  std::vector<SeedResult> results;
  for (std::uint64_t seed : config.seeds) {
    const fs::path seed_dir =
        out_dir / ("seed_" + std::to_string(seed));
    SourcePair local;
    if (!shared) {
      try {
        local = load_sources(config, seed);
      } catch (const Error& e) {
        stage_fail("load_sources", e);
      }
    }
    const SourcePair& sources = shared ? shared_sources : local;
    SeedResult r = run_seed(config, sources, seed, seed_dir);
    report.per_seed.push_back(r.metrics);
    for (const char* name :
         {"embedding.ckpt", "classifier.ckpt", "partition.json", "curve.csv",
          "projection.csv", "threshold.json", "prototypes.json"})
      report.artifacts.push_back(
          (fs::path("seed_" + std::to_string(seed)) / name).string());
    results.push_back(std::move(r));
  }

  aggregate_metrics(report.per_seed, report.mean, report.stddev);

  // Top-level convenience copies from the first seed.
  const SeedResult& first = results.front();
  first.partition.save(out_dir / "partition.json");
  write_curve_csv(first.curve, out_dir / "curve.csv");
  write_projection_csv(first.projection, out_dir / "projection.csv");
  report.artifacts.insert(report.artifacts.begin(),
                          {"partition.json", "curve.csv", "projection.csv",
                           "metrics.csv", "metrics.json", "runreport.json"});

  write_metrics_files(report, out_dir);
  {
    std::ofstream out(out_dir / "runreport.json");
    out << report.to_json().dump(2) << "\n";
  }
  return report;
}

namespace {

std::vector<SweepCell> run_sweep(
    const ExperimentConfig& base, const std::vector<double>& values,
    const std::string& label,
    const std::function<void(ExperimentConfig&, double)>& apply,
    const std::string& csv_name) {
  if (values.empty()) throw ConfigError("sweep: empty value grid");

  std::vector<SweepCell> cells(values.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= values.size()) return;
      SweepCell& cell = cells[i];
      cell.value = values[i];
      ExperimentConfig cfg = base;
      apply(cfg, values[i]);
      cfg.output_dir = (fs::path(base.output_dir) /
                        (label + "_" + fmt_value(values[i])))
                           .string();
      cfg.jobs = 1;
      cell.config_hash = cfg.hash();
      try {
        const RunReport r = run_experiment(cfg);
        cell.auroc_mean = r.mean.at("auroc");
        cell.auroc_std =
            r.stddev.empty() ? 0.0 : r.stddev.at("auroc");
      } catch (const std::exception& e) {
        cell.failed = true;
        cell.error = e.what();
      }
    }
  };

  const int jobs = std::max(1, base.jobs);
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < jobs; ++t) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
  }

  fs::create_directories(base.output_dir);
  std::ofstream csv(fs::path(base.output_dir) / csv_name);
  csv << label << ",auroc_mean,auroc_std,status\n";
  for (const SweepCell& c : cells)
    csv << fmt_value(c.value) << "," << fmt_double(c.auroc_mean) << ","
        << fmt_double(c.auroc_std) << ","
        << (c.failed ? "failed: " + c.error : std::string("ok")) << "\n";
  return cells;
}

}  // namespace

std::vector<SweepCell> sweep_beta(const ExperimentConfig& base,
                                  const std::vector<double>& beta_values) {
  for (double b : beta_values)
    if (b <= 0.0) throw ConfigError("sweep_beta: margins must be positive");
  return run_sweep(
      base, beta_values, "beta",
      [](ExperimentConfig& cfg, double b) { cfg.loss.margin = b; },
      "sweep_beta.csv");
}

std::vector<SweepCell> sweep_ku_fraction(const ExperimentConfig& base,
                                         const std::vector<double>& fractions) {
  for (double f : fractions)
    if (f <= 0.0 || f > 1.0)
      throw ConfigError("sweep_ku_fraction: fractions must lie in (0, 1]");
  return run_sweep(
      base, fractions, "ku",
      [](ExperimentConfig& cfg, double f) { cfg.partition.ku_fraction = f; },
      "sweep_ku.csv");
}

}  // namespace casdc
