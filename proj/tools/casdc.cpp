// Command-line harness around the casdc library. Subcommands mirror the
// pipeline stages so each one can be re-run independently from the file
// artifacts of the previous stage:
//
//   split       partition + materialize train_kk/train_ku/test containers
//   train       train embedding + classifier from the split containers
//   calibrate   prototypes + distance threshold from the checkpoints
//   eval        cascade metrics, CCR curve, 2-D projection
//   run         end-to-end multi-seed experiment (everything in one go)
//   sweep-beta  margin ablation table
//   sweep-ku    known-unknown fraction ablation table
//   plot        SVG figures from curve/projection CSVs
//
// Staged subcommands operate on a single seed (--seed, default the first
// seed in the config). The environment variables CASDC_OUT and CASDC_JOBS
// override the output directory and parallelism; explicit flags win over
// both.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "casdc/checkpoint.hpp"
#include "casdc/errors.hpp"
#include "casdc/harness.hpp"
#include "casdc/plots.hpp"

namespace fs = std::filesystem;
using namespace casdc;

namespace {

struct GlobalOpts {
  std::string config_path;
  std::vector<std::uint64_t> seeds;
  std::string out_dir;
  bool deterministic = true;
  bool deterministic_set = false;
  int jobs = 0;  // 0 = not set
};

ExperimentConfig resolve_config(const GlobalOpts& opts) {
  if (opts.config_path.empty())
    throw ConfigError("--config is required for this subcommand");
  ExperimentConfig cfg = ExperimentConfig::from_file(opts.config_path);

  if (const char* env = std::getenv("CASDC_OUT")) cfg.output_dir = env;
  if (const char* env = std::getenv("CASDC_JOBS")) cfg.jobs = std::atoi(env);

  if (!opts.seeds.empty()) cfg.seeds = opts.seeds;
  if (!opts.out_dir.empty()) cfg.output_dir = opts.out_dir;
  if (opts.deterministic_set) cfg.deterministic = opts.deterministic;
  if (opts.jobs > 0) cfg.jobs = opts.jobs;
  cfg.validate();
  return cfg;
}

std::uint64_t stage_seed(const ExperimentConfig& cfg) { return cfg.seeds.front(); }

int cmd_split(const GlobalOpts& opts) {
  const ExperimentConfig cfg = resolve_config(opts);
  const std::uint64_t seed = stage_seed(cfg);
  const fs::path out(cfg.output_dir);
  fs::create_directories(out);

  const SourcePair sources = load_sources(cfg, seed);
  const PreparedData data = prepare_data(cfg, sources, seed);
  data.partition.save(out / "partition.json");
  save_dataset(data.split.train_kk, out / "train_kk.tns");
  save_dataset(data.split.train_ku, out / "train_ku.tns");
  save_dataset(data.split.test, out / "test.tns");

  std::cout << "partition: " << data.partition.known.size() << " known / "
            << data.partition.known_unknown.size() << " KU / "
            << data.partition.unknown_unknown.size() << " UU classes\n"
            << "train_kk: " << data.split.train_kk.size()
            << " samples, train_ku: " << data.split.train_ku.size()
            << ", test: " << data.split.test.size() << "\n"
            << "artifacts written to " << out.string() << "\n";
  if (!data.partition.note.empty())
    std::cout << "note: " << data.partition.note << "\n";
  return 0;
}

int cmd_train(const GlobalOpts& opts) {
  const ExperimentConfig cfg = resolve_config(opts);
  const std::uint64_t seed = stage_seed(cfg);
  const fs::path out(cfg.output_dir);

  const Dataset train_kk = load_dataset(out / "train_kk.tns", "container");
  const Dataset train_ku = load_dataset(out / "train_ku.tns", "container");
  const ClassPartition partition = ClassPartition::load(out / "partition.json");

  Rng embed_rng(derive_seed(seed, "embedding-init"));
  EmbeddingModel embed_init =
      cfg.embedding.architecture == "mlp"
          ? make_embedding_mlp(train_kk.feature_size(), cfg.embedding.hidden,
                               cfg.embedding.embed_dim, cfg.embedding.normalize,
                               embed_rng)
          : make_embedding_convnet(train_kk.feature_shape,
                                   cfg.embedding.channels,
                                   cfg.embedding.embed_dim,
                                   cfg.embedding.normalize, embed_rng);
  TrainConfig embed_cfg = cfg.embedding.train;
  embed_cfg.seed = derive_seed(seed, "embedding-train");
  std::vector<EpochStats> embed_stats;
  const EmbeddingModel g = train_embedding(train_kk, train_ku, embed_init,
                                           cfg.loss, embed_cfg, &embed_stats);
  write_telemetry_csv(embed_stats, out / "embed_telemetry.csv");
  save_embedding_checkpoint(g, out / "embedding.ckpt", cfg.hash());

  Rng cls_rng(derive_seed(seed, "classifier-init"));
  ClassifierModel cls_init =
      cfg.classifier.architecture == "mlp"
          ? make_classifier_mlp(train_kk.feature_size(), cfg.classifier.hidden,
                                partition.known, cls_rng)
          : make_classifier_convnet(train_kk.feature_shape,
                                    cfg.classifier.channels, partition.known,
                                    cls_rng);
  TrainConfig cls_cfg = cfg.classifier.train;
  cls_cfg.seed = derive_seed(seed, "classifier-train");
  std::vector<EpochStats> cls_stats;
  const ClassifierModel f =
      train_classifier(train_kk, cls_init, cls_cfg, &cls_stats);
  {
    std::ofstream t(out / "classifier_telemetry.csv");
    t << "epoch,mean_loss\n";
    char buf[64];
    for (const EpochStats& s : cls_stats) {
      std::snprintf(buf, sizeof(buf), "%.17g", s.mean_loss);
      t << s.epoch << "," << buf << "\n";
    }
  }
  save_classifier_checkpoint(f, out / "classifier.ckpt", cfg.hash());

  std::cout << "embedding: " << g.architecture_id << ", final loss "
            << (embed_stats.empty() ? 0.0 : embed_stats.back().mean_loss)
            << "\n"
            << "classifier: " << f.architecture_id << ", final loss "
            << (cls_stats.empty() ? 0.0 : cls_stats.back().mean_loss) << "\n"
            << "checkpoints written to " << out.string() << "\n";
  return 0;
}

int cmd_calibrate(const GlobalOpts& opts) {
  const ExperimentConfig cfg = resolve_config(opts);
  const fs::path out(cfg.output_dir);

  const EmbeddingModel g = load_embedding_checkpoint(out / "embedding.ckpt");
  const Dataset train_kk = load_dataset(out / "train_kk.tns", "container");
  const Dataset train_ku = load_dataset(out / "train_ku.tns", "container");

  const Matrix emb_kk = embed(g, train_kk.feature_matrix());
  const Matrix emb_ku = embed(g, train_ku.feature_matrix());
  const Prototypes prototypes = compute_prototypes(emb_kk, emb_ku);

  double tau = cfg.threshold.tau;
  double achieved = 0.0;
  if (cfg.threshold.mode == CalibrationMode::target_tpr_on_test) {
    const Dataset test = load_dataset(out / "test.tns", "container");
    const Matrix emb_test = embed(g, test.feature_matrix());
    std::vector<double> dists;
    for (std::size_t i = 0; i < test.size(); ++i)
      if (test.samples[i].role == Role::KK)
        dists.push_back(distance_score(
            emb_test.row(static_cast<Eigen::Index>(i)).transpose(),
            prototypes.mu_ku));
    const CalibrationResult cal =
        calibrate_threshold(dists, cfg.threshold.target_tpr);
    tau = cal.tau;
    achieved = cal.achieved_tpr;
  } else if (cfg.threshold.mode == CalibrationMode::target_tpr_on_holdout) {
    std::vector<double> dists(static_cast<std::size_t>(emb_kk.rows()));
    for (Eigen::Index i = 0; i < emb_kk.rows(); ++i)
      dists[static_cast<std::size_t>(i)] =
          distance_score(emb_kk.row(i).transpose(), prototypes.mu_ku);
    const CalibrationResult cal =
        calibrate_threshold(dists, cfg.threshold.target_tpr);
    tau = cal.tau;
    achieved = cal.achieved_tpr;
  }

  {
    std::ofstream p(out / "prototypes.json");
    p << prototypes.to_json().dump(2) << "\n";
    ThresholdPolicy persisted = cfg.threshold;
    persisted.tau = tau;
    nlohmann::json tj = persisted.to_json();
    tj["achieved_tpr"] = achieved;
    std::ofstream t(out / "threshold.json");
    t << tj.dump(2) << "\n";
  }
  std::cout << "tau = " << tau << " (mode "
            << calibration_mode_name(cfg.threshold.mode)
            << ", achieved TPR on the calibration set = " << achieved << ")\n"
            << "inter-prototype distance = "
            << prototypes.inter_prototype_distance() << "\n";
  return 0;
}

int cmd_eval(const GlobalOpts& opts) {
  const ExperimentConfig cfg = resolve_config(opts);
  const std::uint64_t seed = stage_seed(cfg);
  const fs::path out(cfg.output_dir);

  const EmbeddingModel g = load_embedding_checkpoint(out / "embedding.ckpt");
  const ClassifierModel f = load_classifier_checkpoint(out / "classifier.ckpt");
  const Dataset test = load_dataset(out / "test.tns", "container");
  const Prototypes prototypes = [&] {
    std::ifstream in(out / "prototypes.json");
    if (!in) throw IoError("missing prototypes.json; run `calibrate` first");
    nlohmann::json j;
    in >> j;
    return Prototypes::from_json(j);
  }();
  const double tau = [&] {
    std::ifstream in(out / "threshold.json");
    if (!in) throw IoError("missing threshold.json; run `calibrate` first");
    nlohmann::json j;
    in >> j;
    return j.at("tau").get<double>();
  }();

  const Matrix emb_test = embed(g, test.feature_matrix());
  const Matrix logits = logits_batch(f, test.feature_matrix());

  std::vector<EvalRecord> records(test.size());
  std::uint64_t known_decisions = 0;
  std::size_t known_total = 0, known_correct = 0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    EvalRecord& r = records[i];
    r.score = distance_score(
        emb_test.row(static_cast<Eigen::Index>(i)).transpose(),
        prototypes.mu_ku);
    r.is_known = test.samples[i].role == Role::KK;
    if (r.is_known) r.true_class = test.samples[i].class_label;
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < logits.cols(); ++c)
      if (logits(static_cast<Eigen::Index>(i), c) >
          logits(static_cast<Eigen::Index>(i), best))
        best = c;
    r.predicted_class = f.class_ids[static_cast<std::size_t>(best)];
    if (r.score > tau) ++known_decisions;
    if (r.is_known) {
      ++known_total;
      if (*r.predicted_class == *r.true_class) ++known_correct;
    }
  }

  std::vector<EvalRecord> baseline = records;
  const std::vector<double> soft = baseline_max_softmax(f, test);
  for (std::size_t i = 0; i < records.size(); ++i) baseline[i].score = soft[i];

  RunReport report;
  report.config_hash = cfg.hash();
  report.calibration_mode = calibration_mode_name(cfg.threshold.mode);
  report.seeds = {seed};
  std::map<std::string, double> m;
  m["auroc"] = auroc(records);
  m["auroc_baseline_max_softmax"] = auroc(baseline);
  const double target = cfg.threshold.mode == CalibrationMode::fixed
                            ? 0.95
                            : cfg.threshold.target_tpr;
  m["ccr_at_target_tpr"] =
      ccr_at_tpr(records, target, cfg.eval.accepted_only_denominator);
  m["accuracy_knowns"] = known_total ? static_cast<double>(known_correct) /
                                           static_cast<double>(known_total)
                                     : 0.0;
  m["tau"] = tau;
  m["known_decisions"] = static_cast<double>(known_decisions);
  report.per_seed.push_back(m);
  aggregate_metrics(report.per_seed, report.mean, report.stddev);
  write_metrics_files(report, out);

  write_curve_csv(ccr_curve(records, cfg.eval.tpr_grid), out / "curve.csv");

  const std::size_t cap =
      std::min<std::size_t>(cfg.eval.projection_max_points, test.size());
  Matrix proj_input(static_cast<Eigen::Index>(cap), emb_test.cols());
  std::vector<std::string> tags(cap);
  for (std::size_t i = 0; i < cap; ++i) {
    proj_input.row(static_cast<Eigen::Index>(i)) =
        emb_test.row(static_cast<Eigen::Index>(i));
    tags[i] = test.samples[i].role == Role::KK
                  ? "known_" + std::to_string(test.samples[i].class_label)
                  : "unknown";
  }
  write_projection_csv(project_2d(proj_input, tags), out / "projection.csv");

  for (const auto& [key, value] : m)
    std::cout << key << " = " << value << "\n";
  return 0;
}

int cmd_run(const GlobalOpts& opts) {
  const ExperimentConfig cfg = resolve_config(opts);
  const RunReport report = run_experiment(cfg);
  std::cout << "config hash " << report.config_hash << ", "
            << report.seeds.size() << " seed(s)\n";
  for (const auto& [key, value] : report.mean) {
    std::cout << key << " mean = " << value;
    if (!report.stddev.empty())
      std::cout << " +/- " << report.stddev.at(key);
    std::cout << "\n";
  }
  std::cout << "report: " << (fs::path(cfg.output_dir) / "runreport.json").string()
            << "\n";
  return 0;
}

int print_sweep(const std::vector<SweepCell>& cells, const std::string& label) {
  std::cout << label << ",auroc_mean,auroc_std,status\n";
  bool any_failed = false;
  for (const SweepCell& c : cells) {
    std::cout << c.value << "," << c.auroc_mean << "," << c.auroc_std << ","
              << (c.failed ? "failed" : "ok") << "\n";
    if (c.failed) {
      std::cerr << "  cell " << c.value << ": " << c.error << "\n";
      any_failed = true;
    }
  }
  return any_failed ? 1 : 0;
}

int cmd_sweep_beta(const GlobalOpts& opts, const std::vector<double>& values) {
  const ExperimentConfig cfg = resolve_config(opts);
  return print_sweep(sweep_beta(cfg, values), "beta");
}

int cmd_sweep_ku(const GlobalOpts& opts, const std::vector<double>& values) {
  const ExperimentConfig cfg = resolve_config(opts);
  return print_sweep(sweep_ku_fraction(cfg, values), "ku_fraction");
}

int cmd_plot(const GlobalOpts& opts, std::string curve, std::string projection) {
  std::string out = opts.out_dir;
  if (out.empty())
    if (const char* env = std::getenv("CASDC_OUT")) out = env;
  if (out.empty()) out = ".";
  if (curve.empty()) curve = (fs::path(out) / "curve.csv").string();
  if (projection.empty())
    projection = (fs::path(out) / "projection.csv").string();
  emit_plots(curve, projection, out);
  std::cout << "wrote " << (fs::path(out) / "curve.svg").string() << " and "
            << (fs::path(out) / "projection.svg").string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cas-DC open set recognition harness"};
  app.require_subcommand(1);

  GlobalOpts opts;
  app.add_option("--config", opts.config_path, "experiment config (JSON)");
  app.add_option("--seed", opts.seeds, "run seed(s); repeatable")
      ->take_all();
  app.add_option("--out", opts.out_dir, "output directory override");
  app.add_flag("--deterministic,!--no-deterministic", opts.deterministic,
               "single-threaded reproducible mode")
      ->each([&](const std::string&) { opts.deterministic_set = true; });
  app.add_option("--jobs", opts.jobs, "parallel sweep cells");

  app.add_subcommand("split", "materialize partition and data splits");
  app.add_subcommand("train", "train embedding and classifier networks");
  app.add_subcommand("calibrate", "compute prototypes and threshold");
  app.add_subcommand("eval", "cascade evaluation from saved artifacts");
  app.add_subcommand("run", "end-to-end multi-seed experiment");

  std::vector<double> beta_values{0.1, 0.2, 0.5, 0.9, 1.0};
  auto* sb = app.add_subcommand("sweep-beta", "margin ablation");
  sb->add_option("--values", beta_values, "margin grid")->take_all();

  std::vector<double> ku_values{0.1, 0.2, 0.5, 0.9};
  auto* sk = app.add_subcommand("sweep-ku", "known-unknown fraction ablation");
  sk->add_option("--values", ku_values, "fraction grid")->take_all();

  std::string curve_csv, projection_csv;
  auto* pl = app.add_subcommand("plot", "emit SVG figures from CSVs");
  pl->add_option("--curve", curve_csv, "curve CSV path");
  pl->add_option("--projection", projection_csv, "projection CSV path");

  CLI11_PARSE(app, argc, argv);

  try {
    if (app.got_subcommand("split")) return cmd_split(opts);
    if (app.got_subcommand("train")) return cmd_train(opts);
    if (app.got_subcommand("calibrate")) return cmd_calibrate(opts);
    if (app.got_subcommand("eval")) return cmd_eval(opts);
    if (app.got_subcommand("run")) return cmd_run(opts);
    if (app.got_subcommand("sweep-beta")) return cmd_sweep_beta(opts, beta_values);
    if (app.got_subcommand("sweep-ku")) return cmd_sweep_ku(opts, ku_values);
    if (app.got_subcommand("plot"))
      return cmd_plot(opts, curve_csv, projection_csv);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
