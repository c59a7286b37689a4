#include "casdc/config.hpp"

#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "casdc/errors.hpp"
#include "casdc/rng.hpp"

namespace casdc {

std::vector<double> default_tpr_grid() {
  std::vector<double> grid;
  for (int i = 1; i <= 20; ++i) grid.push_back(0.05 * i);
  grid.back() = 1.0;
  return grid;
}

namespace {

std::string source_name(SourceKind k) {
  switch (k) {
    case SourceKind::synthetic:
      return "synthetic";
    case SourceKind::idx:
      return "idx";
    case SourceKind::container:
      return "container";
  }
  return "?";
}

SourceKind source_from_string(const std::string& s) {
  if (s == "synthetic") return SourceKind::synthetic;
  if (s == "idx") return SourceKind::idx;
  if (s == "container") return SourceKind::container;
  throw ConfigError("unknown dataset source '" + s + "'");
}

nlohmann::json train_to_json(const TrainConfig& t) {
  return {{"epochs", t.epochs},
          {"batch_size", t.batch_size},
          {"learning_rate", t.learning_rate},
          {"weight_decay", t.weight_decay}};
}

TrainConfig train_from_json(const nlohmann::json& j, const TrainConfig& def) {
  TrainConfig t = def;
  t.epochs = j.value("epochs", def.epochs);
  t.batch_size = j.value("batch_size", def.batch_size);
  t.learning_rate = j.value("learning_rate", def.learning_rate);
  t.weight_decay = j.value("weight_decay", def.weight_decay);
  return t;
}

nlohmann::json model_to_json(const ModelSpec& m, bool is_embedding) {
  nlohmann::json j{{"architecture", m.architecture},
                   {"hidden", m.hidden},
                   {"channels", m.channels},
                   {"train", train_to_json(m.train)}};
  if (is_embedding) {
    j["embed_dim"] = m.embed_dim;
    j["normalize"] = m.normalize;
  }
  return j;
}

ModelSpec model_from_json(const nlohmann::json& j, const ModelSpec& def) {
  ModelSpec m = def;
  m.architecture = j.value("architecture", def.architecture);
  if (j.contains("hidden"))
    m.hidden = j.at("hidden").get<std::vector<std::size_t>>();
  if (j.contains("channels"))
    m.channels = j.at("channels").get<std::vector<std::size_t>>();
  m.embed_dim = j.value("embed_dim", def.embed_dim);
  m.normalize = j.value("normalize", def.normalize);
  if (j.contains("train")) m.train = train_from_json(j.at("train"), def.train);
  return m;
}

}  // namespace

void ExperimentConfig::validate() const {
  if (seeds.empty()) throw ConfigError("config: seeds must not be empty");
  if (jobs < 1) throw ConfigError("config: jobs must be >= 1");
  if (partition.n_known < 2)
    throw ConfigError("config: partition.n_known must be >= 2 (the closed-set "
                      "classifier needs at least two classes)");
  if (partition.ku_fraction < 0.0 || partition.ku_fraction > 1.0)
    throw ConfigError("config: partition.ku_fraction must lie in [0, 1]");
  if (embedding.architecture != "mlp" && embedding.architecture != "convnet")
    throw ConfigError("config: embedding.architecture must be mlp or convnet");
  if (classifier.architecture != "mlp" && classifier.architecture != "convnet")
    throw ConfigError("config: classifier.architecture must be mlp or convnet");
  loss.validate();
  threshold.validate();
  embedding.train.validate();
  classifier.train.validate();
  if (source == SourceKind::synthetic) {
    if (synthetic.n_classes <= partition.n_known)
      throw ConfigError(
          "config: synthetic.n_classes must exceed partition.n_known");
  }
  for (double t : eval.tpr_grid)
    if (t <= 0.0 || t > 1.0)
      throw ConfigError("config: eval.tpr_grid values must lie in (0, 1]");
}

nlohmann::json ExperimentConfig::to_json() const {
  nlohmann::json dataset{{"source", source_name(source)},
                         {"partition",
                          {{"n_known", partition.n_known},
                           {"ku_fraction", partition.ku_fraction},
                           {"seed", partition.seed},
                           {"seed_policy", partition.seed_policy == SeedPolicy::fixed
                                               ? "fixed"
                                               : "per_run"},
                           {"ku_unit", partition.ku_unit == KuUnit::classes
                                           ? "classes"
                                           : "samples"}}}};
  switch (source) {
    case SourceKind::synthetic:
      dataset["synthetic"] = {{"n_classes", synthetic.n_classes},
                              {"train_per_class", synthetic.train_per_class},
                              {"test_per_class", synthetic.test_per_class},
                              {"dim", synthetic.dim},
                              {"class_separation", synthetic.class_separation},
                              {"data_seed", synthetic.data_seed}};
      break;
    case SourceKind::idx:
      dataset["idx"] = {{"train_images", idx.train_images},
                        {"train_labels", idx.train_labels},
                        {"test_images", idx.test_images},
                        {"test_labels", idx.test_labels},
                        {"normalization",
                         {{"mean", idx.normalization.mean},
                          {"std", idx.normalization.stddev}}}};
      break;
    case SourceKind::container:
      dataset["container"] = {{"train", container.train},
                              {"test", container.test}};
      break;
  }

  return nlohmann::json{
      {"dataset", dataset},
      {"embedding", model_to_json(embedding, true)},
      {"classifier", model_to_json(classifier, false)},
      {"loss",
       {{"margin", loss.margin},
        {"mining", mining_strategy_name(loss.strategy)}}},
      {"threshold", threshold.to_json()},
      {"eval",
       {{"tpr_grid", eval.tpr_grid},
        {"ccr_denominator",
         eval.accepted_only_denominator ? "accepted_only" : "all_knowns"},
        {"projection_max_points", eval.projection_max_points}}},
      {"seeds", seeds},
      {"output_dir", output_dir},
      {"deterministic", deterministic},
      {"jobs", jobs}};
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  c.eval.tpr_grid = default_tpr_grid();

  if (j.contains("dataset")) {
    const auto& d = j.at("dataset");
    c.source = source_from_string(d.value("source", "synthetic"));
    if (d.contains("synthetic")) {
      const auto& s = d.at("synthetic");
      c.synthetic.n_classes = s.value("n_classes", c.synthetic.n_classes);
      c.synthetic.train_per_class =
          s.value("train_per_class", c.synthetic.train_per_class);
      c.synthetic.test_per_class =
          s.value("test_per_class", c.synthetic.test_per_class);
      c.synthetic.dim = s.value("dim", c.synthetic.dim);
      c.synthetic.class_separation =
          s.value("class_separation", c.synthetic.class_separation);
      c.synthetic.data_seed = s.value("data_seed", c.synthetic.data_seed);
    }
    if (d.contains("idx")) {
      const auto& s = d.at("idx");
      c.idx.train_images = s.value("train_images", "");
      c.idx.train_labels = s.value("train_labels", "");
      c.idx.test_images = s.value("test_images", "");
      c.idx.test_labels = s.value("test_labels", "");
      if (s.contains("normalization")) {
        c.idx.normalization.mean = s.at("normalization").value("mean", 0.1307);
        c.idx.normalization.stddev =
            s.at("normalization").value("std", 0.3081);
      }
    }
    if (d.contains("container")) {
      c.container.train = d.at("container").value("train", "");
      c.container.test = d.at("container").value("test", "");
    }
    if (d.contains("partition")) {
      const auto& p = d.at("partition");
      c.partition.n_known = p.value("n_known", c.partition.n_known);
      c.partition.ku_fraction = p.value("ku_fraction", c.partition.ku_fraction);
      c.partition.seed = p.value("seed", c.partition.seed);
      const std::string policy = p.value("seed_policy", "fixed");
      if (policy == "fixed")
        c.partition.seed_policy = SeedPolicy::fixed;
      else if (policy == "per_run")
        c.partition.seed_policy = SeedPolicy::per_run;
      else
        throw ConfigError("config: unknown partition seed_policy '" + policy +
                          "'");
      const std::string unit = p.value("ku_unit", "classes");
      if (unit == "classes")
        c.partition.ku_unit = KuUnit::classes;
      else if (unit == "samples")
        c.partition.ku_unit = KuUnit::samples;
      else
        throw ConfigError("config: unknown partition ku_unit '" + unit + "'");
    }
  }

  if (j.contains("embedding"))
    c.embedding = model_from_json(j.at("embedding"), c.embedding);
  if (j.contains("classifier"))
    c.classifier = model_from_json(j.at("classifier"), c.classifier);

  if (j.contains("loss")) {
    const auto& l = j.at("loss");
    c.loss.margin = l.value("margin", c.loss.margin);
    c.loss.strategy =
        mining_strategy_from_string(l.value("mining", "combined"));
  }
  if (j.contains("threshold"))
    c.threshold = ThresholdPolicy::from_json(j.at("threshold"));
  if (j.contains("eval")) {
    const auto& e = j.at("eval");
    if (e.contains("tpr_grid"))
      c.eval.tpr_grid = e.at("tpr_grid").get<std::vector<double>>();
    const std::string denom = e.value("ccr_denominator", "all_knowns");
    if (denom == "all_knowns")
      c.eval.accepted_only_denominator = false;
    else if (denom == "accepted_only")
      c.eval.accepted_only_denominator = true;
    else
      throw ConfigError("config: unknown ccr_denominator '" + denom + "'");
    c.eval.projection_max_points =
        e.value("projection_max_points", c.eval.projection_max_points);
  }

  if (j.contains("seeds"))
    c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  c.output_dir = j.value("output_dir", c.output_dir);
  c.deterministic = j.value("deterministic", c.deterministic);
  c.jobs = j.value("jobs", c.jobs);

  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::from_file(
    const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config: " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  return from_json(j);
}

nlohmann::json ExperimentConfig::canonical_json() const {
  nlohmann::json j = to_json();
  j.erase("output_dir");
  j.erase("jobs");
  j.erase("deterministic");
  return j;
}

std::string ExperimentConfig::hash() const {
  const std::uint64_t h = fnv1a64(canonical_json().dump());
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << h;
  return os.str();
}

}  // namespace casdc
