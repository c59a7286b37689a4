#include "casdc/checkpoint.hpp"

#include <nlohmann/json.hpp>

#include "casdc/container.hpp"
#include "casdc/errors.hpp"

namespace casdc {

namespace {

TensorEntry meta_entry(const nlohmann::json& meta) {
  const std::string s = meta.dump();
  std::vector<std::uint8_t> bytes(s.begin(), s.end());
  return {"meta", {bytes.size()}, std::move(bytes)};
}

nlohmann::json parse_meta(const std::vector<TensorEntry>& entries) {
  const TensorEntry& e = find_entry(entries, "meta");
  const auto& bytes = e.u8();
  try {
    return nlohmann::json::parse(bytes.begin(), bytes.end());
  } catch (const nlohmann::json::exception& ex) {
    throw FormatError(std::string("checkpoint: bad meta entry: ") + ex.what());
  }
}

void append_params(std::vector<TensorEntry>& entries, const Network& net) {
  const auto params = net.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Matrix& p = *params[i];
    std::vector<double> data(static_cast<std::size_t>(p.size()));
    for (Eigen::Index r = 0; r < p.rows(); ++r)
      for (Eigen::Index c = 0; c < p.cols(); ++c)
        data[static_cast<std::size_t>(r * p.cols() + c)] = p(r, c);
    entries.push_back({"param" + std::to_string(i),
                       {static_cast<std::uint64_t>(p.rows()),
                        static_cast<std::uint64_t>(p.cols())},
                       std::move(data)});
  }
}

void restore_params(const std::vector<TensorEntry>& entries, Network& net) {
  auto params = net.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const TensorEntry& e = find_entry(entries, "param" + std::to_string(i));
    Matrix& p = *params[i];
    if (e.shape.size() != 2 ||
        e.shape[0] != static_cast<std::uint64_t>(p.rows()) ||
        e.shape[1] != static_cast<std::uint64_t>(p.cols()))
      throw FormatError("checkpoint: param" + std::to_string(i) +
                        " shape does not match the architecture");
    const auto& data = e.f64();
    for (Eigen::Index r = 0; r < p.rows(); ++r)
      for (Eigen::Index c = 0; c < p.cols(); ++c)
        p(r, c) = data[static_cast<std::size_t>(r * p.cols() + c)];
  }
}

std::vector<std::size_t> shape_from_json(const nlohmann::json& j) {
  return j.get<std::vector<std::size_t>>();
}

}  // namespace

void save_embedding_checkpoint(const EmbeddingModel& model,
                               const std::filesystem::path& path,
                               const std::string& train_config_hash) {
  nlohmann::json meta{{"kind", "embedding"},
                      {"architecture_id", model.architecture_id},
                      {"embed_dim", model.embed_dim},
                      {"feature_shape", model.feature_shape},
                      {"train_config_hash", train_config_hash}};
  std::vector<TensorEntry> entries{meta_entry(meta)};
  append_params(entries, model.net);
  write_tensor_container(path, entries);
}

EmbeddingModel load_embedding_checkpoint(const std::filesystem::path& path) {
  const auto entries = read_tensor_container(path);
  const nlohmann::json meta = parse_meta(entries);
  if (meta.value("kind", "") != "embedding")
    throw FormatError("checkpoint: not an embedding checkpoint: " +
                      path.string());
  EmbeddingModel m;
  m.architecture_id = meta.at("architecture_id").get<std::string>();
  m.embed_dim = meta.at("embed_dim").get<std::size_t>();
  m.feature_shape = shape_from_json(meta.at("feature_shape"));
  m.net = make_network(m.architecture_id);
  if (architecture_output_dim(m.architecture_id) != m.embed_dim)
    throw FormatError("checkpoint: embed_dim disagrees with architecture");
  restore_params(entries, m.net);
  return m;
}

void save_classifier_checkpoint(const ClassifierModel& model,
                                const std::filesystem::path& path,
                                const std::string& train_config_hash) {
  nlohmann::json meta{{"kind", "classifier"},
                      {"architecture_id", model.architecture_id},
                      {"n_classes", model.n_classes},
                      {"class_ids", model.class_ids},
                      {"feature_shape", model.feature_shape},
                      {"train_config_hash", train_config_hash}};
  std::vector<TensorEntry> entries{meta_entry(meta)};
  append_params(entries, model.net);
  write_tensor_container(path, entries);
}

ClassifierModel load_classifier_checkpoint(const std::filesystem::path& path) {
  const auto entries = read_tensor_container(path);
  const nlohmann::json meta = parse_meta(entries);
  if (meta.value("kind", "") != "classifier")
    throw FormatError("checkpoint: not a classifier checkpoint: " +
                      path.string());
  ClassifierModel m;
  m.architecture_id = meta.at("architecture_id").get<std::string>();
  m.n_classes = meta.at("n_classes").get<int>();
  m.class_ids = meta.at("class_ids").get<std::vector<int>>();
  m.feature_shape = shape_from_json(meta.at("feature_shape"));
  if (static_cast<int>(m.class_ids.size()) != m.n_classes)
    throw FormatError("checkpoint: class mapping size disagrees with n_classes");
  m.net = make_network(m.architecture_id);
  if (architecture_output_dim(m.architecture_id) !=
      static_cast<std::size_t>(m.n_classes))
    throw FormatError("checkpoint: head width disagrees with n_classes");
  restore_params(entries, m.net);
  return m;
}

}  // namespace casdc
