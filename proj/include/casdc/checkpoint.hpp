#pragma once

#include <filesystem>
#include <string>

#include "casdc/classifier.hpp"
#include "casdc/embedding.hpp"

namespace casdc {

// Checkpoints are tensor containers holding a JSON "meta" entry
// (kind, architecture_id, dims, class-id mapping, train config hash) plus
// one f64 entry per parameter tensor ("param0", "param1", ...). Loading
// rebuilds the network from the architecture id and validates every shape.

void save_embedding_checkpoint(const EmbeddingModel& model,
                               const std::filesystem::path& path,
                               const std::string& train_config_hash);
EmbeddingModel load_embedding_checkpoint(const std::filesystem::path& path);

void save_classifier_checkpoint(const ClassifierModel& model,
                                const std::filesystem::path& path,
                                const std::string& train_config_hash);
ClassifierModel load_classifier_checkpoint(const std::filesystem::path& path);

}  // namespace casdc
