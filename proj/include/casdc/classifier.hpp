#pragma once

#include <string>
#include <vector>

#include "casdc/dataset.hpp"
#include "casdc/net.hpp"

namespace casdc {

// Closed-set classifier f: features -> C logits. Trained on known knowns
// only; it never sees KU or UU data. Dataset class ids are remapped to the
// contiguous head indices through class_ids (sorted ascending), which is
// persisted with the checkpoint.
struct ClassifierModel {
  Network net;
  int n_classes = 0;
  std::string architecture_id;
  std::vector<std::size_t> feature_shape;
  std::vector<int> class_ids;  // sorted; head index i predicts class_ids[i]

  int head_index_of(int class_label) const;  // throws DataError if unknown
};

ClassifierModel make_classifier_mlp(std::size_t in_dim,
                                    const std::vector<std::size_t>& hidden,
                                    const std::vector<int>& class_ids, Rng& rng);
ClassifierModel make_classifier_convnet(
    const std::vector<std::size_t>& shape,
    const std::vector<std::size_t>& channels, const std::vector<int>& class_ids,
    Rng& rng);

// Mean cross-entropy of logits rows against head-index targets, and its
// gradient (softmax minus one-hot, scaled by 1/batch).
double cross_entropy_loss(const Matrix& logits, const std::vector<int>& targets);
Matrix cross_entropy_grad(const Matrix& logits, const std::vector<int>& targets);

// SGD + L2 training. train_kk must cover every class id of the model;
// zero epochs returns the initial model unchanged.
ClassifierModel train_classifier(const Dataset& train_kk,
                                 const ClassifierModel& model_init,
                                 const TrainConfig& train_cfg,
                                 std::vector<EpochStats>* telemetry = nullptr);

struct Classification {
  int predicted_class = 0;  // original dataset class id
  Vector logits;
};

// Argmax with ties broken toward the lowest class id.
Classification classify(const ClassifierModel& model,
                        const std::vector<double>& features);
Matrix logits_batch(const ClassifierModel& model, const Matrix& x);

}  // namespace casdc
