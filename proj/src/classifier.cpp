#include "casdc/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "casdc/errors.hpp"

namespace casdc {

namespace {

std::vector<int> sorted_unique(std::vector<int> ids) {
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  return ids;
}

std::size_t shape_size(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

}  // namespace

int ClassifierModel::head_index_of(int class_label) const {
  const auto it =
      std::lower_bound(class_ids.begin(), class_ids.end(), class_label);
  if (it == class_ids.end() || *it != class_label)
    throw DataError("class " + std::to_string(class_label) +
                    " is not in the classifier's class set");
  return static_cast<int>(it - class_ids.begin());
}

ClassifierModel make_classifier_mlp(std::size_t in_dim,
                                    const std::vector<std::size_t>& hidden,
                                    const std::vector<int>& class_ids,
                                    Rng& rng) {
  ClassifierModel m;
  m.class_ids = sorted_unique(class_ids);
  m.n_classes = static_cast<int>(m.class_ids.size());
  if (m.n_classes < 2)
    throw ConfigError("classifier needs at least 2 classes, got " +
                      std::to_string(m.n_classes));
  m.architecture_id = mlp_architecture_id(
      in_dim, hidden, static_cast<std::size_t>(m.n_classes), false);
  m.net = make_network(m.architecture_id);
  m.net.init_params(rng);
  m.feature_shape = {in_dim};
  return m;
}

ClassifierModel make_classifier_convnet(
    const std::vector<std::size_t>& shape,
    const std::vector<std::size_t>& channels, const std::vector<int>& class_ids,
    Rng& rng) {
  ClassifierModel m;
  m.class_ids = sorted_unique(class_ids);
  m.n_classes = static_cast<int>(m.class_ids.size());
  if (m.n_classes < 2)
    throw ConfigError("classifier needs at least 2 classes, got " +
                      std::to_string(m.n_classes));
  m.architecture_id = convnet_architecture_id(
      shape, channels, static_cast<std::size_t>(m.n_classes), false);
  m.net = make_network(m.architecture_id);
  m.net.init_params(rng);
  m.feature_shape = shape;
  return m;
}

double cross_entropy_loss(const Matrix& logits,
                          const std::vector<int>& targets) {
  if (targets.size() != static_cast<std::size_t>(logits.rows()))
    throw ShapeError("cross_entropy: one target per row required");
  double total = 0.0;
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const int y = targets[static_cast<std::size_t>(r)];
    if (y < 0 || y >= logits.cols())
      throw ShapeError("cross_entropy: target out of range");
    const double m = logits.row(r).maxCoeff();
    const double lse =
        m + std::log((logits.row(r).array() - m).exp().sum());
    total += lse - logits(r, y);
  }
  return total / static_cast<double>(logits.rows());
}

Matrix cross_entropy_grad(const Matrix& logits,
                          const std::vector<int>& targets) {
  if (targets.size() != static_cast<std::size_t>(logits.rows()))
    throw ShapeError("cross_entropy: one target per row required");
  Matrix grad(logits.rows(), logits.cols());
  const double scale = 1.0 / static_cast<double>(logits.rows());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double m = logits.row(r).maxCoeff();
    Eigen::RowVectorXd p = (logits.row(r).array() - m).exp();
    p /= p.sum();
    grad.row(r) = scale * p;
    grad(r, targets[static_cast<std::size_t>(r)]) -= scale;
  }
  return grad;
}

ClassifierModel train_classifier(const Dataset& train_kk,
                                 const ClassifierModel& model_init,
                                 const TrainConfig& train_cfg,
                                 std::vector<EpochStats>* telemetry) {
  train_cfg.validate();
  if (model_init.n_classes < 2)
    throw ConfigError("train_classifier: C must be >= 2");
  if (train_kk.feature_shape != model_init.feature_shape)
    throw ShapeError("train_classifier: dataset shape does not match model");

  // Coverage: every model class must appear in the training set.
  {
    std::set<int> present;
    for (const LabeledSample& s : train_kk.samples)
      present.insert(s.class_label);
    std::vector<int> missing;
    for (int c : model_init.class_ids)
      if (!present.count(c)) missing.push_back(c);
    if (!missing.empty()) {
      std::ostringstream os;
      os << "train_classifier: classes missing from train_KK: [";
      for (std::size_t i = 0; i < missing.size(); ++i)
        os << (i ? "," : "") << missing[i];
      os << "]";
      throw DataError(os.str());
    }
  }

  ClassifierModel model = model_init;
  if (telemetry) telemetry->clear();
  if (train_cfg.epochs == 0) return model;

  const std::size_t n = train_kk.size();
  std::vector<int> head_targets(n);
  for (std::size_t i = 0; i < n; ++i)
    head_targets[i] = model.head_index_of(train_kk.samples[i].class_label);

  Rng order_rng(derive_seed(train_cfg.seed, "batch-order"));
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;

  const std::size_t batch = static_cast<std::size_t>(train_cfg.batch_size);
  const SgdConfig sgd{train_cfg.learning_rate, train_cfg.weight_decay};
  std::vector<Matrix*> params = model.net.parameters();

  for (int epoch = 0; epoch < train_cfg.epochs; ++epoch) {
    order_rng.shuffle(order);
    double loss_sum = 0.0;

    for (std::size_t start = 0; start < n; start += batch) {
      const std::size_t count = std::min(batch, n - start);
      std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                   order.begin() + static_cast<std::ptrdiff_t>(start + count));
      const Matrix x = train_kk.feature_matrix(idx);
      std::vector<int> targets(count);
      for (std::size_t i = 0; i < count; ++i) targets[i] = head_targets[idx[i]];

      std::vector<std::any> caches;
      const Matrix logits = model.net.forward(x, caches);
      const double loss = cross_entropy_loss(logits, targets);
      if (!std::isfinite(loss))
        throw TrainingError("train_classifier: loss diverged at epoch " +
                            std::to_string(epoch));
      loss_sum += loss * static_cast<double>(count);

      std::vector<Matrix> grads;
      model.net.backward(cross_entropy_grad(logits, targets), caches, grads);
      sgd_step(params, grads, sgd);
    }

    if (telemetry)
      telemetry->push_back(
          {epoch, loss_sum / static_cast<double>(n), 0});
  }
  return model;
}

Classification classify(const ClassifierModel& model,
                        const std::vector<double>& features) {
  if (features.size() != shape_size(model.feature_shape))
    throw ShapeError("classify: input size does not match model feature shape");
  Matrix x(1, static_cast<Eigen::Index>(features.size()));
  for (std::size_t i = 0; i < features.size(); ++i)
    x(0, static_cast<Eigen::Index>(i)) = features[i];
  const Matrix logits = model.net.forward(x);

  Eigen::Index best = 0;
  for (Eigen::Index c = 1; c < logits.cols(); ++c)
    if (logits(0, c) > logits(0, best)) best = c;  // strict: ties keep lowest

  Classification out;
  out.predicted_class = model.class_ids.at(static_cast<std::size_t>(best));
  out.logits = logits.row(0).transpose();
  return out;
}

Matrix logits_batch(const ClassifierModel& model, const Matrix& x) {
  if (x.cols() != static_cast<Eigen::Index>(shape_size(model.feature_shape)))
    throw ShapeError("logits_batch: input width does not match model");
  return model.net.forward(x);
}

}  // namespace casdc
