#include "casdc/embedding.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "casdc/errors.hpp"

namespace casdc {

namespace {

std::size_t shape_size(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

}  // namespace

EmbeddingModel make_embedding_mlp(std::size_t in_dim,
                                  const std::vector<std::size_t>& hidden,
                                  std::size_t embed_dim, bool l2norm,
                                  Rng& rng) {
  EmbeddingModel m;
  m.architecture_id = mlp_architecture_id(in_dim, hidden, embed_dim, l2norm);
  m.net = make_network(m.architecture_id);
  m.net.init_params(rng);
  m.embed_dim = embed_dim;
  m.feature_shape = {in_dim};
  return m;
}

EmbeddingModel make_embedding_convnet(const std::vector<std::size_t>& shape,
                                      const std::vector<std::size_t>& channels,
                                      std::size_t embed_dim, bool l2norm,
                                      Rng& rng) {
  EmbeddingModel m;
  m.architecture_id =
      convnet_architecture_id(shape, channels, embed_dim, l2norm);
  m.net = make_network(m.architecture_id);
  m.net.init_params(rng);
  m.embed_dim = embed_dim;
  m.feature_shape = shape;
  return m;
}

Matrix embed(const EmbeddingModel& model, const Matrix& x) {
  if (x.cols() != static_cast<Eigen::Index>(shape_size(model.feature_shape)))
    throw ShapeError("embed: input width " + std::to_string(x.cols()) +
                     " does not match model feature size " +
                     std::to_string(shape_size(model.feature_shape)));
  Matrix e = model.net.forward(x);
  if (e.cols() != static_cast<Eigen::Index>(model.embed_dim))
    throw ShapeError("embed: network output width does not match embed_dim");
  if (!e.allFinite()) throw TrainingError("embed: non-finite embedding");
  return e;
}

Vector embed_one(const EmbeddingModel& model,
                 const std::vector<double>& features) {
  Matrix x(1, static_cast<Eigen::Index>(features.size()));
  for (std::size_t i = 0; i < features.size(); ++i)
    x(0, static_cast<Eigen::Index>(i)) = features[i];
  return embed(model, x).row(0).transpose();
}

MiningStrategy mining_strategy_from_string(const std::string& s) {
  if (s == "semihard") return MiningStrategy::semihard;
  if (s == "hard") return MiningStrategy::hard;
  if (s == "combined") return MiningStrategy::combined;
  throw ConfigError("unknown mining strategy '" + s + "'");
}

const char* mining_strategy_name(MiningStrategy s) {
  switch (s) {
    case MiningStrategy::semihard:
      return "semihard";
    case MiningStrategy::hard:
      return "hard";
    case MiningStrategy::combined:
      return "combined";
  }
  return "?";
}

void TripletLossConfig::validate() const {
  if (!(margin > 0.0 && margin <= 2.0))
    throw ConfigError("triplet loss margin must lie in (0, 2], got " +
                      std::to_string(margin));
}

namespace {

void check_triplet_indices(const Matrix& embeddings,
                           const std::vector<Triplet>& triplets) {
  const int n = static_cast<int>(embeddings.rows());
  for (const Triplet& t : triplets) {
    if (t.anchor < 0 || t.anchor >= n || t.positive < 0 || t.positive >= n ||
        t.negative < 0 || t.negative >= n)
      throw ShapeError("triplet index out of range");
  }
}

double hinge_term(const Matrix& e, const Triplet& t, double margin) {
  const double dp = (e.row(t.anchor) - e.row(t.positive)).squaredNorm();
  const double dn = (e.row(t.anchor) - e.row(t.negative)).squaredNorm();
  return dp - dn + margin;
}

}  // namespace

TripletLossResult triplet_loss(const Matrix& embeddings,
                               const std::vector<Triplet>& triplets,
                               double margin) {
  if (margin <= 0.0) throw ConfigError("triplet_loss: margin must be positive");
  if (triplets.empty()) return {0.0, true};
  check_triplet_indices(embeddings, triplets);
  double total = 0.0;
  for (const Triplet& t : triplets)
    total += std::max(0.0, hinge_term(embeddings, t, margin));
  return {total / static_cast<double>(triplets.size()), false};
}

Matrix triplet_loss_grad(const Matrix& embeddings,
                         const std::vector<Triplet>& triplets, double margin) {
  if (margin <= 0.0) throw ConfigError("triplet_loss: margin must be positive");
  Matrix grad = Matrix::Zero(embeddings.rows(), embeddings.cols());
  if (triplets.empty()) return grad;
  check_triplet_indices(embeddings, triplets);
  const double scale = 1.0 / static_cast<double>(triplets.size());
  for (const Triplet& t : triplets) {
    if (hinge_term(embeddings, t, margin) <= 0.0) continue;
    const auto ea = embeddings.row(t.anchor);
    const auto ep = embeddings.row(t.positive);
    const auto en = embeddings.row(t.negative);
    grad.row(t.anchor) += scale * 2.0 * (en - ep);
    grad.row(t.positive) += scale * 2.0 * (ep - ea);
    grad.row(t.negative) += scale * 2.0 * (ea - en);
  }
  return grad;
}

std::vector<Triplet> mine_triplets(const Matrix& embeddings,
                                   const std::vector<Role>& roles,
                                   MiningStrategy strategy, double margin,
                                   std::uint64_t seed) {
  if (roles.size() != static_cast<std::size_t>(embeddings.rows()))
    throw ShapeError("mine_triplets: one role flag per embedding row required");
  if (margin <= 0.0)
    throw ConfigError("mine_triplets: margin must be positive");

  std::vector<int> kk, ku;
  for (std::size_t i = 0; i < roles.size(); ++i) {
    if (roles[i] == Role::KK)
      kk.push_back(static_cast<int>(i));
    else if (roles[i] == Role::KU)
      ku.push_back(static_cast<int>(i));
  }
  if (kk.size() < 2)
    throw MiningError("mine_triplets: need at least 2 known-known samples, got " +
                      std::to_string(kk.size()));
  if (ku.empty())
    throw MiningError("mine_triplets: need at least 1 known-unknown sample");

  auto d2 = [&](int a, int b) {
    return (embeddings.row(a) - embeddings.row(b)).squaredNorm();
  };

  auto enumerate = [&](bool hard_band, auto&& pick_positive) {
    std::vector<Triplet> out;
    for (int a : kk) {
      const int p = pick_positive(a);
      const double dp = d2(a, p);
      for (int n : ku) {
        const double dn = d2(a, n);
        const bool qualifies =
            hard_band ? (dn < dp) : (dp <= dn && dn < dp + margin);
        if (qualifies) out.push_back({a, p, n});
      }
    }
    return out;
  };

  auto hardest_positive = [&](int a) {
    int best = -1;
    double best_d = -1.0;
    for (int p : kk) {
      if (p == a) continue;
      const double d = d2(a, p);
      if (d > best_d) {
        best_d = d;
        best = p;
      }
    }
    return best;
  };

  auto random_positive_picker = [&]() {
    // One uniform draw per anchor in index order.
    auto rng = std::make_shared<Rng>(seed);
    return [&, rng](int a) {
      std::vector<int> others;
      others.reserve(kk.size() - 1);
      for (int p : kk)
        if (p != a) others.push_back(p);
      return others[static_cast<std::size_t>(
          rng->below(static_cast<std::uint64_t>(others.size())))];
    };
  };

  switch (strategy) {
    case MiningStrategy::hard:
      return enumerate(true, hardest_positive);
    case MiningStrategy::semihard:
      return enumerate(false, random_positive_picker());
    case MiningStrategy::combined: {
      std::vector<Triplet> out = enumerate(true, hardest_positive);
      std::vector<Triplet> semi = enumerate(false, random_positive_picker());
      out.insert(out.end(), semi.begin(), semi.end());
      return out;
    }
  }
  throw ConfigError("mine_triplets: unknown strategy");
}

void write_telemetry_csv(const std::vector<EpochStats>& stats,
                         const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << "epoch,mean_loss,mined_triplet_count\n";
  char buf[64];
  for (const EpochStats& s : stats) {
    std::snprintf(buf, sizeof(buf), "%.17g", s.mean_loss);
    out << s.epoch << "," << buf << "," << s.triplet_count << "\n";
  }
}

EmbeddingModel train_embedding(const Dataset& train_kk, const Dataset& train_ku,
                               const EmbeddingModel& model_init,
                               const TripletLossConfig& loss_cfg,
                               const TrainConfig& train_cfg,
                               std::vector<EpochStats>* telemetry) {
  loss_cfg.validate();
  train_cfg.validate();
  if (train_ku.size() == 0)
    throw ConfigError(
        "train_embedding: the known-unknown set is empty; the method "
        "requires known unknowns during training");
  if (train_kk.size() < 2)
    throw ConfigError("train_embedding: need at least 2 known-known samples");
  if (train_kk.feature_shape != model_init.feature_shape ||
      train_ku.feature_shape != model_init.feature_shape)
    throw ShapeError("train_embedding: dataset shape does not match model");
  if (train_cfg.batch_size < 3)
    throw ConfigError(
        "train_embedding: batch_size must be >= 3 (2 known knowns + 1 known "
        "unknown)");

  EmbeddingModel model = model_init;
  if (telemetry) telemetry->clear();
  if (train_cfg.epochs == 0) return model;

  const std::size_t nkk = train_kk.size();
  const std::size_t nku = train_ku.size();
  const std::size_t batch = static_cast<std::size_t>(train_cfg.batch_size);

  // Balanced batches: half known knowns, half known unknowns, with the KU
  // stream cycling (and reshuffling) as often as needed. Balancing the two
  // roles keeps anchor and negative gradient mass comparable regardless of
  // pool sizes.
  const std::size_t kk_per_batch =
      std::clamp<std::size_t>(batch / 4, 2, batch - 1);
  const std::size_t ku_per_batch = batch - kk_per_batch;
  const std::size_t batches =
      std::max<std::size_t>(1, nkk / kk_per_batch);

  Rng order_rng(derive_seed(train_cfg.seed, "batch-order"));
  const std::uint64_t mining_base = derive_seed(train_cfg.seed, "mining");

  std::vector<std::size_t> kk_order(nkk), ku_order(nku);
  for (std::size_t i = 0; i < nkk; ++i) kk_order[i] = i;
  for (std::size_t i = 0; i < nku; ++i) ku_order[i] = i;
  std::size_t ku_cursor = 0;
  order_rng.shuffle(ku_order);

  const SgdConfig sgd{train_cfg.learning_rate, train_cfg.weight_decay};
  std::vector<Matrix*> params = model.net.parameters();

  std::vector<Role> roles(kk_per_batch, Role::KK);
  roles.resize(batch, Role::KU);

  for (int epoch = 0; epoch < train_cfg.epochs; ++epoch) {
    order_rng.shuffle(kk_order);
    double hinge_sum = 0.0;
    std::size_t mined_total = 0;

    for (std::size_t b = 0; b < batches; ++b) {
      std::vector<std::size_t> kk_idx, ku_idx;
      kk_idx.reserve(kk_per_batch);
      for (std::size_t i = 0; i < kk_per_batch; ++i)
        kk_idx.push_back(kk_order[(b * kk_per_batch + i) % nkk]);
      ku_idx.reserve(ku_per_batch);
      for (std::size_t i = 0; i < ku_per_batch; ++i) {
        if (ku_cursor == nku) {
          order_rng.shuffle(ku_order);
          ku_cursor = 0;
        }
        ku_idx.push_back(ku_order[ku_cursor++]);
      }

      Matrix x(static_cast<Eigen::Index>(batch),
               static_cast<Eigen::Index>(train_kk.feature_size()));
      x.topRows(static_cast<Eigen::Index>(kk_per_batch)) =
          train_kk.feature_matrix(kk_idx);
      x.bottomRows(static_cast<Eigen::Index>(ku_per_batch)) =
          train_ku.feature_matrix(ku_idx);

      std::vector<std::any> caches;
      const Matrix embeddings = model.net.forward(x, caches);
      if (!embeddings.allFinite())
        throw TrainingError("train_embedding: non-finite embeddings at epoch " +
                            std::to_string(epoch));

      const std::uint64_t mining_seed = splitmix64(
          mining_base ^ (static_cast<std::uint64_t>(epoch) * 1000003ULL +
                         static_cast<std::uint64_t>(b)));
      const std::vector<Triplet> triplets = mine_triplets(
          embeddings, roles, loss_cfg.strategy, loss_cfg.margin, mining_seed);
      mined_total += triplets.size();

      if (!triplets.empty()) {
        const TripletLossResult lr =
            triplet_loss(embeddings, triplets, loss_cfg.margin);
        if (!std::isfinite(lr.loss))
          throw TrainingError("train_embedding: loss diverged at epoch " +
                              std::to_string(epoch));
        hinge_sum += lr.loss * static_cast<double>(triplets.size());

        const Matrix dloss =
            triplet_loss_grad(embeddings, triplets, loss_cfg.margin);
        std::vector<Matrix> grads;
        model.net.backward(dloss, caches, grads);
        sgd_step(params, grads, sgd);
      } else {
        // No violating triplets: the data term vanishes but the L2
        // regularizer still applies.
        std::vector<Matrix> zeros;
        zeros.reserve(params.size());
        for (Matrix* p : params)
          zeros.emplace_back(Matrix::Zero(p->rows(), p->cols()));
        sgd_step(params, zeros, sgd);
      }
    }

    if (telemetry) {
      EpochStats s;
      s.epoch = epoch;
      s.mean_loss =
          mined_total ? hinge_sum / static_cast<double>(mined_total) : 0.0;
      s.triplet_count = mined_total;
      telemetry->push_back(s);
    }
  }
  return model;
}

}  // namespace casdc
