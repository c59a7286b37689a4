#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "casdc/dataset.hpp"
#include "casdc/net.hpp"

namespace casdc {

// Embedding network g: features -> R^d. Trained to pull known knowns
// together and push known unknowns at least a squared-distance margin away.
struct EmbeddingModel {
  Network net;
  std::size_t embed_dim = 128;
  std::string architecture_id;
  std::vector<std::size_t> feature_shape;
};

// Builds an uninitialized-weights model; call with an Rng to get
// deterministic He-initialized parameters.
EmbeddingModel make_embedding_mlp(std::size_t in_dim,
                                  const std::vector<std::size_t>& hidden,
                                  std::size_t embed_dim, bool l2norm,
                                  Rng& rng);
EmbeddingModel make_embedding_convnet(const std::vector<std::size_t>& shape,
                                      const std::vector<std::size_t>& channels,
                                      std::size_t embed_dim, bool l2norm,
                                      Rng& rng);

// Batched embedding: rows of x are flattened samples, rows of the result the
// corresponding d-vectors. A batched call equals stacked single calls.
Matrix embed(const EmbeddingModel& model, const Matrix& x);
Vector embed_one(const EmbeddingModel& model,
                 const std::vector<double>& features);

// Indices into one batch. Anchor and positive are known knowns, the negative
// is a known unknown.
struct Triplet {
  int anchor = 0;
  int positive = 0;
  int negative = 0;

  bool operator==(const Triplet&) const = default;
};

enum class MiningStrategy { semihard, hard, combined };

MiningStrategy mining_strategy_from_string(const std::string& s);
const char* mining_strategy_name(MiningStrategy s);

struct TripletLossConfig {
  double margin = 0.1;
  MiningStrategy strategy = MiningStrategy::combined;
  // Reduction over mined triplets is fixed to the mean.

  void validate() const;  // margin must lie in (0, 2]
};

struct TripletLossResult {
  double loss = 0.0;
  bool empty = false;  // no triplets were supplied; loss defined as 0
};

// Mean over triplets of max(0, ||e_a - e_p||^2 - ||e_a - e_n||^2 + margin).
TripletLossResult triplet_loss(const Matrix& embeddings,
                               const std::vector<Triplet>& triplets,
                               double margin);

// Gradient of triplet_loss w.r.t. the embedding coordinates. Triplets
// sitting exactly on the hinge contribute zero.
Matrix triplet_loss_grad(const Matrix& embeddings,
                         const std::vector<Triplet>& triplets, double margin);

// Online miner. Every known-known row is an anchor. Positive selection:
//   hard     — the farthest known known (max d^2, ties to the lowest index)
//   semihard — a uniformly random known known (one draw per anchor from
//              Rng(seed), anchors visited in index order; the draw happens
//              even when no negative qualifies, keeping the stream aligned)
// Negatives, one triplet each:
//   hard     — every known unknown with d^2(a,n) <  d^2(a,p)
//   semihard — every known unknown with d^2(a,p) <= d^2(a,n) < d^2(a,p) + margin
//   combined — the hard enumeration followed by the semihard enumeration
// Output order: anchors ascending, negatives ascending within an anchor.
std::vector<Triplet> mine_triplets(const Matrix& embeddings,
                                   const std::vector<Role>& roles,
                                   MiningStrategy strategy, double margin,
                                   std::uint64_t seed);

// CSV columns: epoch, mean_loss, mined_triplet_count.
void write_telemetry_csv(const std::vector<EpochStats>& stats,
                         const std::filesystem::path& path);

// SGD training with per-batch online mining. Batches are balanced half
// known-known, half known-unknown (the KU stream cycles when exhausted).
// Deterministic for a fixed seed; zero epochs returns the initial model
// unchanged.
EmbeddingModel train_embedding(const Dataset& train_kk, const Dataset& train_ku,
                               const EmbeddingModel& model_init,
                               const TripletLossConfig& loss_cfg,
                               const TrainConfig& train_cfg,
                               std::vector<EpochStats>* telemetry = nullptr);

}  // namespace casdc
