#include <doctest.h>

#include "casdc/embedding.hpp"
#include "casdc/errors.hpp"
#include "test_support.hpp"

using namespace casdc;
using casdc_test::mine_bruteforce;
using casdc_test::rel_error;
using casdc_test::same_triplet_set;

namespace {

Matrix embeddings_1d(std::initializer_list<double> values) {
  Matrix m(static_cast<Eigen::Index>(values.size()), 1);
  Eigen::Index r = 0;
  for (double v : values) m(r++, 0) = v;
  return m;
}

}  // namespace

TEST_CASE("triplet loss worked examples") {
  // d2(a,p) = 0, d2(a,n) = 0.5: hinge clamps to zero at margin 0.1.
  {
    const Matrix e = embeddings_1d({0.0, 0.0, std::sqrt(0.5)});
    const auto r = triplet_loss(e, {{0, 1, 2}}, 0.1);
    CHECK(r.loss == 0.0);
    CHECK(!r.empty);
  }
  // Equidistant pair yields exactly the margin.
  {
    const double h = std::sqrt(0.5);
    const Matrix e = embeddings_1d({0.0, h, -h});
    const auto r = triplet_loss(e, {{0, 1, 2}}, 0.1);
    CHECK(r.loss == doctest::Approx(0.1).epsilon(1e-12));
  }
  // Mean of per-triplet losses 0.1 and 0 is 0.05.
  {
    const double h = std::sqrt(0.5);
    const Matrix e = embeddings_1d({0.0, h, -h, 10.0});
    const auto r = triplet_loss(e, {{0, 1, 2}, {0, 1, 3}}, 0.1);
    CHECK(r.loss == doctest::Approx(0.05).epsilon(1e-12));
  }
}

TEST_CASE("triplet loss edge cases") {
  const Matrix e = embeddings_1d({0.0, 1.0});
  const auto r = triplet_loss(e, {}, 0.1);
  CHECK(r.loss == 0.0);
  CHECK(r.empty);
  CHECK(triplet_loss_grad(e, {}, 0.1).isZero());

  CHECK_THROWS_AS(triplet_loss(e, {{0, 1, 5}}, 0.1), ShapeError);
  CHECK_THROWS_AS(triplet_loss(e, {{0, 1, 0}}, -1.0), ConfigError);
}

TEST_CASE("triplet loss nonnegativity over random inputs") {
  std::mt19937_64 gen(9);
  for (int iter = 0; iter < 100; ++iter) {
    Rng rng(gen());
    const int n = 4 + static_cast<int>(gen() % 12);
    Matrix e(n, 3);
    for (Eigen::Index r = 0; r < n; ++r)
      for (Eigen::Index c = 0; c < 3; ++c) e(r, c) = 2.0 * rng.gaussian();
    std::vector<Triplet> triplets;
    for (int t = 0; t < 8; ++t) {
      const int a = static_cast<int>(gen() % n);
      int p = static_cast<int>(gen() % n);
      if (p == a) p = (p + 1) % n;
      triplets.push_back({a, p, static_cast<int>(gen() % n)});
    }
    const double margin = 0.05 + 0.5 * (static_cast<double>(gen() % 100) / 100.0);
    CHECK(triplet_loss(e, triplets, margin).loss >= 0.0);
  }
}

TEST_CASE("triplet loss gradient matches finite differences away from the kink") {
  std::mt19937_64 gen(21);
  const double eps = 1e-6;
  for (int iter = 0; iter < 20; ++iter) {
    Rng rng(gen());
    const int n = 6;
    Matrix e(n, 4);
    for (Eigen::Index r = 0; r < n; ++r)
      for (Eigen::Index c = 0; c < 4; ++c) e(r, c) = rng.gaussian();
    const double margin = 0.3;
    std::vector<Triplet> triplets{{0, 1, 4}, {1, 2, 5}, {2, 0, 4}};

    // Skip configurations near the hinge kink where the derivative jumps.
    bool near_kink = false;
    for (const Triplet& t : triplets) {
      const double term = (e.row(t.anchor) - e.row(t.positive)).squaredNorm() -
                          (e.row(t.anchor) - e.row(t.negative)).squaredNorm() +
                          margin;
      if (std::abs(term) < 1e-3) near_kink = true;
    }
    if (near_kink) continue;

    const Matrix analytic = triplet_loss_grad(e, triplets, margin);
    for (Eigen::Index r = 0; r < n; ++r)
      for (Eigen::Index c = 0; c < 4; ++c) {
        Matrix ep = e, em = e;
        ep(r, c) += eps;
        em(r, c) -= eps;
        const double numeric = (triplet_loss(ep, triplets, margin).loss -
                                triplet_loss(em, triplets, margin).loss) /
                               (2 * eps);
        if (std::abs(numeric) < 1e-10 && std::abs(analytic(r, c)) < 1e-10)
          continue;
        CHECK(rel_error(numeric, analytic(r, c)) < 1e-4);
      }
  }
}

TEST_CASE("mining worked example in one dimension") {
  // KK anchors at 0 and 1, KU negatives at 0.5 and 1.3, margin 1.
  const Matrix e = embeddings_1d({0.0, 1.0, 0.5, 1.3});
  const std::vector<Role> roles{Role::KK, Role::KK, Role::KU, Role::KU};

  // Anchor 0 (positive must be 1, d2 = 1): hard band takes the 0.5 negative
  // (d2 = 0.25 < 1); semihard takes the 1.3 negative (1 <= 1.69 < 2).
  // Anchor 1 (positive 0, d2 = 1): both negatives fall in the hard band
  // (0.25 and 0.09), none in the semihard band.
  const auto hard = mine_triplets(e, roles, MiningStrategy::hard, 1.0, 0);
  CHECK(same_triplet_set(hard, {{0, 1, 2}, {1, 0, 2}, {1, 0, 3}}));

  const auto semi = mine_triplets(e, roles, MiningStrategy::semihard, 1.0, 0);
  CHECK(same_triplet_set(semi, {{0, 1, 3}}));

  const auto both = mine_triplets(e, roles, MiningStrategy::combined, 1.0, 0);
  CHECK(same_triplet_set(both, {{0, 1, 2}, {1, 0, 2}, {1, 0, 3}, {0, 1, 3}}));
}

TEST_CASE("mining returns nothing when negatives are out of every band") {
  const Matrix e = embeddings_1d({0.0, 0.1, 100.0});
  const std::vector<Role> roles{Role::KK, Role::KK, Role::KU};
  for (MiningStrategy s : {MiningStrategy::hard, MiningStrategy::semihard,
                           MiningStrategy::combined})
    CHECK(mine_triplets(e, roles, s, 1.0, 0).empty());
}

TEST_CASE("mining preconditions name the deficient role") {
  const Matrix e = embeddings_1d({0.0, 1.0, 2.0});
  CHECK_THROWS_WITH_AS(
      mine_triplets(e, {Role::KK, Role::KU, Role::KU}, MiningStrategy::hard,
                    0.5, 0),
      doctest::Contains("known-known"), MiningError);
  CHECK_THROWS_WITH_AS(
      mine_triplets(e, {Role::KK, Role::KK, Role::KK}, MiningStrategy::hard,
                    0.5, 0),
      doctest::Contains("known-unknown"), MiningError);
}

TEST_CASE("mining soundness and completeness against brute force") {
  std::mt19937_64 gen(33);
  for (int iter = 0; iter < 40; ++iter) {
    Rng rng(gen());
    const int n = 5 + static_cast<int>(gen() % 28);  // up to 32
    Matrix e(n, 3);
    for (Eigen::Index r = 0; r < n; ++r)
      for (Eigen::Index c = 0; c < 3; ++c) e(r, c) = rng.gaussian();
    std::vector<Role> roles(static_cast<std::size_t>(n), Role::KK);
    int ku_count = 0;
    for (int i = 0; i < n; ++i)
      if (gen() % 3 == 0) {
        roles[static_cast<std::size_t>(i)] = Role::KU;
        ++ku_count;
      }
    // Force the preconditions.
    if (ku_count == 0) {
      roles[static_cast<std::size_t>(n - 1)] = Role::KU;
      ku_count = 1;
    }
    if (n - ku_count < 2) {
      roles[0] = roles[1] = Role::KK;
    }
    const double margin = 0.1 + (static_cast<double>(gen() % 10)) / 10.0;
    const std::uint64_t seed = gen();

    for (MiningStrategy s : {MiningStrategy::hard, MiningStrategy::semihard,
                             MiningStrategy::combined}) {
      const auto mined = mine_triplets(e, roles, s, margin, seed);

      // Soundness: every triplet satisfies its band and role structure.
      for (const Triplet& t : mined) {
        CHECK(roles[static_cast<std::size_t>(t.anchor)] == Role::KK);
        CHECK(roles[static_cast<std::size_t>(t.positive)] == Role::KK);
        CHECK(roles[static_cast<std::size_t>(t.negative)] == Role::KU);
        CHECK(t.anchor != t.positive);
        const double dp = (e.row(t.anchor) - e.row(t.positive)).squaredNorm();
        const double dn = (e.row(t.anchor) - e.row(t.negative)).squaredNorm();
        if (s == MiningStrategy::hard) CHECK(dn < dp);
        if (s == MiningStrategy::semihard) {
          CHECK(dp <= dn);
          CHECK(dn < dp + margin);
        }
        if (s == MiningStrategy::combined)
          CHECK(((dn < dp) || (dp <= dn && dn < dp + margin)));
      }

      // Completeness: exact set match with the exhaustive enumerator.
      CHECK(same_triplet_set(mined, mine_bruteforce(e, roles, s, margin, seed)));
    }
  }
}

TEST_CASE("mined positives are class-agnostic known knowns") {
  // Two known classes present; positives may cross classes but never come
  // from the KU rows.
  Rng rng(4);
  Matrix e(8, 2);
  for (Eigen::Index r = 0; r < 8; ++r)
    for (Eigen::Index c = 0; c < 2; ++c) e(r, c) = rng.gaussian();
  const std::vector<Role> roles{Role::KK, Role::KK, Role::KK, Role::KK,
                                Role::KU, Role::KU, Role::KU, Role::KU};
  const auto mined =
      mine_triplets(e, roles, MiningStrategy::combined, 0.8, 123);
  for (const Triplet& t : mined) {
    CHECK(t.positive < 4);
    CHECK(t.negative >= 4);
  }
}

TEST_CASE("embed basics: zero final layer, batching, restart determinism") {
  Rng rng(6);
  EmbeddingModel model = make_embedding_mlp(4, {8}, 5, false, rng);

  // Zeroing the final dense layer forces all-zero embeddings.
  {
    EmbeddingModel zeroed = model;
    auto params = zeroed.net.parameters();
    params[params.size() - 2]->setZero();  // final weights
    params[params.size() - 1]->setZero();  // final bias
    Matrix x(2, 4);
    x << 1, 2, 3, 4, -1, 0.5, 2, -3;
    CHECK(embed(zeroed, x).isZero());
  }

  // Batched call equals stacked single calls exactly.
  {
    Matrix x(3, 4);
    x << 1, 2, 3, 4, 0, -1, 1, 0, 2, 2, 2, 2;
    const Matrix batched = embed(model, x);
    for (Eigen::Index r = 0; r < 3; ++r) {
      const Vector single = embed_one(
          model, {x(r, 0), x(r, 1), x(r, 2), x(r, 3)});
      for (Eigen::Index c = 0; c < batched.cols(); ++c)
        CHECK(batched(r, c) == single(c));
    }
  }

  // Same seed rebuilds the identical model (process-restart determinism).
  {
    Rng rng2(6);
    EmbeddingModel again = make_embedding_mlp(4, {8}, 5, false, rng2);
    Matrix x(1, 4);
    x << 0.3, -0.7, 1.1, 0.0;
    CHECK(embed(model, x) == embed(again, x));
  }

  CHECK_THROWS_AS(embed(model, Matrix::Zero(1, 3)), ShapeError);
}

TEST_CASE("train_embedding learns on separable data and respects contracts") {
  const Dataset source = generate_synthetic(4, 40, 10, 10.0, 50);
  const ClassPartition part = make_partition(source.distinct_labels(), 2, 1.0, 1);
  const Dataset test = generate_synthetic(4, 5, 10, 10.0, 51);
  const SplitResult split = split_dataset(source, test, part);

  Rng rng(99);
  const EmbeddingModel init = make_embedding_mlp(10, {32}, 16, false, rng);

  TripletLossConfig loss_cfg;
  loss_cfg.margin = 0.1;
  loss_cfg.strategy = MiningStrategy::combined;
  TrainConfig train_cfg;
  train_cfg.epochs = 20;
  train_cfg.batch_size = 32;
  train_cfg.learning_rate = 0.02;
  train_cfg.weight_decay = 1e-4;
  train_cfg.seed = 7;

  std::vector<EpochStats> stats;
  const EmbeddingModel trained = train_embedding(
      split.train_kk, split.train_ku, init, loss_cfg, train_cfg, &stats);
  REQUIRE(stats.size() == 20);
  CHECK(stats.back().mean_loss < stats.front().mean_loss);

  SUBCASE("zero epochs returns the initial model unchanged") {
    TrainConfig zero = train_cfg;
    zero.epochs = 0;
    const EmbeddingModel same = train_embedding(split.train_kk, split.train_ku,
                                                init, loss_cfg, zero, nullptr);
    Matrix x(1, 10);
    x.setConstant(0.5);
    CHECK(embed(same, x) == embed(init, x));
  }

  SUBCASE("empty known-unknown set is a configuration error") {
    Dataset empty_ku;
    empty_ku.feature_shape = split.train_ku.feature_shape;
    CHECK_THROWS_AS(train_embedding(split.train_kk, empty_ku, init, loss_cfg,
                                    train_cfg, nullptr),
                    ConfigError);
  }

  SUBCASE("fixed seed training is deterministic") {
    const EmbeddingModel again = train_embedding(
        split.train_kk, split.train_ku, init, loss_cfg, train_cfg, nullptr);
    Matrix x(1, 10);
    x.setConstant(-1.25);
    CHECK(embed(trained, x) == embed(again, x));
  }

  SUBCASE("margin outside (0, 2] is rejected") {
    TripletLossConfig bad = loss_cfg;
    bad.margin = 2.5;
    CHECK_THROWS_AS(train_embedding(split.train_kk, split.train_ku, init, bad,
                                    train_cfg, nullptr),
                    ConfigError);
  }
}
