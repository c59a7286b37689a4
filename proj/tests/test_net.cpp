#include <doctest.h>

#include "casdc/checkpoint.hpp"
#include "casdc/classifier.hpp"
#include "casdc/embedding.hpp"
#include "casdc/errors.hpp"
#include "casdc/net.hpp"
#include "test_support.hpp"

using namespace casdc;
using casdc_test::rel_error;
using casdc_test::TempDir;

namespace {

Matrix random_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols,
                     double scale = 1.0) {
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = scale * rng.gaussian();
  return m;
}

// Central-difference gradient of mean cross-entropy w.r.t. every network
// parameter, compared against backward().
void check_network_ce_gradients(Network& net, const Matrix& x,
                                const std::vector<int>& targets, double eps,
                                double tol) {
  std::vector<std::any> caches;
  const Matrix logits = net.forward(x, caches);
  std::vector<Matrix> grads;
  net.backward(cross_entropy_grad(logits, targets), caches, grads);

  auto params = net.parameters();
  REQUIRE(params.size() == grads.size());
  for (std::size_t p = 0; p < params.size(); ++p) {
    Matrix& w = *params[p];
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      for (Eigen::Index c = 0; c < w.cols(); ++c) {
        const double saved = w(r, c);
        w(r, c) = saved + eps;
        const double lp = cross_entropy_loss(net.forward(x), targets);
        w(r, c) = saved - eps;
        const double lm = cross_entropy_loss(net.forward(x), targets);
        w(r, c) = saved;
        const double numeric = (lp - lm) / (2 * eps);
        const double analytic = grads[p](r, c);
        if (std::abs(numeric) < 1e-10 && std::abs(analytic) < 1e-10) continue;
        CHECK(rel_error(numeric, analytic) < tol);
      }
    }
  }
}

}  // namespace

TEST_CASE("dense batching equals stacked single calls bitwise") {
  Rng rng(1);
  Network net = make_network("mlp(7-16-5)");
  net.init_params(rng);

  const Matrix batch = random_matrix(rng, 9, 7);
  const Matrix out = net.forward(batch);
  for (Eigen::Index r = 0; r < batch.rows(); ++r) {
    const Matrix single = net.forward(batch.row(r));
    for (Eigen::Index c = 0; c < out.cols(); ++c)
      CHECK(out(r, c) == single(0, c));  // exact
  }
}

TEST_CASE("convnet batching equals stacked single calls bitwise") {
  Rng rng(2);
  Network net = make_network("convnet(1x6x6-2-8)");
  net.init_params(rng);

  const Matrix batch = random_matrix(rng, 4, 36);
  const Matrix out = net.forward(batch);
  for (Eigen::Index r = 0; r < batch.rows(); ++r) {
    const Matrix single = net.forward(batch.row(r));
    for (Eigen::Index c = 0; c < out.cols(); ++c)
      CHECK(out(r, c) == single(0, c));
  }
}

TEST_CASE("mlp cross-entropy gradients match finite differences") {
  std::mt19937_64 gen(7);
  for (int iter = 0; iter < 5; ++iter) {
    Rng rng(gen());
    Network net = make_network("mlp(5-16-3)");
    net.init_params(rng);
    const Matrix x = random_matrix(rng, 6, 5);
    std::vector<int> targets(6);
    for (auto& t : targets) t = static_cast<int>(gen() % 3);
    check_network_ce_gradients(net, x, targets, 1e-5, 1e-4);
  }
}

TEST_CASE("convnet gradients match finite differences") {
  Rng rng(11);
  Network net = make_network("convnet(2x6x6-3-4)");
  net.init_params(rng);
  const Matrix x = random_matrix(rng, 3, 2 * 6 * 6);
  std::vector<int> targets{0, 2, 1};
  check_network_ce_gradients(net, x, targets, 1e-5, 2e-4);
}

TEST_CASE("l2-normalize layer forward and backward") {
  L2Normalize norm;
  Matrix in(1, 3);
  in << 3.0, 0.0, 4.0;
  const Matrix out = norm.forward(in, nullptr);
  CHECK(out(0, 0) == doctest::Approx(0.6));
  CHECK(out(0, 2) == doctest::Approx(0.8));
  CHECK(out.row(0).norm() == doctest::Approx(1.0));

  // Finite-difference check of the backward pass through a scalar readout.
  Rng rng(3);
  const Matrix z = random_matrix(rng, 2, 4);
  const Matrix w = random_matrix(rng, 2, 4);  // fixed linear readout
  auto value = [&](const Matrix& m) {
    const Matrix y = norm.forward(m, nullptr);
    return (y.array() * w.array()).sum();
  };
  std::any cache;
  norm.forward(z, &cache);
  std::vector<Matrix> grads;
  const Matrix analytic = norm.backward(w, cache, grads, 0);
  const double eps = 1e-6;
  for (Eigen::Index r = 0; r < z.rows(); ++r)
    for (Eigen::Index c = 0; c < z.cols(); ++c) {
      Matrix zp = z, zm = z;
      zp(r, c) += eps;
      zm(r, c) -= eps;
      const double numeric = (value(zp) - value(zm)) / (2 * eps);
      CHECK(rel_error(numeric, analytic(r, c)) < 1e-5);
    }
}

TEST_CASE("maxpool picks window maxima and routes gradients") {
  MaxPool2d pool(1, 4, 4);
  Matrix in(1, 16);
  in << 1, 2, 5, 6,
        3, 4, 7, 8,
        9, 10, 13, 14,
        11, 12, 15, 16;
  std::any cache;
  const Matrix out = pool.forward(in, &cache);
  REQUIRE(out.cols() == 4);
  CHECK(out(0, 0) == 4);
  CHECK(out(0, 1) == 8);
  CHECK(out(0, 2) == 12);
  CHECK(out(0, 3) == 16);

  Matrix gout(1, 4);
  gout << 1, 2, 3, 4;
  std::vector<Matrix> grads;
  const Matrix gin = pool.backward(gout, cache, grads, 0);
  CHECK(gin(0, 5) == 1);   // position of 4
  CHECK(gin(0, 7) == 2);   // position of 8
  CHECK(gin(0, 13) == 3);  // position of 12
  CHECK(gin(0, 15) == 4);  // position of 16
  CHECK(gin.sum() == 10);
}

TEST_CASE("architecture ids parse and rebuild") {
  CHECK(mlp_architecture_id(10, {64}, 128, false) == "mlp(10-64-128)");
  CHECK(mlp_architecture_id(10, {64}, 128, true) == "mlp(10-64-128)+l2norm");
  CHECK(convnet_architecture_id({1, 28, 28}, {8, 16, 32}, 128, false) ==
        "convnet(1x28x28-8-16-32-128)");

  CHECK(architecture_input_shape("mlp(10-64-128)") ==
        std::vector<std::size_t>{10});
  CHECK(architecture_input_shape("convnet(1x28x28-8-128)") ==
        std::vector<std::size_t>{1, 28, 28});
  CHECK(architecture_output_dim("mlp(10-64-128)+l2norm") == 128);

  Rng rng(5);
  Network net = make_network("convnet(1x28x28-8-16-32-40)");
  net.init_params(rng);
  const Matrix x = random_matrix(rng, 1, 28 * 28);
  CHECK(net.forward(x).cols() == 40);

  CHECK_THROWS_AS(make_network("mlp(10)"), ConfigError);
  CHECK_THROWS_AS(make_network("rnn(10-3)"), ConfigError);
  CHECK_THROWS_AS(make_network("mlp(10-x-3)"), ConfigError);
}

TEST_CASE("sgd step applies learning rate and weight decay") {
  Matrix p(1, 2);
  p << 1.0, -2.0;
  Matrix g(1, 2);
  g << 0.5, 0.5;
  std::vector<Matrix*> params{&p};
  sgd_step(params, {g}, {0.1, 0.01});
  CHECK(p(0, 0) == doctest::Approx(1.0 - 0.1 * (0.5 + 0.01 * 1.0)));
  CHECK(p(0, 1) == doctest::Approx(-2.0 - 0.1 * (0.5 + 0.01 * -2.0)));
}

TEST_CASE("train config validation") {
  TrainConfig t;
  t.epochs = -1;
  CHECK_THROWS_AS(t.validate(), ConfigError);
  t = TrainConfig{};
  t.learning_rate = 0.0;
  CHECK_THROWS_AS(t.validate(), ConfigError);
  t = TrainConfig{};
  t.epochs = 0;  // documented identity case
  CHECK_NOTHROW(t.validate());
}

TEST_CASE("checkpoint round-trip preserves parameters exactly") {
  TempDir tmp("ckpt");
  Rng rng(17);

  EmbeddingModel g = make_embedding_mlp(6, {12}, 8, true, rng);
  save_embedding_checkpoint(g, tmp.path / "g.ckpt", "cfg123");
  const EmbeddingModel g2 = load_embedding_checkpoint(tmp.path / "g.ckpt");
  CHECK(g2.architecture_id == g.architecture_id);
  CHECK(g2.embed_dim == g.embed_dim);
  CHECK(g2.feature_shape == g.feature_shape);
  const Matrix x = random_matrix(rng, 3, 6);
  CHECK(embed(g, x) == embed(g2, x));  // bitwise

  ClassifierModel f = make_classifier_mlp(6, {12}, {3, 1, 7}, rng);
  save_classifier_checkpoint(f, tmp.path / "f.ckpt", "cfg123");
  const ClassifierModel f2 = load_classifier_checkpoint(tmp.path / "f.ckpt");
  CHECK(f2.class_ids == std::vector<int>{1, 3, 7});
  CHECK(f2.n_classes == 3);
  CHECK(logits_batch(f, x) == logits_batch(f2, x));

  // Kind mix-ups are rejected.
  CHECK_THROWS_AS(load_embedding_checkpoint(tmp.path / "f.ckpt"), FormatError);
  CHECK_THROWS_AS(load_classifier_checkpoint(tmp.path / "g.ckpt"), FormatError);
}
