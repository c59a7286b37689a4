#pragma once

#include <any>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "casdc/dataset.hpp"  // Matrix/Vector aliases
#include "casdc/rng.hpp"

namespace casdc {

// Shared optimizer settings for both trainable networks. Zero epochs is the
// documented identity case; everything else must be positive (weight decay
// may be zero).
struct TrainConfig {
  int epochs = 20;
  int batch_size = 64;
  double learning_rate = 0.05;
  double weight_decay = 1e-4;
  std::uint64_t seed = 0;

  void validate() const;
};

// A feedforward layer. Layers are stateless at inference: forward() with a
// null cache is const and safe to call concurrently. Training passes a
// per-call std::any cache that backward() consumes.
//
// Matrices are batch-major: rows are samples, columns the flattened
// activations (images are C*H*W row-major).
class Layer {
 public:
  virtual ~Layer() = default;

  virtual Matrix forward(const Matrix& in, std::any* cache) const = 0;
  // Writes this layer's parameter gradients into grads[offset...] and
  // returns the gradient w.r.t. the layer input.
  virtual Matrix backward(const Matrix& grad_out, const std::any& cache,
                          std::vector<Matrix>& grads,
                          std::size_t offset) const = 0;

  virtual std::size_t param_count() const { return 0; }
  virtual std::vector<Matrix*> params() { return {}; }
  virtual std::vector<const Matrix*> params() const { return {}; }
  virtual void init_params(Rng&) {}

  virtual std::unique_ptr<Layer> clone() const = 0;
};

// Fully connected layer. The forward pass multiplies row by row, so a
// batched call produces bitwise the same rows as single-sample calls.
class Dense final : public Layer {
 public:
  Dense(std::size_t in_dim, std::size_t out_dim);

  Matrix forward(const Matrix& in, std::any* cache) const override;
  Matrix backward(const Matrix& grad_out, const std::any& cache,
                  std::vector<Matrix>& grads, std::size_t offset) const override;
  std::size_t param_count() const override { return 2; }
  std::vector<Matrix*> params() override { return {&weights_, &bias_}; }
  std::vector<const Matrix*> params() const override {
    return {&weights_, &bias_};
  }
  void init_params(Rng& rng) override;
  std::unique_ptr<Layer> clone() const override {
    return std::make_unique<Dense>(*this);
  }

  std::size_t in_dim() const { return static_cast<std::size_t>(weights_.rows()); }
  std::size_t out_dim() const { return static_cast<std::size_t>(weights_.cols()); }

 private:
  Matrix weights_;  // in_dim x out_dim
  Matrix bias_;     // 1 x out_dim
};

class Relu final : public Layer {
 public:
  Matrix forward(const Matrix& in, std::any* cache) const override;
  Matrix backward(const Matrix& grad_out, const std::any& cache,
                  std::vector<Matrix>& grads, std::size_t offset) const override;
  std::unique_ptr<Layer> clone() const override {
    return std::make_unique<Relu>(*this);
  }
};

// Row-wise x / max(||x||, 1e-12). Optional last stage of the embedding net.
class L2Normalize final : public Layer {
 public:
  Matrix forward(const Matrix& in, std::any* cache) const override;
  Matrix backward(const Matrix& grad_out, const std::any& cache,
                  std::vector<Matrix>& grads, std::size_t offset) const override;
  std::unique_ptr<Layer> clone() const override {
    return std::make_unique<L2Normalize>(*this);
  }
};

// 3x3-style convolution over rows holding C*H*W images, im2col per sample.
class Conv2d final : public Layer {
 public:
  Conv2d(std::size_t in_c, std::size_t in_h, std::size_t in_w,
         std::size_t out_c, std::size_t kernel = 3, std::size_t stride = 1,
         std::size_t pad = 1);

  Matrix forward(const Matrix& in, std::any* cache) const override;
  Matrix backward(const Matrix& grad_out, const std::any& cache,
                  std::vector<Matrix>& grads, std::size_t offset) const override;
  std::size_t param_count() const override { return 2; }
  std::vector<Matrix*> params() override { return {&kernels_, &bias_}; }
  std::vector<const Matrix*> params() const override {
    return {&kernels_, &bias_};
  }
  void init_params(Rng& rng) override;
  std::unique_ptr<Layer> clone() const override {
    return std::make_unique<Conv2d>(*this);
  }

  std::size_t out_h() const;
  std::size_t out_w() const;
  std::size_t out_c() const { return out_c_; }

 private:
  Matrix im2col(const Eigen::Ref<const Eigen::RowVectorXd>& row) const;

  std::size_t in_c_, in_h_, in_w_, out_c_, kernel_, stride_, pad_;
  Matrix kernels_;  // out_c x (in_c * k * k)
  Matrix bias_;     // 1 x out_c
};

// 2x2 max pooling with stride 2 (floor division on odd sizes).
class MaxPool2d final : public Layer {
 public:
  MaxPool2d(std::size_t channels, std::size_t in_h, std::size_t in_w);

  Matrix forward(const Matrix& in, std::any* cache) const override;
  Matrix backward(const Matrix& grad_out, const std::any& cache,
                  std::vector<Matrix>& grads, std::size_t offset) const override;
  std::unique_ptr<Layer> clone() const override {
    return std::make_unique<MaxPool2d>(*this);
  }

  std::size_t out_h() const { return in_h_ / 2; }
  std::size_t out_w() const { return in_w_ / 2; }

 private:
  std::size_t channels_, in_h_, in_w_;
};

class Network {
 public:
  Network() = default;
  Network(const Network& other);
  Network& operator=(const Network& other);
  Network(Network&&) noexcept = default;
  Network& operator=(Network&&) noexcept = default;

  void add(std::unique_ptr<Layer> layer);

  // Inference path: const, no state, safe for concurrent callers.
  Matrix forward(const Matrix& x) const;
  // Training path: fills one cache per layer for the matching backward().
  Matrix forward(const Matrix& x, std::vector<std::any>& caches) const;
  // Returns the gradient w.r.t. the network input; grads is resized and
  // aligned with parameters().
  Matrix backward(const Matrix& grad_out, const std::vector<std::any>& caches,
                  std::vector<Matrix>& grads) const;

  std::vector<Matrix*> parameters();
  std::vector<const Matrix*> parameters() const;
  void init_params(Rng& rng);

  std::size_t layer_count() const { return layers_.size(); }
  Layer& layer(std::size_t i) { return *layers_.at(i); }
  const Layer& layer(std::size_t i) const { return *layers_.at(i); }

 private:
  std::vector<std::unique_ptr<Layer>> layers_;
};

struct SgdConfig {
  double learning_rate = 0.05;
  double weight_decay = 0.0;
};

// One telemetry row per training epoch. triplet_count stays zero for the
// classifier, which has no mining stage.
struct EpochStats {
  int epoch = 0;
  double mean_loss = 0.0;
  std::size_t triplet_count = 0;
};

// Plain SGD with L2 regularization: p -= lr * (g + wd * p).
void sgd_step(std::vector<Matrix*>& params, const std::vector<Matrix>& grads,
              const SgdConfig& cfg);

// Architecture ids are parseable layer recipes, stored in checkpoints:
//   "mlp(10-64-128)"               dense 10->64, relu, dense 64->128
//   "mlp(10-64-128)+l2norm"        same with a final unit-norm stage
//   "convnet(1x28x28-8-16-32-128)" three conv/relu/pool blocks (channels
//                                  8,16,32), then dense to 128
std::string mlp_architecture_id(std::size_t in_dim,
                                const std::vector<std::size_t>& hidden,
                                std::size_t out_dim, bool l2norm);
std::string convnet_architecture_id(const std::vector<std::size_t>& shape,
                                    const std::vector<std::size_t>& channels,
                                    std::size_t out_dim, bool l2norm);
Network make_network(const std::string& architecture_id);

// Input feature shape implied by an architecture id.
std::vector<std::size_t> architecture_input_shape(
    const std::string& architecture_id);
// Output width implied by an architecture id.
std::size_t architecture_output_dim(const std::string& architecture_id);

}  // namespace casdc
