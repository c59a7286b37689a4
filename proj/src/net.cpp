#include "casdc/net.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include "casdc/errors.hpp"

namespace casdc {

void TrainConfig::validate() const {
  if (epochs < 0) throw ConfigError("train config: epochs must be >= 0");
  if (batch_size <= 0) throw ConfigError("train config: batch_size must be positive");
  if (learning_rate <= 0.0)
    throw ConfigError("train config: learning_rate must be positive");
  if (weight_decay < 0.0)
    throw ConfigError("train config: weight_decay must be >= 0");
}

// ---------------------------------------------------------------------------
// Dense

Dense::Dense(std::size_t in_dim, std::size_t out_dim)
    : weights_(Matrix::Zero(static_cast<Eigen::Index>(in_dim),
                            static_cast<Eigen::Index>(out_dim))),
      bias_(Matrix::Zero(1, static_cast<Eigen::Index>(out_dim))) {}

Matrix Dense::forward(const Matrix& in, std::any* cache) const {
  if (in.cols() != weights_.rows())
    throw ShapeError("dense: input width " + std::to_string(in.cols()) +
                     " does not match layer input " +
                     std::to_string(weights_.rows()));
  Matrix out(in.rows(), weights_.cols());
  // Row-by-row products keep batched inference bitwise identical to
  // single-sample calls.
  for (Eigen::Index r = 0; r < in.rows(); ++r)
    out.row(r).noalias() = in.row(r) * weights_;
  out.rowwise() += bias_.row(0);
  if (cache) *cache = in;
  return out;
}

Matrix Dense::backward(const Matrix& grad_out, const std::any& cache,
                       std::vector<Matrix>& grads, std::size_t offset) const {
  const Matrix& in = std::any_cast<const Matrix&>(cache);
  grads[offset].noalias() = in.transpose() * grad_out;
  grads[offset + 1] = grad_out.colwise().sum();
  return grad_out * weights_.transpose();
}

void Dense::init_params(Rng& rng) {
  const double stddev =
      std::sqrt(2.0 / static_cast<double>(weights_.rows()));
  for (Eigen::Index c = 0; c < weights_.cols(); ++c)
    for (Eigen::Index r = 0; r < weights_.rows(); ++r)
      weights_(r, c) = stddev * rng.gaussian();
  bias_.setZero();
}

// ---------------------------------------------------------------------------
// Relu

Matrix Relu::forward(const Matrix& in, std::any* cache) const {
  if (cache) *cache = in;
  return in.cwiseMax(0.0);
}

Matrix Relu::backward(const Matrix& grad_out, const std::any& cache,
                      std::vector<Matrix>&, std::size_t) const {
  const Matrix& in = std::any_cast<const Matrix&>(cache);
  return (in.array() > 0.0).select(grad_out, Matrix::Zero(grad_out.rows(),
                                                          grad_out.cols()));
}

// ---------------------------------------------------------------------------
// L2Normalize

namespace {
constexpr double kNormFloor = 1e-12;
}

Matrix L2Normalize::forward(const Matrix& in, std::any* cache) const {
  Matrix out(in.rows(), in.cols());
  for (Eigen::Index r = 0; r < in.rows(); ++r) {
    const double n = std::max(in.row(r).norm(), kNormFloor);
    out.row(r) = in.row(r) / n;
  }
  if (cache) *cache = in;
  return out;
}

Matrix L2Normalize::backward(const Matrix& grad_out, const std::any& cache,
                             std::vector<Matrix>&, std::size_t) const {
  const Matrix& in = std::any_cast<const Matrix&>(cache);
  Matrix grad_in(in.rows(), in.cols());
  for (Eigen::Index r = 0; r < in.rows(); ++r) {
    const double n = std::max(in.row(r).norm(), kNormFloor);
    const Eigen::RowVectorXd y = in.row(r) / n;
    const double dot = y.dot(grad_out.row(r));
    grad_in.row(r) = (grad_out.row(r) - dot * y) / n;
  }
  return grad_in;
}

// ---------------------------------------------------------------------------
// Conv2d

Conv2d::Conv2d(std::size_t in_c, std::size_t in_h, std::size_t in_w,
               std::size_t out_c, std::size_t kernel, std::size_t stride,
               std::size_t pad)
    : in_c_(in_c),
      in_h_(in_h),
      in_w_(in_w),
      out_c_(out_c),
      kernel_(kernel),
      stride_(stride),
      pad_(pad),
      kernels_(Matrix::Zero(static_cast<Eigen::Index>(out_c),
                            static_cast<Eigen::Index>(in_c * kernel * kernel))),
      bias_(Matrix::Zero(1, static_cast<Eigen::Index>(out_c))) {
  if (in_h + 2 * pad < kernel || in_w + 2 * pad < kernel)
    throw ShapeError("conv: kernel larger than padded input");
}

std::size_t Conv2d::out_h() const {
  return (in_h_ + 2 * pad_ - kernel_) / stride_ + 1;
}
std::size_t Conv2d::out_w() const {
  return (in_w_ + 2 * pad_ - kernel_) / stride_ + 1;
}

Matrix Conv2d::im2col(const Eigen::Ref<const Eigen::RowVectorXd>& row) const {
  const std::size_t oh = out_h(), ow = out_w();
  Matrix col = Matrix::Zero(static_cast<Eigen::Index>(oh * ow),
                            static_cast<Eigen::Index>(in_c_ * kernel_ * kernel_));
  for (std::size_t y = 0; y < oh; ++y) {
    for (std::size_t x = 0; x < ow; ++x) {
      const Eigen::Index pos = static_cast<Eigen::Index>(y * ow + x);
      for (std::size_t c = 0; c < in_c_; ++c) {
        for (std::size_t ky = 0; ky < kernel_; ++ky) {
          const std::ptrdiff_t iy =
              static_cast<std::ptrdiff_t>(y * stride_ + ky) -
              static_cast<std::ptrdiff_t>(pad_);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(in_h_)) continue;
          for (std::size_t kx = 0; kx < kernel_; ++kx) {
            const std::ptrdiff_t ix =
                static_cast<std::ptrdiff_t>(x * stride_ + kx) -
                static_cast<std::ptrdiff_t>(pad_);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(in_w_)) continue;
            col(pos, static_cast<Eigen::Index>((c * kernel_ + ky) * kernel_ +
                                               kx)) =
                row(static_cast<Eigen::Index>((c * in_h_ + iy) * in_w_ + ix));
          }
        }
      }
    }
  }
  return col;
}

Matrix Conv2d::forward(const Matrix& in, std::any* cache) const {
  if (in.cols() != static_cast<Eigen::Index>(in_c_ * in_h_ * in_w_))
    throw ShapeError("conv: input width does not match CxHxW");
  const std::size_t oh = out_h(), ow = out_w();
  Matrix out(in.rows(), static_cast<Eigen::Index>(out_c_ * oh * ow));
  for (Eigen::Index r = 0; r < in.rows(); ++r) {
    const Matrix col = im2col(in.row(r));
    // positions x out_c
    Matrix o = col * kernels_.transpose();
    o.rowwise() += bias_.row(0);
    for (std::size_t c = 0; c < out_c_; ++c)
      for (std::size_t p = 0; p < oh * ow; ++p)
        out(r, static_cast<Eigen::Index>(c * oh * ow + p)) =
            o(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(c));
  }
  if (cache) *cache = in;
  return out;
}

Matrix Conv2d::backward(const Matrix& grad_out, const std::any& cache,
                        std::vector<Matrix>& grads, std::size_t offset) const {
  const Matrix& in = std::any_cast<const Matrix&>(cache);
  const std::size_t oh = out_h(), ow = out_w();
  Matrix g_kernels = Matrix::Zero(kernels_.rows(), kernels_.cols());
  Matrix g_bias = Matrix::Zero(1, bias_.cols());
  Matrix grad_in = Matrix::Zero(in.rows(), in.cols());

  for (Eigen::Index r = 0; r < in.rows(); ++r) {
    // Reassemble dOut as positions x out_c.
    Matrix dout(static_cast<Eigen::Index>(oh * ow),
                static_cast<Eigen::Index>(out_c_));
    for (std::size_t c = 0; c < out_c_; ++c)
      for (std::size_t p = 0; p < oh * ow; ++p)
        dout(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(c)) =
            grad_out(r, static_cast<Eigen::Index>(c * oh * ow + p));

    const Matrix col = im2col(in.row(r));
    g_kernels.noalias() += dout.transpose() * col;
    g_bias += dout.colwise().sum();

    // col2im scatter-add.
    const Matrix dcol = dout * kernels_;
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t x = 0; x < ow; ++x) {
        const Eigen::Index pos = static_cast<Eigen::Index>(y * ow + x);
        for (std::size_t c = 0; c < in_c_; ++c) {
          for (std::size_t ky = 0; ky < kernel_; ++ky) {
            const std::ptrdiff_t iy =
                static_cast<std::ptrdiff_t>(y * stride_ + ky) -
                static_cast<std::ptrdiff_t>(pad_);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(in_h_)) continue;
            for (std::size_t kx = 0; kx < kernel_; ++kx) {
              const std::ptrdiff_t ix =
                  static_cast<std::ptrdiff_t>(x * stride_ + kx) -
                  static_cast<std::ptrdiff_t>(pad_);
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(in_w_)) continue;
              grad_in(r, static_cast<Eigen::Index>((c * in_h_ + iy) * in_w_ +
                                                   ix)) +=
                  dcol(pos, static_cast<Eigen::Index>(
                                (c * kernel_ + ky) * kernel_ + kx));
            }
          }
        }
      }
    }
  }
  grads[offset] = std::move(g_kernels);
  grads[offset + 1] = std::move(g_bias);
  return grad_in;
}

void Conv2d::init_params(Rng& rng) {
  const double stddev = std::sqrt(2.0 / static_cast<double>(kernels_.cols()));
  for (Eigen::Index c = 0; c < kernels_.cols(); ++c)
    for (Eigen::Index r = 0; r < kernels_.rows(); ++r)
      kernels_(r, c) = stddev * rng.gaussian();
  bias_.setZero();
}

// ---------------------------------------------------------------------------
// MaxPool2d

MaxPool2d::MaxPool2d(std::size_t channels, std::size_t in_h, std::size_t in_w)
    : channels_(channels), in_h_(in_h), in_w_(in_w) {
  if (in_h < 2 || in_w < 2) throw ShapeError("maxpool: input smaller than window");
}

Matrix MaxPool2d::forward(const Matrix& in, std::any* cache) const {
  if (in.cols() != static_cast<Eigen::Index>(channels_ * in_h_ * in_w_))
    throw ShapeError("maxpool: input width does not match CxHxW");
  const std::size_t oh = out_h(), ow = out_w();
  Matrix out(in.rows(), static_cast<Eigen::Index>(channels_ * oh * ow));
  std::vector<std::vector<Eigen::Index>> argmax(
      static_cast<std::size_t>(in.rows()));
  for (Eigen::Index r = 0; r < in.rows(); ++r) {
    auto& am = argmax[static_cast<std::size_t>(r)];
    am.resize(channels_ * oh * ow);
    for (std::size_t c = 0; c < channels_; ++c) {
      for (std::size_t y = 0; y < oh; ++y) {
        for (std::size_t x = 0; x < ow; ++x) {
          double best = -std::numeric_limits<double>::infinity();
          Eigen::Index best_idx = 0;
          for (std::size_t dy = 0; dy < 2; ++dy) {
            for (std::size_t dx = 0; dx < 2; ++dx) {
              const Eigen::Index idx = static_cast<Eigen::Index>(
                  (c * in_h_ + (2 * y + dy)) * in_w_ + (2 * x + dx));
              if (in(r, idx) > best) {
                best = in(r, idx);
                best_idx = idx;
              }
            }
          }
          const std::size_t o = (c * oh + y) * ow + x;
          out(r, static_cast<Eigen::Index>(o)) = best;
          am[o] = best_idx;
        }
      }
    }
  }
  if (cache) *cache = std::make_pair(in.cols(), std::move(argmax));
  return out;
}

Matrix MaxPool2d::backward(const Matrix& grad_out, const std::any& cache,
                           std::vector<Matrix>&, std::size_t) const {
  const auto& [in_cols, argmax] = std::any_cast<
      const std::pair<Eigen::Index, std::vector<std::vector<Eigen::Index>>>&>(
      cache);
  Matrix grad_in = Matrix::Zero(grad_out.rows(), in_cols);
  for (Eigen::Index r = 0; r < grad_out.rows(); ++r) {
    const auto& am = argmax[static_cast<std::size_t>(r)];
    for (std::size_t o = 0; o < am.size(); ++o)
      grad_in(r, am[o]) += grad_out(r, static_cast<Eigen::Index>(o));
  }
  return grad_in;
}

// ---------------------------------------------------------------------------
// Network

Network::Network(const Network& other) {
  layers_.reserve(other.layers_.size());
  for (const auto& l : other.layers_) layers_.push_back(l->clone());
}

Network& Network::operator=(const Network& other) {
  if (this == &other) return *this;
  layers_.clear();
  layers_.reserve(other.layers_.size());
  for (const auto& l : other.layers_) layers_.push_back(l->clone());
  return *this;
}

void Network::add(std::unique_ptr<Layer> layer) {
  layers_.push_back(std::move(layer));
}

Matrix Network::forward(const Matrix& x) const {
  Matrix a = x;
  for (const auto& l : layers_) a = l->forward(a, nullptr);
  return a;
}

Matrix Network::forward(const Matrix& x, std::vector<std::any>& caches) const {
  caches.assign(layers_.size(), std::any{});
  Matrix a = x;
  for (std::size_t i = 0; i < layers_.size(); ++i)
    a = layers_[i]->forward(a, &caches[i]);
  return a;
}

Matrix Network::backward(const Matrix& grad_out,
                         const std::vector<std::any>& caches,
                         std::vector<Matrix>& grads) const {
  std::size_t total = 0;
  for (const auto& l : layers_) total += l->param_count();
  grads.assign(total, Matrix{});

  std::vector<std::size_t> offsets(layers_.size());
  std::size_t off = 0;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    offsets[i] = off;
    off += layers_[i]->param_count();
  }

  Matrix g = grad_out;
  for (std::size_t i = layers_.size(); i-- > 0;)
    g = layers_[i]->backward(g, caches[i], grads, offsets[i]);
  return g;
}

std::vector<Matrix*> Network::parameters() {
  std::vector<Matrix*> out;
  for (auto& l : layers_)
    for (Matrix* p : l->params()) out.push_back(p);
  return out;
}

std::vector<const Matrix*> Network::parameters() const {
  std::vector<const Matrix*> out;
  for (const auto& l : layers_)
    for (const Matrix* p : l->params()) out.push_back(p);
  return out;
}

void Network::init_params(Rng& rng) {
  for (auto& l : layers_) l->init_params(rng);
}

void sgd_step(std::vector<Matrix*>& params, const std::vector<Matrix>& grads,
              const SgdConfig& cfg) {
  if (params.size() != grads.size())
    throw TrainingError("sgd: parameter/gradient count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i)
    *params[i] -= cfg.learning_rate * (grads[i] + cfg.weight_decay * *params[i]);
}

// ---------------------------------------------------------------------------
// Architecture ids

namespace {

std::vector<std::size_t> parse_dims(const std::string& body, char sep,
                                    const std::string& id) {
  std::vector<std::size_t> dims;
  std::stringstream ss(body);
  std::string tok;
  while (std::getline(ss, tok, sep)) {
    if (tok.empty()) throw ConfigError("bad architecture id: " + id);
    try {
      dims.push_back(static_cast<std::size_t>(std::stoull(tok)));
    } catch (const std::exception&) {
      throw ConfigError("bad architecture id: " + id);
    }
  }
  if (dims.empty()) throw ConfigError("bad architecture id: " + id);
  return dims;
}

struct ParsedId {
  bool is_mlp = false;
  bool l2norm = false;
  std::vector<std::size_t> dims;      // mlp widths
  std::vector<std::size_t> shape;     // convnet input CxHxW
  std::vector<std::size_t> channels;  // convnet block channels
  std::size_t out_dim = 0;
};

ParsedId parse_architecture(const std::string& id) {
  ParsedId p;
  std::string body = id;
  const std::string norm_suffix = "+l2norm";
  if (body.size() > norm_suffix.size() &&
      body.compare(body.size() - norm_suffix.size(), norm_suffix.size(),
                   norm_suffix) == 0) {
    p.l2norm = true;
    body = body.substr(0, body.size() - norm_suffix.size());
  }
  const auto open = body.find('(');
  if (open == std::string::npos || body.back() != ')')
    throw ConfigError("bad architecture id: " + id);
  const std::string kind = body.substr(0, open);
  const std::string inner = body.substr(open + 1, body.size() - open - 2);

  if (kind == "mlp") {
    p.is_mlp = true;
    p.dims = parse_dims(inner, '-', id);
    if (p.dims.size() < 2) throw ConfigError("bad architecture id: " + id);
    p.out_dim = p.dims.back();
    return p;
  }
  if (kind == "convnet") {
    const auto dash = inner.find('-');
    if (dash == std::string::npos)
      throw ConfigError("bad architecture id: " + id);
    p.shape = parse_dims(inner.substr(0, dash), 'x', id);
    if (p.shape.size() != 3) throw ConfigError("bad architecture id: " + id);
    std::vector<std::size_t> rest = parse_dims(inner.substr(dash + 1), '-', id);
    if (rest.size() < 2) throw ConfigError("bad architecture id: " + id);
    p.out_dim = rest.back();
    rest.pop_back();
    p.channels = std::move(rest);
    return p;
  }
  throw ConfigError("unknown architecture kind in id: " + id);
}

}  // namespace

std::string mlp_architecture_id(std::size_t in_dim,
                                const std::vector<std::size_t>& hidden,
                                std::size_t out_dim, bool l2norm) {
  std::ostringstream os;
  os << "mlp(" << in_dim;
  for (std::size_t h : hidden) os << "-" << h;
  os << "-" << out_dim << ")";
  if (l2norm) os << "+l2norm";
  return os.str();
}

std::string convnet_architecture_id(const std::vector<std::size_t>& shape,
                                    const std::vector<std::size_t>& channels,
                                    std::size_t out_dim, bool l2norm) {
  if (shape.size() != 3)
    throw ConfigError("convnet architecture needs a CxHxW input shape");
  std::ostringstream os;
  os << "convnet(" << shape[0] << "x" << shape[1] << "x" << shape[2];
  for (std::size_t c : channels) os << "-" << c;
  os << "-" << out_dim << ")";
  if (l2norm) os << "+l2norm";
  return os.str();
}

Network make_network(const std::string& architecture_id) {
  const ParsedId p = parse_architecture(architecture_id);
  Network net;
  if (p.is_mlp) {
    for (std::size_t i = 0; i + 1 < p.dims.size(); ++i) {
      net.add(std::make_unique<Dense>(p.dims[i], p.dims[i + 1]));
      if (i + 2 < p.dims.size()) net.add(std::make_unique<Relu>());
    }
  } else {
    std::size_t c = p.shape[0], h = p.shape[1], w = p.shape[2];
    for (std::size_t oc : p.channels) {
      net.add(std::make_unique<Conv2d>(c, h, w, oc));
      net.add(std::make_unique<Relu>());
      auto pool = std::make_unique<MaxPool2d>(oc, h, w);
      const std::size_t ph = pool->out_h(), pw = pool->out_w();
      net.add(std::move(pool));
      c = oc;
      h = ph;
      w = pw;
    }
    net.add(std::make_unique<Dense>(c * h * w, p.out_dim));
  }
  if (p.l2norm) net.add(std::make_unique<L2Normalize>());
  return net;
}

std::vector<std::size_t> architecture_input_shape(
    const std::string& architecture_id) {
  const ParsedId p = parse_architecture(architecture_id);
  if (p.is_mlp) return {p.dims.front()};
  return p.shape;
}

std::size_t architecture_output_dim(const std::string& architecture_id) {
  return parse_architecture(architecture_id).out_dim;
}

}  // namespace casdc
