#pragma once

#include <Eigen/Core>

#include <atomic>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "fe4dgs/errors.hpp"
#include "fe4dgs/numerics/rng.hpp"
#include "fe4dgs/numerics/tensor.hpp"

namespace fe4dgs {

enum class Activation { kNone, kRelu };

/// One fully-connected layer, y = act(W x + b) with W stored [out x in].
struct LinearLayer {
  std::size_t in = 0;
  std::size_t out = 0;
  std::vector<double> weight;  // out * in, row-major
  std::vector<double> bias;    // out
  Activation activation = Activation::kNone;
};

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

namespace detail {
inline std::uint64_t next_mlp_id() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1, std::memory_order_relaxed);
}
}  // namespace detail

/// Stack of LinearLayers whose parameters live in one flat buffer
/// (per layer: weight then bias). The flat layout is what optimizers and
/// checkpoints see.
class Mlp {
 public:
  struct LayerInfo {
    std::size_t in = 0;
    std::size_t out = 0;
    Activation activation = Activation::kNone;
    std::size_t weight_offset = 0;
    std::size_t bias_offset = 0;
  };

  Mlp() : id_(detail::next_mlp_id()) {}

  explicit Mlp(const std::vector<LinearLayer>& layers) : Mlp() {
    std::size_t offset = 0;
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const LinearLayer& layer = layers[l];
      if (layer.weight.size() != layer.in * layer.out || layer.bias.size() != layer.out) {
        throw ConfigError("Mlp: layer " + std::to_string(l) + " has inconsistent weight/bias sizes");
      }
      if (l > 0 && layers[l - 1].out != layer.in) {
        throw ConfigError("Mlp: layer " + std::to_string(l) + " input width " +
                          std::to_string(layer.in) + " does not match previous output " +
                          std::to_string(layers[l - 1].out));
      }
      info_.push_back({layer.in, layer.out, layer.activation, offset, offset + layer.in * layer.out});
      offset += layer.in * layer.out + layer.out;
    }
    params_.resize(offset);
    for (std::size_t l = 0; l < layers.size(); ++l) {
      std::copy(layers[l].weight.begin(), layers[l].weight.end(),
                params_.begin() + static_cast<std::ptrdiff_t>(info_[l].weight_offset));
      std::copy(layers[l].bias.begin(), layers[l].bias.end(),
                params_.begin() + static_cast<std::ptrdiff_t>(info_[l].bias_offset));
    }
  }

  /// Zero-initialized stack with the given widths; `widths` has one more
  /// entry than there are layers.
  static Mlp zeros(const std::vector<std::size_t>& widths, const std::vector<Activation>& acts) {
    if (widths.size() < 2 || acts.size() != widths.size() - 1) {
      throw ConfigError("Mlp::zeros: need widths.size() == acts.size() + 1 >= 2");
    }
    std::vector<LinearLayer> layers;
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
      layers.push_back({widths[l], widths[l + 1],
                        std::vector<double>(widths[l] * widths[l + 1], 0.0),
                        std::vector<double>(widths[l + 1], 0.0), acts[l]});
    }
    return Mlp(layers);
  }

  Mlp(const Mlp& other) : id_(detail::next_mlp_id()), version_(0), info_(other.info_), params_(other.params_) {}
  Mlp& operator=(const Mlp& other) {
    if (this != &other) {
      info_ = other.info_;
      params_ = other.params_;
      ++version_;
    }
    return *this;
  }
  Mlp(Mlp&& other) noexcept
      : id_(detail::next_mlp_id()), info_(std::move(other.info_)), params_(std::move(other.params_)) {}
  Mlp& operator=(Mlp&& other) noexcept {
    info_ = std::move(other.info_);
    params_ = std::move(other.params_);
    ++version_;
    return *this;
  }

  std::size_t num_layers() const noexcept { return info_.size(); }
  const LayerInfo& layer(std::size_t l) const { return info_.at(l); }
  std::size_t input_width() const { return info_.empty() ? 0 : info_.front().in; }
  std::size_t output_width() const { return info_.empty() ? 0 : info_.back().out; }
  std::size_t num_params() const noexcept { return params_.size(); }

  std::span<const double> params() const noexcept { return params_; }
  /// Mutable access invalidates every outstanding forward cache.
  std::span<double> mutable_params() noexcept {
    ++version_;
    return params_;
  }

  std::span<const double> weight(std::size_t l) const {
    return std::span<const double>(params_).subspan(info_[l].weight_offset, info_[l].in * info_[l].out);
  }
  std::span<const double> bias(std::size_t l) const {
    return std::span<const double>(params_).subspan(info_[l].bias_offset, info_[l].out);
  }
  std::span<double> mutable_weight(std::size_t l) { return mutable_params().subspan(info_[l].weight_offset, info_[l].in * info_[l].out); }
  std::span<double> mutable_bias(std::size_t l) { return mutable_params().subspan(info_[l].bias_offset, info_[l].out); }

  /// Kaiming-uniform weights (bound sqrt(6 / fan_in)) and zero biases on layer l.
  void kaiming_uniform(std::size_t l, Pcg32& rng) {
    auto w = mutable_weight(l);
    double bound = std::sqrt(6.0 / static_cast<double>(info_[l].in));
    for (double& v : w) v = rng.uniform(-bound, bound);
    auto b = mutable_bias(l);
    std::fill(b.begin(), b.end(), 0.0);
  }

  LinearLayer to_layer(std::size_t l) const {
    auto w = weight(l);
    auto b = bias(l);
    return {info_[l].in, info_[l].out, {w.begin(), w.end()}, {b.begin(), b.end()}, info_[l].activation};
  }

  std::uint64_t id() const noexcept { return id_; }
  std::uint64_t version() const noexcept { return version_; }

 private:
  std::uint64_t id_;
  std::uint64_t version_ = 0;
  std::vector<LayerInfo> info_;
  std::vector<double> params_;
};

/// Everything mlp_backward needs from the matching forward call.
struct MlpCache {
  std::uint64_t owner_id = 0;
  std::uint64_t owner_version = 0;
  std::size_t batch = 0;
  std::vector<Tensor> inputs;   // input of each layer, [B, in]
  std::vector<Tensor> preacts;  // pre-activation of each layer, [B, out]
};

struct MlpForward {
  Tensor output;  // [B, out]
  MlpCache cache;
};

struct MlpBackward {
  Tensor input_grad;          // [B, in]
  std::vector<double> param_grad;  // same layout as Mlp::params()
};

namespace detail {
inline std::size_t batch_of(const Tensor& x, std::size_t width, const char* who) {
  if (x.rank() == 1 && x.dim(0) == width) return 1;
  if (x.rank() == 2 && x.dim(1) == width) return x.dim(0);
  throw ConfigError(std::string(who) + ": expected input of width " + std::to_string(width) +
                    ", got shape " + x.shape_string());
}
}  // namespace detail

/// Batched forward pass. `x` is [B, in] (or [in] for a single sample).
inline MlpForward mlp_forward(const Mlp& mlp, const Tensor& x) {
  if (mlp.num_layers() == 0) throw ConfigError("mlp_forward: empty network");
  const std::size_t batch = detail::batch_of(x, mlp.input_width(), "mlp_forward");
  MlpForward result;
  result.cache.owner_id = mlp.id();
  result.cache.owner_version = mlp.version();
  result.cache.batch = batch;

  Tensor current({batch, mlp.input_width()}, std::vector<double>(x.values().begin(), x.values().end()));
  for (std::size_t l = 0; l < mlp.num_layers(); ++l) {
    const auto& info = mlp.layer(l);
    Tensor pre({batch, info.out});
    // Owning (aligned) operands: vectorized reductions over Maps peel a
    // prefix that depends on the buffer address, which would make results
    // differ between otherwise identical states.
    const RowMatrix in = ConstMatrixMap(current.data(), static_cast<Eigen::Index>(batch), static_cast<Eigen::Index>(info.in));
    const RowMatrix w = ConstMatrixMap(mlp.weight(l).data(), static_cast<Eigen::Index>(info.out), static_cast<Eigen::Index>(info.in));
    const Eigen::RowVectorXd b = Eigen::Map<const Eigen::RowVectorXd>(mlp.bias(l).data(), static_cast<Eigen::Index>(info.out));
    RowMatrix out = in * w.transpose();
    out.rowwise() += b;
    MatrixMap(pre.data(), static_cast<Eigen::Index>(batch), static_cast<Eigen::Index>(info.out)) = out;

    Tensor activated = pre;
    if (info.activation == Activation::kRelu) {
      for (double& v : activated.values()) v = v > 0.0 ? v : 0.0;
    }
    result.cache.inputs.push_back(std::move(current));
    result.cache.preacts.push_back(std::move(pre));
    current = std::move(activated);
  }
  if (x.rank() == 1) {
    result.output = Tensor({mlp.output_width()}, std::move(current.storage()));
  } else {
    result.output = std::move(current);
  }
  return result;
}

/// Gradients of a scalar loss with respect to the input and every parameter,
/// given dL/dy. Throws ContractError if the cache is not from this network's
/// current parameters.
inline MlpBackward mlp_backward(const Mlp& mlp, const MlpCache& cache, const Tensor& dL_dy) {
  if (cache.owner_id != mlp.id() || cache.owner_version != mlp.version() ||
      cache.inputs.size() != mlp.num_layers()) {
    throw ContractError("mlp_backward: cache does not belong to the current network parameters");
  }
  const std::size_t batch = detail::batch_of(dL_dy, mlp.output_width(), "mlp_backward");
  if (batch != cache.batch) throw ContractError("mlp_backward: batch size differs from forward call");

  MlpBackward result;
  result.param_grad.assign(mlp.num_params(), 0.0);
  Tensor grad({batch, mlp.output_width()}, std::vector<double>(dL_dy.values().begin(), dL_dy.values().end()));

  for (std::size_t li = mlp.num_layers(); li-- > 0;) {
    const auto& info = mlp.layer(li);
    if (info.activation == Activation::kRelu) {
      const Tensor& pre = cache.preacts[li];
      for (std::size_t i = 0; i < grad.size(); ++i) {
        if (!(pre[i] > 0.0)) grad[i] = 0.0;
      }
    }
    const auto rows = static_cast<Eigen::Index>(batch);
    // Owning operands for address-independent results (see mlp_forward).
    const RowMatrix g = ConstMatrixMap(grad.data(), rows, static_cast<Eigen::Index>(info.out));
    const RowMatrix in = ConstMatrixMap(cache.inputs[li].data(), rows, static_cast<Eigen::Index>(info.in));
    const RowMatrix w = ConstMatrixMap(mlp.weight(li).data(), static_cast<Eigen::Index>(info.out), static_cast<Eigen::Index>(info.in));
    const RowMatrix dw = g.transpose() * in;
    MatrixMap(result.param_grad.data() + info.weight_offset, static_cast<Eigen::Index>(info.out),
              static_cast<Eigen::Index>(info.in)) = dw;
    const Eigen::RowVectorXd db = g.colwise().sum();
    Eigen::Map<Eigen::RowVectorXd>(result.param_grad.data() + info.bias_offset, static_cast<Eigen::Index>(info.out)) = db;

    Tensor next({batch, info.in});
    const RowMatrix dx = g * w;
    MatrixMap(next.data(), rows, static_cast<Eigen::Index>(info.in)) = dx;
    grad = std::move(next);
  }
  if (dL_dy.rank() == 1) {
    result.input_grad = Tensor({mlp.input_width()}, std::move(grad.storage()));
  } else {
    result.input_grad = std::move(grad);
  }
  return result;
}

}  // namespace fe4dgs
