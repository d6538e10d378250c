#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "sdpoint/layers.hpp"
#include "sdpoint/tensor.hpp"

namespace sdpoint {

// ---------------------------------------------------------------------------
// Declarative architecture

enum class BlockKind : std::uint8_t {
  kPlain = 0,           // conv-BN-ReLU
  kPreActResidual = 1,  // BN-ReLU-conv-BN-ReLU-conv + shortcut
};

struct BlockSpec {
  BlockKind kind = BlockKind::kPreActResidual;
  std::size_t c_in = 16;
  std::size_t c_out = 16;
  std::size_t stride = 1;
  std::size_t kernel = 3;

  // Residual blocks that change width or resolution use a 1x1 projection.
  bool needs_projection() const { return kind == BlockKind::kPreActResidual && (c_in != c_out || stride != 1); }
  friend bool operator==(const BlockSpec&, const BlockSpec&) = default;
};

struct StemSpec {
  std::size_t c_out = 16;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  friend bool operator==(const StemSpec&, const StemSpec&) = default;
};

struct NetworkSpec {
  std::size_t input_channels = 3;
  std::size_t input_size = 32;
  std::optional<StemSpec> stem;
  std::vector<BlockSpec> blocks;  // block i of the text is blocks[i - 1]
  bool head_bn_relu = true;       // pre-activation nets finish with BN-ReLU
  std::size_t num_classes = 10;   // 0: no classifier, head ends at global pooling

  std::size_t num_blocks() const { return blocks.size(); }
  std::size_t feature_channels() const;
  // 1-based indices of blocks containing a fixed stride-2 downsampling.
  std::vector<std::size_t> stage_boundaries() const;
  // Throws UsageError when channel widths do not chain.
  void validate() const;

  friend bool operator==(const NetworkSpec&, const NetworkSpec&) = default;
};

// Pre-activation wide residual network for CIFAR-sized inputs: a 3x3 stem
// with 16 channels followed by three stages of (depth - 4) / 6 blocks of
// width 16k, 32k, 64k.
NetworkSpec wide_resnet_spec(std::size_t depth, std::size_t widen, std::size_t num_classes,
                             std::size_t input_size = 32);

// ---------------------------------------------------------------------------
// Forward-pass configuration

using StatsSelector = std::function<const ChannelStats*(std::size_t bn_index)>;

struct ForwardContext {
  BnMode bn_mode = BnMode::kEval;
  bool keep_cache = false;
  // Eval mode only: statistics for BN layer `bn_index`, or nullptr to use the
  // layer's running statistics.
  StatsSelector stats;
  // When set, receives the batch statistics of every BN layer (batch modes).
  std::vector<BatchStats>* observed = nullptr;
};

struct BnLayerInfo {
  std::string name;
  std::size_t owner_block = 0;  // 1..N for blocks, N + 1 for the head
  std::size_t channels = 0;
};

template <typename T>
struct ParamRef {
  std::string name;
  BasicTensor4<T>* value = nullptr;
  BasicTensor4<T>* grad = nullptr;
};

struct NamedTensor {
  std::string name;
  Tensor4 value;
  friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

// ---------------------------------------------------------------------------
// Stateful layers with forward caches and gradient accumulators

template <typename T>
struct ConvLayer {
  ConvParams<T> params;
  BasicTensor4<T> grad_w;
  ConvCache<T> cache;

  ConvLayer() = default;
  ConvLayer(std::size_t c_in, std::size_t c_out, std::size_t kernel, std::size_t stride, std::size_t pad);
  BasicTensor4<T> forward(const BasicTensor4<T>& x, bool keep_cache);
  BasicTensor4<T> backward(const BasicTensor4<T>& grad_out);
};

template <typename T>
struct BatchNormLayer {
  BNParams<T> params;
  BasicTensor4<T> grad_gamma;
  BasicTensor4<T> grad_beta;
  BNCache<T> cache;
  std::size_t index = 0;  // position among all BN layers of the network

  BatchNormLayer() = default;
  BatchNormLayer(std::size_t channels, std::size_t index);
  BasicTensor4<T> forward(const BasicTensor4<T>& x, ForwardContext& ctx);
  BasicTensor4<T> backward(const BasicTensor4<T>& grad_out);
};

template <typename T>
class PlainBlock {
 public:
  PlainBlock(const BlockSpec& spec, std::size_t& bn_counter);
  BasicTensor4<T> forward(const BasicTensor4<T>& x, ForwardContext& ctx);
  BasicTensor4<T> backward(const BasicTensor4<T>& grad_out);

  ConvLayer<T> conv;
  BatchNormLayer<T> bn;

 private:
  BasicTensor4<T> relu_out_;
};

template <typename T>
class ResidualBlock {
 public:
  ResidualBlock(const BlockSpec& spec, std::size_t& bn_counter);
  BasicTensor4<T> forward(const BasicTensor4<T>& x, ForwardContext& ctx);
  BasicTensor4<T> backward(const BasicTensor4<T>& grad_out);

  BatchNormLayer<T> bn1;
  ConvLayer<T> conv1;
  BatchNormLayer<T> bn2;
  ConvLayer<T> conv2;
  std::optional<ConvLayer<T>> shortcut;  // applied to the pre-activated input

 private:
  BasicTensor4<T> act1_;
  BasicTensor4<T> act2_;
};

template <typename T>
using Block = std::variant<PlainBlock<T>, ResidualBlock<T>>;

// ---------------------------------------------------------------------------

// Instantiated parameters for a NetworkSpec plus per-layer caches. A single
// training step owns the stack; frozen stacks may be read concurrently only
// through eval-mode forwards without caches.
template <typename T>
class Network {
 public:
  Network(NetworkSpec spec, std::uint64_t init_seed);

  const NetworkSpec& spec() const { return spec_; }
  std::size_t num_blocks() const { return blocks_.size(); }

  // Plain forward and backward: stem, blocks 1..N, head.
  BasicTensor4<T> forward(const BasicTensor4<T>& x, ForwardContext& ctx);
  BasicTensor4<T> backward(const BasicTensor4<T>& grad_logits);

  // Piecewise access used by instance-aware forwards. Block indices are 1-based.
  BasicTensor4<T> forward_stem(const BasicTensor4<T>& x, ForwardContext& ctx);
  BasicTensor4<T> forward_block(std::size_t i, const BasicTensor4<T>& x, ForwardContext& ctx);
  BasicTensor4<T> forward_head(const BasicTensor4<T>& x, ForwardContext& ctx);
  BasicTensor4<T> backward_head(const BasicTensor4<T>& grad_out);
  BasicTensor4<T> backward_block(std::size_t i, const BasicTensor4<T>& grad_out);
  BasicTensor4<T> backward_stem(const BasicTensor4<T>& grad_out);

  std::vector<ParamRef<T>> parameters();
  void zero_grad();

  std::size_t num_bn_layers() const { return bn_info_.size(); }
  const std::vector<BnLayerInfo>& bn_layers() const { return bn_info_; }
  BNParams<T>& bn_params(std::size_t index);
  const BNParams<T>& bn_params(std::size_t index) const;

  // Parameters and running statistics as named float tensors, in a fixed order.
  std::vector<NamedTensor> state() const;
  void load_state(const std::vector<NamedTensor>& tensors);
  std::vector<std::uint64_t> bn_batches_tracked() const;
  void set_bn_batches_tracked(const std::vector<std::uint64_t>& counts);

 private:
  void index_layers();
  template <typename Fn>
  void for_each_bn(Fn&& fn);
  template <typename Fn>
  void for_each_bn(Fn&& fn) const;

  NetworkSpec spec_;
  std::optional<ConvLayer<T>> stem_;
  std::vector<Block<T>> blocks_;
  std::optional<BatchNormLayer<T>> head_bn_;
  std::optional<LinearParams<T>> fc_;
  LinearParams<T> fc_grad_;
  BasicTensor4<T> head_act_;
  Shape head_pool_input_;
  BasicTensor4<T> fc_input_;

  std::vector<BnLayerInfo> bn_info_;
};

}  // namespace sdpoint
