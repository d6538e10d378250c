#include "sdpoint/network.hpp"

#include <cmath>
#include <unordered_map>

#include "sdpoint/rng.hpp"

namespace sdpoint {

std::size_t NetworkSpec::feature_channels() const {
  if (!blocks.empty()) return blocks.back().c_out;
  if (stem) return stem->c_out;
  return input_channels;
}

std::vector<std::size_t> NetworkSpec::stage_boundaries() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < blocks.size(); ++i)
    if (blocks[i].stride == 2) out.push_back(i + 1);
  return out;
}

void NetworkSpec::validate() const {
  if (input_channels == 0 || input_size == 0) throw UsageError("network input must have channels and size >= 1");
  std::size_t channels = input_channels;
  if (stem) {
    if (stem->kernel == 0 || stem->c_out == 0) throw UsageError("stem convolution needs kernel and width >= 1");
    channels = stem->c_out;
  }
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const BlockSpec& b = blocks[i];
    if (b.c_in != channels)
      throw UsageError("block " + std::to_string(i + 1) + " expects " + std::to_string(b.c_in) +
                       " input channels but receives " + std::to_string(channels));
    if (b.stride != 1 && b.stride != 2) throw UsageError("block stride must be 1 or 2");
    if (b.kernel == 0 || b.kernel % 2 == 0) throw UsageError("block kernel must be odd and >= 1");
    if (b.c_out == 0) throw UsageError("block width must be >= 1");
    channels = b.c_out;
  }
}

NetworkSpec wide_resnet_spec(std::size_t depth, std::size_t widen, std::size_t num_classes, std::size_t input_size) {
  if (depth < 10 || (depth - 4) % 6 != 0)
    throw UsageError("wide resnet depth must satisfy (depth - 4) % 6 == 0 and depth >= 10, got " +
                     std::to_string(depth));
  if (widen == 0) throw UsageError("widen factor must be >= 1");
  NetworkSpec spec;
  spec.input_channels = 3;
  spec.input_size = input_size;
  spec.stem = StemSpec{16, 3, 1};
  spec.head_bn_relu = true;
  spec.num_classes = num_classes;
  const std::size_t per_stage = (depth - 4) / 6;
  std::size_t channels = 16;
  for (std::size_t stage = 0; stage < 3; ++stage) {
    const std::size_t width = (16u << stage) * widen;
    for (std::size_t j = 0; j < per_stage; ++j) {
      BlockSpec b;
      b.kind = BlockKind::kPreActResidual;
      b.c_in = channels;
      b.c_out = width;
      b.stride = (stage > 0 && j == 0) ? 2 : 1;
      spec.blocks.push_back(b);
      channels = width;
    }
  }
  return spec;
}

// ---------------------------------------------------------------------------

template <typename T>
ConvLayer<T>::ConvLayer(std::size_t c_in, std::size_t c_out, std::size_t kernel, std::size_t stride,
                        std::size_t pad)
    : params{BasicTensor4<T>(Shape{c_out, c_in, kernel, kernel}), stride, pad},
      grad_w(Shape{c_out, c_in, kernel, kernel}) {}

template <typename T>
BasicTensor4<T> ConvLayer<T>::forward(const BasicTensor4<T>& x, bool keep_cache) {
  return conv2d_forward(x, params, keep_cache ? &cache : nullptr);
}

template <typename T>
BasicTensor4<T> ConvLayer<T>::backward(const BasicTensor4<T>& grad_out) {
  ConvGrads<T> g = conv2d_backward(grad_out, cache, params);
  add_inplace(grad_w, g.grad_w);
  return std::move(g.grad_x);
}

template <typename T>
BatchNormLayer<T>::BatchNormLayer(std::size_t channels, std::size_t idx)
    : params(channels),
      grad_gamma(Shape{1, channels, 1, 1}),
      grad_beta(Shape{1, channels, 1, 1}),
      index(idx) {}

template <typename T>
BasicTensor4<T> BatchNormLayer<T>::forward(const BasicTensor4<T>& x, ForwardContext& ctx) {
  const ChannelStats* override_stats = nullptr;
  if (ctx.bn_mode == BnMode::kEval && ctx.stats) override_stats = ctx.stats(index);
  BatchStats* observed = nullptr;
  if (ctx.observed && ctx.bn_mode != BnMode::kEval) {
    if (ctx.observed->size() <= index) ctx.observed->resize(index + 1);
    observed = &(*ctx.observed)[index];
  }
  return batchnorm_forward(x, params, ctx.bn_mode, override_stats, ctx.keep_cache ? &cache : nullptr, observed);
}

template <typename T>
BasicTensor4<T> BatchNormLayer<T>::backward(const BasicTensor4<T>& grad_out) {
  BNGrads<T> g = batchnorm_backward(grad_out, cache, params);
  add_inplace(grad_gamma, g.grad_gamma);
  add_inplace(grad_beta, g.grad_beta);
  return std::move(g.grad_x);
}

template <typename T>
PlainBlock<T>::PlainBlock(const BlockSpec& spec, std::size_t& bn_counter)
    : conv(spec.c_in, spec.c_out, spec.kernel, spec.stride, spec.kernel / 2), bn(spec.c_out, bn_counter++) {}

template <typename T>
BasicTensor4<T> PlainBlock<T>::forward(const BasicTensor4<T>& x, ForwardContext& ctx) {
  BasicTensor4<T> out = relu_forward(bn.forward(conv.forward(x, ctx.keep_cache), ctx));
  if (ctx.keep_cache) relu_out_ = out;
  return out;
}

template <typename T>
BasicTensor4<T> PlainBlock<T>::backward(const BasicTensor4<T>& grad_out) {
  return conv.backward(bn.backward(relu_backward(grad_out, relu_out_)));
}

template <typename T>
ResidualBlock<T>::ResidualBlock(const BlockSpec& spec, std::size_t& bn_counter)
    : bn1(spec.c_in, bn_counter++),
      conv1(spec.c_in, spec.c_out, spec.kernel, spec.stride, spec.kernel / 2),
      bn2(spec.c_out, bn_counter++),
      conv2(spec.c_out, spec.c_out, spec.kernel, 1, spec.kernel / 2) {
  if (spec.needs_projection()) shortcut.emplace(spec.c_in, spec.c_out, 1, spec.stride, 0);
}

template <typename T>
BasicTensor4<T> ResidualBlock<T>::forward(const BasicTensor4<T>& x, ForwardContext& ctx) {
  BasicTensor4<T> a1 = relu_forward(bn1.forward(x, ctx));
  BasicTensor4<T> a2 = relu_forward(bn2.forward(conv1.forward(a1, ctx.keep_cache), ctx));
  BasicTensor4<T> out = conv2.forward(a2, ctx.keep_cache);
  if (shortcut) {
    BasicTensor4<T> sc = shortcut->forward(a1, ctx.keep_cache);
    if (sc.shape() != out.shape())
      throw UsageError("residual streams disagree: shortcut " + to_string(sc.shape()) + " vs body " +
                       to_string(out.shape()));
    add_inplace(out, sc);
  } else {
    if (x.shape() != out.shape())
      throw UsageError("residual streams disagree: identity " + to_string(x.shape()) + " vs body " +
                       to_string(out.shape()));
    add_inplace(out, x);
  }
  if (ctx.keep_cache) {
    act1_ = std::move(a1);
    act2_ = std::move(a2);
  }
  return out;
}

template <typename T>
BasicTensor4<T> ResidualBlock<T>::backward(const BasicTensor4<T>& grad_out) {
  BasicTensor4<T> g_a2 = conv2.backward(grad_out);
  BasicTensor4<T> g_a1 = conv1.backward(bn2.backward(relu_backward(g_a2, act2_)));
  if (shortcut) {
    add_inplace(g_a1, shortcut->backward(grad_out));
    return bn1.backward(relu_backward(g_a1, act1_));
  }
  BasicTensor4<T> g_x = bn1.backward(relu_backward(g_a1, act1_));
  add_inplace(g_x, grad_out);
  return g_x;
}

// ---------------------------------------------------------------------------

namespace {

template <typename T>
void init_conv(ConvLayer<T>& layer, Rng& rng) {
  const Shape& s = layer.params.weight.shape();
  // He initialization on fan-out, as in the wide resnet reference code.
  const double std_dev = std::sqrt(2.0 / static_cast<double>(s.n * s.h * s.w));
  for (T& v : layer.params.weight.data()) v = static_cast<T>(rng.normal() * std_dev);
}

}  // namespace

template <typename T>
Network<T>::Network(NetworkSpec spec, std::uint64_t init_seed) : spec_(std::move(spec)) {
  spec_.validate();
  Rng rng = Rng(init_seed).derive(0x1417);
  std::size_t bn_counter = 0;
  if (spec_.stem) {
    stem_.emplace(spec_.input_channels, spec_.stem->c_out, spec_.stem->kernel, spec_.stem->stride,
                  spec_.stem->kernel / 2);
    init_conv(*stem_, rng);
  }
  blocks_.reserve(spec_.blocks.size());
  for (const BlockSpec& b : spec_.blocks) {
    if (b.kind == BlockKind::kPlain) {
      PlainBlock<T> block(b, bn_counter);
      init_conv(block.conv, rng);
      blocks_.emplace_back(std::move(block));
    } else {
      ResidualBlock<T> block(b, bn_counter);
      init_conv(block.conv1, rng);
      init_conv(block.conv2, rng);
      if (block.shortcut) init_conv(*block.shortcut, rng);
      blocks_.emplace_back(std::move(block));
    }
  }
  const std::size_t features = spec_.feature_channels();
  if (spec_.head_bn_relu) head_bn_.emplace(features, bn_counter++);
  if (spec_.num_classes > 0) {
    LinearParams<T> fc{BasicTensor4<T>(Shape{spec_.num_classes, features, 1, 1}),
                       BasicTensor4<T>(Shape{1, spec_.num_classes, 1, 1})};
    const double bound = 1.0 / std::sqrt(static_cast<double>(features));
    for (T& v : fc.weight.data()) v = static_cast<T>((2.0 * rng.uniform01() - 1.0) * bound);
    fc_grad_ = LinearParams<T>{BasicTensor4<T>(fc.weight.shape()), BasicTensor4<T>(fc.bias.shape())};
    fc_ = std::move(fc);
  }
  index_layers();
}

template <typename T>
template <typename Fn>
void Network<T>::for_each_bn(Fn&& fn) {
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const std::string prefix = "blocks." + std::to_string(i + 1) + ".";
    if (auto* pb = std::get_if<PlainBlock<T>>(&blocks_[i])) {
      fn(prefix + "bn", pb->bn, i + 1);
    } else {
      auto& rb = std::get<ResidualBlock<T>>(blocks_[i]);
      fn(prefix + "bn1", rb.bn1, i + 1);
      fn(prefix + "bn2", rb.bn2, i + 1);
    }
  }
  if (head_bn_) fn(std::string("head.bn"), *head_bn_, blocks_.size() + 1);
}

template <typename T>
template <typename Fn>
void Network<T>::for_each_bn(Fn&& fn) const {
  const_cast<Network<T>*>(this)->for_each_bn(
      [&](const std::string& name, BatchNormLayer<T>& layer, std::size_t owner) { fn(name, std::as_const(layer), owner); });
}

template <typename T>
void Network<T>::index_layers() {
  bn_info_.clear();
  for_each_bn([&](const std::string& name, BatchNormLayer<T>& layer, std::size_t owner) {
    bn_info_.push_back(BnLayerInfo{name, owner, layer.params.channels()});
  });
}

template <typename T>
BNParams<T>& Network<T>::bn_params(std::size_t index) {
  BNParams<T>* found = nullptr;
  for_each_bn([&](const std::string&, BatchNormLayer<T>& layer, std::size_t) {
    if (layer.index == index) found = &layer.params;
  });
  if (!found) throw UsageError("no batchnorm layer with index " + std::to_string(index));
  return *found;
}

template <typename T>
const BNParams<T>& Network<T>::bn_params(std::size_t index) const {
  return const_cast<Network<T>*>(this)->bn_params(index);
}

template <typename T>
BasicTensor4<T> Network<T>::forward_stem(const BasicTensor4<T>& x, ForwardContext& ctx) {
  if (x.shape().c != spec_.input_channels)
    throw UsageError("network expects " + std::to_string(spec_.input_channels) + " input channels, got " +
                     std::to_string(x.shape().c));
  if (!stem_) return x;
  return stem_->forward(x, ctx.keep_cache);
}

template <typename T>
BasicTensor4<T> Network<T>::forward_block(std::size_t i, const BasicTensor4<T>& x, ForwardContext& ctx) {
  if (i == 0 || i > blocks_.size()) throw UsageError("block index " + std::to_string(i) + " out of range");
  return std::visit([&](auto& block) { return block.forward(x, ctx); }, blocks_[i - 1]);
}

template <typename T>
BasicTensor4<T> Network<T>::forward_head(const BasicTensor4<T>& x, ForwardContext& ctx) {
  BasicTensor4<T> act = x;
  if (head_bn_) {
    act = relu_forward(head_bn_->forward(x, ctx));
    if (ctx.keep_cache) head_act_ = act;
  }
  if (ctx.keep_cache) head_pool_input_ = act.shape();
  BasicTensor4<T> pooled = global_avg_pool_forward(act);
  if (!fc_) return pooled;
  if (ctx.keep_cache) fc_input_ = pooled;
  return linear_forward(pooled, *fc_);
}

template <typename T>
BasicTensor4<T> Network<T>::backward_head(const BasicTensor4<T>& grad_out) {
  BasicTensor4<T> g = grad_out;
  if (fc_) {
    LinearGrads<T> lg = linear_backward(grad_out, fc_input_, *fc_);
    add_inplace(fc_grad_.weight, lg.grad_w);
    add_inplace(fc_grad_.bias, lg.grad_b);
    g = std::move(lg.grad_x);
  }
  g = global_avg_pool_backward(g, head_pool_input_);
  if (head_bn_) g = head_bn_->backward(relu_backward(g, head_act_));
  return g;
}

template <typename T>
BasicTensor4<T> Network<T>::backward_block(std::size_t i, const BasicTensor4<T>& grad_out) {
  if (i == 0 || i > blocks_.size()) throw UsageError("block index " + std::to_string(i) + " out of range");
  return std::visit([&](auto& block) { return block.backward(grad_out); }, blocks_[i - 1]);
}

template <typename T>
BasicTensor4<T> Network<T>::backward_stem(const BasicTensor4<T>& grad_out) {
  if (!stem_) return grad_out;
  return stem_->backward(grad_out);
}

template <typename T>
BasicTensor4<T> Network<T>::forward(const BasicTensor4<T>& x, ForwardContext& ctx) {
  BasicTensor4<T> h = forward_stem(x, ctx);
  for (std::size_t i = 1; i <= blocks_.size(); ++i) h = forward_block(i, h, ctx);
  return forward_head(h, ctx);
}

template <typename T>
BasicTensor4<T> Network<T>::backward(const BasicTensor4<T>& grad_logits) {
  BasicTensor4<T> g = backward_head(grad_logits);
  for (std::size_t i = blocks_.size(); i >= 1; --i) g = backward_block(i, g);
  return backward_stem(g);
}

template <typename T>
std::vector<ParamRef<T>> Network<T>::parameters() {
  std::vector<ParamRef<T>> out;
  auto conv = [&](const std::string& name, ConvLayer<T>& layer) {
    out.push_back({name + ".weight", &layer.params.weight, &layer.grad_w});
  };
  auto bn = [&](const std::string& name, BatchNormLayer<T>& layer) {
    out.push_back({name + ".gamma", &layer.params.gamma, &layer.grad_gamma});
    out.push_back({name + ".beta", &layer.params.beta, &layer.grad_beta});
  };
  if (stem_) conv("stem.conv", *stem_);
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const std::string prefix = "blocks." + std::to_string(i + 1) + ".";
    if (auto* pb = std::get_if<PlainBlock<T>>(&blocks_[i])) {
      conv(prefix + "conv", pb->conv);
      bn(prefix + "bn", pb->bn);
    } else {
      auto& rb = std::get<ResidualBlock<T>>(blocks_[i]);
      bn(prefix + "bn1", rb.bn1);
      conv(prefix + "conv1", rb.conv1);
      bn(prefix + "bn2", rb.bn2);
      conv(prefix + "conv2", rb.conv2);
      if (rb.shortcut) conv(prefix + "shortcut", *rb.shortcut);
    }
  }
  if (head_bn_) bn("head.bn", *head_bn_);
  if (fc_) {
    out.push_back({"head.fc.weight", &fc_->weight, &fc_grad_.weight});
    out.push_back({"head.fc.bias", &fc_->bias, &fc_grad_.bias});
  }
  return out;
}

template <typename T>
void Network<T>::zero_grad() {
  for (ParamRef<T>& p : parameters()) p.grad->fill(T(0));
}

template <typename T>
std::vector<NamedTensor> Network<T>::state() const {
  std::vector<NamedTensor> out;
  for (const ParamRef<T>& p : const_cast<Network<T>*>(this)->parameters())
    out.push_back({p.name, p.value->template cast<float>()});
  for_each_bn([&](const std::string& name, const BatchNormLayer<T>& layer, std::size_t) {
    out.push_back({name + ".running_mean", layer.params.running_mean.template cast<float>()});
    out.push_back({name + ".running_var", layer.params.running_var.template cast<float>()});
  });
  return out;
}

template <typename T>
void Network<T>::load_state(const std::vector<NamedTensor>& tensors) {
  std::unordered_map<std::string, const Tensor4*> by_name;
  for (const NamedTensor& t : tensors) by_name[t.name] = &t.value;
  auto assign = [&](const std::string& name, BasicTensor4<T>& dst) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw DataError("state is missing tensor '" + name + "'");
    if (it->second->shape() != dst.shape())
      throw DataError("tensor '" + name + "' has shape " + to_string(it->second->shape()) + ", expected " +
                      to_string(dst.shape()));
    dst = it->second->template cast<T>();
    by_name.erase(it);
  };
  for (ParamRef<T>& p : parameters()) assign(p.name, *p.value);
  for_each_bn([&](const std::string& name, BatchNormLayer<T>& layer, std::size_t) {
    assign(name + ".running_mean", layer.params.running_mean);
    assign(name + ".running_var", layer.params.running_var);
  });
  if (!by_name.empty()) throw DataError("state has unexpected tensor '" + by_name.begin()->first + "'");
}

template <typename T>
std::vector<std::uint64_t> Network<T>::bn_batches_tracked() const {
  std::vector<std::uint64_t> out;
  for_each_bn([&](const std::string&, const BatchNormLayer<T>& layer, std::size_t) {
    out.push_back(layer.params.batches_tracked);
  });
  return out;
}

template <typename T>
void Network<T>::set_bn_batches_tracked(const std::vector<std::uint64_t>& counts) {
  if (counts.size() != bn_info_.size()) throw DataError("batchnorm tracking count list has wrong length");
  std::size_t i = 0;
  for_each_bn([&](const std::string&, BatchNormLayer<T>& layer, std::size_t) {
    layer.params.batches_tracked = counts[i++];
  });
}

template struct ConvLayer<float>;
template struct ConvLayer<double>;
template struct BatchNormLayer<float>;
template struct BatchNormLayer<double>;
template class PlainBlock<float>;
template class PlainBlock<double>;
template class ResidualBlock<float>;
template class ResidualBlock<double>;
template class Network<float>;
template class Network<double>;

}  // namespace sdpoint
