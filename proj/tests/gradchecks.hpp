// Finite-difference checks of every backward pass in double precision.
// Each returns the worst relative error over all checked gradients.
#pragma once

#include <algorithm>
#include <vector>

#include "sdpoint/layers.hpp"
#include "sdpoint/network.hpp"
#include "sdpoint/sdpoint.hpp"
#include "support.hpp"

namespace sdpoint::testing {

inline double check_conv(std::uint64_t seed, std::size_t stride, std::size_t pad, std::size_t kernel) {
  Rng rng(seed);
  Tensor4d x = random_tensor({2, 3, 6, 5}, rng);
  ConvParams<double> p{random_tensor({4, 3, kernel, kernel}, rng), stride, pad};
  ConvCache<double> cache;
  const Tensor4d out = conv2d_forward(x, p, &cache);
  const Tensor4d r = random_tensor(out.shape(), rng);
  const ConvGrads<double> g = conv2d_backward(r, cache, p);
  auto loss = [&] { return weighted_sum(conv2d_forward(x, p), r); };
  return std::max(relative_error(g.grad_x, numeric_gradient(x, loss)),
                  relative_error(g.grad_w, numeric_gradient(p.weight, loss)));
}

inline double check_batchnorm(std::uint64_t seed) {
  Rng rng(seed);
  Tensor4d x = random_tensor({3, 2, 3, 3}, rng, 2.0);
  BNParams<double> p(2);
  p.gamma = random_tensor({1, 2, 1, 1}, rng);
  p.beta = random_tensor({1, 2, 1, 1}, rng);
  BNCache<double> cache;
  const Tensor4d out = batchnorm_forward(x, p, BnMode::kTrain, nullptr, &cache);
  const Tensor4d r = random_tensor(out.shape(), rng);
  const BNGrads<double> g = batchnorm_backward(r, cache, p);
  auto loss = [&] { return weighted_sum(batchnorm_forward(x, p, BnMode::kBatchStats), r); };
  return std::max({relative_error(g.grad_x, numeric_gradient(x, loss)),
                   relative_error(g.grad_gamma, numeric_gradient(p.gamma, loss)),
                   relative_error(g.grad_beta, numeric_gradient(p.beta, loss))});
}

inline double check_linear(std::uint64_t seed) {
  Rng rng(seed);
  Tensor4d x = random_tensor({3, 2, 2, 2}, rng);
  LinearParams<double> p{random_tensor({5, 8, 1, 1}, rng), random_tensor({1, 5, 1, 1}, rng)};
  const Tensor4d out = linear_forward(x, p);
  const Tensor4d r = random_tensor(out.shape(), rng);
  const LinearGrads<double> g = linear_backward(r, x, p);
  auto loss = [&] { return weighted_sum(linear_forward(x, p), r); };
  return std::max({relative_error(g.grad_x, numeric_gradient(x, loss)),
                   relative_error(g.grad_w, numeric_gradient(p.weight, loss)),
                   relative_error(g.grad_b, numeric_gradient(p.bias, loss))});
}

inline double check_global_pool(std::uint64_t seed) {
  Rng rng(seed);
  Tensor4d x = random_tensor({2, 3, 4, 5}, rng);
  const Tensor4d r = random_tensor({2, 3, 1, 1}, rng);
  const Tensor4d gx = global_avg_pool_backward(r, x.shape());
  auto loss = [&] { return weighted_sum(global_avg_pool_forward(x), r); };
  return relative_error(gx, numeric_gradient(x, loss));
}

inline double check_adaptive_pool(std::uint64_t seed, std::size_t in_h, std::size_t in_w, std::size_t out_h,
                                  std::size_t out_w) {
  Rng rng(seed);
  Tensor4d x = random_tensor({2, 2, in_h, in_w}, rng);
  AdaptivePoolCache cache;
  const Tensor4d out = adaptive_avg_pool_forward(x, out_h, out_w, &cache);
  const Tensor4d r = random_tensor(out.shape(), rng);
  const Tensor4d gx = adaptive_avg_pool_backward(r, cache);
  auto loss = [&] { return weighted_sum(adaptive_avg_pool_forward(x, out_h, out_w), r); };
  return relative_error(gx, numeric_gradient(x, loss));
}

inline double check_softmax_ce(std::uint64_t seed) {
  Rng rng(seed);
  Tensor4d logits = random_tensor({4, 5, 1, 1}, rng, 3.0);
  const std::vector<int> labels{0, 3, 4, 1};
  const LossResult<double> res = softmax_cross_entropy(logits, labels);
  auto loss = [&] { return softmax_cross_entropy(logits, labels).loss; };
  return relative_error(res.grad_logits, numeric_gradient(logits, loss));
}

// Randomizes BN affine parameters so gradients through them are non-trivial.
template <typename T>
void randomize_bn(BatchNormLayer<T>& bn, Rng& rng) {
  const Shape s = bn.params.gamma.shape();
  bn.params.gamma = random_tensor(s, rng, 0.5);
  for (std::size_t i = 0; i < bn.params.gamma.size(); ++i) bn.params.gamma[i] += 1.0;
  bn.params.beta = random_tensor(s, rng, 0.5);
}

inline double check_residual_block(std::uint64_t seed, bool projection) {
  Rng rng(seed);
  const BlockSpec spec = projection ? BlockSpec{BlockKind::kPreActResidual, 3, 4, 2}
                                    : BlockSpec{BlockKind::kPreActResidual, 3, 3, 1};
  std::size_t counter = 0;
  ResidualBlock<double> block(spec, counter);
  randomize_bn(block.bn1, rng);
  randomize_bn(block.bn2, rng);
  block.conv1.params.weight = random_tensor(block.conv1.params.weight.shape(), rng, 0.5);
  block.conv2.params.weight = random_tensor(block.conv2.params.weight.shape(), rng, 0.5);
  if (block.shortcut) block.shortcut->params.weight = random_tensor(block.shortcut->params.weight.shape(), rng, 0.5);

  Tensor4d x = random_tensor({3, 3, 5, 5}, rng);
  ForwardContext train_ctx;
  train_ctx.bn_mode = BnMode::kTrain;
  train_ctx.keep_cache = true;
  const Tensor4d out = block.forward(x, train_ctx);
  const Tensor4d r = random_tensor(out.shape(), rng);
  const Tensor4d gx = block.backward(r);

  auto loss = [&] {
    ForwardContext ctx;
    ctx.bn_mode = BnMode::kBatchStats;
    return weighted_sum(block.forward(x, ctx), r);
  };
  double worst = relative_error(gx, numeric_gradient(x, loss));
  worst = std::max(worst, relative_error(block.conv1.grad_w, numeric_gradient(block.conv1.params.weight, loss)));
  worst = std::max(worst, relative_error(block.conv2.grad_w, numeric_gradient(block.conv2.params.weight, loss)));
  worst = std::max(worst, relative_error(block.bn1.grad_gamma, numeric_gradient(block.bn1.params.gamma, loss)));
  worst = std::max(worst, relative_error(block.bn2.grad_beta, numeric_gradient(block.bn2.params.beta, loss)));
  if (block.shortcut)
    worst = std::max(worst,
                     relative_error(block.shortcut->grad_w, numeric_gradient(block.shortcut->params.weight, loss)));
  return worst;
}

// Whole network under a downsampling instance, gradients w.r.t. the input
// and every parameter.
inline double check_network(std::uint64_t seed, const Instance& inst) {
  Network<double> net(tiny_residual_spec(8, 3), seed);
  Rng rng(seed + 1);
  Tensor4d x = random_tensor({2, 3, 8, 8}, rng);
  ForwardContext train_ctx;
  train_ctx.bn_mode = BnMode::kTrain;
  train_ctx.keep_cache = true;
  SDPointTrace trace;
  net.zero_grad();
  const Tensor4d logits = sdpoint_forward(net, x, inst, train_ctx, &trace);
  const Tensor4d r = random_tensor(logits.shape(), rng);
  const Tensor4d gx = sdpoint_backward(net, r, trace);

  auto loss = [&] {
    ForwardContext ctx;
    ctx.bn_mode = BnMode::kBatchStats;
    return weighted_sum(sdpoint_forward(net, x, inst, ctx), r);
  };
  double worst = relative_error(gx, numeric_gradient(x, loss));
  for (ParamRef<double>& p : net.parameters()) worst = std::max(worst, relative_error(*p.grad, numeric_gradient(*p.value, loss)));
  return worst;
}

}  // namespace sdpoint::testing
