#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "sdpoint/network.hpp"
#include "sdpoint/sdpoint.hpp"

namespace sdpoint {

// FLOP conventions (single image, multiply and add counted separately):
//   conv          2 * c_out * h_out * w_out * c_in * k^2
//   linear        2 * in * out
//   batchnorm     2 * c * h * w        (fused scale + shift)
//   relu          c * h * w
//   avg pool      one add per covered input cell + one divide per output
//   global pool   c * h * w adds + c divides
//   residual add  c * h * w
enum class LayerKind { kConv, kLinear, kBatchNorm, kRelu, kAvgPool, kGlobalAvgPool, kAdd };

std::string_view layer_kind_name(LayerKind kind);
// Throws UsageError for names outside the list above.
LayerKind parse_layer_kind(std::string_view name);

struct LayerHyper {
  std::size_t c_out = 0;  // conv output channels
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t pad = 0;
  std::size_t out_h = 0;  // avg pool target
  std::size_t out_w = 0;
  std::size_t out_features = 0;  // linear
};

// `in` is the per-image input shape (n is ignored).
std::uint64_t layer_flops(LayerKind kind, const Shape& in, const LayerHyper& hyper);

struct LayerCost {
  std::string layer;
  LayerKind kind = LayerKind::kConv;
  Shape input;
  std::uint64_t flops = 0;
};

struct CostReport {
  Instance instance;
  std::size_t input_size = 0;
  std::uint64_t flops = 0;
  std::vector<LayerCost> per_layer;
  std::uint64_t params = 0;

  double gflops() const { return static_cast<double>(flops) * 1e-9; }
};

// Analytic cost of one forward pass of a single image under `inst`,
// including the instance's own pooling.
CostReport instance_cost(const NetworkSpec& spec, const Instance& inst);
CostReport instance_cost(const NetworkSpec& spec, const Instance& inst, std::size_t input_size);

// Weights, BN affine parameters and classifier bias. Independent of the
// instance since all instances share parameters.
std::uint64_t param_count(const NetworkSpec& spec);

// Exact operation count obtained by executing a naive forward pass with an
// operation-counting scalar. Intended for small networks.
std::uint64_t flops_oracle(const NetworkSpec& spec, const Instance& inst);
std::uint64_t flops_oracle(const NetworkSpec& spec, const Instance& inst, std::size_t input_size);

}  // namespace sdpoint
