#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "sdpoint/network.hpp"
#include "sdpoint/rng.hpp"
#include "sdpoint/tensor.hpp"

namespace sdpoint {

// A downsampling configuration of a shared-parameter network: average-pool
// the output of block `point` by `ratio` on both axes. point == 0 is the
// unmodified network and its ratio is ignored.
struct Instance {
  std::size_t point = 0;
  double ratio = 1.0;

  bool is_identity() const { return point == 0; }
  // "p0" for the identity, otherwise "p{point}_r{round(100 * ratio)}".
  std::string id() const;

  friend bool operator==(const Instance& a, const Instance& b) {
    return a.point == b.point && (a.point == 0 || a.ratio == b.ratio);
  }
};

struct InstanceCatalog {
  std::size_t num_points = 0;  // N
  std::vector<double> ratios;  // ascending
  std::vector<Instance> instances;

  std::size_t size() const { return instances.size(); }
  // Throws UsageError listing the valid ids when `id` is unknown.
  const Instance& find(std::string_view id) const;
  std::vector<std::string> ids() const;
};

// Identity first, then (point ascending, ratio ascending); N * |R| + 1 entries.
InstanceCatalog enumerate_instances(std::size_t num_points, std::vector<double> ratios);

// Draws the point uniformly from {0..N}, then always draws a ratio index so
// the stream advances identically whether or not the identity was chosen.
Instance sample_instance(const InstanceCatalog& catalog, Rng& rng);

// max(1, floor(in * ratio + 0.5)).
std::size_t target_size(std::size_t in_size, double ratio);

// Half-open input range [start, end) averaged into one output cell.
struct PoolWindow {
  std::size_t start = 0;
  std::size_t end = 0;
  std::size_t length() const { return end - start; }
  friend bool operator==(const PoolWindow&, const PoolWindow&) = default;
};

// start = floor(j * in / out), end = ceil((j + 1) * in / out). Requires
// 1 <= out <= in.
std::vector<PoolWindow> pool_windows(std::size_t in_size, std::size_t out_size);

struct AdaptivePoolCache {
  Shape input_shape;
  std::size_t out_h = 0;
  std::size_t out_w = 0;
};

template <typename T>
BasicTensor4<T> adaptive_avg_pool_forward(const BasicTensor4<T>& x, std::size_t out_h, std::size_t out_w,
                                          AdaptivePoolCache* cache = nullptr);

template <typename T>
BasicTensor4<T> adaptive_avg_pool_backward(const BasicTensor4<T>& grad_out, const AdaptivePoolCache& cache);

// Fraction of stride-1 convolution outputs whose kernel window touches at
// least one zero-padded cell.
double padded_pixel_ratio(std::size_t h, std::size_t w, std::size_t kernel, std::size_t pad);

// What sdpoint_backward needs to undo the instance's downsampling.
struct SDPointTrace {
  Instance instance;
  std::optional<AdaptivePoolCache> pool;
};

// Runs stem, blocks 1..N and head; after block inst.point the merged output
// is average-pooled to target_size(h, r) x target_size(w, r).
template <typename T>
BasicTensor4<T> sdpoint_forward(Network<T>& net, const BasicTensor4<T>& x, const Instance& inst,
                                ForwardContext& ctx, SDPointTrace* trace = nullptr);

// Backward of the most recent caching sdpoint_forward. Returns the input
// gradient; parameter gradients accumulate in `net`.
template <typename T>
BasicTensor4<T> sdpoint_backward(Network<T>& net, const BasicTensor4<T>& grad_logits, const SDPointTrace& trace);

// Spatial size entering each block (index 1..N) and the head (index N + 1)
// under an instance, for a square input of `input_size`.
std::vector<std::size_t> spatial_trace(const NetworkSpec& spec, const Instance& inst, std::size_t input_size);

}  // namespace sdpoint
