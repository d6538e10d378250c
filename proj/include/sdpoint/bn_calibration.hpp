#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "sdpoint/network.hpp"
#include "sdpoint/sdpoint.hpp"

namespace sdpoint {

// Statistics for BN layers [first_layer, num_bn_layers) of one instance.
// Layers before first_layer see activations identical to the identity
// instance and read the baseline instead.
struct InstanceOverride {
  std::size_t first_layer = 0;
  std::vector<ChannelStats> layers;
  friend bool operator==(const InstanceOverride&, const InstanceOverride&) = default;
};

struct InstanceBNStore {
  std::vector<ChannelStats> baseline;  // identity instance, one entry per BN layer
  std::vector<std::pair<std::string, InstanceOverride>> overrides;  // catalog order
  std::uint32_t calibration_batches = 0;
  std::uint64_t seed = 0;

  const InstanceOverride* find(std::string_view id) const;
  std::size_t scalar_count() const;  // stored means + variances
  friend bool operator==(const InstanceBNStore&, const InstanceBNStore&) = default;
};

// Forward pass used during calibration; lets callers substitute e.g. input
// resizing for the multiscale baseline.
using CalibrationForward = std::function<void(Network<float>&, const Tensor4&, ForwardContext&)>;

// Runs every batch through `forward` in batch-statistics mode (running
// statistics untouched) and aggregates per BN layer: mean of batch means,
// and mean of batch variances plus the variance of batch means.
std::vector<ChannelStats> calibrate(Network<float>& net, std::span<const Tensor4> batches,
                                    const CalibrationForward& forward);

std::vector<ChannelStats> calibrate_instance(Network<float>& net, const Instance& inst,
                                             std::span<const Tensor4> batches);

// First BN layer whose input is affected by downsampling after block `point`.
std::size_t first_affected_layer(const Network<float>& net, std::size_t point);

// Calibrates every instance. With share_prefix, an instance stores only the
// layers after its downsampling point; otherwise every layer is replicated.
InstanceBNStore build_store(Network<float>& net, const InstanceCatalog& catalog, std::span<const Tensor4> batches,
                            bool share_prefix = true);

// Selection rule: identity or layer before the override range -> baseline.
const ChannelStats& select_stats(const InstanceBNStore& store, std::string_view instance_id, std::size_t layer);

// StatsSelector for ForwardContext; validates the id up front.
StatsSelector make_selector(const InstanceBNStore& store, std::string instance_id);

// Running statistics of a network in store form (uniform BN).
std::vector<ChannelStats> running_stats(const Network<float>& net);

std::vector<std::uint8_t> serialize_store(const InstanceBNStore& store);
InstanceBNStore deserialize_store(std::span<const std::uint8_t> bytes);

}  // namespace sdpoint
