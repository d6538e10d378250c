#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sdpoint/bn_calibration.hpp"
#include "sdpoint/data.hpp"
#include "sdpoint/network.hpp"

namespace sdpoint {

enum class TrainMode : std::uint8_t { kSdpoint = 0, kBaseline = 1, kMultiscale = 2 };

std::string_view train_mode_name(TrainMode mode);
TrainMode parse_train_mode(std::string_view name);

// Byte layout (all integers and floats little-endian):
//   "SDPT" u32 version
//   spec:    u32 input_channels, u32 input_size, u8 has_stem [u32 c_out, u32 kernel, u32 stride],
//            u32 blocks x (u8 kind, u32 c_in, u32 c_out, u32 stride, u32 kernel),
//            u8 head_bn_relu, u32 num_classes
//   ratios:  u32 count, f64 x count
//   u8 mode, f32 x 3 channel means, f32 x 3 channel stds, u64 seed, u32 epochs
//   tensors: u32 count x (u32 name_len, name, u32 dims[4], f32 data)
//   u32 count x u64 batchnorm batches tracked
//   u8 has_store [u64 length, statistics store bytes]
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  NetworkSpec spec;
  std::vector<double> ratios;
  TrainMode mode = TrainMode::kSdpoint;
  ChannelNorm norm;
  std::uint64_t seed = 0;
  std::uint32_t epochs = 0;
  std::vector<NamedTensor> tensors;
  std::vector<std::uint64_t> bn_batches_tracked;
  std::optional<InstanceBNStore> store;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

Checkpoint make_checkpoint(const Network<float>& net, std::vector<double> ratios, TrainMode mode,
                           const ChannelNorm& norm, std::uint64_t seed, std::uint32_t epochs);
Network<float> network_from_checkpoint(const Checkpoint& ckpt);

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace sdpoint
