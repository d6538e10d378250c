#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sdpoint/rng.hpp"
#include "sdpoint/tensor.hpp"

namespace sdpoint {

inline constexpr std::size_t kCifarSide = 32;
inline constexpr std::size_t kCifarChannels = 3;
inline constexpr std::size_t kCifarPixels = kCifarChannels * kCifarSide * kCifarSide;  // 3072
inline constexpr std::size_t kCifarRecord = 1 + kCifarPixels;                          // 3073
inline constexpr std::size_t kCifarClasses = 10;

struct Dataset {
  Tensor4 images;  // (n, 3, 32, 32)
  std::vector<int> labels;
  std::string split;

  std::size_t size() const { return labels.size(); }
  // First `count` samples (all of them if count >= size()).
  Dataset head(std::size_t count) const;
  // Samples at the given indices, as a batch tensor and labels.
  std::pair<Tensor4, std::vector<int>> gather(std::span<const std::size_t> indices) const;
};

// One binary batch file: records of 1 label byte + 3072 channel-planar
// pixel bytes. Pixels are scaled to [0, 1].
Dataset load_cifar10_file(const std::string& path, const std::string& split);

// data_batch_1..5.bin form the train split, test_batch.bin the val split.
std::pair<Dataset, Dataset> load_cifar10(const std::string& dir);

// Inverse of the loader for one image (1, 3, 32, 32) with values in [0, 1].
std::vector<std::uint8_t> encode_cifar10_record(const Tensor4& image, int label);

struct ChannelNorm {
  std::array<float, 3> mean{0.0f, 0.0f, 0.0f};
  std::array<float, 3> std{1.0f, 1.0f, 1.0f};
  friend bool operator==(const ChannelNorm&, const ChannelNorm&) = default;
};

ChannelNorm compute_channel_norm(const Dataset& ds);
Dataset normalize(const Dataset& ds, const ChannelNorm& norm);
Dataset denormalize(const Dataset& ds, const ChannelNorm& norm);

struct AugmentPolicy {
  std::size_t pad = 4;
  std::size_t crop = 32;
  double hflip_prob = 0.5;
  bool enabled = true;
};

// Zero-pad, random crop, random horizontal flip of one image (1, c, h, w).
// Disabled policies return the input without consuming random draws.
Tensor4 augment(const Tensor4& image, const AugmentPolicy& policy, Rng& rng);

Tensor4 hflip(const Tensor4& images);

// Bilinear resampling of every plane; half-pixel centers (align_corners=false).
Tensor4 bilinear_resize(const Tensor4& images, std::size_t out_h, std::size_t out_w);

Tensor4 center_crop(const Tensor4& images, std::size_t size);

struct Batch {
  Tensor4 images;
  std::vector<int> labels;
  std::vector<std::size_t> indices;
};

// Deterministic epoch iteration. Each epoch is a fresh permutation derived
// from (shuffle_seed, epoch); the last partial batch is kept.
class BatchIterator {
 public:
  BatchIterator(const Dataset& ds, std::size_t batch_size, std::uint64_t shuffle_seed, bool shuffle = true);

  void start_epoch(std::size_t epoch);
  bool next(Batch& batch);
  // Like next() but applies the augmentation policy per image.
  bool next(Batch& batch, const AugmentPolicy& policy, Rng& rng);
  std::size_t batches_per_epoch() const;

 private:
  const Dataset* ds_;
  std::size_t batch_size_;
  std::uint64_t seed_;
  bool shuffle_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

// Writes a deterministic synthetic dataset in the binary batch layout:
// class-dependent oriented gratings with random phase, tint and noise. Used
// by tests and demos when real data is not available.
void write_synthetic_cifar10(const std::string& dir, std::size_t train_per_file, std::size_t val_count,
                             std::uint64_t seed);

}  // namespace sdpoint
