#include "sdpoint/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>

#include "sdpoint/binary_io.hpp"

namespace sdpoint {

Dataset Dataset::head(std::size_t count) const {
  count = std::min(count, size());
  std::vector<std::size_t> idx(count);
  for (std::size_t i = 0; i < count; ++i) idx[i] = i;
  auto [images_out, labels_out] = gather(idx);
  return Dataset{std::move(images_out), std::move(labels_out), split};
}

std::pair<Tensor4, std::vector<int>> Dataset::gather(std::span<const std::size_t> indices) const {
  const Shape& s = images.shape();
  const std::size_t stride = s.c * s.h * s.w;
  std::vector<float> data(indices.size() * stride);
  std::vector<int> out_labels(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const std::size_t src = indices[i];
    if (src >= size()) throw UsageError("sample index " + std::to_string(src) + " out of range");
    std::copy_n(images.raw() + src * stride, stride, data.begin() + static_cast<std::ptrdiff_t>(i * stride));
    out_labels[i] = labels[src];
  }
  return {Tensor4(Shape{indices.size(), s.c, s.h, s.w}, std::move(data)), std::move(out_labels)};
}

Dataset load_cifar10_file(const std::string& path, const std::string& split) {
  const std::vector<std::uint8_t> bytes = read_file_bytes(path);
  if (bytes.empty()) throw DataError(path + ": empty file at byte offset 0");
  if (bytes.size() % kCifarRecord != 0) {
    const std::size_t partial = bytes.size() - bytes.size() % kCifarRecord;
    throw DataError(path + ": truncated record at byte offset " + std::to_string(partial) + " (file size " +
                    std::to_string(bytes.size()) + " is not a multiple of " + std::to_string(kCifarRecord) + ")");
  }
  const std::size_t n = bytes.size() / kCifarRecord;
  Dataset ds{Tensor4(Shape{n, kCifarChannels, kCifarSide, kCifarSide}), std::vector<int>(n), split};
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t offset = i * kCifarRecord;
    const std::uint8_t label = bytes[offset];
    if (label >= kCifarClasses)
      throw DataError(path + ": label " + std::to_string(label) + " out of range at byte offset " +
                      std::to_string(offset));
    ds.labels[i] = label;
    float* dst = ds.images.plane(i, 0);
    for (std::size_t p = 0; p < kCifarPixels; ++p) dst[p] = static_cast<float>(bytes[offset + 1 + p]) / 255.0f;
  }
  return ds;
}

std::pair<Dataset, Dataset> load_cifar10(const std::string& dir) {
  std::vector<Dataset> parts;
  for (int b = 1; b <= 5; ++b)
    parts.push_back(load_cifar10_file((std::filesystem::path(dir) / ("data_batch_" + std::to_string(b) + ".bin")).string(),
                                      "train"));
  std::size_t total = 0;
  for (const Dataset& d : parts) total += d.size();
  Dataset train{Tensor4(Shape{total, kCifarChannels, kCifarSide, kCifarSide}), {}, "train"};
  std::size_t at = 0;
  for (const Dataset& d : parts) {
    std::copy(d.images.data().begin(), d.images.data().end(), train.images.raw() + at * kCifarPixels);
    train.labels.insert(train.labels.end(), d.labels.begin(), d.labels.end());
    at += d.size();
  }
  Dataset val = load_cifar10_file((std::filesystem::path(dir) / "test_batch.bin").string(), "val");
  return {std::move(train), std::move(val)};
}

std::vector<std::uint8_t> encode_cifar10_record(const Tensor4& image, int label) {
  if (image.shape() != Shape{1, kCifarChannels, kCifarSide, kCifarSide})
    throw UsageError("record encoding needs a (1, 3, 32, 32) image");
  if (label < 0 || label >= static_cast<int>(kCifarClasses)) throw UsageError("label out of range");
  std::vector<std::uint8_t> out(kCifarRecord);
  out[0] = static_cast<std::uint8_t>(label);
  for (std::size_t p = 0; p < kCifarPixels; ++p) {
    const float v = std::clamp(image[p], 0.0f, 1.0f);
    out[1 + p] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
  }
  return out;
}

ChannelNorm compute_channel_norm(const Dataset& ds) {
  ChannelNorm norm;
  const Shape& s = ds.images.shape();
  for (std::size_t c = 0; c < s.c && c < 3; ++c) {
    double sum = 0.0, sq = 0.0;
    for (std::size_t n = 0; n < s.n; ++n) {
      const float* p = ds.images.plane(n, c);
      for (std::size_t i = 0; i < s.spatial(); ++i) {
        sum += p[i];
        sq += static_cast<double>(p[i]) * p[i];
      }
    }
    const double count = static_cast<double>(s.n * s.spatial());
    const double mean = sum / count;
    norm.mean[c] = static_cast<float>(mean);
    norm.std[c] = static_cast<float>(std::sqrt(std::max(sq / count - mean * mean, 1e-12)));
  }
  return norm;
}

namespace {

Dataset affine_channels(const Dataset& ds, const ChannelNorm& norm, bool forward) {
  const Shape& s = ds.images.shape();
  if (s.c != 3) throw UsageError("channel normalization expects 3 channels");
  for (float sd : norm.std)
    if (!(sd > 0.0f)) throw UsageError("normalization std must be positive");
  Dataset out = ds;
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < 3; ++c) {
      float* p = out.images.plane(n, c);
      for (std::size_t i = 0; i < s.spatial(); ++i)
        p[i] = forward ? (p[i] - norm.mean[c]) / norm.std[c] : p[i] * norm.std[c] + norm.mean[c];
    }
  }
  return out;
}

}  // namespace

Dataset normalize(const Dataset& ds, const ChannelNorm& norm) { return affine_channels(ds, norm, true); }
Dataset denormalize(const Dataset& ds, const ChannelNorm& norm) { return affine_channels(ds, norm, false); }

Tensor4 hflip(const Tensor4& images) {
  const Shape& s = images.shape();
  Tensor4 out(s);
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t y = 0; y < s.h; ++y)
        for (std::size_t x = 0; x < s.w; ++x) out(n, c, y, x) = images(n, c, y, s.w - 1 - x);
  return out;
}

Tensor4 augment(const Tensor4& image, const AugmentPolicy& policy, Rng& rng) {
  if (!policy.enabled) return image;
  const Shape& s = image.shape();
  if (s.n != 1) throw UsageError("augment operates on one image at a time");
  const std::size_t padded_h = s.h + 2 * policy.pad;
  const std::size_t padded_w = s.w + 2 * policy.pad;
  if (policy.crop == 0 || policy.crop > padded_h || policy.crop > padded_w)
    throw UsageError("crop size must be in [1, size + 2 * pad]");
  const std::size_t oy = rng.uniform_choice(padded_h - policy.crop + 1);
  const std::size_t ox = rng.uniform_choice(padded_w - policy.crop + 1);
  const bool flip = rng.uniform01() < policy.hflip_prob;
  Tensor4 out(Shape{1, s.c, policy.crop, policy.crop});
  for (std::size_t c = 0; c < s.c; ++c) {
    for (std::size_t y = 0; y < policy.crop; ++y) {
      const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(oy + y) - static_cast<std::ptrdiff_t>(policy.pad);
      if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(s.h)) continue;
      for (std::size_t x = 0; x < policy.crop; ++x) {
        const std::size_t dx = flip ? policy.crop - 1 - x : x;
        const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(ox + x) - static_cast<std::ptrdiff_t>(policy.pad);
        if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(s.w)) continue;
        out(0, c, y, dx) = image(0, c, static_cast<std::size_t>(sy), static_cast<std::size_t>(sx));
      }
    }
  }
  return out;
}

Tensor4 bilinear_resize(const Tensor4& images, std::size_t out_h, std::size_t out_w) {
  if (out_h == 0 || out_w == 0) throw UsageError("resize target must be >= 1");
  const Shape& s = images.shape();
  Tensor4 out(Shape{s.n, s.c, out_h, out_w});
  struct Tap {
    std::size_t lo, hi;
    float frac;
  };
  auto taps = [](std::size_t in, std::size_t outs) {
    std::vector<Tap> t(outs);
    const double scale = static_cast<double>(in) / static_cast<double>(outs);
    for (std::size_t i = 0; i < outs; ++i) {
      double src = (static_cast<double>(i) + 0.5) * scale - 0.5;
      if (src < 0.0) src = 0.0;
      std::size_t lo = static_cast<std::size_t>(src);
      if (lo > in - 1) lo = in - 1;
      const std::size_t hi = std::min(lo + 1, in - 1);
      t[i] = Tap{lo, hi, static_cast<float>(src - static_cast<double>(lo))};
    }
    return t;
  };
  const auto ty = taps(s.h, out_h);
  const auto tx = taps(s.w, out_w);
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      const float* in = images.plane(n, c);
      float* o = out.plane(n, c);
      for (std::size_t y = 0; y < out_h; ++y) {
        const Tap& a = ty[y];
        for (std::size_t x = 0; x < out_w; ++x) {
          const Tap& b = tx[x];
          const float top = in[a.lo * s.w + b.lo] * (1.0f - b.frac) + in[a.lo * s.w + b.hi] * b.frac;
          const float bottom = in[a.hi * s.w + b.lo] * (1.0f - b.frac) + in[a.hi * s.w + b.hi] * b.frac;
          o[y * out_w + x] = top * (1.0f - a.frac) + bottom * a.frac;
        }
      }
    }
  }
  return out;
}

Tensor4 center_crop(const Tensor4& images, std::size_t size) {
  const Shape& s = images.shape();
  if (size == 0 || size > s.h || size > s.w) throw UsageError("center crop larger than the image");
  const std::size_t oy = (s.h - size) / 2;
  const std::size_t ox = (s.w - size) / 2;
  Tensor4 out(Shape{s.n, s.c, size, size});
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t y = 0; y < size; ++y)
        for (std::size_t x = 0; x < size; ++x) out(n, c, y, x) = images(n, c, oy + y, ox + x);
  return out;
}

// ---------------------------------------------------------------------------

BatchIterator::BatchIterator(const Dataset& ds, std::size_t batch_size, std::uint64_t shuffle_seed, bool shuffle)
    : ds_(&ds), batch_size_(batch_size), seed_(shuffle_seed), shuffle_(shuffle) {
  if (batch_size == 0) throw UsageError("batch size must be >= 1");
  if (ds.size() == 0) throw DataError("cannot iterate an empty dataset");
  start_epoch(0);
}

void BatchIterator::start_epoch(std::size_t epoch) {
  order_.resize(ds_->size());
  for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
  if (shuffle_) {
    Rng rng = Rng(seed_).derive(epoch);
    for (std::size_t i = order_.size(); i > 1; --i) std::swap(order_[i - 1], order_[rng.uniform_choice(i)]);
  }
  cursor_ = 0;
}

bool BatchIterator::next(Batch& batch) {
  if (cursor_ >= order_.size()) return false;
  const std::size_t end = std::min(cursor_ + batch_size_, order_.size());
  batch.indices.assign(order_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                       order_.begin() + static_cast<std::ptrdiff_t>(end));
  cursor_ = end;
  auto [images, labels] = ds_->gather(batch.indices);
  batch.images = std::move(images);
  batch.labels = std::move(labels);
  return true;
}

bool BatchIterator::next(Batch& batch, const AugmentPolicy& policy, Rng& rng) {
  if (!next(batch)) return false;
  if (!policy.enabled) return true;
  const Shape s = batch.images.shape();
  Tensor4 out(Shape{s.n, s.c, policy.crop, policy.crop});
  const std::size_t stride = s.c * policy.crop * policy.crop;
  for (std::size_t n = 0; n < s.n; ++n) {
    Tensor4 img = augment(batch.images.sample(n), policy, rng);
    std::copy(img.data().begin(), img.data().end(), out.raw() + n * stride);
  }
  batch.images = std::move(out);
  return true;
}

std::size_t BatchIterator::batches_per_epoch() const { return (ds_->size() + batch_size_ - 1) / batch_size_; }

// ---------------------------------------------------------------------------

namespace {

// Class k: grating with one of five orientations and one of two spatial
// frequencies, random phase, tint and additive noise.
Tensor4 synthetic_image(int label, Rng& rng) {
  constexpr double kPi = std::numbers::pi;
  const double angle = static_cast<double>(label % 5) * kPi / 5.0;
  const double freq = (label < 5 ? 2.0 : 4.5) * 2.0 * kPi / static_cast<double>(kCifarSide);
  const double phase = rng.uniform01() * 2.0 * kPi;
  const double jitter = (rng.uniform01() - 0.5) * 0.3;
  std::array<double, 3> tint{};
  for (double& t : tint) t = 0.3 + 0.7 * rng.uniform01();
  Tensor4 img(Shape{1, kCifarChannels, kCifarSide, kCifarSide});
  const double ca = std::cos(angle + jitter), sa = std::sin(angle + jitter);
  for (std::size_t y = 0; y < kCifarSide; ++y) {
    for (std::size_t x = 0; x < kCifarSide; ++x) {
      const double u = ca * static_cast<double>(x) + sa * static_cast<double>(y);
      const double wave = 0.5 + 0.35 * std::sin(freq * u + phase);
      for (std::size_t c = 0; c < kCifarChannels; ++c) {
        const double v = wave * tint[c] + 0.12 * rng.normal();
        img(0, c, y, x) = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }
  return img;
}

void write_synthetic_file(const std::string& path, std::size_t count, Rng& rng) {
  ByteWriter w;
  for (std::size_t i = 0; i < count; ++i) {
    const int label = static_cast<int>(i % kCifarClasses);
    w.bytes(encode_cifar10_record(synthetic_image(label, rng), label));
  }
  write_file_bytes(path, w.buffer());
}

}  // namespace

void write_synthetic_cifar10(const std::string& dir, std::size_t train_per_file, std::size_t val_count,
                             std::uint64_t seed) {
  std::filesystem::create_directories(dir);
  Rng rng(seed);
  for (int b = 1; b <= 5; ++b)
    write_synthetic_file((std::filesystem::path(dir) / ("data_batch_" + std::to_string(b) + ".bin")).string(),
                         train_per_file, rng);
  write_synthetic_file((std::filesystem::path(dir) / "test_batch.bin").string(), val_count, rng);
}

}  // namespace sdpoint
