#include "sdpoint/checkpoint.hpp"

#include <array>

#include "sdpoint/binary_io.hpp"

namespace sdpoint {

namespace {
constexpr std::array<char, 4> kMagic{'S', 'D', 'P', 'T'};
}

std::string_view train_mode_name(TrainMode mode) {
  switch (mode) {
    case TrainMode::kSdpoint:
      return "sdpoint";
    case TrainMode::kBaseline:
      return "baseline";
    case TrainMode::kMultiscale:
      return "multiscale";
  }
  throw UsageError("unknown training mode");
}

TrainMode parse_train_mode(std::string_view name) {
  if (name == "sdpoint") return TrainMode::kSdpoint;
  if (name == "baseline") return TrainMode::kBaseline;
  if (name == "multiscale") return TrainMode::kMultiscale;
  throw UsageError("unknown training mode '" + std::string(name) + "' (expected sdpoint, baseline or multiscale)");
}

Checkpoint make_checkpoint(const Network<float>& net, std::vector<double> ratios, TrainMode mode,
                           const ChannelNorm& norm, std::uint64_t seed, std::uint32_t epochs) {
  Checkpoint ckpt;
  ckpt.spec = net.spec();
  ckpt.ratios = std::move(ratios);
  ckpt.mode = mode;
  ckpt.norm = norm;
  ckpt.seed = seed;
  ckpt.epochs = epochs;
  ckpt.tensors = net.state();
  ckpt.bn_batches_tracked = net.bn_batches_tracked();
  return ckpt;
}

Network<float> network_from_checkpoint(const Checkpoint& ckpt) {
  Network<float> net(ckpt.spec, 0);
  net.load_state(ckpt.tensors);
  net.set_bn_batches_tracked(ckpt.bn_batches_tracked);
  if (ckpt.store && ckpt.store->baseline.size() != net.num_bn_layers())
    throw DataError("checkpoint statistics store does not match the network's batchnorm layers");
  return net;
}

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt) {
  ByteWriter w;
  for (char c : kMagic) w.u8(static_cast<std::uint8_t>(c));
  w.u32(Checkpoint::kVersion);

  const NetworkSpec& spec = ckpt.spec;
  w.u32(static_cast<std::uint32_t>(spec.input_channels));
  w.u32(static_cast<std::uint32_t>(spec.input_size));
  w.u8(spec.stem ? 1 : 0);
  if (spec.stem) {
    w.u32(static_cast<std::uint32_t>(spec.stem->c_out));
    w.u32(static_cast<std::uint32_t>(spec.stem->kernel));
    w.u32(static_cast<std::uint32_t>(spec.stem->stride));
  }
  w.u32(static_cast<std::uint32_t>(spec.blocks.size()));
  for (const BlockSpec& b : spec.blocks) {
    w.u8(static_cast<std::uint8_t>(b.kind));
    w.u32(static_cast<std::uint32_t>(b.c_in));
    w.u32(static_cast<std::uint32_t>(b.c_out));
    w.u32(static_cast<std::uint32_t>(b.stride));
    w.u32(static_cast<std::uint32_t>(b.kernel));
  }
  w.u8(spec.head_bn_relu ? 1 : 0);
  w.u32(static_cast<std::uint32_t>(spec.num_classes));

  w.u32(static_cast<std::uint32_t>(ckpt.ratios.size()));
  for (double r : ckpt.ratios) w.f64(r);
  w.u8(static_cast<std::uint8_t>(ckpt.mode));
  for (float m : ckpt.norm.mean) w.f32(m);
  for (float s : ckpt.norm.std) w.f32(s);
  w.u64(ckpt.seed);
  w.u32(ckpt.epochs);

  w.u32(static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const NamedTensor& t : ckpt.tensors) {
    w.str(t.name);
    const Shape& s = t.value.shape();
    for (std::size_t d : {s.n, s.c, s.h, s.w}) w.u32(static_cast<std::uint32_t>(d));
    w.f32s(t.value.data());
  }
  w.u32(static_cast<std::uint32_t>(ckpt.bn_batches_tracked.size()));
  for (std::uint64_t v : ckpt.bn_batches_tracked) w.u64(v);

  w.u8(ckpt.store ? 1 : 0);
  if (ckpt.store) {
    const std::vector<std::uint8_t> store = serialize_store(*ckpt.store);
    w.u64(store.size());
    w.bytes(store);
  }
  return w.take();
}

Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, "checkpoint");
  for (char c : kMagic)
    if (r.u8() != static_cast<std::uint8_t>(c)) r.fail("bad magic (not an SDPT checkpoint)");
  const std::uint32_t version = r.u32();
  if (version != Checkpoint::kVersion)
    r.fail("unsupported checkpoint version " + std::to_string(version) + " (expected " +
           std::to_string(Checkpoint::kVersion) + ")");

  Checkpoint ckpt;
  NetworkSpec& spec = ckpt.spec;
  spec.input_channels = r.u32();
  spec.input_size = r.u32();
  if (r.u8()) {
    StemSpec stem;
    stem.c_out = r.u32();
    stem.kernel = r.u32();
    stem.stride = r.u32();
    spec.stem = stem;
  }
  const std::uint32_t blocks = r.u32();
  for (std::uint32_t i = 0; i < blocks; ++i) {
    BlockSpec b;
    const std::uint8_t kind = r.u8();
    if (kind > 1) r.fail("unknown block kind " + std::to_string(kind));
    b.kind = static_cast<BlockKind>(kind);
    b.c_in = r.u32();
    b.c_out = r.u32();
    b.stride = r.u32();
    b.kernel = r.u32();
    spec.blocks.push_back(b);
  }
  spec.head_bn_relu = r.u8() != 0;
  spec.num_classes = r.u32();
  try {
    spec.validate();
  } catch (const UsageError& e) {
    r.fail(std::string("invalid architecture: ") + e.what());
  }

  const std::uint32_t ratios = r.u32();
  for (std::uint32_t i = 0; i < ratios; ++i) ckpt.ratios.push_back(r.f64());
  const std::uint8_t mode = r.u8();
  if (mode > 2) r.fail("unknown training mode " + std::to_string(mode));
  ckpt.mode = static_cast<TrainMode>(mode);
  for (float& m : ckpt.norm.mean) m = r.f32();
  for (float& s : ckpt.norm.std) s = r.f32();
  ckpt.seed = r.u64();
  ckpt.epochs = r.u32();

  const std::uint32_t tensors = r.u32();
  for (std::uint32_t i = 0; i < tensors; ++i) {
    NamedTensor t;
    t.name = r.str();
    Shape s;
    s.n = r.u32();
    s.c = r.u32();
    s.h = r.u32();
    s.w = r.u32();
    std::size_t volume = 0;
    try {
      volume = checked_volume(s);
    } catch (const UsageError&) {
      r.fail("tensor '" + t.name + "' has invalid shape " + to_string(s));
    }
    t.value = Tensor4(s, r.f32s(volume));
    ckpt.tensors.push_back(std::move(t));
  }
  const std::uint32_t tracked = r.u32();
  for (std::uint32_t i = 0; i < tracked; ++i) ckpt.bn_batches_tracked.push_back(r.u64());

  if (r.u8()) {
    const std::uint64_t length = r.u64();
    ckpt.store = deserialize_store(r.bytes(static_cast<std::size_t>(length)));
  }
  if (!r.done()) r.fail("trailing bytes after checkpoint");
  return ckpt;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  write_file_bytes(path, serialize_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::string& path) { return deserialize_checkpoint(read_file_bytes(path)); }

}  // namespace sdpoint
