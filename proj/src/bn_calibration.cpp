#include "sdpoint/bn_calibration.hpp"

#include <algorithm>

#include "sdpoint/binary_io.hpp"

namespace sdpoint {

const InstanceOverride* InstanceBNStore::find(std::string_view id) const {
  for (const auto& [name, ov] : overrides)
    if (name == id) return &ov;
  return nullptr;
}

std::size_t InstanceBNStore::scalar_count() const {
  std::size_t total = 0;
  for (const ChannelStats& s : baseline) total += 2 * s.channels();
  for (const auto& [name, ov] : overrides)
    for (const ChannelStats& s : ov.layers) total += 2 * s.channels();
  return total;
}

std::vector<ChannelStats> calibrate(Network<float>& net, std::span<const Tensor4> batches,
                                    const CalibrationForward& forward) {
  if (batches.empty()) throw DataError("calibration needs at least one batch");
  const std::size_t layers = net.num_bn_layers();
  std::vector<std::vector<double>> mean_sum(layers), mean_sq_sum(layers), var_sum(layers);
  for (std::size_t l = 0; l < layers; ++l) {
    const std::size_t c = net.bn_layers()[l].channels;
    mean_sum[l].assign(c, 0.0);
    mean_sq_sum[l].assign(c, 0.0);
    var_sum[l].assign(c, 0.0);
  }
  for (const Tensor4& batch : batches) {
    std::vector<BatchStats> observed(layers);
    ForwardContext ctx;
    ctx.bn_mode = BnMode::kBatchStats;
    ctx.observed = &observed;
    forward(net, batch, ctx);
    for (std::size_t l = 0; l < layers; ++l) {
      if (observed[l].mean.size() != mean_sum[l].size())
        throw UsageError("calibration forward skipped batchnorm layer " + net.bn_layers()[l].name);
      for (std::size_t c = 0; c < mean_sum[l].size(); ++c) {
        mean_sum[l][c] += observed[l].mean[c];
        mean_sq_sum[l][c] += observed[l].mean[c] * observed[l].mean[c];
        var_sum[l][c] += observed[l].var[c];
      }
    }
  }
  const double k = static_cast<double>(batches.size());
  std::vector<ChannelStats> out(layers);
  for (std::size_t l = 0; l < layers; ++l) {
    const std::size_t channels = mean_sum[l].size();
    out[l].mean.resize(channels);
    out[l].var.resize(channels);
    for (std::size_t c = 0; c < channels; ++c) {
      const double mu = mean_sum[l][c] / k;
      double var = var_sum[l][c] / k;
      // Law of total variance: spread of the batch means adds to the pooled variance.
      if (batches.size() > 1) var += std::max(0.0, mean_sq_sum[l][c] / k - mu * mu);
      out[l].mean[c] = static_cast<float>(mu);
      out[l].var[c] = static_cast<float>(var);
    }
  }
  return out;
}

std::vector<ChannelStats> calibrate_instance(Network<float>& net, const Instance& inst,
                                             std::span<const Tensor4> batches) {
  return calibrate(net, batches, [&inst](Network<float>& n, const Tensor4& x, ForwardContext& ctx) {
    sdpoint_forward(n, x, inst, ctx);
  });
}

std::size_t first_affected_layer(const Network<float>& net, std::size_t point) {
  const auto& info = net.bn_layers();
  for (std::size_t l = 0; l < info.size(); ++l)
    if (info[l].owner_block > point) return l;
  return info.size();
}

InstanceBNStore build_store(Network<float>& net, const InstanceCatalog& catalog, std::span<const Tensor4> batches,
                            bool share_prefix) {
  InstanceBNStore store;
  store.calibration_batches = static_cast<std::uint32_t>(batches.size());
  store.baseline = calibrate_instance(net, Instance{}, batches);
  for (const Instance& inst : catalog.instances) {
    if (inst.is_identity()) continue;
    std::vector<ChannelStats> stats = calibrate_instance(net, inst, batches);
    InstanceOverride ov;
    ov.first_layer = share_prefix ? first_affected_layer(net, inst.point) : 0;
    ov.layers.assign(stats.begin() + static_cast<std::ptrdiff_t>(ov.first_layer), stats.end());
    store.overrides.emplace_back(inst.id(), std::move(ov));
  }
  return store;
}

const ChannelStats& select_stats(const InstanceBNStore& store, std::string_view instance_id, std::size_t layer) {
  if (layer >= store.baseline.size())
    throw UsageError("batchnorm layer " + std::to_string(layer) + " is not covered by the statistics store");
  if (instance_id == "p0") return store.baseline[layer];
  const InstanceOverride* ov = store.find(instance_id);
  if (!ov) throw UsageError("statistics store has no entry for instance '" + std::string(instance_id) + "'");
  if (layer < ov->first_layer) return store.baseline[layer];
  return ov->layers.at(layer - ov->first_layer);
}

StatsSelector make_selector(const InstanceBNStore& store, std::string instance_id) {
  if (instance_id != "p0" && !store.find(instance_id))
    throw UsageError("statistics store has no entry for instance '" + instance_id + "'");
  return [&store, id = std::move(instance_id)](std::size_t layer) -> const ChannelStats* {
    return &select_stats(store, id, layer);
  };
}

std::vector<ChannelStats> running_stats(const Network<float>& net) {
  std::vector<ChannelStats> out;
  for (std::size_t l = 0; l < net.num_bn_layers(); ++l) {
    const BNParams<float>& p = net.bn_params(l);
    auto m = p.running_mean.data();
    auto v = p.running_var.data();
    out.push_back(ChannelStats{{m.begin(), m.end()}, {v.begin(), v.end()}});
  }
  return out;
}

namespace {

void write_stats(ByteWriter& w, const ChannelStats& s) {
  w.u32(static_cast<std::uint32_t>(s.channels()));
  w.f32s(s.mean);
  w.f32s(s.var);
}

ChannelStats read_stats(ByteReader& r) {
  const std::uint32_t c = r.u32();
  ChannelStats s;
  s.mean = r.f32s(c);
  s.var = r.f32s(c);
  for (float v : s.var)
    if (!(v >= 0.0f)) r.fail("negative or NaN variance in statistics store");
  return s;
}

}  // namespace

std::vector<std::uint8_t> serialize_store(const InstanceBNStore& store) {
  ByteWriter w;
  w.u32(store.calibration_batches);
  w.u64(store.seed);
  w.u32(static_cast<std::uint32_t>(store.baseline.size()));
  for (const ChannelStats& s : store.baseline) write_stats(w, s);
  w.u32(static_cast<std::uint32_t>(store.overrides.size()));
  for (const auto& [id, ov] : store.overrides) {
    w.str(id);
    w.u32(static_cast<std::uint32_t>(ov.first_layer));
    w.u32(static_cast<std::uint32_t>(ov.layers.size()));
    for (const ChannelStats& s : ov.layers) write_stats(w, s);
  }
  return w.take();
}

InstanceBNStore deserialize_store(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, "statistics store");
  InstanceBNStore store;
  store.calibration_batches = r.u32();
  store.seed = r.u64();
  const std::uint32_t layers = r.u32();
  for (std::uint32_t i = 0; i < layers; ++i) store.baseline.push_back(read_stats(r));
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string id = r.str();
    InstanceOverride ov;
    ov.first_layer = r.u32();
    const std::uint32_t n = r.u32();
    if (ov.first_layer + n != layers) r.fail("override for '" + id + "' does not end at the last layer");
    for (std::uint32_t j = 0; j < n; ++j) ov.layers.push_back(read_stats(r));
    store.overrides.emplace_back(std::move(id), std::move(ov));
  }
  if (!r.done()) r.fail("trailing bytes after statistics store");
  return store;
}

}  // namespace sdpoint
