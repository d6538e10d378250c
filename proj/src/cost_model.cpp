#include "sdpoint/cost_model.hpp"

#include <array>
#include <utility>

namespace sdpoint {

namespace {

constexpr std::array<std::pair<LayerKind, std::string_view>, 7> kKindNames{{
    {LayerKind::kConv, "conv"},
    {LayerKind::kLinear, "linear"},
    {LayerKind::kBatchNorm, "batchnorm"},
    {LayerKind::kRelu, "relu"},
    {LayerKind::kAvgPool, "avgpool"},
    {LayerKind::kGlobalAvgPool, "global_avgpool"},
    {LayerKind::kAdd, "add"},
}};

std::uint64_t u64(std::size_t v) { return static_cast<std::uint64_t>(v); }

class CostTracer {
 public:
  explicit CostTracer(CostReport& report) : report_(report) {}

  Shape add(std::string name, LayerKind kind, const Shape& in, const LayerHyper& hyper) {
    const std::uint64_t flops = layer_flops(kind, in, hyper);
    report_.per_layer.push_back(LayerCost{std::move(name), kind, in, flops});
    report_.flops += flops;
    switch (kind) {
      case LayerKind::kConv:
        return Shape{1, hyper.c_out, conv_output_size(in.h, hyper.kernel, hyper.stride, hyper.pad),
                     conv_output_size(in.w, hyper.kernel, hyper.stride, hyper.pad)};
      case LayerKind::kLinear:
        return Shape{1, hyper.out_features, 1, 1};
      case LayerKind::kAvgPool:
        return Shape{1, in.c, hyper.out_h, hyper.out_w};
      case LayerKind::kGlobalAvgPool:
        return Shape{1, in.c, 1, 1};
      default:
        return in;
    }
  }

 private:
  CostReport& report_;
};

LayerHyper conv_hyper(std::size_t c_out, std::size_t k, std::size_t stride, std::size_t pad) {
  LayerHyper h;
  h.c_out = c_out;
  h.kernel = k;
  h.stride = stride;
  h.pad = pad;
  return h;
}

}  // namespace

std::string_view layer_kind_name(LayerKind kind) {
  for (const auto& [k, name] : kKindNames)
    if (k == kind) return name;
  throw UsageError("unknown layer kind");
}

LayerKind parse_layer_kind(std::string_view name) {
  for (const auto& [k, n] : kKindNames)
    if (n == name) return k;
  throw UsageError("unknown layer kind '" + std::string(name) + "'");
}

std::uint64_t layer_flops(LayerKind kind, const Shape& in, const LayerHyper& hyper) {
  const std::uint64_t elems = u64(in.c) * u64(in.h) * u64(in.w);
  switch (kind) {
    case LayerKind::kConv: {
      const std::uint64_t h_out = conv_output_size(in.h, hyper.kernel, hyper.stride, hyper.pad);
      const std::uint64_t w_out = conv_output_size(in.w, hyper.kernel, hyper.stride, hyper.pad);
      return 2 * u64(hyper.c_out) * h_out * w_out * u64(in.c) * u64(hyper.kernel) * u64(hyper.kernel);
    }
    case LayerKind::kLinear:
      return 2 * elems * u64(hyper.out_features);
    case LayerKind::kBatchNorm:
      return 2 * elems;
    case LayerKind::kRelu:
    case LayerKind::kAdd:
      return elems;
    case LayerKind::kAvgPool: {
      const auto rows = pool_windows(in.h, hyper.out_h);
      const auto cols = pool_windows(in.w, hyper.out_w);
      std::uint64_t row_cover = 0, col_cover = 0;
      for (const PoolWindow& r : rows) row_cover += r.length();
      for (const PoolWindow& c : cols) col_cover += c.length();
      return u64(in.c) * (row_cover * col_cover + u64(hyper.out_h) * u64(hyper.out_w));
    }
    case LayerKind::kGlobalAvgPool:
      return elems + u64(in.c);
  }
  throw UsageError("unknown layer kind");
}

CostReport instance_cost(const NetworkSpec& spec, const Instance& inst) {
  return instance_cost(spec, inst, spec.input_size);
}

CostReport instance_cost(const NetworkSpec& spec, const Instance& inst, std::size_t input_size) {
  spec.validate();
  if (inst.point > spec.num_blocks())
    throw UsageError("instance " + inst.id() + " exceeds the network's " + std::to_string(spec.num_blocks()) +
                     " downsampling points");
  CostReport report;
  report.instance = inst;
  report.input_size = input_size;
  report.params = param_count(spec);
  CostTracer tracer(report);
  Shape s{1, spec.input_channels, input_size, input_size};
  if (spec.stem) {
    const auto& st = *spec.stem;
    s = tracer.add("stem.conv", LayerKind::kConv, s, conv_hyper(st.c_out, st.kernel, st.stride, st.kernel / 2));
  }
  for (std::size_t i = 1; i <= spec.num_blocks(); ++i) {
    const BlockSpec& b = spec.blocks[i - 1];
    const std::string prefix = "blocks." + std::to_string(i) + ".";
    if (b.kind == BlockKind::kPlain) {
      s = tracer.add(prefix + "conv", LayerKind::kConv, s, conv_hyper(b.c_out, b.kernel, b.stride, b.kernel / 2));
      s = tracer.add(prefix + "bn", LayerKind::kBatchNorm, s, {});
      s = tracer.add(prefix + "relu", LayerKind::kRelu, s, {});
    } else {
      const Shape in = s;
      Shape a = tracer.add(prefix + "bn1", LayerKind::kBatchNorm, in, {});
      a = tracer.add(prefix + "relu1", LayerKind::kRelu, a, {});
      Shape h = tracer.add(prefix + "conv1", LayerKind::kConv, a, conv_hyper(b.c_out, b.kernel, b.stride, b.kernel / 2));
      h = tracer.add(prefix + "bn2", LayerKind::kBatchNorm, h, {});
      h = tracer.add(prefix + "relu2", LayerKind::kRelu, h, {});
      h = tracer.add(prefix + "conv2", LayerKind::kConv, h, conv_hyper(b.c_out, b.kernel, 1, b.kernel / 2));
      if (b.needs_projection()) tracer.add(prefix + "shortcut", LayerKind::kConv, a, conv_hyper(b.c_out, 1, b.stride, 0));
      s = tracer.add(prefix + "add", LayerKind::kAdd, h, {});
    }
    if (i == inst.point) {
      LayerHyper pool;
      pool.out_h = target_size(s.h, inst.ratio);
      pool.out_w = target_size(s.w, inst.ratio);
      s = tracer.add("sdpoint.pool", LayerKind::kAvgPool, s, pool);
    }
  }
  if (spec.head_bn_relu) {
    s = tracer.add("head.bn", LayerKind::kBatchNorm, s, {});
    s = tracer.add("head.relu", LayerKind::kRelu, s, {});
  }
  s = tracer.add("head.pool", LayerKind::kGlobalAvgPool, s, {});
  if (spec.num_classes > 0) {
    LayerHyper fc;
    fc.out_features = spec.num_classes;
    tracer.add("head.fc", LayerKind::kLinear, s, fc);
  }
  return report;
}

std::uint64_t param_count(const NetworkSpec& spec) {
  std::uint64_t total = 0;
  std::size_t channels = spec.input_channels;
  if (spec.stem) {
    total += u64(spec.stem->c_out) * u64(channels) * u64(spec.stem->kernel) * u64(spec.stem->kernel);
    channels = spec.stem->c_out;
  }
  for (const BlockSpec& b : spec.blocks) {
    const std::uint64_t k2 = u64(b.kernel) * u64(b.kernel);
    if (b.kind == BlockKind::kPlain) {
      total += u64(b.c_out) * u64(b.c_in) * k2 + 2 * u64(b.c_out);
    } else {
      total += 2 * u64(b.c_in) + u64(b.c_out) * u64(b.c_in) * k2;
      total += 2 * u64(b.c_out) + u64(b.c_out) * u64(b.c_out) * k2;
      if (b.needs_projection()) total += u64(b.c_out) * u64(b.c_in);
    }
    channels = b.c_out;
  }
  if (spec.head_bn_relu) total += 2 * u64(channels);
  if (spec.num_classes > 0) total += u64(spec.num_classes) * u64(channels) + u64(spec.num_classes);
  return total;
}

}  // namespace sdpoint
