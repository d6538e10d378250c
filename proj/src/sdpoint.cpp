#include "sdpoint/sdpoint.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace sdpoint {

std::string Instance::id() const {
  if (point == 0) return "p0";
  return "p" + std::to_string(point) + "_r" + std::to_string(static_cast<long>(std::lround(ratio * 100.0)));
}

const Instance& InstanceCatalog::find(std::string_view id) const {
  for (const Instance& inst : instances)
    if (inst.id() == id) return inst;
  std::ostringstream os;
  os << "unknown instance id '" << id << "'; valid ids:";
  for (const Instance& inst : instances) os << " " << inst.id();
  throw UsageError(os.str());
}

std::vector<std::string> InstanceCatalog::ids() const {
  std::vector<std::string> out;
  out.reserve(instances.size());
  for (const Instance& inst : instances) out.push_back(inst.id());
  return out;
}

InstanceCatalog enumerate_instances(std::size_t num_points, std::vector<double> ratios) {
  if (ratios.empty()) throw UsageError("ratio set must not be empty");
  for (double r : ratios)
    if (!(r > 0.0 && r <= 1.0)) throw UsageError("downsampling ratios must lie in (0, 1]");
  std::sort(ratios.begin(), ratios.end());
  if (std::adjacent_find(ratios.begin(), ratios.end()) != ratios.end())
    throw UsageError("ratio set contains duplicates");
  InstanceCatalog catalog;
  catalog.num_points = num_points;
  catalog.ratios = ratios;
  catalog.instances.push_back(Instance{0, 1.0});
  for (std::size_t p = 1; p <= num_points; ++p)
    for (double r : ratios) catalog.instances.push_back(Instance{p, r});
  return catalog;
}

Instance sample_instance(const InstanceCatalog& catalog, Rng& rng) {
  const std::size_t point = rng.uniform_choice(catalog.num_points + 1);
  const double ratio = catalog.ratios[rng.uniform_choice(catalog.ratios.size())];
  if (point == 0) return Instance{0, 1.0};
  return Instance{point, ratio};
}

std::size_t target_size(std::size_t in_size, double ratio) {
  const double scaled = std::floor(static_cast<double>(in_size) * ratio + 0.5);
  return std::max<std::size_t>(1, static_cast<std::size_t>(scaled));
}

std::vector<PoolWindow> pool_windows(std::size_t in_size, std::size_t out_size) {
  if (out_size == 0 || out_size > in_size)
    throw UsageError("adaptive pooling output " + std::to_string(out_size) + " must be in [1, " +
                     std::to_string(in_size) + "]");
  std::vector<PoolWindow> windows(out_size);
  for (std::size_t j = 0; j < out_size; ++j) {
    windows[j].start = (j * in_size) / out_size;
    windows[j].end = ((j + 1) * in_size + out_size - 1) / out_size;
  }
  return windows;
}

template <typename T>
BasicTensor4<T> adaptive_avg_pool_forward(const BasicTensor4<T>& x, std::size_t out_h, std::size_t out_w,
                                          AdaptivePoolCache* cache) {
  const Shape& s = x.shape();
  const auto rows = pool_windows(s.h, out_h);
  const auto cols = pool_windows(s.w, out_w);
  BasicTensor4<T> out(Shape{s.n, s.c, out_h, out_w});
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      const T* in = x.plane(n, c);
      T* o = out.plane(n, c);
      for (std::size_t i = 0; i < out_h; ++i) {
        for (std::size_t j = 0; j < out_w; ++j) {
          T sum = 0;
          for (std::size_t y = rows[i].start; y < rows[i].end; ++y)
            for (std::size_t xw = cols[j].start; xw < cols[j].end; ++xw) sum += in[y * s.w + xw];
          o[i * out_w + j] = sum / static_cast<T>(rows[i].length() * cols[j].length());
        }
      }
    }
  }
  if (cache) *cache = AdaptivePoolCache{s, out_h, out_w};
  return out;
}

template <typename T>
BasicTensor4<T> adaptive_avg_pool_backward(const BasicTensor4<T>& grad_out, const AdaptivePoolCache& cache) {
  const Shape& s = cache.input_shape;
  if (grad_out.shape() != Shape{s.n, s.c, cache.out_h, cache.out_w})
    throw UsageError("adaptive_avg_pool_backward gradient shape mismatch");
  const auto rows = pool_windows(s.h, cache.out_h);
  const auto cols = pool_windows(s.w, cache.out_w);
  BasicTensor4<T> grad_x(s);
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      const T* g = grad_out.plane(n, c);
      T* gx = grad_x.plane(n, c);
      for (std::size_t i = 0; i < cache.out_h; ++i) {
        for (std::size_t j = 0; j < cache.out_w; ++j) {
          const T share = g[i * cache.out_w + j] / static_cast<T>(rows[i].length() * cols[j].length());
          for (std::size_t y = rows[i].start; y < rows[i].end; ++y)
            for (std::size_t xw = cols[j].start; xw < cols[j].end; ++xw) gx[y * s.w + xw] += share;
        }
      }
    }
  }
  return grad_x;
}

double padded_pixel_ratio(std::size_t h, std::size_t w, std::size_t kernel, std::size_t pad) {
  const std::size_t out_h = conv_output_size(h, kernel, 1, pad);
  const std::size_t out_w = conv_output_size(w, kernel, 1, pad);
  auto touches_padding = [&](std::size_t o, std::size_t len) {
    // Window covers padded coordinates [o, o + kernel) against real cells [pad, pad + len).
    return o < pad || o + kernel > pad + len;
  };
  std::size_t touching = 0;
  for (std::size_t y = 0; y < out_h; ++y)
    for (std::size_t x = 0; x < out_w; ++x)
      if (touches_padding(y, h) || touches_padding(x, w)) ++touching;
  return static_cast<double>(touching) / static_cast<double>(out_h * out_w);
}

namespace {

void check_instance(std::size_t num_blocks, const Instance& inst) {
  if (inst.point > num_blocks)
    throw UsageError("instance " + inst.id() + " exceeds the " + std::to_string(num_blocks) +
                     " downsampling points of this network");
  if (inst.point > 0 && !(inst.ratio > 0.0 && inst.ratio <= 1.0))
    throw UsageError("instance ratio must lie in (0, 1]");
}

}  // namespace

template <typename T>
BasicTensor4<T> sdpoint_forward(Network<T>& net, const BasicTensor4<T>& x, const Instance& inst,
                                ForwardContext& ctx, SDPointTrace* trace) {
  check_instance(net.num_blocks(), inst);
  if (trace) *trace = SDPointTrace{inst, std::nullopt};
  BasicTensor4<T> h = net.forward_stem(x, ctx);
  for (std::size_t i = 1; i <= net.num_blocks(); ++i) {
    h = net.forward_block(i, h, ctx);
    if (i == inst.point) {
      const std::size_t out_h = target_size(h.shape().h, inst.ratio);
      const std::size_t out_w = target_size(h.shape().w, inst.ratio);
      AdaptivePoolCache cache;
      h = adaptive_avg_pool_forward(h, out_h, out_w, &cache);
      if (trace) trace->pool = cache;
    }
  }
  return net.forward_head(h, ctx);
}

template <typename T>
BasicTensor4<T> sdpoint_backward(Network<T>& net, const BasicTensor4<T>& grad_logits, const SDPointTrace& trace) {
  const Instance& inst = trace.instance;
  if (!inst.is_identity() && !trace.pool) throw UsageError("sdpoint_backward: trace lacks the pooling cache");
  BasicTensor4<T> g = net.backward_head(grad_logits);
  for (std::size_t i = net.num_blocks(); i >= 1; --i) {
    if (i == inst.point) g = adaptive_avg_pool_backward(g, *trace.pool);
    g = net.backward_block(i, g);
  }
  return net.backward_stem(g);
}

std::vector<std::size_t> spatial_trace(const NetworkSpec& spec, const Instance& inst, std::size_t input_size) {
  check_instance(spec.num_blocks(), inst);
  std::size_t size = input_size;
  if (spec.stem) size = conv_output_size(size, spec.stem->kernel, spec.stem->stride, spec.stem->kernel / 2);
  std::vector<std::size_t> sizes(spec.num_blocks() + 2, 0);
  for (std::size_t i = 1; i <= spec.num_blocks(); ++i) {
    sizes[i] = size;
    const BlockSpec& b = spec.blocks[i - 1];
    size = conv_output_size(size, b.kernel, b.stride, b.kernel / 2);
    if (i == inst.point) size = target_size(size, inst.ratio);
  }
  sizes[spec.num_blocks() + 1] = size;
  return sizes;
}

#define SDPOINT_INSTANTIATE_CORE(T)                                                                               \
  template BasicTensor4<T> adaptive_avg_pool_forward(const BasicTensor4<T>&, std::size_t, std::size_t,          \
                                                     AdaptivePoolCache*);                                       \
  template BasicTensor4<T> adaptive_avg_pool_backward(const BasicTensor4<T>&, const AdaptivePoolCache&);         \
  template BasicTensor4<T> sdpoint_forward(Network<T>&, const BasicTensor4<T>&, const Instance&, ForwardContext&, \
                                           SDPointTrace*);                                                      \
  template BasicTensor4<T> sdpoint_backward(Network<T>&, const BasicTensor4<T>&, const SDPointTrace&);

SDPOINT_INSTANTIATE_CORE(float)
SDPOINT_INSTANTIATE_CORE(double)

}  // namespace sdpoint
