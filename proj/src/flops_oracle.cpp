// Naive forward pass over an operation-counting scalar. Deliberately shares
// no shape or window arithmetic with the analytic cost model.
#include <algorithm>
#include <cmath>
#include <vector>

#include "sdpoint/cost_model.hpp"
#include "sdpoint/rng.hpp"

namespace sdpoint {

namespace {

class Counted {
 public:
  Counted() = default;
  explicit Counted(double v, std::uint64_t* ops) : v_(v), ops_(ops) {}

  double value() const { return v_; }

  friend Counted operator+(const Counted& a, const Counted& b) { return a.bump(a.v_ + b.v_, b); }
  friend Counted operator*(const Counted& a, const Counted& b) { return a.bump(a.v_ * b.v_, b); }
  friend Counted operator/(const Counted& a, const Counted& b) { return a.bump(a.v_ / b.v_, b); }
  friend Counted max0(const Counted& a) { return a.bump(a.v_ > 0 ? a.v_ : 0.0, a); }

 private:
  Counted bump(double v, const Counted& other) const {
    std::uint64_t* ops = ops_ ? ops_ : other.ops_;
    ++*ops;
    return Counted(v, ops);
  }

  double v_ = 0.0;
  std::uint64_t* ops_ = nullptr;
};

struct Map {
  std::size_t c = 0, h = 0, w = 0;
  std::vector<Counted> v;
  Counted& at(std::size_t ch, std::size_t y, std::size_t x) { return v[(ch * h + y) * w + x]; }
};

class OracleRunner {
 public:
  OracleRunner(std::uint64_t* ops, Rng rng) : ops_(ops), rng_(rng) {}

  Counted fresh() { return Counted(rng_.uniform01() - 0.5, ops_); }
  Counted zero() { return Counted(0.0, ops_); }

  Map input(std::size_t c, std::size_t size) {
    Map m{c, size, size, {}};
    for (std::size_t i = 0; i < c * size * size; ++i) m.v.push_back(fresh());
    return m;
  }

  Map conv(Map& in, std::size_t c_out, std::size_t k, std::size_t stride, std::size_t pad) {
    const long h_out = (static_cast<long>(in.h) + 2 * static_cast<long>(pad) - static_cast<long>(k)) /
                           static_cast<long>(stride) + 1;
    const long w_out = (static_cast<long>(in.w) + 2 * static_cast<long>(pad) - static_cast<long>(k)) /
                           static_cast<long>(stride) + 1;
    Map out{c_out, static_cast<std::size_t>(h_out), static_cast<std::size_t>(w_out), {}};
    out.v.resize(out.c * out.h * out.w);
    std::vector<Counted> weights;
    for (std::size_t i = 0; i < c_out * in.c * k * k; ++i) weights.push_back(fresh());
    for (std::size_t o = 0; o < c_out; ++o) {
      for (long y = 0; y < h_out; ++y) {
        for (long x = 0; x < w_out; ++x) {
          Counted acc = zero();
          for (std::size_t ci = 0; ci < in.c; ++ci) {
            for (std::size_t ky = 0; ky < k; ++ky) {
              for (std::size_t kx = 0; kx < k; ++kx) {
                const long iy = y * static_cast<long>(stride) + static_cast<long>(ky) - static_cast<long>(pad);
                const long ix = x * static_cast<long>(stride) + static_cast<long>(kx) - static_cast<long>(pad);
                const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<long>(in.h) && ix < static_cast<long>(in.w);
                // Dense kernels multiply padded taps too.
                Counted px = inside ? in.at(ci, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix)) : zero();
                acc = acc + weights[((o * in.c + ci) * k + ky) * k + kx] * px;
              }
            }
          }
          out.at(o, static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = acc;
        }
      }
    }
    return out;
  }

  Map batchnorm(const Map& in) {
    Map out = in;
    for (std::size_t ch = 0; ch < in.c; ++ch) {
      Counted scale = fresh(), shift = fresh();
      for (std::size_t i = 0; i < in.h * in.w; ++i) {
        Counted& v = out.v[ch * in.h * in.w + i];
        v = v * scale + shift;
      }
    }
    return out;
  }

  Map relu(const Map& in) {
    Map out = in;
    for (Counted& v : out.v) v = max0(v);
    return out;
  }

  Map add(const Map& a, const Map& b) {
    Map out = a;
    for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] = a.v[i] + b.v[i];
    return out;
  }

  Map avg_pool(Map& in, std::size_t out_h, std::size_t out_w) {
    Map out{in.c, out_h, out_w, {}};
    out.v.resize(in.c * out_h * out_w);
    auto bounds = [](std::size_t j, std::size_t len, std::size_t outs) {
      const double lo = std::floor(static_cast<double>(j) * static_cast<double>(len) / static_cast<double>(outs));
      const double hi = std::ceil(static_cast<double>(j + 1) * static_cast<double>(len) / static_cast<double>(outs));
      return std::pair<std::size_t, std::size_t>(static_cast<std::size_t>(lo), static_cast<std::size_t>(hi));
    };
    for (std::size_t ch = 0; ch < in.c; ++ch) {
      for (std::size_t i = 0; i < out_h; ++i) {
        for (std::size_t j = 0; j < out_w; ++j) {
          auto [y0, y1] = bounds(i, in.h, out_h);
          auto [x0, x1] = bounds(j, in.w, out_w);
          Counted sum = zero();
          for (std::size_t y = y0; y < y1; ++y)
            for (std::size_t x = x0; x < x1; ++x) sum = sum + in.at(ch, y, x);
          out.at(ch, i, j) = sum / Counted(static_cast<double>((y1 - y0) * (x1 - x0)), ops_);
        }
      }
    }
    return out;
  }

  Map linear(const Map& in, std::size_t out_features) {
    Map out{out_features, 1, 1, {}};
    for (std::size_t o = 0; o < out_features; ++o) {
      Counted acc = fresh();  // bias initializes the accumulator
      for (const Counted& v : in.v) acc = acc + fresh() * v;
      out.v.push_back(acc);
    }
    return out;
  }

 private:
  std::uint64_t* ops_;
  Rng rng_;
};

}  // namespace

std::uint64_t flops_oracle(const NetworkSpec& spec, const Instance& inst) {
  return flops_oracle(spec, inst, spec.input_size);
}

std::uint64_t flops_oracle(const NetworkSpec& spec, const Instance& inst, std::size_t input_size) {
  spec.validate();
  if (inst.point > spec.num_blocks()) throw UsageError("instance exceeds the network's downsampling points");
  std::uint64_t ops = 0;
  OracleRunner run(&ops, Rng(0xF10F));
  Map x = run.input(spec.input_channels, input_size);
  ops = 0;
  if (spec.stem) x = run.conv(x, spec.stem->c_out, spec.stem->kernel, spec.stem->stride, spec.stem->kernel / 2);
  for (std::size_t i = 1; i <= spec.num_blocks(); ++i) {
    const BlockSpec& b = spec.blocks[i - 1];
    if (b.kind == BlockKind::kPlain) {
      x = run.conv(x, b.c_out, b.kernel, b.stride, b.kernel / 2);
      x = run.relu(run.batchnorm(x));
    } else {
      Map a = run.relu(run.batchnorm(x));
      Map h = run.conv(a, b.c_out, b.kernel, b.stride, b.kernel / 2);
      h = run.relu(run.batchnorm(h));
      h = run.conv(h, b.c_out, b.kernel, 1, b.kernel / 2);
      const bool identity = b.c_in == b.c_out && b.stride == 1;
      Map shortcut = identity ? x : run.conv(a, b.c_out, 1, b.stride, 0);
      x = run.add(h, shortcut);
    }
    if (i == inst.point) {
      auto scaled = [&](std::size_t len) {
        const double t = std::floor(static_cast<double>(len) * inst.ratio + 0.5);
        return std::max<std::size_t>(1, static_cast<std::size_t>(t));
      };
      x = run.avg_pool(x, scaled(x.h), scaled(x.w));
    }
  }
  if (spec.head_bn_relu) x = run.relu(run.batchnorm(x));
  x = run.avg_pool(x, 1, 1);
  if (spec.num_classes > 0) x = run.linear(x, spec.num_classes);
  return ops;
}

}  // namespace sdpoint
