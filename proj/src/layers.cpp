#include "sdpoint/layers.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

namespace sdpoint {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

// Gathers k*k patches of one sample into a (c*k*k, h_out*w_out) matrix.
template <typename T>
void im2col(const T* src, std::size_t c, std::size_t h, std::size_t w, std::size_t k, std::size_t stride,
            std::size_t pad, std::size_t h_out, std::size_t w_out, T* cols) {
  const std::size_t hw_out = h_out * w_out;
  for (std::size_t ch = 0; ch < c; ++ch) {
    const T* plane = src + ch * h * w;
    for (std::size_t ki = 0; ki < k; ++ki) {
      for (std::size_t kj = 0; kj < k; ++kj) {
        T* row = cols + ((ch * k + ki) * k + kj) * hw_out;
        for (std::size_t oy = 0; oy < h_out; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ki) - static_cast<std::ptrdiff_t>(pad);
          T* dst = row + oy * w_out;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) {
            std::fill(dst, dst + w_out, T(0));
            continue;
          }
          const T* line = plane + static_cast<std::size_t>(iy) * w;
          for (std::size_t ox = 0; ox < w_out; ++ox) {
            const std::ptrdiff_t ix =
                static_cast<std::ptrdiff_t>(ox * stride + kj) - static_cast<std::ptrdiff_t>(pad);
            dst[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) ? T(0) : line[ix];
          }
        }
      }
    }
  }
}

// Scatter-add inverse of im2col.
template <typename T>
void col2im(const T* cols, std::size_t c, std::size_t h, std::size_t w, std::size_t k, std::size_t stride,
            std::size_t pad, std::size_t h_out, std::size_t w_out, T* dst) {
  const std::size_t hw_out = h_out * w_out;
  for (std::size_t ch = 0; ch < c; ++ch) {
    T* plane = dst + ch * h * w;
    for (std::size_t ki = 0; ki < k; ++ki) {
      for (std::size_t kj = 0; kj < k; ++kj) {
        const T* row = cols + ((ch * k + ki) * k + kj) * hw_out;
        for (std::size_t oy = 0; oy < h_out; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ki) - static_cast<std::ptrdiff_t>(pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
          T* line = plane + static_cast<std::size_t>(iy) * w;
          const T* src = row + oy * w_out;
          for (std::size_t ox = 0; ox < w_out; ++ox) {
            const std::ptrdiff_t ix =
                static_cast<std::ptrdiff_t>(ox * stride + kj) - static_cast<std::ptrdiff_t>(pad);
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(w)) line[ix] += src[ox];
          }
        }
      }
    }
  }
}

Shape conv_output_shape(const Shape& in, std::size_t c_out, std::size_t k, std::size_t stride, std::size_t pad) {
  return Shape{in.n, c_out, conv_output_size(in.h, k, stride, pad), conv_output_size(in.w, k, stride, pad)};
}

}  // namespace

std::size_t conv_output_size(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t pad) {
  if (kernel == 0) throw UsageError("convolution kernel must be >= 1");
  if (stride != 1 && stride != 2) throw UsageError("convolution stride must be 1 or 2");
  if (in + 2 * pad < kernel)
    throw UsageError("convolution kernel " + std::to_string(kernel) + " does not fit input " + std::to_string(in) +
                     " with padding " + std::to_string(pad));
  return (in + 2 * pad - kernel) / stride + 1;
}

template <typename T>
BasicTensor4<T> conv2d_forward(const BasicTensor4<T>& x, const ConvParams<T>& params, ConvCache<T>* cache) {
  const Shape& in = x.shape();
  if (in.c != params.c_in())
    throw UsageError("conv2d channel mismatch: input has " + std::to_string(in.c) + ", weights expect " +
                     std::to_string(params.c_in()));
  const std::size_t k = params.kernel();
  const Shape out_shape = conv_output_shape(in, params.c_out(), k, params.stride, params.pad);
  BasicTensor4<T> out(out_shape);
  const std::size_t rows = in.c * k * k;
  const std::size_t hw_out = out_shape.spatial();
  std::vector<T> cols(rows * hw_out);
  ConstMatMap<T> weight(params.weight.raw(), static_cast<Eigen::Index>(params.c_out()),
                        static_cast<Eigen::Index>(rows));
  for (std::size_t n = 0; n < in.n; ++n) {
    im2col(x.plane(n, 0), in.c, in.h, in.w, k, params.stride, params.pad, out_shape.h, out_shape.w, cols.data());
    ConstMatMap<T> col_mat(cols.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(hw_out));
    MatMap<T> out_mat(out.plane(n, 0), static_cast<Eigen::Index>(params.c_out()), static_cast<Eigen::Index>(hw_out));
    out_mat.noalias() = weight * col_mat;
  }
  if (cache) cache->input = x;
  return out;
}

template <typename T>
ConvGrads<T> conv2d_backward(const BasicTensor4<T>& grad_out, const ConvCache<T>& cache,
                             const ConvParams<T>& params) {
  const BasicTensor4<T>& x = cache.input;
  const Shape& in = x.shape();
  const std::size_t k = params.kernel();
  const Shape out_shape = conv_output_shape(in, params.c_out(), k, params.stride, params.pad);
  if (grad_out.shape() != out_shape)
    throw UsageError("conv2d_backward gradient shape " + to_string(grad_out.shape()) + " expected " +
                     to_string(out_shape));
  ConvGrads<T> grads{BasicTensor4<T>(in), BasicTensor4<T>(params.weight.shape())};
  const std::size_t rows = in.c * k * k;
  const std::size_t hw_out = out_shape.spatial();
  const auto c_out = static_cast<Eigen::Index>(params.c_out());
  std::vector<T> cols(rows * hw_out);
  std::vector<T> grad_cols(rows * hw_out);
  ConstMatMap<T> weight(params.weight.raw(), c_out, static_cast<Eigen::Index>(rows));
  MatMap<T> grad_w(grads.grad_w.raw(), c_out, static_cast<Eigen::Index>(rows));
  for (std::size_t n = 0; n < in.n; ++n) {
    im2col(x.plane(n, 0), in.c, in.h, in.w, k, params.stride, params.pad, out_shape.h, out_shape.w, cols.data());
    ConstMatMap<T> col_mat(cols.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(hw_out));
    ConstMatMap<T> g(grad_out.plane(n, 0), c_out, static_cast<Eigen::Index>(hw_out));
    grad_w.noalias() += g * col_mat.transpose();
    MatMap<T> gc(grad_cols.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(hw_out));
    gc.noalias() = weight.transpose() * g;
    col2im(grad_cols.data(), in.c, in.h, in.w, k, params.stride, params.pad, out_shape.h, out_shape.w,
           grads.grad_x.plane(n, 0));
  }
  return grads;
}

// ---------------------------------------------------------------------------

template <typename T>
BNParams<T>::BNParams(std::size_t channels)
    : gamma(Shape{1, channels, 1, 1}, T(1)),
      beta(Shape{1, channels, 1, 1}, T(0)),
      running_mean(Shape{1, channels, 1, 1}, T(0)),
      running_var(Shape{1, channels, 1, 1}, T(1)) {}

template <typename T>
BasicTensor4<T> batchnorm_forward(const BasicTensor4<T>& x, BNParams<T>& params, BnMode mode,
                                  const ChannelStats* stats_override, BNCache<T>* cache, BatchStats* observed) {
  const Shape& s = x.shape();
  const std::size_t channels = params.channels();
  if (s.c != channels)
    throw UsageError("batchnorm channel mismatch: input has " + std::to_string(s.c) + ", layer has " +
                     std::to_string(channels));
  const bool use_batch = mode != BnMode::kEval;
  std::vector<T> mean(channels), var(channels);
  if (use_batch) {
    const std::size_t count = s.n * s.spatial();
    for (std::size_t c = 0; c < channels; ++c) {
      double sum = 0.0;
      for (std::size_t n = 0; n < s.n; ++n) {
        const T* p = x.plane(n, c);
        for (std::size_t i = 0; i < s.spatial(); ++i) sum += static_cast<double>(p[i]);
      }
      const double mu = sum / static_cast<double>(count);
      double sq = 0.0;
      for (std::size_t n = 0; n < s.n; ++n) {
        const T* p = x.plane(n, c);
        for (std::size_t i = 0; i < s.spatial(); ++i) {
          const double d = static_cast<double>(p[i]) - mu;
          sq += d * d;
        }
      }
      const double v = sq / static_cast<double>(count);
      mean[c] = static_cast<T>(mu);
      var[c] = static_cast<T>(v);
      if (mode == BnMode::kTrain) {
        const double unbiased = count > 1 ? v * static_cast<double>(count) / static_cast<double>(count - 1) : v;
        params.running_mean[c] = (T(1) - params.momentum) * params.running_mean[c] + params.momentum * mean[c];
        params.running_var[c] =
            (T(1) - params.momentum) * params.running_var[c] + params.momentum * static_cast<T>(unbiased);
      }
    }
    if (mode == BnMode::kTrain) ++params.batches_tracked;
    if (observed) {
      observed->mean.assign(channels, 0.0);
      observed->var.assign(channels, 0.0);
      for (std::size_t c = 0; c < channels; ++c) {
        observed->mean[c] = static_cast<double>(mean[c]);
        observed->var[c] = static_cast<double>(var[c]);
      }
    }
  } else if (stats_override) {
    if (stats_override->mean.size() != channels || stats_override->var.size() != channels)
      throw UsageError("batchnorm statistics override has wrong channel count");
    for (std::size_t c = 0; c < channels; ++c) {
      mean[c] = static_cast<T>(stats_override->mean[c]);
      var[c] = static_cast<T>(stats_override->var[c]);
    }
  } else {
    if (params.batches_tracked == 0)
      throw UsageError("batchnorm evaluation requested but running statistics were never initialized");
    for (std::size_t c = 0; c < channels; ++c) {
      mean[c] = params.running_mean[c];
      var[c] = params.running_var[c];
    }
  }

  BasicTensor4<T> out(s);
  std::vector<T> inv_std(channels);
  for (std::size_t c = 0; c < channels; ++c) inv_std[c] = T(1) / std::sqrt(var[c] + params.epsilon);
  if (cache) {
    cache->x_hat = BasicTensor4<T>(s);
    cache->batch_stats = use_batch;
  }
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < channels; ++c) {
      const T* p = x.plane(n, c);
      T* o = out.plane(n, c);
      const T g = params.gamma[c];
      const T b = params.beta[c];
      const T mu = mean[c];
      const T is = inv_std[c];
      if (cache) {
        T* xh = cache->x_hat.plane(n, c);
        for (std::size_t i = 0; i < s.spatial(); ++i) {
          xh[i] = (p[i] - mu) * is;
          o[i] = g * xh[i] + b;
        }
      } else {
        for (std::size_t i = 0; i < s.spatial(); ++i) o[i] = g * ((p[i] - mu) * is) + b;
      }
    }
  }
  if (cache) cache->inv_std = std::move(inv_std);
  return out;
}

template <typename T>
BNGrads<T> batchnorm_backward(const BasicTensor4<T>& grad_out, const BNCache<T>& cache, const BNParams<T>& params) {
  const Shape& s = grad_out.shape();
  if (cache.x_hat.shape() != s) throw UsageError("batchnorm_backward called without a matching forward cache");
  const std::size_t channels = params.channels();
  BNGrads<T> grads{BasicTensor4<T>(s), BasicTensor4<T>(params.gamma.shape()), BasicTensor4<T>(params.beta.shape())};
  const double count = static_cast<double>(s.n * s.spatial());
  for (std::size_t c = 0; c < channels; ++c) {
    double sum_g = 0.0, sum_gx = 0.0;
    for (std::size_t n = 0; n < s.n; ++n) {
      const T* g = grad_out.plane(n, c);
      const T* xh = cache.x_hat.plane(n, c);
      for (std::size_t i = 0; i < s.spatial(); ++i) {
        sum_g += static_cast<double>(g[i]);
        sum_gx += static_cast<double>(g[i]) * static_cast<double>(xh[i]);
      }
    }
    grads.grad_beta[c] = static_cast<T>(sum_g);
    grads.grad_gamma[c] = static_cast<T>(sum_gx);
    const T scale = params.gamma[c] * cache.inv_std[c];
    const T mean_g = static_cast<T>(sum_g / count);
    const T mean_gx = static_cast<T>(sum_gx / count);
    for (std::size_t n = 0; n < s.n; ++n) {
      const T* g = grad_out.plane(n, c);
      const T* xh = cache.x_hat.plane(n, c);
      T* gx = grads.grad_x.plane(n, c);
      if (cache.batch_stats) {
        for (std::size_t i = 0; i < s.spatial(); ++i) gx[i] = scale * (g[i] - mean_g - xh[i] * mean_gx);
      } else {
        for (std::size_t i = 0; i < s.spatial(); ++i) gx[i] = scale * g[i];
      }
    }
  }
  return grads;
}

// ---------------------------------------------------------------------------

template <typename T>
BasicTensor4<T> relu_forward(const BasicTensor4<T>& x) {
  BasicTensor4<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] < T(0) ? T(0) : x[i];  // NaN passes through
  return out;
}

template <typename T>
BasicTensor4<T> relu_backward(const BasicTensor4<T>& grad_out, const BasicTensor4<T>& output) {
  if (grad_out.shape() != output.shape()) throw UsageError("relu_backward shape mismatch");
  BasicTensor4<T> out(grad_out.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = output[i] > T(0) ? grad_out[i] : T(0);
  return out;
}

// ---------------------------------------------------------------------------

template <typename T>
BasicTensor4<T> linear_forward(const BasicTensor4<T>& x, const LinearParams<T>& params) {
  const Shape& s = x.shape();
  const std::size_t in = s.c * s.h * s.w;
  if (in != params.in_features())
    throw UsageError("linear layer expects " + std::to_string(params.in_features()) + " input features, got " +
                     std::to_string(in));
  const std::size_t out_f = params.out_features();
  BasicTensor4<T> out(Shape{s.n, out_f, 1, 1});
  ConstMatMap<T> xm(x.raw(), static_cast<Eigen::Index>(s.n), static_cast<Eigen::Index>(in));
  ConstMatMap<T> wm(params.weight.raw(), static_cast<Eigen::Index>(out_f), static_cast<Eigen::Index>(in));
  MatMap<T> om(out.raw(), static_cast<Eigen::Index>(s.n), static_cast<Eigen::Index>(out_f));
  om.noalias() = xm * wm.transpose();
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t o = 0; o < out_f; ++o) out(n, o, 0, 0) += params.bias[o];
  return out;
}

template <typename T>
LinearGrads<T> linear_backward(const BasicTensor4<T>& grad_out, const BasicTensor4<T>& input,
                               const LinearParams<T>& params) {
  const Shape& s = input.shape();
  const std::size_t in = s.c * s.h * s.w;
  const std::size_t out_f = params.out_features();
  if (grad_out.shape() != Shape{s.n, out_f, 1, 1}) throw UsageError("linear_backward gradient shape mismatch");
  LinearGrads<T> grads{BasicTensor4<T>(s), BasicTensor4<T>(params.weight.shape()),
                       BasicTensor4<T>(params.bias.shape())};
  const auto batch = static_cast<Eigen::Index>(s.n);
  ConstMatMap<T> xm(input.raw(), batch, static_cast<Eigen::Index>(in));
  ConstMatMap<T> gm(grad_out.raw(), batch, static_cast<Eigen::Index>(out_f));
  ConstMatMap<T> wm(params.weight.raw(), static_cast<Eigen::Index>(out_f), static_cast<Eigen::Index>(in));
  MatMap<T>(grads.grad_w.raw(), static_cast<Eigen::Index>(out_f), static_cast<Eigen::Index>(in)).noalias() =
      gm.transpose() * xm;
  MatMap<T>(grads.grad_x.raw(), batch, static_cast<Eigen::Index>(in)).noalias() = gm * wm;
  for (std::size_t o = 0; o < out_f; ++o) {
    T acc = 0;
    for (std::size_t n = 0; n < s.n; ++n) acc += grad_out(n, o, 0, 0);
    grads.grad_b[o] = acc;
  }
  return grads;
}

// ---------------------------------------------------------------------------

template <typename T>
BasicTensor4<T> global_avg_pool_forward(const BasicTensor4<T>& x) {
  return reduce_spatial_mean(x);
}

template <typename T>
BasicTensor4<T> global_avg_pool_backward(const BasicTensor4<T>& grad_out, const Shape& input_shape) {
  if (grad_out.shape() != Shape{input_shape.n, input_shape.c, 1, 1})
    throw UsageError("global_avg_pool_backward gradient shape mismatch");
  BasicTensor4<T> out(input_shape);
  const T inv_area = T(1) / static_cast<T>(input_shape.spatial());
  for (std::size_t n = 0; n < input_shape.n; ++n) {
    for (std::size_t c = 0; c < input_shape.c; ++c) {
      const T g = grad_out(n, c, 0, 0) * inv_area;
      T* p = out.plane(n, c);
      std::fill(p, p + input_shape.spatial(), g);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

template <typename T>
LossResult<T> softmax_cross_entropy(const BasicTensor4<T>& logits, std::span<const int> labels) {
  const Shape& s = logits.shape();
  const std::size_t classes = s.c * s.h * s.w;
  if (labels.size() != s.n)
    throw UsageError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for batch of " +
                     std::to_string(s.n));
  LossResult<T> result{0.0, BasicTensor4<T>(s)};
  const double inv_batch = 1.0 / static_cast<double>(s.n);
  for (std::size_t n = 0; n < s.n; ++n) {
    const int label = labels[n];
    if (label < 0 || static_cast<std::size_t>(label) >= classes)
      throw UsageError("label " + std::to_string(label) + " outside [0, " + std::to_string(classes) + ")");
    const T* row = logits.raw() + n * classes;
    double max_logit = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < classes; ++k) max_logit = std::max(max_logit, static_cast<double>(row[k]));
    double denom = 0.0;
    for (std::size_t k = 0; k < classes; ++k) denom += std::exp(static_cast<double>(row[k]) - max_logit);
    const double log_denom = std::log(denom) + max_logit;
    result.loss += (log_denom - static_cast<double>(row[label])) * inv_batch;
    T* grow = result.grad_logits.raw() + n * classes;
    for (std::size_t k = 0; k < classes; ++k) {
      double p = std::exp(static_cast<double>(row[k]) - log_denom);
      if (k == static_cast<std::size_t>(label)) p -= 1.0;
      grow[k] = static_cast<T>(p * inv_batch);
    }
  }
  return result;
}

template <typename T>
std::vector<std::vector<double>> softmax(const BasicTensor4<T>& logits) {
  const Shape& s = logits.shape();
  const std::size_t classes = s.c * s.h * s.w;
  std::vector<std::vector<double>> out(s.n, std::vector<double>(classes));
  for (std::size_t n = 0; n < s.n; ++n) {
    const T* row = logits.raw() + n * classes;
    double max_logit = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < classes; ++k) max_logit = std::max(max_logit, static_cast<double>(row[k]));
    double denom = 0.0;
    for (std::size_t k = 0; k < classes; ++k) {
      out[n][k] = std::exp(static_cast<double>(row[k]) - max_logit);
      denom += out[n][k];
    }
    for (double& v : out[n]) v /= denom;
  }
  return out;
}

#define SDPOINT_INSTANTIATE_LAYERS(T)                                                                            \
  template BasicTensor4<T> conv2d_forward(const BasicTensor4<T>&, const ConvParams<T>&, ConvCache<T>*);          \
  template ConvGrads<T> conv2d_backward(const BasicTensor4<T>&, const ConvCache<T>&, const ConvParams<T>&);     \
  template struct BNParams<T>;                                                                                   \
  template BasicTensor4<T> batchnorm_forward(const BasicTensor4<T>&, BNParams<T>&, BnMode, const ChannelStats*,  \
                                             BNCache<T>*, BatchStats*);                                          \
  template BNGrads<T> batchnorm_backward(const BasicTensor4<T>&, const BNCache<T>&, const BNParams<T>&);        \
  template BasicTensor4<T> relu_forward(const BasicTensor4<T>&);                                                 \
  template BasicTensor4<T> relu_backward(const BasicTensor4<T>&, const BasicTensor4<T>&);                        \
  template BasicTensor4<T> linear_forward(const BasicTensor4<T>&, const LinearParams<T>&);                       \
  template LinearGrads<T> linear_backward(const BasicTensor4<T>&, const BasicTensor4<T>&, const LinearParams<T>&); \
  template BasicTensor4<T> global_avg_pool_forward(const BasicTensor4<T>&);                                      \
  template BasicTensor4<T> global_avg_pool_backward(const BasicTensor4<T>&, const Shape&);                       \
  template LossResult<T> softmax_cross_entropy(const BasicTensor4<T>&, std::span<const int>);                    \
  template std::vector<std::vector<double>> softmax(const BasicTensor4<T>&);

SDPOINT_INSTANTIATE_LAYERS(float)
SDPOINT_INSTANTIATE_LAYERS(double)

}  // namespace sdpoint
