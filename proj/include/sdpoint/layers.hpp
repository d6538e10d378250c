#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "sdpoint/tensor.hpp"

namespace sdpoint {

// ---------------------------------------------------------------------------
// Convolution (bias-free cross-correlation, square kernel)

template <typename T>
struct ConvParams {
  BasicTensor4<T> weight;  // (c_out, c_in, k, k)
  std::size_t stride = 1;
  std::size_t pad = 0;

  std::size_t c_out() const { return weight.shape().n; }
  std::size_t c_in() const { return weight.shape().c; }
  std::size_t kernel() const { return weight.shape().h; }
};

template <typename T>
struct ConvCache {
  BasicTensor4<T> input;
};

template <typename T>
struct ConvGrads {
  BasicTensor4<T> grad_x;
  BasicTensor4<T> grad_w;
};

// floor((in + 2*pad - k) / stride) + 1; throws UsageError if the kernel does
// not fit or the stride is not 1 or 2.
std::size_t conv_output_size(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t pad);

template <typename T>
BasicTensor4<T> conv2d_forward(const BasicTensor4<T>& x, const ConvParams<T>& params, ConvCache<T>* cache = nullptr);

template <typename T>
ConvGrads<T> conv2d_backward(const BasicTensor4<T>& grad_out, const ConvCache<T>& cache, const ConvParams<T>& params);

// ---------------------------------------------------------------------------
// Batch normalization

enum class BnMode {
  kTrain,       // batch statistics, running statistics updated
  kBatchStats,  // batch statistics, running statistics untouched (calibration)
  kEval,        // fixed statistics: override if supplied, else running
};

// Per-channel mean and (biased) variance as stored in checkpoints.
struct ChannelStats {
  std::vector<float> mean;
  std::vector<float> var;

  std::size_t channels() const { return mean.size(); }
  friend bool operator==(const ChannelStats&, const ChannelStats&) = default;
};

// Statistics observed on one batch, kept in double for aggregation.
struct BatchStats {
  std::vector<double> mean;
  std::vector<double> var;
};

template <typename T>
struct BNParams {
  BasicTensor4<T> gamma;  // (1, c, 1, 1)
  BasicTensor4<T> beta;
  BasicTensor4<T> running_mean;
  BasicTensor4<T> running_var;
  T momentum = T(0.1);
  T epsilon = T(1e-5);
  std::uint64_t batches_tracked = 0;

  explicit BNParams(std::size_t channels = 1);
  std::size_t channels() const { return gamma.shape().c; }
};

template <typename T>
struct BNCache {
  BasicTensor4<T> x_hat;
  std::vector<T> inv_std;
  bool batch_stats = false;
};

template <typename T>
struct BNGrads {
  BasicTensor4<T> grad_x;
  BasicTensor4<T> grad_gamma;
  BasicTensor4<T> grad_beta;
};

// Eval mode without an override requires running statistics from at least
// one training step (or a loaded checkpoint); otherwise UsageError.
template <typename T>
BasicTensor4<T> batchnorm_forward(const BasicTensor4<T>& x, BNParams<T>& params, BnMode mode,
                                  const ChannelStats* stats_override = nullptr, BNCache<T>* cache = nullptr,
                                  BatchStats* observed = nullptr);

template <typename T>
BNGrads<T> batchnorm_backward(const BasicTensor4<T>& grad_out, const BNCache<T>& cache, const BNParams<T>& params);

// ---------------------------------------------------------------------------
// ReLU

template <typename T>
BasicTensor4<T> relu_forward(const BasicTensor4<T>& x);

// `output` is the forward result; the mask is output > 0.
template <typename T>
BasicTensor4<T> relu_backward(const BasicTensor4<T>& grad_out, const BasicTensor4<T>& output);

// ---------------------------------------------------------------------------
// Fully connected layer over the flattened (c, h, w) features.

template <typename T>
struct LinearParams {
  BasicTensor4<T> weight;  // (out, in, 1, 1)
  BasicTensor4<T> bias;    // (1, out, 1, 1)

  std::size_t in_features() const { return weight.shape().c; }
  std::size_t out_features() const { return weight.shape().n; }
};

template <typename T>
struct LinearGrads {
  BasicTensor4<T> grad_x;
  BasicTensor4<T> grad_w;
  BasicTensor4<T> grad_b;
};

template <typename T>
BasicTensor4<T> linear_forward(const BasicTensor4<T>& x, const LinearParams<T>& params);

template <typename T>
LinearGrads<T> linear_backward(const BasicTensor4<T>& grad_out, const BasicTensor4<T>& input,
                               const LinearParams<T>& params);

// ---------------------------------------------------------------------------
// Global average pooling to 1x1, any incoming spatial size.

template <typename T>
BasicTensor4<T> global_avg_pool_forward(const BasicTensor4<T>& x);

template <typename T>
BasicTensor4<T> global_avg_pool_backward(const BasicTensor4<T>& grad_out, const Shape& input_shape);

// ---------------------------------------------------------------------------
// Softmax cross-entropy averaged over the batch.

template <typename T>
struct LossResult {
  double loss = 0.0;
  BasicTensor4<T> grad_logits;
};

template <typename T>
LossResult<T> softmax_cross_entropy(const BasicTensor4<T>& logits, std::span<const int> labels);

// Row-wise softmax of (n, k, 1, 1) logits.
template <typename T>
std::vector<std::vector<double>> softmax(const BasicTensor4<T>& logits);

}  // namespace sdpoint
