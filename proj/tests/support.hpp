// Helpers shared by the unit tests and the acceptance runner.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <unistd.h>

#include "sdpoint/network.hpp"
#include "sdpoint/rng.hpp"
#include "sdpoint/tensor.hpp"

namespace sdpoint::testing {

template <typename T = double>
inline BasicTensor4<T> random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  BasicTensor4<T> t(shape);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(scale * rng.normal());
  return t;
}

// max |a - n| / max(max |a|, max |n|, 1e-12) over all entries.
inline double relative_error(const Tensor4d& analytic, const Tensor4d& numeric) {
  double diff = 0.0, scale = 1e-12;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff = std::max(diff, std::abs(analytic[i] - numeric[i]));
    scale = std::max({scale, std::abs(analytic[i]), std::abs(numeric[i])});
  }
  return diff / scale;
}

// Central differences of the scalar `loss` with respect to every entry of `x`.
inline Tensor4d numeric_gradient(Tensor4d& x, const std::function<double()>& loss, double h = 1e-6) {
  Tensor4d g(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + h;
    const double up = loss();
    x[i] = saved - h;
    const double down = loss();
    x[i] = saved;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

// sum(out * weights): a scalar whose gradient w.r.t. out is `weights`.
inline double weighted_sum(const Tensor4d& out, const Tensor4d& weights) {
  double s = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) s += out[i] * weights[i];
  return s;
}

// Small pre-activation residual net with one stride-2 transition.
inline NetworkSpec tiny_residual_spec(std::size_t input_size = 8, std::size_t classes = 4) {
  NetworkSpec spec;
  spec.input_channels = 3;
  spec.input_size = input_size;
  spec.stem = StemSpec{4, 3, 1};
  spec.blocks = {BlockSpec{BlockKind::kPreActResidual, 4, 4, 1},
                 BlockSpec{BlockKind::kPreActResidual, 4, 8, 2},
                 BlockSpec{BlockKind::kPreActResidual, 8, 8, 1}};
  spec.num_classes = classes;
  return spec;
}

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() /
            ("sdpoint_" + tag + "_" + std::to_string(::getpid()) + "_" +
             std::to_string(reinterpret_cast<std::uintptr_t>(this)));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::string str() const { return path_.string(); }

 private:
  std::filesystem::path path_;
};

}  // namespace sdpoint::testing
