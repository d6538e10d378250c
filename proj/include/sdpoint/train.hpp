#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "sdpoint/checkpoint.hpp"
#include "sdpoint/data.hpp"
#include "sdpoint/network.hpp"
#include "sdpoint/sdpoint.hpp"

namespace sdpoint {

struct TrainConfig {
  std::size_t epochs = 40;
  std::size_t batch_size = 128;
  double base_lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::vector<double> lr_drops{0.5, 0.75};  // fractions of total epochs
  TrainMode mode = TrainMode::kSdpoint;
  std::uint64_t seed = 1;
  std::vector<double> ratios{0.5, 0.75};
  AugmentPolicy augment;
  std::size_t multiscale_min = 16;  // inclusive input sizes for the multiscale baseline
  std::size_t multiscale_max = 32;

  void validate() const;
};

// base_lr * 10^-d, d = number of drop points at or before `epoch`.
double learning_rate(const TrainConfig& config, std::size_t epoch);

// Seed for the network's initial weights under a training seed.
std::uint64_t init_seed(std::uint64_t training_seed);

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  std::vector<double> iteration_losses;
  // Instance id (sdpoint/baseline) or "s{size}" (multiscale) per iteration.
  std::vector<std::string> draws;
};

// SGD with momentum and L2 weight decay applied to every parameter:
//   v <- momentum * v - lr * (g + weight_decay * w);  w <- w + v
class Sgd {
 public:
  Sgd(double momentum, double weight_decay) : momentum_(momentum), weight_decay_(weight_decay) {}
  void step(std::vector<ParamRef<float>>& params, double lr);

 private:
  double momentum_;
  double weight_decay_;
  std::vector<std::vector<float>> velocity_;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

// The training loop. Per iteration: draw an instance (sdpoint), an input
// size (multiscale) or nothing (baseline); forward, softmax cross-entropy,
// backward, SGD step. Throws NumericalError on a non-finite loss.
TrainHistory train(const TrainConfig& config, Network<float>& net, const Dataset& train_data,
                   const EpochCallback& on_epoch = {});

}  // namespace sdpoint
