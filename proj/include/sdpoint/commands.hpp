#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "sdpoint/checkpoint.hpp"
#include "sdpoint/data.hpp"

namespace sdpoint {

// Subcommand bodies behind the sdpoint binary. They write progress and
// result tables to `out` and throw sdpoint errors; the binary maps them to
// exit codes (usage 1, data 2, numerical 3).

struct TrainOptions {
  std::string config_path;
  std::string checkpoint_name = "model.sdpt";
};
// Returns the checkpoint path.
std::string cmd_train(const TrainOptions& opts, std::ostream& out);

struct CalibrateOptions {
  std::string checkpoint;
  std::string data_dir;  // falls back to $SDPOINT_DATA_DIR
  std::size_t batches = 0;  // 0: one epoch, capped at 100 batches
  std::size_t batch_size = 128;
  std::uint64_t seed = 0;
  std::string output;  // default: overwrite the input checkpoint
};
void cmd_calibrate(const CalibrateOptions& opts, std::ostream& out);

struct EvalOptions {
  std::string checkpoint;
  std::string data_dir;
  std::string instance;  // empty with all == true
  bool all = false;
  std::string bn = "instance";
  std::string output_dir;  // default: directory of the checkpoint
  std::size_t val_subset = 0;
};
void cmd_eval(const EvalOptions& opts, std::ostream& out);

struct CostOptions {
  std::string config;
  std::string checkpoint;
  std::size_t depth = 0;
  std::size_t widen = 0;
  std::vector<double> ratios{0.5, 0.75};
  std::size_t input_size = 32;
  std::string output;  // CSV path; empty prints to `out`
};
void cmd_cost(const CostOptions& opts, std::ostream& out);

struct AnalyzeOptions {
  std::string checkpoint;
  std::string data_dir;
  std::string output_dir;
  std::size_t val_subset = 0;
  std::string bn = "instance";
  bool mincost = false;
  bool scale = false;
  std::vector<std::size_t> scale_sizes{32, 36, 40, 44, 48};
  std::string scale_instance = "p0";
  std::optional<std::vector<std::size_t>> padded_ratio;  // h w k pad
};
void cmd_analyze(const AnalyzeOptions& opts, std::ostream& out);

struct SynthOptions {
  std::string output_dir;
  std::size_t train_per_file = 200;
  std::size_t val = 200;
  std::uint64_t seed = 7;
};
void cmd_synth(const SynthOptions& opts, std::ostream& out);

// Shared helpers, exposed for tests.

// min(100, batches in one pass over the split).
std::size_t default_calibration_batches(std::size_t train_size, std::size_t batch_size);

// K calibration batches (K = 0 picks the default above) drawn without augmentation from the normalized
// train split, in a fixed permutation derived from `seed`.
std::vector<Tensor4> calibration_batches(const Dataset& train, const ChannelNorm& norm, std::size_t batches,
                                         std::size_t batch_size, std::uint64_t seed);

std::string format_fixed(double value, int digits);

}  // namespace sdpoint
