#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "sdpoint/network.hpp"
#include "sdpoint/train.hpp"

namespace sdpoint {

// A run description read from a YAML file:
//
//   model:       {depth, widen, classes}
//   train:       {mode, epochs, batch_size, base_lr, momentum, weight_decay,
//                 lr_drops, seed, ratios, augment, subset, ms_min, ms_max}
//   data:        {dir}
//   output:      {dir}
//
// Required: model.depth, model.widen, train.mode, train.epochs, output.dir.
// Unknown sections or keys are errors reported with their line number.
struct RunConfig {
  std::size_t depth = 0;
  std::size_t widen = 0;
  std::size_t classes = 10;

  TrainConfig train;
  std::size_t train_subset = 0;  // 0 = whole train split

  std::string data_dir;  // falls back to $SDPOINT_DATA_DIR

  std::string output_dir;

  NetworkSpec network_spec() const;
};

RunConfig parse_run_config(const std::string& text, const std::string& origin = "<config>");
RunConfig load_run_config(const std::string& path);

// Explicit value, else $SDPOINT_DATA_DIR, else UsageError.
std::string resolve_data_dir(const std::string& explicit_dir);

}  // namespace sdpoint
