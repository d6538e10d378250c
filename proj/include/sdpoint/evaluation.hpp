#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sdpoint/bn_calibration.hpp"
#include "sdpoint/checkpoint.hpp"
#include "sdpoint/cost_model.hpp"
#include "sdpoint/data.hpp"
#include "sdpoint/network.hpp"
#include "sdpoint/sdpoint.hpp"

namespace sdpoint {

enum class BnSelection { kInstanceSpecific, kUniform };

std::string_view bn_selection_name(BnSelection mode);  // "instance" / "uniform"
BnSelection parse_bn_selection(std::string_view name);

// Something that can be evaluated: an instance of the catalog at the native
// input size, or (multiscale models) the identity at a resized input "s{size}".
struct EvalTarget {
  std::string id;
  Instance instance;
  std::size_t input_size = 0;
};

// Every evaluable target of a model trained in `mode`: the catalog for
// sdpoint and baseline models, ascending input sizes for multiscale ones.
std::vector<EvalTarget> eval_targets(const NetworkSpec& spec, TrainMode mode, const std::vector<double>& ratios,
                                     std::size_t ms_min = 16, std::size_t ms_max = 32);

// Looks `id` up among eval_targets; throws UsageError listing valid ids.
EvalTarget find_target(const std::vector<EvalTarget>& targets, std::string_view id);

std::uint64_t target_flops(const NetworkSpec& spec, const EvalTarget& target);

struct Predictions {
  std::vector<int> predicted;
  std::vector<std::vector<double>> probabilities;  // filled when requested
};

// Deterministic batched inference in eval mode. Instance-specific selection
// requires `store`; uniform selection reads the running statistics.
Predictions predict(Network<float>& net, const EvalTarget& target, BnSelection bn, const InstanceBNStore* store,
                    const Tensor4& images, bool keep_probabilities = false, std::size_t batch_size = 250);

struct EvalResult {
  std::string id;
  BnSelection bn = BnSelection::kInstanceSpecific;
  double error = 0.0;  // top-1, percent
  std::size_t samples = 0;
  std::uint64_t flops = 0;
};

double top1_error(std::span<const int> predicted, std::span<const int> labels);

EvalResult evaluate_instance(Network<float>& net, const EvalTarget& target, BnSelection bn,
                             const InstanceBNStore* store, const Dataset& val);

struct CurvePoint {
  std::string id;
  std::uint64_t flops = 0;
  double error = 0.0;
  friend bool operator==(const CurvePoint&, const CurvePoint&) = default;
};

// Sorts by cost and keeps a point only if its error is strictly below that
// of every cheaper kept point.
std::vector<CurvePoint> pareto_filter(std::vector<CurvePoint> points);
bool is_strictly_improving(std::span<const CurvePoint> points);

std::vector<CurvePoint> cost_error_curve(std::span<const EvalResult> results);

// Per sample, the cost of the cheapest target that classifies it correctly;
// nullopt when no target does.
struct MinCostResult {
  std::vector<std::optional<std::uint64_t>> per_sample;
  // (flops or nullopt for the uncorrectable bucket, count), ascending cost, uncorrectable last.
  std::vector<std::pair<std::optional<std::uint64_t>, std::size_t>> histogram;
};

MinCostResult min_cost_grouping(std::span<const std::uint64_t> target_costs,
                                std::span<const std::vector<int>> predictions, std::span<const int> labels);

double cosine_similarity(std::span<const double> a, std::span<const double> b);

// Mean over images and over all size pairs of the cosine similarity between
// class-probability vectors. Each image is bilinear-resized to every size
// and center-cropped back to the network input.
double scale_sensitivity(Network<float>& net, const EvalTarget& target, BnSelection bn, const InstanceBNStore* store,
                         const Dataset& val, std::span<const std::size_t> sizes);

struct StorageReport {
  std::size_t checkpoint_bytes = 0;     // with the statistics store
  std::size_t without_store_bytes = 0;  // same checkpoint, store removed
  std::size_t store_bytes = 0;
  std::size_t naive_store_bytes = 0;  // every layer replicated per instance (0 when not computed)
  std::size_t param_bytes = 0;        // 4 bytes per parameter

  double overhead_vs_checkpoint() const;  // percent
  double overhead_vs_params() const;      // percent
};

StorageReport storage_overhead_report(const Checkpoint& ckpt, const InstanceBNStore* naive = nullptr);

// Calibrated store for a multiscale model: the identity at the native size
// as baseline, plus one full-depth entry per "s{size}".
InstanceBNStore build_multiscale_store(Network<float>& net, std::span<const EvalTarget> targets,
                                       std::span<const Tensor4> batches);

// Store matching the checkpoint's training mode.
InstanceBNStore build_store_for(Network<float>& net, const Checkpoint& ckpt, std::span<const Tensor4> batches);

}  // namespace sdpoint
