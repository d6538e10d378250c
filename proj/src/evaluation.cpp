#include "sdpoint/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "sdpoint/binary_io.hpp"

namespace sdpoint {

std::string_view bn_selection_name(BnSelection mode) {
  return mode == BnSelection::kInstanceSpecific ? "instance" : "uniform";
}

BnSelection parse_bn_selection(std::string_view name) {
  if (name == "instance") return BnSelection::kInstanceSpecific;
  if (name == "uniform") return BnSelection::kUniform;
  throw UsageError("unknown batchnorm selection '" + std::string(name) + "' (expected instance or uniform)");
}

std::vector<EvalTarget> eval_targets(const NetworkSpec& spec, TrainMode mode, const std::vector<double>& ratios,
                                     std::size_t ms_min, std::size_t ms_max) {
  std::vector<EvalTarget> out;
  if (mode == TrainMode::kMultiscale) {
    if (ms_min == 0 || ms_min > ms_max) throw UsageError("multiscale size range must satisfy 1 <= min <= max");
    for (std::size_t s = ms_min; s <= ms_max; ++s) out.push_back({"s" + std::to_string(s), Instance{}, s});
    return out;
  }
  const InstanceCatalog catalog = enumerate_instances(spec.num_blocks(), ratios);
  for (const Instance& inst : catalog.instances) out.push_back({inst.id(), inst, spec.input_size});
  return out;
}

EvalTarget find_target(const std::vector<EvalTarget>& targets, std::string_view id) {
  for (const EvalTarget& t : targets)
    if (t.id == id) return t;
  std::string valid;
  for (const EvalTarget& t : targets) valid += (valid.empty() ? "" : ", ") + t.id;
  throw UsageError("unknown instance '" + std::string(id) + "'; valid ids: " + valid);
}

std::uint64_t target_flops(const NetworkSpec& spec, const EvalTarget& target) {
  return instance_cost(spec, target.instance, target.input_size).flops;
}

Predictions predict(Network<float>& net, const EvalTarget& target, BnSelection bn, const InstanceBNStore* store,
                    const Tensor4& images, bool keep_probabilities, std::size_t batch_size) {
  if (batch_size == 0) throw UsageError("batch size must be >= 1");
  ForwardContext ctx;
  ctx.bn_mode = BnMode::kEval;
  if (bn == BnSelection::kInstanceSpecific) {
    if (!store) throw UsageError("instance-specific batchnorm needs a calibrated statistics store (run calibrate)");
    ctx.stats = make_selector(*store, target.id);
  }
  const Shape shape = images.shape();
  Predictions out;
  out.predicted.reserve(shape.n);
  for (std::size_t start = 0; start < shape.n; start += batch_size) {
    const std::size_t count = std::min(batch_size, shape.n - start);
    Tensor4 batch({count, shape.c, shape.h, shape.w});
    const std::size_t stride = shape.c * shape.h * shape.w;
    std::copy_n(images.raw() + start * stride, count * stride, batch.raw());
    if (target.input_size != shape.h || target.input_size != shape.w)
      batch = bilinear_resize(batch, target.input_size, target.input_size);
    const Tensor4 logits = sdpoint_forward(net, batch, target.instance, ctx);
    const std::size_t classes = logits.shape().c;
    for (std::size_t i = 0; i < count; ++i) {
      const float* row = logits.raw() + i * classes;
      out.predicted.push_back(static_cast<int>(std::max_element(row, row + classes) - row));
    }
    if (keep_probabilities) {
      std::vector<std::vector<double>> probs = softmax(logits);
      for (auto& p : probs) out.probabilities.push_back(std::move(p));
    }
  }
  return out;
}

double top1_error(std::span<const int> predicted, std::span<const int> labels) {
  if (predicted.size() != labels.size()) throw UsageError("prediction and label counts differ");
  if (labels.empty()) throw DataError("cannot compute error on an empty split");
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) wrong += predicted[i] != labels[i];
  return 100.0 * static_cast<double>(wrong) / static_cast<double>(labels.size());
}

EvalResult evaluate_instance(Network<float>& net, const EvalTarget& target, BnSelection bn,
                             const InstanceBNStore* store, const Dataset& val) {
  const Predictions p = predict(net, target, bn, store, val.images);
  EvalResult r;
  r.id = target.id;
  r.bn = bn;
  r.error = top1_error(p.predicted, val.labels);
  r.samples = val.size();
  r.flops = target_flops(net.spec(), target);
  return r;
}

std::vector<CurvePoint> pareto_filter(std::vector<CurvePoint> points) {
  // Ties in cost: the better one is seen first and the other is then dropped.
  std::stable_sort(points.begin(), points.end(), [](const CurvePoint& a, const CurvePoint& b) {
    return a.flops != b.flops ? a.flops < b.flops : a.error < b.error;
  });
  std::vector<CurvePoint> kept;
  for (CurvePoint& p : points)
    if (kept.empty() || p.error < kept.back().error) kept.push_back(std::move(p));
  return kept;
}

bool is_strictly_improving(std::span<const CurvePoint> points) {
  for (std::size_t i = 1; i < points.size(); ++i)
    if (!(points[i].flops > points[i - 1].flops && points[i].error < points[i - 1].error)) return false;
  return true;
}

std::vector<CurvePoint> cost_error_curve(std::span<const EvalResult> results) {
  std::vector<CurvePoint> points;
  for (const EvalResult& r : results) points.push_back({r.id, r.flops, r.error});
  return pareto_filter(std::move(points));
}

MinCostResult min_cost_grouping(std::span<const std::uint64_t> target_costs,
                                std::span<const std::vector<int>> predictions, std::span<const int> labels) {
  if (target_costs.size() != predictions.size()) throw UsageError("one prediction list per target is required");
  for (const auto& p : predictions)
    if (p.size() != labels.size()) throw UsageError("prediction list length differs from the label count");

  std::vector<std::size_t> order(target_costs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return target_costs[a] < target_costs[b]; });

  MinCostResult out;
  out.per_sample.resize(labels.size());
  std::map<std::uint64_t, std::size_t> buckets;
  std::size_t uncorrectable = 0;
  for (std::size_t s = 0; s < labels.size(); ++s) {
    for (std::size_t t : order) {
      if (predictions[t][s] == labels[s]) {
        out.per_sample[s] = target_costs[t];
        break;
      }
    }
    if (out.per_sample[s])
      ++buckets[*out.per_sample[s]];
    else
      ++uncorrectable;
  }
  for (const auto& [cost, count] : buckets) out.histogram.emplace_back(cost, count);
  if (uncorrectable) out.histogram.emplace_back(std::nullopt, uncorrectable);
  return out;
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw UsageError("cosine similarity needs vectors of equal length");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) throw NumericalError("cosine similarity of a zero vector");
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

double scale_sensitivity(Network<float>& net, const EvalTarget& target, BnSelection bn, const InstanceBNStore* store,
                         const Dataset& val, std::span<const std::size_t> sizes) {
  if (sizes.size() < 2) throw UsageError("scale sensitivity needs at least two sizes");
  const std::size_t crop = net.spec().input_size;
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    if (sizes[i] < crop)
      throw UsageError("resize size " + std::to_string(sizes[i]) + " is smaller than the " + std::to_string(crop) +
                       "-pixel crop");
    for (std::size_t j = 0; j < i; ++j)
      if (sizes[i] == sizes[j]) throw UsageError("scale sensitivity sizes must be distinct");
  }
  if (val.size() == 0) throw DataError("cannot measure scale sensitivity on an empty split");

  std::vector<std::vector<std::vector<double>>> probs;  // [size][image][class]
  for (std::size_t s : sizes) {
    Tensor4 views = center_crop(bilinear_resize(val.images, s, s), crop);
    probs.push_back(predict(net, target, bn, store, views, true).probabilities);
  }
  double total = 0.0;
  std::size_t pairs = 0;
  for (std::size_t img = 0; img < val.size(); ++img) {
    for (std::size_t a = 0; a < sizes.size(); ++a) {
      for (std::size_t b = a + 1; b < sizes.size(); ++b) {
        total += cosine_similarity(probs[a][img], probs[b][img]);
        ++pairs;
      }
    }
  }
  return total / static_cast<double>(pairs);
}

double StorageReport::overhead_vs_checkpoint() const {
  if (without_store_bytes == 0) return 0.0;
  return 100.0 * static_cast<double>(checkpoint_bytes - without_store_bytes) /
         static_cast<double>(without_store_bytes);
}

double StorageReport::overhead_vs_params() const {
  if (param_bytes == 0) return 0.0;
  return 100.0 * static_cast<double>(checkpoint_bytes - without_store_bytes) / static_cast<double>(param_bytes);
}

StorageReport storage_overhead_report(const Checkpoint& ckpt, const InstanceBNStore* naive) {
  StorageReport r;
  r.checkpoint_bytes = serialize_checkpoint(ckpt).size();
  Checkpoint bare = ckpt;
  bare.store.reset();
  r.without_store_bytes = serialize_checkpoint(bare).size();
  if (ckpt.store) r.store_bytes = serialize_store(*ckpt.store).size();
  if (naive) r.naive_store_bytes = serialize_store(*naive).size();
  r.param_bytes = 4 * param_count(ckpt.spec);
  return r;
}

InstanceBNStore build_multiscale_store(Network<float>& net, std::span<const EvalTarget> targets,
                                       std::span<const Tensor4> batches) {
  InstanceBNStore store;
  store.calibration_batches = static_cast<std::uint32_t>(batches.size());
  store.baseline = calibrate_instance(net, Instance{}, batches);
  for (const EvalTarget& t : targets) {
    const std::size_t size = t.input_size;
    std::vector<ChannelStats> stats =
        calibrate(net, batches, [size, &t](Network<float>& n, const Tensor4& x, ForwardContext& ctx) {
          const Tensor4 input = (x.shape().h == size && x.shape().w == size) ? x : bilinear_resize(x, size, size);
          sdpoint_forward(n, input, t.instance, ctx);
        });
    store.overrides.emplace_back(t.id, InstanceOverride{0, std::move(stats)});
  }
  return store;
}

InstanceBNStore build_store_for(Network<float>& net, const Checkpoint& ckpt, std::span<const Tensor4> batches) {
  if (ckpt.mode == TrainMode::kMultiscale) {
    const std::vector<EvalTarget> targets = eval_targets(ckpt.spec, ckpt.mode, ckpt.ratios);
    return build_multiscale_store(net, targets, batches);
  }
  return build_store(net, enumerate_instances(ckpt.spec.num_blocks(), ckpt.ratios), batches);
}

}  // namespace sdpoint
