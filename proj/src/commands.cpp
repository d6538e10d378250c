#include "sdpoint/commands.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "sdpoint/config.hpp"
#include "sdpoint/cost_model.hpp"
#include "sdpoint/evaluation.hpp"
#include "sdpoint/train.hpp"

namespace fs = std::filesystem;

namespace sdpoint {

std::string format_fixed(double value, int digits) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << value;
  return s.str();
}

namespace {

class CsvFile {
 public:
  CsvFile(const fs::path& path, const std::string& header) : out_(path) {
    if (!out_) throw DataError("cannot write '" + path.string() + "'");
    out_ << header << '\n';
  }
  template <typename... Fields>
  void row(const Fields&... fields) {
    std::size_t i = 0;
    ((out_ << (i++ ? "," : "") << fields), ...);
    out_ << '\n';
  }

 private:
  std::ofstream out_;
};

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create directory '" + dir.string() + "': " + ec.message());
}

fs::path default_out_dir(const std::string& explicit_dir, const std::string& checkpoint) {
  if (!explicit_dir.empty()) return explicit_dir;
  const fs::path parent = fs::path(checkpoint).parent_path();
  return parent.empty() ? fs::path(".") : parent;
}

Dataset load_val(const std::string& data_dir, const ChannelNorm& norm, std::size_t subset) {
  const std::string dir = resolve_data_dir(data_dir);
  Dataset val = load_cifar10_file((fs::path(dir) / "test_batch.bin").string(), "val");
  if (subset) val = val.head(subset);
  return normalize(val, norm);
}

struct LoadedModel {
  Checkpoint ckpt;
  Network<float> net;
};

LoadedModel load_model(const std::string& path) {
  if (path.empty()) throw UsageError("a checkpoint path is required");
  if (!fs::exists(path)) throw UsageError("checkpoint '" + path + "' does not exist");
  Checkpoint ckpt = load_checkpoint(path);
  Network<float> net = network_from_checkpoint(ckpt);
  return {std::move(ckpt), std::move(net)};
}

}  // namespace

std::size_t default_calibration_batches(std::size_t train_size, std::size_t batch_size) {
  return std::min<std::size_t>(100, (train_size + batch_size - 1) / batch_size);
}

std::vector<Tensor4> calibration_batches(const Dataset& train, const ChannelNorm& norm, std::size_t batches,
                                         std::size_t batch_size, std::uint64_t seed) {
  if (batch_size == 0) throw UsageError("calibration batch size must be at least one image");
  if (train.size() == 0) throw DataError("calibration split is empty");
  if (batches == 0) batches = default_calibration_batches(train.size(), batch_size);
  BatchIterator it(train, batch_size, seed);
  std::vector<Tensor4> out;
  Batch b;
  for (std::size_t epoch = 0; out.size() < batches; ++epoch) {
    it.start_epoch(epoch);
    while (out.size() < batches && it.next(b)) {
      Dataset chunk{std::move(b.images), std::move(b.labels), train.split};
      out.push_back(normalize(chunk, norm).images);
    }
  }
  return out;
}

std::string cmd_train(const TrainOptions& opts, std::ostream& out) {
  const RunConfig cfg = load_run_config(opts.config_path);
  const std::string data_dir = resolve_data_dir(cfg.data_dir);
  Dataset train_split = load_cifar10(data_dir).first;
  if (cfg.train_subset) train_split = train_split.head(cfg.train_subset);
  const ChannelNorm norm = compute_channel_norm(train_split);
  const Dataset train_data = normalize(train_split, norm);

  const NetworkSpec spec = cfg.network_spec();
  Network<float> net(spec, init_seed(cfg.train.seed));
  out << "training wrn-" << cfg.depth << "-" << cfg.widen << " (" << train_mode_name(cfg.train.mode) << ", "
      << train_data.size() << " images, " << cfg.train.epochs << " epochs)\n";

  const fs::path dir = cfg.output_dir;
  ensure_dir(dir);
  const TrainHistory history = train(cfg.train, net, train_data, [&out](const EpochRecord& r) {
    out << "epoch " << r.epoch << " lr " << r.lr << " loss " << format_fixed(r.train_loss, 6) << '\n';
  });

  {
    CsvFile csv(dir / "history.csv", "epoch,lr,train_loss");
    for (const EpochRecord& r : history.epochs) csv.row(r.epoch, format_fixed(r.lr, 8), format_fixed(r.train_loss, 8));
  }
  {
    CsvFile csv(dir / "draws.csv", "iteration,draw,loss");
    for (std::size_t i = 0; i < history.draws.size(); ++i)
      csv.row(i, history.draws[i], format_fixed(history.iteration_losses[i], 8));
  }
  const Checkpoint ckpt = make_checkpoint(net, cfg.train.ratios, cfg.train.mode, norm, cfg.train.seed,
                                          static_cast<std::uint32_t>(cfg.train.epochs));
  const std::string path = (dir / opts.checkpoint_name).string();
  save_checkpoint(path, ckpt);
  out << "wrote " << path << '\n';
  return path;
}

void cmd_calibrate(const CalibrateOptions& opts, std::ostream& out) {
  LoadedModel m = load_model(opts.checkpoint);
  const std::string dir = resolve_data_dir(opts.data_dir);
  const Dataset train_split = load_cifar10(dir).first;
  const std::vector<Tensor4> batches =
      calibration_batches(train_split, m.ckpt.norm, opts.batches, opts.batch_size, opts.seed);
  InstanceBNStore store = build_store_for(m.net, m.ckpt, batches);
  store.seed = opts.seed;
  m.ckpt.store = std::move(store);
  const std::string path = opts.output.empty() ? opts.checkpoint : opts.output;
  save_checkpoint(path, m.ckpt);
  const StorageReport report = storage_overhead_report(m.ckpt);
  out << "calibrated " << m.ckpt.store->overrides.size() << " instances on " << batches.size() << " batches; store "
      << report.store_bytes << " bytes (" << format_fixed(report.overhead_vs_params(), 2)
      << "% of parameter bytes); wrote " << path << '\n';
}

void cmd_eval(const EvalOptions& opts, std::ostream& out) {
  if (opts.all == !opts.instance.empty()) throw UsageError("pass exactly one of --instance or --all");
  const BnSelection bn = parse_bn_selection(opts.bn);
  LoadedModel m = load_model(opts.checkpoint);
  const std::vector<EvalTarget> targets = eval_targets(m.ckpt.spec, m.ckpt.mode, m.ckpt.ratios);
  std::vector<EvalTarget> chosen;
  if (opts.all)
    chosen = targets;
  else
    chosen.push_back(find_target(targets, opts.instance));
  if (bn == BnSelection::kInstanceSpecific && !m.ckpt.store)
    throw UsageError("checkpoint has no statistics store; run calibrate or use --bn uniform");
  const InstanceBNStore* store = m.ckpt.store ? &*m.ckpt.store : nullptr;

  const Dataset val = load_val(opts.data_dir, m.ckpt.norm, opts.val_subset);
  std::vector<EvalResult> results;
  out << "instance_id,bn,flops,error,samples\n";
  for (const EvalTarget& t : chosen) {
    results.push_back(evaluate_instance(m.net, t, bn, store, val));
    const EvalResult& r = results.back();
    out << r.id << ',' << bn_selection_name(r.bn) << ',' << r.flops << ',' << format_fixed(r.error, 4) << ','
        << r.samples << '\n';
  }
  if (opts.all) {
    const fs::path dir = default_out_dir(opts.output_dir, opts.checkpoint);
    ensure_dir(dir);
    CsvFile csv(dir / "curve.csv", "instance_id,flops,error");
    for (const CurvePoint& p : cost_error_curve(results)) csv.row(p.id, p.flops, format_fixed(p.error, 4));
    out << "wrote " << (dir / "curve.csv").string() << '\n';
  }
}

void cmd_cost(const CostOptions& opts, std::ostream& out) {
  const int sources = !opts.config.empty() + !opts.checkpoint.empty() + (opts.depth != 0 || opts.widen != 0);
  if (sources != 1) throw UsageError("pass exactly one of --config, --checkpoint or --depth/--widen");
  NetworkSpec spec;
  std::vector<double> ratios = opts.ratios;
  if (!opts.config.empty()) {
    const RunConfig cfg = load_run_config(opts.config);
    spec = cfg.network_spec();
    ratios = cfg.train.ratios;
  } else if (!opts.checkpoint.empty()) {
    const Checkpoint ckpt = load_checkpoint(opts.checkpoint);
    spec = ckpt.spec;
    ratios = ckpt.ratios;
  } else {
    spec = wide_resnet_spec(opts.depth, opts.widen, 10, opts.input_size);
  }
  const InstanceCatalog catalog = enumerate_instances(spec.num_blocks(), ratios);
  const std::uint64_t params = param_count(spec);

  std::ostringstream table;
  table << "instance_id,flops,gflops,params\n";
  for (const Instance& inst : catalog.instances) {
    const CostReport r = instance_cost(spec, inst);
    table << inst.id() << ',' << r.flops << ',' << format_fixed(r.gflops(), 6) << ',' << params << '\n';
  }
  if (opts.output.empty()) {
    out << table.str();
  } else {
    std::ofstream f(opts.output);
    if (!f) throw DataError("cannot write '" + opts.output + "'");
    f << table.str();
    out << "wrote " << opts.output << '\n';
  }
}

void cmd_analyze(const AnalyzeOptions& opts, std::ostream& out) {
  const int modes = opts.mincost + opts.scale + opts.padded_ratio.has_value();
  if (modes != 1) throw UsageError("pass exactly one of --mincost, --scale or --padded-ratio");

  if (opts.padded_ratio) {
    const auto& v = *opts.padded_ratio;
    if (v.size() != 4) throw UsageError("--padded-ratio takes four values: h w k pad");
    out << "h,w,kernel,pad,padded_ratio\n"
        << v[0] << ',' << v[1] << ',' << v[2] << ',' << v[3] << ','
        << format_fixed(padded_pixel_ratio(v[0], v[1], v[2], v[3]), 4) << '\n';
    return;
  }

  const BnSelection bn = parse_bn_selection(opts.bn);
  LoadedModel m = load_model(opts.checkpoint);
  if (bn == BnSelection::kInstanceSpecific && !m.ckpt.store)
    throw UsageError("checkpoint has no statistics store; run calibrate or use --bn uniform");
  const InstanceBNStore* store = m.ckpt.store ? &*m.ckpt.store : nullptr;
  const fs::path dir = default_out_dir(opts.output_dir, opts.checkpoint);

  if (opts.scale) {
    const std::vector<EvalTarget> targets = eval_targets(m.ckpt.spec, m.ckpt.mode, m.ckpt.ratios);
    const EvalTarget target = m.ckpt.mode == TrainMode::kMultiscale
                                  ? find_target(targets, "s" + std::to_string(m.ckpt.spec.input_size))
                                  : find_target(targets, opts.scale_instance);
    // Validate the size list before touching the data.
    if (opts.scale_sizes.size() < 2) throw UsageError("scale sensitivity needs at least two sizes");
    for (std::size_t i = 0; i < opts.scale_sizes.size(); ++i)
      for (std::size_t j = 0; j < i; ++j)
        if (opts.scale_sizes[i] == opts.scale_sizes[j]) throw UsageError("scale sensitivity sizes must be distinct");
    const Dataset val = load_val(opts.data_dir, m.ckpt.norm, opts.val_subset);
    const double cosine = scale_sensitivity(m.net, target, bn, store, val, opts.scale_sizes);
    ensure_dir(dir);
    CsvFile csv(dir / "scale.csv", "model,mean_cosine");
    const std::string model = fs::path(opts.checkpoint).stem().string() + "_" +
                              std::string(train_mode_name(m.ckpt.mode));
    csv.row(model, format_fixed(cosine, 6));
    out << "model,mean_cosine\n" << model << ',' << format_fixed(cosine, 6) << '\n';
    return;
  }

  const std::vector<EvalTarget> targets = eval_targets(m.ckpt.spec, m.ckpt.mode, m.ckpt.ratios);
  const Dataset val = load_val(opts.data_dir, m.ckpt.norm, opts.val_subset);
  std::vector<std::uint64_t> costs;
  std::vector<std::vector<int>> predictions;
  for (const EvalTarget& t : targets) {
    costs.push_back(target_flops(m.ckpt.spec, t));
    predictions.push_back(predict(m.net, t, bn, store, val.images).predicted);
  }
  const MinCostResult r = min_cost_grouping(costs, predictions, val.labels);
  ensure_dir(dir);
  {
    CsvFile csv(dir / "mincost.csv", "sample_index,min_flops");
    for (std::size_t i = 0; i < r.per_sample.size(); ++i) {
      if (r.per_sample[i])
        csv.row(i, *r.per_sample[i]);
      else
        csv.row(i, "uncorrectable");
    }
  }
  out << "min_flops,count\n";
  for (const auto& [cost, n] : r.histogram) {
    if (cost)
      out << *cost << ',' << n << '\n';
    else
      out << "uncorrectable," << n << '\n';
  }
  out << "wrote " << (dir / "mincost.csv").string() << '\n';
}

void cmd_synth(const SynthOptions& opts, std::ostream& out) {
  if (opts.output_dir.empty()) throw UsageError("an output directory is required");
  ensure_dir(opts.output_dir);
  write_synthetic_cifar10(opts.output_dir, opts.train_per_file, opts.val, opts.seed);
  out << "wrote synthetic batches (" << 5 * opts.train_per_file << " train, " << opts.val << " val) to "
      << opts.output_dir << '\n';
}

}  // namespace sdpoint
