#include <CLI11.hpp>

#include <iostream>

#include "sdpoint/commands.hpp"
#include "sdpoint/error.hpp"

namespace {

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const sdpoint::DataError*>(&e)) return 2;
  if (dynamic_cast<const sdpoint::NumericalError*>(&e)) return 3;
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Stochastic downsampling training, calibration, evaluation and cost analysis"};
  app.require_subcommand(1);

  sdpoint::TrainOptions train;
  auto* train_cmd = app.add_subcommand("train", "Train a network from a YAML run config");
  train_cmd->add_option("config", train.config_path, "Run config file")->required();
  train_cmd->add_option("--name", train.checkpoint_name, "Checkpoint file name inside output.dir");

  sdpoint::CalibrateOptions calib;
  auto* calib_cmd = app.add_subcommand("calibrate", "Store per-instance batchnorm statistics in a checkpoint");
  calib_cmd->add_option("checkpoint", calib.checkpoint)->required();
  calib_cmd->add_option("--data", calib.data_dir, "CIFAR-10 binary directory (default $SDPOINT_DATA_DIR)");
  calib_cmd->add_option("-K,--batches", calib.batches, "Number of calibration batches (default: one epoch, at most 100)");
  calib_cmd->add_option("--batch-size", calib.batch_size)->check(CLI::PositiveNumber);
  calib_cmd->add_option("--seed", calib.seed);
  calib_cmd->add_option("-o,--output", calib.output, "Write here instead of overwriting the checkpoint");

  sdpoint::EvalOptions eval;
  auto* eval_cmd = app.add_subcommand("eval", "Top-1 error of one instance or the whole catalog");
  eval_cmd->add_option("checkpoint", eval.checkpoint)->required();
  eval_cmd->add_option("--data", eval.data_dir);
  eval_cmd->add_option("-i,--instance", eval.instance, "Instance id, e.g. p0 or p3_r50");
  eval_cmd->add_flag("--all", eval.all, "Evaluate every instance and write curve.csv");
  eval_cmd->add_option("--bn", eval.bn, "instance or uniform")->check(CLI::IsMember({"instance", "uniform"}));
  eval_cmd->add_option("--out-dir", eval.output_dir);
  eval_cmd->add_option("--val-subset", eval.val_subset, "Use the first N validation images (0 = all)");

  sdpoint::CostOptions cost;
  auto* cost_cmd = app.add_subcommand("cost", "FLOPs and parameter count per instance");
  cost_cmd->add_option("--config", cost.config);
  cost_cmd->add_option("--checkpoint", cost.checkpoint);
  cost_cmd->add_option("--depth", cost.depth);
  cost_cmd->add_option("--widen", cost.widen);
  cost_cmd->add_option("--ratios", cost.ratios)->delimiter(',');
  cost_cmd->add_option("--input-size", cost.input_size)->check(CLI::PositiveNumber);
  cost_cmd->add_option("-o,--output", cost.output);

  sdpoint::AnalyzeOptions analyze;
  std::vector<std::size_t> padded;
  auto* analyze_cmd = app.add_subcommand("analyze", "Minimum-cost grouping, scale sensitivity, padded ratio");
  analyze_cmd->add_option("checkpoint", analyze.checkpoint);
  analyze_cmd->add_option("--data", analyze.data_dir);
  analyze_cmd->add_option("--out-dir", analyze.output_dir);
  analyze_cmd->add_option("--val-subset", analyze.val_subset);
  analyze_cmd->add_option("--bn", analyze.bn)->check(CLI::IsMember({"instance", "uniform"}));
  analyze_cmd->add_flag("--mincost", analyze.mincost, "Write mincost.csv");
  analyze_cmd->add_flag("--scale", analyze.scale, "Write scale.csv");
  analyze_cmd->add_option("--sizes", analyze.scale_sizes, "Pre-crop sizes for --scale")->delimiter(',');
  analyze_cmd->add_option("--scale-instance", analyze.scale_instance);
  auto* padded_opt = analyze_cmd->add_option("--padded-ratio", padded, "h w k pad")->expected(4);

  sdpoint::SynthOptions synth;
  auto* synth_cmd = app.add_subcommand("synth", "Write a small synthetic dataset in CIFAR-10 binary layout");
  synth_cmd->add_option("dir", synth.output_dir)->required();
  synth_cmd->add_option("--train-per-file", synth.train_per_file)->check(CLI::PositiveNumber);
  synth_cmd->add_option("--val", synth.val)->check(CLI::PositiveNumber);
  synth_cmd->add_option("--seed", synth.seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*train_cmd) sdpoint::cmd_train(train, std::cout);
    if (*calib_cmd) sdpoint::cmd_calibrate(calib, std::cout);
    if (*eval_cmd) sdpoint::cmd_eval(eval, std::cout);
    if (*cost_cmd) sdpoint::cmd_cost(cost, std::cout);
    if (*analyze_cmd) {
      if (*padded_opt) analyze.padded_ratio = padded;
      sdpoint::cmd_analyze(analyze, std::cout);
    }
    if (*synth_cmd) sdpoint::cmd_synth(synth, std::cout);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e);
  }
  return 0;
}
