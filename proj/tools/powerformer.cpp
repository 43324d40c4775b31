// Command-line surface for the wind-power forecasting library: train models,
// run checkpoints over datasets, sweep the ablation grid, benchmark the
// attention variants, generate synthetic data, and validate emitted files.

#include <CLI11.hpp>

#include "powerformer/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"powerformer: mid-term wind power forecasting"};
  app.set_version_flag("--version", powerformer::cli::kVersion);
  app.require_subcommand(1);

  using namespace powerformer::cli;

  TrainArgs train_args;
  std::string flags_override;
  std::uint64_t seed_override = 0;
  bool seed_set = false;
  CLI::App* train_cmd = app.add_subcommand("train", "train a model and write artifacts");
  train_cmd->add_option("--config", train_args.config_path, "JSON config file");
  train_cmd->add_option("--data", train_args.data_path, "input CSV")->required();
  train_cmd->add_option("--out", train_args.out_dir, "output directory")->required();
  train_cmd->add_option("--seed", seed_override, "override model seed")
      ->each([&](const std::string&) { seed_set = true; });
  train_cmd->add_option("--flags", flags_override,
                        "ablation triple override, e.g. 101 (transpose,fecam,lstm)");

  PredictArgs predict_args;
  CLI::App* predict_cmd =
      app.add_subcommand("predict", "write truth-vs-prediction rows for the test split");
  predict_cmd->add_option("--checkpoint", predict_args.checkpoint_path, "checkpoint file")
      ->required();
  predict_cmd->add_option("--data", predict_args.data_path, "input CSV")->required();
  predict_cmd->add_option("--out", predict_args.out_path, "predictions CSV")->required();

  PredictArgs eval_args;
  CLI::App* eval_cmd =
      app.add_subcommand("eval", "print test metrics for a checkpoint on a dataset");
  eval_cmd->add_option("--checkpoint", eval_args.checkpoint_path, "checkpoint file")
      ->required();
  eval_cmd->add_option("--data", eval_args.data_path, "input CSV")->required();

  TrainArgs ablate_args;
  std::uint64_t ablate_seed = 0;
  bool ablate_seed_set = false;
  CLI::App* ablate_cmd =
      app.add_subcommand("ablate", "train all five ablation rows and tabulate them");
  ablate_cmd->add_option("--config", ablate_args.config_path, "JSON config file");
  ablate_cmd->add_option("--data", ablate_args.data_path, "input CSV")->required();
  ablate_cmd->add_option("--out", ablate_args.out_dir, "output directory")->required();
  ablate_cmd->add_option("--seed", ablate_seed, "override model seed")
      ->each([&](const std::string&) { ablate_seed_set = true; });

  BenchArgs bench_args;
  CLI::App* bench_cmd = app.add_subcommand(
      "bench", "counter and timing sweep over token/attention variants");
  bench_cmd->add_option("--config", bench_args.config_path, "JSON config file");
  bench_cmd->add_option("--out", bench_args.out_dir, "output directory")->required();
  bench_cmd->add_option("--batch", bench_args.batch, "benchmark batch size");

  SynthArgs synth_args;
  CLI::App* synth_cmd = app.add_subcommand("synth", "generate a synthetic wind CSV");
  synth_cmd->add_option("--out", synth_args.out_path, "output CSV")->required();
  synth_cmd->add_option("--rows", synth_args.rows, "row count");
  synth_cmd->add_option("--channels", synth_args.channels, "channel count incl. power");
  synth_cmd->add_option("--seed", synth_args.seed, "generator seed");

  std::string selfcheck_dir;
  CLI::App* selfcheck_cmd =
      app.add_subcommand("selfcheck", "validate emitted artifacts against their schemas");
  selfcheck_cmd->add_option("--dir", selfcheck_dir, "run directory")->required();

  CLI11_PARSE(app, argc, argv);

  if (*train_cmd) {
    if (seed_set) train_args.seed = seed_override;
    if (!flags_override.empty()) train_args.flags = flags_override;
    return cmd_train(train_args);
  }
  if (*predict_cmd) return cmd_predict(predict_args);
  if (*eval_cmd) return cmd_eval(eval_args);
  if (*ablate_cmd) {
    if (ablate_seed_set) ablate_args.seed = ablate_seed;
    return cmd_ablate(ablate_args);
  }
  if (*bench_cmd) return cmd_bench(bench_args);
  if (*synth_cmd) return cmd_synth(synth_args);
  if (*selfcheck_cmd) return cmd_selfcheck(selfcheck_dir);
  return powerformer::cli::kConfigError;
}
