#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "lrsflow/cli.hpp"

int main(int argc, char** argv) {
  namespace cli = lrsflow::cli;
  CLI::App app{"Density estimation with linear rational spline flows"};
  app.require_subcommand(1);
  int rc = cli::kOk;

  cli::TrainArgs train_args;
  auto* train = app.add_subcommand(
      "train", "Fit a flow; writes checkpoint.bin, loss.csv and run.json");
  train->add_option("-c,--config", train_args.config_path, "JSON training config")
      ->required()
      ->check(CLI::ExistingFile);
  train->add_option("-d,--data", train_args.data,
                    "generator:<name>, image:<path>, or a CSV file")
      ->required();
  train->add_option("-o,--out", train_args.out_dir, "Output directory");
  train->add_option("--rows", train_args.generator_rows, "Synthetic sample count");
  train->add_option("--seed", train_args.seed, "Override the config seed");
  train->add_option("--iterations", train_args.iterations, "Override the iteration budget");
  train->add_flag("-q,--quiet", train_args.quiet, "Suppress the summary line");
  train->callback([&] { rc = cli::cmd_train(train_args); });

  cli::EvalArgs eval_args;
  auto* eval = app.add_subcommand("eval", "Report test NLL of a checkpoint on a dataset");
  eval->add_option("--checkpoint", eval_args.checkpoint, "Checkpoint file")
      ->required()
      ->check(CLI::ExistingFile);
  eval->add_option("-d,--data", eval_args.data, "Data spec, as for train")->required();
  eval->add_option("--split", eval_args.split, "CSV split: train, val or test");
  eval->add_option("--rows", eval_args.generator_rows, "Synthetic sample count");
  eval->add_option("--seed", eval_args.seed, "Synthetic draw seed");
  eval->callback([&] { rc = cli::cmd_eval(eval_args, std::cout); });

  cli::SampleArgs sample_args;
  auto* sample = app.add_subcommand("sample", "Draw samples with their log densities");
  sample->add_option("--checkpoint", sample_args.checkpoint, "Checkpoint file")
      ->required()
      ->check(CLI::ExistingFile);
  sample->add_option("-o,--out", sample_args.out, "CSV path (default stdout)");
  sample->add_option("-n", sample_args.n, "Sample count");
  sample->add_option("--seed", sample_args.seed, "Sampling seed");
  sample->callback([&] { rc = cli::cmd_sample(sample_args); });

  cli::GridArgs grid_args;
  auto* grid = app.add_subcommand("density-grid", "Evaluate the density on a square grid");
  grid->add_option("--checkpoint", grid_args.checkpoint, "Checkpoint file")
      ->required()
      ->check(CLI::ExistingFile);
  grid->add_option("-o,--out", grid_args.out, "CSV path, or .pgm for an image");
  grid->add_option("-m,--resolution", grid_args.resolution, "Cells per side");
  grid->add_option("--lo", grid_args.lo, "Lower bound on both axes");
  grid->add_option("--hi", grid_args.hi, "Upper bound on both axes");
  grid->callback([&] { rc = cli::cmd_density_grid(grid_args); });

  cli::SplinePlotArgs plot_args;
  auto* plot = app.add_subcommand("spline-plot",
                                  "Trace spline curves through fixed knots");
  plot->add_option("--knots", plot_args.knots_path, "JSON with xs, ys, ds arrays")
      ->required()
      ->check(CLI::ExistingFile);
  plot->add_option("--lambda", plot_args.lambdas, "Intermediate-point fractions in (0,1)");
  plot->add_option("-o,--out", plot_args.out, "CSV path (default stdout)");
  plot->add_option("--samples", plot_args.samples, "Grid points across the knot span");
  plot->callback([&] {
    if (plot_args.lambdas.empty()) plot_args.lambdas = {0.5};
    rc = cli::cmd_spline_plot(plot_args);
  });

  cli::CompareArgs compare_args;
  auto* compare = app.add_subcommand(
      "compare", "Train a (transform, depth, seed) grid and write a report CSV");
  compare->add_option("-c,--config", compare_args.config_path, "JSON training config")
      ->required()
      ->check(CLI::ExistingFile);
  compare->add_option("-d,--data", compare_args.data, "Data spec, as for train")->required();
  compare->add_option("-o,--out", compare_args.out, "Report CSV path");
  compare->add_option("--transform", compare_args.transforms,
                      "spline, affine or autoregressive");
  compare->add_option("--depth", compare_args.depths, "Layer counts");
  compare->add_option("--seed", compare_args.seeds, "Seeds, one run per seed");
  compare->add_option("--rows", compare_args.generator_rows, "Synthetic sample count");
  compare->callback([&] { rc = cli::cmd_compare(compare_args, std::cout); });

  cli::TimingArgs timing_args;
  auto* timing = app.add_subcommand("timing", "Time forward against inverse passes");
  timing->add_option("-c,--config", timing_args.config_path, "JSON training config")
      ->required()
      ->check(CLI::ExistingFile);
  timing->add_option("--dim", timing_args.dim, "Data dimension");
  timing->add_option("--batch", timing_args.batch, "Batch size per pass");
  timing->add_option("--reps", timing_args.reps, "Timed repetitions");
  timing->callback([&] { rc = cli::cmd_timing(timing_args, std::cout); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : cli::kUsageError;
  }
  return rc;
}
