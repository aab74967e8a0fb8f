#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace lrsflow::cli {

// Exit codes shared by every command: 0 success, 1 configuration or data
// problems, 2 training aborted on a non-finite loss.
inline constexpr int kOk = 0;
inline constexpr int kUsageError = 1;
inline constexpr int kDiverged = 2;

// Data specs: "generator:<name>" draws n fresh rows, "image:<path>" samples
// a PGM density, anything else is read as a CSV file.
struct TrainArgs {
  std::string config_path;        // JSON config; required
  std::string data;               // data spec; required
  std::string out_dir = ".";      // receives checkpoint.bin, loss.csv, run.json
  std::int64_t generator_rows = 50000;
  std::optional<std::uint64_t> seed;  // overrides the config seed
  std::optional<long> iterations;    // overrides the config budget
  bool quiet = false;
};

struct EvalArgs {
  std::string checkpoint;
  std::string data;
  std::string split = "test";  // CSV only: train | val | test
  std::int64_t generator_rows = 10000;
  std::uint64_t seed = 1;  // generator draw seed
};

struct SampleArgs {
  std::string checkpoint;
  std::string out;  // CSV path; empty writes to stdout
  std::int64_t n = 1000;
  std::uint64_t seed = 0;
};

struct GridArgs {
  std::string checkpoint;
  std::string out;  // .pgm renders an image, anything else is CSV
  int resolution = 128;
  std::optional<double> lo, hi;  // square bounds; default tail_bound + 1
};

struct SplinePlotArgs {
  std::string knots_path;  // JSON: {"xs": [...], "ys": [...], "ds": [...]}
  std::vector<double> lambdas;
  std::string out;  // CSV path; empty writes to stdout
  int samples = 257;
};

struct CompareArgs {
  std::string config_path;
  std::string data;
  std::string out = "comparison.csv";
  std::vector<std::string> transforms = {"spline", "affine"};
  std::vector<int> depths = {2, 4};
  std::vector<std::uint64_t> seeds = {0, 1, 2};
  std::int64_t generator_rows = 20000;
  bool quiet = false;
};

struct TimingArgs {
  std::string config_path;  // architecture only; no training happens
  int dim = 2;
  std::int64_t batch = 1024;
  int reps = 11;
};

// Trains a model and writes checkpoint.bin, loss.csv (iteration, train_nll,
// val_nll, lr) and run.json (resolved config, seed, data hash) into out_dir.
int cmd_train(const TrainArgs& a);

// Prints exactly one line: "nll_nats=<v> stderr=<v>".
int cmd_eval(const EvalArgs& a, std::ostream& out);

// CSV of samples in data units with a log_prob column; n=0 is header-only.
int cmd_sample(const SampleArgs& a);

// Density on an m-by-m grid of cell centers, as x,y,density CSV or as a PGM
// whose brightest pixel (255) marks the mode.
int cmd_density_grid(const GridArgs& a);

// Evaluates the spline through fixed knots at each lambda; CSV columns
// lambda,x,y,dydx. Lambdas outside (0,1) are rejected.
int cmd_spline_plot(const SplinePlotArgs& a);

// Trains the full (transform, depth, seed) grid and writes the report CSV;
// per-cell summaries go to `out` stream.
int cmd_compare(const CompareArgs& a, std::ostream& out);

// Prints median forward/inverse wall times and their ratio.
int cmd_timing(const TimingArgs& a, std::ostream& out);

}  // namespace lrsflow::cli
