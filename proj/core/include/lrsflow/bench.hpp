#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "lrsflow/data.hpp"
#include "lrsflow/flow.hpp"
#include "lrsflow/train.hpp"

namespace lrsflow::bench {

// One training run per (transform, depth, seed) cell. All cells share the
// data splits and the budget fields of `base`; only the architecture cell
// coordinates vary. Transform names: "spline" and "affine" select coupling
// layers, "autoregressive" selects masked autoregressive splines.
struct ComparisonConfig {
  std::vector<std::string> transforms = {"spline", "affine"};
  std::vector<int> depths = {2, 4};
  std::vector<std::uint64_t> seeds = {0, 1, 2};
  train::TrainConfig base;
};

struct ComparisonRow {
  std::string transform;
  int depth = 0;
  std::uint64_t seed = 0;
  double test_nll = std::numeric_limits<double>::quiet_NaN();
  double wall_seconds = 0.0;
  bool aborted = false;
  std::string note;  // abort reason; empty for completed runs
};

struct CellSummary {
  std::string transform;
  int depth = 0;
  int runs = 0;
  int aborted = 0;
  double mean_nll = 0.0;  // over completed runs only
  double std_nll = 0.0;
};

// Divergent runs (non-finite loss) come back as flagged rows, never as
// exceptions, so one bad seed cannot sink the whole grid.
std::vector<ComparisonRow> run_comparison(const ComparisonConfig& cfg,
                                          const data::Dataset& train_set,
                                          const data::Dataset& val_set,
                                          const data::Dataset& test_set);

std::vector<CellSummary> summarize(const std::vector<ComparisonRow>& rows);

// Columns: transform, depth, seed, test_nll, wall_seconds, status.
void write_report_csv(const std::string& path, const std::vector<ComparisonRow>& rows);

struct TimingReport {
  double forward_seconds = 0.0;  // median over reps, one batch per pass
  double inverse_seconds = 0.0;
  double ratio = 0.0;            // inverse / forward
  std::int64_t batch = 0;
  int reps = 0;
};

// Times generation (base -> data) against density-direction inversion on the
// same batch. Coupling flows should land near ratio 1; autoregressive
// inversion pays one pass per dimension.
TimingReport time_forward_inverse(const flow::FlowModel& model, std::int64_t batch,
                                  int reps, std::uint64_t seed = 0);

}  // namespace lrsflow::bench
