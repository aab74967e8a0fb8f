#include "lrsflow/bench.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>

#include "lrsflow/errors.hpp"

namespace lrsflow::bench {

namespace {

using clock = std::chrono::steady_clock;

double seconds_since(clock::time_point t0) {
  return std::chrono::duration<double>(clock::now() - t0).count();
}

train::TrainConfig cell_config(const train::TrainConfig& base, const std::string& transform,
                               int depth, std::uint64_t seed) {
  train::TrainConfig c = base;
  if (transform == "autoregressive") {
    c.mode = "autoregressive";
    c.transform = "spline";
  } else if (transform == "spline" || transform == "affine") {
    c.mode = "coupling";
    c.transform = transform;
  } else {
    throw ConfigError("unknown transform: " + transform);
  }
  c.transformation_layers = depth;
  c.seed = seed;
  return c;
}

std::string fmt(double v) {
  char buf[40];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return ec == std::errc() ? std::string(buf, p) : std::string("nan");
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

std::vector<ComparisonRow> run_comparison(const ComparisonConfig& cfg,
                                          const data::Dataset& train_set,
                                          const data::Dataset& val_set,
                                          const data::Dataset& test_set) {
  std::vector<ComparisonRow> rows;
  for (const auto& transform : cfg.transforms) {
    for (int depth : cfg.depths) {
      for (std::uint64_t seed : cfg.seeds) {
        ComparisonRow row{transform, depth, seed};
        const auto t0 = clock::now();
        try {
          const auto c = cell_config(cfg.base, transform, depth, seed);
          flow::FlowModel model(train::model_config(c, train_set.dim()));
          const auto report = train::fit(model, train_set, &val_set, c);
          model.set_param_values(report.best_params);
          row.test_nll = train::mean_nll(model, test_set.rows);
        } catch (const NonFiniteLoss& e) {
          row.aborted = true;
          row.note = e.what();
        }
        row.wall_seconds = seconds_since(t0);
        rows.push_back(std::move(row));
      }
    }
  }
  return rows;
}

std::vector<CellSummary> summarize(const std::vector<ComparisonRow>& rows) {
  std::vector<CellSummary> cells;
  auto find = [&](const std::string& t, int d) -> CellSummary& {
    for (auto& c : cells) {
      if (c.transform == t && c.depth == d) return c;
    }
    cells.push_back({t, d});
    return cells.back();
  };
  for (const auto& r : rows) {
    auto& c = find(r.transform, r.depth);
    ++c.runs;
    if (r.aborted) {
      ++c.aborted;
    } else {
      c.mean_nll += r.test_nll;
      c.std_nll += r.test_nll * r.test_nll;
    }
  }
  for (auto& c : cells) {
    const int k = c.runs - c.aborted;
    if (k > 0) {
      c.mean_nll /= k;
      const double var = c.std_nll / k - c.mean_nll * c.mean_nll;
      c.std_nll = std::sqrt(std::max(0.0, var));
    } else {
      c.mean_nll = c.std_nll = std::numeric_limits<double>::quiet_NaN();
    }
  }
  return cells;
}

void write_report_csv(const std::string& path, const std::vector<ComparisonRow>& rows) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write report: " + path);
  out << "transform,depth,seed,test_nll,wall_seconds,status\n";
  for (const auto& r : rows) {
    out << r.transform << ',' << r.depth << ',' << r.seed << ','
        << (r.aborted ? std::string() : fmt(r.test_nll)) << ',' << fmt(r.wall_seconds)
        << ',' << (r.aborted ? "aborted" : "ok") << '\n';
  }
  if (!out) throw DataError("short write on report: " + path);
}

TimingReport time_forward_inverse(const flow::FlowModel& model, std::int64_t batch,
                                  int reps, std::uint64_t seed) {
  if (batch < 1 || reps < 1) throw ConfigError("timing needs batch >= 1 and reps >= 1");
  Rng rng(Rng::derive(seed, 71));
  const Tensor z = model.base().sample(batch, model.dim(), rng);
  const Tensor x = model.forward_batch(z).first;

  std::vector<double> fwd(std::size_t(reps), 0.0), inv(std::size_t(reps), 0.0);
  for (int r = 0; r < reps; ++r) {
    auto t0 = clock::now();
    volatile double sink = model.forward_batch(z).second[0];
    (void)sink;
    fwd[std::size_t(r)] = seconds_since(t0);
    t0 = clock::now();
    sink = model.inverse_batch(x).second[0];
    inv[std::size_t(r)] = seconds_since(t0);
  }

  TimingReport rep;
  rep.forward_seconds = median(fwd);
  rep.inverse_seconds = median(inv);
  rep.ratio = rep.inverse_seconds / rep.forward_seconds;
  rep.batch = batch;
  rep.reps = reps;
  return rep;
}

}  // namespace lrsflow::bench
