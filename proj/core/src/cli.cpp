#include "lrsflow/cli.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "lrsflow/bench.hpp"
#include "lrsflow/checkpoint.hpp"
#include "lrsflow/data.hpp"
#include "lrsflow/errors.hpp"
#include "lrsflow/flow.hpp"
#include "lrsflow/spline.hpp"
#include "lrsflow/train.hpp"

namespace lrsflow::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Shortest round-trip decimal form; keeps repeated runs byte-identical.
std::string fmt(double v) {
  char buf[40];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return ec == std::errc() ? std::string(buf, p) : std::string("nan");
}

bool verbose() {
  const char* v = std::getenv("LRSFLOW_LOG");
  return v && *v && std::string_view(v) != "0";
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return j;
}

struct LoadedData {
  data::Dataset train, val, test;
  bool has_val = false, has_test = false;
  std::optional<data::Standardization> stats;
  std::uint64_t hash = 0;
};

bool spec_is_file(const std::string& spec) {
  return !spec.starts_with("generator:") && !spec.starts_with("image:");
}

data::Dataset draw_spec(const std::string& spec, std::int64_t n, std::uint64_t seed) {
  if (spec.starts_with("generator:")) return data::generate(spec.substr(10), n, seed);
  if (spec.starts_with("image:")) return data::image_density(spec.substr(6), n, seed);
  throw DataError("not a synthetic spec: " + spec);
}

LoadedData load_spec(const std::string& spec, const train::TrainConfig& cfg, std::int64_t rows) {
  LoadedData d;
  if (spec_is_file(spec)) {
    data::CsvOptions opts;
    opts.validation_fraction = cfg.validation_fraction;
    opts.test_fraction = 0.1;
    opts.seed = cfg.seed;
    auto splits = data::load_csv(spec, opts);
    d.train = std::move(splits.train);
    d.val = std::move(splits.val);
    d.test = std::move(splits.test);
    d.has_val = d.val.n() > 0;
    d.has_test = d.test.n() > 0;
    d.stats = splits.stats;
  } else {
    d.train = draw_spec(spec, rows, cfg.seed);
  }
  d.hash = data::dataset_hash(d.train);
  if (d.has_val) d.hash = d.hash * 1099511628211ULL ^ data::dataset_hash(d.val);
  if (d.has_test) d.hash = d.hash * 1099511628211ULL ^ data::dataset_hash(d.test);
  return d;
}

std::string hash_hex(std::uint64_t h) {
  std::ostringstream os;
  os << "0x" << std::hex << h;
  return os.str();
}

void write_loss_csv(const std::string& path, const std::vector<train::LossRow>& rows) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out << "iteration,train_nll,val_nll,lr\n";
  for (const auto& r : rows) {
    out << r.iteration << ',' << fmt(r.train_nll) << ','
        << (r.val_nll ? fmt(*r.val_nll) : std::string()) << ',' << fmt(r.lr) << '\n';
  }
  if (!out) throw DataError("short write on " + path);
}

// Density evaluation in checkpoint-native units: standardized space when the
// checkpoint carries input statistics, raw space otherwise.
std::vector<double> log_prob_chunked(const flow::FlowModel& model, const Tensor& rows,
                                     std::int64_t chunk = 4096) {
  const std::int64_t n = rows.shape()[0];
  const std::int64_t d = rows.shape()[1];
  std::vector<double> lp(std::size_t(n), 0.0);
  for (std::int64_t at = 0; at < n; at += chunk) {
    const std::int64_t m = std::min(chunk, n - at);
    Tensor block({m, d});
    std::copy_n(rows.span().data() + at * d, std::size_t(m * d), block.span().data());
    const auto part = model.log_prob(block);
    std::copy(part.begin(), part.end(), lp.begin() + at);
  }
  return lp;
}

}  // namespace

int cmd_train(const TrainArgs& a) {
  try {
    auto cfg = train::config_from_json(read_json_file(a.config_path));
    if (a.seed) cfg.seed = *a.seed;
    if (a.iterations) cfg.learning_iterations = *a.iterations;

    const auto loaded = load_spec(a.data, cfg, a.generator_rows);
    fs::create_directories(a.out_dir);
    const std::string ck_path = (fs::path(a.out_dir) / "checkpoint.bin").string();
    const std::string loss_path = (fs::path(a.out_dir) / "loss.csv").string();
    const std::string manifest_path = (fs::path(a.out_dir) / "run.json").string();

    flow::FlowModel model(train::model_config(cfg, loaded.train.dim()));
    const auto report =
        train::fit(model, loaded.train, loaded.has_val ? &loaded.val : nullptr, cfg);
    model.set_param_values(report.best_params);

    write_loss_csv(loss_path, report.history);
    ck::save(ck_path, ck::snapshot(model, cfg, report.best_val_nll, loaded.stats));

    json manifest;
    manifest["config"] = train::config_to_json(cfg);
    manifest["seed"] = cfg.seed;
    manifest["data"] = {{"spec", a.data},
                        {"hash", hash_hex(loaded.hash)},
                        {"train_rows", loaded.train.n()},
                        {"val_rows", loaded.has_val ? loaded.val.n() : 0},
                        {"test_rows", loaded.has_test ? loaded.test.n() : 0},
                        {"dim", loaded.train.dim()}};
    manifest["outputs"] = {{"checkpoint", "checkpoint.bin"}, {"loss_csv", "loss.csv"}};
    manifest["result"] = {{"best_iteration", report.best_iteration},
                          {"final_train_nll", report.final_train_nll},
                          {"wall_seconds", report.wall_seconds}};
    if (std::isfinite(report.best_val_nll)) {
      manifest["result"]["best_val_nll"] = report.best_val_nll;
    }
    std::ofstream mf(manifest_path);
    mf << manifest.dump(2) << '\n';
    if (!mf) throw DataError("cannot write " + manifest_path);

    if (verbose()) {
      for (const auto& r : report.history) {
        std::cerr << "iter " << r.iteration << " train_nll " << fmt(r.train_nll);
        if (r.val_nll) std::cerr << " val_nll " << fmt(*r.val_nll);
        std::cerr << " lr " << fmt(r.lr) << '\n';
      }
    }
    if (!a.quiet) {
      std::cerr << "trained " << report.history.size() << " logged steps in "
                << fmt(report.wall_seconds) << "s; final train nll "
                << fmt(report.final_train_nll) << '\n';
    }
    return kOk;
  } catch (const NonFiniteLoss& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kDiverged;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsageError;
  }
}

namespace {

Tensor eval_rows(const EvalArgs& a, const ck::Checkpoint& ck) {
  if (!spec_is_file(a.data)) {
    auto d = draw_spec(a.data, a.generator_rows, a.seed);
    if (ck.input_stats) return data::standardize_with(d.rows, *ck.input_stats);
    return std::move(d.rows);
  }
  data::CsvOptions opts;
  opts.validation_fraction = ck.config.validation_fraction;
  opts.test_fraction = 0.1;
  opts.seed = ck.config.seed;
  if (ck.input_stats) {
    // Reapply the training-time statistics rather than refitting them.
    opts.standardize = false;
    opts.drop_constant_columns = false;
  }
  auto splits = data::load_csv(a.data, opts);
  data::Dataset* pick = &splits.test;
  if (a.split == "train") {
    pick = &splits.train;
  } else if (a.split == "val") {
    pick = &splits.val;
  } else if (a.split != "test") {
    throw ConfigError("unknown split: " + a.split);
  }
  if (pick->n() == 0) throw DataError("split '" + a.split + "' is empty");
  if (ck.input_stats) return data::standardize_with(pick->rows, *ck.input_stats);
  return std::move(pick->rows);
}

}  // namespace

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  try {
    const auto ck = ck::load(a.checkpoint);
    const auto model = ck::restore_model(ck);
    const Tensor rows = eval_rows(a, ck);
    const auto lp = log_prob_chunked(model, rows);

    const double n = double(lp.size());
    double mean = 0.0;
    for (double v : lp) mean -= v;
    mean /= n;
    double var = 0.0;
    for (double v : lp) var += (-v - mean) * (-v - mean);
    const double stderr_nll = lp.size() > 1 ? std::sqrt(var / (n - 1.0) / n) : 0.0;

    out << "nll_nats=" << fmt(mean) << " stderr=" << fmt(stderr_nll) << '\n';
    return kOk;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsageError;
  }
}

int cmd_sample(const SampleArgs& a) {
  try {
    if (a.n < 0) throw ConfigError("sample count must be >= 0");
    const auto ck = ck::load(a.checkpoint);
    const auto model = ck::restore_model(ck);
    const int d = model.dim();

    std::ofstream file;
    if (!a.out.empty()) {
      file.open(a.out);
      if (!file) throw DataError("cannot write " + a.out);
    }
    std::ostream& out = a.out.empty() ? std::cout : file;

    for (int j = 0; j < d; ++j) out << 'x' << j << ',';
    out << "log_prob\n";
    if (a.n == 0) return kOk;

    const Tensor x = model.sample(a.n, a.seed);
    auto lp = log_prob_chunked(model, x);
    double log_sigma = 0.0;
    if (ck.input_stats) {
      for (double s : ck.input_stats->stddev) log_sigma += std::log(s);
    }
    for (std::int64_t i = 0; i < a.n; ++i) {
      for (int j = 0; j < d; ++j) {
        double v = x.at(i, j);
        if (ck.input_stats) {
          v = v * ck.input_stats->stddev[std::size_t(j)] + ck.input_stats->mean[std::size_t(j)];
        }
        out << fmt(v) << ',';
      }
      out << fmt(lp[std::size_t(i)] - log_sigma) << '\n';
    }
    if (!out) throw DataError("short write on sample output");
    return kOk;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsageError;
  }
}

int cmd_density_grid(const GridArgs& a) {
  try {
    if (a.resolution < 1) throw ConfigError("grid resolution must be >= 1");
    const auto ck = ck::load(a.checkpoint);
    const auto model = ck::restore_model(ck);
    if (model.dim() != 2) throw ConfigError("density grid needs a 2-d model");

    const double margin = ck.config.tail_bound + 1.0;
    double lo[2], hi[2];
    for (int j = 0; j < 2; ++j) {
      if (ck.input_stats) {
        const double mu = ck.input_stats->mean[std::size_t(j)];
        const double sd = ck.input_stats->stddev[std::size_t(j)];
        lo[j] = a.lo.value_or(mu - margin * sd);
        hi[j] = a.hi.value_or(mu + margin * sd);
      } else {
        lo[j] = a.lo.value_or(-margin);
        hi[j] = a.hi.value_or(margin);
      }
      if (!(hi[j] > lo[j])) throw ConfigError("grid bounds must satisfy lo < hi");
    }

    const int m = a.resolution;
    const double step_x = (hi[0] - lo[0]) / m;
    const double step_y = (hi[1] - lo[1]) / m;
    double sigma_scale = 1.0;
    if (ck.input_stats) {
      sigma_scale = ck.input_stats->stddev[0] * ck.input_stats->stddev[1];
    }

    Tensor pts({std::int64_t(m) * m, 2});
    for (int iy = 0; iy < m; ++iy) {
      for (int ix = 0; ix < m; ++ix) {
        double x = lo[0] + (ix + 0.5) * step_x;
        double y = lo[1] + (iy + 0.5) * step_y;
        if (ck.input_stats) {
          x = (x - ck.input_stats->mean[0]) / ck.input_stats->stddev[0];
          y = (y - ck.input_stats->mean[1]) / ck.input_stats->stddev[1];
        }
        pts.at(std::int64_t(iy) * m + ix, 0) = x;
        pts.at(std::int64_t(iy) * m + ix, 1) = y;
      }
    }
    const auto lp = log_prob_chunked(model, pts);
    std::vector<double> density(lp.size());
    for (std::size_t i = 0; i < lp.size(); ++i) density[i] = std::exp(lp[i]) / sigma_scale;

    const bool pgm = a.out.size() >= 4 && a.out.ends_with(".pgm");
    if (pgm) {
      data::GrayImage img;
      img.width = m;
      img.height = m;
      img.pixels.resize(std::size_t(m) * m);
      const double dmax = *std::max_element(density.begin(), density.end());
      for (int iy = 0; iy < m; ++iy) {
        for (int ix = 0; ix < m; ++ix) {
          // Row 0 is the top of the image, so it takes the largest y.
          const double d = density[std::size_t(m - 1 - iy) * m + ix];
          const double v = dmax > 0.0 ? 255.0 * d / dmax : 0.0;
          img.pixels[std::size_t(iy) * m + ix] = std::uint8_t(std::lround(v));
        }
      }
      data::write_pgm(a.out, img);
      return kOk;
    }

    std::ofstream file;
    if (!a.out.empty()) {
      file.open(a.out);
      if (!file) throw DataError("cannot write " + a.out);
    }
    std::ostream& out = a.out.empty() ? std::cout : file;
    out << "x,y,density\n";
    for (int iy = 0; iy < m; ++iy) {
      for (int ix = 0; ix < m; ++ix) {
        out << fmt(lo[0] + (ix + 0.5) * step_x) << ',' << fmt(lo[1] + (iy + 0.5) * step_y) << ','
            << fmt(density[std::size_t(iy) * m + ix]) << '\n';
      }
    }
    if (!out) throw DataError("short write on grid output");
    return kOk;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsageError;
  }
}

int cmd_spline_plot(const SplinePlotArgs& a) {
  try {
    if (a.lambdas.empty()) throw ConfigError("need at least one lambda");
    for (double l : a.lambdas) {
      if (!(l > 0.0 && l < 1.0)) {
        throw ConfigError("lambda must lie in (0, 1), got " + fmt(l));
      }
    }
    if (a.samples < 2) throw ConfigError("need at least 2 samples");

    const json j = read_json_file(a.knots_path);
    for (const char* key : {"xs", "ys", "ds"}) {
      if (!j.contains(key) || !j[key].is_array()) {
        throw ConfigError(a.knots_path + ": missing array '" + key + "'");
      }
    }
    spline::KnotSpec base;
    base.xs = j["xs"].get<std::vector<double>>();
    base.ys = j["ys"].get<std::vector<double>>();
    base.ds = j["ds"].get<std::vector<double>>();
    if (base.xs.size() < 2) throw InvalidKnots("need at least two knots");
    base.lambdas.assign(base.xs.size() - 1, 0.5);
    spline::validate_knots(base);

    // Knot positions are injected exactly so curves can be compared there.
    std::vector<double> grid(base.xs.begin(), base.xs.end());
    const double x0 = base.xs.front(), x1 = base.xs.back();
    for (int i = 0; i < a.samples; ++i) {
      grid.push_back(x0 + (x1 - x0) * i / double(a.samples - 1));
    }
    std::sort(grid.begin(), grid.end());
    grid.erase(std::unique(grid.begin(), grid.end()), grid.end());

    std::ofstream file;
    if (!a.out.empty()) {
      file.open(a.out);
      if (!file) throw DataError("cannot write " + a.out);
    }
    std::ostream& out = a.out.empty() ? std::cout : file;
    out << "lambda,x,y,dydx\n";
    for (double l : a.lambdas) {
      spline::KnotSpec k = base;
      std::fill(k.lambdas.begin(), k.lambdas.end(), l);
      const spline::ElementSpline s(std::move(k));
      for (double x : grid) {
        out << fmt(l) << ',' << fmt(x) << ',' << fmt(s.forward(x).value) << ','
            << fmt(s.derivative(x)) << '\n';
      }
    }
    if (!out) throw DataError("short write on spline plot output");
    return kOk;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsageError;
  }
}

int cmd_compare(const CompareArgs& a, std::ostream& out) {
  try {
    bench::ComparisonConfig cfg;
    cfg.base = train::config_from_json(read_json_file(a.config_path));
    cfg.transforms = a.transforms;
    cfg.depths = a.depths;
    cfg.seeds = a.seeds;

    data::Dataset train_set, val_set, test_set;
    if (spec_is_file(a.data)) {
      data::CsvOptions opts;
      opts.validation_fraction = cfg.base.validation_fraction;
      opts.test_fraction = 0.1;
      opts.seed = cfg.base.seed;
      auto splits = data::load_csv(a.data, opts);
      train_set = std::move(splits.train);
      val_set = std::move(splits.val);
      test_set = std::move(splits.test);
      if (val_set.n() == 0 || test_set.n() == 0) {
        throw DataError("comparison needs non-empty validation and test splits");
      }
    } else {
      train_set = draw_spec(a.data, a.generator_rows, cfg.base.seed);
      val_set = draw_spec(a.data, std::max<std::int64_t>(1, a.generator_rows / 5),
                          cfg.base.seed + 1);
      test_set = draw_spec(a.data, std::max<std::int64_t>(1, a.generator_rows / 5),
                           cfg.base.seed + 2);
    }

    const auto rows = bench::run_comparison(cfg, train_set, val_set, test_set);
    bench::write_report_csv(a.out, rows);
    for (const auto& c : bench::summarize(rows)) {
      out << "transform=" << c.transform << " depth=" << c.depth << " mean_test_nll="
          << fmt(c.mean_nll) << " std=" << fmt(c.std_nll) << " completed="
          << (c.runs - c.aborted) << '/' << c.runs << '\n';
    }
    return kOk;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsageError;
  }
}

int cmd_timing(const TimingArgs& a, std::ostream& out) {
  try {
    const auto cfg = train::config_from_json(read_json_file(a.config_path));
    flow::FlowModel model(train::model_config(cfg, a.dim));
    const auto rep = bench::time_forward_inverse(model, a.batch, a.reps, cfg.seed);
    out << "forward_seconds=" << fmt(rep.forward_seconds)
        << " inverse_seconds=" << fmt(rep.inverse_seconds) << " ratio=" << fmt(rep.ratio)
        << '\n';
    return kOk;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsageError;
  }
}

}  // namespace lrsflow::cli
