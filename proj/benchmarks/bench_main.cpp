#include <benchmark/benchmark.h>

#include <vector>

#include "lrsflow/autodiff.hpp"
#include "lrsflow/flow.hpp"
#include "lrsflow/rng.hpp"
#include "lrsflow/spline.hpp"
#include "lrsflow/train.hpp"

namespace {

using namespace lrsflow;

std::vector<double> random_raw(int num_bins, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> raw(std::size_t(4 * num_bins - 1));
  for (auto& v : raw) v = rng.normal();
  return raw;
}

spline::SquashConfig squash_cfg(int num_bins) {
  spline::SquashConfig cfg;
  cfg.num_bins = num_bins;
  cfg.tail_bound = 3.0;
  return cfg;
}

void BM_SquashParams(benchmark::State& state) {
  const int k = int(state.range(0));
  const auto raw = random_raw(k, 7);
  const auto cfg = squash_cfg(k);
  for (auto _ : state) {
    benchmark::DoNotOptimize(spline::squash_raw_params(raw, cfg));
  }
}
BENCHMARK(BM_SquashParams)->Arg(8)->Arg(64);

void BM_SplineForward(benchmark::State& state) {
  const int k = int(state.range(0));
  const spline::ElementSpline s(spline::squash_raw_params(random_raw(k, 7), squash_cfg(k)));
  Rng rng(11);
  std::vector<double> xs(1024);
  for (auto& x : xs) x = rng.uniform(-3.0, 3.0);
  for (auto _ : state) {
    double acc = 0.0;
    for (double x : xs) acc += s.forward(x).value;
    benchmark::DoNotOptimize(acc);
  }
  state.SetItemsProcessed(state.iterations() * std::int64_t(xs.size()));
}
BENCHMARK(BM_SplineForward)->Arg(8)->Arg(64);

void BM_SplineInverse(benchmark::State& state) {
  const int k = int(state.range(0));
  const spline::ElementSpline s(spline::squash_raw_params(random_raw(k, 7), squash_cfg(k)));
  Rng rng(11);
  std::vector<double> ys(1024);
  for (auto& y : ys) y = s.forward(rng.uniform(-3.0, 3.0)).value;
  for (auto _ : state) {
    double acc = 0.0;
    for (double y : ys) acc += s.inverse(y).value;
    benchmark::DoNotOptimize(acc);
  }
  state.SetItemsProcessed(state.iterations() * std::int64_t(ys.size()));
}
BENCHMARK(BM_SplineInverse)->Arg(8)->Arg(64);

void BM_SplineVjp(benchmark::State& state) {
  const int k = int(state.range(0));
  const spline::ElementSpline s(spline::squash_raw_params(random_raw(k, 7), squash_cfg(k)));
  Rng rng(11);
  std::vector<double> xs(1024);
  for (auto& x : xs) x = rng.uniform(-3.0, 3.0);
  std::vector<double> grads(std::size_t(spline::knot_grad_size(k)));
  for (auto _ : state) {
    double acc = 0.0;
    for (double x : xs) acc += spline::accumulate_vjp(s, x, 1.0, 1.0, grads);
    benchmark::DoNotOptimize(acc);
  }
  state.SetItemsProcessed(state.iterations() * std::int64_t(xs.size()));
}
BENCHMARK(BM_SplineVjp)->Arg(8)->Arg(64);

flow::ModelConfig bench_model(const std::string& mode, const std::string& transform, int dim) {
  flow::ModelConfig cfg;
  cfg.dim = dim;
  cfg.mode = mode;
  cfg.transform = transform;
  cfg.layers = 2;
  cfg.hidden = 32;
  cfg.spline.num_bins = 8;
  return cfg;
}

void BM_CouplingForward(benchmark::State& state) {
  const flow::FlowModel model(bench_model("coupling", "spline", 2));
  Rng rng(3);
  const Tensor z = model.base().sample(512, 2, rng);
  for (auto _ : state) {
    benchmark::DoNotOptimize(model.forward_batch(z).first.span().data());
  }
  state.SetItemsProcessed(state.iterations() * 512);
}
BENCHMARK(BM_CouplingForward);

void BM_CouplingInverse(benchmark::State& state) {
  const flow::FlowModel model(bench_model("coupling", "spline", 2));
  Rng rng(3);
  const Tensor x = model.forward_batch(model.base().sample(512, 2, rng)).first;
  for (auto _ : state) {
    benchmark::DoNotOptimize(model.inverse_batch(x).first.span().data());
  }
  state.SetItemsProcessed(state.iterations() * 512);
}
BENCHMARK(BM_CouplingInverse);

void BM_MadeInverse(benchmark::State& state) {
  const int dim = int(state.range(0));
  const flow::FlowModel model(bench_model("autoregressive", "spline", dim));
  Rng rng(3);
  const Tensor x = model.forward_batch(model.base().sample(256, dim, rng)).first;
  for (auto _ : state) {
    benchmark::DoNotOptimize(model.inverse_batch(x).first.span().data());
  }
  state.SetItemsProcessed(state.iterations() * 256);
}
BENCHMARK(BM_MadeInverse)->Arg(2)->Arg(4)->Arg(8);

void BM_LogProbGradient(benchmark::State& state) {
  flow::FlowModel model(bench_model("coupling", "spline", 2));
  Rng rng(3);
  const Tensor batch = model.base().sample(256, 2, rng);
  for (auto _ : state) {
    const auto leaves = model.params().make_leaves();
    flow::Ctx ctx{leaves, false, nullptr};
    auto x = ad::leaf(batch);
    auto nll = ad::neg(ad::mean_all(model.log_prob_node(x, ctx)));
    ad::backward(nll);
    benchmark::DoNotOptimize(nll->value[0]);
  }
  state.SetItemsProcessed(state.iterations() * 256);
}
BENCHMARK(BM_LogProbGradient);

}  // namespace

BENCHMARK_MAIN();
