#include "lrsflow/train.hpp"

#include <cmath>

#include "doctest.h"
#include "helpers.hpp"
#include "lrsflow/data.hpp"
#include "lrsflow/errors.hpp"

using namespace lrsflow;

namespace {

train::TrainConfig tiny_config() {
  train::TrainConfig cfg;
  cfg.learning_rate = 5e-3;
  cfg.batch_size = 64;
  cfg.learning_iterations = 30;
  cfg.transformation_layers = 2;
  cfg.tail_bound = 3.0;
  cfg.num_bins = 4;
  cfg.hidden_features = 8;
  cfg.resnet_blocks = 1;
  cfg.eval_interval = 10;
  cfg.seed = 11;
  return cfg;
}

}  // namespace

TEST_CASE("adam first step moves a scalar by about the learning rate") {
  ad::ParamStore store;
  store.add("w", Tensor::scalar(0.0));
  auto adam = train::make_adam(store);
  CHECK(adam.m.size() == 1);
  CHECK(adam.m[0].same_shape(store.value(0)));

  train::adam_step(adam, store, {Tensor::scalar(2.0)}, 0.1);
  // Bias correction makes m_hat/sqrt(v_hat) = 1 on the first step.
  CHECK(store.value(0)[0] == doctest::Approx(-0.1).epsilon(1e-6));
  CHECK(adam.step == 1);

  // Zero gradient leaves the parameter where the decayed moments put it;
  // from a fresh state it must not move at all.
  ad::ParamStore store2;
  store2.add("w", Tensor::scalar(1.5));
  auto adam2 = train::make_adam(store2);
  train::adam_step(adam2, store2, {Tensor::scalar(0.0)}, 0.1);
  CHECK(store2.value(0)[0] == 1.5);
}

TEST_CASE("adam with constant gradients is deterministic") {
  auto run = [] {
    ad::ParamStore store;
    store.add("w", Tensor({3}, {0.1, -0.4, 2.0}));
    auto adam = train::make_adam(store);
    for (int i = 0; i < 100; ++i) {
      Tensor g({3}, {1.0, -0.5, 0.25});
      train::adam_step(adam, store, {g}, 1e-2);
    }
    return std::vector<double>(store.value(0).span().begin(), store.value(0).span().end());
  };
  const auto a = run();
  const auto b = run();
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("adam rejects mismatched gradient shapes") {
  ad::ParamStore store;
  store.add("w", Tensor({3}));
  auto adam = train::make_adam(store);
  CHECK_THROWS_AS(train::adam_step(adam, store, {Tensor({2})}, 0.1), ShapeMismatch);
}

TEST_CASE("cosine schedule hits its three pinned points") {
  CHECK(train::cosine_lr(0.2, 0, 1000) == doctest::Approx(0.2).epsilon(1e-15));
  CHECK(train::cosine_lr(0.2, 500, 1000) == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(train::cosine_lr(0.2, 1000, 1000) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("gradient clipping rescales exactly to the threshold") {
  std::vector<Tensor> grads;
  grads.push_back(Tensor({2}, {6.0, 8.0}));  // norm 10
  const double norm = train::clip_gradients(grads, 5.0);
  CHECK(norm == doctest::Approx(10.0).epsilon(1e-12));
  double after = 0.0;
  for (double v : grads[0].span()) after += v * v;
  CHECK(std::sqrt(after) == doctest::Approx(5.0).epsilon(1e-12));
  CHECK(grads[0][0] == doctest::Approx(3.0).epsilon(1e-12));

  std::vector<Tensor> small;
  small.push_back(Tensor({2}, {1.0, 2.0}));
  train::clip_gradients(small, 5.0);
  CHECK(small[0][0] == 1.0);  // below the threshold: untouched
  CHECK(small[0][1] == 2.0);

  std::vector<Tensor> zero;
  zero.push_back(Tensor({2}));
  CHECK(train::clip_gradients(zero, 5.0) == 0.0);
  CHECK(zero[0][0] == 0.0);
}

TEST_CASE("config json round trip and required-key errors") {
  nlohmann::json j = {
      {"learning_rate", 1e-3}, {"batch_size", 32},     {"learning_iterations", 100},
      {"transformation_layers", 3}, {"tail_bound", 4.0}, {"num_bins", 16},
      {"seed", 7},
  };
  const auto cfg = train::config_from_json(j);
  CHECK(cfg.learning_rate == 1e-3);
  CHECK(cfg.num_bins == 16);
  CHECK(cfg.transformation_layers == 3);
  CHECK(cfg.seed == 7);
  CHECK(cfg.mode == "coupling");  // defaults survive

  const auto back = train::config_to_json(cfg);
  const auto cfg2 = train::config_from_json(back);
  CHECK(cfg2.batch_size == cfg.batch_size);
  CHECK(cfg2.tail_bound == cfg.tail_bound);

  auto missing = j;
  missing.erase("num_bins");
  CHECK_THROWS_WITH_AS(train::config_from_json(missing),
                       doctest::Contains("num_bins"), ConfigError);

  auto bad = j;
  bad["validation_fraction"] = 0.6;
  CHECK_THROWS_AS(train::config_from_json(bad), ConfigError);
  bad["validation_fraction"] = -0.1;
  CHECK_THROWS_AS(train::config_from_json(bad), ConfigError);
}

TEST_CASE("zero iterations returns the initial model untouched") {
  auto cfg = tiny_config();
  cfg.learning_iterations = 0;
  const auto data = data::gen_gaussian(256, 5);
  flow::FlowModel model(train::model_config(cfg, 2));
  const auto before = model.param_values();
  const auto report = train::fit(model, data, nullptr, cfg);
  CHECK(report.history.empty());
  const auto after = model.param_values();
  REQUIRE(before.size() == after.size());
  for (std::size_t i = 0; i < before.size(); ++i) {
    for (std::int64_t j = 0; j < before[i].size(); ++j) {
      CHECK(before[i][j] == after[i][j]);
    }
  }
  REQUIRE(report.best_params.size() == before.size());
}

TEST_CASE("zero learning rate never changes parameters") {
  auto cfg = tiny_config();
  cfg.learning_rate = 0.0;
  cfg.cosine_annealing = false;
  const auto data = data::gen_gaussian(256, 6);
  flow::FlowModel model(train::model_config(cfg, 2));
  const auto before = model.param_values();
  const auto report = train::fit(model, data, nullptr, cfg);
  const auto after = model.param_values();
  for (std::size_t i = 0; i < before.size(); ++i) {
    for (std::int64_t j = 0; j < before[i].size(); ++j) {
      CHECK(before[i][j] == after[i][j]);  // bitwise
    }
  }
  CHECK(report.history.size() == 30);
}

TEST_CASE("training history is reproducible and iterations are 1-based") {
  const auto data = data::gen_gaussian(512, 7);
  auto run = [&] {
    auto cfg = tiny_config();
    flow::FlowModel model(train::model_config(cfg, 2));
    return train::fit(model, data, nullptr, cfg);
  };
  const auto r1 = run();
  const auto r2 = run();
  REQUIRE(r1.history.size() == r2.history.size());
  REQUIRE(!r1.history.empty());
  CHECK(r1.history.front().iteration == 1);
  CHECK(r1.history.back().iteration == 30);
  for (std::size_t i = 0; i < r1.history.size(); ++i) {
    CHECK(r1.history[i].train_nll == r2.history[i].train_nll);
    CHECK(r1.history[i].lr == r2.history[i].lr);
    CHECK(r1.history[i].val_nll.has_value() == r2.history[i].val_nll.has_value());
    if (r1.history[i].val_nll) CHECK(*r1.history[i].val_nll == *r2.history[i].val_nll);
  }
}

TEST_CASE("validation runs on the configured interval and tracks the best") {
  auto cfg = tiny_config();
  cfg.learning_iterations = 25;
  cfg.eval_interval = 10;
  const auto data = data::gen_gaussian(512, 8);
  flow::FlowModel model(train::model_config(cfg, 2));
  const auto report = train::fit(model, data, nullptr, cfg);
  REQUIRE(report.history.size() == 25);
  double best = std::numeric_limits<double>::infinity();
  for (const auto& row : report.history) {
    const bool scheduled = row.iteration % 10 == 0 || row.iteration == 25;
    CHECK(row.val_nll.has_value() == scheduled);
    if (row.val_nll) best = std::min(best, *row.val_nll);
  }
  CHECK(report.best_val_nll == doctest::Approx(best).epsilon(1e-15));
  CHECK(std::isfinite(report.final_train_nll));
}

TEST_CASE("non-finite loss aborts with the failing iteration") {
  auto cfg = tiny_config();
  Tensor rows({64, 2});
  for (std::int64_t i = 0; i < rows.size(); ++i) {
    rows[i] = std::numeric_limits<double>::quiet_NaN();
  }
  data::Dataset bad;
  bad.rows = rows;
  flow::FlowModel model(train::model_config(cfg, 2));
  try {
    train::fit(model, bad, nullptr, cfg);
    FAIL("expected NonFiniteLoss");
  } catch (const NonFiniteLoss& e) {
    CHECK(e.iteration == 1);
    CHECK(std::string(e.what()).find("iteration 1") != std::string::npos);
  }
}

TEST_CASE("normal data trains to the analytic entropy") {
  // Entropy of N(0, I_2) is 1 + log(2*pi) nats.
  auto cfg = tiny_config();
  cfg.learning_iterations = 800;
  cfg.learning_rate = 2e-3;
  cfg.batch_size = 256;
  cfg.eval_interval = 200;
  const auto data = data::gen_gaussian(4096, 9);
  flow::FlowModel model(train::model_config(cfg, 2));
  const auto report = train::fit(model, data, nullptr, cfg);
  const double entropy = 1.0 + std::log(2.0 * 3.14159265358979323846);
  CHECK(std::fabs(report.final_train_nll - entropy) < 0.08);
}

TEST_CASE("mean_nll averages the per-row negative log density") {
  auto cfg = tiny_config();
  flow::FlowModel model(train::model_config(cfg, 2));
  const auto data = data::gen_gaussian(32, 10);
  const double nll = train::mean_nll(model, data.rows);
  const auto lp = model.log_prob(data.rows);
  double acc = 0.0;
  for (double v : lp) acc -= v;
  CHECK(nll == doctest::Approx(acc / 32.0).epsilon(1e-12));
}
