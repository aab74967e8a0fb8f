#include "lrsflow/train.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>

#include "lrsflow/data.hpp"
#include "lrsflow/errors.hpp"

namespace lrsflow::train {

namespace {

template <typename T>
T required(const nlohmann::json& j, const char* key) {
  if (!j.contains(key)) throw ConfigError(std::string("missing config key: ") + key);
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad value for config key '") + key + "': " + e.what());
  }
}

template <typename T>
T optional(const nlohmann::json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad value for config key '") + key + "': " + e.what());
  }
}

}  // namespace

TrainConfig config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.learning_rate = required<double>(j, "learning_rate");
  c.batch_size = required<int>(j, "batch_size");
  c.learning_iterations = required<long>(j, "learning_iterations");
  c.transformation_layers = required<int>(j, "transformation_layers");
  c.tail_bound = required<double>(j, "tail_bound");
  c.num_bins = required<int>(j, "num_bins");
  c.seed = required<std::uint64_t>(j, "seed");

  c.resnet_blocks = optional<int>(j, "resnet_blocks", c.resnet_blocks);
  c.hidden_features = optional<int>(j, "hidden_features", c.hidden_features);
  c.max_gradient_value = optional<double>(j, "max_gradient_value", c.max_gradient_value);
  c.dropout_probability = optional<double>(j, "dropout_probability", c.dropout_probability);
  c.validation_fraction = optional<double>(j, "validation_fraction", c.validation_fraction);
  c.mode = optional<std::string>(j, "mode", c.mode);
  c.transform = optional<std::string>(j, "transform", c.transform);
  c.base_distribution = optional<std::string>(j, "base_distribution", c.base_distribution);
  c.use_lu = optional<bool>(j, "use_lu", c.use_lu);
  c.first_split_spline = optional<bool>(j, "first_split_spline", c.first_split_spline);
  c.shared_lambda = optional<bool>(j, "shared_lambda", c.shared_lambda);
  c.cosine_annealing = optional<bool>(j, "cosine_annealing", c.cosine_annealing);
  c.eval_interval = optional<long>(j, "eval_interval", c.eval_interval);
  c.lambda_eps = optional<double>(j, "lambda_eps", c.lambda_eps);
  c.min_bin_width = optional<double>(j, "min_bin_width", c.min_bin_width);
  c.min_derivative = optional<double>(j, "min_derivative", c.min_derivative);

  if (c.batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (c.learning_iterations < 0) throw ConfigError("learning_iterations must be >= 0");
  if (!(c.learning_rate >= 0.0)) throw ConfigError("learning_rate must be >= 0");
  if (c.validation_fraction < 0.0 || c.validation_fraction > 0.5) {
    throw ConfigError("validation_fraction must lie in [0, 0.5]");
  }
  if (c.eval_interval < 1) throw ConfigError("eval_interval must be >= 1");
  return c;
}

nlohmann::json config_to_json(const TrainConfig& c) {
  return nlohmann::json{
      {"learning_rate", c.learning_rate},
      {"batch_size", c.batch_size},
      {"learning_iterations", c.learning_iterations},
      {"transformation_layers", c.transformation_layers},
      {"tail_bound", c.tail_bound},
      {"num_bins", c.num_bins},
      {"resnet_blocks", c.resnet_blocks},
      {"hidden_features", c.hidden_features},
      {"max_gradient_value", c.max_gradient_value},
      {"dropout_probability", c.dropout_probability},
      {"validation_fraction", c.validation_fraction},
      {"seed", c.seed},
      {"mode", c.mode},
      {"transform", c.transform},
      {"base_distribution", c.base_distribution},
      {"use_lu", c.use_lu},
      {"first_split_spline", c.first_split_spline},
      {"shared_lambda", c.shared_lambda},
      {"cosine_annealing", c.cosine_annealing},
      {"eval_interval", c.eval_interval},
      {"lambda_eps", c.lambda_eps},
      {"min_bin_width", c.min_bin_width},
      {"min_derivative", c.min_derivative},
  };
}

flow::ModelConfig model_config(const TrainConfig& cfg, int dim) {
  flow::ModelConfig m;
  m.dim = dim;
  m.mode = cfg.mode;
  m.transform = cfg.transform;
  m.layers = cfg.transformation_layers;
  m.use_lu = cfg.use_lu;
  m.first_split_spline = cfg.first_split_spline;
  m.hidden = cfg.hidden_features;
  m.blocks = cfg.resnet_blocks;
  m.dropout_p = cfg.dropout_probability;
  m.base = cfg.base_distribution;
  m.seed = cfg.seed;
  m.spline.num_bins = cfg.num_bins;
  m.spline.tail_bound = cfg.tail_bound;
  m.spline.lambda_eps = cfg.lambda_eps;
  m.spline.min_bin = cfg.min_bin_width;
  m.spline.min_deriv = cfg.min_derivative;
  m.spline.shared_lambda = cfg.shared_lambda;
  return m;
}

AdamState make_adam(const ad::ParamStore& params) {
  AdamState s;
  s.m.reserve(params.size());
  s.v.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    s.m.emplace_back(params.value(i).shape());
    s.v.emplace_back(params.value(i).shape());
  }
  return s;
}

void adam_step(AdamState& state, ad::ParamStore& params,
               const std::vector<Tensor>& grads, double lr) {
  if (grads.size() != params.size()) {
    throw ShapeMismatch("adam_step: " + std::to_string(grads.size()) +
                        " gradients for " + std::to_string(params.size()) + " parameters");
  }
  // Validate before touching any state; an empty gradient means zero.
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].size() && !grads[i].same_shape(params.value(i))) {
      throw ShapeMismatch("adam_step: gradient " + std::to_string(i) + " has shape " +
                          grads[i].shape_str() + ", parameter has " +
                          params.value(i).shape_str());
    }
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(state.beta1, double(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, double(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params.value(i);
    Tensor& m = state.m[i];
    Tensor& v = state.v[i];
    const Tensor& g = grads[i];
    for (std::int64_t k = 0; k < p.size(); ++k) {
      const double gk = g.size() ? g[k] : 0.0;
      m[k] = state.beta1 * m[k] + (1.0 - state.beta1) * gk;
      v[k] = state.beta2 * v[k] + (1.0 - state.beta2) * gk * gk;
      const double mh = m[k] / bc1;
      const double vh = v[k] / bc2;
      p[k] -= lr * mh / (std::sqrt(vh) + state.eps);
    }
  }
}

double cosine_lr(double lr0, long step, long total) {
  if (total < 1) return lr0;
  const double frac = double(step) / double(total);
  return lr0 * 0.5 * (1.0 + std::cos(3.14159265358979323846 * frac));
}

double clip_gradients(std::vector<Tensor>& grads, double clip) {
  double sq = 0.0;
  for (const auto& g : grads) {
    for (std::int64_t k = 0; k < g.size(); ++k) sq += g[k] * g[k];
  }
  const double norm = std::sqrt(sq);
  if (clip > 0.0 && norm > clip) {
    const double f = clip / norm;
    for (auto& g : grads) {
      for (std::int64_t k = 0; k < g.size(); ++k) g[k] *= f;
    }
  }
  return norm;
}

double mean_nll(const flow::FlowModel& model, const Tensor& rows) {
  const auto lp = model.log_prob(rows);
  double acc = 0.0;
  for (double v : lp) acc -= v;
  return acc / double(lp.size());
}

namespace {

Tensor gather_rows(const Tensor& src, std::span<const std::int64_t> idx) {
  const std::int64_t dim = src.shape()[1];
  Tensor out({std::int64_t(idx.size()), dim});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    for (std::int64_t j = 0; j < dim; ++j) {
      out[std::int64_t(i) * dim + j] = src[idx[i] * dim + j];
    }
  }
  return out;
}

}  // namespace

TrainReport fit(flow::FlowModel& model, const data::Dataset& train_set,
                const data::Dataset* val_set, const TrainConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  if (train_set.dim() != model.dim()) {
    throw ShapeMismatch("fit: data dim " + std::to_string(train_set.dim()) +
                        " vs model dim " + std::to_string(model.dim()));
  }

  // Carve a validation split off the training rows when none is supplied.
  Rng split_rng(Rng::derive(cfg.seed, 2));
  Tensor train_rows = train_set.rows;
  Tensor val_rows;
  if (val_set != nullptr) {
    val_rows = val_set->rows;
  } else if (cfg.validation_fraction > 0.0) {
    std::vector<std::int64_t> idx(std::size_t(train_set.n()));
    std::iota(idx.begin(), idx.end(), 0);
    split_rng.shuffle(idx);
    const auto n_val = std::int64_t(double(train_set.n()) * cfg.validation_fraction);
    if (n_val < 1 || n_val >= train_set.n()) {
      throw ConfigError("validation_fraction " + std::to_string(cfg.validation_fraction) +
                        " leaves an empty split for n=" + std::to_string(train_set.n()));
    }
    val_rows = gather_rows(train_set.rows, std::span(idx).subspan(0, std::size_t(n_val)));
    train_rows = gather_rows(train_set.rows, std::span(idx).subspan(std::size_t(n_val)));
  }
  const bool have_val = val_rows.size() > 0;
  const std::int64_t n_train = train_rows.shape()[0];

  Rng shuffle_rng(Rng::derive(cfg.seed, 3));
  Rng dropout_rng(Rng::derive(cfg.seed, 4));
  std::vector<std::int64_t> order(std::size_t(n_train), 0);
  std::iota(order.begin(), order.end(), 0);
  shuffle_rng.shuffle(order);
  std::size_t cursor = 0;

  AdamState adam = make_adam(model.params());
  TrainReport report;
  report.best_val_nll = std::numeric_limits<double>::infinity();

  std::vector<std::int64_t> batch_idx(std::size_t(cfg.batch_size));
  for (long it = 0; it < cfg.learning_iterations; ++it) {
    for (int b = 0; b < cfg.batch_size; ++b) {
      if (cursor == order.size()) {
        shuffle_rng.shuffle(order);
        cursor = 0;
      }
      batch_idx[std::size_t(b)] = order[cursor++];
    }
    Tensor batch = gather_rows(train_rows, batch_idx);

    auto leaves = model.params().make_leaves();
    flow::Ctx ctx{leaves, true, &dropout_rng};
    // Squashing maps every finite parameter vector to valid knots, so a knot
    // rejection mid-training means NaN or Inf got in; report it as divergence.
    ad::NodePtr loss;
    try {
      auto lp = model.log_prob_node(ad::leaf(std::move(batch)), ctx);
      loss = ad::mean_all(ad::neg(lp));
    } catch (const InvalidKnots&) {
      throw NonFiniteLoss(it + 1);
    }
    const double train_nll = loss->value[0];
    if (!std::isfinite(train_nll)) throw NonFiniteLoss(it + 1);

    ad::backward(loss);
    std::vector<Tensor> grads;
    grads.reserve(leaves.size());
    for (auto& l : leaves) {
      grads.push_back(l->grad.size() ? l->grad : Tensor(l->value.shape()));
    }
    clip_gradients(grads, cfg.max_gradient_value);

    const double lr = cfg.cosine_annealing
                          ? cosine_lr(cfg.learning_rate, it, cfg.learning_iterations)
                          : cfg.learning_rate;
    adam_step(adam, model.params(), grads, lr);

    LossRow row{it + 1, train_nll, std::nullopt, lr};
    const bool eval_now = ((it + 1) % cfg.eval_interval == 0) ||
                          (it + 1 == cfg.learning_iterations);
    if (have_val && eval_now) {
      try {
        row.val_nll = mean_nll(model, val_rows);
      } catch (const InvalidKnots&) {
        throw NonFiniteLoss(it + 1);
      }
      if (!std::isfinite(*row.val_nll)) throw NonFiniteLoss(it + 1);
      if (*row.val_nll < report.best_val_nll) {
        report.best_val_nll = *row.val_nll;
        report.best_iteration = it + 1;
        report.best_params = model.param_values();
      }
    }
    report.history.push_back(std::move(row));
  }

  report.final_train_nll = report.history.empty() ? 0.0 : report.history.back().train_nll;
  if (!have_val || report.best_params.empty()) {
    report.best_params = model.param_values();
    report.best_iteration = cfg.learning_iterations;
    if (!have_val) report.best_val_nll = std::numeric_limits<double>::quiet_NaN();
  }
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

}  // namespace lrsflow::train
