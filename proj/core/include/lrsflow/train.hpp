#pragma once

#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "lrsflow/flow.hpp"
#include "lrsflow/tensor.hpp"

namespace lrsflow::data {
struct Dataset;
}

namespace lrsflow::train {

// Full training configuration; architecture fields feed flow::ModelConfig.
struct TrainConfig {
  double learning_rate = 5e-4;
  int batch_size = 512;
  long learning_iterations = 10000;
  int transformation_layers = 2;
  double tail_bound = 3.0;
  int num_bins = 8;
  int resnet_blocks = 2;
  int hidden_features = 64;
  double max_gradient_value = 5.0;  // global-norm clip threshold
  double dropout_probability = 0.0;
  double validation_fraction = 0.1;

  std::uint64_t seed = 0;
  std::string mode = "coupling";
  std::string transform = "spline";
  std::string base_distribution = "normal";
  bool use_lu = true;
  bool first_split_spline = true;
  bool shared_lambda = false;
  bool cosine_annealing = true;
  long eval_interval = 250;
  double lambda_eps = 0.025;
  double min_bin_width = 0.0;
  double min_derivative = 1e-3;
};

// Throws ConfigError naming the first missing required key; optional keys
// fall back to the defaults above.
TrainConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const TrainConfig& cfg);

flow::ModelConfig model_config(const TrainConfig& cfg, int dim);

// Adam with bias correction; moments are laid out parallel to the store.
struct AdamState {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  long step = 0;
  std::vector<Tensor> m, v;
};

AdamState make_adam(const ad::ParamStore& params);
void adam_step(AdamState& state, ad::ParamStore& params,
               const std::vector<Tensor>& grads, double lr);

// lr0 * (1 + cos(pi * step / total)) / 2
double cosine_lr(double lr0, long step, long total);

// Scales all gradients by clip/norm when the global L2 norm exceeds clip;
// returns the pre-clip norm.
double clip_gradients(std::vector<Tensor>& grads, double clip);

struct LossRow {
  long iteration;  // 1-based, matches the optimizer step count
  double train_nll;
  std::optional<double> val_nll;
  double lr;
};

struct TrainReport {
  std::vector<LossRow> history;
  double best_val_nll = 0.0;
  long best_iteration = 0;
  std::vector<Tensor> best_params;
  double final_train_nll = 0.0;
  double wall_seconds = 0.0;
};

// Maximum-likelihood fit. Validation runs every eval_interval iterations and
// at the end; the report carries the best-validation parameter snapshot.
// When val is null, a validation_fraction split is carved from train first.
// Throws NonFiniteLoss the moment a batch NLL is NaN or infinite.
TrainReport fit(flow::FlowModel& model, const data::Dataset& train_set,
                const data::Dataset* val_set, const TrainConfig& cfg);

double mean_nll(const flow::FlowModel& model, const Tensor& rows);

}  // namespace lrsflow::train
