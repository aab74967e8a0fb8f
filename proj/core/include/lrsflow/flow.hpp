#pragma once

#include <memory>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "lrsflow/autodiff.hpp"
#include "lrsflow/conditioner.hpp"
#include "lrsflow/rng.hpp"
#include "lrsflow/spline.hpp"

namespace lrsflow::flow {

// Per-call context for graph building: parameter leaves aligned with the
// model's store, plus training-time dropout state.
struct Ctx {
  const std::vector<ad::NodePtr>& leaves;
  bool training = false;
  Rng* dropout_rng = nullptr;
};

struct LayerOut {
  ad::NodePtr x;       // transformed batch [B, D]
  ad::NodePtr logdet;  // [B] or scalar: log|det d out / d in| of this call
};

class Layer {
 public:
  virtual ~Layer() = default;
  virtual LayerOut forward(ad::NodePtr z, const Ctx& ctx) const = 0;  // base -> data
  virtual LayerOut inverse(ad::NodePtr x, const Ctx& ctx) const = 0;  // data -> base
  virtual std::string kind() const = 0;
};

class BaseDistribution {
 public:
  virtual ~BaseDistribution() = default;
  virtual ad::NodePtr log_prob_rows(ad::NodePtr z) const = 0;  // [B]
  virtual double log_prob_point(std::span<const double> z) const = 0;
  virtual Tensor sample(std::int64_t n, int dim, Rng& rng) const = 0;
  virtual std::string name() const = 0;
};

std::unique_ptr<BaseDistribution> make_base(const std::string& name);

struct SplineSettings {
  int num_bins = 8;
  double tail_bound = 3.0;
  double lambda_eps = 0.025;
  double min_bin = 0.0;  // 0 = derive from bin count
  double min_deriv = 1e-3;
  bool shared_lambda = false;

  spline::SquashConfig squash() const {
    return {num_bins, tail_bound, min_bin, min_deriv, lambda_eps, shared_lambda};
  }
};

struct ModelConfig {
  int dim = 2;
  std::string mode = "coupling";     // "coupling" | "autoregressive"
  std::string transform = "spline";  // "spline" | "affine" (coupling only)
  int layers = 2;
  bool use_lu = true;               // invertible linear mixing before each layer
  bool first_split_spline = true;   // transform the conditioning block too
  int hidden = 64;
  int blocks = 2;
  std::vector<int> made_hidden;     // empty = {hidden, hidden}
  double dropout_p = 0.0;
  std::string base = "normal";      // "normal" | "uniform"
  SplineSettings spline;
  std::uint64_t seed = 0;
};

ModelConfig model_config_from_json(const nlohmann::json& j);
nlohmann::json model_config_to_json(const ModelConfig& cfg);

// A composition of invertible layers over a base density. Layers are stored
// in generation order; density evaluation walks their inverses.
class FlowModel {
 public:
  explicit FlowModel(const ModelConfig& cfg);
  static FlowModel from_topology(const nlohmann::json& topo);
  nlohmann::json topology() const;

  const ModelConfig& config() const { return cfg_; }
  int dim() const { return cfg_.dim; }
  ad::ParamStore& params() { return params_; }
  const ad::ParamStore& params() const { return params_; }
  const BaseDistribution& base() const { return *base_; }

  ad::NodePtr log_prob_node(ad::NodePtr x, const Ctx& ctx) const;  // [B]

  // Numeric paths (no dropout, no gradients kept by the caller).
  std::vector<double> log_prob(const Tensor& batch) const;
  Tensor sample(std::int64_t n, std::uint64_t seed) const;
  std::pair<Tensor, std::vector<double>> forward_batch(const Tensor& z) const;
  std::pair<Tensor, std::vector<double>> inverse_batch(const Tensor& x) const;

  void set_param_values(const std::vector<Tensor>& values);
  std::vector<Tensor> param_values() const;

 private:
  FlowModel(const ModelConfig& cfg, const std::vector<std::vector<int>>* perms);
  void build(const std::vector<std::vector<int>>* perms);

  ModelConfig cfg_;
  ad::ParamStore params_;
  std::vector<std::unique_ptr<Layer>> layers_;
  std::unique_ptr<BaseDistribution> base_;
  std::vector<std::vector<int>> permutations_;  // one per linear mixing layer
};

}  // namespace lrsflow::flow
