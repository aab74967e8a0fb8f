#pragma once

#include <array>
#include <string>
#include <vector>

#include "lrsflow/autodiff.hpp"
#include "lrsflow/rng.hpp"

namespace lrsflow::cond {

// Bernoulli keep-mask scaled by 1/(1-p); drawn row-major so consumption of
// the generator is deterministic for a fixed shape.
Tensor dropout_mask(std::int64_t rows, std::int64_t cols, double p, Rng& rng);

struct ResNetConfig {
  int input_dim = 1;
  int hidden = 64;
  int blocks = 2;
  int output_dim = 1;
  double dropout_p = 0.0;
};

// Residual tanh network mapping the conditioning block to transform
// parameters. The output layer starts at zero so fresh flows begin at the
// identity transform regardless of the hidden weights.
class ResNet {
 public:
  ResNet(const ResNetConfig& cfg, ad::ParamStore& store, const std::string& prefix,
         Rng& init_rng);

  ad::NodePtr apply(const std::vector<ad::NodePtr>& leaves, ad::NodePtr x,
                    bool training, Rng* dropout_rng) const;

  const ResNetConfig& config() const { return cfg_; }

 private:
  ResNetConfig cfg_;
  int w_in_, b_in_;
  std::vector<std::array<int, 4>> blocks_;  // w1, b1, w2, b2 per block
  int w_out_, b_out_;
};

struct MadeConfig {
  int dim = 2;
  std::vector<int> hidden = {64, 64};
  int params_per_dim = 1;
  double dropout_p = 0.0;
};

// Masked network whose output block for dimension i depends only on inputs
// strictly before i; block 0 is bias-only. One evaluation yields every
// dimension's parameters, so the generation direction is a single pass while
// inversion needs dim sequential passes.
class Made {
 public:
  Made(const MadeConfig& cfg, ad::ParamStore& store, const std::string& prefix,
       Rng& init_rng);

  // masks_override, when non-null, supplies one dropout mask per hidden
  // layer; sequential inversion reuses one draw across its passes.
  ad::NodePtr apply(const std::vector<ad::NodePtr>& leaves, ad::NodePtr x,
                    bool training, Rng* dropout_rng,
                    const std::vector<Tensor>* masks_override = nullptr) const;

  std::vector<Tensor> draw_masks(std::int64_t batch, Rng& rng) const;

  const MadeConfig& config() const { return cfg_; }
  const Tensor& mask(std::size_t layer) const { return masks_[layer]; }
  std::size_t num_layers() const { return masks_.size(); }

 private:
  MadeConfig cfg_;
  std::vector<Tensor> masks_;  // per layer, shaped like its weight
  std::vector<std::array<int, 2>> layers_;  // w, b per masked layer
};

}  // namespace lrsflow::cond
