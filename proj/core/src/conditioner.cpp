#include "lrsflow/conditioner.hpp"

#include <cmath>

#include "lrsflow/errors.hpp"

namespace lrsflow::cond {

Tensor dropout_mask(std::int64_t rows, std::int64_t cols, double p, Rng& rng) {
  Tensor m({rows, cols});
  const double keep_scale = 1.0 / (1.0 - p);
  for (std::int64_t i = 0; i < m.size(); ++i) {
    m[i] = rng.uniform() >= p ? keep_scale : 0.0;
  }
  return m;
}

namespace {

Tensor uniform_init(std::int64_t rows, std::int64_t cols, Rng& rng) {
  Tensor w({rows, cols});
  const double bound = 1.0 / std::sqrt(double(rows));  // rows = fan-in for x*W
  for (std::int64_t i = 0; i < w.size(); ++i) w[i] = rng.uniform(-bound, bound);
  return w;
}

}  // namespace

ResNet::ResNet(const ResNetConfig& cfg, ad::ParamStore& store,
               const std::string& prefix, Rng& init_rng)
    : cfg_(cfg) {
  if (cfg.input_dim < 1 || cfg.hidden < 1 || cfg.blocks < 0 || cfg.output_dim < 1) {
    throw ConfigError("resnet: bad sizes in=" + std::to_string(cfg.input_dim) +
                      " hidden=" + std::to_string(cfg.hidden) +
                      " blocks=" + std::to_string(cfg.blocks) +
                      " out=" + std::to_string(cfg.output_dim));
  }
  if (!(cfg.dropout_p >= 0.0 && cfg.dropout_p < 1.0)) {
    throw ConfigError("resnet: dropout_p " + std::to_string(cfg.dropout_p) +
                      " outside [0,1)");
  }
  w_in_ = store.add(prefix + ".w_in", uniform_init(cfg.input_dim, cfg.hidden, init_rng));
  b_in_ = store.add(prefix + ".b_in", Tensor({cfg.hidden}));
  for (int k = 0; k < cfg.blocks; ++k) {
    const std::string bp = prefix + ".block" + std::to_string(k);
    blocks_.push_back({
        store.add(bp + ".w1", uniform_init(cfg.hidden, cfg.hidden, init_rng)),
        store.add(bp + ".b1", Tensor({cfg.hidden})),
        store.add(bp + ".w2", uniform_init(cfg.hidden, cfg.hidden, init_rng)),
        store.add(bp + ".b2", Tensor({cfg.hidden})),
    });
  }
  w_out_ = store.add(prefix + ".w_out", Tensor({cfg.hidden, cfg.output_dim}));
  b_out_ = store.add(prefix + ".b_out", Tensor({cfg.output_dim}));
}

ad::NodePtr ResNet::apply(const std::vector<ad::NodePtr>& leaves, ad::NodePtr x,
                          bool training, Rng* dropout_rng) const {
  auto h = ad::tanh(ad::affine(x, leaves[w_in_], leaves[b_in_]));
  const bool drop = training && cfg_.dropout_p > 0.0;
  for (const auto& blk : blocks_) {
    auto t = ad::tanh(ad::affine(h, leaves[blk[0]], leaves[blk[1]]));
    t = ad::tanh(ad::affine(t, leaves[blk[2]], leaves[blk[3]]));
    h = ad::add(h, t);
    if (drop) {
      h = ad::mul(h, ad::leaf(dropout_mask(h->value.shape()[0], cfg_.hidden,
                                           cfg_.dropout_p, *dropout_rng)));
    }
  }
  return ad::affine(h, leaves[w_out_], leaves[b_out_]);
}

Made::Made(const MadeConfig& cfg, ad::ParamStore& store, const std::string& prefix,
           Rng& init_rng)
    : cfg_(cfg) {
  if (cfg.dim < 2) throw ConfigError("made: dim must be >= 2, got " + std::to_string(cfg.dim));
  if (cfg.hidden.empty()) throw ConfigError("made: need at least one hidden layer");
  if (cfg.params_per_dim < 1) throw ConfigError("made: params_per_dim must be >= 1");
  const int D = cfg.dim;

  // Degrees: input i has degree i+1; hidden units cycle through 1..D-1;
  // output block for dimension i has degree i+1 and may only read units of
  // strictly smaller degree, which leaves block 0 fed by its bias alone.
  std::vector<int> prev_deg(std::size_t(D), 0);
  for (int i = 0; i < D; ++i) prev_deg[std::size_t(i)] = i + 1;
  int prev_width = D;

  for (std::size_t l = 0; l < cfg.hidden.size(); ++l) {
    const int width = cfg.hidden[l];
    if (width < 1) throw ConfigError("made: hidden width must be >= 1");
    std::vector<int> deg(std::size_t(width), 0);
    for (int j = 0; j < width; ++j) deg[std::size_t(j)] = 1 + (j % (D - 1));
    Tensor mask({prev_width, width});
    for (int i = 0; i < prev_width; ++i) {
      for (int j = 0; j < width; ++j) {
        mask.at(i, j) = deg[std::size_t(j)] >= prev_deg[std::size_t(i)] ? 1.0 : 0.0;
      }
    }
    masks_.push_back(std::move(mask));
    layers_.push_back({
        store.add(prefix + ".w" + std::to_string(l), uniform_init(prev_width, width, init_rng)),
        store.add(prefix + ".b" + std::to_string(l), Tensor({width})),
    });
    prev_deg = std::move(deg);
    prev_width = width;
  }

  const int out_width = D * cfg.params_per_dim;
  Tensor out_mask({prev_width, out_width});
  for (int i = 0; i < prev_width; ++i) {
    for (int o = 0; o < D; ++o) {
      const bool ok = (o + 1) > prev_deg[std::size_t(i)];
      for (int r = 0; r < cfg.params_per_dim; ++r) {
        out_mask.at(i, o * cfg.params_per_dim + r) = ok ? 1.0 : 0.0;
      }
    }
  }
  masks_.push_back(std::move(out_mask));
  layers_.push_back({
      store.add(prefix + ".w_out", Tensor({prev_width, out_width})),
      store.add(prefix + ".b_out", Tensor({out_width})),
  });
}

std::vector<Tensor> Made::draw_masks(std::int64_t batch, Rng& rng) const {
  std::vector<Tensor> out;
  for (std::size_t l = 0; l + 1 < layers_.size(); ++l) {
    out.push_back(dropout_mask(batch, masks_[l].shape()[1], cfg_.dropout_p, rng));
  }
  return out;
}

ad::NodePtr Made::apply(const std::vector<ad::NodePtr>& leaves, ad::NodePtr x,
                        bool training, Rng* dropout_rng,
                        const std::vector<Tensor>* masks_override) const {
  const bool drop = training && cfg_.dropout_p > 0.0;
  std::vector<Tensor> local;
  if (drop && masks_override == nullptr) {
    local = draw_masks(x->value.shape()[0], *dropout_rng);
    masks_override = &local;
  }
  auto h = std::move(x);
  for (std::size_t l = 0; l + 1 < layers_.size(); ++l) {
    h = ad::tanh(ad::masked_affine(h, leaves[layers_[l][0]], leaves[layers_[l][1]],
                                   masks_[l]));
    if (drop) h = ad::mul(h, ad::leaf((*masks_override)[l]));
  }
  const auto& out = layers_.back();
  return ad::masked_affine(h, leaves[out[0]], leaves[out[1]], masks_.back());
}

}  // namespace lrsflow::cond
