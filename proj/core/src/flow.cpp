#include "lrsflow/flow.hpp"

#include <cmath>
#include <limits>

#include "lrsflow/errors.hpp"
#include "lrsflow/spline_node.hpp"

namespace lrsflow::flow {

namespace {

constexpr double kTwoPi = 6.283185307179586476925287;

template <typename T>
T json_get(const nlohmann::json& j, const char* key) {
  if (!j.contains(key)) throw ConfigError(std::string("missing config key: ") + key);
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad value for config key '") + key + "': " + e.what());
  }
}

class StandardNormal final : public BaseDistribution {
 public:
  ad::NodePtr log_prob_rows(ad::NodePtr z) const override {
    const auto dim = double(z->value.shape()[1]);
    auto s = ad::sum_last(ad::mul(z, z));
    return ad::add_scalar(ad::scale(s, -0.5), -0.5 * dim * std::log(kTwoPi));
  }
  double log_prob_point(std::span<const double> z) const override {
    double s = 0.0;
    for (double v : z) s += v * v;
    return -0.5 * s - 0.5 * double(z.size()) * std::log(kTwoPi);
  }
  Tensor sample(std::int64_t n, int dim, Rng& rng) const override {
    Tensor out({n, dim});
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] = rng.normal();
    return out;
  }
  std::string name() const override { return "normal"; }
};

// Uniform on the unit box: density 1 inside, 0 outside. The indicator has
// zero gradient everywhere it is finite, so the backward rule is a no-op.
class UniformUnit final : public BaseDistribution {
 public:
  ad::NodePtr log_prob_rows(ad::NodePtr z) const override {
    const std::int64_t B = z->value.shape()[0];
    const std::int64_t D = z->value.shape()[1];
    Tensor out({B});
    for (std::int64_t b = 0; b < B; ++b) {
      bool inside = true;
      for (std::int64_t j = 0; j < D; ++j) {
        const double v = z->value[b * D + j];
        if (v < 0.0 || v > 1.0) inside = false;
      }
      out[b] = inside ? 0.0 : -std::numeric_limits<double>::infinity();
    }
    return ad::make_node(std::move(out), {z}, [](ad::Node&) {});
  }
  double log_prob_point(std::span<const double> z) const override {
    for (double v : z) {
      if (v < 0.0 || v > 1.0) return -std::numeric_limits<double>::infinity();
    }
    return 0.0;
  }
  Tensor sample(std::int64_t n, int dim, Rng& rng) const override {
    Tensor out({n, dim});
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] = rng.uniform();
    return out;
  }
  std::string name() const override { return "uniform"; }
};

// Invertible linear mixing in PLU form: P is a fixed permutation, L unit
// lower triangular, U upper triangular with positive diagonal, so the log
// absolute determinant is just the sum of the diagonal log entries.
class LuLinear final : public Layer {
 public:
  LuLinear(int dim, std::vector<int> perm, ad::ParamStore& store, const std::string& prefix)
      : dim_(dim), perm_(std::move(perm)) {
    const int n_off = dim * (dim - 1) / 2;
    lower_ = store.add(prefix + ".lower", Tensor({n_off}));
    upper_ = store.add(prefix + ".upper", Tensor({n_off}));
    log_diag_ = store.add(prefix + ".log_diag", Tensor({dim}));
    for (int i = 0; i < dim; ++i) {
      for (int j = 0; j < i; ++j) pos_lower_.push_back(i * dim + j);
    }
    for (int i = 0; i < dim; ++i) {
      for (int j = i + 1; j < dim; ++j) pos_upper_.push_back(i * dim + j);
    }
    for (int i = 0; i < dim; ++i) pos_diag_.push_back(i * dim + i);
    p_mat_ = Tensor({dim, dim});
    for (int i = 0; i < dim; ++i) p_mat_.at(i, perm_[std::size_t(i)]) = 1.0;
    identity_ = Tensor({dim, dim});
    for (int i = 0; i < dim; ++i) identity_.at(i, i) = 1.0;
  }

  LayerOut forward(ad::NodePtr z, const Ctx& ctx) const override {
    auto w = weight(ctx);
    return {ad::matmul(z, ad::transpose2d(w)), ad::sum_all(ctx.leaves[log_diag_])};
  }

  LayerOut inverse(ad::NodePtr x, const Ctx& ctx) const override {
    auto w_inv = ad::mat_inverse(weight(ctx));
    return {ad::matmul(x, ad::transpose2d(w_inv)),
            ad::neg(ad::sum_all(ctx.leaves[log_diag_]))};
  }

  std::string kind() const override { return "linear_lu"; }
  const std::vector<int>& perm() const { return perm_; }

 private:
  ad::NodePtr weight(const Ctx& ctx) const {
    const std::vector<std::int64_t> sq{dim_, dim_};
    auto l = ad::add(ad::scatter_positions(ctx.leaves[lower_], pos_lower_, sq),
                     ad::leaf(identity_));
    auto u = ad::add(ad::scatter_positions(ctx.leaves[upper_], pos_upper_, sq),
                     ad::scatter_positions(ad::exp(ctx.leaves[log_diag_]), pos_diag_, sq));
    return ad::matmul(ad::leaf(p_mat_), ad::matmul(l, u));
  }

  std::int64_t dim_;
  std::vector<int> perm_;
  int lower_, upper_, log_diag_;
  std::vector<std::int64_t> pos_lower_, pos_upper_, pos_diag_;
  Tensor p_mat_, identity_;
};

// Coupling split: the conditioning block keeps ceil(D/2) dimensions and the
// other block is transformed elementwise. Parity swaps which physical
// dimensions play which role so stacked layers touch everything.
class CouplingBase : public Layer {
 public:
  CouplingBase(int dim, int parity) : dim_(dim), parity_(parity) {
    d_id_ = (dim + 1) / 2;
    d_tr_ = dim - d_id_;
  }

 protected:
  std::pair<ad::NodePtr, ad::NodePtr> split(ad::NodePtr full) const {
    if (parity_ == 0) {
      return {ad::slice_last(full, 0, d_id_), ad::slice_last(full, d_id_, dim_)};
    }
    return {ad::slice_last(full, d_tr_, dim_), ad::slice_last(full, 0, d_tr_)};
  }
  ad::NodePtr join(ad::NodePtr id_part, ad::NodePtr tr_part) const {
    if (parity_ == 0) return ad::concat_last({std::move(id_part), std::move(tr_part)});
    return ad::concat_last({std::move(tr_part), std::move(id_part)});
  }

  std::int64_t dim_;
  int parity_;
  std::int64_t d_id_, d_tr_;
};

class SplineCoupling final : public CouplingBase {
 public:
  SplineCoupling(int dim, int parity, const SplineSettings& settings, int hidden,
                 int blocks, double dropout_p, bool first_split_spline,
                 ad::ParamStore& store, const std::string& prefix, Rng& init_rng)
      : CouplingBase(dim, parity), squash_(settings.squash()) {
    cond::ResNetConfig nc;
    nc.input_dim = int(d_id_);
    nc.hidden = hidden;
    nc.blocks = blocks;
    nc.output_dim = int(d_tr_) * squash_.raw_size();
    nc.dropout_p = dropout_p;
    net_ = std::make_unique<cond::ResNet>(nc, store, prefix + ".net", init_rng);
    if (first_split_spline) {
      phi_ = store.add(prefix + ".phi", Tensor({d_id_ * squash_.raw_size()}));
    }
  }

  LayerOut forward(ad::NodePtr z, const Ctx& ctx) const override {
    auto [z_id, z_tr] = split(std::move(z));
    ad::NodePtr x_id = z_id;
    ad::NodePtr ld_id;
    if (phi_ >= 0) {
      auto pr = ad::spline_forward(ctx.leaves[phi_], z_id, squash_);
      x_id = pr.value;
      ld_id = pr.logdet;
    }
    auto theta = net_->apply(ctx.leaves, x_id, ctx.training, ctx.dropout_rng);
    auto pr_tr = ad::spline_forward(theta, z_tr, squash_);
    auto ld = ad::sum_last(pr_tr.logdet);
    if (ld_id) ld = ad::add(ld, ad::sum_last(ld_id));
    return {join(x_id, pr_tr.value), ld};
  }

  LayerOut inverse(ad::NodePtr x, const Ctx& ctx) const override {
    // The conditioner reads the data-side conditioning block in both
    // directions, so inversion stays a single closed-form pass.
    auto [x_id, x_tr] = split(std::move(x));
    auto theta = net_->apply(ctx.leaves, x_id, ctx.training, ctx.dropout_rng);
    auto pr_tr = ad::spline_inverse(theta, x_tr, squash_);
    ad::NodePtr z_id = x_id;
    auto ld = ad::sum_last(pr_tr.logdet);
    if (phi_ >= 0) {
      auto pr_id = ad::spline_inverse(ctx.leaves[phi_], x_id, squash_);
      z_id = pr_id.value;
      ld = ad::add(ld, ad::sum_last(pr_id.logdet));
    }
    return {join(z_id, pr_tr.value), ld};
  }

  std::string kind() const override { return "spline_coupling"; }

 private:
  spline::SquashConfig squash_;
  std::unique_ptr<cond::ResNet> net_;
  int phi_ = -1;
};

class AffineCoupling final : public CouplingBase {
 public:
  AffineCoupling(int dim, int parity, int hidden, int blocks, double dropout_p,
                 ad::ParamStore& store, const std::string& prefix, Rng& init_rng)
      : CouplingBase(dim, parity) {
    cond::ResNetConfig nc;
    nc.input_dim = int(d_id_);
    nc.hidden = hidden;
    nc.blocks = blocks;
    nc.output_dim = int(d_tr_) * 2;  // log-scale and shift per dimension
    nc.dropout_p = dropout_p;
    net_ = std::make_unique<cond::ResNet>(nc, store, prefix + ".net", init_rng);
  }

  LayerOut forward(ad::NodePtr z, const Ctx& ctx) const override {
    auto [z_id, z_tr] = split(std::move(z));
    auto theta = net_->apply(ctx.leaves, z_id, ctx.training, ctx.dropout_rng);
    auto s = ad::slice_last(theta, 0, d_tr_);
    auto t = ad::slice_last(theta, d_tr_, 2 * d_tr_);
    auto x_tr = ad::add(ad::mul(z_tr, ad::exp(s)), t);
    return {join(z_id, x_tr), ad::sum_last(s)};
  }

  LayerOut inverse(ad::NodePtr x, const Ctx& ctx) const override {
    auto [x_id, x_tr] = split(std::move(x));
    auto theta = net_->apply(ctx.leaves, x_id, ctx.training, ctx.dropout_rng);
    auto s = ad::slice_last(theta, 0, d_tr_);
    auto t = ad::slice_last(theta, d_tr_, 2 * d_tr_);
    auto z_tr = ad::mul(ad::sub(x_tr, t), ad::exp(ad::neg(s)));
    return {join(x_id, z_tr), ad::neg(ad::sum_last(s))};
  }

  std::string kind() const override { return "affine_coupling"; }

 private:
  std::unique_ptr<cond::ResNet> net_;
};

class AutoregressiveSpline final : public Layer {
 public:
  AutoregressiveSpline(int dim, const SplineSettings& settings,
                       std::vector<int> hidden, double dropout_p,
                       ad::ParamStore& store, const std::string& prefix, Rng& init_rng)
      : dim_(dim), squash_(settings.squash()) {
    cond::MadeConfig mc;
    mc.dim = dim;
    mc.hidden = std::move(hidden);
    mc.params_per_dim = squash_.raw_size();
    mc.dropout_p = dropout_p;
    made_ = std::make_unique<cond::Made>(mc, store, prefix + ".made", init_rng);
  }

  // Every dimension's parameters depend only on earlier inputs, so the
  // generation direction is one network pass.
  LayerOut forward(ad::NodePtr z, const Ctx& ctx) const override {
    auto theta = made_->apply(ctx.leaves, z, ctx.training, ctx.dropout_rng);
    auto pr = ad::spline_forward(theta, z, squash_);
    return {pr.value, ad::sum_last(pr.logdet)};
  }

  // Inversion recovers one dimension per pass; dimension i's parameters are
  // valid once outputs 0..i-1 are in place, later inputs are zero-filled
  // and masked out anyway.
  LayerOut inverse(ad::NodePtr x, const Ctx& ctx) const override {
    const std::int64_t B = x->value.shape()[0];
    const int R = squash_.raw_size();
    const bool drop = ctx.training && made_->config().dropout_p > 0.0;
    std::vector<Tensor> masks;
    if (drop) masks = made_->draw_masks(B, *ctx.dropout_rng);

    std::vector<ad::NodePtr> z_cols, ld_cols;
    for (int i = 0; i < dim_; ++i) {
      std::vector<ad::NodePtr> parts = z_cols;
      parts.push_back(ad::leaf(Tensor({B, std::int64_t(dim_ - i)})));
      auto input = parts.size() == 1 ? parts[0] : ad::concat_last(std::move(parts));
      auto theta = made_->apply(ctx.leaves, input, ctx.training, ctx.dropout_rng,
                                drop ? &masks : nullptr);
      auto theta_i = ad::slice_last(theta, std::int64_t(i) * R, std::int64_t(i + 1) * R);
      auto x_i = ad::slice_last(x, i, i + 1);
      auto pr = ad::spline_inverse(theta_i, x_i, squash_);
      z_cols.push_back(pr.value);
      ld_cols.push_back(pr.logdet);
    }
    return {ad::concat_last(std::move(z_cols)),
            ad::sum_last(ad::concat_last(std::move(ld_cols)))};
  }

  std::string kind() const override { return "autoregressive_spline"; }
  const cond::Made& made() const { return *made_; }

 private:
  int dim_;
  spline::SquashConfig squash_;
  std::unique_ptr<cond::Made> made_;
};

}  // namespace

std::unique_ptr<BaseDistribution> make_base(const std::string& name) {
  if (name == "normal") return std::make_unique<StandardNormal>();
  if (name == "uniform") return std::make_unique<UniformUnit>();
  throw ConfigError("unknown base distribution: " + name);
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.dim = json_get<int>(j, "dim");
  c.mode = json_get<std::string>(j, "mode");
  c.transform = json_get<std::string>(j, "transform");
  c.layers = json_get<int>(j, "layers");
  c.use_lu = json_get<bool>(j, "use_lu");
  c.first_split_spline = json_get<bool>(j, "first_split_spline");
  c.hidden = json_get<int>(j, "hidden");
  c.blocks = json_get<int>(j, "blocks");
  c.made_hidden = json_get<std::vector<int>>(j, "made_hidden");
  c.dropout_p = json_get<double>(j, "dropout_p");
  c.base = json_get<std::string>(j, "base");
  c.seed = json_get<std::uint64_t>(j, "seed");
  const auto& s = j.contains("spline") ? j.at("spline") : nlohmann::json::object();
  c.spline.num_bins = json_get<int>(s, "num_bins");
  c.spline.tail_bound = json_get<double>(s, "tail_bound");
  c.spline.lambda_eps = json_get<double>(s, "lambda_eps");
  c.spline.min_bin = json_get<double>(s, "min_bin");
  c.spline.min_deriv = json_get<double>(s, "min_deriv");
  c.spline.shared_lambda = json_get<bool>(s, "shared_lambda");
  return c;
}

nlohmann::json model_config_to_json(const ModelConfig& c) {
  return nlohmann::json{
      {"dim", c.dim},
      {"mode", c.mode},
      {"transform", c.transform},
      {"layers", c.layers},
      {"use_lu", c.use_lu},
      {"first_split_spline", c.first_split_spline},
      {"hidden", c.hidden},
      {"blocks", c.blocks},
      {"made_hidden", c.made_hidden},
      {"dropout_p", c.dropout_p},
      {"base", c.base},
      {"seed", c.seed},
      {"spline",
       {{"num_bins", c.spline.num_bins},
        {"tail_bound", c.spline.tail_bound},
        {"lambda_eps", c.spline.lambda_eps},
        {"min_bin", c.spline.min_bin},
        {"min_deriv", c.spline.min_deriv},
        {"shared_lambda", c.spline.shared_lambda}}},
  };
}

FlowModel::FlowModel(const ModelConfig& cfg) : FlowModel(cfg, nullptr) {}

FlowModel::FlowModel(const ModelConfig& cfg, const std::vector<std::vector<int>>* perms)
    : cfg_(cfg) {
  build(perms);
}

void FlowModel::build(const std::vector<std::vector<int>>* perms) {
  if (cfg_.dim < 2) throw ConfigError("flow: dim must be >= 2, got " + std::to_string(cfg_.dim));
  if (cfg_.layers < 1) throw ConfigError("flow: need at least one transform layer");
  if (cfg_.mode != "coupling" && cfg_.mode != "autoregressive") {
    throw ConfigError("flow: unknown mode: " + cfg_.mode);
  }
  if (cfg_.transform != "spline" && cfg_.transform != "affine") {
    throw ConfigError("flow: unknown transform: " + cfg_.transform);
  }
  if (cfg_.mode == "autoregressive" && cfg_.transform != "spline") {
    throw ConfigError("flow: autoregressive mode supports the spline transform only");
  }
  base_ = make_base(cfg_.base);
  if (cfg_.made_hidden.empty()) cfg_.made_hidden = {cfg_.hidden, cfg_.hidden};

  Rng init_rng(Rng::derive(cfg_.seed, 17));
  Rng perm_rng(Rng::derive(cfg_.seed, 18));
  int lu_count = 0;
  for (int l = 0; l < cfg_.layers; ++l) {
    const std::string pfx = "layer" + std::to_string(l);
    if (cfg_.use_lu) {
      std::vector<int> perm(std::size_t(cfg_.dim));
      if (perms) {
        if (std::size_t(lu_count) >= perms->size() ||
            (*perms)[std::size_t(lu_count)].size() != std::size_t(cfg_.dim)) {
          throw CheckpointError("topology permutations do not match layer count/dim");
        }
        perm = (*perms)[std::size_t(lu_count)];
      } else {
        for (int i = 0; i < cfg_.dim; ++i) perm[std::size_t(i)] = i;
        perm_rng.shuffle(perm);
      }
      permutations_.push_back(perm);
      layers_.push_back(std::make_unique<LuLinear>(cfg_.dim, perm, params_, pfx + ".lu"));
      ++lu_count;
    }
    if (cfg_.mode == "coupling") {
      if (cfg_.transform == "spline") {
        layers_.push_back(std::make_unique<SplineCoupling>(
            cfg_.dim, l % 2, cfg_.spline, cfg_.hidden, cfg_.blocks, cfg_.dropout_p,
            cfg_.first_split_spline, params_, pfx, init_rng));
      } else {
        layers_.push_back(std::make_unique<AffineCoupling>(
            cfg_.dim, l % 2, cfg_.hidden, cfg_.blocks, cfg_.dropout_p, params_, pfx,
            init_rng));
      }
    } else {
      layers_.push_back(std::make_unique<AutoregressiveSpline>(
          cfg_.dim, cfg_.spline, cfg_.made_hidden, cfg_.dropout_p, params_, pfx,
          init_rng));
    }
  }
}

FlowModel FlowModel::from_topology(const nlohmann::json& topo) {
  ModelConfig cfg = model_config_from_json(topo.at("config"));
  std::vector<std::vector<int>> perms;
  if (topo.contains("permutations")) {
    perms = topo.at("permutations").get<std::vector<std::vector<int>>>();
  }
  return FlowModel(cfg, cfg.use_lu ? &perms : nullptr);
}

nlohmann::json FlowModel::topology() const {
  return nlohmann::json{{"config", model_config_to_json(cfg_)},
                        {"permutations", permutations_}};
}

ad::NodePtr FlowModel::log_prob_node(ad::NodePtr x, const Ctx& ctx) const {
  auto cur = std::move(x);
  std::vector<ad::NodePtr> lds;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) {
    auto out = (*it)->inverse(cur, ctx);
    cur = out.x;
    lds.push_back(out.logdet);
  }
  auto lp = base_->log_prob_rows(cur);
  for (auto& ld : lds) lp = ad::add(lp, ld);
  return lp;
}

std::vector<double> FlowModel::log_prob(const Tensor& batch) const {
  auto leaves = params_.make_leaves();
  Ctx ctx{leaves, false, nullptr};
  auto lp = log_prob_node(ad::leaf(batch), ctx);
  return {lp->value.data(), lp->value.data() + lp->value.size()};
}

Tensor FlowModel::sample(std::int64_t n, std::uint64_t seed) const {
  Rng rng(Rng::derive(seed, 71));
  Tensor z = base_->sample(n, cfg_.dim, rng);
  return forward_batch(z).first;
}

namespace {

void accumulate_rows(std::vector<double>& acc, const Tensor& ld) {
  if (ld.rank() == 0) {
    for (auto& v : acc) v += ld[0];
  } else {
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += ld[std::int64_t(i)];
  }
}

}  // namespace

std::pair<Tensor, std::vector<double>> FlowModel::forward_batch(const Tensor& z) const {
  auto leaves = params_.make_leaves();
  Ctx ctx{leaves, false, nullptr};
  auto cur = ad::leaf(z);
  std::vector<double> ld(std::size_t(z.shape()[0]), 0.0);
  for (const auto& layer : layers_) {
    auto out = layer->forward(cur, ctx);
    cur = out.x;
    accumulate_rows(ld, out.logdet->value);
  }
  return {cur->value, std::move(ld)};
}

std::pair<Tensor, std::vector<double>> FlowModel::inverse_batch(const Tensor& x) const {
  auto leaves = params_.make_leaves();
  Ctx ctx{leaves, false, nullptr};
  auto cur = ad::leaf(x);
  std::vector<double> ld(std::size_t(x.shape()[0]), 0.0);
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) {
    auto out = (*it)->inverse(cur, ctx);
    cur = out.x;
    accumulate_rows(ld, out.logdet->value);
  }
  return {cur->value, std::move(ld)};
}

void FlowModel::set_param_values(const std::vector<Tensor>& values) {
  if (values.size() != params_.size()) {
    throw ShapeMismatch("set_param_values: got " + std::to_string(values.size()) +
                        " tensors, model has " + std::to_string(params_.size()));
  }
  for (std::size_t i = 0; i < values.size(); ++i) {
    require_same_shape(params_.value(i), values[i], "set_param_values");
    params_.value(i) = values[i];
  }
}

std::vector<Tensor> FlowModel::param_values() const {
  std::vector<Tensor> out;
  out.reserve(params_.size());
  for (std::size_t i = 0; i < params_.size(); ++i) out.push_back(params_.value(i));
  return out;
}

}  // namespace lrsflow::flow
