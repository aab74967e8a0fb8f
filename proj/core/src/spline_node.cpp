#include "lrsflow/spline_node.hpp"

#include <memory>
#include <vector>

#include "lrsflow/errors.hpp"

namespace lrsflow::ad {

namespace {

struct SplineCache {
  spline::SquashConfig cfg;
  std::int64_t batch = 0, dims = 0, raw = 0;
  bool shared = false;
  // One spline per dimension when parameters are shared, else one per
  // (row, dimension); rebuilt only if the forward pass runs again.
  std::vector<spline::ElementSpline> splines;

  const spline::ElementSpline& at(std::int64_t b, std::int64_t m) const {
    return splines[std::size_t(shared ? m : b * dims + m)];
  }
};

std::shared_ptr<SplineCache> build_cache(const Tensor& params, const Tensor& x,
                                         const spline::SquashConfig& cfg) {
  if (x.rank() != 2) {
    throw ShapeMismatch("spline transform: input must be [batch, dims], got " + x.shape_str());
  }
  auto cache = std::make_shared<SplineCache>();
  cache->cfg = cfg;
  cache->batch = x.shape()[0];
  cache->dims = x.shape()[1];
  cache->raw = cfg.raw_size();
  cache->shared = params.rank() == 1;
  const std::int64_t want = cache->dims * cache->raw;
  if (cache->shared) {
    if (params.size() != want) {
      throw ShapeMismatch("spline transform: shared parameters have " +
                          std::to_string(params.size()) + " values, need " +
                          std::to_string(want));
    }
    cache->splines.reserve(std::size_t(cache->dims));
    for (std::int64_t m = 0; m < cache->dims; ++m) {
      cache->splines.emplace_back(spline::squash_raw_params(
          params.span().subspan(std::size_t(m * cache->raw), std::size_t(cache->raw)), cfg));
    }
  } else {
    if (params.rank() != 2 || params.shape()[0] != cache->batch || params.shape()[1] != want) {
      throw ShapeMismatch("spline transform: parameters " + params.shape_str() +
                          " do not match input " + x.shape_str() + " with raw size " +
                          std::to_string(cache->raw));
    }
    cache->splines.reserve(std::size_t(cache->batch * cache->dims));
    for (std::int64_t b = 0; b < cache->batch; ++b) {
      for (std::int64_t m = 0; m < cache->dims; ++m) {
        cache->splines.emplace_back(spline::squash_raw_params(
            params.span().subspan(std::size_t((b * cache->dims + m) * cache->raw),
                                  std::size_t(cache->raw)),
            cfg));
      }
    }
  }
  return cache;
}

// The value and logdet outputs share one VJP, so they are computed as a
// single [B, 2M] bundle and sliced apart; the bundle's rule sees both
// upstream gradients at once and runs the parameter pullback once.
SplinePair slice_bundle(NodePtr bundle, std::int64_t dims) {
  return {slice_last(bundle, 0, dims), slice_last(bundle, dims, 2 * dims)};
}

}  // namespace

SplinePair spline_forward(NodePtr params, NodePtr x, const spline::SquashConfig& cfg) {
  auto cache = build_cache(params->value, x->value, cfg);
  const std::int64_t B = cache->batch;
  const std::int64_t M = cache->dims;
  Tensor out({B, 2 * M});
  for (std::int64_t b = 0; b < B; ++b) {
    for (std::int64_t m = 0; m < M; ++m) {
      const auto r = cache->at(b, m).forward(x->value[b * M + m]);
      out[b * 2 * M + m] = r.value;
      out[b * 2 * M + M + m] = r.log_abs_det;
    }
  }
  auto bundle = make_node(std::move(out), {params, x}, [cache](Node& self) {
    Node& pp = *self.parents[0];
    Node& px = *self.parents[1];
    const std::int64_t B = cache->batch;
    const std::int64_t M = cache->dims;
    const std::int64_t R = cache->raw;
    const int kg_size = spline::knot_grad_size(cache->cfg.num_bins);
    std::vector<double> kg(std::size_t(kg_size), 0.0);
    if (cache->shared) {
      for (std::int64_t m = 0; m < M; ++m) {
        std::fill(kg.begin(), kg.end(), 0.0);
        const auto& spl = cache->at(0, m);
        for (std::int64_t b = 0; b < B; ++b) {
          px.grad[b * M + m] += spline::accumulate_vjp(
              spl, px.value[b * M + m], self.grad[b * 2 * M + m],
              self.grad[b * 2 * M + M + m], kg);
        }
        spline::squash_gradient(
            pp.value.span().subspan(std::size_t(m * R), std::size_t(R)), cache->cfg, kg,
            pp.grad.span().subspan(std::size_t(m * R), std::size_t(R)));
      }
    } else {
      for (std::int64_t b = 0; b < B; ++b) {
        for (std::int64_t m = 0; m < M; ++m) {
          std::fill(kg.begin(), kg.end(), 0.0);
          const auto& spl = cache->at(b, m);
          px.grad[b * M + m] += spline::accumulate_vjp(
              spl, px.value[b * M + m], self.grad[b * 2 * M + m],
              self.grad[b * 2 * M + M + m], kg);
          const std::size_t off = std::size_t((b * M + m) * R);
          spline::squash_gradient(pp.value.span().subspan(off, std::size_t(R)),
                                  cache->cfg, kg,
                                  pp.grad.span().subspan(off, std::size_t(R)));
        }
      }
    }
  });
  return slice_bundle(std::move(bundle), M);
}

SplinePair spline_inverse(NodePtr params, NodePtr y, const spline::SquashConfig& cfg) {
  auto cache = build_cache(params->value, y->value, cfg);
  const std::int64_t B = cache->batch;
  const std::int64_t M = cache->dims;
  Tensor out({B, 2 * M});
  for (std::int64_t b = 0; b < B; ++b) {
    for (std::int64_t m = 0; m < M; ++m) {
      const auto r = cache->at(b, m).inverse(y->value[b * M + m]);
      out[b * 2 * M + m] = r.value;
      out[b * 2 * M + M + m] = r.log_abs_det;
    }
  }
  auto bundle = make_node(std::move(out), {params, y}, [cache](Node& self) {
    // With x = inverse(y), the implicit function theorem turns the forward
    // partials at x into inverse gradients:
    //   dx/dy = 1/f',   dx/dtheta = -f_theta/f',
    //   d(-logdet)/dy = -l_x/f',  d(-logdet)/dtheta = l_x f_theta/f' - l_theta
    // where f' = df/dx, l = log f'. The recovered x is this node's value.
    Node& pp = *self.parents[0];
    Node& py = *self.parents[1];
    const std::int64_t B = cache->batch;
    const std::int64_t M = cache->dims;
    const std::int64_t R = cache->raw;
    const int kg_size = spline::knot_grad_size(cache->cfg.num_bins);
    const int K = cache->cfg.num_bins;
    std::vector<double> kg(std::size_t(kg_size), 0.0);

    auto element = [&](std::int64_t b, std::int64_t m, std::span<double> kgrads) {
      const double gx_up = self.grad[b * 2 * M + m];
      const double gl_up = self.grad[b * 2 * M + M + m];
      const double x_rec = self.value[b * 2 * M + m];
      const auto& spl = cache->at(b, m);
      const auto p = spline::forward_partials(spl, x_rec);
      if (p.bin < 0) {
        py.grad[b * M + m] += gx_up;  // identity tail
        return;
      }
      const double fp = p.dvalue_dx;
      py.grad[b * M + m] += (gx_up - gl_up * p.dlogdet_dx) / fp;
      const double c = (gl_up * p.dlogdet_dx - gx_up) / fp;
      double g7[7];
      for (int i = 0; i < 7; ++i) g7[i] = c * p.dvalue[i] - gl_up * p.dlogdet[i];
      const int k = p.bin;
      kgrads[std::size_t(k)] += g7[0];
      kgrads[std::size_t(k + 1)] += g7[1];
      kgrads[std::size_t(K + 1 + k)] += g7[2];
      kgrads[std::size_t(K + 1 + k + 1)] += g7[3];
      kgrads[std::size_t(2 * (K + 1) + k)] += g7[4];
      kgrads[std::size_t(2 * (K + 1) + k + 1)] += g7[5];
      kgrads[std::size_t(3 * (K + 1) + k)] += g7[6];
    };

    if (cache->shared) {
      for (std::int64_t m = 0; m < M; ++m) {
        std::fill(kg.begin(), kg.end(), 0.0);
        for (std::int64_t b = 0; b < B; ++b) element(b, m, kg);
        spline::squash_gradient(
            pp.value.span().subspan(std::size_t(m * R), std::size_t(R)), cache->cfg, kg,
            pp.grad.span().subspan(std::size_t(m * R), std::size_t(R)));
      }
    } else {
      for (std::int64_t b = 0; b < B; ++b) {
        for (std::int64_t m = 0; m < M; ++m) {
          std::fill(kg.begin(), kg.end(), 0.0);
          element(b, m, kg);
          const std::size_t off = std::size_t((b * M + m) * R);
          spline::squash_gradient(pp.value.span().subspan(off, std::size_t(R)),
                                  cache->cfg, kg,
                                  pp.grad.span().subspan(off, std::size_t(R)));
        }
      }
    }
  });
  return slice_bundle(std::move(bundle), M);
}

}  // namespace lrsflow::ad
