#pragma once

#include "lrsflow/autodiff.hpp"
#include "lrsflow/spline.hpp"

namespace lrsflow::ad {

struct SplinePair {
  NodePtr value;   // [B, M]
  NodePtr logdet;  // [B, M], log |d value / d input| per element
};

// Elementwise monotone spline transform as graph nodes. params carries the
// raw (unconstrained) spline parameters: rank 1 of size M*R to share one
// parameter set across the batch, or rank 2 [B, M*R] for per-row parameters
// produced by a conditioner. x is [B, M]; R = cfg.raw_size().
//
// Gradients flow to both params and x. The backward pass reuses the splines
// built here, applies the closed-form bin chain, then pulls the knot
// gradients back through the parameter squashing.
SplinePair spline_forward(NodePtr params, NodePtr x, const spline::SquashConfig& cfg);

// Inverse transform; value solves spline(value) = y in closed form. Its
// gradients are composed from the forward partial derivatives evaluated at
// the recovered input, so no second differentiation path exists.
SplinePair spline_inverse(NodePtr params, NodePtr y, const spline::SquashConfig& cfg);

}  // namespace lrsflow::ad
