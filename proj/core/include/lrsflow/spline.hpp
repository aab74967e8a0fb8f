#pragma once

#include <span>
#include <vector>

#include "lrsflow/errors.hpp"

namespace lrsflow::spline {

// Minimum x-distance between knots before a bin counts as degenerate.
inline constexpr double kWidthEps = 1e-12;

// Shift added to raw derivative parameters before softplus, chosen so a raw
// value of zero maps to a derivative of exactly one (identity slope).
inline constexpr double kDerivShift = 0.5413248546129181;  // log(e - 1)

// Knot description of one scalar monotone linear rational spline with K bins
// over [xs[0], xs[K]]. Each bin is split at an intermediate point controlled
// by lambdas[k] into two homographic pieces that join with matching value
// and derivative. Outside the knot span the map is the identity.
struct KnotSpec {
  std::vector<double> xs;       // K+1, strictly increasing
  std::vector<double> ys;       // K+1, strictly increasing
  std::vector<double> ds;       // K+1, positive derivatives at the knots
  std::vector<double> lambdas;  // K, each in (0, 1)

  int num_bins() const { return int(lambdas.size()); }
};

// Everything needed to evaluate one bin: weights and the intermediate point
// derived from the knots so that values and derivatives match at both ends.
struct BinParams {
  double x_lo, x_hi, y_lo, y_hi;
  double delta;  // x_hi - x_lo
  double lambda;
  double w_lo, w_mid, w_hi;
  double y_mid;
};

struct Result {
  double value;
  double log_abs_det;  // log |dy/dx| (forward) or log |dx/dy| (inverse)
};

// Throws InvalidKnots naming the offending bin or array on any violation:
// non-monotone xs/ys, degenerate widths/heights, ds <= 0, lambda not in (0,1).
void validate_knots(const KnotSpec& k);

// Solves for the low/mid/high weights and the intermediate point of bin k.
// The low weight is a free projective scale and is pinned to w_lo.
BinParams derive_bin_params(const KnotSpec& k, int bin, double w_lo = 1.0);

// One dimension's spline with bins precomputed; evaluation, inversion and
// derivative queries are all closed form.
class ElementSpline {
 public:
  explicit ElementSpline(KnotSpec knots);

  const KnotSpec& knots() const { return knots_; }
  const std::vector<BinParams>& bins() const { return bins_; }

  Result forward(double x) const;
  Result inverse(double y) const;
  double derivative(double x) const;

  // Bin owning x: points on a knot belong to the bin on the right, except
  // the last knot which belongs to the last bin. Returns -1 in the tails.
  int find_bin(double x) const;

  // Half-bin owning y among the 2K pieces split at the intermediate images.
  // Returns -1 in the tails.
  int find_half_bin(double y) const;

 private:
  KnotSpec knots_;
  std::vector<BinParams> bins_;
  std::vector<double> y_breaks_;  // 2K+1 values: y_0, y_mid0, y_1, ...
};

// Partial derivatives of forward(x) with respect to the input and the knot
// quantities of the containing bin. Order of the seven parameter slots:
// xs[k], xs[k+1], ys[k], ys[k+1], ds[k], ds[k+1], lambdas[k].
struct ForwardPartials {
  int bin = -1;  // -1 means tail: value == x, all parameter partials zero
  double dvalue_dx = 1.0;
  double dlogdet_dx = 0.0;
  double dvalue[7] = {0, 0, 0, 0, 0, 0, 0};
  double dlogdet[7] = {0, 0, 0, 0, 0, 0, 0};
};

ForwardPartials forward_partials(const ElementSpline& s, double x);

// Flat gradient buffer over all knot quantities, packed as
// [gxs (K+1) | gys (K+1) | gds (K+1) | glambdas (K)].
inline int knot_grad_size(int num_bins) { return 4 * num_bins + 3; }

// Accumulates d(g_value * value + g_logdet * logdet)/d(knots) into
// knot_grads and returns the gradient with respect to x.
double accumulate_vjp(const ElementSpline& s, double x, double g_value,
                      double g_logdet, std::span<double> knot_grads);

// Maps an unconstrained parameter vector to valid knots on [-B, B] with unit
// boundary derivatives. Raw layout: [K widths | K heights | K-1 interior
// derivatives | K lambdas], 4K-1 values in total.
struct SquashConfig {
  int num_bins = 8;
  double tail_bound = 3.0;
  double min_bin = 0.0;  // absolute floor on widths/heights; 0 = 1e-3 * 2B/K
  double min_deriv = 1e-3;
  double lambda_eps = 0.025;  // lambdas squashed into [eps, 1-eps]
  bool shared_lambda = false;  // one lambda parameter drives every bin

  int raw_size() const { return 4 * num_bins - 1; }
  double min_bin_abs() const {
    return min_bin > 0.0 ? min_bin : 1e-3 * 2.0 * tail_bound / num_bins;
  }
};

KnotSpec squash_raw_params(std::span<const double> raw, const SquashConfig& cfg);

// Chain rule through squash_raw_params: knot_grads is packed as above,
// raw_grad (size 4K-1) is accumulated into, not overwritten.
void squash_gradient(std::span<const double> raw, const SquashConfig& cfg,
                     std::span<const double> knot_grads, std::span<double> raw_grad);

// Numerically stable scalar helpers shared with the rest of the library.
double softplus(double x);
double logistic(double x);

}  // namespace lrsflow::spline
