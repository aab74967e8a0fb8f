#include "lrsflow/spline.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace lrsflow::spline {

double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }

double logistic(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

void validate_knots(const KnotSpec& k) {
  const std::size_t n = k.xs.size();
  if (n < 2) throw InvalidKnots("need at least 2 knots, got " + std::to_string(n));
  if (k.ys.size() != n || k.ds.size() != n || k.lambdas.size() + 1 != n) {
    throw InvalidKnots("inconsistent array sizes: xs=" + std::to_string(n) +
                       " ys=" + std::to_string(k.ys.size()) +
                       " ds=" + std::to_string(k.ds.size()) +
                       " lambdas=" + std::to_string(k.lambdas.size()));
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!(k.ds[i] > 0.0)) {
      throw InvalidKnots("knot " + std::to_string(i) + ": derivative " +
                         std::to_string(k.ds[i]) + " must be positive");
    }
  }
  for (std::size_t i = 0; i + 1 < n; ++i) {
    if (!(k.xs[i + 1] - k.xs[i] >= kWidthEps)) {
      throw InvalidKnots("bin " + std::to_string(i) + ": width " +
                         std::to_string(k.xs[i + 1] - k.xs[i]) + " is degenerate");
    }
    if (!(k.ys[i + 1] - k.ys[i] >= kWidthEps)) {
      throw InvalidKnots("bin " + std::to_string(i) + ": height " +
                         std::to_string(k.ys[i + 1] - k.ys[i]) + " is degenerate");
    }
    if (!(k.lambdas[i] > 0.0 && k.lambdas[i] < 1.0)) {
      throw InvalidKnots("bin " + std::to_string(i) + ": lambda " +
                         std::to_string(k.lambdas[i]) + " outside (0,1)");
    }
  }
}

BinParams derive_bin_params(const KnotSpec& k, int bin, double w_lo) {
  BinParams b;
  b.x_lo = k.xs[bin];
  b.x_hi = k.xs[bin + 1];
  b.y_lo = k.ys[bin];
  b.y_hi = k.ys[bin + 1];
  b.delta = b.x_hi - b.x_lo;
  b.lambda = k.lambdas[bin];
  const double d_lo = k.ds[bin];
  const double d_hi = k.ds[bin + 1];
  // The projective scale of the weights is free; pin the low one. Matching
  // endpoint derivatives then fixes the high weight, matching values fixes
  // the intermediate image, and matching the chord slope fixes its weight.
  b.w_lo = w_lo;
  b.w_hi = w_lo * std::sqrt(d_lo / d_hi);
  const double a = (1.0 - b.lambda) * b.w_lo;
  const double c = b.lambda * b.w_hi;
  b.y_mid = (a * b.y_lo + c * b.y_hi) / (a + c);
  b.w_mid = (b.lambda * b.w_lo * d_lo + (1.0 - b.lambda) * b.w_hi * d_hi) *
            b.delta / (b.y_hi - b.y_lo);
  return b;
}

ElementSpline::ElementSpline(KnotSpec knots) : knots_(std::move(knots)) {
  validate_knots(knots_);
  const int K = knots_.num_bins();
  bins_.reserve(std::size_t(K));
  y_breaks_.reserve(std::size_t(2 * K + 1));
  for (int k = 0; k < K; ++k) {
    bins_.push_back(derive_bin_params(knots_, k));
    y_breaks_.push_back(bins_.back().y_lo);
    y_breaks_.push_back(bins_.back().y_mid);
  }
  y_breaks_.push_back(knots_.ys.back());
}

int ElementSpline::find_bin(double x) const {
  if (x < knots_.xs.front() || x > knots_.xs.back()) return -1;
  // First knot strictly greater than x, minus one: a point sitting on a
  // knot lands in the bin to its right; the last knot keeps the last bin.
  auto it = std::upper_bound(knots_.xs.begin(), knots_.xs.end(), x);
  auto idx = std::int64_t(it - knots_.xs.begin()) - 1;
  return int(std::clamp<std::int64_t>(idx, 0, std::int64_t(bins_.size()) - 1));
}

int ElementSpline::find_half_bin(double y) const {
  if (y < y_breaks_.front() || y > y_breaks_.back()) return -1;
  auto it = std::upper_bound(y_breaks_.begin(), y_breaks_.end(), y);
  auto idx = std::int64_t(it - y_breaks_.begin()) - 1;
  return int(std::clamp<std::int64_t>(idx, 0, std::int64_t(y_breaks_.size()) - 2));
}

Result ElementSpline::forward(double x) const {
  const int k = find_bin(x);
  if (k < 0) return {x, 0.0};
  const BinParams& b = bins_[std::size_t(k)];
  const double phi = (x - b.x_lo) / b.delta;
  if (phi <= b.lambda) {
    const double u = b.lambda - phi;
    const double num = b.w_lo * b.y_lo * u + b.w_mid * b.y_mid * phi;
    const double den = b.w_lo * u + b.w_mid * phi;
    const double ld = std::log(b.lambda * b.w_lo * b.w_mid * (b.y_mid - b.y_lo)) -
                      2.0 * std::log(den) - std::log(b.delta);
    return {num / den, ld};
  }
  const double u = 1.0 - phi;
  const double r = phi - b.lambda;
  const double num = b.w_mid * b.y_mid * u + b.w_hi * b.y_hi * r;
  const double den = b.w_mid * u + b.w_hi * r;
  const double ld = std::log((1.0 - b.lambda) * b.w_mid * b.w_hi * (b.y_hi - b.y_mid)) -
                    2.0 * std::log(den) - std::log(b.delta);
  return {num / den, ld};
}

double ElementSpline::derivative(double x) const {
  const int k = find_bin(x);
  if (k < 0) return 1.0;
  const BinParams& b = bins_[std::size_t(k)];
  const double phi = (x - b.x_lo) / b.delta;
  if (phi <= b.lambda) {
    const double den = b.w_lo * (b.lambda - phi) + b.w_mid * phi;
    return b.lambda * b.w_lo * b.w_mid * (b.y_mid - b.y_lo) / (den * den) / b.delta;
  }
  const double den = b.w_mid * (1.0 - phi) + b.w_hi * (phi - b.lambda);
  return (1.0 - b.lambda) * b.w_mid * b.w_hi * (b.y_hi - b.y_mid) / (den * den) / b.delta;
}

Result ElementSpline::inverse(double y) const {
  const int h = find_half_bin(y);
  if (h < 0) return {y, 0.0};
  const BinParams& b = bins_[std::size_t(h / 2)];
  double phi, ld;
  if (h % 2 == 0) {
    // Lower piece: y in [y_lo, y_mid]; numerator and denominator are both
    // non-positive there, so the ratio stays in [0, lambda].
    const double den = b.w_lo * (b.y_lo - y) + b.w_mid * (y - b.y_mid);
    phi = b.lambda * b.w_lo * (b.y_lo - y) / den;
    ld = std::log(b.lambda * b.w_lo * b.w_mid * (b.y_mid - b.y_lo)) -
         2.0 * std::log(std::fabs(den)) + std::log(b.delta);
  } else {
    const double den = b.w_hi * (b.y_hi - y) + b.w_mid * (y - b.y_mid);
    phi = (b.lambda * b.w_hi * (b.y_hi - y) + b.w_mid * (y - b.y_mid)) / den;
    ld = std::log((1.0 - b.lambda) * b.w_mid * b.w_hi * (b.y_hi - b.y_mid)) -
         2.0 * std::log(den) + std::log(b.delta);
  }
  return {b.x_lo + b.delta * phi, ld};
}

namespace {

// Reverse-mode chain through one bin evaluation. Seeds (gv, gl) multiply the
// value and log-determinant outputs; parameter gradients land in out7 in the
// order xs[k], xs[k+1], ys[k], ys[k+1], ds[k], ds[k+1], lambdas[k]. Returns
// the gradient with respect to x. The low weight is pinned, so it has no slot.
double bin_vjp(const BinParams& b, double d_lo, double d_hi, double x,
               double gv, double gl, double out7[7]) {
  const double lam = b.lambda;
  const double w_a = b.w_lo;
  const double w_c = b.w_hi;
  const double w_m = b.w_mid;
  const double y_m = b.y_mid;
  const double delta = b.delta;
  const double h = b.y_hi - b.y_lo;
  const double phi = (x - b.x_lo) / delta;

  double g_wm = 0, g_ym = 0, g_wc = 0, g_lam = 0, g_phi = 0, g_delta = 0;
  double g_ylo = 0, g_yhi = 0, g_dlo = 0, g_dhi = 0;

  if (phi <= lam) {
    const double u = lam - phi;
    const double num = w_a * b.y_lo * u + w_m * y_m * phi;
    const double den = w_a * u + w_m * phi;
    const double g_n = gv / den;
    const double g_q = -gv * num / (den * den) - 2.0 * gl / den;
    g_ylo += g_n * w_a * u;
    double g_u = g_n * w_a * b.y_lo + g_q * w_a;
    g_wm += g_n * y_m * phi + g_q * phi + gl / w_m;
    g_ym += g_n * w_m * phi + gl / (y_m - b.y_lo);
    g_ylo -= gl / (y_m - b.y_lo);
    g_phi += g_n * w_m * y_m + g_q * w_m;
    g_lam += gl / lam + g_u;
    g_phi -= g_u;
  } else {
    const double u = 1.0 - phi;
    const double r = phi - lam;
    const double num = w_m * y_m * u + w_c * b.y_hi * r;
    const double den = w_m * u + w_c * r;
    const double g_n = gv / den;
    const double g_q = -gv * num / (den * den) - 2.0 * gl / den;
    g_wm += g_n * y_m * u + g_q * u + gl / w_m;
    g_ym += g_n * w_m * u - gl / (b.y_hi - y_m);
    g_yhi += g_n * w_c * r + gl / (b.y_hi - y_m);
    g_wc += g_n * b.y_hi * r + g_q * r + gl / w_c;
    const double g_u = g_n * w_m * y_m + g_q * w_m;
    const double g_r = g_n * w_c * b.y_hi + g_q * w_c;
    g_phi += g_r - g_u;
    g_lam += -g_r - gl / (1.0 - lam);
  }
  g_delta -= gl / delta;

  // w_mid = (lam*w_a*d_lo + (1-lam)*w_c*d_hi) * delta / h
  const double c1 = lam * w_a * d_lo + (1.0 - lam) * w_c * d_hi;
  const double g_c1 = g_wm * delta / h;
  g_delta += g_wm * c1 / h;
  const double g_h = -g_wm * c1 * delta / (h * h);
  g_lam += g_c1 * (w_a * d_lo - w_c * d_hi);
  g_dlo += g_c1 * lam * w_a;
  g_wc += g_c1 * (1.0 - lam) * d_hi;
  g_dhi += g_c1 * (1.0 - lam) * w_c;

  // y_mid = (A*y_lo + C*y_hi) / (A + C), A = (1-lam)*w_a, C = lam*w_c
  const double A = (1.0 - lam) * w_a;
  const double C = lam * w_c;
  const double S = A + C;
  const double g_A = g_ym * (b.y_lo - y_m) / S;
  const double g_C = g_ym * (b.y_hi - y_m) / S;
  g_ylo += g_ym * A / S;
  g_yhi += g_ym * C / S;
  g_lam += -g_A * w_a + g_C * w_c;
  g_wc += g_C * lam;

  // w_hi = w_a * sqrt(d_lo / d_hi)
  g_dlo += g_wc * w_c / (2.0 * d_lo);
  g_dhi -= g_wc * w_c / (2.0 * d_hi);

  // phi = (x - x_lo) / delta
  const double g_x = g_phi / delta;
  double g_xlo = -g_phi / delta;
  g_delta -= g_phi * phi / delta;

  g_yhi += g_h;
  g_ylo -= g_h;
  const double g_xhi = g_delta;
  g_xlo -= g_delta;

  out7[0] += g_xlo;
  out7[1] += g_xhi;
  out7[2] += g_ylo;
  out7[3] += g_yhi;
  out7[4] += g_dlo;
  out7[5] += g_dhi;
  out7[6] += g_lam;
  return g_x;
}

}  // namespace

ForwardPartials forward_partials(const ElementSpline& s, double x) {
  ForwardPartials p;
  const int k = s.find_bin(x);
  if (k < 0) return p;
  p.bin = k;
  const BinParams& b = s.bins()[std::size_t(k)];
  const double d_lo = s.knots().ds[std::size_t(k)];
  const double d_hi = s.knots().ds[std::size_t(k) + 1];
  p.dvalue_dx = bin_vjp(b, d_lo, d_hi, x, 1.0, 0.0, p.dvalue);
  p.dlogdet_dx = bin_vjp(b, d_lo, d_hi, x, 0.0, 1.0, p.dlogdet);
  return p;
}

double accumulate_vjp(const ElementSpline& s, double x, double g_value,
                      double g_logdet, std::span<double> knot_grads) {
  const int k = s.find_bin(x);
  if (k < 0) return g_value;  // identity tail: logdet is constant zero
  const int K = s.knots().num_bins();
  const BinParams& b = s.bins()[std::size_t(k)];
  double g7[7] = {0, 0, 0, 0, 0, 0, 0};
  const double g_x = bin_vjp(b, s.knots().ds[std::size_t(k)],
                             s.knots().ds[std::size_t(k) + 1], x, g_value,
                             g_logdet, g7);
  knot_grads[std::size_t(k)] += g7[0];
  knot_grads[std::size_t(k) + 1] += g7[1];
  knot_grads[std::size_t(K + 1 + k)] += g7[2];
  knot_grads[std::size_t(K + 1 + k + 1)] += g7[3];
  knot_grads[std::size_t(2 * (K + 1) + k)] += g7[4];
  knot_grads[std::size_t(2 * (K + 1) + k + 1)] += g7[5];
  knot_grads[std::size_t(3 * (K + 1) + k)] += g7[6];
  return g_x;
}

KnotSpec squash_raw_params(std::span<const double> raw, const SquashConfig& cfg) {
  const int K = cfg.num_bins;
  if (K < 1) throw ConfigError("num_bins must be >= 1, got " + std::to_string(K));
  if (std::int64_t(raw.size()) != cfg.raw_size()) {
    throw ShapeMismatch("raw spline parameters: got " + std::to_string(raw.size()) +
                        " values, layout needs " + std::to_string(cfg.raw_size()));
  }
  const double B = cfg.tail_bound;
  if (!(B > 0.0)) throw ConfigError("tail_bound must be positive, got " + std::to_string(B));
  const double mb = cfg.min_bin_abs() / (2.0 * B);
  if (!(K * mb < 1.0)) throw ConfigError("min_bin leaves no room for " + std::to_string(K) + " bins");
  const double free_mass = 1.0 - K * mb;

  KnotSpec spec;
  spec.xs.resize(std::size_t(K) + 1);
  spec.ys.resize(std::size_t(K) + 1);
  spec.ds.assign(std::size_t(K) + 1, 1.0);
  spec.lambdas.resize(std::size_t(K));

  auto fill_knots = [&](std::span<const double> r, std::vector<double>& out) {
    double m = r[0];
    for (int i = 1; i < K; ++i) m = std::max(m, r[std::size_t(i)]);
    double z = 0.0;
    std::vector<double> e(std::size_t(K), 0.0);
    for (int i = 0; i < K; ++i) z += e[std::size_t(i)] = std::exp(r[std::size_t(i)] - m);
    out[0] = -B;
    for (int i = 0; i < K; ++i) {
      const double frac = mb + free_mass * (e[std::size_t(i)] / z);
      out[std::size_t(i) + 1] = out[std::size_t(i)] + 2.0 * B * frac;
    }
    out[std::size_t(K)] = B;  // rounding drift in the cumulative sum ends here
  };
  fill_knots(raw.subspan(0, std::size_t(K)), spec.xs);
  fill_knots(raw.subspan(std::size_t(K), std::size_t(K)), spec.ys);

  // Boundary derivatives stay 1 so the spline meets the identity tails
  // smoothly; interior ones are softplus-squashed with a floor.
  for (int i = 1; i < K; ++i) {
    const double a = softplus(raw[std::size_t(2 * K + i - 1)] + kDerivShift);
    spec.ds[std::size_t(i)] = a < cfg.min_deriv ? cfg.min_deriv : a;
  }
  const double span_l = 1.0 - 2.0 * cfg.lambda_eps;
  for (int i = 0; i < K; ++i) {
    const std::size_t idx = std::size_t(3 * K - 1 + (cfg.shared_lambda ? 0 : i));
    spec.lambdas[std::size_t(i)] = cfg.lambda_eps + span_l * logistic(raw[idx]);
  }
  return spec;
}

void squash_gradient(std::span<const double> raw, const SquashConfig& cfg,
                     std::span<const double> knot_grads, std::span<double> raw_grad) {
  const int K = cfg.num_bins;
  if (std::int64_t(raw.size()) != cfg.raw_size() ||
      std::int64_t(raw_grad.size()) != cfg.raw_size() ||
      std::int64_t(knot_grads.size()) != knot_grad_size(K)) {
    throw ShapeMismatch("squash_gradient: buffer sizes do not match num_bins=" +
                        std::to_string(K));
  }
  const double B = cfg.tail_bound;
  const double mb = cfg.min_bin_abs() / (2.0 * B);
  const double free_mass = 1.0 - K * mb;

  // Interior knot j (1 <= j <= K-1) is -B plus the cumulative width of bins
  // 0..j-1, so width i feeds every interior knot from i+1 on; the two
  // boundary knots are constants. Suffix sums give each width's share, and
  // the softmax pullback maps width-fraction gradients to the raw values.
  auto pull_knots = [&](std::span<const double> r, std::span<const double> gk,
                        std::span<double> gr) {
    double m = r[0];
    for (int i = 1; i < K; ++i) m = std::max(m, r[std::size_t(i)]);
    double z = 0.0;
    std::vector<double> p(std::size_t(K), 0.0);
    for (int i = 0; i < K; ++i) z += p[std::size_t(i)] = std::exp(r[std::size_t(i)] - m);
    for (auto& v : p) v /= z;

    std::vector<double> g_p(std::size_t(K), 0.0);
    double suffix = 0.0;
    for (int i = K - 1; i >= 0; --i) {
      if (i + 1 <= K - 1) suffix += gk[std::size_t(i) + 1];
      g_p[std::size_t(i)] = 2.0 * B * free_mass * suffix;
    }
    double dot = 0.0;
    for (int i = 0; i < K; ++i) dot += g_p[std::size_t(i)] * p[std::size_t(i)];
    for (int i = 0; i < K; ++i) {
      gr[std::size_t(i)] += p[std::size_t(i)] * (g_p[std::size_t(i)] - dot);
    }
  };
  pull_knots(raw.subspan(0, std::size_t(K)), knot_grads.subspan(0, std::size_t(K) + 1),
             raw_grad.subspan(0, std::size_t(K)));
  pull_knots(raw.subspan(std::size_t(K), std::size_t(K)),
             knot_grads.subspan(std::size_t(K) + 1, std::size_t(K) + 1),
             raw_grad.subspan(std::size_t(K), std::size_t(K)));

  const std::size_t ds_base = std::size_t(2 * (K + 1));
  for (int i = 1; i < K; ++i) {
    const double z = raw[std::size_t(2 * K + i - 1)] + kDerivShift;
    if (softplus(z) >= cfg.min_deriv) {  // otherwise the floor is active
      raw_grad[std::size_t(2 * K + i - 1)] += knot_grads[ds_base + std::size_t(i)] * logistic(z);
    }
  }

  const double span_l = 1.0 - 2.0 * cfg.lambda_eps;
  const std::size_t lam_base = std::size_t(3 * (K + 1));
  for (int i = 0; i < K; ++i) {
    const std::size_t idx = std::size_t(3 * K - 1 + (cfg.shared_lambda ? 0 : i));
    const double s = logistic(raw[idx]);
    raw_grad[idx] += knot_grads[lam_base + std::size_t(i)] * span_l * s * (1.0 - s);
  }
}

}  // namespace lrsflow::spline
