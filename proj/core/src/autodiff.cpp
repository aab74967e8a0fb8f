#include "lrsflow/autodiff.hpp"

#include <cmath>
#include <unordered_map>
#include <unordered_set>

#include "lrsflow/errors.hpp"
#include "lrsflow/spline.hpp"

namespace lrsflow::ad {

NodePtr leaf(Tensor v) {
  auto n = std::make_shared<Node>();
  n->value = std::move(v);
  return n;
}

NodePtr make_node(Tensor value, std::vector<NodePtr> parents,
                  std::function<void(Node&)> rule) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->parents = std::move(parents);
  n->backward_rule = std::move(rule);
  return n;
}

namespace {

// Adds g into target, summing over broadcast leading axes when target is
// smaller. Row-major layout makes the suffix index a plain modulo.
void accumulate_reduced(Tensor& target, const Tensor& g) {
  const std::int64_t nt = target.size();
  const std::int64_t ng = g.size();
  for (std::int64_t i = 0; i < ng; ++i) target[i % nt] += g[i];
}

NodePtr binary_elementwise(NodePtr a, NodePtr b, const char* name,
                           double (*fv)(double, double),
                           void (*fg)(double av, double bv, double g, double& ga, double& gb)) {
  const int mode = broadcast_mode(a->value, b->value, name);
  const Tensor& big = mode == 2 ? b->value : a->value;
  const Tensor& small = mode == 2 ? a->value : b->value;
  Tensor out(big.shape());
  const std::int64_t n = big.size();
  const std::int64_t ns = small.size();
  for (std::int64_t i = 0; i < n; ++i) {
    const double av = mode == 2 ? a->value[i % ns] : a->value[i];
    const double bv = mode == 1 ? b->value[i % ns] : b->value[i];
    out[i] = fv(av, bv);
  }
  return make_node(std::move(out), {a, b}, [mode, fg](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    const std::int64_t n = self.value.size();
    const std::int64_t na = pa.value.size();
    const std::int64_t nb = pb.value.size();
    for (std::int64_t i = 0; i < n; ++i) {
      const double av = mode == 2 ? pa.value[i % na] : pa.value[i];
      const double bv = mode == 1 ? pb.value[i % nb] : pb.value[i];
      double ga = 0.0, gb = 0.0;
      fg(av, bv, self.grad[i], ga, gb);
      pa.grad[mode == 2 ? i % na : i] += ga;
      pb.grad[mode == 1 ? i % nb : i] += gb;
    }
  });
}

NodePtr unary_elementwise(NodePtr a, double (*fv)(double),
                          double (*fg)(double in, double out)) {
  Tensor out(a->value.shape());
  const std::int64_t n = out.size();
  for (std::int64_t i = 0; i < n; ++i) out[i] = fv(a->value[i]);
  return make_node(std::move(out), {a}, [fg](Node& self) {
    Node& p = *self.parents[0];
    const std::int64_t n = self.value.size();
    for (std::int64_t i = 0; i < n; ++i) {
      p.grad[i] += self.grad[i] * fg(p.value[i], self.value[i]);
    }
  });
}

}  // namespace

NodePtr add(NodePtr a, NodePtr b) {
  return binary_elementwise(std::move(a), std::move(b), "add",
      [](double x, double y) { return x + y; },
      [](double, double, double g, double& ga, double& gb) { ga = g; gb = g; });
}

NodePtr sub(NodePtr a, NodePtr b) {
  return binary_elementwise(std::move(a), std::move(b), "sub",
      [](double x, double y) { return x - y; },
      [](double, double, double g, double& ga, double& gb) { ga = g; gb = -g; });
}

NodePtr mul(NodePtr a, NodePtr b) {
  return binary_elementwise(std::move(a), std::move(b), "mul",
      [](double x, double y) { return x * y; },
      [](double av, double bv, double g, double& ga, double& gb) { ga = g * bv; gb = g * av; });
}

NodePtr scale(NodePtr a, double c) {
  Tensor out(a->value.shape());
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] = a->value[i] * c;
  return make_node(std::move(out), {a}, [c](Node& self) {
    Node& p = *self.parents[0];
    for (std::int64_t i = 0; i < self.value.size(); ++i) p.grad[i] += self.grad[i] * c;
  });
}

NodePtr add_scalar(NodePtr a, double c) {
  Tensor out(a->value.shape());
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] = a->value[i] + c;
  return make_node(std::move(out), {a}, [](Node& self) {
    Node& p = *self.parents[0];
    for (std::int64_t i = 0; i < self.value.size(); ++i) p.grad[i] += self.grad[i];
  });
}

NodePtr neg(NodePtr a) { return scale(std::move(a), -1.0); }

NodePtr tanh(NodePtr a) {
  return unary_elementwise(std::move(a), [](double x) { return std::tanh(x); },
                           [](double, double out) { return 1.0 - out * out; });
}

NodePtr relu(NodePtr a) {
  return unary_elementwise(std::move(a), [](double x) { return x > 0.0 ? x : 0.0; },
                           [](double in, double) { return in > 0.0 ? 1.0 : 0.0; });
}

NodePtr exp(NodePtr a) {
  return unary_elementwise(std::move(a), [](double x) { return std::exp(x); },
                           [](double, double out) { return out; });
}

NodePtr log(NodePtr a) {
  return unary_elementwise(std::move(a), [](double x) { return std::log(x); },
                           [](double in, double) { return 1.0 / in; });
}

NodePtr logistic(NodePtr a) {
  return unary_elementwise(std::move(a),
                           [](double x) { return spline::logistic(x); },
                           [](double, double out) { return out * (1.0 - out); });
}

NodePtr softplus(NodePtr a) {
  return unary_elementwise(std::move(a),
                           [](double x) { return spline::softplus(x); },
                           [](double in, double) { return spline::logistic(in); });
}

NodePtr matmul(NodePtr a, NodePtr b) {
  Tensor out({a->value.shape()[0], b->value.shape()[1]});
  matmul_into(a->value, false, b->value, false, out);
  return make_node(std::move(out), {a, b}, [](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    matmul_into(self.grad, false, pb.value, true, pa.grad, 1.0, 1.0);
    matmul_into(pa.value, true, self.grad, false, pb.grad, 1.0, 1.0);
  });
}

NodePtr affine(NodePtr x, NodePtr w, NodePtr b) {
  if (b->value.rank() != 1 || b->value.shape()[0] != w->value.shape()[1]) {
    throw ShapeMismatch("affine: bias " + b->value.shape_str() +
                        " does not match weight " + w->value.shape_str());
  }
  Tensor out({x->value.shape()[0], w->value.shape()[1]});
  matmul_into(x->value, false, w->value, false, out);
  const std::int64_t rows = out.shape()[0];
  const std::int64_t cols = out.shape()[1];
  for (std::int64_t i = 0; i < rows; ++i) {
    for (std::int64_t j = 0; j < cols; ++j) out[i * cols + j] += b->value[j];
  }
  return make_node(std::move(out), {x, w, b}, [](Node& self) {
    Node& px = *self.parents[0];
    Node& pw = *self.parents[1];
    Node& pb = *self.parents[2];
    matmul_into(self.grad, false, pw.value, true, px.grad, 1.0, 1.0);
    matmul_into(px.value, true, self.grad, false, pw.grad, 1.0, 1.0);
    const std::int64_t rows = self.value.shape()[0];
    const std::int64_t cols = self.value.shape()[1];
    for (std::int64_t i = 0; i < rows; ++i) {
      for (std::int64_t j = 0; j < cols; ++j) pb.grad[j] += self.grad[i * cols + j];
    }
  });
}

NodePtr masked_affine(NodePtr x, NodePtr w, NodePtr b, Tensor mask) {
  require_same_shape(w->value, mask, "masked_affine");
  Tensor wm(w->value.shape());
  for (std::int64_t i = 0; i < wm.size(); ++i) wm[i] = w->value[i] * mask[i];
  Tensor out({x->value.shape()[0], wm.shape()[1]});
  matmul_into(x->value, false, wm, false, out);
  const std::int64_t rows = out.shape()[0];
  const std::int64_t cols = out.shape()[1];
  for (std::int64_t i = 0; i < rows; ++i) {
    for (std::int64_t j = 0; j < cols; ++j) out[i * cols + j] += b->value[j];
  }
  auto mask_p = std::make_shared<Tensor>(std::move(mask));
  auto wm_p = std::make_shared<Tensor>(std::move(wm));
  return make_node(std::move(out), {x, w, b}, [mask_p, wm_p](Node& self) {
    Node& px = *self.parents[0];
    Node& pw = *self.parents[1];
    Node& pb = *self.parents[2];
    matmul_into(self.grad, false, *wm_p, true, px.grad, 1.0, 1.0);
    Tensor gw(pw.value.shape());
    matmul_into(px.value, true, self.grad, false, gw);
    for (std::int64_t i = 0; i < gw.size(); ++i) pw.grad[i] += gw[i] * (*mask_p)[i];
    const std::int64_t rows = self.value.shape()[0];
    const std::int64_t cols = self.value.shape()[1];
    for (std::int64_t i = 0; i < rows; ++i) {
      for (std::int64_t j = 0; j < cols; ++j) pb.grad[j] += self.grad[i * cols + j];
    }
  });
}

NodePtr transpose2d(NodePtr a) {
  if (a->value.rank() != 2) throw ShapeMismatch("transpose2d: need rank 2, got " + a->value.shape_str());
  const std::int64_t r = a->value.shape()[0];
  const std::int64_t c = a->value.shape()[1];
  Tensor out({c, r});
  for (std::int64_t i = 0; i < r; ++i) {
    for (std::int64_t j = 0; j < c; ++j) out[j * r + i] = a->value[i * c + j];
  }
  return make_node(std::move(out), {a}, [r, c](Node& self) {
    Node& p = *self.parents[0];
    for (std::int64_t i = 0; i < r; ++i) {
      for (std::int64_t j = 0; j < c; ++j) p.grad[i * c + j] += self.grad[j * r + i];
    }
  });
}

namespace {

// Gauss-Jordan with partial pivoting; in-place on a copy.
Tensor dense_inverse(const Tensor& a) {
  const std::int64_t n = a.shape()[0];
  Tensor work = a;
  Tensor inv({n, n});
  for (std::int64_t i = 0; i < n; ++i) inv[i * n + i] = 1.0;
  for (std::int64_t col = 0; col < n; ++col) {
    std::int64_t pivot = col;
    for (std::int64_t r = col + 1; r < n; ++r) {
      if (std::fabs(work[r * n + col]) > std::fabs(work[pivot * n + col])) pivot = r;
    }
    if (work[pivot * n + col] == 0.0) throw FlowError("matrix is singular");
    if (pivot != col) {
      for (std::int64_t j = 0; j < n; ++j) {
        std::swap(work[pivot * n + j], work[col * n + j]);
        std::swap(inv[pivot * n + j], inv[col * n + j]);
      }
    }
    const double d = work[col * n + col];
    for (std::int64_t j = 0; j < n; ++j) {
      work[col * n + j] /= d;
      inv[col * n + j] /= d;
    }
    for (std::int64_t r = 0; r < n; ++r) {
      if (r == col) continue;
      const double f = work[r * n + col];
      if (f == 0.0) continue;
      for (std::int64_t j = 0; j < n; ++j) {
        work[r * n + j] -= f * work[col * n + j];
        inv[r * n + j] -= f * inv[col * n + j];
      }
    }
  }
  return inv;
}

}  // namespace

NodePtr mat_inverse(NodePtr a) {
  if (a->value.rank() != 2 || a->value.shape()[0] != a->value.shape()[1]) {
    throw ShapeMismatch("mat_inverse: need square rank 2, got " + a->value.shape_str());
  }
  Tensor inv = dense_inverse(a->value);
  return make_node(std::move(inv), {a}, [](Node& self) {
    // d(A^-1) pullback: gA -= Y^T g Y^T with Y = A^-1.
    Node& p = *self.parents[0];
    const std::int64_t n = self.value.shape()[0];
    Tensor t({n, n});
    matmul_into(self.value, true, self.grad, false, t);
    matmul_into(t, false, self.value, true, p.grad, -1.0, 1.0);
  });
}

NodePtr sum_all(NodePtr a) {
  double acc = 0.0;
  for (std::int64_t i = 0; i < a->value.size(); ++i) acc += a->value[i];
  return make_node(Tensor::scalar(acc), {a}, [](Node& self) {
    Node& p = *self.parents[0];
    const double g = self.grad[0];
    for (std::int64_t i = 0; i < p.value.size(); ++i) p.grad[i] += g;
  });
}

NodePtr mean_all(NodePtr a) {
  const std::int64_t n = a->value.size();
  if (n == 0) throw ShapeMismatch("mean_all: empty tensor");
  double acc = 0.0;
  for (std::int64_t i = 0; i < n; ++i) acc += a->value[i];
  return make_node(Tensor::scalar(acc / double(n)), {a}, [n](Node& self) {
    Node& p = *self.parents[0];
    const double g = self.grad[0] / double(n);
    for (std::int64_t i = 0; i < n; ++i) p.grad[i] += g;
  });
}

NodePtr sum_last(NodePtr a) {
  if (a->value.rank() < 1) throw ShapeMismatch("sum_last: need rank >= 1");
  std::vector<std::int64_t> shape(a->value.shape().begin(), a->value.shape().end() - 1);
  const std::int64_t inner = a->value.shape().back();
  Tensor out(shape);
  for (std::int64_t i = 0; i < out.size(); ++i) {
    double acc = 0.0;
    for (std::int64_t j = 0; j < inner; ++j) acc += a->value[i * inner + j];
    out[i] = acc;
  }
  return make_node(std::move(out), {a}, [inner](Node& self) {
    Node& p = *self.parents[0];
    for (std::int64_t i = 0; i < self.value.size(); ++i) {
      for (std::int64_t j = 0; j < inner; ++j) p.grad[i * inner + j] += self.grad[i];
    }
  });
}

NodePtr slice_last(NodePtr a, std::int64_t lo, std::int64_t hi) {
  if (a->value.rank() < 1) throw ShapeMismatch("slice_last: need rank >= 1");
  const std::int64_t inner = a->value.shape().back();
  if (lo < 0 || hi > inner || lo >= hi) {
    throw ShapeMismatch("slice_last: [" + std::to_string(lo) + "," + std::to_string(hi) +
                        ") out of range for axis of size " + std::to_string(inner));
  }
  std::vector<std::int64_t> shape(a->value.shape().begin(), a->value.shape().end());
  shape.back() = hi - lo;
  Tensor out(shape);
  const std::int64_t rows = out.size() / (hi - lo);
  for (std::int64_t i = 0; i < rows; ++i) {
    for (std::int64_t j = 0; j < hi - lo; ++j) {
      out[i * (hi - lo) + j] = a->value[i * inner + lo + j];
    }
  }
  return make_node(std::move(out), {a}, [inner, lo, hi](Node& self) {
    Node& p = *self.parents[0];
    const std::int64_t w = hi - lo;
    const std::int64_t rows = self.value.size() / w;
    for (std::int64_t i = 0; i < rows; ++i) {
      for (std::int64_t j = 0; j < w; ++j) {
        p.grad[i * inner + lo + j] += self.grad[i * w + j];
      }
    }
  });
}

NodePtr concat_last(std::vector<NodePtr> parts) {
  if (parts.empty()) throw ShapeMismatch("concat_last: no operands");
  std::vector<std::int64_t> lead(parts[0]->value.shape().begin(),
                                 parts[0]->value.shape().end() - 1);
  std::int64_t total = 0;
  std::vector<std::int64_t> widths;
  for (const auto& p : parts) {
    std::vector<std::int64_t> l(p->value.shape().begin(), p->value.shape().end() - 1);
    if (l != lead) {
      throw ShapeMismatch("concat_last: leading shapes differ: " +
                          parts[0]->value.shape_str() + " vs " + p->value.shape_str());
    }
    widths.push_back(p->value.shape().back());
    total += widths.back();
  }
  std::vector<std::int64_t> shape = lead;
  shape.push_back(total);
  Tensor out(shape);
  const std::int64_t rows = out.size() / total;
  std::int64_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const std::int64_t w = widths[k];
    for (std::int64_t i = 0; i < rows; ++i) {
      for (std::int64_t j = 0; j < w; ++j) {
        out[i * total + off + j] = parts[k]->value[i * w + j];
      }
    }
    off += w;
  }
  return make_node(std::move(out), std::move(parts), [widths, total](Node& self) {
    const std::int64_t rows = self.value.size() / total;
    std::int64_t off = 0;
    for (std::size_t k = 0; k < self.parents.size(); ++k) {
      Node& p = *self.parents[k];
      const std::int64_t w = widths[k];
      for (std::int64_t i = 0; i < rows; ++i) {
        for (std::int64_t j = 0; j < w; ++j) {
          p.grad[i * w + j] += self.grad[i * total + off + j];
        }
      }
      off += w;
    }
  });
}

NodePtr scatter_positions(NodePtr v, std::vector<std::int64_t> positions,
                          std::vector<std::int64_t> out_shape) {
  if (v->value.rank() != 1 || v->value.size() != std::int64_t(positions.size())) {
    throw ShapeMismatch("scatter_positions: values " + v->value.shape_str() +
                        " vs " + std::to_string(positions.size()) + " positions");
  }
  Tensor out(out_shape);
  for (std::size_t i = 0; i < positions.size(); ++i) out[positions[i]] += v->value[std::int64_t(i)];
  return make_node(std::move(out), {v}, [positions](Node& self) {
    Node& p = *self.parents[0];
    for (std::size_t i = 0; i < positions.size(); ++i) {
      p.grad[std::int64_t(i)] += self.grad[positions[i]];
    }
  });
}

void backward(const NodePtr& loss) {
  if (loss->value.rank() != 0) {
    throw NotScalar("backward: loss has shape " + loss->value.shape_str() +
                    ", expected a scalar");
  }
  // Iterative post-order DFS; reversing it runs every consumer before its
  // producers, so grads are complete when each rule fires.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(loss.get(), 0);
  seen.insert(loss.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (seen.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  for (Node* n : order) n->grad = Tensor(n->value.shape());
  loss->grad[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward_rule) (*it)->backward_rule(**it);
  }
}

int ParamStore::add(std::string name, Tensor init) {
  if (index_of(name) >= 0) throw ConfigError("duplicate parameter name: " + name);
  names_.push_back(std::move(name));
  values_.push_back(std::move(init));
  return int(values_.size()) - 1;
}

int ParamStore::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (names_[i] == name) return int(i);
  }
  return -1;
}

std::vector<NodePtr> ParamStore::make_leaves() const {
  std::vector<NodePtr> out;
  out.reserve(values_.size());
  for (const auto& v : values_) out.push_back(leaf(v));
  return out;
}

std::int64_t ParamStore::total_elements() const {
  std::int64_t n = 0;
  for (const auto& v : values_) n += v.size();
  return n;
}

}  // namespace lrsflow::ad
