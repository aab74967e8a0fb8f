#include "lrsflow/tensor.hpp"

#include <sstream>

#include "lrsflow/errors.hpp"

#ifdef LRSFLOW_WITH_BLAS
#include <cblas.h>
#endif

namespace lrsflow {

Tensor::Tensor(std::vector<std::int64_t> shape) : shape_(std::move(shape)) {
  data_.assign(std::size_t(shape_size(shape_)), 0.0);
}

Tensor::Tensor(std::vector<std::int64_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (std::int64_t(data_.size()) != shape_size(shape_)) {
    throw ShapeMismatch("tensor data has " + std::to_string(data_.size()) +
                        " elements but shape " + lrsflow::shape_str(shape_) +
                        " needs " + std::to_string(shape_size(shape_)));
  }
}

Tensor Tensor::scalar(double v) { return Tensor({}, {v}); }

Tensor Tensor::zeros(std::vector<std::int64_t> shape) { return Tensor(std::move(shape)); }

Tensor Tensor::full(std::vector<std::int64_t> shape, double v) {
  Tensor t(std::move(shape));
  for (auto& x : t.data_) x = v;
  return t;
}

std::string Tensor::shape_str() const { return lrsflow::shape_str(shape_); }

std::int64_t shape_size(std::span<const std::int64_t> shape) {
  std::int64_t n = 1;
  for (auto d : shape) {
    if (d < 0) throw ShapeMismatch("negative dimension in shape " + shape_str(shape));
    n *= d;
  }
  return n;
}

std::string shape_str(std::span<const std::int64_t> shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw ShapeMismatch(std::string(op) + ": shapes " + a.shape_str() + " and " +
                        b.shape_str() + " differ");
  }
}

namespace {

bool is_suffix(const std::vector<std::int64_t>& small, const std::vector<std::int64_t>& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

}  // namespace

int broadcast_mode(const Tensor& a, const Tensor& b, const char* op) {
  if (a.same_shape(b)) return 0;
  if (is_suffix(b.shape(), a.shape())) return 1;
  if (is_suffix(a.shape(), b.shape())) return 2;
  throw ShapeMismatch(std::string(op) + ": shapes " + a.shape_str() + " and " +
                      b.shape_str() + " are not broadcastable");
}

void matmul_into(const Tensor& a, bool trans_a, const Tensor& b, bool trans_b,
                 Tensor& out, double alpha, double beta) {
  if (a.rank() != 2 || b.rank() != 2 || out.rank() != 2) {
    throw ShapeMismatch("matmul: operands must be rank 2, got " + a.shape_str() +
                        ", " + b.shape_str() + ", " + out.shape_str());
  }
  const std::int64_t m = trans_a ? a.shape()[1] : a.shape()[0];
  const std::int64_t k = trans_a ? a.shape()[0] : a.shape()[1];
  const std::int64_t kb = trans_b ? b.shape()[1] : b.shape()[0];
  const std::int64_t n = trans_b ? b.shape()[0] : b.shape()[1];
  if (k != kb || out.shape()[0] != m || out.shape()[1] != n) {
    throw ShapeMismatch("matmul: inner/output dimensions disagree for " + a.shape_str() +
                        (trans_a ? "^T" : "") + " * " + b.shape_str() +
                        (trans_b ? "^T" : "") + " -> " + out.shape_str());
  }
#ifdef LRSFLOW_WITH_BLAS
  cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, int(m), int(n), int(k), alpha,
              a.data(), int(a.shape()[1]), b.data(), int(b.shape()[1]), beta,
              out.data(), int(out.shape()[1]));
#else
  const std::int64_t lda = a.shape()[1];
  const std::int64_t ldb = b.shape()[1];
  for (std::int64_t i = 0; i < m; ++i) {
    for (std::int64_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::int64_t p = 0; p < k; ++p) {
        const double av = trans_a ? a[p * lda + i] : a[i * lda + p];
        const double bv = trans_b ? b[j * ldb + p] : b[p * ldb + j];
        acc += av * bv;
      }
      out[i * n + j] = alpha * acc + beta * out[i * n + j];
    }
  }
#endif
}

}  // namespace lrsflow
