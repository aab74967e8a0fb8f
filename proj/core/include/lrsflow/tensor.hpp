#pragma once

#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace lrsflow {

// Dense row-major tensor of doubles. Rank 0 is a scalar with one element.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::int64_t> shape);
  Tensor(std::vector<std::int64_t> shape, std::vector<double> data);

  static Tensor scalar(double v);
  static Tensor zeros(std::vector<std::int64_t> shape);
  static Tensor full(std::vector<std::int64_t> shape, double v);

  const std::vector<std::int64_t>& shape() const { return shape_; }
  int rank() const { return int(shape_.size()); }
  std::int64_t size() const { return std::int64_t(data_.size()); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> span() { return {data_.data(), data_.size()}; }
  std::span<const double> span() const { return {data_.data(), data_.size()}; }

  double& operator[](std::int64_t i) { return data_[std::size_t(i)]; }
  double operator[](std::int64_t i) const { return data_[std::size_t(i)]; }

  // 2-d accessors for the common [rows, cols] case.
  double& at(std::int64_t r, std::int64_t c) { return data_[std::size_t(r * shape_[1] + c)]; }
  double at(std::int64_t r, std::int64_t c) const { return data_[std::size_t(r * shape_[1] + c)]; }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
  std::string shape_str() const;

 private:
  std::vector<std::int64_t> shape_;
  std::vector<double> data_;
};

std::int64_t shape_size(std::span<const std::int64_t> shape);
std::string shape_str(std::span<const std::int64_t> shape);

// Throws ShapeMismatch (message carries both shapes) unless a and b agree.
void require_same_shape(const Tensor& a, const Tensor& b, const char* op);

// out = op(a, b) with a and b either equal-shaped or one a trailing-axes
// broadcast of the other (smaller shape must be a suffix of the larger).
// Returns the broadcast mode: 0 = equal, 1 = b broadcast, 2 = a broadcast.
int broadcast_mode(const Tensor& a, const Tensor& b, const char* op);

// C = alpha * op(A) * op(B) + beta * C for rank-2 operands; BLAS-backed
// when available, with a plain loop fallback.
void matmul_into(const Tensor& a, bool trans_a, const Tensor& b, bool trans_b,
                 Tensor& out, double alpha = 1.0, double beta = 0.0);

}  // namespace lrsflow
