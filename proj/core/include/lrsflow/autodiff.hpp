#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "lrsflow/tensor.hpp"

namespace lrsflow::ad {

// One vertex of a dynamically built computation graph. Graphs are rebuilt
// per batch; backward() walks parents in reverse topological order, so a
// node's rule may assume its own grad is final when it fires.
struct Node {
  Tensor value;
  Tensor grad;  // allocated and zeroed by backward()
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_rule;  // empty for leaves
};

using NodePtr = std::shared_ptr<Node>;

NodePtr leaf(Tensor v);
NodePtr make_node(Tensor value, std::vector<NodePtr> parents,
                  std::function<void(Node&)> rule);

// Elementwise with trailing-axes broadcast: the smaller operand's shape must
// be a suffix of the larger's (scalars broadcast against anything).
NodePtr add(NodePtr a, NodePtr b);
NodePtr sub(NodePtr a, NodePtr b);
NodePtr mul(NodePtr a, NodePtr b);

NodePtr scale(NodePtr a, double c);
NodePtr add_scalar(NodePtr a, double c);
NodePtr neg(NodePtr a);

NodePtr tanh(NodePtr a);
NodePtr relu(NodePtr a);  // subgradient 0 at the kink
NodePtr exp(NodePtr a);
NodePtr log(NodePtr a);
NodePtr logistic(NodePtr a);
NodePtr softplus(NodePtr a);

// Rank-2 only. affine fuses x*W + row-broadcast bias; masked_affine applies
// a fixed 0/1 mask to W in both the product and the weight gradient.
NodePtr matmul(NodePtr a, NodePtr b);
NodePtr affine(NodePtr x, NodePtr w, NodePtr b);
NodePtr masked_affine(NodePtr x, NodePtr w, NodePtr b, Tensor mask);
NodePtr transpose2d(NodePtr a);
NodePtr mat_inverse(NodePtr a);  // square rank-2, partial-pivot elimination

NodePtr sum_all(NodePtr a);   // -> scalar
NodePtr mean_all(NodePtr a);  // -> scalar
NodePtr sum_last(NodePtr a);  // drops the last axis

NodePtr slice_last(NodePtr a, std::int64_t lo, std::int64_t hi);
NodePtr concat_last(std::vector<NodePtr> parts);

// Scatters v (rank 1) into a zero tensor at flat positions; duplicates add.
NodePtr scatter_positions(NodePtr v, std::vector<std::int64_t> positions,
                          std::vector<std::int64_t> out_shape);

// Reverse pass from a scalar loss. Zeroes and repopulates the grad of every
// reachable node, so repeated calls on one graph give identical results.
// Throws NotScalar if loss is not rank 0.
void backward(const NodePtr& loss);

// Named parameter tensors with stable registration order. Training reads
// gradients off fresh leaves each iteration and writes updates back here.
class ParamStore {
 public:
  int add(std::string name, Tensor init);
  std::size_t size() const { return values_.size(); }
  Tensor& value(std::size_t i) { return values_[i]; }
  const Tensor& value(std::size_t i) const { return values_[i]; }
  const std::string& name(std::size_t i) const { return names_[i]; }
  int index_of(const std::string& name) const;  // -1 when absent
  std::vector<NodePtr> make_leaves() const;
  std::int64_t total_elements() const;

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> values_;
};

}  // namespace lrsflow::ad
