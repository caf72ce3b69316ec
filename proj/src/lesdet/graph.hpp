#pragma once

#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <vector>

#include "lesdet/tensor.hpp"

namespace lesdet {

/// Handle to a node of a Graph. Default-constructed handles are "none".
struct Var {
  static constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();
  std::size_t id = kNone;

  bool valid() const noexcept { return id != kNone; }
};

/// Reverse-mode tape. Every op evaluates eagerly and records the closure that
/// propagates its adjoint. `backward` replays the closures once, in reverse.
///
/// Spatial ops accept a single sample [c,h,w] or a batch [n,c,h,w]; dense
/// accepts [in] or [n,in]. Parameters registered with `leaf_ref` are borrowed
/// and must outlive the graph.
template <typename T>
class Graph {
 public:
  using TensorT = BasicTensor<T>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var leaf(TensorT value, bool requires_grad);
  Var leaf_ref(const TensorT& value, bool requires_grad);

  Var conv2d(Var x, Var weight, std::size_t stride, std::size_t padding,
             Var bias = {});
  Var relu(Var x);
  Var maxpool2d(Var x, std::size_t window);
  Var reshape(Var x, Shape shape);
  // Collapses every axis after the first `batch_dims` into one.
  Var flatten(Var x, std::size_t batch_dims);
  Var dense(Var x, Var weight, Var bias = {});

  // Mean absolute value per sample: [c,h,w] -> scalar, [n,...] -> [n].
  Var energy(Var x, bool batched);

  Var softmax_xent(Var logits, int label);
  Var softmax_xent(Var logits, std::span<const int> labels);  // batch mean
  Var mse(Var a, T target);                                   // scalar a
  Var mse(Var a, std::span<const T> targets);                 // batch mean
  Var sum(Var x);
  Var dot(Var x, const TensorT& weights);  // sum_i x_i * w_i, w constant
  Var scale(Var x, T factor);

  void backward(Var loss);

  bool consumed() const noexcept { return consumed_; }
  std::size_t num_nodes() const noexcept { return nodes_.size(); }

  const TensorT& value(Var v) const;
  bool has_grad(Var v) const;
  // Throws StateError when no gradient reached this node.
  const TensorT& grad(Var v) const;

 private:
  struct Node {
    TensorT own;
    const TensorT* ref = nullptr;
    TensorT grad;
    bool requires_grad = false;
    bool grad_ready = false;
    std::function<void()> backward;
  };

  Node& node(Var v);
  const Node& node(Var v) const;
  const TensorT& val(std::size_t id) const;
  bool needs(Var v) const { return v.valid() && nodes_[v.id].requires_grad; }
  TensorT& grad_buffer(std::size_t id);
  Var push(TensorT value, bool requires_grad);

  std::vector<Node> nodes_;
  bool consumed_ = false;
};

extern template class Graph<float>;
extern template class Graph<double>;

}  // namespace lesdet
