#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "aim/nn/parameters.hpp"
#include "aim/nn/tensor.hpp"

namespace aim::nn {

class Graph;

/// Handle to a node of a Graph. Cheap to copy; only valid while the graph lives.
struct Var {
  Graph* graph = nullptr;
  std::size_t id = 0;

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const { return value()(0, 0); }
};

/// Reverse-mode tape. Every op appends a node; backward() walks the tape once.
/// With recording disabled the graph only evaluates values (inference).
class Graph {
 public:
  explicit Graph(bool record = true) : record_(record) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool recording() const { return record_; }

  Var constant(Matrix value) { return push(std::move(value), false); }

  /// Free leaf that collects a gradient readable through grad().
  Var variable(Matrix value) { return push(std::move(value), record_); }

  /// Leaf bound to a parameter; backward() accumulates into the parameter's grad.
  Var param(ParameterSet& set, std::size_t index) {
    Var v = push(set[index].value, record_);
    if (record_) bindings_.push_back({v.id, &set, index});
    return v;
  }

  const Matrix& value(Var v) const { return nodes_[v.id].value; }
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }

  /// Gradient of the last backward() w.r.t. a node (zero matrix if none flowed).
  Matrix grad(Var v) const {
    const auto& n = nodes_[v.id];
    if (n.grad.size() == 0) return Matrix::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  /// Records an op output. `backward` receives the output gradient and must call
  /// accumulate() on inputs that require grad.
  Var record(Matrix value, std::initializer_list<Var> inputs,
             std::function<void(Graph&, const Matrix&)> backward) {
    bool req = false;
    if (record_) {
      for (const auto& in : inputs) req = req || nodes_[in.id].requires_grad;
    }
    Var v = push(std::move(value), req);
    if (req) nodes_[v.id].backward = std::move(backward);
    return v;
  }

  Var record_many(Matrix value, const std::vector<Var>& inputs,
                  std::function<void(Graph&, const Matrix&)> backward) {
    bool req = false;
    if (record_) {
      for (const auto& in : inputs) req = req || nodes_[in.id].requires_grad;
    }
    Var v = push(std::move(value), req);
    if (req) nodes_[v.id].backward = std::move(backward);
    return v;
  }

  /// Id the next recorded node will receive; lets a closure refer to its own output.
  std::size_t next_id() const { return nodes_.size(); }

  void accumulate(Var v, const Matrix& g) {
    auto& n = nodes_[v.id];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

  template <typename Fn>
  void accumulate_with(Var v, Fn&& fn) {
    auto& n = nodes_[v.id];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
    fn(n.grad);
  }

  /// Seeds d(loss)/d(loss) = 1 on a 1x1 node and propagates to parameters.
  void backward(Var loss) {
    if (!record_) throw std::logic_error("backward() on a non-recording graph");
    const auto& l = nodes_[loss.id];
    if (l.value.rows() != 1 || l.value.cols() != 1) throw std::logic_error("backward() needs a scalar");
    if (!l.requires_grad) return;
    nodes_[loss.id].grad = Matrix::Ones(1, 1);
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      auto& n = nodes_[i];
      if (!n.requires_grad || n.grad.size() == 0 || !n.backward) continue;
      // Closures only touch earlier nodes' grads, so `n` stays valid.
      n.backward(*this, n.grad);
    }
    for (const auto& b : bindings_) {
      const auto& n = nodes_[b.node];
      if (n.grad.size() != 0) (*b.set)[b.index].grad += n.grad;
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    std::function<void(Graph&, const Matrix&)> backward;
  };
  struct Binding {
    std::size_t node;
    ParameterSet* set;
    std::size_t index;
  };

  Var push(Matrix value, bool req) {
    nodes_.push_back({std::move(value), Matrix(), req, {}});
    return Var{this, nodes_.size() - 1};
  }

  bool record_;
  std::vector<Node> nodes_;
  std::vector<Binding> bindings_;
};

inline const Matrix& Var::value() const { return graph->value(*this); }

}  // namespace aim::nn
