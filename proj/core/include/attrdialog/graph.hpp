// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <deque>
#include <unordered_map>
#include <vector>

#include "attrdialog/rng.hpp"
#include "attrdialog/tensor.hpp"

namespace attrdialog::ad {

class Graph;

/// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
class Expr {
 public:
  Expr() = default;

  bool valid() const { return graph_ != nullptr; }
  std::size_t id() const { return id_; }
  Graph& graph() const { return *graph_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }

 private:
  friend class Graph;
  Expr(Graph* graph, std::size_t id) : graph_(graph), id_(id) {}

  Graph* graph_ = nullptr;
  std::size_t id_ = std::numeric_limits<std::size_t>::max();
};

/// Reverse-mode tape. Nodes are appended in evaluation order, so reverse
/// insertion order is a valid topological order for the backward sweep.
///
/// Parameter leaves alias caller-owned tensors: backward accumulates
/// directly into their grad buffers. Accumulation is additive; callers reset
/// parameter gradients explicitly between updates.
class Graph {
 public:
  /// Receives the node id whose gradient is ready.
  using BackwardFn = std::function<void(Graph&, std::size_t)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Expr constant(Tensor value);
  /// Leaf bound to `param`; repeated calls with the same tensor share a node.
  Expr parameter(Tensor& param);
  /// Appends an operation node. `inputs` decide whether it needs a gradient.
  /// Raises NumericError if `value` holds a non-finite entry.
  Expr define(Tensor value, std::span<const Expr> inputs, BackwardFn backward,
              const char* op);

  const Tensor& value(std::size_t node) const;
  const char* op_name(std::size_t node) const { return nodes_[node].op; }
  bool needs_grad(std::size_t node) const { return nodes_[node].needs_grad; }
  /// Gradient buffer of a node, allocated zeroed on first use.
  std::span<double> grad(std::size_t node);
  /// Gradient of a node after backward; empty if nothing flowed into it.
  std::span<const double> grad_of(Expr e) const;

  /// Seeds d(root) = seed and runs the backward sweep. `root` must be scalar.
  void backward(Expr root, double seed = 1.0);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor own;
    Tensor* param = nullptr;
    std::vector<double> grad;
    BackwardFn backward;
    const char* op = "";
    bool needs_grad = false;
  };

  std::deque<Node> nodes_;
  std::unordered_map<const Tensor*, std::size_t> param_nodes_;
};

enum class Elementwise { Add, Sub, Mul, Sigmoid, Tanh, Relu };

Expr matmul(Expr a, Expr b);
Expr add(Expr a, Expr b);
Expr sub(Expr a, Expr b);
Expr mul(Expr a, Expr b);
Expr sigmoid(Expr x);
Expr tanh(Expr x);
Expr relu(Expr x);
/// Dispatches on `kind`; binary kinds take two arguments, unary kinds one.
Expr elementwise(Elementwise kind, std::span<const Expr> args);

/// x[n×m] + bias[1×m], broadcasting the bias over rows.
Expr add_bias(Expr x, Expr bias);
Expr scale(Expr x, double factor);
/// Sum of all entries as a 1×1 scalar.
Expr sum(Expr x);

/// Concatenates along `axis` (0 = rows, 1 = columns) of rank-2 parts.
Expr concat(std::span<const Expr> parts, std::size_t axis = 1);
/// Column ranges of `x` as separate nodes; inverse of concat along axis 1.
std::vector<Expr> split_columns(Expr x, std::span<const std::size_t> widths);

/// Gathers rows of `table` [V×d]; backward scatter-adds.
Expr lookup(Expr table, std::span<const int> ids);

struct CrossEntropy {
  Expr loss;                     ///< mean NLL over unmasked rows, 1×1
  Tensor probs;                  ///< row-wise softmax of the logits
  std::vector<double> row_nll;   ///< per-row NLL; 0 for masked rows
};

/// Mean over unmasked rows of -log softmax(logits)[target]. An empty mask
/// means every row counts.
CrossEntropy softmax_cross_entropy(Expr logits, std::span<const int> targets,
                                   std::span<const bool> mask = {});

/// Inverted dropout: kept entries are scaled by 1/(1-rate). Identity when
/// not training or rate is zero.
Expr dropout(Expr x, double rate, bool training, Rng& rng);

/// Row-wise softmax of a plain tensor, stabilised by max-subtraction.
Tensor softmax_rows(const Tensor& logits);

}  // namespace attrdialog::ad
