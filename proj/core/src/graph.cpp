// SPDX-License-Identifier: Apache-2.0
#include "attrdialog/graph.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>

#include "attrdialog/error.hpp"

namespace attrdialog::ad {

const Tensor& Expr::value() const { return graph_->value(id_); }

Expr Graph::constant(Tensor value) {
  require_finite(value.values(), "constant");
  Node node;
  node.own = std::move(value);
  node.op = "constant";
  nodes_.push_back(std::move(node));
  return Expr(this, nodes_.size() - 1);
}

Expr Graph::parameter(Tensor& param) {
  if (auto it = param_nodes_.find(&param); it != param_nodes_.end()) {
    return Expr(this, it->second);
  }
  require_finite(param.values(), "parameter");
  Node node;
  node.param = &param;
  node.op = "parameter";
  node.needs_grad = true;
  nodes_.push_back(std::move(node));
  param_nodes_.emplace(&param, nodes_.size() - 1);
  return Expr(this, nodes_.size() - 1);
}

Expr Graph::define(Tensor value, std::span<const Expr> inputs,
                   BackwardFn backward, const char* op) {
  require_finite(value.values(), op);
  Node node;
  node.own = std::move(value);
  node.op = op;
  node.needs_grad = std::any_of(inputs.begin(), inputs.end(), [this](Expr e) {
    return nodes_[e.id()].needs_grad;
  });
  if (node.needs_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Expr(this, nodes_.size() - 1);
}

const Tensor& Graph::value(std::size_t node) const {
  const Node& n = nodes_[node];
  return n.param ? *n.param : n.own;
}

std::span<double> Graph::grad(std::size_t node) {
  Node& n = nodes_[node];
  if (n.param) return n.param->grad();
  if (n.grad.empty()) n.grad.assign(n.own.size(), 0.0);
  return n.grad;
}

std::span<const double> Graph::grad_of(Expr e) const {
  const Node& n = nodes_[e.id()];
  if (n.param) return std::as_const(*n.param).grad();
  return n.grad;
}

void Graph::backward(Expr root, double seed) {
  if (value(root.id()).size() != 1) {
    throw ShapeError("backward root must be scalar, got " +
                     shape_string(value(root.id()).shape()));
  }
  if (!nodes_[root.id()].needs_grad) return;
  grad(root.id())[0] += seed;
  for (std::size_t i = root.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.backward || n.grad.empty()) continue;
    require_finite(n.grad, n.op);
    n.backward(*this, i);
  }
  for (const auto& [param, id] : param_nodes_) {
    if (param->has_grad()) require_finite(param->grad(), "parameter gradient");
  }
}

namespace {

Tensor same_shape(const Tensor& like) { return Tensor(like.shape()); }

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " +
                     shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

void require_matrix(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw ShapeError(std::string(op) + ": expected rank-2 operand, got " +
                     shape_string(t.shape()));
  }
}

double sigmoid_value(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Expr matmul(Expr a, Expr b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_matrix(av, "matmul");
  require_matrix(bv, "matmul");
  const std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
  if (bv.rows() != k) {
    throw ShapeError("matmul: inner extents differ " + shape_string(av.shape()) +
                     " x " + shape_string(bv.shape()));
  }
  Tensor out({m, n});
  const double* A = av.values().data();
  const double* B = bv.values().data();
  double* C = out.values().data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = A[i * k + p];
      if (aip == 0.0) continue;
      const double* brow = B + p * n;
      double* crow = C + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
  const std::size_t ia = a.id(), ib = b.id();
  Expr inputs[] = {a, b};
  return a.graph().define(
      std::move(out), inputs,
      [ia, ib, m, k, n](Graph& g, std::size_t self) {
        const double* dC = g.grad(self).data();
        if (g.needs_grad(ia)) {
          // dA = dC · Bᵀ
          const double* B = g.value(ib).values().data();
          double* dA = g.grad(ia).data();
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t p = 0; p < k; ++p) {
              double acc = 0.0;
              for (std::size_t j = 0; j < n; ++j) acc += dC[i * n + j] * B[p * n + j];
              dA[i * k + p] += acc;
            }
          }
        }
        if (g.needs_grad(ib)) {
          // dB = Aᵀ · dC
          const double* A = g.value(ia).values().data();
          double* dB = g.grad(ib).data();
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t p = 0; p < k; ++p) {
              const double aip = A[i * k + p];
              if (aip == 0.0) continue;
              for (std::size_t j = 0; j < n; ++j) dB[p * n + j] += aip * dC[i * n + j];
            }
          }
        }
      },
      "matmul");
}

namespace {

Expr binary(Expr a, Expr b, Elementwise kind) {
  const char* name = kind == Elementwise::Add   ? "add"
                     : kind == Elementwise::Sub ? "sub"
                                                : "mul";
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_same_shape(av, bv, name);
  Tensor out = same_shape(av);
  auto o = out.values();
  auto x = av.values();
  auto y = bv.values();
  for (std::size_t i = 0; i < o.size(); ++i) {
    switch (kind) {
      case Elementwise::Add: o[i] = x[i] + y[i]; break;
      case Elementwise::Sub: o[i] = x[i] - y[i]; break;
      default: o[i] = x[i] * y[i]; break;
    }
  }
  const std::size_t ia = a.id(), ib = b.id();
  Expr inputs[] = {a, b};
  return a.graph().define(
      std::move(out), inputs,
      [ia, ib, kind](Graph& g, std::size_t self) {
        auto up = g.grad(self);
        if (g.needs_grad(ia)) {
          auto ga = g.grad(ia);
          if (kind == Elementwise::Mul) {
            auto y = g.value(ib).values();
            for (std::size_t i = 0; i < up.size(); ++i) ga[i] += up[i] * y[i];
          } else {
            for (std::size_t i = 0; i < up.size(); ++i) ga[i] += up[i];
          }
        }
        if (g.needs_grad(ib)) {
          auto gb = g.grad(ib);
          if (kind == Elementwise::Mul) {
            auto x = g.value(ia).values();
            for (std::size_t i = 0; i < up.size(); ++i) gb[i] += up[i] * x[i];
          } else if (kind == Elementwise::Sub) {
            for (std::size_t i = 0; i < up.size(); ++i) gb[i] -= up[i];
          } else {
            for (std::size_t i = 0; i < up.size(); ++i) gb[i] += up[i];
          }
        }
      },
      name);
}

Expr unary(Expr x, Elementwise kind) {
  const char* name = kind == Elementwise::Sigmoid ? "sigmoid"
                     : kind == Elementwise::Tanh  ? "tanh"
                                                  : "relu";
  const Tensor& xv = x.value();
  Tensor out = same_shape(xv);
  auto o = out.values();
  auto in = xv.values();
  for (std::size_t i = 0; i < o.size(); ++i) {
    switch (kind) {
      case Elementwise::Sigmoid: o[i] = sigmoid_value(in[i]); break;
      case Elementwise::Tanh: o[i] = std::tanh(in[i]); break;
      default: o[i] = in[i] > 0.0 ? in[i] : 0.0; break;
    }
  }
  const std::size_t ix = x.id();
  Expr inputs[] = {x};
  return x.graph().define(
      std::move(out), inputs,
      [ix, kind](Graph& g, std::size_t self) {
        auto up = g.grad(self);
        auto y = g.value(self).values();
        auto gx = g.grad(ix);
        switch (kind) {
          case Elementwise::Sigmoid:
            for (std::size_t i = 0; i < up.size(); ++i) gx[i] += up[i] * y[i] * (1.0 - y[i]);
            break;
          case Elementwise::Tanh:
            for (std::size_t i = 0; i < up.size(); ++i) gx[i] += up[i] * (1.0 - y[i] * y[i]);
            break;
          default:
            for (std::size_t i = 0; i < up.size(); ++i) gx[i] += y[i] > 0.0 ? up[i] : 0.0;
            break;
        }
      },
      name);
}

}  // namespace

Expr add(Expr a, Expr b) { return binary(a, b, Elementwise::Add); }
Expr sub(Expr a, Expr b) { return binary(a, b, Elementwise::Sub); }
Expr mul(Expr a, Expr b) { return binary(a, b, Elementwise::Mul); }
Expr sigmoid(Expr x) { return unary(x, Elementwise::Sigmoid); }
Expr tanh(Expr x) { return unary(x, Elementwise::Tanh); }
Expr relu(Expr x) { return unary(x, Elementwise::Relu); }

Expr elementwise(Elementwise kind, std::span<const Expr> args) {
  const bool is_binary = kind == Elementwise::Add || kind == Elementwise::Sub ||
                         kind == Elementwise::Mul;
  const std::size_t arity = is_binary ? 2 : 1;
  if (args.size() != arity) {
    throw ArgumentError("elementwise: expected " + std::to_string(arity) +
                        " arguments, got " + std::to_string(args.size()));
  }
  return is_binary ? binary(args[0], args[1], kind) : unary(args[0], kind);
}

Expr add_bias(Expr x, Expr bias) {
  const Tensor& xv = x.value();
  const Tensor& bv = bias.value();
  require_matrix(xv, "add_bias");
  const std::size_t rows = xv.rows(), cols = xv.cols();
  if (bv.size() != cols) {
    throw ShapeError("add_bias: bias " + shape_string(bv.shape()) +
                     " does not match " + shape_string(xv.shape()));
  }
  Tensor out = xv;
  out.drop_grad();
  auto b = bv.values();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out.at(r, c) += b[c];
  }
  const std::size_t ix = x.id(), ibias = bias.id();
  Expr inputs[] = {x, bias};
  return x.graph().define(
      std::move(out), inputs,
      [ix, ibias, rows, cols](Graph& g, std::size_t self) {
        auto up = g.grad(self);
        if (g.needs_grad(ix)) {
          auto gx = g.grad(ix);
          for (std::size_t i = 0; i < up.size(); ++i) gx[i] += up[i];
        }
        if (g.needs_grad(ibias)) {
          auto gb = g.grad(ibias);
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < cols; ++c) gb[c] += up[r * cols + c];
          }
        }
      },
      "add_bias");
}

Expr scale(Expr x, double factor) {
  Tensor out = x.value();
  out.drop_grad();
  for (double& v : out.values()) v *= factor;
  const std::size_t ix = x.id();
  Expr inputs[] = {x};
  return x.graph().define(
      std::move(out), inputs,
      [ix, factor](Graph& g, std::size_t self) {
        auto up = g.grad(self);
        auto gx = g.grad(ix);
        for (std::size_t i = 0; i < up.size(); ++i) gx[i] += factor * up[i];
      },
      "scale");
}

Expr sum(Expr x) {
  double total = 0.0;
  for (double v : x.value().values()) total += v;
  const std::size_t ix = x.id();
  Expr inputs[] = {x};
  return x.graph().define(
      Tensor::scalar(total), inputs,
      [ix](Graph& g, std::size_t self) {
        const double up = g.grad(self)[0];
        for (double& v : g.grad(ix)) v += up;
      },
      "sum");
}

Expr concat(std::span<const Expr> parts, std::size_t axis) {
  if (parts.empty()) throw ArgumentError("concat: empty part list");
  if (axis > 1) throw ArgumentError("concat: axis must be 0 or 1");
  for (Expr p : parts) require_matrix(p.value(), "concat");
  const Tensor& first = parts.front().value();
  std::size_t total = 0;
  for (Expr p : parts) {
    const Tensor& v = p.value();
    const std::size_t fixed = axis == 0 ? v.cols() : v.rows();
    const std::size_t want = axis == 0 ? first.cols() : first.rows();
    if (fixed != want) {
      throw ShapeError("concat: incompatible part " + shape_string(v.shape()) +
                       " with " + shape_string(first.shape()));
    }
    total += axis == 0 ? v.rows() : v.cols();
  }
  const std::size_t rows = axis == 0 ? total : first.rows();
  const std::size_t cols = axis == 0 ? first.cols() : total;
  Tensor out({rows, cols});
  std::vector<std::size_t> ids;
  std::vector<std::size_t> offsets;
  ids.reserve(parts.size());
  offsets.reserve(parts.size());
  std::size_t offset = 0;
  for (Expr p : parts) {
    const Tensor& v = p.value();
    ids.push_back(p.id());
    offsets.push_back(offset);
    for (std::size_t r = 0; r < v.rows(); ++r) {
      for (std::size_t c = 0; c < v.cols(); ++c) {
        if (axis == 0) {
          out.at(offset + r, c) = v.at(r, c);
        } else {
          out.at(r, offset + c) = v.at(r, c);
        }
      }
    }
    offset += axis == 0 ? v.rows() : v.cols();
  }
  return parts.front().graph().define(
      std::move(out), parts,
      [ids = std::move(ids), offsets = std::move(offsets), axis, cols](
          Graph& g, std::size_t self) {
        auto up = g.grad(self);
        for (std::size_t k = 0; k < ids.size(); ++k) {
          if (!g.needs_grad(ids[k])) continue;
          const Tensor& v = g.value(ids[k]);
          auto gp = g.grad(ids[k]);
          const std::size_t pc = v.cols();
          for (std::size_t r = 0; r < v.rows(); ++r) {
            for (std::size_t c = 0; c < pc; ++c) {
              const std::size_t src = axis == 0 ? (offsets[k] + r) * cols + c
                                                : r * cols + offsets[k] + c;
              gp[r * pc + c] += up[src];
            }
          }
        }
      },
      "concat");
}

std::vector<Expr> split_columns(Expr x, std::span<const std::size_t> widths) {
  const Tensor& xv = x.value();
  require_matrix(xv, "split_columns");
  std::size_t total = 0;
  for (std::size_t w : widths) total += w;
  if (total != xv.cols()) {
    throw ShapeError("split_columns: widths sum to " + std::to_string(total) +
                     " but input has " + std::to_string(xv.cols()) + " columns");
  }
  std::vector<Expr> out;
  std::size_t offset = 0;
  const std::size_t rows = xv.rows(), cols = xv.cols();
  for (std::size_t w : widths) {
    Tensor part({rows, w});
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < w; ++c) part.at(r, c) = xv.at(r, offset + c);
    }
    const std::size_t ix = x.id();
    Expr inputs[] = {x};
    out.push_back(x.graph().define(
        std::move(part), inputs,
        [ix, offset, w, rows, cols](Graph& g, std::size_t self) {
          auto up = g.grad(self);
          auto gx = g.grad(ix);
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < w; ++c) gx[r * cols + offset + c] += up[r * w + c];
          }
        },
        "split_columns"));
    offset += w;
  }
  return out;
}

Expr lookup(Expr table, std::span<const int> ids) {
  const Tensor& tv = table.value();
  require_matrix(tv, "lookup");
  if (ids.empty()) throw ArgumentError("lookup: empty id list");
  const std::size_t vocab = tv.rows(), dim = tv.cols();
  for (int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
      throw ArgumentError("lookup: id " + std::to_string(id) +
                          " outside [0, " + std::to_string(vocab) + ")");
    }
  }
  Tensor out({ids.size(), dim});
  for (std::size_t r = 0; r < ids.size(); ++r) {
    const double* src = tv.values().data() + static_cast<std::size_t>(ids[r]) * dim;
    std::copy(src, src + dim, out.values().data() + r * dim);
  }
  const std::size_t it = table.id();
  Expr inputs[] = {table};
  return table.graph().define(
      std::move(out), inputs,
      [it, dim, rows = std::vector<int>(ids.begin(), ids.end())](Graph& g,
                                                                 std::size_t self) {
        auto up = g.grad(self);
        auto gt = g.grad(it);
        for (std::size_t r = 0; r < rows.size(); ++r) {
          double* dst = gt.data() + static_cast<std::size_t>(rows[r]) * dim;
          for (std::size_t c = 0; c < dim; ++c) dst[c] += up[r * dim + c];
        }
      },
      "lookup");
}

Tensor softmax_rows(const Tensor& logits) {
  Tensor probs(logits.shape());
  const std::size_t rows = logits.rows(), cols = logits.cols();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = logits.values().data() + r * cols;
    double* out = probs.values().data() + r * cols;
    const double mx = *std::max_element(in, in + cols);
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      out[c] = std::exp(in[c] - mx);
      total += out[c];
    }
    for (std::size_t c = 0; c < cols; ++c) out[c] /= total;
  }
  return probs;
}

CrossEntropy softmax_cross_entropy(Expr logits, std::span<const int> targets,
                                   std::span<const bool> mask) {
  const Tensor& lv = logits.value();
  require_matrix(lv, "softmax_cross_entropy");
  const std::size_t rows = lv.rows(), cols = lv.cols();
  if (targets.size() != rows) {
    throw ShapeError("softmax_cross_entropy: " + std::to_string(targets.size()) +
                     " targets for " + std::to_string(rows) + " rows");
  }
  if (!mask.empty() && mask.size() != rows) {
    throw ShapeError("softmax_cross_entropy: mask length " +
                     std::to_string(mask.size()) + " for " +
                     std::to_string(rows) + " rows");
  }
  std::vector<bool> active(rows, true);
  std::size_t count = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (!mask.empty()) active[r] = mask[r];
    if (!active[r]) continue;
    ++count;
    if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= cols) {
      throw ArgumentError("softmax_cross_entropy: target " +
                          std::to_string(targets[r]) + " outside [0, " +
                          std::to_string(cols) + ")");
    }
  }
  if (count == 0) throw ArgumentError("softmax_cross_entropy: all rows masked");

  CrossEntropy result;
  result.row_nll.assign(rows, 0.0);
  result.probs = Tensor(lv.shape());
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = lv.values().data() + r * cols;
    double* p = result.probs.values().data() + r * cols;
    const double mx = *std::max_element(in, in + cols);
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      p[c] = std::exp(in[c] - mx);
      z += p[c];
    }
    for (std::size_t c = 0; c < cols; ++c) p[c] /= z;
    if (!active[r]) continue;
    const double nll = std::log(z) - (in[targets[r]] - mx);
    result.row_nll[r] = nll;
    total += nll;
  }
  const double inv = 1.0 / static_cast<double>(count);
  const std::size_t il = logits.id();
  Expr inputs[] = {logits};
  result.loss = logits.graph().define(
      Tensor::scalar(total * inv), inputs,
      [il, cols, inv, probs = result.probs, active,
       tgt = std::vector<int>(targets.begin(), targets.end())](Graph& g,
                                                                std::size_t self) {
        const double up = g.grad(self)[0] * inv;
        auto gl = g.grad(il);
        auto p = probs.values();
        for (std::size_t r = 0; r < active.size(); ++r) {
          if (!active[r]) continue;
          for (std::size_t c = 0; c < cols; ++c) gl[r * cols + c] += up * p[r * cols + c];
          gl[r * cols + static_cast<std::size_t>(tgt[r])] -= up;
        }
      },
      "softmax_cross_entropy");
  return result;
}

Expr dropout(Expr x, double rate, bool training, Rng& rng) {
  if (!(rate >= 0.0) || rate >= 1.0) {
    throw ArgumentError("dropout: rate must lie in [0, 1), got " +
                        std::to_string(rate));
  }
  if (!training || rate == 0.0) return x;
  const double keep = 1.0 - rate;
  const double factor = 1.0 / keep;
  std::vector<double> mask(x.value().size());
  for (double& m : mask) m = uniform01(rng) < keep ? factor : 0.0;
  Tensor out = x.value();
  out.drop_grad();
  auto o = out.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] *= mask[i];
  const std::size_t ix = x.id();
  Expr inputs[] = {x};
  return x.graph().define(
      std::move(out), inputs,
      [ix, mask = std::move(mask)](Graph& g, std::size_t self) {
        auto up = g.grad(self);
        auto gx = g.grad(ix);
        for (std::size_t i = 0; i < up.size(); ++i) gx[i] += up[i] * mask[i];
      },
      "dropout");
}

}  // namespace attrdialog::ad
