#pragma once

// Reverse-mode gradient tape over tensor-valued nodes. Forward values are
// computed eagerly as nodes are appended, so construction order is the
// topological order. backward() walks the tape in reverse and returns exact
// gradients for every leaf; the graph itself is never mutated by backward.

#include <cstdint>
#include <unordered_map>
#include <vector>

#include "adpo/tensor.hpp"

namespace adpo {

using NodeId = int;

enum class OpKind {
  leaf,
  constant,
  add,
  sub,
  mul,
  matvec,
  tanh_fn,
  sigmoid_fn,
  log_softmax,
  softplus,
  sum,
  mean,
  mean_rows,
  scale,
  concat_rows,
  gather_rows,
  pick,
  reshape,
};

struct GradNode {
  OpKind op = OpKind::constant;
  NodeId a = -1;
  NodeId b = -1;
  double scalar_arg = 0.0;
  std::vector<int> indices;  // gather ids / pick index
  Tensor value;
};

struct GradResult {
  std::unordered_map<NodeId, Tensor> leaf_grads;

  const Tensor& at(NodeId id) const {
    auto it = leaf_grads.find(id);
    if (it == leaf_grads.end()) throw std::invalid_argument("GradResult: node is not a leaf");
    return it->second;
  }
};

class GradGraph {
 public:
  NodeId leaf(Tensor value) {
    NodeId id = push({OpKind::leaf, -1, -1, 0.0, {}, std::move(value)});
    leaves_.push_back(id);
    return id;
  }

  NodeId constant(Tensor value) { return push({OpKind::constant, -1, -1, 0.0, {}, std::move(value)}); }

  NodeId add(NodeId a, NodeId b) { return binary(OpKind::add, a, b, ten::add(val(a), val(b))); }
  NodeId sub(NodeId a, NodeId b) { return binary(OpKind::sub, a, b, ten::sub(val(a), val(b))); }
  NodeId mul(NodeId a, NodeId b) { return binary(OpKind::mul, a, b, ten::mul(val(a), val(b))); }
  NodeId matvec(NodeId m, NodeId x) { return binary(OpKind::matvec, m, x, ten::matvec(val(m), val(x))); }
  NodeId tanh(NodeId a) { return unary(OpKind::tanh_fn, a, ten::tanh_ew(val(a))); }
  NodeId sigmoid(NodeId a) { return unary(OpKind::sigmoid_fn, a, ten::sigmoid_ew(val(a))); }
  NodeId log_softmax(NodeId a) { return unary(OpKind::log_softmax, a, ten::log_softmax(val(a))); }
  NodeId softplus(NodeId a) { return unary(OpKind::softplus, a, ten::softplus_ew(val(a))); }
  NodeId sum(NodeId a) { return unary(OpKind::sum, a, ten::sum(val(a))); }
  NodeId mean(NodeId a) { return unary(OpKind::mean, a, ten::mean(val(a))); }
  NodeId mean_rows(NodeId a) { return unary(OpKind::mean_rows, a, ten::mean_rows(val(a))); }

  NodeId scale(NodeId a, double c) {
    GradNode n{OpKind::scale, check(a), -1, c, {}, ten::scale(val(a), c)};
    return push(std::move(n));
  }

  NodeId concat_rows(NodeId a, NodeId b) {
    return binary(OpKind::concat_rows, a, b, ten::concat_rows(val(a), val(b)));
  }

  NodeId gather_rows(NodeId m, std::vector<int> ids) {
    GradNode n{OpKind::gather_rows, check(m), -1, 0.0, std::move(ids), {}};
    n.value = ten::gather_rows(val(n.a), n.indices);
    return push(std::move(n));
  }

  NodeId pick(NodeId x, int i) {
    GradNode n{OpKind::pick, check(x), -1, 0.0, {i}, ten::pick(val(x), i)};
    return push(std::move(n));
  }

  NodeId reshape(NodeId a, int rows, int cols) {
    GradNode n{OpKind::reshape, check(a), -1, 0.0, {}, ten::reshape(val(a), rows, cols)};
    return push(std::move(n));
  }

  const Tensor& value(NodeId id) const { return nodes_[static_cast<std::size_t>(check(id))].value; }
  std::size_t size() const { return nodes_.size(); }
  const std::vector<NodeId>& leaves() const { return leaves_; }

  GradResult backward(NodeId out) const {
    check(out);
    const Tensor& ov = value(out);
    if (!ov.is_scalar())
      throw std::invalid_argument("backward: output must be scalar, got " + ov.shape_str());

    std::vector<Tensor> adj(nodes_.size());
    for (std::size_t i = 0; i < nodes_.size(); ++i)
      adj[i] = Tensor(nodes_[i].value.rows, nodes_[i].value.cols);
    adj[static_cast<std::size_t>(out)].v[0] = 1.0;

    for (NodeId id = out; id >= 0; --id) {
      const GradNode& n = nodes_[static_cast<std::size_t>(id)];
      const Tensor& g = adj[static_cast<std::size_t>(id)];
      switch (n.op) {
        case OpKind::leaf:
        case OpKind::constant:
          break;
        case OpKind::add:
          accumulate(adj, n.a, g, 1.0);
          accumulate(adj, n.b, g, 1.0);
          break;
        case OpKind::sub:
          accumulate(adj, n.a, g, 1.0);
          accumulate(adj, n.b, g, -1.0);
          break;
        case OpKind::mul: {
          Tensor& da = adj[static_cast<std::size_t>(n.a)];
          Tensor& db = adj[static_cast<std::size_t>(n.b)];
          const Tensor& av = nodes_[static_cast<std::size_t>(n.a)].value;
          const Tensor& bv = nodes_[static_cast<std::size_t>(n.b)].value;
          for (int i = 0; i < g.size(); ++i) {
            da.v[i] += g.v[i] * bv.v[i];
            db.v[i] += g.v[i] * av.v[i];
          }
          break;
        }
        case OpKind::matvec: {
          Tensor& dm = adj[static_cast<std::size_t>(n.a)];
          Tensor& dx = adj[static_cast<std::size_t>(n.b)];
          const Tensor& m = nodes_[static_cast<std::size_t>(n.a)].value;
          const Tensor& x = nodes_[static_cast<std::size_t>(n.b)].value;
          for (int i = 0; i < m.rows; ++i) {
            double gi = g.v[i];
            for (int j = 0; j < m.cols; ++j) {
              dm.at(i, j) += gi * x.v[j];
              dx.v[j] += m.at(i, j) * gi;
            }
          }
          break;
        }
        case OpKind::tanh_fn: {
          Tensor& da = adj[static_cast<std::size_t>(n.a)];
          for (int i = 0; i < g.size(); ++i) {
            double y = n.value.v[i];
            da.v[i] += g.v[i] * (1.0 - y * y);
          }
          break;
        }
        case OpKind::sigmoid_fn: {
          Tensor& da = adj[static_cast<std::size_t>(n.a)];
          for (int i = 0; i < g.size(); ++i) {
            double y = n.value.v[i];
            da.v[i] += g.v[i] * y * (1.0 - y);
          }
          break;
        }
        case OpKind::log_softmax: {
          Tensor& da = adj[static_cast<std::size_t>(n.a)];
          double gsum = 0.0;
          for (double x : g.v) gsum += x;
          for (int i = 0; i < g.size(); ++i)
            da.v[i] += g.v[i] - std::exp(n.value.v[i]) * gsum;
          break;
        }
        case OpKind::softplus: {
          Tensor& da = adj[static_cast<std::size_t>(n.a)];
          const Tensor& x = nodes_[static_cast<std::size_t>(n.a)].value;
          for (int i = 0; i < g.size(); ++i)
            da.v[i] += g.v[i] * ten::sigmoid_scalar(x.v[i]);
          break;
        }
        case OpKind::sum: {
          Tensor& da = adj[static_cast<std::size_t>(n.a)];
          for (double& x : da.v) x += g.v[0];
          break;
        }
        case OpKind::mean: {
          Tensor& da = adj[static_cast<std::size_t>(n.a)];
          double s = g.v[0] / da.size();
          for (double& x : da.v) x += s;
          break;
        }
        case OpKind::mean_rows: {
          Tensor& da = adj[static_cast<std::size_t>(n.a)];
          double inv = 1.0 / da.rows;
          for (int i = 0; i < da.rows; ++i)
            for (int j = 0; j < da.cols; ++j) da.at(i, j) += g.v[j] * inv;
          break;
        }
        case OpKind::scale:
          accumulate(adj, n.a, g, n.scalar_arg);
          break;
        case OpKind::concat_rows: {
          Tensor& da = adj[static_cast<std::size_t>(n.a)];
          Tensor& db = adj[static_cast<std::size_t>(n.b)];
          for (std::size_t i = 0; i < da.v.size(); ++i) da.v[i] += g.v[i];
          for (std::size_t i = 0; i < db.v.size(); ++i) db.v[i] += g.v[da.v.size() + i];
          break;
        }
        case OpKind::gather_rows: {
          Tensor& da = adj[static_cast<std::size_t>(n.a)];
          for (std::size_t r = 0; r < n.indices.size(); ++r)
            for (int j = 0; j < da.cols; ++j)
              da.at(n.indices[r], j) += g.at(static_cast<int>(r), j);
          break;
        }
        case OpKind::pick: {
          Tensor& da = adj[static_cast<std::size_t>(n.a)];
          da.v[static_cast<std::size_t>(n.indices[0])] += g.v[0];
          break;
        }
        case OpKind::reshape: {
          Tensor& da = adj[static_cast<std::size_t>(n.a)];
          for (int i = 0; i < g.size(); ++i) da.v[i] += g.v[i];
          break;
        }
      }
    }

    GradResult res;
    for (NodeId id : leaves_) res.leaf_grads.emplace(id, std::move(adj[static_cast<std::size_t>(id)]));
    return res;
  }

 private:
  const Tensor& val(NodeId id) const { return nodes_[static_cast<std::size_t>(check(id))].value; }

  NodeId check(NodeId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size())
      throw std::invalid_argument("GradGraph: bad node id " + std::to_string(id));
    return id;
  }

  NodeId push(GradNode n) {
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size() - 1);
  }

  NodeId unary(OpKind op, NodeId a, Tensor value) {
    return push({op, check(a), -1, 0.0, {}, std::move(value)});
  }

  NodeId binary(OpKind op, NodeId a, NodeId b, Tensor value) {
    return push({op, check(a), check(b), 0.0, {}, std::move(value)});
  }

  static void accumulate(std::vector<Tensor>& adj, NodeId target, const Tensor& g, double c) {
    Tensor& t = adj[static_cast<std::size_t>(target)];
    for (int i = 0; i < g.size(); ++i) t.v[i] += c * g.v[i];
  }

  std::vector<GradNode> nodes_;
  std::vector<NodeId> leaves_;
};

}  // namespace adpo
