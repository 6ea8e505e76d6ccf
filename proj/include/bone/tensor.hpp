#pragma once

// Dense row-major tensors with reverse-mode automatic differentiation.
//
// A Tensor is a shared handle to a graph node. Non-leaf nodes keep a forward
// thunk that can rebuild their value from their parents, which is what the
// recompute (checkpointing) mode uses: dropping an intermediate's buffer
// after the forward pass and rebuilding it on demand during backward yields
// bitwise-identical results because the same thunk runs both times.
//
// Scalar type is a template parameter; f64 is the oracle/test dtype, f32 the
// default training dtype.

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "bone/kernels.hpp"

namespace bone {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

template <typename T>
struct dtype_traits;
template <>
struct dtype_traits<float> {
  static constexpr const char* name = "f32";
};
template <>
struct dtype_traits<double> {
  static constexpr const char* name = "f64";
};

namespace detail {

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  bool has_value = false;
  bool requires_grad = false;
  bool leaf = true;
  std::vector<T> grad;  // materialized only when requires_grad
  std::vector<std::shared_ptr<Node>> parents;
  std::function<std::vector<T>(Node&)> forward_fn;   // non-leaf only
  std::function<void(Node&)> backward_fn;            // non-leaf only

  std::size_t numel() const { return shape_numel(shape); }

  void ensure_value() {
    if (has_value) return;
    if (!forward_fn) throw std::logic_error("node has no value and no forward thunk");
    for (auto& p : parents) p->ensure_value();
    value = forward_fn(*this);
    has_value = true;
  }

  void drop_value() {
    if (leaf || !forward_fn) throw std::logic_error("cannot drop value of a leaf node");
    value.clear();
    value.shrink_to_fit();
    has_value = false;
  }

  void accumulate_grad(const T* g, std::size_t n) {
    if (grad.empty()) grad.assign(numel(), T(0));
    for (std::size_t i = 0; i < n; ++i) grad[i] += g[i];
  }
};

template <typename T>
inline void check_finite(const std::vector<T>& v, const char* op) {
  for (const T& x : v) {
    if (!std::isfinite(x)) {
      throw std::runtime_error(std::string("non-finite value produced by ") + op);
    }
  }
}

}  // namespace detail

template <typename T>
class Tensor {
 public:
  using Node = detail::Node<T>;

  Tensor() = default;

  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false) {
    if (shape_numel(shape) != data.size()) {
      throw std::invalid_argument("shape " + shape_str(shape) +
                                  " does not match buffer of " +
                                  std::to_string(data.size()) + " elements");
    }
    node_ = std::make_shared<Node>();
    node_->shape = std::move(shape);
    node_->value = std::move(data);
    node_->has_value = true;
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    std::vector<T> buf(shape_numel(shape), T(0));
    return Tensor(std::move(shape), std::move(buf), requires_grad);
  }

  static Tensor full(Shape shape, T v, bool requires_grad = false) {
    std::vector<T> buf(shape_numel(shape), v);
    return Tensor(std::move(shape), std::move(buf), requires_grad);
  }

  static Tensor scalar(T v) { return Tensor({}, {v}); }

  static Tensor identity(std::size_t n) {
    Tensor t = zeros({n, n});
    for (std::size_t i = 0; i < n; ++i) t.node_->value[i * n + i] = T(1);
    return t;
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t numel() const { return node_->numel(); }
  bool requires_grad() const { return node_->requires_grad; }
  bool is_leaf() const { return node_->leaf; }
  static constexpr const char* dtype_name() { return dtype_traits<T>::name; }

  const std::vector<T>& data() const {
    node_->ensure_value();
    return node_->value;
  }
  // Mutable leaf access for optimizer updates; graphs built from older values
  // must already have been consumed.
  std::vector<T>& mutable_data() {
    if (!node_->leaf) throw std::logic_error("mutable access is leaf-only");
    return node_->value;
  }

  T item() const {
    if (numel() != 1) throw std::invalid_argument("item() on non-scalar tensor");
    return data()[0];
  }

  bool has_grad() const { return node_ && !node_->grad.empty(); }
  const std::vector<T>& grad() const {
    if (!has_grad()) throw std::logic_error("no gradient accumulated on this tensor");
    return node_->grad;
  }
  void zero_grad() { node_->grad.clear(); }

  std::shared_ptr<Node> node() const { return node_; }
  explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}

 private:
  std::shared_ptr<Node> node_;
};

namespace detail {

// Builds a non-leaf node: runs `fwd` once now and keeps it as the recompute
// thunk. `fwd` must read parent values only through node.parents.
template <typename T>
Tensor<T> make_op(Shape shape, std::vector<std::shared_ptr<Node<T>>> parents,
                  std::function<std::vector<T>(Node<T>&)> fwd,
                  std::function<void(Node<T>&)> bwd) {
  auto n = std::make_shared<Node<T>>();
  n->shape = std::move(shape);
  n->leaf = false;
  n->parents = std::move(parents);
  for (auto& p : n->parents) n->requires_grad = n->requires_grad || p->requires_grad;
  n->forward_fn = std::move(fwd);
  n->backward_fn = std::move(bwd);
  n->value = n->forward_fn(*n);
  n->has_value = true;
  return Tensor<T>(n);
}

}  // namespace detail

// --- shape checks -----------------------------------------------------------

template <typename T>
inline void require_rank(const Tensor<T>& t, std::size_t r, const char* op) {
  if (t.rank() != r) {
    throw std::invalid_argument(std::string(op) + ": expected rank " +
                                std::to_string(r) + ", got shape " +
                                shape_str(t.shape()));
  }
}

// --- ops --------------------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t p = a.dim(0), q = a.dim(1), r = b.dim(1);
  if (b.dim(0) != q) {
    throw std::invalid_argument("matmul: inner dimensions differ, " +
                                shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  auto fwd = [p, q, r](detail::Node<T>& n) {
    std::vector<T> out(p * r);
    kernels::matmul(n.parents[0]->value.data(), n.parents[1]->value.data(),
                    out.data(), p, q, r);
    detail::check_finite(out, "matmul");
    return out;
  };
  auto bwd = [p, q, r](detail::Node<T>& n) {
    auto& pa = *n.parents[0];
    auto& pb = *n.parents[1];
    if (pa.requires_grad) {
      // ga += g * b^T
      pb.ensure_value();
      std::vector<T> bt(r * q);
      for (std::size_t k = 0; k < q; ++k)
        for (std::size_t j = 0; j < r; ++j) bt[j * q + k] = pb.value[k * r + j];
      std::vector<T> ga(p * q);
      kernels::matmul(n.grad.data(), bt.data(), ga.data(), p, r, q);
      pa.accumulate_grad(ga.data(), ga.size());
    }
    if (pb.requires_grad) {
      // gb += a^T * g
      pa.ensure_value();
      std::vector<T> at(q * p);
      for (std::size_t i = 0; i < p; ++i)
        for (std::size_t k = 0; k < q; ++k) at[k * p + i] = pa.value[i * q + k];
      std::vector<T> gb(q * r);
      kernels::matmul(at.data(), n.grad.data(), gb.data(), q, p, r);
      pb.accumulate_grad(gb.data(), gb.size());
    }
  };
  return detail::make_op<T>({p, r}, {a.node(), b.node()}, fwd, bwd);
}

// out[k_,j_] = blocks[k_,j_] · shared[j_]; the shared block is broadcast over
// the leading index.
template <typename T>
Tensor<T> batched_block_matmul(const Tensor<T>& blocks, const Tensor<T>& shared) {
  require_rank(blocks, 4, "batched_block_matmul");
  require_rank(shared, 3, "batched_block_matmul");
  const std::size_t k = blocks.dim(0), j = blocks.dim(1), b = blocks.dim(2);
  if (blocks.dim(3) != b || shared.dim(1) != b || shared.dim(2) != b) {
    throw std::invalid_argument("batched_block_matmul: blocks must be square and equal-sized, " +
                                shape_str(blocks.shape()) + " vs " + shape_str(shared.shape()));
  }
  if (shared.dim(0) != j) {
    throw std::invalid_argument("batched_block_matmul: shared block count " +
                                std::to_string(shared.dim(0)) + " != " + std::to_string(j));
  }
  const std::size_t bb = b * b;
  auto fwd = [k, j, b, bb](detail::Node<T>& n) {
    std::vector<T> out(k * j * bb);
    const auto& bl = n.parents[0]->value;
    const auto& sh = n.parents[1]->value;
    for (std::size_t kk = 0; kk < k; ++kk)
      for (std::size_t jj = 0; jj < j; ++jj)
        kernels::matmul(bl.data() + (kk * j + jj) * bb, sh.data() + jj * bb,
                        out.data() + (kk * j + jj) * bb, b, b, b);
    detail::check_finite(out, "batched_block_matmul");
    return out;
  };
  auto bwd = [k, j, b, bb](detail::Node<T>& n) {
    auto& pbl = *n.parents[0];
    auto& psh = *n.parents[1];
    if (pbl.requires_grad) {
      psh.ensure_value();
      std::vector<T> g(k * j * bb, T(0));
      for (std::size_t kk = 0; kk < k; ++kk)
        for (std::size_t jj = 0; jj < j; ++jj)
          // g_blk = gout_blk * shared[jj]^T
          for (std::size_t x = 0; x < b; ++x)
            for (std::size_t y = 0; y < b; ++y) {
              T acc = T(0);
              for (std::size_t z = 0; z < b; ++z)
                acc += n.grad[(kk * j + jj) * bb + x * b + z] *
                       psh.value[jj * bb + y * b + z];
              g[(kk * j + jj) * bb + x * b + y] = acc;
            }
      pbl.accumulate_grad(g.data(), g.size());
    }
    if (psh.requires_grad) {
      pbl.ensure_value();
      std::vector<T> g(j * bb, T(0));
      for (std::size_t kk = 0; kk < k; ++kk)
        for (std::size_t jj = 0; jj < j; ++jj)
          // g_shared[jj] += blocks[kk,jj]^T * gout_blk
          kernels::matmul_at_strided(pbl.value.data() + (kk * j + jj) * bb, b,
                                     n.grad.data() + (kk * j + jj) * bb, b,
                                     g.data() + jj * bb, b, b, b, b, true);
      psh.accumulate_grad(g.data(), g.size());
    }
  };
  return detail::make_op<T>({k, j, b, b}, {blocks.node(), shared.node()}, fwd, bwd);
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument("add: shape mismatch " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
  }
  const std::size_t n = a.numel();
  auto fwd = [n](detail::Node<T>& nd) {
    std::vector<T> out(n);
    kernels::add(nd.parents[0]->value.data(), nd.parents[1]->value.data(),
                 out.data(), n);
    detail::check_finite(out, "add");
    return out;
  };
  auto bwd = [](detail::Node<T>& nd) {
    for (auto& p : nd.parents)
      if (p->requires_grad) p->accumulate_grad(nd.grad.data(), nd.grad.size());
  };
  return detail::make_op<T>(a.shape(), {a.node(), b.node()}, fwd, bwd);
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument("mul: shape mismatch " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
  }
  const std::size_t n = a.numel();
  auto fwd = [n](detail::Node<T>& nd) {
    std::vector<T> out(n);
    kernels::mul(nd.parents[0]->value.data(), nd.parents[1]->value.data(),
                 out.data(), n);
    detail::check_finite(out, "mul");
    return out;
  };
  auto bwd = [n](detail::Node<T>& nd) {
    auto& pa = *nd.parents[0];
    auto& pb = *nd.parents[1];
    std::vector<T> g(n);
    if (pa.requires_grad) {
      pb.ensure_value();
      kernels::mul(nd.grad.data(), pb.value.data(), g.data(), n);
      pa.accumulate_grad(g.data(), n);
    }
    if (pb.requires_grad) {
      pa.ensure_value();
      kernels::mul(nd.grad.data(), pa.value.data(), g.data(), n);
      pb.accumulate_grad(g.data(), n);
    }
  };
  return detail::make_op<T>(a.shape(), {a.node(), b.node()}, fwd, bwd);
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  const std::size_t n = a.numel();
  auto fwd = [n, s](detail::Node<T>& nd) {
    std::vector<T> out(n);
    kernels::scale(nd.parents[0]->value.data(), s, out.data(), n);
    detail::check_finite(out, "scale");
    return out;
  };
  auto bwd = [n, s](detail::Node<T>& nd) {
    auto& pa = *nd.parents[0];
    if (!pa.requires_grad) return;
    std::vector<T> g(n);
    kernels::scale(nd.grad.data(), s, g.data(), n);
    pa.accumulate_grad(g.data(), n);
  };
  return detail::make_op<T>(a.shape(), {a.node()}, fwd, bwd);
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return add(a, scale(b, T(-1)));
}

// Reinterprets the row-major buffer; never reorders it.
template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape new_shape) {
  if (shape_numel(new_shape) != a.numel()) {
    throw std::invalid_argument("reshape: cannot view " + shape_str(a.shape()) +
                                " as " + shape_str(new_shape));
  }
  auto fwd = [](detail::Node<T>& nd) { return nd.parents[0]->value; };
  auto bwd = [](detail::Node<T>& nd) {
    auto& pa = *nd.parents[0];
    if (pa.requires_grad) pa.accumulate_grad(nd.grad.data(), nd.grad.size());
  };
  return detail::make_op<T>(std::move(new_shape), {a.node()}, fwd, bwd);
}

template <typename T>
Tensor<T> transpose2d(const Tensor<T>& a) {
  require_rank(a, 2, "transpose2d");
  const std::size_t p = a.dim(0), q = a.dim(1);
  auto fwd = [p, q](detail::Node<T>& nd) {
    const auto& v = nd.parents[0]->value;
    std::vector<T> out(p * q);
    for (std::size_t i = 0; i < p; ++i)
      for (std::size_t j = 0; j < q; ++j) out[j * p + i] = v[i * q + j];
    return out;
  };
  auto bwd = [p, q](detail::Node<T>& nd) {
    auto& pa = *nd.parents[0];
    if (!pa.requires_grad) return;
    std::vector<T> g(p * q);
    for (std::size_t j = 0; j < q; ++j)
      for (std::size_t i = 0; i < p; ++i) g[i * q + j] = nd.grad[j * p + i];
    pa.accumulate_grad(g.data(), g.size());
  };
  return detail::make_op<T>({q, p}, {a.node()}, fwd, bwd);
}

// Sums over the given axes (removed from the shape); axes sorted unique.
// Accumulation order is sequential row-major over the input.
template <typename T>
Tensor<T> reduce_sum(const Tensor<T>& a, std::vector<std::size_t> axes) {
  const Shape& in = a.shape();
  std::vector<bool> reduced(in.size(), false);
  for (std::size_t ax : axes) {
    if (ax >= in.size()) throw std::invalid_argument("reduce_sum: axis out of range");
    if (reduced[ax]) throw std::invalid_argument("reduce_sum: duplicate axis");
    reduced[ax] = true;
  }
  Shape out_shape;
  for (std::size_t d = 0; d < in.size(); ++d)
    if (!reduced[d]) out_shape.push_back(in[d]);

  // Row-major strides of the output laid over the kept input dims.
  const std::size_t n_in = a.numel();
  std::vector<std::size_t> out_stride(in.size(), 0);
  {
    std::size_t stride = 1;
    for (std::size_t d = in.size(); d-- > 0;) {
      if (!reduced[d]) {
        out_stride[d] = stride;
        stride *= in[d];
      }
    }
  }
  auto map_index = [in, out_stride](std::size_t flat) {
    std::size_t out = 0;
    for (std::size_t d = in.size(); d-- > 0;) {
      std::size_t coord = flat % in[d];
      flat /= in[d];
      out += coord * out_stride[d];
    }
    return out;
  };

  auto fwd = [n_in, out_n = shape_numel(out_shape), map_index](detail::Node<T>& nd) {
    std::vector<T> out(out_n, T(0));
    const auto& v = nd.parents[0]->value;
    for (std::size_t i = 0; i < n_in; ++i) out[map_index(i)] += v[i];
    detail::check_finite(out, "reduce_sum");
    return out;
  };
  auto bwd = [n_in, map_index](detail::Node<T>& nd) {
    auto& pa = *nd.parents[0];
    if (!pa.requires_grad) return;
    std::vector<T> g(n_in);
    for (std::size_t i = 0; i < n_in; ++i) g[i] = nd.grad[map_index(i)];
    pa.accumulate_grad(g.data(), n_in);
  };
  return detail::make_op<T>(out_shape, {a.node()}, fwd, bwd);
}

template <typename T>
Tensor<T> reduce_sum_all(const Tensor<T>& a) {
  std::vector<std::size_t> axes(a.rank());
  for (std::size_t i = 0; i < axes.size(); ++i) axes[i] = i;
  return reduce_sum(a, axes);
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& a) {
  const std::size_t n = a.numel();
  auto fwd = [n](detail::Node<T>& nd) {
    std::vector<T> out(n);
    const auto& v = nd.parents[0]->value;
    for (std::size_t i = 0; i < n; ++i) out[i] = std::tanh(v[i]);
    return out;
  };
  auto bwd = [n](detail::Node<T>& nd) {
    auto& pa = *nd.parents[0];
    if (!pa.requires_grad) return;
    nd.ensure_value();  // d tanh = 1 - y^2 in terms of the output
    std::vector<T> g(n);
    for (std::size_t i = 0; i < n; ++i)
      g[i] = nd.grad[i] * (T(1) - nd.value[i] * nd.value[i]);
    pa.accumulate_grad(g.data(), n);
  };
  return detail::make_op<T>(a.shape(), {a.node()}, fwd, bwd);
}

// --- backward ---------------------------------------------------------------

// Runs reverse-mode accumulation from a scalar loss. Visits each reachable
// grad-requiring node exactly once, in reverse topological order; gradients
// land on the leaf tensors' grad buffers.
template <typename T>
void backward(const Tensor<T>& loss) {
  if (loss.numel() != 1) {
    throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) {
    throw std::invalid_argument("backward: loss is detached from all trainable tensors");
  }
  using NodeT = detail::Node<T>;
  std::vector<NodeT*> order;
  std::unordered_set<NodeT*> seen;
  // Iterative DFS post-order over grad-requiring subgraph.
  std::vector<std::pair<NodeT*, std::size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      NodeT* p = node->parents[next++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  loss.node()->grad.assign(1, T(1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    NodeT* node = *it;
    if (node->backward_fn && !node->grad.empty()) node->backward_fn(*node);
  }
  // Intermediate grads are scratch; keep only leaf gradients.
  for (NodeT* node : order)
    if (!node->leaf) node->grad.clear();
}

// --- recompute support ------------------------------------------------------

// Drops a non-leaf intermediate's buffer; backward rebuilds it on demand.
template <typename T>
void drop_for_recompute(const Tensor<T>& t) {
  t.node()->drop_value();
}

}  // namespace bone
