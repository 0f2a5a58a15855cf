#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "tate/numerics/tensor.hpp"

namespace tate {

class Node;
using Var = std::shared_ptr<Node>;

/// A vertex of the reverse-mode graph.
///
/// Leaves with requires_grad set are parameters; their gradient slot persists
/// across graphs and accumulates until zero_grad(). Interior nodes are built
/// fresh by every forward pass.
class Node {
 public:
  Node(Tensor value, bool requires_grad, std::string name = {})
      : value(std::move(value)), requires_grad(requires_grad), name(std::move(name)) {}

  Tensor value;
  Tensor grad;  // empty until first touched
  bool requires_grad = false;
  std::string name;
  std::vector<Var> parents;
  std::function<void(Node&)> backprop;

  bool is_leaf() const noexcept { return parents.empty(); }
  bool has_grad() const noexcept { return !grad.empty(); }

  Tensor& grad_slot() {
    if (grad.empty()) grad = Tensor(value.shape());
    return grad;
  }

  void zero_grad() {
    if (!grad.empty()) grad.fill(0.0);
  }
};

inline Var constant(Tensor value) { return std::make_shared<Node>(std::move(value), false); }

inline Var parameter(Tensor value, std::string name = {}) {
  return std::make_shared<Node>(std::move(value), true, std::move(name));
}

/// Value-only copy cut from the graph.
inline Var detach(const Var& v) { return constant(v->value); }

namespace testing {
// Scales the matmul gradient routed to its right operand. Only the gradient
// checker's negative control flips this.
inline double& matmul_rhs_grad_scale() {
  thread_local double scale = 1.0;
  return scale;
}
}  // namespace testing

inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}

/// While alive, operations on this thread record no graph (inference only).
class NoGradGuard {
 public:
  NoGradGuard() : previous_(grad_mode_flag()) { grad_mode_flag() = false; }
  ~NoGradGuard() { grad_mode_flag() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

namespace detail {

inline Var make_result(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backprop) {
  bool needs = false;
  if (!grad_mode_flag()) return std::make_shared<Node>(std::move(value), false);
  for (const auto& p : parents) needs = needs || p->requires_grad;
  auto out = std::make_shared<Node>(std::move(value), needs);
  if (needs) {
    out->parents = std::move(parents);
    out->backprop = std::move(backprop);
  }
  return out;
}

inline void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
}

inline void require_matrix(const char* op, const Tensor& a) {
  if (a.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a rank-2 tensor, got " + shape_string(a.shape()));
  }
}

template <typename Fwd, typename Deriv>
Var unary(const Var& x, Fwd fwd, Deriv deriv) {
  Tensor out(x->value.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(x->value[i]);
  return make_result(std::move(out), {x}, [deriv](Node& self) {
    Node& in = *self.parents[0];
    if (!in.requires_grad) return;
    Tensor& g = in.grad_slot();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * deriv(in.value[i], self.value[i]);
  });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

inline Var matmul(const Var& a, const Var& b) {
  detail::require_matrix("matmul", a->value);
  detail::require_matrix("matmul", b->value);
  const std::size_t m = a->value.rows(), k = a->value.cols(), n = b->value.cols();
  if (b->value.rows() != k) {
    throw DimensionError("matmul: inner dimensions disagree for " + shape_string(a->value.shape()) +
                         " x " + shape_string(b->value.shape()));
  }
  Tensor out({m, n});
  kernels::gemm_acc(a->value.storage().data(), b->value.storage().data(), out.storage().data(), m, k, n);
  return detail::make_result(std::move(out), {a, b}, [m, k, n](Node& self) {
    Node& lhs = *self.parents[0];
    Node& rhs = *self.parents[1];
    if (lhs.requires_grad) {
      kernels::gemm_nt_acc(self.grad.storage().data(), rhs.value.storage().data(),
                           lhs.grad_slot().storage().data(), m, n, k);
    }
    if (rhs.requires_grad) {
      const double scale = testing::matmul_rhs_grad_scale();
      if (scale == 1.0) {
        kernels::gemm_tn_acc(lhs.value.storage().data(), self.grad.storage().data(),
                             rhs.grad_slot().storage().data(), m, k, n);
      } else {
        Tensor tmp({k, n});
        kernels::gemm_tn_acc(lhs.value.storage().data(), self.grad.storage().data(), tmp.storage().data(),
                             m, k, n);
        Tensor& g = rhs.grad_slot();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += scale * tmp[i];
      }
    }
  });
}

inline Var transpose(const Var& a) {
  detail::require_matrix("transpose", a->value);
  const std::size_t r = a->value.rows(), c = a->value.cols();
  Tensor out({c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out(j, i) = a->value(i, j);
  return detail::make_result(std::move(out), {a}, [r, c](Node& self) {
    Node& in = *self.parents[0];
    Tensor& g = in.grad_slot();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) g(i, j) += self.grad(j, i);
  });
}

// ---------------------------------------------------------------------------
// Elementwise arithmetic

/// a + b. b may also be a single row broadcast over every row of a (bias add).
inline Var add(const Var& a, const Var& b) {
  const Tensor& av = a->value;
  const Tensor& bv = b->value;
  if (av.same_shape(bv)) {
    Tensor out = av;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
    return detail::make_result(std::move(out), {a, b}, [](Node& self) {
      for (int s = 0; s < 2; ++s) {
        Node& in = *self.parents[s];
        if (!in.requires_grad) continue;
        Tensor& g = in.grad_slot();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
      }
    });
  }
  if (av.rank() == 2 && bv.rows() == 1 && bv.cols() == av.cols()) {
    const std::size_t rows = av.rows(), cols = av.cols();
    Tensor out = av;
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) out(r, c) += bv[c];
    return detail::make_result(std::move(out), {a, b}, [rows, cols](Node& self) {
      Node& lhs = *self.parents[0];
      Node& rhs = *self.parents[1];
      if (lhs.requires_grad) {
        Tensor& g = lhs.grad_slot();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
      }
      if (rhs.requires_grad) {
        Tensor& g = rhs.grad_slot();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < cols; ++c) g[c] += self.grad(r, c);
      }
    });
  }
  throw DimensionError("add: incompatible shapes " + shape_string(av.shape()) + " and " +
                       shape_string(bv.shape()));
}

inline Var sub(const Var& a, const Var& b) {
  detail::require_same_shape("sub", a->value, b->value);
  Tensor out = a->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b->value[i];
  return detail::make_result(std::move(out), {a, b}, [](Node& self) {
    for (int s = 0; s < 2; ++s) {
      Node& in = *self.parents[s];
      if (!in.requires_grad) continue;
      const double sign = s == 0 ? 1.0 : -1.0;
      Tensor& g = in.grad_slot();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += sign * self.grad[i];
    }
  });
}

inline Var mul(const Var& a, const Var& b) {
  detail::require_same_shape("mul", a->value, b->value);
  Tensor out = a->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b->value[i];
  return detail::make_result(std::move(out), {a, b}, [](Node& self) {
    Node& lhs = *self.parents[0];
    Node& rhs = *self.parents[1];
    if (lhs.requires_grad) {
      Tensor& g = lhs.grad_slot();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * rhs.value[i];
    }
    if (rhs.requires_grad) {
      Tensor& g = rhs.grad_slot();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * lhs.value[i];
    }
  });
}

/// Elementwise a / b; b must be nonzero everywhere.
inline Var div(const Var& a, const Var& b) {
  detail::require_same_shape("div", a->value, b->value);
  Tensor out = a->value;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (b->value[i] == 0.0) throw DomainError("division by zero");
    out[i] /= b->value[i];
  }
  return detail::make_result(std::move(out), {a, b}, [](Node& self) {
    Node& num = *self.parents[0];
    Node& den = *self.parents[1];
    if (num.requires_grad) {
      Tensor& g = num.grad_slot();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] / den.value[i];
    }
    if (den.requires_grad) {
      Tensor& g = den.grad_slot();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i] * self.value[i] / den.value[i];
    }
  });
}

inline Var scale(const Var& a, double factor) {
  return detail::unary(
      a, [factor](double x) { return factor * x; }, [factor](double, double) { return factor; });
}

inline Var add_scalar(const Var& a, double c) {
  return detail::unary(
      a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

inline Var relu(const Var& a) {
  return detail::unary(
      a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

inline Var sigmoid(const Var& a) {
  return detail::unary(
      a,
      [](double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

inline Var abs(const Var& a) {
  return detail::unary(
      a, [](double x) { return std::abs(x); },
      [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

inline Var exp(const Var& a) {
  return detail::unary(
      a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

/// Natural log; every entry must be strictly positive (add an epsilon first).
inline Var log(const Var& a) {
  for (double v : a->value.values()) {
    if (!(v > 0.0)) throw DomainError("log of non-positive value " + std::to_string(v));
  }
  return detail::unary(
      a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

/// log(max(x, floor)); zero gradient where the floor is active.
inline Var log_floor(const Var& a, double floor) {
  if (!(floor > 0.0)) throw DomainError("log_floor needs a positive floor");
  return detail::unary(
      a, [floor](double x) { return std::log(std::max(x, floor)); },
      [floor](double x, double) { return x > floor ? 1.0 / x : 0.0; });
}

inline Var sqrt(const Var& a) {
  for (double v : a->value.values()) {
    if (!(v > 0.0)) throw DomainError("sqrt of non-positive value " + std::to_string(v));
  }
  return detail::unary(
      a, [](double x) { return std::sqrt(x); }, [](double, double y) { return 0.5 / y; });
}

// ---------------------------------------------------------------------------
// Reductions

inline Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a->value.values()) s += v;
  return detail::make_result(Tensor::scalar(s), {a}, [](Node& self) {
    Node& in = *self.parents[0];
    Tensor& g = in.grad_slot();
    const double up = self.grad[0];
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += up;
  });
}

inline Var mean(const Var& a) { return scale(sum(a), 1.0 / static_cast<double>(a->value.size())); }

/// Mean over the rows of a [n x d] sequence, giving [1 x d].
inline Var mean_pool(const Var& a) {
  detail::require_matrix("mean_pool", a->value);
  const std::size_t rows = a->value.rows(), cols = a->value.cols();
  Tensor out({1, cols});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[c] += a->value(r, c);
  const double inv = 1.0 / static_cast<double>(rows);
  for (std::size_t c = 0; c < cols; ++c) out[c] *= inv;
  return detail::make_result(std::move(out), {a}, [rows, cols, inv](Node& self) {
    Tensor& g = self.parents[0]->grad_slot();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) g(r, c) += inv * self.grad[c];
  });
}

// ---------------------------------------------------------------------------
// Softmax

/// Softmax along `axis` (0 or 1 for matrices, 0 for vectors), max-subtracted.
inline Var softmax(const Var& a, std::size_t axis) {
  const Tensor& x = a->value;
  if (x.rank() == 0 || x.rank() > 2 || axis >= x.rank()) {
    throw DimensionError("softmax: axis " + std::to_string(axis) + " invalid for " + shape_string(x.shape()));
  }
  // Express both layouts as (outer, length, stride) lanes.
  std::size_t outer, length, stride, outer_step;
  if (x.rank() == 1) {
    outer = 1, length = x.size(), stride = 1, outer_step = 0;
  } else if (axis == 1) {
    outer = x.rows(), length = x.cols(), stride = 1, outer_step = x.cols();
  } else {
    outer = x.cols(), length = x.rows(), stride = x.cols(), outer_step = 1;
  }
  Tensor out(x.shape());
  for (std::size_t o = 0; o < outer; ++o) {
    const std::size_t base = o * outer_step;
    double mx = x[base];
    for (std::size_t i = 1; i < length; ++i) mx = std::max(mx, x[base + i * stride]);
    double total = 0.0;
    for (std::size_t i = 0; i < length; ++i) {
      const double e = std::exp(x[base + i * stride] - mx);
      out[base + i * stride] = e;
      total += e;
    }
    for (std::size_t i = 0; i < length; ++i) out[base + i * stride] /= total;
  }
  return detail::make_result(std::move(out), {a}, [outer, length, stride, outer_step](Node& self) {
    Tensor& g = self.parents[0]->grad_slot();
    const Tensor& y = self.value;
    const Tensor& gy = self.grad;
    for (std::size_t o = 0; o < outer; ++o) {
      const std::size_t base = o * outer_step;
      double dot = 0.0;
      for (std::size_t i = 0; i < length; ++i) dot += gy[base + i * stride] * y[base + i * stride];
      for (std::size_t i = 0; i < length; ++i) {
        const std::size_t idx = base + i * stride;
        g[idx] += y[idx] * (gy[idx] - dot);
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Structural ops

/// Concatenation of matrices along columns (axis 1, equal row counts) or rows
/// (axis 0, equal column counts).
inline Var concat(const std::vector<Var>& parts, std::size_t axis = 1) {
  if (parts.empty()) throw DimensionError("concat: no operands");
  if (axis > 1) throw DimensionError("concat: axis must be 0 or 1");
  for (const auto& p : parts) detail::require_matrix("concat", p->value);
  const std::size_t rows0 = parts[0]->value.rows(), cols0 = parts[0]->value.cols();
  std::size_t total = 0;
  for (const auto& p : parts) {
    const bool ok = axis == 1 ? p->value.rows() == rows0 : p->value.cols() == cols0;
    if (!ok) {
      throw DimensionError("concat: incompatible operand " + shape_string(p->value.shape()) + " with " +
                           shape_string(parts[0]->value.shape()));
    }
    total += axis == 1 ? p->value.cols() : p->value.rows();
  }
  if (axis == 0) {
    Tensor out({total, cols0});
    std::size_t offset = 0;
    for (const auto& p : parts) {
      std::copy(p->value.storage().begin(), p->value.storage().end(), out.storage().begin() + offset);
      offset += p->value.size();
    }
    return detail::make_result(std::move(out), parts, [](Node& self) {
      std::size_t offset = 0;
      for (auto& p : self.parents) {
        if (p->requires_grad) {
          Tensor& g = p->grad_slot();
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[offset + i];
        }
        offset += p->value.size();
      }
    });
  }
  Tensor out({rows0, total});
  std::size_t col = 0;
  for (const auto& p : parts) {
    const std::size_t w = p->value.cols();
    for (std::size_t r = 0; r < rows0; ++r)
      for (std::size_t c = 0; c < w; ++c) out(r, col + c) = p->value(r, c);
    col += w;
  }
  return detail::make_result(std::move(out), parts, [rows0](Node& self) {
    std::size_t col = 0;
    for (auto& p : self.parents) {
      const std::size_t w = p->value.cols();
      if (p->requires_grad) {
        Tensor& g = p->grad_slot();
        for (std::size_t r = 0; r < rows0; ++r)
          for (std::size_t c = 0; c < w; ++c) g(r, c) += self.grad(r, col + c);
      }
      col += w;
    }
  });
}

/// Columns [begin, end) of a matrix.
inline Var slice(const Var& a, std::size_t begin, std::size_t end) {
  detail::require_matrix("slice", a->value);
  const std::size_t rows = a->value.rows(), cols = a->value.cols();
  if (begin >= end || end > cols) {
    throw DimensionError("slice: columns [" + std::to_string(begin) + ", " + std::to_string(end) +
                         ") out of range for " + shape_string(a->value.shape()));
  }
  const std::size_t w = end - begin;
  Tensor out({rows, w});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < w; ++c) out(r, c) = a->value(r, begin + c);
  return detail::make_result(std::move(out), {a}, [rows, begin, w](Node& self) {
    Tensor& g = self.parents[0]->grad_slot();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < w; ++c) g(r, begin + c) += self.grad(r, c);
  });
}

/// Inverted dropout. Identity outside training or when p == 0.
template <typename Rng>
Var dropout(const Var& a, double p, Rng* rng, bool training) {
  if (!training || p <= 0.0 || rng == nullptr) return a;
  if (p >= 1.0) throw ContractError("dropout rate must be < 1");
  std::bernoulli_distribution keep(1.0 - p);
  Tensor mask(a->value.shape());
  const double inv = 1.0 / (1.0 - p);
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = keep(*rng) ? inv : 0.0;
  return mul(a, constant(std::move(mask)));
}

// ---------------------------------------------------------------------------
// Backward pass

/// Reverse-mode sweep from a scalar root. Interior adjoints are rebuilt on
/// every call; leaf gradients accumulate. Returns the parameter leaves reached.
inline std::vector<Var> backward(const Var& root) {
  if (root->value.size() != 1) {
    throw ContractError("backward requires a scalar root, got " + shape_string(root->value.shape()));
  }
  std::vector<Var> reached;
  if (!root->requires_grad) return reached;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.get(), 0}};
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node* n : order) {
    if (!n->is_leaf()) {
      n->grad_slot().fill(0.0);
    }
  }
  root->grad_slot()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (!n->is_leaf() && n->backprop) n->backprop(*n);
  }

  // Collect the leaves as shared handles via their consumers.
  std::unordered_set<Node*> seen;
  for (Node* n : order) {
    for (const Var& p : n->parents) {
      if (p->is_leaf() && p->requires_grad && seen.insert(p.get()).second) reached.push_back(p);
    }
  }
  if (root->is_leaf()) reached.push_back(root);
  return reached;
}

}  // namespace tate
