#pragma once

#include <algorithm>
#include <cstdint>
#include <vector>

#include "pixeldyn/tensor.hpp"

namespace pixeldyn {

// Reverse-mode autodiff over a dynamically built tape. Nodes are appended in
// evaluation order (define-by-run), so node ids are already a topological
// order and backward is a single reverse sweep. Gradients only flow into
// Param leaves; Constant leaves are skipped.

enum class Op : uint8_t {
  Constant,
  Param,
  Add,
  Sub,
  Mul,
  Div,
  MatMul,
  Transpose,
  Tanh,
  Sigmoid,
  Exp,
  Log,
  Sum,
  ConcatRows,
  Slice,
  Clamp,
  TileCols,
};

struct Node {
  Op op;
  int a = -1, b = -1;
  Tensor val;
  Tensor grad;  // empty until backward touches it
  int r0 = 0, r1 = 0, c0 = 0, c1 = 0;
  double lo = 0.0, hi = 0.0;
};

class Graph;

struct Var {
  Graph* g = nullptr;
  int id = -1;
  bool valid() const { return g != nullptr && id >= 0; }
  const Tensor& val() const;
  int rows() const { return val().rows(); }
  int cols() const { return val().cols(); }
};

namespace detail {

constexpr size_t kOmpThreshold = 1 << 15;

template <typename F>
inline void ew(size_t n, F&& f) {
#pragma omp parallel for schedule(static) if (n >= kOmpThreshold)
  for (int64_t i = 0; i < static_cast<int64_t>(n); ++i) f(static_cast<size_t>(i));
}

// Broadcast descriptor for binary elementwise ops: equal shapes, scalar,
// column vector against matrix, or row vector against matrix.
struct Bcast {
  int r, c;        // output shape
  int ar, ac;      // operand shapes
  int br, bc;
  size_t a_index(int i, int j) const {
    return static_cast<size_t>(ar == 1 ? 0 : i) * ac + (ac == 1 ? 0 : j);
  }
  size_t b_index(int i, int j) const {
    return static_cast<size_t>(br == 1 ? 0 : i) * bc + (bc == 1 ? 0 : j);
  }
};

inline Bcast broadcast(const Tensor& a, const Tensor& b, const char* what) {
  Bcast s{};
  s.ar = a.rows();
  s.ac = a.cols();
  s.br = b.rows();
  s.bc = b.cols();
  bool rok = s.ar == s.br || s.ar == 1 || s.br == 1;
  bool cok = s.ac == s.bc || s.ac == 1 || s.bc == 1;
  if (!rok || !cok)
    throw ShapeError(std::string(what) + ": incompatible shapes " + std::to_string(s.ar) + "x" +
                     std::to_string(s.ac) + " vs " + std::to_string(s.br) + "x" +
                     std::to_string(s.bc));
  s.r = std::max(s.ar, s.br);
  s.c = std::max(s.ac, s.bc);
  return s;
}

// Accumulates grad contributions of shape (r, c) back into an operand of
// shape (tr, tc), reducing over broadcast dimensions. Serial reduction keeps
// the result deterministic.
inline void reduce_into(Tensor& dst, int tr, int tc, const Tensor& contrib) {
  int r = contrib.rows(), c = contrib.cols();
  if (tr == r && tc == c) {
    ew(dst.numel(), [&](size_t i) { dst.v[i] += contrib.v[i]; });
    return;
  }
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) dst.v[static_cast<size_t>(tr == 1 ? 0 : i) * tc + (tc == 1 ? 0 : j)] += contrib(i, j);
}

}  // namespace detail

class Graph {
 public:
  std::vector<Node>& nodes() { return nodes_; }
  const Node& node(int id) const { return nodes_[static_cast<size_t>(id)]; }
  Node& node(int id) { return nodes_[static_cast<size_t>(id)]; }
  size_t size() const { return nodes_.size(); }

  void clear() { nodes_.clear(); }
  void reserve(size_t n) { nodes_.reserve(n); }

  Var constant(Tensor t) { return push(Op::Constant, std::move(t)); }
  Var constant(double x) { return push(Op::Constant, Tensor::scalar(x)); }
  Var param(Tensor t) { return push(Op::Param, std::move(t)); }
  Var param(const Tensor& t, bool copy) {
    (void)copy;
    return push(Op::Param, t);
  }

  // ---- gradient access -------------------------------------------------
  const Tensor& grad(Var x) const {
    const Tensor& g = node(x.id).grad;
    if (g.numel() == 0) throw NumericError("grad: node untouched by backward");
    return g;
  }
  bool has_grad(Var x) const { return node(x.id).grad.numel() > 0; }

  Var push(Op op, Tensor val, int a = -1, int b = -1) {
    Node n;
    n.op = op;
    n.a = a;
    n.b = b;
    n.val = std::move(val);
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<int>(nodes_.size()) - 1};
  }

 private:
  std::vector<Node> nodes_;
};

inline const Tensor& Var::val() const { return g->node(id).val; }

// ---- op constructors ----------------------------------------------------

namespace detail {

template <typename F>
inline Var binary_ew(Var a, Var b, Op op, const char* what, F&& f) {
  Graph& g = *a.g;
  const Tensor& ta = a.val();
  const Tensor& tb = b.val();
  Bcast s = broadcast(ta, tb, what);
  Tensor out(s.r, s.c);
  if (ta.same_shape(tb)) {
    ew(out.numel(), [&](size_t i) { out.v[i] = f(ta.v[i], tb.v[i]); });
  } else {
    for (int i = 0; i < s.r; ++i)
      for (int j = 0; j < s.c; ++j)
        out(i, j) = f(ta.v[s.a_index(i, j)], tb.v[s.b_index(i, j)]);
  }
  return g.push(op, std::move(out), a.id, b.id);
}

template <typename F>
inline Var unary_ew(Var a, Op op, F&& f) {
  const Tensor& ta = a.val();
  Tensor out(ta.rows(), ta.cols());
  ew(out.numel(), [&](size_t i) { out.v[i] = f(ta.v[i]); });
  return a.g->push(op, std::move(out), a.id);
}

}  // namespace detail

inline Var operator+(Var a, Var b) {
  return detail::binary_ew(a, b, Op::Add, "add", [](double x, double y) { return x + y; });
}
inline Var operator-(Var a, Var b) {
  return detail::binary_ew(a, b, Op::Sub, "sub", [](double x, double y) { return x - y; });
}
inline Var operator*(Var a, Var b) {
  return detail::binary_ew(a, b, Op::Mul, "mul", [](double x, double y) { return x * y; });
}
inline Var operator/(Var a, Var b) {
  return detail::binary_ew(a, b, Op::Div, "div", [](double x, double y) { return x / y; });
}
inline Var operator+(Var a, double c) { return a + a.g->constant(c); }
inline Var operator-(Var a, double c) { return a - a.g->constant(c); }
inline Var operator*(Var a, double c) { return a * a.g->constant(c); }
inline Var operator*(double c, Var a) { return a * c; }
inline Var operator-(double c, Var a) { return a.g->constant(c) - a; }
inline Var operator-(Var a) { return a * -1.0; }

inline Var matmul(Var a, Var b) {
  const Tensor& ta = a.val();
  const Tensor& tb = b.val();
  if (ta.cols() != tb.rows())
    throw ShapeError("matmul: inner dims " + std::to_string(ta.cols()) + " vs " +
                     std::to_string(tb.rows()));
  Tensor out(ta.rows(), tb.cols());
  out.mat().noalias() = ta.mat() * tb.mat();
  return a.g->push(Op::MatMul, std::move(out), a.id, b.id);
}

inline Var transpose(Var a) {
  const Tensor& ta = a.val();
  Tensor out(ta.cols(), ta.rows());
  out.mat() = ta.mat().transpose();
  return a.g->push(Op::Transpose, std::move(out), a.id);
}

inline Var tanh(Var a) {
  return detail::unary_ew(a, Op::Tanh, [](double x) { return std::tanh(x); });
}
inline Var sigmoid(Var a) {
  return detail::unary_ew(a, Op::Sigmoid, [](double x) { return 1.0 / (1.0 + std::exp(-x)); });
}
inline Var exp(Var a) {
  return detail::unary_ew(a, Op::Exp, [](double x) { return std::exp(x); });
}
inline Var log(Var a) {
  return detail::unary_ew(a, Op::Log, [](double x) { return std::log(x); });
}

inline Var sum(Var a) {
  double acc = 0.0;
  for (double x : a.val().v) acc += x;
  return a.g->push(Op::Sum, Tensor::scalar(acc), a.id);
}

inline Var concat_rows(Var a, Var b) {
  const Tensor& ta = a.val();
  const Tensor& tb = b.val();
  if (ta.cols() != tb.cols()) throw ShapeError("concat_rows: column mismatch");
  Tensor out(ta.rows() + tb.rows(), ta.cols());
  std::copy(ta.v.begin(), ta.v.end(), out.v.begin());
  std::copy(tb.v.begin(), tb.v.end(), out.v.begin() + static_cast<int64_t>(ta.numel()));
  return a.g->push(Op::ConcatRows, std::move(out), a.id, b.id);
}

inline Var slice(Var a, int r0, int r1, int c0, int c1) {
  const Tensor& ta = a.val();
  if (r0 < 0 || r1 > ta.rows() || c0 < 0 || c1 > ta.cols() || r0 >= r1 || c0 >= c1)
    throw ShapeError("slice: window out of range");
  Tensor out(r1 - r0, c1 - c0);
  for (int i = r0; i < r1; ++i)
    for (int j = c0; j < c1; ++j) out(i - r0, j - c0) = ta(i, j);
  Var v = a.g->push(Op::Slice, std::move(out), a.id);
  Node& n = a.g->node(v.id);
  n.r0 = r0;
  n.r1 = r1;
  n.c0 = c0;
  n.c1 = c1;
  return v;
}

inline Var rows(Var a, int r0, int r1) { return slice(a, r0, r1, 0, a.val().cols()); }

// Hard clip; gradient passes only strictly inside (lo, hi).
inline Var clamp(Var a, double lo, double hi) {
  Var v = detail::unary_ew(a, Op::Clamp, [=](double x) { return std::min(std::max(x, lo), hi); });
  Node& n = a.g->node(v.id);
  n.lo = lo;
  n.hi = hi;
  return v;
}

// Repeat a column vector k times: (m,1) -> (m,k).
inline Var tile_cols(Var a, int k) {
  const Tensor& ta = a.val();
  if (ta.cols() != 1) throw ShapeError("tile_cols: input must be a column");
  Tensor out(ta.rows(), k);
  for (int i = 0; i < ta.rows(); ++i)
    for (int j = 0; j < k; ++j) out(i, j) = ta.v[static_cast<size_t>(i)];
  Var v = a.g->push(Op::TileCols, std::move(out), a.id);
  a.g->node(v.id).r0 = k;
  return v;
}

// ---- backward -------------------------------------------------------------

namespace detail {

inline void ensure_grad(Node& n) {
  if (n.grad.numel() == 0) n.grad = Tensor(n.val.rows(), n.val.cols());
}

inline bool wants_grad(const Node& n) { return n.op != Op::Constant; }

}  // namespace detail

// Accumulates d(output)/d(node) for every node on the path from parameters to
// `out`. `out` must be scalar. Gradients from a previous backward call on the
// same graph are discarded.
inline void backward(Var out) {
  Graph& g = *out.g;
  if (out.val().numel() != 1) throw NumericError("backward: output must be scalar");
  auto& nodes = g.nodes();
  for (auto& n : nodes) n.grad = Tensor();
  nodes[static_cast<size_t>(out.id)].grad = Tensor::scalar(1.0);

  using detail::Bcast;
  using detail::broadcast;
  using detail::ensure_grad;
  using detail::ew;
  using detail::wants_grad;

  for (int id = out.id; id >= 0; --id) {
    Node& n = nodes[static_cast<size_t>(id)];
    if (n.grad.numel() == 0) continue;
    const Tensor& gy = n.grad;
    Node* na = n.a >= 0 ? &nodes[static_cast<size_t>(n.a)] : nullptr;
    Node* nb = n.b >= 0 ? &nodes[static_cast<size_t>(n.b)] : nullptr;
    bool wa = na && wants_grad(*na);
    bool wb = nb && wants_grad(*nb);

    switch (n.op) {
      case Op::Constant:
      case Op::Param:
        break;
      case Op::Add:
      case Op::Sub:
      case Op::Mul:
      case Op::Div: {
        Bcast s = broadcast(na->val, nb->val, "bw");
        auto contrib = [&](bool for_a) {
          Tensor c(s.r, s.c);
          const Tensor& av = na->val;
          const Tensor& bv = nb->val;
          for (int i = 0; i < s.r; ++i)
            for (int j = 0; j < s.c; ++j) {
              double gij = gy(i, j);
              double x = av.v[s.a_index(i, j)];
              double y = bv.v[s.b_index(i, j)];
              double d = 0.0;
              switch (n.op) {
                case Op::Add: d = gij; break;
                case Op::Sub: d = for_a ? gij : -gij; break;
                case Op::Mul: d = for_a ? gij * y : gij * x; break;
                case Op::Div: d = for_a ? gij / y : -gij * x / (y * y); break;
                default: break;
              }
              c(i, j) = d;
            }
          return c;
        };
        if (wa) {
          ensure_grad(*na);
          if (na->val.same_shape(nb->val) && (n.op == Op::Add || n.op == Op::Sub)) {
            ew(gy.numel(), [&](size_t i) { na->grad.v[i] += gy.v[i]; });
          } else if (na->val.same_shape(nb->val) && n.op == Op::Mul) {
            ew(gy.numel(), [&](size_t i) { na->grad.v[i] += gy.v[i] * nb->val.v[i]; });
          } else {
            detail::reduce_into(na->grad, s.ar, s.ac, contrib(true));
          }
        }
        if (wb) {
          ensure_grad(*nb);
          if (na->val.same_shape(nb->val) && n.op == Op::Add) {
            ew(gy.numel(), [&](size_t i) { nb->grad.v[i] += gy.v[i]; });
          } else if (na->val.same_shape(nb->val) && n.op == Op::Sub) {
            ew(gy.numel(), [&](size_t i) { nb->grad.v[i] -= gy.v[i]; });
          } else if (na->val.same_shape(nb->val) && n.op == Op::Mul) {
            ew(gy.numel(), [&](size_t i) { nb->grad.v[i] += gy.v[i] * na->val.v[i]; });
          } else {
            detail::reduce_into(nb->grad, s.br, s.bc, contrib(false));
          }
        }
        break;
      }
      case Op::MatMul: {
        if (wa) {
          ensure_grad(*na);
          na->grad.mat().noalias() += gy.mat() * nb->val.mat().transpose();
        }
        if (wb) {
          ensure_grad(*nb);
          nb->grad.mat().noalias() += na->val.mat().transpose() * gy.mat();
        }
        break;
      }
      case Op::Transpose:
        if (wa) {
          ensure_grad(*na);
          na->grad.mat() += gy.mat().transpose();
        }
        break;
      case Op::Tanh:
        if (wa) {
          ensure_grad(*na);
          const Tensor& y = n.val;
          ew(gy.numel(), [&](size_t i) { na->grad.v[i] += gy.v[i] * (1.0 - y.v[i] * y.v[i]); });
        }
        break;
      case Op::Sigmoid:
        if (wa) {
          ensure_grad(*na);
          const Tensor& y = n.val;
          ew(gy.numel(), [&](size_t i) { na->grad.v[i] += gy.v[i] * y.v[i] * (1.0 - y.v[i]); });
        }
        break;
      case Op::Exp:
        if (wa) {
          ensure_grad(*na);
          const Tensor& y = n.val;
          ew(gy.numel(), [&](size_t i) { na->grad.v[i] += gy.v[i] * y.v[i]; });
        }
        break;
      case Op::Log:
        if (wa) {
          ensure_grad(*na);
          ew(gy.numel(), [&](size_t i) { na->grad.v[i] += gy.v[i] / na->val.v[i]; });
        }
        break;
      case Op::Sum:
        if (wa) {
          ensure_grad(*na);
          double s = gy.v[0];
          ew(na->grad.numel(), [&](size_t i) { na->grad.v[i] += s; });
        }
        break;
      case Op::ConcatRows: {
        size_t na_n = na->val.numel();
        if (wa) {
          ensure_grad(*na);
          ew(na_n, [&](size_t i) { na->grad.v[i] += gy.v[i]; });
        }
        if (wb) {
          ensure_grad(*nb);
          ew(nb->val.numel(), [&](size_t i) { nb->grad.v[i] += gy.v[na_n + i]; });
        }
        break;
      }
      case Op::Slice:
        if (wa) {
          ensure_grad(*na);
          int cols = na->val.cols();
          for (int i = n.r0; i < n.r1; ++i)
            for (int j = n.c0; j < n.c1; ++j)
              na->grad.v[static_cast<size_t>(i) * cols + j] += gy(i - n.r0, j - n.c0);
        }
        break;
      case Op::Clamp:
        if (wa) {
          ensure_grad(*na);
          double lo = n.lo, hi = n.hi;
          ew(gy.numel(), [&](size_t i) {
            double x = na->val.v[i];
            if (x > lo && x < hi) na->grad.v[i] += gy.v[i];
          });
        }
        break;
      case Op::TileCols:
        if (wa) {
          ensure_grad(*na);
          int k = n.r0;
          for (int i = 0; i < na->val.rows(); ++i) {
            double acc = 0.0;
            for (int j = 0; j < k; ++j) acc += gy(i, j);
            na->grad.v[static_cast<size_t>(i)] += acc;
          }
        }
        break;
    }
  }
}

// Reparametrized Gaussian draw: mean + std ∘ noise. Differentiable through
// mean and std; noise is whatever the caller supplies (usually a constant).
inline Var gaussian_sample(Var mean, Var std, Var noise) {
  for (double s : std.val().v)
    if (!(s > 0.0)) throw NumericError("gaussian_sample: std must be positive");
  if (!std.val().same_shape(noise.val()))
    throw ShapeError("gaussian_sample: std/noise shape mismatch");
  return mean + std * noise;
}

inline Tensor gaussian_sample(const Tensor& mean, const Tensor& std, const Tensor& noise) {
  for (double s : std.v)
    if (!(s > 0.0)) throw NumericError("gaussian_sample: std must be positive");
  if (!std.same_shape(noise) || !mean.same_shape(std))
    throw ShapeError("gaussian_sample: shape mismatch");
  Tensor out = mean;
  for (size_t i = 0; i < out.numel(); ++i) out.v[i] += std.v[i] * noise.v[i];
  return out;
}

// log-sum-exp over the rows of a (k, n) node, column by column: returns
// (1, n). The shift is baked in as a constant from current values, which
// leaves the gradient (a softmax) exact.
inline Var logsumexp_rows(Var x) {
  const int r = x.val().rows(), c_n = x.val().cols();
  Tensor shift(1, c_n);
  {
    const Tensor& tx = x.val();
    for (int j = 0; j < c_n; ++j) {
      double m = tx(0, j);
      for (int i = 1; i < r; ++i) m = std::max(m, tx(i, j));
      shift(0, j) = m;
    }
  }
  Var c = x.g->constant(std::move(shift));
  Tensor ones_t(1, r);
  ones_t.fill(1.0);
  Var ones = x.g->constant(std::move(ones_t));
  return c + log(matmul(ones, exp(x - c)));
}

}  // namespace pixeldyn
