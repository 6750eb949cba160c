#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "npkit/errors.hpp"
#include "npkit/tensor.hpp"

namespace npkit {

template <typename S>
class Graph;

// Handle to a node of a Graph. Cheap to copy; never outlives its graph.
template <typename S>
class Var {
 public:
  Var() = default;
  Var(Graph<S>* g, std::uint32_t id) : g_(g), id_(id) {}

  bool valid() const { return g_ != nullptr; }
  Graph<S>* graph() const { return g_; }
  std::uint32_t id() const { return id_; }

  const Tensor<S>& value() const { return g_->value(id_); }
  const Tensor<S>& grad() const { return g_->grad(id_); }
  std::size_t size() const { return value().size(); }

  // Value of a size-1 node.
  S item() const {
    if (value().size() != 1) {
      throw shape_error("item: node is not scalar");
    }
    return value()[0];
  }

 private:
  Graph<S>* g_ = nullptr;
  std::uint32_t id_ = 0;
};

enum class ActKind { relu, sigmoid, softplus, exp, log };
enum class PoolKind { mean, max };

// Define-by-run reverse-mode tape. Each recorded operation appends one node;
// construction order is the topological order, so one reverse sweep of the
// tape propagates all gradients. A graph is built per forward pass and serves
// a single logical thread.
template <typename S>
class Graph {
 public:
  using BackFn = std::function<void(Graph&, std::uint32_t)>;

  struct Node {
    Tensor<S> value;
    Tensor<S> grad;
    std::uint32_t parents[3] = {0, 0, 0};
    std::vector<std::uint32_t> extra_parents;  // pack() only
    std::uint8_t n_parents = 0;
    bool touched = false;
    const char* op = "";
    BackFn backward;
  };

  explicit Graph(bool check_finite = true) : check_finite_(check_finite) {}

  std::size_t size() const { return nodes_.size(); }

  Var<S> leaf(Tensor<S> v) {
    Node n;
    n.value = std::move(v);
    n.op = "leaf";
    nodes_.push_back(std::move(n));
    return Var<S>(this, static_cast<std::uint32_t>(nodes_.size() - 1));
  }

  Var<S> leaf(S v) { return leaf(Tensor<S>::scalar(v)); }

  Var<S> record(const char* op, Tensor<S> out,
                std::initializer_list<Var<S>> parents, BackFn back) {
    if (check_finite_) check_finite(out, op);
    Node n;
    n.value = std::move(out);
    n.op = op;
    n.backward = std::move(back);
    for (Var<S> p : parents) {
      if (p.graph() != this) {
        throw error(std::string(op) + ": operand from a different graph");
      }
      n.parents[n.n_parents++] = p.id();
    }
    nodes_.push_back(std::move(n));
    return Var<S>(this, static_cast<std::uint32_t>(nodes_.size() - 1));
  }

  const Tensor<S>& value(std::uint32_t id) const { return nodes_[id].value; }

  std::uint32_t parent(std::uint32_t id, int k) const {
    return nodes_[id].parents[k];
  }

  const std::vector<std::uint32_t>& extra_parents(std::uint32_t id) const {
    return nodes_[id].extra_parents;
  }

  void set_extra_parents(std::uint32_t id, std::vector<std::uint32_t> ids) {
    nodes_[id].extra_parents = std::move(ids);
  }

  const Tensor<S>& grad(std::uint32_t id) const {
    const Node& n = nodes_[id];
    if (n.grad.empty()) {
      static const Tensor<S> empty;
      return empty;
    }
    return n.grad;
  }

  // Gradient buffer of a node, allocated (zeroed) on first touch.
  Tensor<S>& grad_buf(std::uint32_t id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) n.grad = Tensor<S>(n.value.shape());
    n.touched = true;
    return n.grad;
  }

  // Reverse sweep from a scalar loss node; each node is visited once.
  void backward(Var<S> loss) {
    if (loss.graph() != this || loss.id() >= nodes_.size()) {
      throw error("backward: node not in graph");
    }
    if (nodes_[loss.id()].value.size() != 1) {
      throw error("backward: loss is not scalar");
    }
    for (Node& n : nodes_) {
      n.grad = Tensor<S>();
      n.touched = false;
    }
    grad_buf(loss.id())[0] = S(1);
    for (std::uint32_t id = loss.id() + 1; id-- > 0;) {
      Node& n = nodes_[id];
      if (n.touched && n.backward) n.backward(*this, id);
    }
  }

  bool finite_checks() const { return check_finite_; }

 private:
  std::vector<Node> nodes_;
  bool check_finite_;
};

namespace detail {

template <typename S>
void require_same_shape(const Var<S>& a, const Var<S>& b, const char* op) {
  if (!a.value().same_shape(b.value())) {
    throw shape_error(std::string(op) + ": shape mismatch " +
                      a.value().shape_str() + " vs " + b.value().shape_str());
  }
}

}  // namespace detail

// --- elementwise arithmetic -------------------------------------------------

template <typename S>
Var<S> add(Var<S> a, Var<S> b) {
  detail::require_same_shape(a, b, "add");
  Tensor<S> y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += b.value()[i];
  return a.graph()->record(
      "add", std::move(y), {a, b}, [](Graph<S>& g, std::uint32_t self) {
        const Tensor<S>& go = g.grad(self);
        const std::uint32_t pa = g.parent(self, 0), pb = g.parent(self, 1);
        Tensor<S>& ga = g.grad_buf(pa);
        Tensor<S>& gb = g.grad_buf(pb);
        for (std::size_t i = 0; i < go.size(); ++i) {
          ga[i] += go[i];
          gb[i] += go[i];
        }
      });
}

template <typename S>
Var<S> sub(Var<S> a, Var<S> b) {
  detail::require_same_shape(a, b, "sub");
  Tensor<S> y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] -= b.value()[i];
  return a.graph()->record(
      "sub", std::move(y), {a, b}, [](Graph<S>& g, std::uint32_t self) {
        const Tensor<S>& go = g.grad(self);
        Tensor<S>& ga = g.grad_buf(g.parent(self, 0));
        Tensor<S>& gb = g.grad_buf(g.parent(self, 1));
        for (std::size_t i = 0; i < go.size(); ++i) {
          ga[i] += go[i];
          gb[i] -= go[i];
        }
      });
}

template <typename S>
Var<S> mul(Var<S> a, Var<S> b) {
  detail::require_same_shape(a, b, "mul");
  Tensor<S> y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= b.value()[i];
  return a.graph()->record(
      "mul", std::move(y), {a, b}, [](Graph<S>& g, std::uint32_t self) {
        const Tensor<S>& go = g.grad(self);
        const std::uint32_t pa = g.parent(self, 0), pb = g.parent(self, 1);
        const Tensor<S>& va = g.value(pa);
        const Tensor<S>& vb = g.value(pb);
        Tensor<S>& ga = g.grad_buf(pa);
        Tensor<S>& gb = g.grad_buf(pb);
        for (std::size_t i = 0; i < go.size(); ++i) {
          ga[i] += go[i] * vb[i];
          gb[i] += go[i] * va[i];
        }
      });
}

template <typename S>
Var<S> div(Var<S> a, Var<S> b) {
  detail::require_same_shape(a, b, "div");
  Tensor<S> y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] /= b.value()[i];
  return a.graph()->record(
      "div", std::move(y), {a, b}, [](Graph<S>& g, std::uint32_t self) {
        const Tensor<S>& go = g.grad(self);
        const Tensor<S>& yv = g.value(self);
        const std::uint32_t pa = g.parent(self, 0), pb = g.parent(self, 1);
        const Tensor<S>& vb = g.value(pb);
        Tensor<S>& ga = g.grad_buf(pa);
        Tensor<S>& gb = g.grad_buf(pb);
        for (std::size_t i = 0; i < go.size(); ++i) {
          ga[i] += go[i] / vb[i];
          gb[i] -= go[i] * yv[i] / vb[i];
        }
      });
}

template <typename S>
Var<S> add_scalar(Var<S> a, double c) {
  Tensor<S> y = a.value();
  for (S& v : y.raw()) v += static_cast<S>(c);
  return a.graph()->record("add_scalar", std::move(y), {a},
                           [](Graph<S>& g, std::uint32_t self) {
                             const Tensor<S>& go = g.grad(self);
                             Tensor<S>& ga = g.grad_buf(g.parent(self, 0));
                             for (std::size_t i = 0; i < go.size(); ++i) {
                               ga[i] += go[i];
                             }
                           });
}

template <typename S>
Var<S> mul_scalar(Var<S> a, double c) {
  Tensor<S> y = a.value();
  for (S& v : y.raw()) v *= static_cast<S>(c);
  const S cs = static_cast<S>(c);
  return a.graph()->record("mul_scalar", std::move(y), {a},
                           [cs](Graph<S>& g, std::uint32_t self) {
                             const Tensor<S>& go = g.grad(self);
                             Tensor<S>& ga = g.grad_buf(g.parent(self, 0));
                             for (std::size_t i = 0; i < go.size(); ++i) {
                               ga[i] += cs * go[i];
                             }
                           });
}

template <typename S>
Var<S> operator+(Var<S> a, Var<S> b) {
  return add(a, b);
}
template <typename S>
Var<S> operator-(Var<S> a, Var<S> b) {
  return sub(a, b);
}
template <typename S>
Var<S> operator*(Var<S> a, Var<S> b) {
  return mul(a, b);
}
template <typename S>
Var<S> operator/(Var<S> a, Var<S> b) {
  return div(a, b);
}

// --- activations -------------------------------------------------------------

template <typename S>
Var<S> relu(Var<S> a) {
  return a.graph()->record(
      "relu", relu_forward(a.value()), {a},
      [](Graph<S>& g, std::uint32_t self) {
        const Tensor<S>& go = g.grad(self);
        const std::uint32_t pa = g.parent(self, 0);
        const Tensor<S>& va = g.value(pa);
        Tensor<S>& ga = g.grad_buf(pa);
        for (std::size_t i = 0; i < go.size(); ++i) {
          if (va[i] > S(0)) ga[i] += go[i];
        }
      });
}

template <typename S>
Var<S> sigmoid(Var<S> a) {
  return a.graph()->record(
      "sigmoid", sigmoid_forward(a.value()), {a},
      [](Graph<S>& g, std::uint32_t self) {
        const Tensor<S>& go = g.grad(self);
        const Tensor<S>& yv = g.value(self);
        Tensor<S>& ga = g.grad_buf(g.parent(self, 0));
        for (std::size_t i = 0; i < go.size(); ++i) {
          ga[i] += go[i] * yv[i] * (S(1) - yv[i]);
        }
      });
}

template <typename S>
Var<S> softplus(Var<S> a) {
  return a.graph()->record(
      "softplus", softplus_forward(a.value()), {a},
      [](Graph<S>& g, std::uint32_t self) {
        const Tensor<S>& go = g.grad(self);
        const std::uint32_t pa = g.parent(self, 0);
        const Tensor<S>& va = g.value(pa);
        Tensor<S>& ga = g.grad_buf(pa);
        Tensor<S> sig = sigmoid_forward(va);
        for (std::size_t i = 0; i < go.size(); ++i) {
          ga[i] += go[i] * sig[i];
        }
      });
}

template <typename S>
Var<S> exp(Var<S> a) {
  Tensor<S> y = a.value();
  for (S& v : y.raw()) v = std::exp(v);
  return a.graph()->record("exp", std::move(y), {a},
                           [](Graph<S>& g, std::uint32_t self) {
                             const Tensor<S>& go = g.grad(self);
                             const Tensor<S>& yv = g.value(self);
                             Tensor<S>& ga = g.grad_buf(g.parent(self, 0));
                             for (std::size_t i = 0; i < go.size(); ++i) {
                               ga[i] += go[i] * yv[i];
                             }
                           });
}

template <typename S>
Var<S> log(Var<S> a) {
  Tensor<S> y = a.value();
  for (S& v : y.raw()) {
    if (!(v > S(0))) {
      throw numeric_error("log: input must be positive");
    }
    v = std::log(v);
  }
  return a.graph()->record("log", std::move(y), {a},
                           [](Graph<S>& g, std::uint32_t self) {
                             const Tensor<S>& go = g.grad(self);
                             const std::uint32_t pa = g.parent(self, 0);
                             const Tensor<S>& va = g.value(pa);
                             Tensor<S>& ga = g.grad_buf(pa);
                             for (std::size_t i = 0; i < go.size(); ++i) {
                               ga[i] += go[i] / va[i];
                             }
                           });
}

template <typename S>
Var<S> activation(Var<S> a, ActKind kind) {
  switch (kind) {
    case ActKind::relu:
      return relu(a);
    case ActKind::sigmoid:
      return sigmoid(a);
    case ActKind::softplus:
      return softplus(a);
    case ActKind::exp:
      return exp(a);
    case ActKind::log:
      return log(a);
  }
  throw error("activation: unknown kind");
}

// --- linear algebra ----------------------------------------------------------

// y = x W + b over a leading set/batch axis (x rank 1 or 2).
template <typename S>
Var<S> affine(Var<S> x, Var<S> w, Var<S> b) {
  return x.graph()->record(
      "affine", affine_forward(x.value(), w.value(), b.value()), {x, w, b},
      [](Graph<S>& g, std::uint32_t self) {
        const Tensor<S>& go = g.grad(self);
        const std::uint32_t px = g.parent(self, 0);
        const std::uint32_t pw = g.parent(self, 1);
        const std::uint32_t pb = g.parent(self, 2);
        const Tensor<S>& xv = g.value(px);
        const Tensor<S>& wv = g.value(pw);
        const std::size_t in = wv.rows(), out = wv.cols();
        const std::size_t n = xv.rank() == 2 ? xv.rows() : 1;
        Tensor<S>& gx = g.grad_buf(px);
        Tensor<S>& gw = g.grad_buf(pw);
        Tensor<S>& gb = g.grad_buf(pb);
        for (std::size_t i = 0; i < n; ++i) {
          const S* goi = go.data() + i * out;
          const S* xi = xv.data() + i * in;
          S* gxi = gx.data() + i * in;
          for (std::size_t j = 0; j < out; ++j) gb[j] += goi[j];
          for (std::size_t k = 0; k < in; ++k) {
            const S* wk = wv.data() + k * out;
            S* gwk = gw.data() + k * out;
            S acc = S(0);
            const S xik = xi[k];
            for (std::size_t j = 0; j < out; ++j) {
              acc += goi[j] * wk[j];
              gwk[j] += xik * goi[j];
            }
            gxi[k] += acc;
          }
        }
      });
}

// --- reductions ----------------------------------------------------------------

template <typename S>
Var<S> pool_mean(Var<S> x) {
  return x.graph()->record(
      "pool_mean", pool_mean_forward(x.value()), {x},
      [](Graph<S>& g, std::uint32_t self) {
        const Tensor<S>& go = g.grad(self);
        const std::uint32_t px = g.parent(self, 0);
        const Tensor<S>& xv = g.value(px);
        const std::size_t n = xv.rows(), d = xv.cols();
        Tensor<S>& gx = g.grad_buf(px);
        const S inv = S(1) / static_cast<S>(n);
        for (std::size_t i = 0; i < n; ++i) {
          S* gxi = gx.data() + i * d;
          for (std::size_t j = 0; j < d; ++j) gxi[j] += go[j] * inv;
        }
      });
}

// Gradient is routed only to the recorded argmax rows (lowest index on ties).
template <typename S>
Var<S> pool_max(Var<S> x) {
  std::vector<std::uint32_t> argmax;
  Tensor<S> y = pool_max_forward(x.value(), &argmax);
  return x.graph()->record(
      "pool_max", std::move(y), {x},
      [argmax = std::move(argmax)](Graph<S>& g, std::uint32_t self) {
        const Tensor<S>& go = g.grad(self);
        const std::uint32_t px = g.parent(self, 0);
        Tensor<S>& gx = g.grad_buf(px);
        const std::size_t d = go.size();
        for (std::size_t j = 0; j < d; ++j) {
          gx[argmax[j] * d + j] += go[j];
        }
      });
}

template <typename S>
Var<S> pool(Var<S> x, PoolKind kind) {
  if (x.value().rank() != 2 || x.value().rows() < 1) {
    throw shape_error("pool: need a non-empty [n, d] set");
  }
  return kind == PoolKind::mean ? pool_mean(x) : pool_max(x);
}

template <typename S>
Var<S> logsumexp(Var<S> x) {
  const S lse = logsumexp_forward(x.value());
  return x.graph()->record(
      "logsumexp", Tensor<S>::scalar(lse), {x},
      [](Graph<S>& g, std::uint32_t self) {
        const Tensor<S>& go = g.grad(self);
        const Tensor<S>& yv = g.value(self);
        const std::uint32_t px = g.parent(self, 0);
        const Tensor<S>& xv = g.value(px);
        Tensor<S>& gx = g.grad_buf(px);
        for (std::size_t i = 0; i < xv.size(); ++i) {
          gx[i] += go[0] * std::exp(xv[i] - yv[0]);
        }
      });
}

// Per-row logsumexp of an [m, n] matrix -> [m].
template <typename S>
Var<S> rows_logsumexp(Var<S> x) {
  const Tensor<S>& xv = x.value();
  if (xv.rank() != 2) throw shape_error("rows_logsumexp: input must be [m,n]");
  const std::size_t m = xv.rows(), n = xv.cols();
  Tensor<S> y({m});
  for (std::size_t i = 0; i < m; ++i) {
    const S* xi = xv.data() + i * n;
    S mx = xi[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, xi[j]);
    double acc = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      acc += std::exp(static_cast<double>(xi[j] - mx));
    }
    y[i] = mx + static_cast<S>(std::log(acc));
  }
  return x.graph()->record(
      "rows_logsumexp", std::move(y), {x},
      [](Graph<S>& g, std::uint32_t self) {
        const Tensor<S>& go = g.grad(self);
        const Tensor<S>& yv = g.value(self);
        const std::uint32_t px = g.parent(self, 0);
        const Tensor<S>& xv = g.value(px);
        Tensor<S>& gx = g.grad_buf(px);
        const std::size_t m = xv.rows(), n = xv.cols();
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t j = 0; j < n; ++j) {
            gx[i * n + j] += go[i] * std::exp(xv[i * n + j] - yv[i]);
          }
        }
      });
}

// Sum of all elements, accumulated left to right in double.
template <typename S>
Var<S> sum(Var<S> x) {
  double acc = 0.0;
  for (std::size_t i = 0; i < x.value().size(); ++i) {
    acc += static_cast<double>(x.value()[i]);
  }
  return x.graph()->record(
      "sum", Tensor<S>::scalar(static_cast<S>(acc)), {x},
      [](Graph<S>& g, std::uint32_t self) {
        const Tensor<S>& go = g.grad(self);
        Tensor<S>& gx = g.grad_buf(g.parent(self, 0));
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += go[0];
      });
}

// --- structure ops -------------------------------------------------------------

template <typename S>
Var<S> concat(Var<S> a, Var<S> b) {
  return a.graph()->record(
      "concat", concat_forward(a.value(), b.value()), {a, b},
      [](Graph<S>& g, std::uint32_t self) {
        const Tensor<S>& go = g.grad(self);
        const std::uint32_t pa = g.parent(self, 0), pb = g.parent(self, 1);
        Tensor<S>& ga = g.grad_buf(pa);
        Tensor<S>& gb = g.grad_buf(pb);
        const std::size_t na = ga.size();
        for (std::size_t i = 0; i < na; ++i) ga[i] += go[i];
        for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += go[na + i];
      });
}

// Append vector v to every row of matrix x; v's gradient sums over rows.
template <typename S>
Var<S> broadcast_concat(Var<S> x, Var<S> v) {
  return x.graph()->record(
      "broadcast_concat", broadcast_concat_forward(x.value(), v.value()),
      {x, v}, [](Graph<S>& g, std::uint32_t self) {
        const Tensor<S>& go = g.grad(self);
        const std::uint32_t px = g.parent(self, 0), pv = g.parent(self, 1);
        const Tensor<S>& xv = g.value(px);
        const std::size_t m = xv.rows(), p = xv.cols();
        const std::size_t q = go.cols() - p;
        Tensor<S>& gx = g.grad_buf(px);
        Tensor<S>& gv = g.grad_buf(pv);
        for (std::size_t i = 0; i < m; ++i) {
          const S* goi = go.data() + i * (p + q);
          S* gxi = gx.data() + i * p;
          for (std::size_t k = 0; k < p; ++k) gxi[k] += goi[k];
          for (std::size_t j = 0; j < q; ++j) gv[j] += goi[p + j];
        }
      });
}

template <typename S>
Var<S> slice(Var<S> a, std::size_t start, std::size_t len) {
  if (a.value().rank() != 1 || start + len > a.value().size()) {
    throw shape_error("slice: out of range");
  }
  Tensor<S> y({len});
  std::copy(a.value().data() + start, a.value().data() + start + len,
            y.data());
  return a.graph()->record(
      "slice", std::move(y), {a},
      [start](Graph<S>& g, std::uint32_t self) {
        const Tensor<S>& go = g.grad(self);
        Tensor<S>& ga = g.grad_buf(g.parent(self, 0));
        for (std::size_t i = 0; i < go.size(); ++i) ga[start + i] += go[i];
      });
}

template <typename S>
Var<S> slice_cols(Var<S> x, std::size_t start, std::size_t len) {
  const Tensor<S>& xv = x.value();
  if (xv.rank() != 2 || start + len > xv.cols()) {
    throw shape_error("slice_cols: out of range");
  }
  const std::size_t m = xv.rows(), c = xv.cols();
  Tensor<S> y = Tensor<S>::matrix(m, len);
  for (std::size_t i = 0; i < m; ++i) {
    std::copy(xv.data() + i * c + start, xv.data() + i * c + start + len,
              y.data() + i * len);
  }
  return x.graph()->record(
      "slice_cols", std::move(y), {x},
      [start](Graph<S>& g, std::uint32_t self) {
        const Tensor<S>& go = g.grad(self);
        const std::uint32_t px = g.parent(self, 0);
        Tensor<S>& gx = g.grad_buf(px);
        const std::size_t m = go.rows(), len = go.cols();
        const std::size_t c = gx.cols();
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t j = 0; j < len; ++j) {
            gx[i * c + start + j] += go[i * len + j];
          }
        }
      });
}

// Stack scalar nodes into one rank-1 vector.
template <typename S>
Var<S> pack(const std::vector<Var<S>>& scalars) {
  if (scalars.empty()) throw shape_error("pack: empty input");
  Graph<S>* g = scalars[0].graph();
  Tensor<S> y({scalars.size()});
  std::vector<std::uint32_t> ids(scalars.size());
  for (std::size_t i = 0; i < scalars.size(); ++i) {
    if (scalars[i].graph() != g || scalars[i].size() != 1) {
      throw shape_error("pack: operands must be scalars of one graph");
    }
    y[i] = scalars[i].value()[0];
    ids[i] = scalars[i].id();
  }
  Var<S> out = g->record("pack", std::move(y), {},
                         [](Graph<S>& gg, std::uint32_t self) {
                           const Tensor<S>& go = gg.grad(self);
                           const auto& ids = gg.extra_parents(self);
                           for (std::size_t i = 0; i < ids.size(); ++i) {
                             gg.grad_buf(ids[i])[0] += go[i];
                           }
                         });
  g->set_extra_parents(out.id(), std::move(ids));
  return out;
}

// --- gradient verification -----------------------------------------------------

// Builds the composite in a fresh graph and returns the scalar loss plus the
// graph leaves bound to each checked parameter, in the same order as `params`.
using GradCheckBuild = std::function<std::pair<Var<double>, std::vector<Var<double>>>(
    Graph<double>&)>;

// Central-difference check of reverse-mode gradients, evaluated in 64-bit.
// Returns max over all parameter coordinates of
//   |g_ad - g_fd| / max(1, |g_fd|).
// The builder must read parameter values from `params` so that perturbations
// are visible. Coordinates whose perturbation window straddles a
// piecewise-linear kink (a relu zero or a pool-max argmax switch) have no
// valid difference quotient; they are detected by comparing the quotients at
// step h and h/2, excluded from the check set, and counted in
// `kinks_excluded` when given.
inline double grad_check(const GradCheckBuild& build,
                         const std::vector<Tensor<double>*>& params,
                         double h, std::size_t* kinks_excluded = nullptr) {
  std::vector<Tensor<double>> ad_grads;
  {
    Graph<double> g;
    auto [loss, bound] = build(g);
    if (bound.size() != params.size()) {
      throw error("grad_check: builder bound a different parameter count");
    }
    if (!std::isfinite(loss.item())) {
      throw numeric_error("grad_check: non-finite evaluation");
    }
    g.backward(loss);
    for (std::size_t p = 0; p < params.size(); ++p) {
      const Tensor<double>& gr = bound[p].grad();
      ad_grads.push_back(gr.empty() ? Tensor<double>(params[p]->shape())
                                    : gr);
    }
  }
  auto eval = [&]() {
    Graph<double> g;
    auto [loss, bound] = build(g);
    (void)bound;
    const double v = loss.item();
    if (!std::isfinite(v)) {
      throw numeric_error("grad_check: non-finite evaluation");
    }
    return v;
  };
  auto central = [&](Tensor<double>& theta, std::size_t i, double step) {
    const double saved = theta[i];
    theta[i] = saved + step;
    const double fp = eval();
    theta[i] = saved - step;
    const double fm = eval();
    theta[i] = saved;
    return (fp - fm) / (2.0 * step);
  };
  if (kinks_excluded) *kinks_excluded = 0;
  double worst = 0.0;
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor<double>& theta = *params[p];
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double fd = central(theta, i, h);
      const double fd_half = central(theta, i, h / 2);
      // smooth functions agree to O(h^2); a kink inside the window shows up
      // as an O(h) discrepancy between the two quotients
      if (std::abs(fd - fd_half) >
          1e-5 * std::max({1.0, std::abs(fd), std::abs(fd_half)})) {
        if (kinks_excluded) ++(*kinks_excluded);
        continue;
      }
      const double err =
          std::abs(ad_grads[p][i] - fd) / std::max(1.0, std::abs(fd));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace npkit
