#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "npkit/errors.hpp"

namespace npkit {

// Dense row-major tensor. Rank 1 and rank 2 are the workhorses (vectors and
// point-set matrices); scalars are rank-1 tensors of size 1.
template <typename S>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape, S fill = S(0))
      : shape_(std::move(shape)), data_(checked_size(shape_), fill) {}

  Tensor(std::vector<std::size_t> shape, std::vector<S> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != checked_size(shape_)) {
      throw shape_error("tensor: element count does not match shape");
    }
  }

  static Tensor scalar(S v) { return Tensor({1}, std::vector<S>{v}); }

  static Tensor row(std::vector<S> v) {
    std::size_t n = v.size();
    return Tensor({n}, std::move(v));
  }

  static Tensor matrix(std::size_t r, std::size_t c, S fill = S(0)) {
    return Tensor({r, c}, fill);
  }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::size_t rows() const {
    require_rank(2, "rows");
    return shape_[0];
  }
  std::size_t cols() const {
    require_rank(2, "cols");
    return shape_[1];
  }

  S* data() { return data_.data(); }
  const S* data() const { return data_.data(); }
  std::vector<S>& raw() { return data_; }
  const std::vector<S>& raw() const { return data_; }

  S& operator[](std::size_t i) { return data_[i]; }
  const S& operator[](std::size_t i) const { return data_[i]; }

  S& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  const S& at(std::size_t r, std::size_t c) const {
    return data_[r * shape_[1] + c];
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  bool all_finite() const {
    for (const S& v : data_) {
      if (!std::isfinite(static_cast<double>(v))) return false;
    }
    return true;
  }

  template <typename T>
  Tensor<T> cast() const {
    std::vector<T> out(data_.size());
    for (std::size_t i = 0; i < data_.size(); ++i) {
      out[i] = static_cast<T>(data_[i]);
    }
    return Tensor<T>(shape_, std::move(out));
  }

  std::string shape_str() const {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape_.size(); ++i) {
      os << (i ? "," : "") << shape_[i];
    }
    os << "]";
    return os.str();
  }

 private:
  static std::size_t checked_size(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) {
      if (d == 0) throw shape_error("tensor: zero-sized dimension");
      if (d != 0 && n > static_cast<std::size_t>(-1) / d) {
        throw shape_error("tensor: shape overflow");
      }
      n *= d;
    }
    return shape.empty() ? 0 : n;
  }

  void require_rank(std::size_t r, const char* what) const {
    if (rank() != r) {
      throw shape_error(std::string("tensor: ") + what + " requires rank " +
                        std::to_string(r) + ", got " + shape_str());
    }
  }

  std::vector<std::size_t> shape_;
  std::vector<S> data_;
};

template <typename S>
inline void check_finite(const Tensor<S>& t, const char* op) {
  if (!t.all_finite()) {
    throw numeric_error(std::string(op) + ": non-finite result");
  }
}

// ---------------------------------------------------------------------------
// Forward kernels. These are shared between the autodiff graph ops and the
// gradient-free inference paths, so the two routes are bit-identical.
// ---------------------------------------------------------------------------

// y = x W + b. x is [in] or [n, in]; W is [in, out]; b is [out].
template <typename S>
Tensor<S> affine_forward(const Tensor<S>& x, const Tensor<S>& w,
                         const Tensor<S>& b) {
  if (w.rank() != 2 || b.rank() != 1 || b.shape()[0] != w.cols()) {
    throw shape_error("affine: W must be [in,out], b must be [out]");
  }
  const std::size_t in = w.rows();
  const std::size_t out = w.cols();
  const bool batched = x.rank() == 2;
  const std::size_t n = batched ? x.rows() : 1;
  const std::size_t xin = batched ? x.cols() : x.size();
  if (x.rank() > 2 || xin != in) {
    throw shape_error("affine: input " + x.shape_str() + " does not match W " +
                      w.shape_str());
  }
  Tensor<S> y = batched ? Tensor<S>::matrix(n, out) : Tensor<S>({out});
  for (std::size_t i = 0; i < n; ++i) {
    S* yi = y.data() + i * out;
    const S* xi = x.data() + i * in;
    for (std::size_t j = 0; j < out; ++j) yi[j] = b[j];
    for (std::size_t k = 0; k < in; ++k) {
      const S a = xi[k];
      const S* wk = w.data() + k * out;
      for (std::size_t j = 0; j < out; ++j) yi[j] += a * wk[j];
    }
  }
  return y;
}

template <typename S>
Tensor<S> relu_forward(const Tensor<S>& x) {
  Tensor<S> y = x;
  for (S& v : y.raw()) v = v > S(0) ? v : S(0);
  return y;
}

template <typename S>
Tensor<S> sigmoid_forward(const Tensor<S>& x) {
  Tensor<S> y = x;
  for (S& v : y.raw()) {
    if (v >= S(0)) {
      v = S(1) / (S(1) + std::exp(-v));
    } else {
      const S e = std::exp(v);
      v = e / (S(1) + e);
    }
  }
  return y;
}

// softplus(t) = max(t, 0) + log1p(exp(-|t|)), overflow-safe.
template <typename S>
Tensor<S> softplus_forward(const Tensor<S>& x) {
  Tensor<S> y = x;
  for (S& v : y.raw()) {
    v = std::max(v, S(0)) + std::log1p(std::exp(-std::abs(v)));
  }
  return y;
}

// Per-dimension mean over the set axis of an [n, d] matrix. Accumulates in
// double so the result is permutation-stable to within one ulp.
template <typename S>
Tensor<S> pool_mean_forward(const Tensor<S>& x) {
  if (x.rank() != 2) throw shape_error("pool: input must be [n, d]");
  const std::size_t n = x.rows(), d = x.cols();
  Tensor<S> y({d});
  std::vector<double> acc(d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const S* xi = x.data() + i * d;
    for (std::size_t j = 0; j < d; ++j) acc[j] += static_cast<double>(xi[j]);
  }
  for (std::size_t j = 0; j < d; ++j) {
    y[j] = static_cast<S>(acc[j] / static_cast<double>(n));
  }
  return y;
}

// Per-dimension max; argmax rows (lowest index on ties) go to `argmax` when
// provided, for routing the backward pass.
template <typename S>
Tensor<S> pool_max_forward(const Tensor<S>& x,
                           std::vector<std::uint32_t>* argmax = nullptr) {
  if (x.rank() != 2) throw shape_error("pool: input must be [n, d]");
  const std::size_t n = x.rows(), d = x.cols();
  Tensor<S> y({d});
  if (argmax) argmax->assign(d, 0);
  for (std::size_t j = 0; j < d; ++j) y[j] = x.at(0, j);
  for (std::size_t i = 1; i < n; ++i) {
    const S* xi = x.data() + i * d;
    for (std::size_t j = 0; j < d; ++j) {
      if (xi[j] > y[j]) {
        y[j] = xi[j];
        if (argmax) (*argmax)[j] = static_cast<std::uint32_t>(i);
      }
    }
  }
  return y;
}

// log sum_i exp(x_i) with max-shift.
template <typename S>
S logsumexp_forward(const Tensor<S>& x) {
  if (x.size() == 0) throw shape_error("logsumexp: empty input");
  S m = x[0];
  for (std::size_t i = 1; i < x.size(); ++i) m = std::max(m, x[i]);
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    acc += std::exp(static_cast<double>(x[i] - m));
  }
  return m + static_cast<S>(std::log(acc));
}

template <typename S>
Tensor<S> concat_forward(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.rank() != 1 || b.rank() != 1) {
    throw shape_error("concat: operands must be rank-1");
  }
  Tensor<S> y({a.size() + b.size()});
  std::copy(a.data(), a.data() + a.size(), y.data());
  std::copy(b.data(), b.data() + b.size(), y.data() + a.size());
  return y;
}

// [m, p] matrix with the same rank-1 vector appended to every row -> [m, p+q].
template <typename S>
Tensor<S> broadcast_concat_forward(const Tensor<S>& x, const Tensor<S>& v) {
  if (x.rank() != 2 || v.rank() != 1) {
    throw shape_error("broadcast_concat: need [m,p] matrix and [q] vector");
  }
  const std::size_t m = x.rows(), p = x.cols(), q = v.size();
  Tensor<S> y = Tensor<S>::matrix(m, p + q);
  for (std::size_t i = 0; i < m; ++i) {
    std::copy(x.data() + i * p, x.data() + (i + 1) * p, y.data() + i * (p + q));
    std::copy(v.data(), v.data() + q, y.data() + i * (p + q) + p);
  }
  return y;
}

}  // namespace npkit
