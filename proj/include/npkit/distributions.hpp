#pragma once

#include <cmath>
#include <numbers>

#include "npkit/autodiff.hpp"
#include "npkit/random.hpp"
#include "npkit/tensor.hpp"

namespace npkit {

inline constexpr double kLogTwoPi = 1.8378770664093454836;  // ln(2*pi)

// Diagonal Gaussian with graph-connected parameters, so its log-density,
// entropy, KL and reparameterized samples all carry gradients.
template <typename S>
struct DiagGaussian {
  Var<S> mu;
  Var<S> sigma;  // strictly positive elementwise

  std::size_t dim() const { return mu.size(); }

  void require_valid(const char* op) const {
    if (!mu.valid() || !sigma.valid() || mu.size() != sigma.size()) {
      throw shape_error(std::string(op) + ": malformed diagonal Gaussian");
    }
    for (std::size_t i = 0; i < sigma.size(); ++i) {
      if (!(sigma.value()[i] > S(0))) {
        throw numeric_error(std::string(op) + ": sigma must be positive");
      }
    }
  }
};

// sum_i [ -log sigma_i - 0.5 log 2pi - 0.5 ((v_i - mu_i)/sigma_i)^2 ]
template <typename S>
Var<S> logpdf(const DiagGaussian<S>& g, Var<S> v) {
  g.require_valid("logpdf");
  if (v.size() != g.dim()) {
    throw shape_error("logpdf: dimension mismatch");
  }
  Var<S> t = div(sub(v, g.mu), g.sigma);
  Var<S> quad = mul_scalar(sum(mul(t, t)), -0.5);
  Var<S> norm = mul_scalar(sum(log(g.sigma)), -1.0);
  Var<S> c = add_scalar(add(quad, norm),
                        -0.5 * kLogTwoPi * static_cast<double>(g.dim()));
  return c;
}

template <typename S>
Var<S> logpdf(const DiagGaussian<S>& g, const Tensor<S>& v) {
  return logpdf(g, g.mu.graph()->leaf(v));
}

// 0.5 d ln(2 pi e) + sum_i ln sigma_i, in nats.
template <typename S>
Var<S> entropy(const DiagGaussian<S>& g) {
  g.require_valid("entropy");
  const double c = 0.5 * static_cast<double>(g.dim()) * (kLogTwoPi + 1.0);
  return add_scalar(sum(log(g.sigma)), c);
}

// KL(q || p) = sum_i [ ln(sp/sq) + (sq^2 + (mq - mp)^2) / (2 sp^2) - 1/2 ]
template <typename S>
Var<S> kl(const DiagGaussian<S>& q, const DiagGaussian<S>& p) {
  q.require_valid("kl");
  p.require_valid("kl");
  if (q.dim() != p.dim()) {
    throw shape_error("kl: dimension mismatch");
  }
  Var<S> log_ratio = sub(log(p.sigma), log(q.sigma));
  Var<S> d = sub(q.mu, p.mu);
  Var<S> num = add(mul(q.sigma, q.sigma), mul(d, d));
  Var<S> den = mul_scalar(mul(p.sigma, p.sigma), 2.0);
  Var<S> per_dim = add_scalar(add(log_ratio, div(num, den)), -0.5);
  return sum(per_dim);
}

// z = mu + sigma .* eps for a given standard-normal draw.
template <typename S>
Var<S> reparam_sample(const DiagGaussian<S>& g, const Tensor<S>& eps) {
  g.require_valid("reparam_sample");
  if (eps.size() != g.dim()) {
    throw shape_error("reparam_sample: eps dimension mismatch");
  }
  return add(g.mu, mul(g.sigma, g.mu.graph()->leaf(eps)));
}

template <typename S>
Var<S> reparam_sample(const DiagGaussian<S>& g, Philox& rng) {
  Tensor<S> eps({g.dim()});
  for (S& e : eps.raw()) e = static_cast<S>(rng.normal());
  return reparam_sample(g, eps);
}

// Standard-normal draw of dimension d (plain tensor, no graph).
template <typename S>
Tensor<S> normal_draw(std::size_t d, Philox& rng) {
  Tensor<S> eps({d});
  for (S& e : eps.raw()) e = static_cast<S>(rng.normal());
  return eps;
}

// --- plain-value counterparts (no graph, shared by inference-only paths) -----

template <typename S>
double gaussian_logpdf(const Tensor<S>& mu, const Tensor<S>& sigma,
                       const Tensor<S>& v) {
  if (mu.size() != sigma.size() || mu.size() != v.size()) {
    throw shape_error("gaussian_logpdf: dimension mismatch");
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < mu.size(); ++i) {
    const double t = (static_cast<double>(v[i]) - mu[i]) / sigma[i];
    acc += -std::log(static_cast<double>(sigma[i])) - 0.5 * kLogTwoPi -
           0.5 * t * t;
  }
  return acc;
}

template <typename S>
double gaussian_entropy(const Tensor<S>& sigma) {
  double acc = 0.5 * static_cast<double>(sigma.size()) * (kLogTwoPi + 1.0);
  for (std::size_t i = 0; i < sigma.size(); ++i) {
    acc += std::log(static_cast<double>(sigma[i]));
  }
  return acc;
}

template <typename S>
double gaussian_kl(const Tensor<S>& mu_q, const Tensor<S>& sigma_q,
                   const Tensor<S>& mu_p, const Tensor<S>& sigma_p) {
  double acc = 0.0;
  for (std::size_t i = 0; i < mu_q.size(); ++i) {
    const double sq = sigma_q[i], sp = sigma_p[i];
    const double dm = static_cast<double>(mu_q[i]) - mu_p[i];
    acc += std::log(sp / sq) + (sq * sq + dm * dm) / (2.0 * sp * sp) - 0.5;
  }
  return acc;
}

}  // namespace npkit
