#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "npkit/autodiff.hpp"
#include "npkit/distributions.hpp"
#include "npkit/model.hpp"
#include "npkit/random.hpp"

namespace npkit {

enum class ObjectiveKind { elbo, np, sivi };

// Latent prior used inside the sivi bound: `standard` keeps p(z) = N(0, I);
// `context` substitutes a mixture estimate of q(z | context) for it.
enum class SiviPrior { standard, context };

struct ObjectiveValue {
  double value = 0.0;       // nats; value = recon - divergence
  double recon = 0.0;       // reconstruction term
  double divergence = 0.0;  // KL / mixture-divergence term
};

template <typename S>
struct ObjectiveVars {
  Var<S> value, recon, divergence;

  ObjectiveValue values() const {
    return ObjectiveValue{static_cast<double>(value.item()),
                          static_cast<double>(recon.item()),
                          static_cast<double>(divergence.item())};
  }
};

template <typename S>
DiagGaussian<S> standard_normal(Graph<S>& g, std::size_t d) {
  return DiagGaussian<S>{g.leaf(Tensor<S>({d}, S(0))),
                         g.leaf(Tensor<S>({d}, S(1)))};
}

// --- ELBO ----------------------------------------------------------------------

// Single-sample estimator of E_q[log p(y|z,x)] - KL(q(z|x,y) || p(z)) with the
// KL in closed form and p(z) = N(0, I). `full` carries the complete
// supervision for the task. Plain head only; sivi models train on the sivi
// bound instead.
template <typename S>
ObjectiveVars<S> build_elbo(const BoundModel<S>& m, const PointSet<S>& full,
                            Philox& rng) {
  EncodeResult<S> enc = encode_np(m, full);
  Var<S> z = reparam_sample(enc.posterior, rng);
  Var<S> recon = field_logpdf(decode(m, full.coords, z), full.values);
  Var<S> div = kl(enc.posterior, standard_normal(*m.g, m.cfg->d_z));
  return ObjectiveVars<S>{sub(recon, div), recon, div};
}

// --- NP objective ----------------------------------------------------------------

template <typename S>
struct NpObjectiveVars {
  Var<S> value, recon, div_sampled;  // sampled form
  Var<S> analytic_value, kl_closed;  // analytic form (same z draw)

  ObjectiveValue sampled_values() const {
    return ObjectiveValue{static_cast<double>(value.item()),
                          static_cast<double>(recon.item()),
                          static_cast<double>(div_sampled.item())};
  }
};

// Sampled form: z ~ q(z|T);  log p(y_T|z,x_T) + log q(z|C) - log q(z|T).
// The analytic form replaces the sampled divergence with the closed-form
// KL( q(.|T) || q(.|C) ); both are returned for cross-checking.
template <typename S>
NpObjectiveVars<S> build_np_objective(const BoundModel<S>& m,
                                      const PointSet<S>& ctx,
                                      const PointSet<S>& tgt, Philox& rng) {
  if (m.cfg->head != HeadKind::plain) {
    throw error("np_objective: requires the plain head");
  }
  EncodeResult<S> q_t = encode_np(m, tgt);
  EncodeResult<S> q_c = encode_np(m, ctx);
  Var<S> z = reparam_sample(q_t.posterior, rng);
  Var<S> recon = field_logpdf(decode(m, tgt.coords, z), tgt.values);
  Var<S> div = sub(logpdf(q_t.posterior, z), logpdf(q_c.posterior, z));
  Var<S> kl_tc = kl(q_t.posterior, q_c.posterior);
  return NpObjectiveVars<S>{sub(recon, div), recon, div, sub(recon, kl_tc),
                            kl_tc};
}

// --- SIVI bound ------------------------------------------------------------------

// Tractable lower bound for the hierarchical posterior:
//   log p(y|z,x) + log p(z) - [ logsumexp_{k=0..K} log q(z|x, psi_k) - log(K+1) ]
// with (psi_0, z) drawn jointly and psi_1..psi_K extra independent mixing
// draws. With prior = context, log p(z) is replaced by a (K+1)-component
// mixture estimate of log q(z | ctx).
template <typename S>
ObjectiveVars<S> build_sivi_bound(const BoundModel<S>& m,
                                  const PointSet<S>& ctx,
                                  const PointSet<S>& tgt, std::size_t k_extra,
                                  SiviPrior prior, Philox& rng) {
  if (m.cfg->head != HeadKind::sivi) {
    throw error("sivi_bound: requires the sivi head");
  }
  Graph<S>& g = *m.g;
  Var<S> s_t = pooled_embedding(m, tgt);
  EncodeResult<S> e0 = encode_sivi_from(m, s_t, normal_draw<S>(m.cfg->d_eps, rng));
  Var<S> z = reparam_sample(e0.posterior, rng);
  Var<S> recon = field_logpdf(decode(m, tgt.coords, z), tgt.values);

  std::vector<Var<S>> cond_terms;
  cond_terms.push_back(logpdf(e0.posterior, z));
  for (std::size_t k = 0; k < k_extra; ++k) {
    EncodeResult<S> ek =
        encode_sivi_from(m, s_t, normal_draw<S>(m.cfg->d_eps, rng));
    cond_terms.push_back(logpdf(ek.posterior, z));
  }
  Var<S> mix = add_scalar(logsumexp(pack(cond_terms)),
                          -std::log(static_cast<double>(k_extra + 1)));

  Var<S> prior_term;
  if (prior == SiviPrior::standard) {
    prior_term = logpdf(standard_normal(g, m.cfg->d_z), z);
  } else {
    if (ctx.size() < 1) {
      throw error("sivi_bound: context prior needs a context set");
    }
    Var<S> s_c = pooled_embedding(m, ctx);
    std::vector<Var<S>> ctx_terms;
    for (std::size_t k = 0; k < k_extra + 1; ++k) {
      EncodeResult<S> ek =
          encode_sivi_from(m, s_c, normal_draw<S>(m.cfg->d_eps, rng));
      ctx_terms.push_back(logpdf(ek.posterior, z));
    }
    prior_term = add_scalar(logsumexp(pack(ctx_terms)),
                            -std::log(static_cast<double>(k_extra + 1)));
  }

  Var<S> divergence = sub(mix, prior_term);
  return ObjectiveVars<S>{sub(recon, divergence), recon, divergence};
}

// --- IWAE-style predictive bound ---------------------------------------------------

namespace detail {

template <typename S>
void require_disjoint(const PointSet<S>& ctx, const PointSet<S>& tgt) {
  for (std::size_t i = 0; i < ctx.size(); ++i) {
    for (std::size_t j = 0; j < tgt.size(); ++j) {
      bool same = true;
      for (std::size_t k = 0; k < ctx.coords.cols(); ++k) {
        if (ctx.coords.at(i, k) != tgt.coords.at(j, k)) {
          same = false;
          break;
        }
      }
      if (same) {
        throw error("iwae_loglik: context and target sets overlap");
      }
    }
  }
}

}  // namespace detail

// (1/|T|) log (1/K) sum_k p(y_T | x_T, z_k) with z_k ~ q(z | C); the sivi head
// draws each z_k from the implicit mixture. C and T must be disjoint.
template <typename S>
Var<S> build_iwae_loglik(const BoundModel<S>& m, const PointSet<S>& ctx,
                         const PointSet<S>& tgt, std::size_t k_samples,
                         Philox& rng) {
  if (k_samples < 1) throw error("iwae_loglik: K must be >= 1");
  detail::require_disjoint(ctx, tgt);
  Var<S> s_c = pooled_embedding(m, ctx);
  DiagGaussian<S> q_plain;
  if (m.cfg->head == HeadKind::plain) {
    q_plain = detail::split_latent_stats(m, detail::mlp_two(m.stat_net, s_c));
  }
  std::vector<Var<S>> logp;
  logp.reserve(k_samples);
  for (std::size_t k = 0; k < k_samples; ++k) {
    DiagGaussian<S> q = q_plain;
    if (m.cfg->head == HeadKind::sivi) {
      q = encode_sivi_from(m, s_c, normal_draw<S>(m.cfg->d_eps, rng)).posterior;
    }
    Var<S> z = reparam_sample(q, rng);
    logp.push_back(field_logpdf(decode(m, tgt.coords, z), tgt.values));
  }
  Var<S> lse = add_scalar(logsumexp(pack(logp)),
                          -std::log(static_cast<double>(k_samples)));
  return mul_scalar(lse, 1.0 / static_cast<double>(tgt.size()));
}

// --- value-level wrappers -----------------------------------------------------------

template <typename S>
ObjectiveValue elbo(ModelParams<S>& p, const ModelConfig& c,
                    const PointSet<S>& full, Philox& rng,
                    std::size_t sivi_k = 16,
                    SiviPrior sivi_prior = SiviPrior::standard) {
  Graph<S> g;
  BoundModel<S> m = bind_model(g, p, c);
  if (c.head == HeadKind::sivi) {
    return build_sivi_bound(m, full, full, sivi_k, sivi_prior, rng).values();
  }
  return build_elbo(m, full, rng).values();
}

struct NpObjectiveValue {
  ObjectiveValue sampled;
  double analytic_value = 0.0;
  double closed_form_kl = 0.0;
};

template <typename S>
NpObjectiveValue np_objective(ModelParams<S>& p, const ModelConfig& c,
                              const PointSet<S>& ctx, const PointSet<S>& tgt,
                              Philox& rng) {
  Graph<S> g;
  BoundModel<S> m = bind_model(g, p, c);
  NpObjectiveVars<S> v = build_np_objective(m, ctx, tgt, rng);
  return NpObjectiveValue{v.sampled_values(),
                          static_cast<double>(v.analytic_value.item()),
                          static_cast<double>(v.kl_closed.item())};
}

template <typename S>
ObjectiveValue sivi_bound(ModelParams<S>& p, const ModelConfig& c,
                          const PointSet<S>& ctx, const PointSet<S>& tgt,
                          std::size_t k_extra, SiviPrior prior, Philox& rng) {
  Graph<S> g;
  BoundModel<S> m = bind_model(g, p, c);
  return build_sivi_bound(m, ctx, tgt, k_extra, prior, rng).values();
}

template <typename S>
double iwae_loglik(ModelParams<S>& p, const ModelConfig& c,
                   const PointSet<S>& ctx, const PointSet<S>& tgt,
                   std::size_t k_samples, Philox& rng) {
  Graph<S> g;
  BoundModel<S> m = bind_model(g, p, c);
  return static_cast<double>(
      build_iwae_loglik(m, ctx, tgt, k_samples, rng).item());
}

// Gradient-free IWAE evaluation; identical draw order to the graph route.
template <typename S>
double iwae_loglik_value(ModelParams<S>& p, const ModelConfig& c,
                         const PointSet<S>& ctx, const PointSet<S>& tgt,
                         std::size_t k_samples, Philox& rng) {
  if (k_samples < 1) throw error("iwae_loglik: K must be >= 1");
  detail::require_disjoint(ctx, tgt);
  const Tensor<S> pooled = pooled_embedding_values(p, c, ctx);
  Tensor<double> logp({k_samples});
  for (std::size_t k = 0; k < k_samples; ++k) {
    Tensor<S> z = draw_latent_from(p, c, pooled, rng);
    DecodedValues<S> f = decode_values(p, c, tgt.coords, z);
    logp[k] = gaussian_logpdf(f.mean, f.sigma, tgt.values);
  }
  return (logsumexp_forward(logp) - std::log(static_cast<double>(k_samples))) /
         static_cast<double>(tgt.size());
}

}  // namespace npkit
