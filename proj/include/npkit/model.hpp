#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "npkit/autodiff.hpp"
#include "npkit/distributions.hpp"
#include "npkit/random.hpp"
#include "npkit/tensor.hpp"

namespace npkit {

enum class Pooling { mean, max };
enum class HeadKind { plain, sivi };
enum class ObsVariance { fixed, learned };
// Range of the latent std head: narrow = 0.9 + 0.1*sigmoid (default),
// wide = 0.1 + 0.9*sigmoid.
enum class LatentSigma { narrow, wide };

struct ModelConfig {
  std::size_t d_x = 2;  // pixel coordinate (row, col), normalized
  std::size_t d_y = 1;  // greyscale intensity
  std::size_t d_h = 64;
  std::size_t d_s = 64;
  std::size_t d_z = 64;
  std::size_t d_psi = 16;
  std::size_t d_eps = 16;
  Pooling pooling = Pooling::max;
  HeadKind head = HeadKind::plain;
  ObsVariance obs_variance = ObsVariance::fixed;
  double sigma0 = 0.2;
  LatentSigma latent_sigma = LatentSigma::narrow;

  void validate() const {
    if (d_x < 1 || d_y < 1 || d_h < 1 || d_s < 1 || d_z < 1 || d_psi < 1 ||
        d_eps < 1) {
      throw config_error("model config: all dims must be >= 1");
    }
    if (!(sigma0 > 0.0)) {
      throw config_error("model config: sigma0 must be > 0");
    }
  }
};

template <typename S>
struct AffineLayer {
  Tensor<S> w;  // [in, out]
  Tensor<S> b;  // [out]
};

// Named parameter tensors of the four networks:
//   point_net  per-point feature embedding, 3 layers (fc+relu, fc+relu, fc)
//   mix_net    mixing-variable net of the sivi head, 2 layers (empty for plain)
//   stat_net   latent mean/std head, 2 layers
//   decoder    observation net, 5 layers
template <typename S>
struct ModelParams {
  std::vector<AffineLayer<S>> point_net;
  std::vector<AffineLayer<S>> mix_net;
  std::vector<AffineLayer<S>> stat_net;
  std::vector<AffineLayer<S>> decoder;

  template <typename Fn>
  void visit(Fn&& fn) {
    auto walk = [&](const char* group, std::vector<AffineLayer<S>>& layers) {
      for (std::size_t i = 0; i < layers.size(); ++i) {
        const std::string base = std::string(group) + "." + std::to_string(i);
        fn(base + ".w", layers[i].w);
        fn(base + ".b", layers[i].b);
      }
    };
    walk("point_net", point_net);
    walk("mix_net", mix_net);
    walk("stat_net", stat_net);
    walk("decoder", decoder);
  }

  std::vector<Tensor<S>*> tensors() {
    std::vector<Tensor<S>*> out;
    visit([&](const std::string&, Tensor<S>& t) { out.push_back(&t); });
    return out;
  }

  std::vector<std::pair<std::string, Tensor<S>*>> named_tensors() {
    std::vector<std::pair<std::string, Tensor<S>*>> out;
    visit([&](const std::string& n, Tensor<S>& t) { out.emplace_back(n, &t); });
    return out;
  }

  bool all_finite() {
    bool ok = true;
    visit([&](const std::string&, Tensor<S>& t) { ok = ok && t.all_finite(); });
    return ok;
  }

  template <typename T>
  ModelParams<T> cast() {
    ModelParams<T> out;
    auto conv = [](const std::vector<AffineLayer<S>>& in) {
      std::vector<AffineLayer<T>> res;
      res.reserve(in.size());
      for (const auto& l : in) {
        res.push_back({l.w.template cast<T>(), l.b.template cast<T>()});
      }
      return res;
    };
    out.point_net = conv(point_net);
    out.mix_net = conv(mix_net);
    out.stat_net = conv(stat_net);
    out.decoder = conv(decoder);
    return out;
  }
};

namespace detail {

// Fan-in-scaled uniform init, U(-1/sqrt(in), 1/sqrt(in)) for weights and bias.
template <typename S>
AffineLayer<S> init_affine(std::size_t in, std::size_t out, Philox& rng) {
  AffineLayer<S> l{Tensor<S>::matrix(in, out), Tensor<S>({out})};
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  for (S& v : l.w.raw()) {
    v = static_cast<S>((2.0 * rng.uniform() - 1.0) * bound);
  }
  for (S& v : l.b.raw()) {
    v = static_cast<S>((2.0 * rng.uniform() - 1.0) * bound);
  }
  return l;
}

}  // namespace detail

template <typename S>
ModelParams<S> init_params(const ModelConfig& c, Philox& rng) {
  c.validate();
  ModelParams<S> p;
  p.point_net.push_back(detail::init_affine<S>(c.d_x + c.d_y, c.d_h, rng));
  p.point_net.push_back(detail::init_affine<S>(c.d_h, c.d_h, rng));
  p.point_net.push_back(detail::init_affine<S>(c.d_h, c.d_s, rng));
  if (c.head == HeadKind::sivi) {
    p.mix_net.push_back(detail::init_affine<S>(c.d_s + c.d_eps, c.d_h, rng));
    p.mix_net.push_back(detail::init_affine<S>(c.d_h, c.d_psi, rng));
    p.stat_net.push_back(detail::init_affine<S>(c.d_s + c.d_psi, c.d_h, rng));
  } else {
    p.stat_net.push_back(detail::init_affine<S>(c.d_s, c.d_h, rng));
  }
  p.stat_net.push_back(detail::init_affine<S>(c.d_h, 2 * c.d_z, rng));
  const std::size_t dec_out =
      c.obs_variance == ObsVariance::learned ? 2 * c.d_y : c.d_y;
  p.decoder.push_back(detail::init_affine<S>(c.d_x + c.d_z, c.d_h, rng));
  for (int i = 0; i < 3; ++i) {
    p.decoder.push_back(detail::init_affine<S>(c.d_h, c.d_h, rng));
  }
  p.decoder.push_back(detail::init_affine<S>(c.d_h, dec_out, rng));
  return p;
}

// A set of observed points: coordinates in [0,1]^d_x with their values.
template <typename S>
struct PointSet {
  Tensor<S> coords;  // [n, d_x]
  Tensor<S> values;  // [n, d_y]

  std::size_t size() const {
    return coords.rank() == 2 ? coords.rows() : 0;
  }

  void validate() const {
    if (coords.rank() != 2 || values.rank() != 2 ||
        coords.rows() != values.rows()) {
      throw shape_error("point set: coords/values must be matching matrices");
    }
    for (std::size_t i = 0; i < coords.size(); ++i) {
      if (coords[i] < S(0) || coords[i] > S(1)) {
        throw error("point set: coordinates must lie in [0,1]");
      }
    }
    for (std::size_t i = 0; i < coords.rows(); ++i) {
      for (std::size_t j = i + 1; j < coords.rows(); ++j) {
        bool same = true;
        for (std::size_t k = 0; k < coords.cols(); ++k) {
          if (coords.at(i, k) != coords.at(j, k)) {
            same = false;
            break;
          }
        }
        if (same) throw error("point set: duplicate coordinates");
      }
    }
  }
};

// Query coordinates for every pixel of an H x W grid, row-major,
// (row/(H-1), col/(W-1)).
template <typename S>
Tensor<S> grid_coords(std::size_t h, std::size_t w) {
  Tensor<S> g = Tensor<S>::matrix(h * w, 2);
  const S hden = h > 1 ? static_cast<S>(h - 1) : S(1);
  const S wden = w > 1 ? static_cast<S>(w - 1) : S(1);
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      g.at(r * w + c, 0) = static_cast<S>(r) / hden;
      g.at(r * w + c, 1) = static_cast<S>(c) / wden;
    }
  }
  return g;
}

// Point set over the given pixel indices of a flat H x W image in [0,1].
template <typename S, typename Pix>
PointSet<S> points_from_pixels(const Pix* image, std::size_t h, std::size_t w,
                               const std::uint32_t* idx, std::size_t n) {
  PointSet<S> set{Tensor<S>::matrix(n, 2), Tensor<S>::matrix(n, 1)};
  const S hden = h > 1 ? static_cast<S>(h - 1) : S(1);
  const S wden = w > 1 ? static_cast<S>(w - 1) : S(1);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t r = idx[i] / w, c = idx[i] % w;
    set.coords.at(i, 0) = static_cast<S>(r) / hden;
    set.coords.at(i, 1) = static_cast<S>(c) / wden;
    set.values.at(i, 0) = static_cast<S>(image[idx[i]]);
  }
  return set;
}

// --- graph-bound forward pass -------------------------------------------------

template <typename S>
struct BoundLayer {
  Var<S> w, b;
};

template <typename S>
struct BoundModel {
  Graph<S>* g = nullptr;
  const ModelConfig* cfg = nullptr;
  std::vector<BoundLayer<S>> point_net, mix_net, stat_net, decoder;
  std::vector<Var<S>> all;  // same order as ModelParams::tensors()
};

template <typename S>
BoundModel<S> bind_model(Graph<S>& g, ModelParams<S>& p,
                         const ModelConfig& cfg) {
  BoundModel<S> b;
  b.g = &g;
  b.cfg = &cfg;
  auto bind_group = [&](std::vector<AffineLayer<S>>& layers,
                        std::vector<BoundLayer<S>>& out) {
    for (auto& l : layers) {
      BoundLayer<S> bl{g.leaf(l.w), g.leaf(l.b)};
      b.all.push_back(bl.w);
      b.all.push_back(bl.b);
      out.push_back(bl);
    }
  };
  bind_group(p.point_net, b.point_net);
  bind_group(p.mix_net, b.mix_net);
  bind_group(p.stat_net, b.stat_net);
  bind_group(p.decoder, b.decoder);
  return b;
}

template <typename S>
struct EncodeResult {
  Var<S> pooled;             // s_C
  DiagGaussian<S> posterior;  // q(z | .)
  Var<S> mixer;              // psi (sivi head only)
};

namespace detail {

template <typename S>
Var<S> mlp_two(const std::vector<BoundLayer<S>>& net, Var<S> x) {
  return affine(relu(affine(x, net[0].w, net[0].b)), net[1].w, net[1].b);
}

template <typename S>
DiagGaussian<S> split_latent_stats(const BoundModel<S>& m, Var<S> stats) {
  const std::size_t dz = m.cfg->d_z;
  Var<S> mu = slice(stats, 0, dz);
  Var<S> raw = slice(stats, dz, dz);
  Var<S> sig;
  if (m.cfg->latent_sigma == LatentSigma::narrow) {
    sig = add_scalar(mul_scalar(sigmoid(raw), 0.1), 0.9);
  } else {
    sig = add_scalar(mul_scalar(sigmoid(raw), 0.9), 0.1);
  }
  return DiagGaussian<S>{mu, sig};
}

}  // namespace detail

template <typename S>
struct EncodedValues;

template <typename S>
EncodeResult<S> encode_sivi_from(const BoundModel<S>& m, Var<S> pooled,
                                 const Tensor<S>& eps);
template <typename S>
EncodedValues<S> encode_sivi_values_from(ModelParams<S>& p,
                                         const ModelConfig& c,
                                         const Tensor<S>& pooled,
                                         const Tensor<S>& eps);

// Per-point features of a set -> [n, d_s].
template <typename S>
Var<S> embed_points(const BoundModel<S>& m, const PointSet<S>& set) {
  if (set.size() < 1) throw error("encode: empty context set");
  Graph<S>& g = *m.g;
  Tensor<S> pts = Tensor<S>::matrix(set.size(), m.cfg->d_x + m.cfg->d_y);
  for (std::size_t i = 0; i < set.size(); ++i) {
    for (std::size_t k = 0; k < m.cfg->d_x; ++k) {
      pts.at(i, k) = set.coords.at(i, k);
    }
    for (std::size_t k = 0; k < m.cfg->d_y; ++k) {
      pts.at(i, m.cfg->d_x + k) = set.values.at(i, k);
    }
  }
  Var<S> h = g.leaf(std::move(pts));
  h = relu(affine(h, m.point_net[0].w, m.point_net[0].b));
  h = relu(affine(h, m.point_net[1].w, m.point_net[1].b));
  return affine(h, m.point_net[2].w, m.point_net[2].b);
}

template <typename S>
Var<S> pooled_embedding(const BoundModel<S>& m, const PointSet<S>& set) {
  Var<S> s = embed_points(m, set);
  return pool(s, m.cfg->pooling == Pooling::mean ? PoolKind::mean
                                                 : PoolKind::max);
}

// Plain head: q(z | set) = N(mu, sigma^2) from the pooled embedding.
template <typename S>
EncodeResult<S> encode_np(const BoundModel<S>& m, const PointSet<S>& set) {
  if (m.cfg->head != HeadKind::plain) {
    throw error("encode_np: model head is not plain");
  }
  Var<S> s = pooled_embedding(m, set);
  Var<S> stats = detail::mlp_two(m.stat_net, s);
  return EncodeResult<S>{s, detail::split_latent_stats(m, stats), Var<S>{}};
}

// Sivi head: psi = mix_net(s, eps); q(z | psi, set) = N(stat_net(s, psi)).
// The marginal posterior is the implicit mixture over eps.
template <typename S>
EncodeResult<S> encode_sivi(const BoundModel<S>& m, const PointSet<S>& set,
                            const Tensor<S>& eps) {
  if (m.cfg->head != HeadKind::sivi) {
    throw error("encode_sivi: model head is not sivi");
  }
  if (eps.size() != m.cfg->d_eps) {
    throw shape_error("encode_sivi: eps dimension mismatch");
  }
  Var<S> s = pooled_embedding(m, set);
  return encode_sivi_from(m, s, eps);
}

// Sivi conditional for an already-pooled embedding (lets one embedding serve
// several mixing draws).
template <typename S>
EncodeResult<S> encode_sivi_from(const BoundModel<S>& m, Var<S> pooled,
                                 const Tensor<S>& eps) {
  Graph<S>& g = *m.g;
  Var<S> mix_in = concat(pooled, g.leaf(eps));
  Var<S> psi = detail::mlp_two(m.mix_net, mix_in);
  Var<S> stats = detail::mlp_two(m.stat_net, concat(pooled, psi));
  return EncodeResult<S>{pooled, detail::split_latent_stats(m, stats), psi};
}

template <typename S>
EncodeResult<S> encode_sivi(const BoundModel<S>& m, const PointSet<S>& set,
                            Philox& rng) {
  return encode_sivi(m, set, normal_draw<S>(m.cfg->d_eps, rng));
}

// Head-dispatching encode; sivi draws one mixing variable from rng.
template <typename S>
EncodeResult<S> encode(const BoundModel<S>& m, const PointSet<S>& set,
                       Philox& rng) {
  return m.cfg->head == HeadKind::plain ? encode_np(m, set)
                                        : encode_sivi(m, set, rng);
}

// Conditional observation field over target coordinates: per-point mean and
// std of the factorized output distribution.
template <typename S>
struct DecodedField {
  Var<S> mean;   // [m, d_y]
  Var<S> sigma;  // [m, d_y]
};

template <typename S>
DecodedField<S> decode(const BoundModel<S>& m, const Tensor<S>& target_coords,
                       Var<S> z) {
  if (target_coords.rank() != 2 || target_coords.rows() < 1 ||
      target_coords.cols() != m.cfg->d_x) {
    throw shape_error("decode: target coords must be [m, d_x]");
  }
  Graph<S>& g = *m.g;
  Var<S> h = broadcast_concat(g.leaf(target_coords), z);
  for (std::size_t l = 0; l + 1 < m.decoder.size(); ++l) {
    h = relu(affine(h, m.decoder[l].w, m.decoder[l].b));
  }
  h = affine(h, m.decoder.back().w, m.decoder.back().b);
  const std::size_t dy = m.cfg->d_y;
  if (m.cfg->obs_variance == ObsVariance::learned) {
    Var<S> mean = slice_cols(h, 0, dy);
    Var<S> raw = slice_cols(h, dy, dy);
    Var<S> sig = add_scalar(mul_scalar(softplus(raw), 0.1), 0.9);
    return DecodedField<S>{mean, sig};
  }
  Tensor<S> s0(h.value().shape(), static_cast<S>(m.cfg->sigma0));
  return DecodedField<S>{h, g.leaf(std::move(s0))};
}

// Factorized log-likelihood of observed values under a decoded field.
template <typename S>
Var<S> field_logpdf(const DecodedField<S>& f, const Tensor<S>& values) {
  if (!f.mean.value().same_shape(values)) {
    throw shape_error("field_logpdf: value shape mismatch");
  }
  Graph<S>& g = *f.mean.graph();
  Var<S> t = div(sub(g.leaf(values), f.mean), f.sigma);
  Var<S> quad = mul_scalar(sum(mul(t, t)), -0.5);
  Var<S> norm = mul_scalar(sum(log(f.sigma)), -1.0);
  return add_scalar(add(quad, norm),
                    -0.5 * kLogTwoPi * static_cast<double>(values.size()));
}

// --- gradient-free forward pass (same kernels, no tape) ------------------------

template <typename S>
struct EncodedValues {
  Tensor<S> pooled;
  Tensor<S> mu, sigma;
  Tensor<S> psi;  // sivi only
};

namespace detail {

template <typename S>
Tensor<S> point_matrix(const ModelConfig& c, const PointSet<S>& set) {
  Tensor<S> pts = Tensor<S>::matrix(set.size(), c.d_x + c.d_y);
  for (std::size_t i = 0; i < set.size(); ++i) {
    for (std::size_t k = 0; k < c.d_x; ++k) pts.at(i, k) = set.coords.at(i, k);
    for (std::size_t k = 0; k < c.d_y; ++k) {
      pts.at(i, c.d_x + k) = set.values.at(i, k);
    }
  }
  return pts;
}

template <typename S>
Tensor<S> mlp_two_values(const std::vector<AffineLayer<S>>& net,
                         const Tensor<S>& x) {
  return affine_forward(relu_forward(affine_forward(x, net[0].w, net[0].b)),
                        net[1].w, net[1].b);
}

// Mirrors the graph route (sigmoid, then a scale pass, then an offset pass)
// so both routes round identically.
template <typename S>
void split_latent_stats_values(const ModelConfig& c, const Tensor<S>& stats,
                               Tensor<S>* mu, Tensor<S>* sigma) {
  *mu = Tensor<S>({c.d_z});
  std::copy(stats.data(), stats.data() + c.d_z, mu->data());
  Tensor<S> raw({c.d_z});
  std::copy(stats.data() + c.d_z, stats.data() + 2 * c.d_z, raw.data());
  const bool narrow = c.latent_sigma == LatentSigma::narrow;
  const S scale = narrow ? static_cast<S>(0.1) : static_cast<S>(0.9);
  const S offset = narrow ? static_cast<S>(0.9) : static_cast<S>(0.1);
  Tensor<S> sg = sigmoid_forward(raw);
  for (std::size_t i = 0; i < c.d_z; ++i) sg[i] *= scale;
  *sigma = Tensor<S>({c.d_z});
  for (std::size_t i = 0; i < c.d_z; ++i) (*sigma)[i] = sg[i] + offset;
}

}  // namespace detail

// Per-point features [n, d_s] of a set; the rows are independent of the rest
// of the set, so subsets can be pooled directly from this matrix.
template <typename S>
Tensor<S> point_embeddings_values(ModelParams<S>& p, const ModelConfig& c,
                                  const PointSet<S>& set) {
  if (set.size() < 1) throw error("encode: empty context set");
  Tensor<S> h = detail::point_matrix(c, set);
  h = relu_forward(affine_forward(h, p.point_net[0].w, p.point_net[0].b));
  h = relu_forward(affine_forward(h, p.point_net[1].w, p.point_net[1].b));
  return affine_forward(h, p.point_net[2].w, p.point_net[2].b);
}

// Pools the selected rows of a per-point embedding matrix, in index order,
// matching pool_*_forward over the equivalent subset matrix bit for bit.
template <typename S>
Tensor<S> pool_rows(const Tensor<S>& emb,
                    std::span<const std::uint32_t> rows, Pooling pooling) {
  if (rows.empty()) throw error("pool_rows: empty selection");
  const std::size_t d = emb.cols();
  Tensor<S> out({d});
  if (pooling == Pooling::max) {
    const S* r0 = emb.data() + static_cast<std::size_t>(rows[0]) * d;
    std::copy(r0, r0 + d, out.data());
    for (std::size_t i = 1; i < rows.size(); ++i) {
      const S* ri = emb.data() + static_cast<std::size_t>(rows[i]) * d;
      for (std::size_t j = 0; j < d; ++j) out[j] = std::max(out[j], ri[j]);
    }
  } else {
    std::vector<double> acc(d, 0.0);
    for (std::uint32_t r : rows) {
      const S* ri = emb.data() + static_cast<std::size_t>(r) * d;
      for (std::size_t j = 0; j < d; ++j) acc[j] += static_cast<double>(ri[j]);
    }
    for (std::size_t j = 0; j < d; ++j) {
      out[j] = static_cast<S>(acc[j] / static_cast<double>(rows.size()));
    }
  }
  return out;
}

// Latent stats of the plain head for an already-pooled embedding.
template <typename S>
void latent_stats_values(ModelParams<S>& p, const ModelConfig& c,
                         const Tensor<S>& pooled, Tensor<S>* mu,
                         Tensor<S>* sigma) {
  Tensor<S> stats = detail::mlp_two_values(p.stat_net, pooled);
  detail::split_latent_stats_values(c, stats, mu, sigma);
}

template <typename S>
Tensor<S> pooled_embedding_values(ModelParams<S>& p, const ModelConfig& c,
                                  const PointSet<S>& set) {
  Tensor<S> h = point_embeddings_values(p, c, set);
  return c.pooling == Pooling::mean ? pool_mean_forward(h)
                                    : pool_max_forward(h);
}

template <typename S>
EncodedValues<S> encode_values(ModelParams<S>& p, const ModelConfig& c,
                               const PointSet<S>& set) {
  if (c.head != HeadKind::plain) {
    throw error("encode_values: model head is not plain");
  }
  EncodedValues<S> out;
  out.pooled = pooled_embedding_values(p, c, set);
  Tensor<S> stats = detail::mlp_two_values(p.stat_net, out.pooled);
  detail::split_latent_stats_values(c, stats, &out.mu, &out.sigma);
  return out;
}

template <typename S>
EncodedValues<S> encode_sivi_values(ModelParams<S>& p, const ModelConfig& c,
                                    const PointSet<S>& set,
                                    const Tensor<S>& eps) {
  if (c.head != HeadKind::sivi) {
    throw error("encode_sivi_values: model head is not sivi");
  }
  EncodedValues<S> out;
  out.pooled = pooled_embedding_values(p, c, set);
  return encode_sivi_values_from(p, c, out.pooled, eps);
}

template <typename S>
EncodedValues<S> encode_sivi_values_from(ModelParams<S>& p,
                                         const ModelConfig& c,
                                         const Tensor<S>& pooled,
                                         const Tensor<S>& eps) {
  EncodedValues<S> out;
  out.pooled = pooled;
  out.psi = detail::mlp_two_values(p.mix_net, concat_forward(pooled, eps));
  Tensor<S> stats =
      detail::mlp_two_values(p.stat_net, concat_forward(pooled, out.psi));
  detail::split_latent_stats_values(c, stats, &out.mu, &out.sigma);
  return out;
}

template <typename S>
struct DecodedValues {
  Tensor<S> mean;   // [m, d_y]
  Tensor<S> sigma;  // [m, d_y]
};

template <typename S>
DecodedValues<S> decode_values(ModelParams<S>& p, const ModelConfig& c,
                               const Tensor<S>& target_coords,
                               const Tensor<S>& z) {
  if (target_coords.rank() != 2 || target_coords.cols() != c.d_x) {
    throw shape_error("decode: target coords must be [m, d_x]");
  }
  Tensor<S> h = broadcast_concat_forward(target_coords, z);
  for (std::size_t l = 0; l + 1 < p.decoder.size(); ++l) {
    h = relu_forward(affine_forward(h, p.decoder[l].w, p.decoder[l].b));
  }
  h = affine_forward(h, p.decoder.back().w, p.decoder.back().b);
  const std::size_t m = h.rows(), dy = c.d_y;
  DecodedValues<S> out;
  if (c.obs_variance == ObsVariance::learned) {
    out.mean = Tensor<S>::matrix(m, dy);
    Tensor<S> raw = Tensor<S>::matrix(m, dy);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < dy; ++j) {
        out.mean.at(i, j) = h.at(i, j);
        raw.at(i, j) = h.at(i, dy + j);
      }
    }
    out.sigma = softplus_forward(raw);
    for (std::size_t i = 0; i < out.sigma.size(); ++i) {
      out.sigma[i] *= static_cast<S>(0.1);
    }
    for (std::size_t i = 0; i < out.sigma.size(); ++i) {
      out.sigma[i] += static_cast<S>(0.9);
    }
  } else {
    out.mean = h;
    out.sigma = Tensor<S>(h.shape(), static_cast<S>(c.sigma0));
  }
  return out;
}

// Per-target-point diagonal Gaussians of a decoded field.
template <typename S>
std::vector<std::pair<Tensor<S>, Tensor<S>>> field_points(
    const DecodedValues<S>& f) {
  std::vector<std::pair<Tensor<S>, Tensor<S>>> out;
  const std::size_t m = f.mean.rows(), dy = f.mean.cols();
  out.reserve(m);
  for (std::size_t i = 0; i < m; ++i) {
    Tensor<S> mu({dy}), sg({dy});
    for (std::size_t j = 0; j < dy; ++j) {
      mu[j] = f.mean.at(i, j);
      sg[j] = f.sigma.at(i, j);
    }
    out.emplace_back(std::move(mu), std::move(sg));
  }
  return out;
}

// One posterior draw of z given a context set, dispatching on the head.
template <typename S>
Tensor<S> draw_latent(ModelParams<S>& p, const ModelConfig& c,
                      const PointSet<S>& ctx, Philox& rng) {
  EncodedValues<S> e;
  if (c.head == HeadKind::plain) {
    e = encode_values(p, c, ctx);
  } else {
    e = encode_sivi_values(p, c, ctx, normal_draw<S>(c.d_eps, rng));
  }
  Tensor<S> z({c.d_z});
  for (std::size_t i = 0; i < c.d_z; ++i) {
    z[i] = e.mu[i] + e.sigma[i] * static_cast<S>(rng.normal());
  }
  return z;
}

// Same draw reusing a precomputed pooled embedding.
template <typename S>
Tensor<S> draw_latent_from(ModelParams<S>& p, const ModelConfig& c,
                           const Tensor<S>& pooled, Philox& rng) {
  EncodedValues<S> e;
  if (c.head == HeadKind::plain) {
    Tensor<S> stats = detail::mlp_two_values(p.stat_net, pooled);
    detail::split_latent_stats_values(c, stats, &e.mu, &e.sigma);
  } else {
    e = encode_sivi_values_from(p, c, pooled, normal_draw<S>(c.d_eps, rng));
  }
  Tensor<S> z({c.d_z});
  for (std::size_t i = 0; i < c.d_z; ++i) {
    z[i] = e.mu[i] + e.sigma[i] * static_cast<S>(rng.normal());
  }
  return z;
}

// --- posterior predictive sampling ---------------------------------------------

template <typename S>
struct Completion {
  std::vector<Tensor<S>> means;  // k flat H*W mean images
  Tensor<S> stddev;              // per-pixel sample std over the k means
};

// Draws k task embeddings from the posterior given the context, decodes the
// mean image for each, optionally copies the observed context values into the
// outputs, and reports the per-pixel sample standard deviation over the k
// images (zero if k == 1).
template <typename S>
Completion<S> sample_completion(ModelParams<S>& p, const ModelConfig& c,
                                const PointSet<S>& ctx, std::size_t h,
                                std::size_t w, std::size_t k,
                                bool copy_context, Philox& rng) {
  if (c.d_y != 1) throw error("sample_completion: requires d_y == 1");
  if (k < 1) throw error("sample_completion: k must be >= 1");
  if (ctx.size() < 1) throw error("sample_completion: empty context set");
  const Tensor<S> grid = grid_coords<S>(h, w);
  const Tensor<S> pooled = pooled_embedding_values(p, c, ctx);

  // Map normalized context coordinates back to pixel indices.
  std::vector<std::size_t> ctx_idx(ctx.size());
  for (std::size_t i = 0; i < ctx.size(); ++i) {
    const auto r = static_cast<std::size_t>(
        std::lround(static_cast<double>(ctx.coords.at(i, 0)) *
                    static_cast<double>(h > 1 ? h - 1 : 1)));
    const auto col = static_cast<std::size_t>(
        std::lround(static_cast<double>(ctx.coords.at(i, 1)) *
                    static_cast<double>(w > 1 ? w - 1 : 1)));
    ctx_idx[i] = r * w + col;
  }

  Completion<S> out;
  out.means.reserve(k);
  for (std::size_t s = 0; s < k; ++s) {
    Tensor<S> z = draw_latent_from(p, c, pooled, rng);
    DecodedValues<S> f = decode_values(p, c, grid, z);
    Tensor<S> img({h * w});
    for (std::size_t i = 0; i < h * w; ++i) img[i] = f.mean[i];
    if (copy_context) {
      for (std::size_t i = 0; i < ctx.size(); ++i) {
        img[ctx_idx[i]] = ctx.values.at(i, 0);
      }
    }
    out.means.push_back(std::move(img));
  }

  out.stddev = Tensor<S>({h * w});
  if (k > 1) {
    // deviations taken against the first sample, so a degenerate stack of
    // identical images yields an exactly zero std image
    for (std::size_t i = 0; i < h * w; ++i) {
      const double ref = static_cast<double>(out.means[0][i]);
      double mean_dev = 0.0;
      for (std::size_t s = 0; s < k; ++s) {
        mean_dev += static_cast<double>(out.means[s][i]) - ref;
      }
      mean_dev /= static_cast<double>(k);
      double ss = 0.0;
      for (std::size_t s = 0; s < k; ++s) {
        const double d =
            (static_cast<double>(out.means[s][i]) - ref) - mean_dev;
        ss += d * d;
      }
      out.stddev[i] = static_cast<S>(std::sqrt(ss / static_cast<double>(k - 1)));
    }
  }
  return out;
}

}  // namespace npkit
