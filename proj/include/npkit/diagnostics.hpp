#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "npkit/checkpoint.hpp"
#include "npkit/dataio.hpp"
#include "npkit/distributions.hpp"
#include "npkit/model.hpp"
#include "npkit/training.hpp"

namespace npkit {

// --- posterior entropy vs context size -------------------------------------------

struct EntropyCurve {
  std::vector<std::size_t> sizes;
  std::vector<double> mean, stddev;
  std::vector<char> beyond_training;  // size exceeds the training maximum
};

namespace detail {

// Posterior entropy for a pooled embedding; the sivi head has no closed-form
// mixture entropy, so it reports conditional entropies averaged over
// `sivi_psi_draws` mixing draws.
template <typename S>
double posterior_entropy_from(ModelParams<S>& p, const ModelConfig& c,
                              const Tensor<S>& pooled, Philox& rng,
                              std::size_t sivi_psi_draws) {
  if (c.head == HeadKind::plain) {
    Tensor<S> mu, sigma;
    latent_stats_values(p, c, pooled, &mu, &sigma);
    return gaussian_entropy(sigma);
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < sivi_psi_draws; ++i) {
    EncodedValues<S> e = encode_sivi_values_from(
        p, c, pooled, normal_draw<S>(c.d_eps, rng));
    acc += gaussian_entropy(e.sigma);
  }
  return acc / static_cast<double>(sivi_psi_draws);
}

}  // namespace detail

// Mean/std of posterior entropy over `reps` random context sets per image for
// each context size. Sizes above `train_size_max` are flagged.
template <typename S>
EntropyCurve entropy_curve(ModelParams<S>& p, const ModelConfig& c,
                           const ImageDataset& data,
                           std::span<const std::uint32_t> image_ids,
                           const std::vector<std::size_t>& sizes,
                           std::size_t reps, std::size_t train_size_max,
                           Philox& rng, std::size_t sivi_psi_draws = 16) {
  const std::size_t pixels = data.width * data.height;
  if (reps < 1) throw error("entropy_curve: reps must be >= 1");
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    if (sizes[i] < 1 || sizes[i] > pixels) {
      throw error("entropy_curve: size out of range");
    }
    if (i > 0 && sizes[i] <= sizes[i - 1]) {
      throw error("entropy_curve: sizes must be strictly increasing");
    }
  }

  std::vector<std::uint32_t> all_idx(pixels);
  for (std::uint32_t i = 0; i < pixels; ++i) all_idx[i] = i;

  EntropyCurve curve;
  curve.sizes = sizes;
  for (std::size_t size : sizes) {
    double sum = 0.0, sum2 = 0.0;
    std::size_t count = 0;
    for (std::uint32_t img : image_ids) {
      const auto image = data.image(img);
      const PointSet<S> all = points_from_pixels<S>(
          image.data(), data.height, data.width, all_idx.data(), pixels);
      const Tensor<S> emb = point_embeddings_values(p, c, all);
      for (std::size_t r = 0; r < reps; ++r) {
        const auto pick = sample_without_replacement(
            rng, static_cast<std::uint32_t>(pixels),
            static_cast<std::uint32_t>(size));
        const Tensor<S> pooled = pool_rows(emb, pick, c.pooling);
        const double h =
            detail::posterior_entropy_from(p, c, pooled, rng, sivi_psi_draws);
        sum += h;
        sum2 += h * h;
        ++count;
      }
    }
    const double mean = sum / static_cast<double>(count);
    const double var =
        std::max(0.0, sum2 / static_cast<double>(count) - mean * mean);
    curve.mean.push_back(mean);
    curve.stddev.push_back(std::sqrt(var));
    curve.beyond_training.push_back(size > train_size_max ? 1 : 0);
  }
  return curve;
}

inline void write_entropy_curve_tsv(const std::string& path,
                                    const EntropyCurve& c) {
  std::ofstream f(path);
  if (!f) throw io_error("cannot write " + path);
  f << "size\tmean\tstd\tbeyond_training\n";
  f.precision(10);
  for (std::size_t i = 0; i < c.sizes.size(); ++i) {
    f << c.sizes[i] << "\t" << c.mean[i] << "\t" << c.stddev[i] << "\t"
      << int(c.beyond_training[i]) << "\n";
  }
}

// --- greedy context selection ------------------------------------------------------

enum class GreedyCriterion { kl_to_full, entropy };

struct GreedyTrace {
  std::vector<std::uint32_t> pixels;  // chosen order
  std::vector<double> criterion;      // value after each addition
};

namespace detail {

template <typename S>
struct PosteriorStats {
  Tensor<S> mu, sigma;
};

// Latent stats for a pooled embedding; sivi uses the zero mixing draw so the
// criterion is deterministic.
template <typename S>
PosteriorStats<S> stats_from_pooled(ModelParams<S>& p, const ModelConfig& c,
                                    const Tensor<S>& pooled) {
  PosteriorStats<S> st;
  if (c.head == HeadKind::plain) {
    latent_stats_values(p, c, pooled, &st.mu, &st.sigma);
  } else {
    EncodedValues<S> e =
        encode_sivi_values_from(p, c, pooled, Tensor<S>({c.d_eps}, S(0)));
    st.mu = e.mu;
    st.sigma = e.sigma;
  }
  return st;
}

}  // namespace detail

// At each step evaluates every unobserved candidate pixel (or a uniform
// subsample of at most `candidate_cap`) and appends the criterion minimizer;
// ties break to the lowest pixel index. kl_to_full is
// KL(q(z | full image) || q(z | context)).
template <typename S>
GreedyTrace greedy_select(ModelParams<S>& p, const ModelConfig& c,
                          std::span<const float> image, std::size_t h,
                          std::size_t w, std::size_t budget,
                          GreedyCriterion crit, std::size_t candidate_cap,
                          Philox& rng) {
  const std::size_t pixels = h * w;
  if (budget > pixels) throw error("greedy_select: budget exceeds pixels");
  GreedyTrace trace;
  if (budget == 0) return trace;

  std::vector<std::uint32_t> all_idx(pixels);
  for (std::uint32_t i = 0; i < pixels; ++i) all_idx[i] = i;
  const PointSet<S> all =
      points_from_pixels<S>(image.data(), h, w, all_idx.data(), pixels);
  const Tensor<S> emb = point_embeddings_values(p, c, all);
  const std::size_t d = emb.cols();

  detail::PosteriorStats<S> full;
  if (crit == GreedyCriterion::kl_to_full) {
    full = detail::stats_from_pooled(p, c, pool_rows(emb, all_idx, c.pooling));
  }

  std::vector<bool> chosen(pixels, false);
  // running pooled state over the chosen prefix
  Tensor<S> run_max({d});
  std::vector<double> run_sum(d, 0.0);

  for (std::size_t step = 0; step < budget; ++step) {
    std::vector<std::uint32_t> cands;
    cands.reserve(pixels - step);
    for (std::uint32_t i = 0; i < pixels; ++i) {
      if (!chosen[i]) cands.push_back(i);
    }
    if (candidate_cap > 0 && cands.size() > candidate_cap) {
      const auto pick = sample_without_replacement(
          rng, static_cast<std::uint32_t>(cands.size()),
          static_cast<std::uint32_t>(candidate_cap));
      std::vector<std::uint32_t> sub;
      sub.reserve(candidate_cap);
      for (std::uint32_t j : pick) sub.push_back(cands[j]);
      std::sort(sub.begin(), sub.end());
      cands.swap(sub);
    }

    double best = 0.0;
    std::uint32_t best_pix = 0;
    bool first = true;
    Tensor<S> pooled({d});
    for (std::uint32_t cand : cands) {
      const S* row = emb.data() + static_cast<std::size_t>(cand) * d;
      if (c.pooling == Pooling::max) {
        if (step == 0) {
          std::copy(row, row + d, pooled.data());
        } else {
          for (std::size_t j = 0; j < d; ++j) {
            pooled[j] = std::max(run_max[j], row[j]);
          }
        }
      } else {
        for (std::size_t j = 0; j < d; ++j) {
          pooled[j] = static_cast<S>((run_sum[j] + row[j]) /
                                     static_cast<double>(step + 1));
        }
      }
      detail::PosteriorStats<S> st = detail::stats_from_pooled(p, c, pooled);
      const double value =
          crit == GreedyCriterion::entropy
              ? gaussian_entropy(st.sigma)
              : gaussian_kl(full.mu, full.sigma, st.mu, st.sigma);
      if (first || value < best) {
        best = value;
        best_pix = cand;
        first = false;
      }
    }

    chosen[best_pix] = true;
    const S* row = emb.data() + static_cast<std::size_t>(best_pix) * d;
    if (c.pooling == Pooling::max) {
      if (step == 0) {
        std::copy(row, row + d, run_max.data());
      } else {
        for (std::size_t j = 0; j < d; ++j) {
          run_max[j] = std::max(run_max[j], row[j]);
        }
      }
    } else {
      for (std::size_t j = 0; j < d; ++j) {
        run_sum[j] += static_cast<double>(row[j]);
      }
    }
    trace.pixels.push_back(best_pix);
    trace.criterion.push_back(best);
  }
  return trace;
}

// --- pooled-embedding norms along a growing context --------------------------------

struct EmbeddingTrace {
  std::vector<std::size_t> sizes;
  std::vector<double> shifted_l1;  // L1 norm after the per-dim min shift
  std::vector<double> entropy;
};

// Pooled embeddings along prefixes of `order`, each dimension shifted by its
// minimum over the reported prefixes so the smallest observed value maps to
// zero. Max pooling only.
template <typename S>
EmbeddingTrace embedding_stats(ModelParams<S>& p, const ModelConfig& c,
                               std::span<const float> image, std::size_t h,
                               std::size_t w,
                               std::span<const std::uint32_t> order,
                               const std::vector<std::size_t>& sizes,
                               Philox& rng, std::size_t sivi_psi_draws = 16) {
  if (c.pooling != Pooling::max) {
    throw error("embedding_stats: requires max pooling");
  }
  const std::size_t pixels = h * w;
  std::vector<std::uint32_t> all_idx(pixels);
  for (std::uint32_t i = 0; i < pixels; ++i) all_idx[i] = i;
  const PointSet<S> all =
      points_from_pixels<S>(image.data(), h, w, all_idx.data(), pixels);
  const Tensor<S> emb = point_embeddings_values(p, c, all);

  EmbeddingTrace tr;
  std::vector<Tensor<S>> pooled_at;
  for (std::size_t size : sizes) {
    if (size < 1 || size > order.size()) {
      throw error("embedding_stats: size out of range");
    }
    pooled_at.push_back(pool_rows(
        emb, std::span<const std::uint32_t>(order.data(), size), c.pooling));
    tr.sizes.push_back(size);
  }
  const std::size_t d = emb.cols();
  std::vector<double> dim_min(d, 0.0);
  for (std::size_t j = 0; j < d; ++j) {
    double m = static_cast<double>(pooled_at[0][j]);
    for (const auto& s : pooled_at) {
      m = std::min(m, static_cast<double>(s[j]));
    }
    dim_min[j] = m;
  }
  for (std::size_t i = 0; i < pooled_at.size(); ++i) {
    double l1 = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      l1 += static_cast<double>(pooled_at[i][j]) - dim_min[j];
    }
    tr.shifted_l1.push_back(l1);
    tr.entropy.push_back(detail::posterior_entropy_from(p, c, pooled_at[i],
                                                        rng, sivi_psi_draws));
  }
  return tr;
}

// --- feed-forward classifiers --------------------------------------------------------

enum class ClassifierInput { pooled_embedding, image };

template <typename S>
struct MlpClassifier {
  std::vector<AffineLayer<S>> layers;  // relu between, raw logits at the end
  ClassifierInput input = ClassifierInput::image;

  std::size_t n_classes() const { return layers.back().b.size(); }
  std::size_t input_dim() const { return layers.front().w.rows(); }

  Tensor<S> logits(const Tensor<S>& x) const {
    Tensor<S> h = x;
    for (std::size_t l = 0; l + 1 < layers.size(); ++l) {
      h = relu_forward(affine_forward(h, layers[l].w, layers[l].b));
    }
    return affine_forward(h, layers.back().w, layers.back().b);
  }

  // Softmax over the class axis; rows of a batch normalize independently.
  Tensor<S> proba(const Tensor<S>& x) const {
    Tensor<S> z = logits(x);
    const std::size_t nc = n_classes();
    const std::size_t rows = z.rank() == 2 ? z.rows() : 1;
    for (std::size_t i = 0; i < rows; ++i) {
      S* zi = z.data() + i * nc;
      S mx = zi[0];
      for (std::size_t j = 1; j < nc; ++j) mx = std::max(mx, zi[j]);
      double acc = 0.0;
      for (std::size_t j = 0; j < nc; ++j) {
        acc += std::exp(static_cast<double>(zi[j] - mx));
      }
      for (std::size_t j = 0; j < nc; ++j) {
        zi[j] = static_cast<S>(std::exp(static_cast<double>(zi[j] - mx)) / acc);
      }
    }
    return z;
  }

  std::size_t predict(const Tensor<S>& x) const {
    Tensor<S> z = logits(x);
    std::size_t best = 0;
    for (std::size_t j = 1; j < z.size(); ++j) {
      if (z[j] > z[best]) best = j;
    }
    return best;
  }
};

struct ClassifierOpts {
  std::vector<std::size_t> hidden{64};
  std::size_t epochs = 30;
  std::size_t batch = 64;
  double lr = 1e-3;
  double holdout_frac = 0.2;
};

struct ClassifierReport {
  double accuracy = 0.0;
  std::size_t holdout_count = 0;
  Tensor<double> confusion;  // [C, C] counts, rows = true class
};

// Cross-entropy training with Adam; the trailing holdout fraction (after a
// seeded shuffle) is used for the accuracy/confusion report.
template <typename S>
std::pair<MlpClassifier<S>, ClassifierReport> train_mlp_classifier(
    const Tensor<S>& features, const std::vector<std::uint8_t>& labels,
    std::size_t n_classes, const ClassifierOpts& opts, Philox& rng,
    ClassifierInput input_kind = ClassifierInput::image) {
  if (features.rank() != 2 ||
      features.rows() != labels.size()) {
    throw shape_error("classifier: features [N,d] must match labels");
  }
  const std::size_t n = features.rows(), d = features.cols();
  std::vector<std::uint32_t> idx(n);
  for (std::uint32_t i = 0; i < n; ++i) idx[i] = i;
  shuffle(rng, idx);
  const std::size_t holdout =
      std::min(n - 1, static_cast<std::size_t>(
                          std::llround(opts.holdout_frac * double(n))));
  const std::size_t n_train = n - holdout;

  std::vector<bool> present(n_classes, false);
  std::size_t distinct = 0;
  for (std::size_t i = 0; i < n_train; ++i) {
    const std::uint8_t l = labels[idx[i]];
    if (l >= n_classes) throw error("classifier: label out of range");
    if (!present[l]) {
      present[l] = true;
      ++distinct;
    }
  }
  if (distinct < 2) {
    throw error("classifier: degenerate single-class training data");
  }

  MlpClassifier<S> clf;
  clf.input = input_kind;
  std::size_t prev = d;
  for (std::size_t hdim : opts.hidden) {
    clf.layers.push_back(detail::init_affine<S>(prev, hdim, rng));
    prev = hdim;
  }
  clf.layers.push_back(detail::init_affine<S>(prev, n_classes, rng));

  std::vector<Tensor<S>*> params;
  for (auto& l : clf.layers) {
    params.push_back(&l.w);
    params.push_back(&l.b);
  }
  AdamState<S> opt = AdamState<S>::like(params);

  std::vector<std::uint32_t> train_idx(idx.begin(), idx.begin() + n_train);
  for (std::size_t epoch = 0; epoch < opts.epochs; ++epoch) {
    shuffle(rng, train_idx);
    for (std::size_t start = 0; start < n_train; start += opts.batch) {
      const std::size_t bsz = std::min(opts.batch, n_train - start);
      Tensor<S> x = Tensor<S>::matrix(bsz, d);
      Tensor<S> onehot = Tensor<S>::matrix(bsz, n_classes);
      for (std::size_t i = 0; i < bsz; ++i) {
        const std::uint32_t j = train_idx[start + i];
        std::copy(features.data() + j * d, features.data() + (j + 1) * d,
                  x.data() + i * d);
        onehot.at(i, labels[j]) = S(1);
      }
      Graph<S> g;
      std::vector<Var<S>> bound;
      for (Tensor<S>* p : params) bound.push_back(g.leaf(*p));
      Var<S> h = g.leaf(std::move(x));
      for (std::size_t l = 0; l + 1 < clf.layers.size(); ++l) {
        h = relu(affine(h, bound[2 * l], bound[2 * l + 1]));
      }
      Var<S> z = affine(h, bound[2 * (clf.layers.size() - 1)],
                        bound[2 * (clf.layers.size() - 1) + 1]);
      Var<S> picked = sum(mul(z, g.leaf(std::move(onehot))));
      Var<S> loss = mul_scalar(sub(sum(rows_logsumexp(z)), picked),
                               1.0 / static_cast<double>(bsz));
      g.backward(loss);
      std::vector<Tensor<S>> grads;
      for (std::size_t t = 0; t < params.size(); ++t) {
        const Tensor<S>& gr = bound[t].grad();
        grads.push_back(gr.empty() ? Tensor<S>(params[t]->shape()) : gr);
      }
      adam_step(opt, params, grads, opts.lr);
    }
  }

  ClassifierReport rep;
  rep.holdout_count = holdout;
  rep.confusion = Tensor<double>::matrix(n_classes, n_classes);
  std::size_t correct = 0;
  Tensor<S> row({d});
  for (std::size_t i = n_train; i < n; ++i) {
    const std::uint32_t j = idx[i];
    std::copy(features.data() + j * d, features.data() + (j + 1) * d,
              row.data());
    const std::size_t pred = clf.predict(row);
    rep.confusion.at(labels[j], pred) += 1.0;
    if (pred == labels[j]) ++correct;
  }
  rep.accuracy =
      holdout > 0 ? static_cast<double>(correct) / double(holdout) : 0.0;
  return {std::move(clf), rep};
}

// --- context-size classifier ----------------------------------------------------------

inline constexpr std::array<std::pair<std::size_t, std::size_t>, 7>
    kSizeBuckets{{{1, 10},
                  {11, 25},
                  {26, 50},
                  {51, 100},
                  {101, 200},
                  {201, 400},
                  {401, 784}}};

inline std::size_t size_bucket(std::size_t n) {
  for (std::size_t b = 0; b < kSizeBuckets.size(); ++b) {
    if (n >= kSizeBuckets[b].first && n <= kSizeBuckets[b].second) return b;
  }
  throw error("size_bucket: context size out of range");
}

template <typename S>
struct SizeEmbeddingData {
  Tensor<S> features;                 // [N, d_s]
  std::vector<std::uint8_t> buckets;  // bucket labels
  std::vector<std::size_t> sizes;
};

// Balanced pooled-embedding dataset: `per_bucket` random context sets per size
// bucket, sizes uniform within the bucket, images uniform over `image_count`.
template <typename S>
SizeEmbeddingData<S> collect_size_embeddings(ModelParams<S>& p,
                                             const ModelConfig& c,
                                             const ImageDataset& data,
                                             std::size_t image_count,
                                             std::size_t per_bucket,
                                             Philox& rng) {
  const std::size_t pixels = data.width * data.height;
  image_count = std::min(image_count, data.count());
  std::vector<std::uint32_t> all_idx(pixels);
  for (std::uint32_t i = 0; i < pixels; ++i) all_idx[i] = i;

  std::map<std::uint32_t, Tensor<S>> emb_cache;
  auto embeddings_of = [&](std::uint32_t img) -> const Tensor<S>& {
    auto it = emb_cache.find(img);
    if (it != emb_cache.end()) return it->second;
    const auto image = data.image(img);
    const PointSet<S> all = points_from_pixels<S>(
        image.data(), data.height, data.width, all_idx.data(), pixels);
    return emb_cache.emplace(img, point_embeddings_values(p, c, all))
        .first->second;
  };

  std::size_t usable = 0;
  for (const auto& [lo, hi] : kSizeBuckets) {
    if (lo <= pixels) ++usable;
  }
  SizeEmbeddingData<S> out;
  out.features = Tensor<S>::matrix(usable * per_bucket, c.d_s);
  std::size_t rowi = 0;
  for (std::size_t b = 0; b < kSizeBuckets.size(); ++b) {
    const auto [lo, hi] = kSizeBuckets[b];
    if (lo > pixels) continue;
    const std::size_t hi_eff = std::min(hi, pixels);
    for (std::size_t i = 0; i < per_bucket; ++i) {
      const auto img =
          static_cast<std::uint32_t>(rng.below(
              static_cast<std::uint32_t>(image_count)));
      const std::size_t size = rng.range(lo, hi_eff + 1);
      const auto pick = sample_without_replacement(
          rng, static_cast<std::uint32_t>(pixels),
          static_cast<std::uint32_t>(size));
      const Tensor<S> pooled = pool_rows(embeddings_of(img), pick, c.pooling);
      std::copy(pooled.data(), pooled.data() + c.d_s,
                out.features.data() + rowi * c.d_s);
      out.buckets.push_back(static_cast<std::uint8_t>(b));
      out.sizes.push_back(size);
      ++rowi;
    }
  }
  return out;
}

template <typename S>
std::pair<MlpClassifier<S>, ClassifierReport> train_size_classifier(
    const SizeEmbeddingData<S>& data, Philox& rng,
    ClassifierOpts opts = ClassifierOpts{}) {
  return train_mlp_classifier(data.features, data.buckets, kSizeBuckets.size(),
                              opts, rng, ClassifierInput::pooled_embedding);
}

// --- digit classifier ------------------------------------------------------------------

// Small feed-forward stand-in for the usual large image classifier; the
// scores only need a competent fixed model.
template <typename S>
std::pair<MlpClassifier<S>, ClassifierReport> train_digit_classifier(
    const ImageDataset& data, Philox& rng,
    ClassifierOpts opts = ClassifierOpts{{256, 256}, 3, 128, 1e-3, 0.1}) {
  if (!data.has_labels()) {
    throw error("digit classifier: dataset has no labels");
  }
  const std::size_t n = data.count(), d = data.width * data.height;
  Tensor<S> feats = Tensor<S>::matrix(n, d);
  for (std::size_t i = 0; i < n * d; ++i) {
    feats[i] = static_cast<S>(data.pixels[i]);
  }
  return train_mlp_classifier(feats, data.labels, 10, opts, rng,
                              ClassifierInput::image);
}

// --- inception score ----------------------------------------------------------------

// exp of the mean KL between per-sample class posteriors and their average;
// lies in [1, C].
inline double inception_score_from_posteriors(const Tensor<double>& post) {
  if (post.rank() != 2 || post.rows() < 1) {
    throw shape_error("inception_score: need [N, C] posteriors");
  }
  const std::size_t n = post.rows(), c = post.cols();
  std::vector<double> marginal(c, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < c; ++j) marginal[j] += post.at(i, j);
  }
  for (double& m : marginal) m /= static_cast<double>(n);
  double mean_kl = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double klv = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double pij = post.at(i, j);
      if (pij > 0.0) klv += pij * (std::log(pij) - std::log(marginal[j]));
    }
    mean_kl += klv;
  }
  return std::exp(mean_kl / static_cast<double>(n));
}

template <typename S>
double inception_score(const std::vector<Tensor<S>>& samples,
                       const MlpClassifier<S>& clf) {
  if (samples.empty()) throw error("inception_score: no samples");
  Tensor<double> post =
      Tensor<double>::matrix(samples.size(), clf.n_classes());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    Tensor<S> pr = clf.proba(samples[i]);
    for (std::size_t j = 0; j < clf.n_classes(); ++j) {
      post.at(i, j) = static_cast<double>(pr[j]);
    }
  }
  return inception_score_from_posteriors(post);
}

// --- digit elimination sequence ---------------------------------------------------------

struct EliminationSequence {
  std::vector<std::vector<std::uint32_t>> contexts;  // 11 nested index sets
  std::vector<int> eliminated;                       // digit per growth step
};

// Context 0 is the top-left pixel. For each digit d = 0..9 in order, the next
// context adds the 10 not-yet-chosen pixels where the class-mean image of the
// target digit differs most in intensity from the class-mean image of d.
inline EliminationSequence elimination_sequence(const ImageDataset& train,
                                                int target_digit = 3) {
  if (!train.has_labels()) {
    throw error("elimination_sequence: dataset has no labels");
  }
  const std::size_t pixels = train.width * train.height;
  std::array<std::vector<double>, 10> mean;
  std::array<std::size_t, 10> counts{};
  for (auto& m : mean) m.assign(pixels, 0.0);
  for (std::size_t i = 0; i < train.count(); ++i) {
    const int l = train.labels[i];
    if (l < 0 || l > 9) continue;
    const auto img = train.image(i);
    for (std::size_t j = 0; j < pixels; ++j) mean[l][j] += img[j];
    ++counts[l];
  }
  for (int d = 0; d < 10; ++d) {
    if (counts[d] == 0) {
      throw error("elimination_sequence: digit class " + std::to_string(d) +
                  " missing from the train set");
    }
    for (double& v : mean[d]) v /= static_cast<double>(counts[d]);
  }

  EliminationSequence seq;
  std::vector<bool> chosen(pixels, false);
  std::vector<std::uint32_t> ctx{0};
  chosen[0] = true;
  seq.contexts.push_back(ctx);
  for (int d = 0; d < 10; ++d) {
    for (int take = 0; take < 10; ++take) {
      double best = -1.0;
      std::uint32_t best_pix = 0;
      for (std::uint32_t j = 0; j < pixels; ++j) {
        if (chosen[j]) continue;
        const double diff = std::abs(mean[target_digit][j] - mean[d][j]);
        if (diff > best) {
          best = diff;
          best_pix = j;
        }
      }
      chosen[best_pix] = true;
      ctx.push_back(best_pix);
    }
    seq.contexts.push_back(ctx);
    seq.eliminated.push_back(d);
  }
  return seq;
}

// --- classifier histogram over completions ------------------------------------------------

// Classifies k sampled completions by argmax and returns normalized counts.
template <typename S>
Tensor<double> prediction_histogram(ModelParams<S>& p, const ModelConfig& c,
                                    const PointSet<S>& ctx, std::size_t h,
                                    std::size_t w,
                                    const MlpClassifier<S>& clf,
                                    std::size_t k, Philox& rng,
                                    bool copy_context = false) {
  Completion<S> comp =
      sample_completion(p, c, ctx, h, w, k, copy_context, rng);
  Tensor<double> hist({clf.n_classes()});
  for (const auto& img : comp.means) {
    hist[clf.predict(img)] += 1.0;
  }
  for (std::size_t j = 0; j < hist.size(); ++j) {
    hist[j] /= static_cast<double>(k);
  }
  return hist;
}

inline void write_histogram_tsv(const std::string& path,
                                const std::vector<std::pair<
                                    std::string, Tensor<double>>>& rows) {
  std::ofstream f(path);
  if (!f) throw io_error("cannot write " + path);
  f.precision(10);
  for (const auto& [name, hist] : rows) {
    f << name;
    for (std::size_t j = 0; j < hist.size(); ++j) f << "\t" << hist[j];
    f << "\n";
  }
}

// --- classifier persistence -----------------------------------------------------------

template <typename S>
void save_classifier(const std::string& path, MlpClassifier<S>& clf) {
  Checkpoint c;
  c.metadata = "kind = classifier\nlayer_count = " +
               std::to_string(clf.layers.size()) + "\ninput = " +
               (clf.input == ClassifierInput::image ? "image"
                                                    : "pooled_embedding") +
               "\n";
  for (std::size_t l = 0; l < clf.layers.size(); ++l) {
    c.tensors.emplace_back("layer." + std::to_string(l) + ".w",
                           clf.layers[l].w);
    c.tensors.emplace_back("layer." + std::to_string(l) + ".b",
                           clf.layers[l].b);
  }
  save_checkpoint(path, c);
}

template <typename S>
MlpClassifier<S> load_classifier(const std::string& path) {
  const Checkpoint c = load_checkpoint(path);
  auto kv = detail::ConfigReader::from_text(c.metadata);
  if (!kv.has("kind") || kv.kv.at("kind") != "classifier") {
    throw io_error("classifier: not a classifier checkpoint");
  }
  const std::size_t layer_count = detail::parse_size(kv.kv.at("layer_count"));
  MlpClassifier<S> clf;
  clf.input = kv.kv.count("input") && kv.kv.at("input") == "pooled_embedding"
                  ? ClassifierInput::pooled_embedding
                  : ClassifierInput::image;
  for (std::size_t l = 0; l < layer_count; ++l) {
    const auto* w = c.find("layer." + std::to_string(l) + ".w");
    const auto* b = c.find("layer." + std::to_string(l) + ".b");
    if (!w || !b) throw io_error("classifier: missing layer tensor");
    const auto* wt = std::get_if<Tensor<S>>(w);
    const auto* bt = std::get_if<Tensor<S>>(b);
    if (!wt || !bt) throw io_error("classifier: wrong tensor dtype");
    clf.layers.push_back({*wt, *bt});
  }
  return clf;
}

}  // namespace npkit
