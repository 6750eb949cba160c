#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "npkit/checkpoint.hpp"
#include "npkit/config.hpp"
#include "npkit/dataio.hpp"
#include "npkit/model.hpp"
#include "npkit/objectives.hpp"
#include "npkit/random.hpp"

namespace npkit {

// One meta-learning task: the first `context_size` of `target_idx` form the
// context set; the whole list is the target set (so C is a subset of T).
struct TaskInstance {
  std::uint32_t image_id = 0;
  std::vector<std::uint32_t> target_idx;
  std::uint32_t context_size = 0;

  std::span<const std::uint32_t> context() const {
    return std::span<const std::uint32_t>(target_idx.data(), context_size);
  }

  void validate(std::size_t pixel_count) const {
    if (context_size < 1 || context_size > target_idx.size()) {
      throw error("task: need 1 <= |C| <= |T|");
    }
    std::vector<bool> seen(pixel_count, false);
    for (std::uint32_t idx : target_idx) {
      if (idx >= pixel_count || seen[idx]) {
        throw error("task: indices must be unique and in range");
      }
      seen[idx] = true;
    }
  }
};

// Draws n ~ [n_min, n_max) and m' ~ [mprime_min, mprime_max), then n + m'
// distinct pixels without replacement; ranges are clamped to the pixel count.
inline TaskInstance sample_task(std::size_t pixel_count,
                                std::uint32_t image_id, Philox& rng,
                                std::size_t n_min, std::size_t n_max,
                                std::size_t mprime_min,
                                std::size_t mprime_max) {
  if (pixel_count == 0) throw error("sample_task: empty image");
  std::size_t n = rng.range(n_min, n_max);
  std::size_t mprime = rng.range(mprime_min, mprime_max);
  n = std::min(n, pixel_count);
  mprime = std::min(mprime, pixel_count - n);
  TaskInstance t;
  t.image_id = image_id;
  t.target_idx = sample_without_replacement(
      rng, static_cast<std::uint32_t>(pixel_count),
      static_cast<std::uint32_t>(n + mprime));
  t.context_size = static_cast<std::uint32_t>(n);
  return t;
}

inline TaskInstance sample_task(std::size_t pixel_count,
                                std::uint32_t image_id, Philox& rng,
                                const TrainConfig& c) {
  return sample_task(pixel_count, image_id, rng, c.n_min, c.n_max,
                     c.mprime_min, c.mprime_max);
}

// --- Adam -------------------------------------------------------------------------

template <typename S>
struct AdamState {
  std::vector<Tensor<S>> m, v;
  std::uint64_t step = 0;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

  static AdamState like(const std::vector<Tensor<S>*>& params) {
    AdamState s;
    for (const Tensor<S>* p : params) {
      s.m.emplace_back(p->shape());
      s.v.emplace_back(p->shape());
    }
    return s;
  }
};

// One bias-corrected descent step: p -= lr * mhat / (sqrt(vhat) + eps).
template <typename S>
void adam_step(AdamState<S>& st, const std::vector<Tensor<S>*>& params,
               const std::vector<Tensor<S>>& grads, double lr) {
  if (params.size() != grads.size() || params.size() != st.m.size()) {
    throw shape_error("adam: parameter/gradient count mismatch");
  }
  for (std::size_t t = 0; t < grads.size(); ++t) {
    if (!grads[t].all_finite()) {
      throw numeric_error("adam: non-finite gradient in tensor " +
                          std::to_string(t));
    }
  }
  st.step += 1;
  const double b1 = st.beta1, b2 = st.beta2;
  const double corr1 = 1.0 - std::pow(b1, static_cast<double>(st.step));
  const double corr2 = 1.0 - std::pow(b2, static_cast<double>(st.step));
  for (std::size_t t = 0; t < params.size(); ++t) {
    Tensor<S>& p = *params[t];
    Tensor<S>& m = st.m[t];
    Tensor<S>& v = st.v[t];
    const Tensor<S>& g = grads[t];
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = static_cast<S>(b1 * m[i] + (1.0 - b1) * g[i]);
      v[i] = static_cast<S>(b2 * v[i] + (1.0 - b2) * g[i] * g[i]);
      const double mhat = m[i] / corr1;
      const double vhat = v[i] / corr2;
      p[i] -= static_cast<S>(lr * mhat / (std::sqrt(vhat) + st.eps));
    }
  }
}

// Base lr times lr_factor for every milestone the epoch has passed.
inline double lr_at(const TrainConfig& c, std::size_t epoch) {
  double lr = c.lr;
  for (std::size_t m : c.lr_milestones) {
    if (epoch >= m) lr *= c.lr_factor;
  }
  return lr;
}

// --- training loop -----------------------------------------------------------------

struct EpochMetrics {
  std::size_t epoch = 0;
  double mean_objective = 0.0;
  double lr = 0.0;
  double seconds = 0.0;
};

struct TrainResult {
  ModelParams<float> params;
  AdamState<float> opt;
  std::vector<EpochMetrics> metrics;
  std::string final_checkpoint;  // path, empty when out_dir was empty
};

inline std::string format_metrics_line(const EpochMetrics& m) {
  std::ostringstream os;
  os.precision(10);
  os << m.epoch << "\t" << m.mean_objective << "\t" << m.lr << "\t"
     << m.seconds;
  return os.str();
}

namespace detail {

// Stream ids for the independent generators a run uses.
inline std::uint64_t run_stream(std::uint32_t kind, std::uint64_t a = 0,
                                std::uint64_t b = 0) {
  return (static_cast<std::uint64_t>(kind) << 56) | ((a & 0xFFFFFF) << 32) |
         (b & 0xFFFFFFFF);
}

template <typename S>
ObjectiveVars<S> build_training_objective(const BoundModel<S>& m,
                                          const TrainConfig& tc,
                                          const PointSet<S>& ctx,
                                          const PointSet<S>& tgt,
                                          Philox& rng) {
  switch (tc.objective) {
    case ObjectiveKind::elbo:
      return build_elbo(m, tgt, rng);
    case ObjectiveKind::np: {
      NpObjectiveVars<S> v = build_np_objective(m, ctx, tgt, rng);
      return ObjectiveVars<S>{v.value, v.recon, v.div_sampled};
    }
    case ObjectiveKind::sivi:
      return build_sivi_bound(m, ctx, tgt, tc.sivi_train_k, tc.sivi_prior,
                              rng);
  }
  throw error("train: unknown objective");
}

}  // namespace detail

// Iterates epochs of batches with one freshly sampled task per image,
// maximizing the configured objective with Adam. Deterministic given
// (seed, config, dataset). When out_dir is non-empty, writes metrics.tsv
// (epoch <tab> mean objective <tab> lr <tab> seconds), periodic checkpoints
// and a final one.
inline TrainResult train(const FullConfig& cfg, const ImageDataset& data,
                         const std::string& out_dir = "") {
  cfg.model.validate();
  cfg.train.validate();
  const TrainConfig& tc = cfg.train;
  const std::size_t n_images =
      tc.train_limit == 0 ? data.count()
                          : std::min(tc.train_limit, data.count());
  if (n_images == 0) throw error("train: empty dataset");
  const std::size_t pixels = data.width * data.height;

  Philox init_rng(tc.seed, detail::run_stream(0));
  TrainResult res;
  res.params = init_params<float>(cfg.model, init_rng);
  auto param_ptrs = res.params.tensors();
  res.opt = AdamState<float>::like(param_ptrs);

  std::ofstream metrics_file;
  if (!out_dir.empty()) {
    metrics_file.open(out_dir + "/metrics.tsv");
    if (!metrics_file) throw io_error("train: cannot write to " + out_dir);
  }

  std::vector<std::uint32_t> order(n_images);
  for (std::uint32_t i = 0; i < n_images; ++i) order[i] = i;

  std::vector<Tensor<float>> grad_acc;
  for (Tensor<float>* p : param_ptrs) grad_acc.emplace_back(p->shape());

  std::size_t global_task = 0;
  for (std::size_t epoch = 0; epoch < tc.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const double lr = lr_at(tc, epoch);
    Philox shuffle_rng(tc.seed, detail::run_stream(1, epoch));
    shuffle(shuffle_rng, order);
    Philox task_rng(tc.seed, detail::run_stream(2, epoch));

    double obj_sum = 0.0;
    std::size_t obj_count = 0;
    for (std::size_t start = 0; start < n_images; start += tc.batch_size) {
      const std::size_t bsz = std::min(tc.batch_size, n_images - start);
      for (auto& g : grad_acc) {
        std::fill(g.raw().begin(), g.raw().end(), 0.0f);
      }
      for (std::size_t mem = 0; mem < bsz; ++mem) {
        const std::uint32_t img = order[start + mem];
        const TaskInstance task =
            sample_task(pixels, img, task_rng, tc);
        const auto image = data.image(img);
        const PointSet<float> ctx = points_from_pixels<float>(
            image.data(), data.height, data.width, task.target_idx.data(),
            task.context_size);
        const PointSet<float> tgt = points_from_pixels<float>(
            image.data(), data.height, data.width, task.target_idx.data(),
            task.target_idx.size());
        Philox member_rng(tc.seed, detail::run_stream(3, epoch, global_task));
        ++global_task;
        try {
          Graph<float> g;
          BoundModel<float> bound = bind_model(g, res.params, cfg.model);
          Var<float> value;
          if (tc.z_samples == 1) {
            value =
                detail::build_training_objective(bound, tc, ctx, tgt,
                                                 member_rng)
                    .value;
          } else {
            std::vector<Var<float>> draws;
            for (std::size_t zs = 0; zs < tc.z_samples; ++zs) {
              draws.push_back(detail::build_training_objective(
                                  bound, tc, ctx, tgt, member_rng)
                                  .value);
            }
            value = mul_scalar(sum(pack(draws)),
                               1.0 / static_cast<double>(tc.z_samples));
          }
          const double obj = value.item();
          if (!std::isfinite(obj)) {
            throw numeric_error("non-finite objective");
          }
          obj_sum += obj;
          ++obj_count;
          g.backward(value);
          // maximize: accumulate the negated gradient for the descent step
          const double scale = -1.0 / static_cast<double>(bsz);
          for (std::size_t t = 0; t < grad_acc.size(); ++t) {
            const Tensor<float>& gt = bound.all[t].grad();
            if (gt.empty()) continue;
            for (std::size_t i = 0; i < grad_acc[t].size(); ++i) {
              grad_acc[t][i] += static_cast<float>(scale) * gt[i];
            }
          }
        } catch (const numeric_error& e) {
          throw numeric_error(
              "train: " + std::string(e.what()) + " (epoch " +
              std::to_string(epoch) + ", batch " +
              std::to_string(start / tc.batch_size) + ", image " +
              std::to_string(img) + ")");
        }
      }
      if (tc.grad_clip > 0.0) {
        double norm2 = 0.0;
        for (const auto& g : grad_acc) {
          for (std::size_t i = 0; i < g.size(); ++i) {
            norm2 += static_cast<double>(g[i]) * g[i];
          }
        }
        const double norm = std::sqrt(norm2);
        if (norm > tc.grad_clip) {
          const float s = static_cast<float>(tc.grad_clip / norm);
          for (auto& g : grad_acc) {
            for (std::size_t i = 0; i < g.size(); ++i) g[i] *= s;
          }
        }
      }
      adam_step(res.opt, param_ptrs, grad_acc, lr);
    }

    EpochMetrics em;
    em.epoch = epoch;
    em.mean_objective = obj_sum / static_cast<double>(obj_count);
    em.lr = lr;
    em.seconds = std::chrono::duration<double>(
                     std::chrono::steady_clock::now() - t0)
                     .count();
    res.metrics.push_back(em);
    if (metrics_file) {
      metrics_file << format_metrics_line(em) << "\n";
      metrics_file.flush();
    }
    const bool last = epoch + 1 == tc.epochs;
    if (!out_dir.empty() && tc.checkpoint_every > 0 && !last &&
        (epoch + 1) % tc.checkpoint_every == 0) {
      save_model_checkpoint(out_dir + "/ckpt_" + std::to_string(epoch) +
                                ".npc",
                            cfg, epoch + 1, res.params, &res.opt.m,
                            &res.opt.v, res.opt.step);
    }
  }
  if (!out_dir.empty()) {
    res.final_checkpoint = out_dir + "/ckpt_final.npc";
    save_model_checkpoint(res.final_checkpoint, cfg, tc.epochs, res.params,
                          &res.opt.m, &res.opt.v, res.opt.step);
  }
  return res;
}

}  // namespace npkit
