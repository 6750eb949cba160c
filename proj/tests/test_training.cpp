#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>

#include "npkit/synthdata.hpp"
#include "npkit/training.hpp"

using npkit::Philox;
using npkit::Tensor;
using npkit::TrainConfig;

TEST_CASE("sampled tasks satisfy the task invariants") {
  Philox rng(1);
  TrainConfig tc;
  for (int i = 0; i < 1000; ++i) {
    auto t = npkit::sample_task(784, 0, rng, tc);
    t.validate(784);
    REQUIRE(t.context_size >= 1);
    REQUIRE(t.context_size <= t.target_idx.size());
    REQUIRE(t.target_idx.size() <= 784);
  }
}

TEST_CASE("context sizes are uniform over the configured range") {
  // chi-squared goodness of fit on n ~ [1, 200), 10^5 draws, alpha = 0.01
  Philox rng(2);
  TrainConfig tc;
  std::vector<int> counts(200, 0);
  const int draws = 100000;
  for (int i = 0; i < draws; ++i) {
    auto t = npkit::sample_task(784, 0, rng, tc);
    counts[t.context_size]++;
  }
  REQUIRE(counts[0] == 0);
  const double expected = draws / 199.0;
  double chi2 = 0.0;
  for (int n = 1; n < 200; ++n) {
    const double d = counts[n] - expected;
    chi2 += d * d / expected;
  }
  // 0.99 quantile of chi-squared with 198 degrees of freedom
  CHECK(chi2 < 247.21177495363602);
}

TEST_CASE("task ranges clamp to the pixel count") {
  Philox rng(3);
  TrainConfig tc;
  for (int i = 0; i < 200; ++i) {
    auto t = npkit::sample_task(64, 0, rng, tc);
    t.validate(64);
    REQUIRE(t.target_idx.size() <= 64);
  }
  CHECK_THROWS_AS(npkit::sample_task(0, 0, rng, tc), npkit::error);
}

TEST_CASE("adam first step moves each coordinate by about lr") {
  Tensor<double> p({4}, 1.0);
  Tensor<double> g({4});
  g[0] = 0.5;
  g[1] = -2.0;
  g[2] = 100.0;
  g[3] = -1e-3;
  std::vector<Tensor<double>*> params{&p};
  auto st = npkit::AdamState<double>::like(params);
  npkit::adam_step(st, params, {g}, 1e-3);
  for (std::size_t i = 0; i < 4; ++i) {
    const double moved = 1.0 - p[i];
    const double expect = (g[i] > 0 ? 1.0 : -1.0) * 1e-3;
    REQUIRE(std::abs(moved - expect) < 1e-5 * std::abs(expect) + 1e-11);
  }
  CHECK(st.step == 1);
}

TEST_CASE("adam leaves parameters unchanged under zero gradients") {
  Tensor<double> p({3}, 0.7);
  std::vector<Tensor<double>*> params{&p};
  auto st = npkit::AdamState<double>::like(params);
  npkit::adam_step(st, params, {Tensor<double>({3}, 0.0)}, 1e-2);
  for (std::size_t i = 0; i < 3; ++i) REQUIRE(p[i] == 0.7);
}

TEST_CASE("adam rejects non-finite gradients") {
  Tensor<double> p({2}, 0.0);
  Tensor<double> g({2}, 0.0);
  g[1] = std::numeric_limits<double>::infinity();
  std::vector<Tensor<double>*> params{&p};
  auto st = npkit::AdamState<double>::like(params);
  CHECK_THROWS_AS(npkit::adam_step(st, params, {g}, 1e-3),
                  npkit::numeric_error);
}

TEST_CASE("learning-rate schedule") {
  TrainConfig tc;
  tc.lr = 5e-4;
  tc.lr_milestones = {20, 50, 80};
  tc.lr_factor = 0.1;
  CHECK(npkit::lr_at(tc, 0) == 5e-4);
  CHECK(std::abs(npkit::lr_at(tc, 25) - 5e-5) < 1e-18);
  CHECK(std::abs(npkit::lr_at(tc, 55) - 5e-6) < 1e-18);
  CHECK(std::abs(npkit::lr_at(tc, 85) - 5e-7) < 1e-19);
  for (std::size_t e = 1; e < 100; ++e) {
    REQUIRE(npkit::lr_at(tc, e) <= npkit::lr_at(tc, e - 1));
  }
  TrainConfig flat;
  flat.lr = 5e-4;
  for (std::size_t e = 0; e < 100; e += 10) {
    REQUIRE(npkit::lr_at(flat, e) == 5e-4);
  }
}

namespace {

npkit::FullConfig smoke_config(npkit::ObjectiveKind obj, std::uint64_t seed) {
  npkit::FullConfig cfg;
  cfg.model.d_h = 16;
  cfg.model.d_s = 16;
  cfg.model.d_z = 8;
  cfg.model.d_psi = 4;
  cfg.model.d_eps = 4;
  cfg.model.head = obj == npkit::ObjectiveKind::sivi ? npkit::HeadKind::sivi
                                                     : npkit::HeadKind::plain;
  cfg.train.objective = obj;
  cfg.train.batch_size = 16;
  cfg.train.epochs = 5;
  cfg.train.seed = seed;
  cfg.train.train_limit = 200;
  cfg.train.sivi_train_k = 4;
  cfg.train.checkpoint_every = 0;
  return cfg;
}

}  // namespace

TEST_CASE("training runs, learns and is deterministic") {
  npkit::ImageDataset data = npkit::make_digit_dataset(200, 77, 16);
  auto cfg = smoke_config(npkit::ObjectiveKind::np, 5);

  auto res1 = npkit::train(cfg, data);
  REQUIRE(res1.metrics.size() == 5);
  for (const auto& m : res1.metrics) {
    REQUIRE(std::isfinite(m.mean_objective));
  }
  // learning progress on the smoke run
  CHECK(res1.metrics.back().mean_objective >
        res1.metrics.front().mean_objective);

  auto res2 = npkit::train(cfg, data);
  for (std::size_t e = 0; e < res1.metrics.size(); ++e) {
    REQUIRE(res1.metrics[e].mean_objective == res2.metrics[e].mean_objective);
  }
  auto t1 = res1.params.tensors();
  auto t2 = res2.params.tensors();
  for (std::size_t t = 0; t < t1.size(); ++t) {
    for (std::size_t i = 0; i < t1[t]->size(); ++i) {
      REQUIRE((*t1[t])[i] == (*t2[t])[i]);
    }
  }
}

TEST_CASE("sivi and elbo objectives also train") {
  npkit::ImageDataset data = npkit::make_digit_dataset(64, 78, 16);
  for (auto obj : {npkit::ObjectiveKind::sivi, npkit::ObjectiveKind::elbo}) {
    auto cfg = smoke_config(obj, 6);
    cfg.train.epochs = 2;
    cfg.train.train_limit = 64;
    auto res = npkit::train(cfg, data);
    REQUIRE(res.metrics.size() == 2);
    for (const auto& m : res.metrics) REQUIRE(std::isfinite(m.mean_objective));
  }
}

TEST_CASE("training writes metrics and a checkpoint that round trips") {
  namespace fs = std::filesystem;
  const std::string dir =
      (fs::temp_directory_path() / "npkit_train_out").string();
  fs::remove_all(dir);
  fs::create_directories(dir);

  npkit::ImageDataset data = npkit::make_digit_dataset(64, 79, 16);
  auto cfg = smoke_config(npkit::ObjectiveKind::np, 7);
  cfg.train.epochs = 3;
  cfg.train.train_limit = 64;
  cfg.train.checkpoint_every = 2;
  auto res = npkit::train(cfg, data, dir);

  REQUIRE(fs::exists(dir + "/metrics.tsv"));
  REQUIRE(fs::exists(dir + "/ckpt_1.npc"));
  REQUIRE(fs::exists(res.final_checkpoint));

  // metrics file: one tab-separated line per epoch
  std::ifstream mf(dir + "/metrics.tsv");
  std::string line;
  int rows = 0;
  while (std::getline(mf, line)) {
    REQUIRE(std::count(line.begin(), line.end(), '\t') == 3);
    ++rows;
  }
  CHECK(rows == 3);

  npkit::ModelSnapshot snap = npkit::load_model_checkpoint(res.final_checkpoint);
  REQUIRE(snap.epoch == 3);
  REQUIRE(snap.adam_m.size() == res.opt.m.size());

  // the loaded model evaluates identically on a fixed task
  npkit::Philox rng(4242);
  auto task = npkit::sample_task(data.width * data.height, 0, rng, cfg.train);
  const auto img = data.image(0);
  auto ctx = npkit::points_from_pixels<float>(img.data(), data.height,
                                              data.width,
                                              task.target_idx.data(),
                                              task.context_size);
  auto before = npkit::encode_values(res.params, cfg.model, ctx);
  auto after = npkit::encode_values(snap.params, snap.config.model, ctx);
  for (std::size_t j = 0; j < cfg.model.d_z; ++j) {
    REQUIRE(before.mu[j] == after.mu[j]);
    REQUIRE(before.sigma[j] == after.sigma[j]);
  }
}

TEST_CASE("a diverging run aborts with a located numeric error") {
  npkit::ImageDataset data = npkit::make_digit_dataset(32, 80, 16);
  auto cfg = smoke_config(npkit::ObjectiveKind::np, 8);
  cfg.train.train_limit = 32;
  cfg.train.epochs = 3;
  cfg.train.lr = 1e18;  // guaranteed blow-up
  try {
    npkit::train(cfg, data);
    FAIL("expected a numeric_error");
  } catch (const npkit::numeric_error& e) {
    const std::string msg = e.what();
    CHECK(msg.find("epoch") != std::string::npos);
    CHECK(msg.find("image") != std::string::npos);
  }
}
