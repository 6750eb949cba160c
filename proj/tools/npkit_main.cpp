// Command-line front end: train, eval, sample, diagnose, select, score.
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "npkit/npkit.hpp"

namespace fs = std::filesystem;
using npkit::FullConfig;
using npkit::Philox;
using npkit::PointSet;
using npkit::Tensor;

namespace {

constexpr const char* kBuildId = "npkit 0.1.0 (" __VERSION__ ")";

struct CommonArgs {
  std::uint64_t seed = 0;
  std::string out = "out";
  std::string config_path;
  std::string checkpoint_path;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonArgs& a, bool needs_config,
                bool needs_checkpoint) {
  cmd->add_option("--seed", a.seed, "run seed (no wall-clock default)")
      ->required();
  cmd->add_option("--out", a.out, "output directory");
  auto* copt = cmd->add_option("--config", a.config_path, "config file");
  if (needs_config) copt->required();
  auto* ck = cmd->add_option("--checkpoint", a.checkpoint_path,
                             "model checkpoint path");
  if (needs_checkpoint) ck->required();
  cmd->add_option("--set", a.overrides,
                  "config override key=value (repeatable)");
}

std::vector<std::pair<std::string, std::string>> parse_overrides(
    const std::vector<std::string>& raw) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const std::string& s : raw) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) {
      throw npkit::config_error("--set expects key=value, got '" + s + "'");
    }
    out.emplace_back(npkit::detail::trim(s.substr(0, eq)),
                     npkit::detail::trim(s.substr(eq + 1)));
  }
  return out;
}

FullConfig resolve_config(const std::string& text, const CommonArgs& a) {
  return npkit::parse_config(
      npkit::apply_overrides(text, parse_overrides(a.overrides)));
}

std::string read_text(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw npkit::io_error("cannot open " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_manifest(const CommonArgs& a, const FullConfig& cfg,
                    const std::string& command, int argc, char** argv) {
  fs::create_directories(a.out);
  std::ofstream f(a.out + "/manifest.txt");
  f << "# reproducibility manifest\n";
  f << "command =";
  for (int i = 0; i < argc; ++i) f << " " << argv[i];
  f << "\nsubcommand = " << command << "\nbuild = " << kBuildId
    << "\nseed = " << a.seed << "\n\n# resolved configuration\n"
    << npkit::config_to_text(cfg);
}

npkit::ImageDataset load_split(const FullConfig& cfg, bool train_split) {
  const auto& d = cfg.data;
  const std::string& images = train_split ? d.train_images : d.test_images;
  const std::string& labels = train_split ? d.train_labels : d.test_labels;
  if (images.empty()) {
    throw npkit::config_error(train_split ? "config: train_images not set"
                                          : "config: test_images not set");
  }
  const std::size_t limit =
      train_split ? cfg.train.train_limit : cfg.train.test_limit;
  return npkit::load_dataset(images, labels, limit);
}

struct LoadedModel {
  FullConfig cfg;
  npkit::ModelParams<float> params;
  std::size_t epoch = 0;
};

LoadedModel load_model(const CommonArgs& a) {
  npkit::ModelSnapshot snap = npkit::load_model_checkpoint(a.checkpoint_path);
  FullConfig cfg = snap.config;
  if (!a.overrides.empty()) {
    cfg = npkit::parse_config(npkit::apply_overrides(
        npkit::config_to_text(cfg), parse_overrides(a.overrides)));
  }
  return LoadedModel{cfg, std::move(snap.params), snap.epoch};
}

std::vector<std::size_t> parse_sizes(const std::string& csv) {
  auto v = npkit::detail::parse_size_list(csv);
  if (v.empty()) throw npkit::config_error("empty size list");
  return v;
}

PointSet<float> pixel_context(std::span<const float> image, std::size_t h,
                              std::size_t w,
                              const std::vector<std::uint32_t>& idx) {
  return npkit::points_from_pixels<float>(image.data(), h, w, idx.data(),
                                          idx.size());
}

// --- train ----------------------------------------------------------------

int run_train(const CommonArgs& a, int argc, char** argv) {
  FullConfig cfg = resolve_config(read_text(a.config_path), a);
  cfg.train.seed = a.seed;
  write_manifest(a, cfg, "train", argc, argv);
  npkit::ImageDataset data = load_split(cfg, true);
  std::printf("training on %zu images (%zux%zu), objective=%s, pooling=%s\n",
              data.count(), data.height, data.width,
              npkit::to_string(cfg.train.objective),
              npkit::to_string(cfg.model.pooling));
  auto res = npkit::train(cfg, data, a.out);
  for (const auto& m : res.metrics) {
    std::printf("epoch %zu\tobjective %.4f\tlr %.2e\t%.1fs\n", m.epoch,
                m.mean_objective, m.lr, m.seconds);
  }
  std::printf("final checkpoint: %s\n", res.final_checkpoint.c_str());
  return 0;
}

// --- eval -------------------------------------------------------------------

int run_eval(const CommonArgs& a, std::size_t k, std::size_t task_limit,
             int argc, char** argv) {
  LoadedModel m = load_model(a);
  write_manifest(a, m.cfg, "eval", argc, argv);
  npkit::ImageDataset data = load_split(m.cfg, false);
  const std::size_t pixels = data.width * data.height;
  const std::size_t n_tasks =
      task_limit == 0 ? data.count() : std::min(task_limit, data.count());

  // held-out protocol: disjoint context/target, both sizes uniform in the
  // training context range
  Philox task_rng(a.seed, 0xE7A1);
  std::ofstream tsv(a.out + "/eval.tsv");
  tsv << "image\tn_ctx\tn_tgt\tloglik\n";
  tsv.precision(10);
  std::vector<double> values;
  values.reserve(n_tasks);
  for (std::size_t t = 0; t < n_tasks; ++t) {
    const std::size_t img = t % data.count();
    const std::size_t n_ctx =
        task_rng.range(m.cfg.train.n_min, m.cfg.train.n_max);
    const std::size_t n_tgt = std::min(
        task_rng.range(m.cfg.train.n_min, m.cfg.train.n_max),
        pixels - n_ctx);
    auto pick = npkit::sample_without_replacement(
        task_rng, std::uint32_t(pixels), std::uint32_t(n_ctx + n_tgt));
    const auto image = data.image(img);
    PointSet<float> ctx = npkit::points_from_pixels<float>(
        image.data(), data.height, data.width, pick.data(), n_ctx);
    PointSet<float> tgt = npkit::points_from_pixels<float>(
        image.data(), data.height, data.width, pick.data() + n_ctx, n_tgt);
    Philox rng(a.seed, 0xE000000ull + t);
    const double v =
        npkit::iwae_loglik_value(m.params, m.cfg.model, ctx, tgt, k, rng);
    values.push_back(v);
    tsv << img << "\t" << n_ctx << "\t" << n_tgt << "\t" << v << "\n";
  }
  double mean = 0;
  for (double v : values) mean += v;
  mean /= double(values.size());
  double var = 0;
  for (double v : values) var += (v - mean) * (v - mean);
  var /= double(values.size());
  const double sd = std::sqrt(var);
  std::printf("held-out predictive log-likelihood (K=%zu, %zu tasks): "
              "%.4f +/- %.4f (se %.4f)\n",
              k, values.size(), mean, sd, sd / std::sqrt(double(values.size())));
  return 0;
}

// --- sample -----------------------------------------------------------------

int run_sample(const CommonArgs& a, const std::string& sizes_csv,
               std::size_t k, bool copy_context, std::size_t image_index,
               int argc, char** argv) {
  LoadedModel m = load_model(a);
  write_manifest(a, m.cfg, "sample", argc, argv);
  npkit::ImageDataset data = load_split(m.cfg, false);
  if (image_index >= data.count()) {
    throw npkit::error("sample: image index out of range");
  }
  const auto sizes = parse_sizes(sizes_csv);
  const std::size_t pixels = data.width * data.height;
  const auto image = data.image(image_index);

  // nested context sets: prefixes of one random pixel order
  Philox order_rng(a.seed, 0x5A);
  auto order = npkit::sample_without_replacement(
      order_rng, std::uint32_t(pixels), std::uint32_t(pixels));

  std::vector<npkit::CompletionColumn> cols;
  std::size_t col_idx = 0;
  for (std::size_t size : sizes) {
    if (size > pixels) throw npkit::error("sample: context size > pixels");
    std::vector<std::uint32_t> idx(order.begin(), order.begin() + size);
    PointSet<float> ctx = pixel_context(image, data.height, data.width, idx);
    Philox rng(a.seed, 0x5B00 + col_idx++);
    auto comp = npkit::sample_completion(m.params, m.cfg.model, ctx,
                                         data.height, data.width, k,
                                         copy_context, rng);
    npkit::CompletionColumn col;
    col.context.indices = idx;
    for (std::uint32_t i : idx) col.context.values.push_back(image[i]);
    col.samples = std::move(comp.means);
    col.stddev = std::move(comp.stddev);
    cols.push_back(std::move(col));
  }
  Tensor<float> truth({pixels});
  for (std::size_t i = 0; i < pixels; ++i) truth[i] = image[i];
  auto raster = npkit::render_grid(cols, &truth, data.height, data.width);
  const std::string path =
      a.out + "/sample_" + std::to_string(image_index) + ".pgm";
  npkit::write_pgm(path, raster);
  std::printf("wrote %s (%zux%zu, %zu context sizes, %zu samples each)\n",
              path.c_str(), raster.width, raster.height, sizes.size(), k);
  return 0;
}

// --- diagnose ----------------------------------------------------------------

int run_diagnose(const CommonArgs& a, const std::string& sizes_csv,
                 std::size_t reps, std::size_t images, std::size_t per_bucket,
                 int argc, char** argv) {
  LoadedModel m = load_model(a);
  write_manifest(a, m.cfg, "diagnose", argc, argv);
  npkit::ImageDataset data = load_split(m.cfg, false);
  auto params64 = m.params.cast<double>();
  const auto sizes = parse_sizes(sizes_csv);
  const std::size_t n_images = std::min<std::size_t>(images, data.count());
  std::vector<std::uint32_t> ids(n_images);
  std::iota(ids.begin(), ids.end(), 0);

  Philox curve_rng(a.seed, 0xD1);
  auto curve = npkit::entropy_curve(params64, m.cfg.model, data, ids, sizes,
                                    reps, m.cfg.train.n_max - 1, curve_rng);
  npkit::write_entropy_curve_tsv(a.out + "/entropy_curve.tsv", curve);
  std::printf("entropy curve (size, mean, std, beyond-training):\n");
  for (std::size_t i = 0; i < curve.sizes.size(); ++i) {
    std::printf("  %4zu\t%.4f\t%.4f\t%d\n", curve.sizes[i], curve.mean[i],
                curve.stddev[i], int(curve.beyond_training[i]));
  }

  if (m.cfg.model.pooling == npkit::Pooling::max) {
    const auto image = data.image(0);
    Philox orng(a.seed, 0xD2);
    const std::size_t pixels = data.width * data.height;
    auto order = npkit::sample_without_replacement(
        orng, std::uint32_t(pixels), std::uint32_t(pixels));
    std::vector<std::size_t> esizes;
    for (std::size_t s : sizes) {
      if (s <= pixels) esizes.push_back(s);
    }
    Philox erng(a.seed, 0xD3);
    auto tr = npkit::embedding_stats(params64, m.cfg.model, image, data.height,
                                     data.width, order, esizes, erng);
    std::ofstream f(a.out + "/embedding_stats.tsv");
    f << "size\tshifted_l1\tentropy\n";
    f.precision(10);
    for (std::size_t i = 0; i < tr.sizes.size(); ++i) {
      f << tr.sizes[i] << "\t" << tr.shifted_l1[i] << "\t" << tr.entropy[i]
        << "\n";
    }
    std::printf("embedding stats written (max pooling)\n");
  } else {
    std::printf("embedding stats skipped (needs max pooling)\n");
  }

  Philox emb_rng(a.seed, 0xD4);
  auto sd = npkit::collect_size_embeddings(params64, m.cfg.model, data,
                                           n_images, per_bucket, emb_rng);
  npkit::ClassifierOpts opts;
  opts.hidden = {64};
  opts.epochs = 60;
  Philox clf_rng(a.seed, 0xD5);
  auto [clf, rep] = npkit::train_size_classifier(sd, clf_rng, opts);
  std::ofstream f(a.out + "/size_classifier.tsv");
  f << "holdout_accuracy\t" << rep.accuracy << "\nchance\t"
    << 1.0 / double(npkit::kSizeBuckets.size()) << "\n";
  f << "confusion (rows = true bucket)\n";
  for (std::size_t i = 0; i < npkit::kSizeBuckets.size(); ++i) {
    for (std::size_t j = 0; j < npkit::kSizeBuckets.size(); ++j) {
      f << rep.confusion.at(i, j) << (j + 1 < npkit::kSizeBuckets.size() ? "\t" : "\n");
    }
  }
  std::printf("size classifier held-out accuracy: %.3f (chance %.3f)\n",
              rep.accuracy, 1.0 / double(npkit::kSizeBuckets.size()));
  return 0;
}

// --- select -------------------------------------------------------------------

int run_select(const CommonArgs& a, std::size_t image_index,
               std::size_t budget, const std::string& criterion,
               std::size_t subsample, int argc, char** argv) {
  LoadedModel m = load_model(a);
  write_manifest(a, m.cfg, "select", argc, argv);
  npkit::ImageDataset test = load_split(m.cfg, false);
  auto params64 = m.params.cast<double>();
  if (image_index >= test.count()) {
    throw npkit::error("select: image index out of range");
  }
  const npkit::GreedyCriterion crit =
      criterion == "entropy" ? npkit::GreedyCriterion::entropy
                             : npkit::GreedyCriterion::kl_to_full;
  if (criterion != "entropy" && criterion != "kl") {
    throw npkit::config_error("select: criterion must be kl or entropy");
  }
  const auto image = test.image(image_index);
  Philox rng(a.seed, 0x5E);
  auto tr = npkit::greedy_select(params64, m.cfg.model, image, test.height,
                                 test.width, budget, crit, subsample, rng);
  std::ofstream f(a.out + "/greedy.tsv");
  f << "step\tpixel\trow\tcol\t" << (criterion == "entropy" ? "entropy" : "kl")
    << "\n";
  f.precision(10);
  for (std::size_t i = 0; i < tr.pixels.size(); ++i) {
    f << i << "\t" << tr.pixels[i] << "\t" << tr.pixels[i] / test.width << "\t"
      << tr.pixels[i] % test.width << "\t" << tr.criterion[i] << "\n";
  }
  std::printf("greedy selection: %zu pixels, final %s %.4f\n",
              tr.pixels.size(), criterion.c_str(),
              tr.criterion.empty() ? 0.0 : tr.criterion.back());

  npkit::ImageDataset train = load_split(m.cfg, true);
  if (train.has_labels()) {
    auto seq = npkit::elimination_sequence(train, 3);
    std::ofstream ef(a.out + "/elimination.tsv");
    ef << "step\teliminated_digit\tsize\tpixels\n";
    for (std::size_t s = 0; s < seq.contexts.size(); ++s) {
      ef << s << "\t" << (s == 0 ? -1 : seq.eliminated[s - 1]) << "\t"
         << seq.contexts[s].size() << "\t";
      for (std::size_t i = 0; i < seq.contexts[s].size(); ++i) {
        ef << (i ? "," : "") << seq.contexts[s][i];
      }
      ef << "\n";
    }
    std::printf("elimination sequence written (%zu context sets)\n",
                seq.contexts.size());
  } else {
    std::printf("elimination sequence skipped (train labels missing)\n");
  }
  return 0;
}

// --- score --------------------------------------------------------------------

int run_score(const CommonArgs& a, std::string classifier_path,
              const std::string& sizes_csv, std::size_t sets,
              std::size_t samples, bool elimination, std::size_t hist_k,
              int argc, char** argv) {
  LoadedModel m = load_model(a);
  write_manifest(a, m.cfg, "score", argc, argv);
  npkit::ImageDataset train = load_split(m.cfg, true);
  npkit::ImageDataset test = load_split(m.cfg, false);
  const std::size_t pixels = test.width * test.height;

  if (classifier_path.empty()) classifier_path = a.out + "/classifier.npc";
  npkit::MlpClassifier<float> clf;
  if (fs::exists(classifier_path)) {
    clf = npkit::load_classifier<float>(classifier_path);
    std::printf("loaded classifier from %s\n", classifier_path.c_str());
  } else {
    npkit::ClassifierOpts opts;
    opts.hidden = {256, 256};
    opts.epochs = 3;
    opts.batch = 128;
    opts.holdout_frac = 0.1;
    Philox crng(a.seed, 0xC1);
    auto [trained, rep] = npkit::train_digit_classifier<float>(train, crng, opts);
    clf = std::move(trained);
    npkit::save_classifier(classifier_path, clf);
    std::printf("trained digit classifier: held-out accuracy %.4f -> %s\n",
                rep.accuracy, classifier_path.c_str());
  }

  const auto sizes = parse_sizes(sizes_csv);
  std::ofstream f(a.out + "/inception.tsv");
  f << "size\tmean_is\tstd_is\n";
  f.precision(10);
  std::printf("inception scores (%zu context sets per size, %zu samples "
              "each):\n", sets, samples);
  for (std::size_t size : sizes) {
    if (size > pixels) continue;
    std::vector<double> scores;
    for (std::size_t set_i = 0; set_i < sets; ++set_i) {
      const std::size_t img = set_i % test.count();
      Philox rng(a.seed, 0xC200 + size * 64 + set_i);
      auto pick = npkit::sample_without_replacement(
          rng, std::uint32_t(pixels), std::uint32_t(size));
      PointSet<float> ctx =
          pixel_context(test.image(img), test.height, test.width, pick);
      auto comp = npkit::sample_completion(m.params, m.cfg.model, ctx,
                                           test.height, test.width, samples,
                                           false, rng);
      scores.push_back(npkit::inception_score(comp.means, clf));
    }
    double mean = 0;
    for (double s : scores) mean += s;
    mean /= double(scores.size());
    double var = 0;
    for (double s : scores) var += (s - mean) * (s - mean);
    var /= double(scores.size());
    f << size << "\t" << mean << "\t" << std::sqrt(var) << "\n";
    std::printf("  size %4zu: IS %.3f +/- %.3f\n", size, mean, std::sqrt(var));
  }

  if (elimination) {
    if (!train.has_labels() || !test.has_labels()) {
      throw npkit::error("score --elimination needs labeled data");
    }
    auto seq = npkit::elimination_sequence(train, 3);
    std::size_t query = 0;
    while (query < test.count() && test.labels[query] != 3) ++query;
    if (query == test.count()) {
      throw npkit::error("score: no test image of the target digit");
    }
    const auto qimg = test.image(query);
    std::vector<std::pair<std::string, Tensor<double>>> rows;
    for (std::size_t s = 0; s < seq.contexts.size(); ++s) {
      PointSet<float> ctx =
          pixel_context(qimg, test.height, test.width, seq.contexts[s]);
      Philox rng(a.seed, 0xC900 + s);
      auto hist = npkit::prediction_histogram(m.params, m.cfg.model, ctx,
                                              test.height, test.width, clf,
                                              hist_k, rng);
      rows.emplace_back("step" + std::to_string(s) + "_n" +
                            std::to_string(seq.contexts[s].size()),
                        std::move(hist));
    }
    npkit::write_histogram_tsv(a.out + "/elimination_hist.tsv", rows);
    std::printf("elimination histograms written (%zu steps, k=%zu)\n",
                rows.size(), hist_k);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"neural-process image in-painting toolkit"};
  app.require_subcommand(1);

  CommonArgs train_a, eval_a, sample_a, diag_a, select_a, score_a;

  auto* cmd_train = app.add_subcommand("train", "train a model");
  add_common(cmd_train, train_a, true, false);

  auto* cmd_eval =
      app.add_subcommand("eval", "held-out predictive log-likelihood");
  add_common(cmd_eval, eval_a, false, true);
  std::size_t eval_k = 1000, eval_tasks = 0;
  cmd_eval->add_option("--k", eval_k, "importance samples per task");
  cmd_eval->add_option("--tasks", eval_tasks, "task count (0 = all test)");

  auto* cmd_sample =
      app.add_subcommand("sample", "render completion grids");
  add_common(cmd_sample, sample_a, false, true);
  std::string sample_sizes = "10,30,100,784";
  std::size_t sample_k = 5, sample_image = 0;
  bool copy_context = false;
  cmd_sample->add_option("--sizes", sample_sizes, "context sizes (csv)");
  cmd_sample->add_option("--k", sample_k, "samples per context");
  cmd_sample->add_option("--image", sample_image, "test image index");
  cmd_sample->add_flag("--copy-context", copy_context,
                       "copy observed pixels into the outputs");

  auto* cmd_diag =
      app.add_subcommand("diagnose", "posterior contraction diagnostics");
  add_common(cmd_diag, diag_a, false, true);
  std::string diag_sizes = "1,5,10,25,50,100,200,400,784";
  std::size_t diag_reps = 100, diag_images = 20, diag_bucket = 150;
  cmd_diag->add_option("--sizes", diag_sizes, "context sizes (csv)");
  cmd_diag->add_option("--reps", diag_reps, "context sets per image per size");
  cmd_diag->add_option("--images", diag_images, "test images to use");
  cmd_diag->add_option("--per-bucket", diag_bucket,
                       "size-classifier samples per bucket");

  auto* cmd_select =
      app.add_subcommand("select", "greedy pixel selection and elimination");
  add_common(cmd_select, select_a, false, true);
  std::size_t sel_image = 0, sel_budget = 100, sel_subsample = 0;
  std::string sel_criterion = "kl";
  cmd_select->add_option("--image", sel_image, "test image index");
  cmd_select->add_option("--budget", sel_budget, "pixels to select");
  cmd_select->add_option("--criterion", sel_criterion, "kl or entropy");
  cmd_select->add_option("--subsample", sel_subsample,
                         "candidate cap per step (0 = all)");

  auto* cmd_score = app.add_subcommand("score", "inception scores");
  add_common(cmd_score, score_a, false, true);
  std::string score_classifier, score_sizes = "1,5,10,25,50,100,200,400,784";
  std::size_t score_sets = 10, score_samples = 100, score_hist_k = 1000;
  bool score_elim = false;
  cmd_score->add_option("--classifier", score_classifier,
                        "digit classifier checkpoint (trained when missing)");
  cmd_score->add_option("--sizes", score_sizes, "context sizes (csv)");
  cmd_score->add_option("--sets", score_sets, "context sets per size");
  cmd_score->add_option("--samples", score_samples, "completions per set");
  cmd_score->add_flag("--elimination", score_elim,
                      "classifier histograms along the elimination sequence");
  cmd_score->add_option("--hist-k", score_hist_k,
                        "completions per elimination histogram");

  CLI11_PARSE(app, argc, argv);

  try {
    if (cmd_train->parsed()) {
      fs::create_directories(train_a.out);
      return run_train(train_a, argc, argv);
    }
    if (cmd_eval->parsed()) {
      fs::create_directories(eval_a.out);
      return run_eval(eval_a, eval_k, eval_tasks, argc, argv);
    }
    if (cmd_sample->parsed()) {
      fs::create_directories(sample_a.out);
      return run_sample(sample_a, sample_sizes, sample_k, copy_context,
                        sample_image, argc, argv);
    }
    if (cmd_diag->parsed()) {
      fs::create_directories(diag_a.out);
      return run_diagnose(diag_a, diag_sizes, diag_reps, diag_images,
                          diag_bucket, argc, argv);
    }
    if (cmd_select->parsed()) {
      fs::create_directories(select_a.out);
      return run_select(select_a, sel_image, sel_budget, sel_criterion,
                        sel_subsample, argc, argv);
    }
    if (cmd_score->parsed()) {
      fs::create_directories(score_a.out);
      return run_score(score_a, score_classifier, score_sizes, score_sets,
                       score_samples, score_elim, score_hist_k, argc, argv);
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
