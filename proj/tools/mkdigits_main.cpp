// Writes a procedurally drawn digit dataset in the IDX layout, for running
// the toolkit fully offline. Output names follow the usual MNIST convention.
#include <cstdio>
#include <string>

#include "CLI11.hpp"
#include "npkit/synthdata.hpp"

int main(int argc, char** argv) {
  CLI::App app{"synthetic digit dataset generator (IDX format)"};
  std::string out_dir = ".";
  std::uint64_t seed = 0;
  std::uint32_t train_count = 60000, test_count = 10000, side = 28;
  app.add_option("--out", out_dir, "output directory");
  app.add_option("--seed", seed, "generator seed")->required();
  app.add_option("--train", train_count, "train image count");
  app.add_option("--test", test_count, "test image count");
  app.add_option("--side", side, "image side length");
  CLI11_PARSE(app, argc, argv);

  try {
    auto [train_im, train_lb] = npkit::make_digit_idx(train_count, seed, side);
    npkit::write_file(out_dir + "/train-images-idx3-ubyte",
                      npkit::serialize_idx_images(train_im));
    npkit::write_file(out_dir + "/train-labels-idx1-ubyte",
                      npkit::serialize_idx_labels(train_lb));
    auto [test_im, test_lb] =
        npkit::make_digit_idx(test_count, seed + 1, side);
    npkit::write_file(out_dir + "/t10k-images-idx3-ubyte",
                      npkit::serialize_idx_images(test_im));
    npkit::write_file(out_dir + "/t10k-labels-idx1-ubyte",
                      npkit::serialize_idx_labels(test_lb));
    std::printf("wrote %u train / %u test images to %s\n", train_count,
                test_count, out_dir.c_str());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
