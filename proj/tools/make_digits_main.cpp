// Writes a procedurally generated digit corpus in the canonical IDX layout
// (train/test image+label files), for runs where no real MNIST directory is
// available. See tools/fetch_mnist.sh for getting the real files.

#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "rsd/digits.hpp"

int main(int argc, char** argv) {
  CLI::App app{"make-digits: generate an IDX digit corpus"};
  std::string out_dir = "data/digits";
  std::int64_t n_train = 6000, n_test = 1000;
  std::uint64_t seed = 7;
  app.add_option("--out", out_dir, "output directory");
  app.add_option("--n-train", n_train, "training images");
  app.add_option("--n-test", n_test, "test images");
  app.add_option("--seed", seed, "generator seed");
  CLI11_PARSE(app, argc, argv);

  try {
    std::filesystem::create_directories(out_dir);
    rsd::LabeledDataset train = rsd::make_digits(n_train, rsd::derive_seed(seed, 100));
    rsd::LabeledDataset test = rsd::make_digits(n_test, rsd::derive_seed(seed, 200));
    rsd::write_digits_idx(train, out_dir + "/train-images-idx3-ubyte",
                          out_dir + "/train-labels-idx1-ubyte");
    rsd::write_digits_idx(test, out_dir + "/t10k-images-idx3-ubyte",
                          out_dir + "/t10k-labels-idx1-ubyte");
    std::cout << "wrote " << n_train << " train / " << n_test << " test images to " << out_dir
              << "\n";
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  }
}
