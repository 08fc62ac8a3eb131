#pragma once

#include <cstdint>
#include <string>

#include "rsd/dataset.hpp"

namespace rsd {

/// Procedurally rendered 10-class 28x28 digit corpus (antialiased stroke
/// glyphs with random affine jitter, thickness, intensity, and noise).
/// Serves as the desk-scale stand-in when the canonical MNIST files are not
/// on disk; it is written to and read back from IDX files so the whole
/// pipeline exercises the real loader.
LabeledDataset make_digits(std::int64_t n, std::uint64_t seed);

/// Writes images/labels in the IDX layout that load_mnist_idx expects.
void write_digits_idx(const LabeledDataset& ds, const std::string& image_path,
                      const std::string& label_path);

}  // namespace rsd
