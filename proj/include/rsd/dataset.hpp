#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rsd/tensor.hpp"

namespace rsd {

/// Images [N,C,H,W] with values in [0,1], channel-major, pixel (row, col),
/// origin top-left. Labels are class indices in [0, num_classes).
struct LabeledDataset {
  Tensor images;
  std::vector<std::int32_t> labels;
  std::int32_t num_classes = 0;
  std::string name;

  std::int64_t size() const { return images.defined() ? images.dim(0) : 0; }
  std::int64_t channels() const { return images.dim(1); }
  std::int64_t height() const { return images.dim(2); }
  std::int64_t width() const { return images.dim(3); }

  /// One image as [C,H,W].
  Tensor image(std::int64_t i) const;
  void validate() const;
};

/// Contiguous subset [from, from+n).
LabeledDataset slice_dataset(const LabeledDataset& ds, std::int64_t from, std::int64_t n);

/// IDX-format loaders (big-endian headers, magic 0x803 images / 0x801
/// labels). Pixels are scaled by 1/255; labels must be < 10.
LabeledDataset load_mnist_idx(const std::string& image_path, const std::string& label_path);

/// IDX writers (u8 payloads) so generated corpora round-trip through the
/// same loader.
void write_idx_images(const std::string& path, const Tensor& images);
void write_idx_labels(const std::string& path, const std::vector<std::int32_t>& labels);

/// CIFAR-10 binary batches: 3073-byte records, label byte then 3072
/// channel-major pixels, scaled by 1/255.
LabeledDataset load_cifar10_bin(const std::vector<std::string>& batch_paths);
void write_cifar10_bin(const std::string& path, const LabeledDataset& ds);

/// Two-class 1x16x16 fixture: filled vs hollow squares at random positions,
/// noise sigma 0.05, clamped. Deterministic under seed; labels balanced.
LabeledDataset make_synthetic(std::int64_t n, std::uint64_t seed);

/// Deterministic epoch iterator: seeded permutation, final short batch
/// included, every sample exactly once.
class BatchIter {
 public:
  BatchIter(const LabeledDataset& ds, std::int64_t batch_size, std::uint64_t shuffle_seed);
  bool next(Tensor& images, std::vector<std::int32_t>& labels);
  void reset();
  std::int64_t batches() const;

 private:
  const LabeledDataset& ds_;
  std::int64_t batch_size_;
  std::uint64_t seed_;
  std::vector<std::int64_t> order_;
  std::int64_t pos_ = 0;
};

/// Gathers rows of a [N,...] tensor into a new tensor (data only).
Tensor take_rows(const Tensor& t, const std::vector<std::int64_t>& idx);

}  // namespace rsd
