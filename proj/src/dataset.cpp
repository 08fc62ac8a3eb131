#include "rsd/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include "rsd/common.hpp"

namespace rsd {

Tensor LabeledDataset::image(std::int64_t i) const {
  if (i < 0 || i >= size()) throw UsageError("dataset image index out of range");
  const std::int64_t chw = channels() * height() * width();
  Tensor t = Tensor::zeros({channels(), height(), width()});
  std::copy_n(images.raw() + i * chw, chw, t.raw());
  return t;
}

void LabeledDataset::validate() const {
  if (!images.defined() || images.rank() != 4) throw DimensionError("dataset: images must be [N,C,H,W]");
  if (static_cast<std::int64_t>(labels.size()) != size())
    throw DimensionError("dataset: image count != label count");
  if ((images.data() < 0.0f).any() || (images.data() > 1.0f).any())
    throw DomainError("dataset: pixel outside [0,1]");
  for (auto y : labels)
    if (y < 0 || y >= num_classes) throw DomainError("dataset: label out of range");
}

LabeledDataset slice_dataset(const LabeledDataset& ds, std::int64_t from, std::int64_t n) {
  if (from < 0 || n < 0 || from + n > ds.size()) throw UsageError("slice_dataset: range out of bounds");
  LabeledDataset out;
  const std::int64_t chw = ds.channels() * ds.height() * ds.width();
  out.images = Tensor::zeros({n, ds.channels(), ds.height(), ds.width()});
  std::copy_n(ds.images.raw() + from * chw, n * chw, out.images.raw());
  out.labels.assign(ds.labels.begin() + from, ds.labels.begin() + from + n);
  out.num_classes = ds.num_classes;
  out.name = ds.name;
  return out;
}

namespace {

std::uint32_t read_be32(std::istream& is, const char* what) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw IoError(std::string("idx: truncated ") + what);
  return std::uint32_t(b[0]) << 24 | std::uint32_t(b[1]) << 16 | std::uint32_t(b[2]) << 8 |
         std::uint32_t(b[3]);
}

void write_be32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace

LabeledDataset load_mnist_idx(const std::string& image_path, const std::string& label_path) {
  std::ifstream imgs(image_path, std::ios::binary);
  if (!imgs) throw IoError("cannot open: " + image_path);
  std::ifstream lbls(label_path, std::ios::binary);
  if (!lbls) throw IoError("cannot open: " + label_path);

  if (read_be32(imgs, "image magic") != 0x00000803u)
    throw FormatError("idx: bad image magic in " + image_path);
  const std::int64_t n = read_be32(imgs, "image count");
  const std::int64_t rows = read_be32(imgs, "rows");
  const std::int64_t cols = read_be32(imgs, "cols");

  if (read_be32(lbls, "label magic") != 0x00000801u)
    throw FormatError("idx: bad label magic in " + label_path);
  const std::int64_t n_labels = read_be32(lbls, "label count");
  if (n != n_labels) throw FormatError("idx: image/label count mismatch");

  LabeledDataset ds;
  ds.images = Tensor::zeros({n, 1, rows, cols});
  ds.labels.resize(static_cast<std::size_t>(n));
  ds.num_classes = 10;
  ds.name = "mnist";

  std::vector<unsigned char> buf(static_cast<std::size_t>(rows * cols));
  for (std::int64_t i = 0; i < n; ++i) {
    imgs.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!imgs) throw IoError("idx: truncated image payload");
    float* dst = ds.images.raw() + i * rows * cols;
    for (std::size_t p = 0; p < buf.size(); ++p) dst[p] = static_cast<float>(buf[p]) / 255.0f;
  }
  for (std::int64_t i = 0; i < n; ++i) {
    char b;
    lbls.read(&b, 1);
    if (!lbls) throw IoError("idx: truncated label payload");
    const int y = static_cast<unsigned char>(b);
    if (y > 9) throw DomainError("idx: label byte " + std::to_string(y) + " out of range");
    ds.labels[static_cast<std::size_t>(i)] = y;
  }
  return ds;
}

void write_idx_images(const std::string& path, const Tensor& images) {
  if (images.rank() != 4 || images.dim(1) != 1)
    throw DimensionError("write_idx_images: expected [N,1,H,W]");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for write: " + path);
  write_be32(os, 0x00000803u);
  write_be32(os, static_cast<std::uint32_t>(images.dim(0)));
  write_be32(os, static_cast<std::uint32_t>(images.dim(2)));
  write_be32(os, static_cast<std::uint32_t>(images.dim(3)));
  const std::int64_t px = images.dim(2) * images.dim(3);
  std::vector<unsigned char> buf(static_cast<std::size_t>(px));
  for (std::int64_t i = 0; i < images.dim(0); ++i) {
    const float* src = images.raw() + i * px;
    for (std::int64_t p = 0; p < px; ++p) {
      int v = static_cast<int>(std::lround(src[p] * 255.0f));
      buf[static_cast<std::size_t>(p)] = static_cast<unsigned char>(std::clamp(v, 0, 255));
    }
    os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  }
  if (!os) throw IoError("idx write failed: " + path);
}

void write_idx_labels(const std::string& path, const std::vector<std::int32_t>& labels) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for write: " + path);
  write_be32(os, 0x00000801u);
  write_be32(os, static_cast<std::uint32_t>(labels.size()));
  for (auto y : labels) os.put(static_cast<char>(y));
  if (!os) throw IoError("idx write failed: " + path);
}

LabeledDataset load_cifar10_bin(const std::vector<std::string>& batch_paths) {
  constexpr std::int64_t kRecord = 3073;  // label + 3*32*32
  std::vector<std::vector<char>> blobs;
  std::int64_t total = 0;
  for (const auto& path : batch_paths) {
    std::ifstream is(path, std::ios::binary | std::ios::ate);
    if (!is) throw IoError("cannot open: " + path);
    const std::int64_t len = is.tellg();
    if (len % kRecord != 0)
      throw FormatError("cifar10: file length " + std::to_string(len) + " not a multiple of 3073: " + path);
    is.seekg(0);
    std::vector<char> blob(static_cast<std::size_t>(len));
    is.read(blob.data(), len);
    if (!is) throw IoError("cifar10: truncated read: " + path);
    total += len / kRecord;
    blobs.push_back(std::move(blob));
  }
  LabeledDataset ds;
  ds.images = Tensor::zeros({total, 3, 32, 32});
  ds.labels.resize(static_cast<std::size_t>(total));
  ds.num_classes = 10;
  ds.name = "cifar10";
  std::int64_t i = 0;
  for (const auto& blob : blobs) {
    const std::int64_t n = static_cast<std::int64_t>(blob.size()) / kRecord;
    for (std::int64_t r = 0; r < n; ++r, ++i) {
      const unsigned char* rec = reinterpret_cast<const unsigned char*>(blob.data()) + r * kRecord;
      if (rec[0] > 9) throw DomainError("cifar10: label byte out of range");
      ds.labels[static_cast<std::size_t>(i)] = rec[0];
      float* dst = ds.images.raw() + i * 3 * 32 * 32;
      for (std::int64_t p = 0; p < 3072; ++p) dst[p] = static_cast<float>(rec[1 + p]) / 255.0f;
    }
  }
  return ds;
}

void write_cifar10_bin(const std::string& path, const LabeledDataset& ds) {
  if (ds.channels() != 3 || ds.height() != 32 || ds.width() != 32)
    throw DimensionError("write_cifar10_bin: expected [N,3,32,32]");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for write: " + path);
  for (std::int64_t i = 0; i < ds.size(); ++i) {
    os.put(static_cast<char>(ds.labels[static_cast<std::size_t>(i)]));
    const float* src = ds.images.raw() + i * 3072;
    for (std::int64_t p = 0; p < 3072; ++p) {
      int v = static_cast<int>(std::lround(src[p] * 255.0f));
      os.put(static_cast<char>(static_cast<unsigned char>(std::clamp(v, 0, 255))));
    }
  }
  if (!os) throw IoError("cifar10 write failed: " + path);
}

LabeledDataset make_synthetic(std::int64_t n, std::uint64_t seed) {
  if (n < 2) throw UsageError("make_synthetic: need n >= 2");
  constexpr std::int64_t kSide = 16;
  LabeledDataset ds;
  ds.images = Tensor::zeros({n, 1, kSide, kSide});
  ds.labels.resize(static_cast<std::size_t>(n));
  ds.num_classes = 2;
  ds.name = "synthetic";
  for (std::int64_t i = 0; i < n; ++i) {
    SplitMix64 rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
    const std::int32_t label = static_cast<std::int32_t>(i % 2);  // balanced by construction
    ds.labels[static_cast<std::size_t>(i)] = label;
    const std::int64_t side = 6 + static_cast<std::int64_t>(rng.below(5));  // 6..10
    const std::int64_t r0 = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(kSide - side + 1)));
    const std::int64_t c0 = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(kSide - side + 1)));
    float* img = ds.images.raw() + i * kSide * kSide;
    for (std::int64_t r = r0; r < r0 + side; ++r)
      for (std::int64_t c = c0; c < c0 + side; ++c) {
        const bool border = (r < r0 + 2 || r >= r0 + side - 2 || c < c0 + 2 || c >= c0 + side - 2);
        if (label == 0 || border) img[r * kSide + c] = 1.0f;
      }
    for (std::int64_t p = 0; p < kSide * kSide; ++p) {
      float v = img[p] + 0.05f * static_cast<float>(rng.normal());
      img[p] = std::clamp(v, 0.0f, 1.0f);
    }
  }
  return ds;
}

BatchIter::BatchIter(const LabeledDataset& ds, std::int64_t batch_size, std::uint64_t shuffle_seed)
    : ds_(ds), batch_size_(batch_size), seed_(shuffle_seed) {
  if (batch_size < 1) throw UsageError("batch_iter: batch_size must be >= 1");
  reset();
}

void BatchIter::reset() {
  order_.resize(static_cast<std::size_t>(ds_.size()));
  std::iota(order_.begin(), order_.end(), std::int64_t(0));
  SplitMix64 rng(seed_);
  for (std::int64_t i = ds_.size() - 1; i > 0; --i) {
    const std::int64_t j = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(i + 1)));
    std::swap(order_[static_cast<std::size_t>(i)], order_[static_cast<std::size_t>(j)]);
  }
  pos_ = 0;
}

std::int64_t BatchIter::batches() const {
  return (ds_.size() + batch_size_ - 1) / batch_size_;
}

bool BatchIter::next(Tensor& images, std::vector<std::int32_t>& labels) {
  if (pos_ >= ds_.size()) return false;
  const std::int64_t n = std::min(batch_size_, ds_.size() - pos_);
  std::vector<std::int64_t> idx(order_.begin() + pos_, order_.begin() + pos_ + n);
  pos_ += n;
  images = take_rows(ds_.images, idx);
  labels.resize(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i)
    labels[static_cast<std::size_t>(i)] = ds_.labels[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])];
  return true;
}

Tensor take_rows(const Tensor& t, const std::vector<std::int64_t>& idx) {
  if (t.rank() < 1) throw DimensionError("take_rows: rank 0");
  Shape shape = t.shape();
  const std::int64_t row = t.numel() / shape[0];
  shape[0] = static_cast<std::int64_t>(idx.size());
  Tensor out = Tensor::zeros(shape);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= t.dim(0)) throw UsageError("take_rows: index out of range");
    std::copy_n(t.raw() + idx[i] * row, row, out.raw() + static_cast<std::int64_t>(i) * row);
  }
  return out;
}

}  // namespace rsd
