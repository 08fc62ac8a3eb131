#include <doctest.h>

#include <algorithm>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>

#include "rsd/dataset.hpp"
#include "rsd/digits.hpp"

using namespace rsd;
namespace fs = std::filesystem;

namespace {

fs::path tmp_dir() {
  fs::path p = fs::temp_directory_path() / "rsd_ds_test";
  fs::create_directories(p);
  return p;
}

void write_be32(std::ofstream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

/// Hand-built IDX fixture with explicit pixel/label bytes.
void write_idx_fixture(const fs::path& img_path, const fs::path& lbl_path,
                       const std::vector<std::vector<unsigned char>>& images,
                       const std::vector<unsigned char>& labels, std::int64_t rows,
                       std::int64_t cols, std::uint32_t img_magic = 0x803,
                       std::uint32_t lbl_magic = 0x801) {
  std::ofstream img(img_path, std::ios::binary);
  write_be32(img, img_magic);
  write_be32(img, static_cast<std::uint32_t>(images.size()));
  write_be32(img, static_cast<std::uint32_t>(rows));
  write_be32(img, static_cast<std::uint32_t>(cols));
  for (const auto& px : images) img.write(reinterpret_cast<const char*>(px.data()),
                                          static_cast<std::streamsize>(px.size()));
  std::ofstream lbl(lbl_path, std::ios::binary);
  write_be32(lbl, lbl_magic);
  write_be32(lbl, static_cast<std::uint32_t>(labels.size()));
  lbl.write(reinterpret_cast<const char*>(labels.data()),
            static_cast<std::streamsize>(labels.size()));
}

}  // namespace

TEST_CASE("idx loader parses the big-endian format") {
  const fs::path dir = tmp_dir();
  std::vector<std::vector<unsigned char>> images{{0, 128, 255, 64}, {1, 2, 3, 4}};
  write_idx_fixture(dir / "img", dir / "lbl", images, {9, 0}, 2, 2);
  LabeledDataset ds = load_mnist_idx((dir / "img").string(), (dir / "lbl").string());
  CHECK(ds.size() == 2);
  CHECK(ds.images.shape() == Shape{2, 1, 2, 2});
  CHECK(ds.images.data()[2] == 1.0f);  // byte 255 -> 1.0
  CHECK(ds.images.data()[0] == 0.0f);
  CHECK(ds.images.data()[1] == doctest::Approx(128.0 / 255.0));
  CHECK(ds.labels[0] == 9);
  CHECK(ds.num_classes == 10);
  ds.validate();
}

TEST_CASE("idx loader rejects bad magic, bad labels, truncation") {
  const fs::path dir = tmp_dir();
  write_idx_fixture(dir / "imgbad", dir / "lblok", {{0, 0, 0, 0}}, {1}, 2, 2, 0x802);
  CHECK_THROWS_AS(load_mnist_idx((dir / "imgbad").string(), (dir / "lblok").string()), FormatError);

  write_idx_fixture(dir / "imgok", dir / "lblbad", {{0, 0, 0, 0}}, {10}, 2, 2);
  CHECK_THROWS_AS(load_mnist_idx((dir / "imgok").string(), (dir / "lblbad").string()), DomainError);

  // truncated payload: header promises 2 images, file carries 1
  std::ofstream img(dir / "imgcut", std::ios::binary);
  write_be32(img, 0x803);
  write_be32(img, 2);
  write_be32(img, 2);
  write_be32(img, 2);
  img.write("\0\0\0\0", 4);
  img.close();
  write_idx_fixture(dir / "img1", dir / "lbl2", {{0, 0, 0, 0}}, {1, 2}, 2, 2);
  CHECK_THROWS_AS(load_mnist_idx((dir / "imgcut").string(), (dir / "lbl2").string()), IoError);
  CHECK_THROWS_AS(load_mnist_idx((dir / "missing").string(), (dir / "lbl2").string()), IoError);
}

TEST_CASE("cifar10 record parsing and round trip") {
  const fs::path dir = tmp_dir();
  {
    std::ofstream os(dir / "batch.bin", std::ios::binary);
    os.put(5);
    for (int i = 0; i < 3072; ++i) os.put(static_cast<char>(i % 256));
  }
  LabeledDataset ds = load_cifar10_bin({(dir / "batch.bin").string()});
  CHECK(ds.size() == 1);
  CHECK(ds.labels[0] == 5);
  CHECK(ds.images.shape() == Shape{1, 3, 32, 32});
  CHECK(ds.images.data()[7] == doctest::Approx(7.0 / 255.0));

  {
    std::ofstream os(dir / "short.bin", std::ios::binary);
    os.write("abc", 3);
  }
  CHECK_THROWS_AS(load_cifar10_bin({(dir / "short.bin").string()}), FormatError);

  // write from a known tensor, reload, bit equal
  LabeledDataset src;
  src.images = Tensor::zeros({2, 3, 32, 32});
  SplitMix64 rng(9);
  for (std::int64_t i = 0; i < src.images.numel(); ++i)
    src.images.data()[i] = static_cast<float>(rng.below(256)) / 255.0f;  // byte-exact values
  src.labels = {3, 7};
  src.num_classes = 10;
  write_cifar10_bin((dir / "rt.bin").string(), src);
  LabeledDataset back = load_cifar10_bin({(dir / "rt.bin").string()});
  CHECK(back.labels == src.labels);
  CHECK(std::memcmp(back.images.raw(), src.images.raw(),
                    static_cast<std::size_t>(src.images.numel()) * 4) == 0);
}

TEST_CASE("synthetic fixture: determinism, balance, range") {
  LabeledDataset a = make_synthetic(10, 1);
  LabeledDataset b = make_synthetic(10, 1);
  CHECK(std::memcmp(a.images.raw(), b.images.raw(),
                    static_cast<std::size_t>(a.images.numel()) * 4) == 0);
  CHECK(a.labels == b.labels);

  LabeledDataset c = make_synthetic(11, 2);
  std::int64_t zeros = std::count(c.labels.begin(), c.labels.end(), 0);
  std::int64_t ones = std::count(c.labels.begin(), c.labels.end(), 1);
  CHECK(std::abs(zeros - ones) <= 1);
  c.validate();
  CHECK_THROWS_AS(make_synthetic(1, 1), UsageError);
}

TEST_CASE("batch_iter covers the dataset exactly once") {
  LabeledDataset ds = make_synthetic(10, 3);
  BatchIter it(ds, 3, 42);
  Tensor xb;
  std::vector<std::int32_t> yb;
  std::vector<std::int64_t> sizes;
  std::map<std::string, int> seen;  // multiset over image bytes
  while (it.next(xb, yb)) {
    sizes.push_back(xb.dim(0));
    for (std::int64_t i = 0; i < xb.dim(0); ++i) {
      const char* p = reinterpret_cast<const char*>(xb.raw() + i * 256);
      ++seen[std::string(p, 256 * 4)];
    }
  }
  CHECK(sizes == std::vector<std::int64_t>{3, 3, 3, 1});
  std::map<std::string, int> expect;
  for (std::int64_t i = 0; i < 10; ++i) {
    const char* p = reinterpret_cast<const char*>(ds.images.raw() + i * 256);
    ++expect[std::string(p, 256 * 4)];
  }
  CHECK(seen == expect);
}

TEST_CASE("batch_iter order is a pure function of the seed") {
  LabeledDataset ds = make_synthetic(64, 4);
  auto first_labels = [&](std::uint64_t seed) {
    BatchIter it(ds, 64, seed);
    Tensor xb;
    std::vector<std::int32_t> yb;
    it.next(xb, yb);
    return yb;
  };
  CHECK(first_labels(7) == first_labels(7));
  CHECK(first_labels(7) != first_labels(8));
}

TEST_CASE("digit corpus generates, round-trips through idx, and is learnable-shaped") {
  LabeledDataset ds = make_digits(50, 11);
  ds.validate();
  CHECK(ds.num_classes == 10);
  CHECK(ds.images.shape() == Shape{50, 1, 28, 28});
  // strokes actually draw ink
  CHECK(ds.images.data().maxCoeff() > 0.5f);

  const fs::path dir = tmp_dir();
  write_digits_idx(ds, (dir / "dimg").string(), (dir / "dlbl").string());
  LabeledDataset back = load_mnist_idx((dir / "dimg").string(), (dir / "dlbl").string());
  CHECK(back.size() == 50);
  CHECK(back.labels == ds.labels);
  // loader applies the same 1/255 quantization the writer used
  for (std::int64_t i = 0; i < 20; ++i) {
    const float orig = ds.images.data()[i * 31];
    const float rt = back.images.data()[i * 31];
    CHECK(std::abs(orig - rt) <= 0.5f / 255.0f + 1e-6f);
  }
}
