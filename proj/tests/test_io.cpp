#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "rsd/io.hpp"

using namespace rsd;
namespace fs = std::filesystem;

namespace {

fs::path tmp_dir() {
  fs::path p = fs::temp_directory_path() / "rsd_io_test";
  fs::create_directories(p);
  return p;
}

bool bit_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.raw(), b.raw(), static_cast<std::size_t>(a.numel()) * sizeof(float)) == 0;
}

}  // namespace

TEST_CASE("rtsr round trip is bit exact") {
  SplitMix64 rng(5);
  Tensor t = Tensor::zeros({3, 4, 5});
  for (std::int64_t i = 0; i < t.numel(); ++i)
    t.data()[i] = static_cast<float>(rng.uniform(-10, 10));
  std::stringstream ss;
  write_rtsr(ss, t);
  Tensor back = read_rtsr(ss);
  CHECK(bit_equal(t, back));
}

TEST_CASE("rtsr header layout") {
  Tensor t = Tensor::from({2}, {1.0f, 2.0f});
  std::stringstream ss;
  write_rtsr(ss, t);
  const std::string bytes = ss.str();
  REQUIRE(bytes.size() == 4 + 4 + 4 + 8 + 8);  // magic, version, rank, one u64 dim, two f32
  CHECK(bytes.substr(0, 4) == "RTSR");
  CHECK(static_cast<unsigned char>(bytes[4]) == 1);   // version u32 LE
  CHECK(static_cast<unsigned char>(bytes[8]) == 1);   // rank u32 LE
  CHECK(static_cast<unsigned char>(bytes[12]) == 2);  // dim u64 LE
}

TEST_CASE("rtsr rejects bad magic and truncation") {
  std::stringstream bad("XXXX garbage");
  CHECK_THROWS_AS(read_rtsr(bad), FormatError);

  Tensor t = Tensor::from({4}, {1, 2, 3, 4});
  std::stringstream ss;
  write_rtsr(ss, t);
  std::string cut = ss.str().substr(0, 24);  // drop payload tail
  std::stringstream truncated(cut);
  CHECK_THROWS_AS(read_rtsr(truncated), IoError);
}

TEST_CASE("checkpoint manifest round trip") {
  const fs::path p = tmp_dir() / "model.ckpt";
  NamedTensors ts;
  ts.emplace_back("layer.w", Tensor::from({2, 2}, {1, 2, 3, 4}));
  ts.emplace_back("layer.b", Tensor::from({2}, {5, 6}));
  save_checkpoint(p.string(), ts);
  NamedTensors back = load_checkpoint(p.string());
  REQUIRE(back.size() == 2);
  CHECK(back[0].first == "layer.w");
  CHECK(back[1].first == "layer.b");
  CHECK(bit_equal(back[0].second, ts[0].second));
  CHECK(bit_equal(back[1].second, ts[1].second));
}

TEST_CASE("pnm round trip at byte resolution") {
  const fs::path dir = tmp_dir();
  Tensor gray = Tensor::zeros({1, 3, 4});
  for (std::int64_t i = 0; i < gray.numel(); ++i)
    gray.data()[i] = static_cast<float>(i * 20) / 255.0f;  // exact byte values
  write_pnm((dir / "g.pgm").string(), gray);
  CHECK(bit_equal(read_pnm((dir / "g.pgm").string()), gray));

  Tensor rgb = Tensor::zeros({3, 2, 2});
  for (std::int64_t i = 0; i < rgb.numel(); ++i)
    rgb.data()[i] = static_cast<float>((i * 17) % 256) / 255.0f;
  write_pnm((dir / "c.ppm").string(), rgb);
  CHECK(bit_equal(read_pnm((dir / "c.ppm").string()), rgb));

  CHECK_THROWS_AS(read_pnm((dir / "missing.pgm").string()), IoError);
}

TEST_CASE("file hash is stable and content sensitive") {
  const fs::path dir = tmp_dir();
  std::ofstream((dir / "a.bin").string(), std::ios::binary) << "hello";
  std::ofstream((dir / "b.bin").string(), std::ios::binary) << "hellp";
  CHECK(file_hash((dir / "a.bin").string()) == file_hash((dir / "a.bin").string()));
  CHECK(file_hash((dir / "a.bin").string()) != file_hash((dir / "b.bin").string()));
  CHECK(hash_hex(0xabcULL).size() == 16);
}
