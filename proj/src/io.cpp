#include "rsd/io.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <vector>

namespace rsd {

namespace {

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw IoError("rtsr: truncated header");
  return std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 |
         std::uint32_t(b[3]) << 24;
}

std::uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  if (!is) throw IoError("rtsr: truncated header");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t(b[i]) << (8 * i);
  return v;
}

constexpr std::uint32_t kFormatVersion = 1;

}  // namespace

void write_rtsr(std::ostream& os, const Tensor& t) {
  os.write("RTSR", 4);
  put_u32(os, kFormatVersion);
  put_u32(os, static_cast<std::uint32_t>(t.rank()));
  for (auto d : t.shape()) put_u64(os, static_cast<std::uint64_t>(d));
  // f32 little-endian payload; tensors are row-major already
  static_assert(sizeof(float) == 4);
  if constexpr (std::endian::native == std::endian::little) {
    os.write(reinterpret_cast<const char*>(t.raw()), t.numel() * 4);
  } else {
    for (std::int64_t i = 0; i < t.numel(); ++i) {
      float v = t.data()[i];
      std::uint32_t bits;
      std::memcpy(&bits, &v, 4);
      put_u32(os, bits);
    }
  }
  if (!os) throw IoError("rtsr: write failed");
}

Tensor read_rtsr(std::istream& is) {
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "RTSR", 4) != 0) throw FormatError("rtsr: bad magic");
  const std::uint32_t version = get_u32(is);
  if (version != kFormatVersion) throw FormatError("rtsr: unsupported version " + std::to_string(version));
  const std::uint32_t rank = get_u32(is);
  if (rank > 8) throw FormatError("rtsr: implausible rank " + std::to_string(rank));
  Shape shape(rank);
  for (auto& d : shape) {
    d = static_cast<std::int64_t>(get_u64(is));
    if (d <= 0) throw FormatError("rtsr: non-positive dimension");
  }
  Tensor t = Tensor::zeros(shape);
  if constexpr (std::endian::native == std::endian::little) {
    is.read(reinterpret_cast<char*>(t.raw()), t.numel() * 4);
    if (!is) throw IoError("rtsr: truncated payload");
  } else {
    for (std::int64_t i = 0; i < t.numel(); ++i) {
      unsigned char b[4];
      is.read(reinterpret_cast<char*>(b), 4);
      if (!is) throw IoError("rtsr: truncated payload");
      std::uint32_t bits = std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 |
                           std::uint32_t(b[2]) << 16 | std::uint32_t(b[3]) << 24;
      float v;
      std::memcpy(&v, &bits, 4);
      t.data()[i] = v;
    }
  }
  return t;
}

void save_rtsr(const std::string& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for write: " + path);
  write_rtsr(os, t);
}

Tensor load_rtsr(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open: " + path);
  return read_rtsr(is);
}

void save_checkpoint(const std::string& path, const NamedTensors& tensors) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for write: " + path);
  os.write("RTSM", 4);
  put_u32(os, kFormatVersion);
  put_u32(os, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    put_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_rtsr(os, t);
  }
  if (!os) throw IoError("checkpoint write failed: " + path);
}

NamedTensors load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "RTSM", 4) != 0) throw FormatError("checkpoint: bad magic in " + path);
  const std::uint32_t version = get_u32(is);
  if (version != kFormatVersion) throw FormatError("checkpoint: unsupported version");
  const std::uint32_t count = get_u32(is);
  NamedTensors out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t len = get_u32(is);
    if (len > 4096) throw FormatError("checkpoint: implausible name length");
    std::string name(len, '\0');
    is.read(name.data(), len);
    if (!is) throw IoError("checkpoint: truncated name");
    out.emplace_back(std::move(name), read_rtsr(is));
  }
  return out;
}

void write_pnm(const std::string& path, const Tensor& image) {
  if (image.rank() != 3) throw DimensionError("write_pnm: expected [C,H,W]");
  const std::int64_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  if (c != 1 && c != 3) throw DimensionError("write_pnm: 1 or 3 channels only");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for write: " + path);
  os << (c == 3 ? "P6" : "P5") << "\n" << w << " " << h << "\n255\n";
  std::vector<unsigned char> row(static_cast<std::size_t>(w * c));
  for (std::int64_t i = 0; i < h; ++i) {
    for (std::int64_t j = 0; j < w; ++j)
      for (std::int64_t ch = 0; ch < c; ++ch) {
        float v = image.data()[(ch * h + i) * w + j];
        int byte = static_cast<int>(std::lround(v * 255.0f));
        row[static_cast<std::size_t>(j * c + ch)] =
            static_cast<unsigned char>(std::clamp(byte, 0, 255));
      }
    os.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
  if (!os) throw IoError("pnm write failed: " + path);
}

namespace {

int pnm_next_int(std::istream& is) {
  // skips whitespace and '#' comments per the PNM grammar
  for (;;) {
    int ch = is.peek();
    if (ch == '#') {
      std::string line;
      std::getline(is, line);
    } else if (std::isspace(ch)) {
      is.get();
    } else {
      break;
    }
  }
  int v;
  if (!(is >> v)) throw FormatError("pnm: bad header");
  return v;
}

}  // namespace

Tensor read_pnm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open: " + path);
  std::string magic;
  is >> magic;
  std::int64_t c;
  if (magic == "P6")
    c = 3;
  else if (magic == "P5")
    c = 1;
  else
    throw FormatError("pnm: unsupported magic '" + magic + "'");
  const std::int64_t w = pnm_next_int(is), h = pnm_next_int(is), maxv = pnm_next_int(is);
  if (w <= 0 || h <= 0) throw FormatError("pnm: bad dimensions");
  if (maxv != 255) throw FormatError("pnm: only maxval 255 supported");
  is.get();  // single whitespace after header
  std::vector<unsigned char> buf(static_cast<std::size_t>(w * h * c));
  is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!is) throw IoError("pnm: truncated pixel data");
  Tensor t = Tensor::zeros({c, h, w});
  for (std::int64_t i = 0; i < h; ++i)
    for (std::int64_t j = 0; j < w; ++j)
      for (std::int64_t ch = 0; ch < c; ++ch)
        t.data()[(ch * h + i) * w + j] =
            static_cast<float>(buf[static_cast<std::size_t>((i * w + j) * c + ch)]) / 255.0f;
  return t;
}

std::uint64_t file_hash(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open: " + path);
  std::uint64_t h = 0xCBF29CE484222325ULL;
  char buf[4096];
  while (is.read(buf, sizeof(buf)) || is.gcount() > 0) {
    for (std::streamsize i = 0; i < is.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001B3ULL;
    }
    if (!is) break;
  }
  return h;
}

std::string hash_hex(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

}  // namespace rsd
