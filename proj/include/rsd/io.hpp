#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "rsd/tensor.hpp"

namespace rsd {

// Binary tensor container: magic "RTSR", format version u32, rank u32,
// dims u64 each, payload f32 — all little-endian. Checkpoints are a
// manifest of named RTSR records (magic "RTSM", version, count, then
// [name_len u32][name][record] per tensor).

void write_rtsr(std::ostream& os, const Tensor& t);
Tensor read_rtsr(std::istream& is);
void save_rtsr(const std::string& path, const Tensor& t);
Tensor load_rtsr(const std::string& path);

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;
void save_checkpoint(const std::string& path, const NamedTensors& tensors);
NamedTensors load_checkpoint(const std::string& path);

/// Binary PPM (P6) for 3-channel, PGM (P5) for 1-channel, max value 255.
/// Images are [C,H,W] in [0,1]; bytes are round(v*255) clamped.
void write_pnm(const std::string& path, const Tensor& image);
Tensor read_pnm(const std::string& path);

/// FNV-1a over a file's bytes, for checkpoint provenance fields.
std::uint64_t file_hash(const std::string& path);
std::string hash_hex(std::uint64_t h);

}  // namespace rsd
