#pragma once

// UFET tensor blobs: magic "UFET", u32 version, u32 rank, u32 dims[rank],
// then the payload (little-endian f32, or u8 for masks).

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace ufe::blob {

inline constexpr std::uint32_t kVersion = 1;

enum class DType { kF32, kU8 };

struct Blob {
  std::vector<std::uint32_t> dims;
  std::vector<float> f32;
  std::vector<std::uint8_t> u8;
};

std::uint32_t crc32(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> encode(const std::vector<std::uint32_t>& dims, DType dtype,
                                 std::span<const float> f32, std::span<const std::uint8_t> u8);

// Throws std::runtime_error on bad magic, version, or truncated payload.
Blob decode(std::span<const std::uint8_t> bytes, DType dtype);

std::vector<std::uint8_t> read_file(const std::string& path);
void write_file(const std::string& path, std::span<const std::uint8_t> bytes);

void append_u32(std::vector<std::uint8_t>& out, std::uint32_t v);
void append_f32(std::vector<std::uint8_t>& out, float v);
std::uint32_t load_u32(const std::uint8_t* p);
float load_f32(const std::uint8_t* p);

}  // namespace ufe::blob
