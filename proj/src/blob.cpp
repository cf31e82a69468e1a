#include "ufe/blob.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <stdexcept>

namespace ufe::blob {

static_assert(std::endian::native == std::endian::little, "blob IO assumes a little-endian host");

std::uint32_t crc32(std::span<const std::uint8_t> bytes) {
  return static_cast<std::uint32_t>(
      ::crc32(0L, bytes.data(), static_cast<uInt>(bytes.size())));
}

void append_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  out.insert(out.end(), p, p + 4);
}

void append_f32(std::vector<std::uint8_t>& out, float v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  out.insert(out.end(), p, p + 4);
}

std::uint32_t load_u32(const std::uint8_t* p) {
  std::uint32_t v;
  std::memcpy(&v, p, 4);
  return v;
}

float load_f32(const std::uint8_t* p) {
  float v;
  std::memcpy(&v, p, 4);
  return v;
}

std::vector<std::uint8_t> encode(const std::vector<std::uint32_t>& dims, DType dtype,
                                 std::span<const float> f32, std::span<const std::uint8_t> u8) {
  std::vector<std::uint8_t> out{'U', 'F', 'E', 'T'};
  append_u32(out, kVersion);
  append_u32(out, static_cast<std::uint32_t>(dims.size()));
  std::size_t n = 1;
  for (auto d : dims) {
    append_u32(out, d);
    n *= d;
  }
  if (dtype == DType::kF32) {
    if (f32.size() != n) throw std::invalid_argument("blob payload does not match dims");
    const auto* p = reinterpret_cast<const std::uint8_t*>(f32.data());
    out.insert(out.end(), p, p + 4 * n);
  } else {
    if (u8.size() != n) throw std::invalid_argument("blob payload does not match dims");
    out.insert(out.end(), u8.begin(), u8.end());
  }
  return out;
}

Blob decode(std::span<const std::uint8_t> bytes, DType dtype) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "UFET", 4) != 0) {
    throw std::runtime_error("not a UFET blob (bad magic)");
  }
  const std::uint32_t version = load_u32(bytes.data() + 4);
  if (version != kVersion) {
    throw std::runtime_error("unsupported UFET version " + std::to_string(version));
  }
  const std::uint32_t rank = load_u32(bytes.data() + 8);
  if (rank > 8 || bytes.size() < 12 + 4 * static_cast<std::size_t>(rank)) {
    throw std::runtime_error("corrupt UFET header (rank " + std::to_string(rank) + ")");
  }
  Blob blob;
  std::size_t n = 1;
  for (std::uint32_t i = 0; i < rank; ++i) {
    blob.dims.push_back(load_u32(bytes.data() + 12 + 4 * i));
    n *= blob.dims.back();
  }
  const std::size_t offset = 12 + 4 * static_cast<std::size_t>(rank);
  const std::size_t elem = dtype == DType::kF32 ? 4 : 1;
  if (bytes.size() != offset + elem * n) {
    throw std::runtime_error("truncated UFET payload: expected " + std::to_string(elem * n) +
                             " bytes, found " + std::to_string(bytes.size() - offset));
  }
  if (dtype == DType::kF32) {
    blob.f32.resize(n);
    std::memcpy(blob.f32.data(), bytes.data() + offset, 4 * n);
  } else {
    blob.u8.assign(bytes.begin() + offset, bytes.end());
  }
  return blob;
}

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::string& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("short write to " + path);
}

}  // namespace ufe::blob
