#pragma once

// Checkpoint files:
//   "UFCK" | u32 version | u32 header bytes | JSON header | f32 payload | u32 crc32
// The header lists tensors (name, shape) in payload order plus free-form
// metadata. The trailing crc32 covers every preceding byte.

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "ufe/model.hpp"
#include "ufe/tensor.hpp"

namespace ufe::ckpt {

inline constexpr std::uint32_t kVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

struct Checkpoint {
  nlohmann::json meta = nlohmann::json::object();
  std::vector<NamedArray> arrays;

  const NamedArray& get(const std::string& name) const;
};

std::vector<std::uint8_t> encode(const Checkpoint& checkpoint);
// Validates magic, version and checksum before parsing anything.
Checkpoint decode(const std::vector<std::uint8_t>& bytes);

void save(const Checkpoint& checkpoint, const std::string& path);
Checkpoint load(const std::string& path);

// Parameters go under "param/<name>"; meta gets "model_config" and "config_hash".
void put_model(Checkpoint& checkpoint, const model::Model& model);
model::Model get_model(const Checkpoint& checkpoint);

}  // namespace ufe::ckpt
