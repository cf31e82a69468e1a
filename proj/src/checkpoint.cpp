#include "ufe/checkpoint.hpp"

#include <cstring>
#include <filesystem>

#include "ufe/blob.hpp"

namespace ufe::ckpt {

const NamedArray& Checkpoint::get(const std::string& name) const {
  for (const auto& a : arrays)
    if (a.name == name) return a;
  throw CheckpointError("checkpoint has no tensor named '" + name + "'");
}

std::vector<std::uint8_t> encode(const Checkpoint& checkpoint) {
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& a : checkpoint.arrays) {
    if (a.values.size() != shape_numel(a.shape)) {
      throw CheckpointError("tensor '" + a.name + "' has " + std::to_string(a.values.size()) +
                            " values for shape " + shape_str(a.shape));
    }
    tensors.push_back({{"name", a.name}, {"shape", a.shape}});
  }
  const nlohmann::json header{{"version", kVersion}, {"meta", checkpoint.meta}, {"tensors", tensors}};
  const std::string text = header.dump();

  std::vector<std::uint8_t> out{'U', 'F', 'C', 'K'};
  blob::append_u32(out, kVersion);
  blob::append_u32(out, static_cast<std::uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  for (const auto& a : checkpoint.arrays)
    for (float v : a.values) blob::append_f32(out, v);
  blob::append_u32(out, blob::crc32(out));
  return out;
}

Checkpoint decode(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), "UFCK", 4) != 0) {
    throw CheckpointError("not a checkpoint file (bad magic)");
  }
  const std::uint32_t version = blob::load_u32(bytes.data() + 4);
  if (version != kVersion) {
    throw CheckpointError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                          std::to_string(kVersion) + ")");
  }
  const std::size_t body = bytes.size() - 4;
  const std::uint32_t stored = blob::load_u32(bytes.data() + body);
  const std::uint32_t actual = blob::crc32({bytes.data(), body});
  if (stored != actual) throw CheckpointError("checkpoint checksum mismatch: file is corrupted");

  const std::uint32_t header_len = blob::load_u32(bytes.data() + 8);
  if (12 + static_cast<std::size_t>(header_len) > body) throw CheckpointError("checkpoint header truncated");
  const auto header = nlohmann::json::parse(bytes.begin() + 12, bytes.begin() + 12 + header_len);

  Checkpoint out;
  out.meta = header.at("meta");
  std::size_t offset = 12 + header_len;
  for (const auto& t : header.at("tensors")) {
    NamedArray a;
    a.name = t.at("name").get<std::string>();
    a.shape = t.at("shape").get<Shape>();
    const std::size_t n = shape_numel(a.shape);
    if (offset + 4 * n > body) throw CheckpointError("checkpoint payload truncated at '" + a.name + "'");
    a.values.resize(n);
    std::memcpy(a.values.data(), bytes.data() + offset, 4 * n);
    offset += 4 * n;
    out.arrays.push_back(std::move(a));
  }
  if (offset != body) throw CheckpointError("checkpoint has trailing bytes after the payload");
  return out;
}

void save(const Checkpoint& checkpoint, const std::string& path) {
  // Write-then-rename so a crash never leaves a half-written checkpoint behind.
  const std::string tmp = path + ".tmp";
  blob::write_file(tmp, encode(checkpoint));
  std::filesystem::rename(tmp, path);
}

Checkpoint load(const std::string& path) {
  std::vector<std::uint8_t> bytes;
  try {
    bytes = blob::read_file(path);
  } catch (const std::runtime_error& e) {
    throw CheckpointError(e.what());
  }
  return decode(bytes);
}

void put_model(Checkpoint& checkpoint, const model::Model& model) {
  checkpoint.meta["model_config"] = model.config().to_json();
  checkpoint.meta["config_hash"] = model.config().hash();
  for (const auto& p : model.params()) {
    checkpoint.arrays.push_back({"param/" + p.name, p.value.shape(), p.value.values()});
  }
}

model::Model get_model(const Checkpoint& checkpoint) {
  if (!checkpoint.meta.contains("model_config")) throw CheckpointError("checkpoint has no model config");
  const auto config = model::ModelConfig::from_json(checkpoint.meta.at("model_config"));
  const auto stored = checkpoint.meta.value("config_hash", std::string());
  if (stored != config.hash()) {
    throw CheckpointError("checkpoint config hash " + stored + " does not match its model config (" +
                          config.hash() + ")");
  }
  model::Model m(config, 0);
  for (auto& p : m.params()) {
    const auto& a = checkpoint.get("param/" + p.name);
    if (a.shape != p.value.shape()) {
      throw CheckpointError("parameter " + p.name + " has shape " + shape_str(a.shape) + ", expected " +
                            shape_str(p.value.shape()));
    }
    p.value.values() = a.values;
  }
  return m;
}

}  // namespace ufe::ckpt
