#pragma once

// Run configuration file: one JSON object whose sections mirror the module
// configs. Missing keys take their defaults; unknown keys are rejected.
//
//   { "seed": 0, "output_dir": "runs/default",
//     "dataset": {...}, "train": {...}, "optimizer": {...}, "loss": {...},
//     "augment": {...}, "flow": {...}, "model": {...} }

#include <cstdint>
#include <stdexcept>
#include <string>

#include "json.hpp"
#include "ufe/dataset.hpp"
#include "ufe/trainer.hpp"

namespace ufe::config {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct RunConfig {
  data::DatasetConfig dataset;
  train::TrainConfig train;  // train.seed mirrors `seed`
  std::string output_dir = "runs/default";
  std::uint64_t seed = 0;

  void validate() const;
};

nlohmann::json to_json(const RunConfig& config);
// Throws ConfigError naming the offending key path.
RunConfig from_json(const nlohmann::json& j);
RunConfig load(const std::string& path);

nlohmann::json to_json(const flow::FarnebackParams& params);
nlohmann::json to_json(const augment::AugmentConfig& config);
nlohmann::json to_json(const optim::AdamConfig& config);

}  // namespace ufe::config
