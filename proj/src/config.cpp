#include "ufe/config.hpp"

#include <fstream>

namespace ufe::flow {
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(FarnebackParams, pyramid_scale, levels, window_size, iterations,
                                   poly_n, poly_sigma)
}
namespace ufe::augment {
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(AugmentConfig, crop_scale_min, crop_scale_max, hflip_prob,
                                   brightness, contrast, saturation, grayscale_prob, cutmix_prob,
                                   cutmix_area_min, cutmix_area_max)
}
namespace ufe::optim {
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(AdamConfig, lr, beta1, beta2, eps)
}

namespace ufe::config {

using nlohmann::json;

namespace {

json train_section(const train::TrainConfig& t) {
  return {{"max_iterations", t.max_iterations},
          {"burn_in_iterations", t.burn_in_iterations},
          {"labeled_batch", t.labeled_batch},
          {"unlabeled_batch", t.unlabeled_batch},
          {"labeled_fraction", t.labeled_fraction},
          {"use_flow", t.use_flow},
          {"eval_every", t.eval_every},
          {"checkpoint_every", t.checkpoint_every}};
}

// Overlays `user` on `defaults`, rejecting keys the defaults do not have.
void overlay(json& defaults, const json& user, const std::string& path) {
  if (!user.is_object()) throw ConfigError(path + " must be a JSON object");
  for (const auto& [key, value] : user.items()) {
    const std::string where = path.empty() ? key : path + "." + key;
    auto it = defaults.find(key);
    if (it == defaults.end()) throw ConfigError("unknown config key '" + where + "'");
    if (it->is_object()) {
      overlay(*it, value, where);
    } else {
      if (it->is_number() != value.is_number() || it->is_string() != value.is_string() ||
          it->is_boolean() != value.is_boolean() || it->is_array() != value.is_array()) {
        throw ConfigError("config key '" + where + "' has the wrong type");
      }
      *it = value;
    }
  }
}

}  // namespace

json to_json(const flow::FarnebackParams& params) { return params; }
json to_json(const augment::AugmentConfig& config) { return config; }
json to_json(const optim::AdamConfig& config) { return config; }

void RunConfig::validate() const {
  dataset.validate();
  train.validate();
  if (train.model.audio_dim != dataset.audio_dim) {
    throw ConfigError("model.audio_dim must equal dataset.audio_dim");
  }
  if (train.seed != seed) throw ConfigError("train seed out of sync with run seed");
  if (output_dir.empty()) throw ConfigError("output_dir must not be empty");
}

json to_json(const RunConfig& c) {
  return {{"seed", c.seed},
          {"output_dir", c.output_dir},
          {"dataset", data::to_json(c.dataset)},
          {"train", train_section(c.train)},
          {"optimizer", to_json(c.train.adam)},
          {"loss", c.train.loss.to_json()},
          {"augment", to_json(c.train.augment)},
          {"flow", to_json(c.train.flow)},
          {"model", c.train.model.to_json()}};
}

RunConfig from_json(const json& user) {
  json j = to_json(RunConfig{});
  overlay(j, user, "");
  RunConfig c;
  try {
    c.seed = j.at("seed").get<std::uint64_t>();
    c.output_dir = j.at("output_dir").get<std::string>();
    c.dataset = data::dataset_config_from_json(j.at("dataset"));
    const json& t = j.at("train");
    c.train.max_iterations = t.at("max_iterations");
    c.train.burn_in_iterations = t.at("burn_in_iterations");
    c.train.labeled_batch = t.at("labeled_batch");
    c.train.unlabeled_batch = t.at("unlabeled_batch");
    c.train.labeled_fraction = t.at("labeled_fraction");
    c.train.use_flow = t.at("use_flow");
    c.train.eval_every = t.at("eval_every");
    c.train.checkpoint_every = t.at("checkpoint_every");
    c.train.seed = c.seed;
    c.train.adam = j.at("optimizer").get<optim::AdamConfig>();
    c.train.loss = losses::LossConfig::from_json(j.at("loss"));
    c.train.augment = j.at("augment").get<augment::AugmentConfig>();
    c.train.flow = j.at("flow").get<flow::FarnebackParams>();
    c.train.model = model::ModelConfig::from_json(j.at("model"));
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  try {
    c.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return c;
}

RunConfig load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return from_json(j);
}

}  // namespace ufe::config
