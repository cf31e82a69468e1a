#pragma once

// Audio-conditioned segmentation network.
//
//   image [3,H,W] -> 4-stage encoder -> F_v1..F_v4 at (H,W)/4../32
//   flow  [2,H,W] -> 3-stage encoder -> F_f1..F_f3 at (H,W)/4../16
//   F_refine_i = F_vi + Upsample(Refine_i(F_fi)), i = 1..3
//   audio [d] -> MLP -> F_a; scales 3 and 4 modulated by (1 + gamma(F_a)), beta(F_a)
//   top-down decoder to (H,W)/4, 1x1 head, x4 bilinear upsample, sigmoid -> p [H,W]

#include <array>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "ufe/tensor.hpp"

namespace ufe::model {

struct ModelConfig {
  std::array<int, 4> image_widths{16, 32, 64, 96};
  std::array<int, 3> flow_widths{8, 16, 32};
  int audio_dim = 16;
  int audio_hidden = 64;
  int audio_embed = 64;

  void validate() const;
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
  // FNV-1a over the canonical JSON dump, as 16 hex digits.
  std::string hash() const;
  bool operator==(const ModelConfig&) const = default;
};

template <class T>
struct Param {
  std::string name;
  BasicTensor<T> value;
};

template <class T>
using Pyramid = std::vector<BasicTensor<T>>;

template <class T>
class BasicModel {
 public:
  BasicModel() = default;
  BasicModel(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }

  Pyramid<T> encode_image(const BasicTensor<T>& image) const;
  // Expects flow already divided by flow::flow_normalizer.
  Pyramid<T> encode_flow(const BasicTensor<T>& flow) const;
  Pyramid<T> refine_fuse(const Pyramid<T>& visual, const Pyramid<T>& flow) const;
  BasicTensor<T> encode_audio(const BasicTensor<T>& audio) const;
  Pyramid<T> fuse_audio(const Pyramid<T>& features, const BasicTensor<T>& audio_embedding) const;
  BasicTensor<T> decode_mask(const Pyramid<T>& features) const;

  // Flow in pixels; normalised internally.
  BasicTensor<T> forward(const BasicTensor<T>& image, const BasicTensor<T>& flow,
                         const BasicTensor<T>& audio) const;

  std::vector<Param<T>>& params() { return params_; }
  const std::vector<Param<T>>& params() const { return params_; }
  const BasicTensor<T>& param(const std::string& name) const;
  BasicTensor<T>& param(const std::string& name);
  std::size_t parameter_count() const;
  void zero_grad();

  template <class U>
  BasicModel<U> cast() const {
    BasicModel<U> out;
    out.init_empty(config_);
    for (const auto& p : params_) out.add_param(p.name, tensor_cast<U>(p.value, true));
    return out;
  }

  // Deep copy with fresh leaf tensors.
  BasicModel clone() const { return cast<T>(); }

  void init_empty(const ModelConfig& config) { config_ = config; }
  void add_param(const std::string& name, BasicTensor<T> value);

 private:
  BasicTensor<T> conv(const std::string& prefix, const BasicTensor<T>& x, int stride,
                      int padding) const;

  ModelConfig config_;
  std::vector<Param<T>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

using Model = BasicModel<float>;

}  // namespace ufe::model
