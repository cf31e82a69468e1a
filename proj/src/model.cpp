#include "ufe/model.hpp"

#include <cmath>
#include <cstdio>
#include <random>
#include <stdexcept>

#include "ufe/ops.hpp"
#include "ufe/optical_flow.hpp"

namespace ufe::model {

namespace {

std::string stage(const char* branch, int i, const char* layer) {
  return std::string(branch) + ".s" + std::to_string(i) + "." + layer;
}

}  // namespace

void ModelConfig::validate() const {
  for (int w : image_widths)
    if (w < 1) throw std::invalid_argument("model.image_widths must be positive");
  for (int w : flow_widths)
    if (w < 1) throw std::invalid_argument("model.flow_widths must be positive");
  if (audio_dim < 1 || audio_hidden < 1 || audio_embed < 1) {
    throw std::invalid_argument("model audio sizes must be positive");
  }
}

nlohmann::json ModelConfig::to_json() const {
  return {{"image_widths", image_widths},
          {"flow_widths", flow_widths},
          {"audio_dim", audio_dim},
          {"audio_hidden", audio_hidden},
          {"audio_embed", audio_embed}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  for (const auto& [key, value] : j.items()) {
    if (key == "image_widths") c.image_widths = value.get<std::array<int, 4>>();
    else if (key == "flow_widths") c.flow_widths = value.get<std::array<int, 3>>();
    else if (key == "audio_dim") c.audio_dim = value.get<int>();
    else if (key == "audio_hidden") c.audio_hidden = value.get<int>();
    else if (key == "audio_embed") c.audio_embed = value.get<int>();
    else throw std::invalid_argument("unknown model config key '" + key + "'");
  }
  c.validate();
  return c;
}

std::string ModelConfig::hash() const {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : to_json().dump()) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

template <class T>
BasicModel<T>::BasicModel(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config.validate();
  std::mt19937_64 rng(seed);
  auto uniform_param = [&](const std::string& name, Shape shape, int fan_in) {
    const double bound = std::sqrt(1.0 / fan_in);
    std::uniform_real_distribution<double> u(-bound, bound);
    std::vector<T> v(shape_numel(shape));
    for (T& x : v) x = static_cast<T>(u(rng));
    add_param(name, BasicTensor<T>::from(shape, std::move(v), true));
  };
  auto zero_param = [&](const std::string& name, Shape shape) {
    add_param(name, BasicTensor<T>::zeros(shape, true));
  };
  auto conv_layer = [&](const std::string& name, int cin, int cout, int k, bool zero) {
    if (zero) zero_param(name + ".w", {cout, cin, k, k});
    else uniform_param(name + ".w", {cout, cin, k, k}, cin * k * k);
    zero_param(name + ".b", {cout});
  };
  auto linear_layer = [&](const std::string& name, int in, int out, bool zero) {
    if (zero) zero_param(name + ".w", {out, in});
    else uniform_param(name + ".w", {out, in}, in);
    zero_param(name + ".b", {out});
  };

  const auto& iw = config.image_widths;
  const auto& fw = config.flow_widths;
  for (int i = 0; i < 4; ++i) {
    conv_layer(stage("img", i + 1, "c1"), i == 0 ? 3 : iw[i - 1], iw[i], 3, false);
    conv_layer(stage("img", i + 1, "c2"), iw[i], iw[i], 3, false);
  }
  for (int i = 0; i < 3; ++i) {
    conv_layer(stage("flow", i + 1, "c1"), i == 0 ? 2 : fw[i - 1], fw[i], 3, false);
    conv_layer(stage("flow", i + 1, "c2"), fw[i], fw[i], 3, false);
  }
  for (int i = 0; i < 3; ++i) {
    conv_layer(stage("refine", i + 1, "c1"), fw[i], iw[i], 3, false);
    conv_layer(stage("refine", i + 1, "c2"), iw[i], iw[i], 3, true);
  }
  linear_layer("audio.l1", config.audio_dim, config.audio_hidden, false);
  linear_layer("audio.l2", config.audio_hidden, config.audio_embed, false);
  for (int i : {3, 4}) {
    linear_layer(stage("fuse", i, "gamma"), config.audio_embed, iw[i - 1], true);
    linear_layer(stage("fuse", i, "beta"), config.audio_embed, iw[i - 1], true);
  }
  conv_layer("dec.s3", iw[3] + iw[2], iw[2], 3, false);
  conv_layer("dec.s2", iw[2] + iw[1], iw[1], 3, false);
  conv_layer("dec.s1", iw[1] + iw[0], iw[0], 3, false);
  conv_layer("dec.head", iw[0], 1, 1, false);
}

template <class T>
void BasicModel<T>::add_param(const std::string& name, BasicTensor<T> value) {
  if (!index_.emplace(name, params_.size()).second) {
    throw std::invalid_argument("duplicate parameter name " + name);
  }
  params_.push_back({name, std::move(value)});
}

template <class T>
const BasicTensor<T>& BasicModel<T>::param(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("no parameter named " + name);
  return params_[it->second].value;
}

template <class T>
BasicTensor<T>& BasicModel<T>::param(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("no parameter named " + name);
  return params_[it->second].value;
}

template <class T>
std::size_t BasicModel<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.numel();
  return n;
}

template <class T>
void BasicModel<T>::zero_grad() {
  for (auto& p : params_) p.value.zero_grad();
}

template <class T>
BasicTensor<T> BasicModel<T>::conv(const std::string& prefix, const BasicTensor<T>& x, int stride,
                                   int padding) const {
  return ops::conv2d(x, param(prefix + ".w"), param(prefix + ".b"), stride, padding);
}

template <class T>
Pyramid<T> BasicModel<T>::encode_image(const BasicTensor<T>& image) const {
  if (image.rank() != 3 || image.dim(0) != 3) {
    throw ShapeError("encode_image expects [3,H,W], got " + shape_str(image.shape()));
  }
  if (image.dim(1) % 32 != 0 || image.dim(2) % 32 != 0) {
    throw ShapeError("encode_image needs H and W divisible by 32, got " + shape_str(image.shape()));
  }
  Pyramid<T> out;
  BasicTensor<T> x = image;
  for (int i = 1; i <= 4; ++i) {
    x = ops::relu(conv(stage("img", i, "c1"), x, 2, 1));
    x = ops::relu(conv(stage("img", i, "c2"), x, i == 1 ? 2 : 1, 1));
    out.push_back(x);
  }
  return out;
}

template <class T>
Pyramid<T> BasicModel<T>::encode_flow(const BasicTensor<T>& flow) const {
  if (flow.rank() != 3 || flow.dim(0) != 2) {
    throw ShapeError("encode_flow expects [2,H,W], got " + shape_str(flow.shape()));
  }
  if (flow.dim(1) % 32 != 0 || flow.dim(2) % 32 != 0) {
    throw ShapeError("encode_flow needs H and W divisible by 32, got " + shape_str(flow.shape()));
  }
  Pyramid<T> out;
  BasicTensor<T> x = flow;
  for (int i = 1; i <= 3; ++i) {
    x = ops::relu(conv(stage("flow", i, "c1"), x, 2, 1));
    x = ops::relu(conv(stage("flow", i, "c2"), x, i == 1 ? 2 : 1, 1));
    out.push_back(x);
  }
  return out;
}

template <class T>
Pyramid<T> BasicModel<T>::refine_fuse(const Pyramid<T>& visual, const Pyramid<T>& flow) const {
  if (visual.size() != 4 || flow.size() != 3) {
    throw ShapeError("refine_fuse expects 4 visual and 3 flow scales");
  }
  Pyramid<T> out = visual;
  for (int i = 0; i < 3; ++i) {
    BasicTensor<T> r = ops::relu(conv(stage("refine", i + 1, "c1"), flow[i], 1, 1));
    r = conv(stage("refine", i + 1, "c2"), r, 1, 1);
    const int factor = visual[i].dim(1) / r.dim(1);
    if (factor < 1 || r.dim(1) * factor != visual[i].dim(1) || r.dim(2) * factor != visual[i].dim(2) ||
        r.dim(0) != visual[i].dim(0)) {
      throw ShapeError("refine branch " + shape_str(r.shape()) + " cannot match visual scale " +
                       shape_str(visual[i].shape()));
    }
    out[i] = ops::add(visual[i], factor == 1 ? r : ops::upsample_bilinear(r, factor));
  }
  return out;
}

template <class T>
BasicTensor<T> BasicModel<T>::encode_audio(const BasicTensor<T>& audio) const {
  if (audio.shape() != Shape{config_.audio_dim}) {
    throw ShapeError("encode_audio expects [" + std::to_string(config_.audio_dim) + "], got " +
                     shape_str(audio.shape()));
  }
  auto h = ops::relu(ops::linear(audio, param("audio.l1.w"), param("audio.l1.b")));
  return ops::linear(h, param("audio.l2.w"), param("audio.l2.b"));
}

template <class T>
Pyramid<T> BasicModel<T>::fuse_audio(const Pyramid<T>& features,
                                     const BasicTensor<T>& audio_embedding) const {
  if (features.size() != 4) throw ShapeError("fuse_audio expects 4 scales");
  Pyramid<T> out = features;
  for (int i : {3, 4}) {
    auto gamma = ops::linear(audio_embedding, param(stage("fuse", i, "gamma") + ".w"),
                             param(stage("fuse", i, "gamma") + ".b"));
    auto beta = ops::linear(audio_embedding, param(stage("fuse", i, "beta") + ".w"),
                            param(stage("fuse", i, "beta") + ".b"));
    out[i - 1] = ops::modulate(features[i - 1], gamma, beta);
  }
  return out;
}

template <class T>
BasicTensor<T> BasicModel<T>::decode_mask(const Pyramid<T>& f) const {
  if (f.size() != 4) throw ShapeError("decode_mask expects 4 scales");
  BasicTensor<T> x = f[3];
  for (int i = 2; i >= 0; --i) {
    const int factor = f[i].dim(1) / x.dim(1);
    x = ops::concat_channels<T>({ops::upsample_bilinear(x, factor), f[i]});
    x = ops::relu(conv("dec.s" + std::to_string(i + 1), x, 1, 1));
  }
  // The 1x1 head commutes with bilinear upsampling, so it runs at the coarse scale.
  x = ops::upsample_bilinear(conv("dec.head", x, 1, 0), 4);
  x = ops::sigmoid(x);
  return ops::reshape(x, {x.dim(1), x.dim(2)});
}

template <class T>
BasicTensor<T> BasicModel<T>::forward(const BasicTensor<T>& image, const BasicTensor<T>& flow,
                                      const BasicTensor<T>& audio) const {
  if (flow.rank() != 3 || image.rank() != 3 || flow.dim(1) != image.dim(1) ||
      flow.dim(2) != image.dim(2)) {
    throw ShapeError("forward: flow " + shape_str(flow.shape()) + " does not match image " +
                     shape_str(image.shape()));
  }
  const T norm = static_cast<T>(flow::flow_normalizer(image.dim(1), image.dim(2)));
  auto visual = encode_image(image);
  auto motion = encode_flow(ops::scale(flow, T(1) / norm));
  auto refined = refine_fuse(visual, motion);
  auto fused = fuse_audio(refined, encode_audio(audio));
  return decode_mask(fused);
}

template class BasicModel<float>;
template class BasicModel<double>;

}  // namespace ufe::model
