#include "ufe/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "ufe/ops.hpp"

namespace ufe::losses {

namespace {

template <class T>
void check_pair(const BasicTensor<T>& p, const BasicTensor<T>& y, const char* what) {
  if (p.shape() != y.shape()) {
    throw ShapeError(std::string(what) + ": prediction " + shape_str(p.shape()) +
                     " does not match target " + shape_str(y.shape()));
  }
}

const char* sup_name(SupKind k) {
  switch (k) {
    case SupKind::kBce: return "bce";
    case SupKind::kDice: return "dice";
    case SupKind::kBceDice: return "bce+dice";
  }
  return "?";
}

}  // namespace

void LossConfig::validate() const {
  if (!(lambda >= 0) || !std::isfinite(lambda)) throw std::invalid_argument("loss.lambda must be >= 0");
  if (!(pseudo_threshold > 0 && pseudo_threshold < 1)) {
    throw std::invalid_argument("loss.pseudo_threshold must lie in (0,1)");
  }
  if (!(confidence_floor >= 0 && confidence_floor < 1)) {
    throw std::invalid_argument("loss.confidence_floor must lie in [0,1)");
  }
}

nlohmann::json LossConfig::to_json() const {
  return {{"sup_kind", sup_name(sup_kind)},
          {"lambda", lambda},
          {"pseudo_threshold", pseudo_threshold},
          {"confidence_floor", confidence_floor},
          {"pseudo_kind", pseudo_kind == PseudoKind::kHard ? "hard" : "soft"}};
}

LossConfig LossConfig::from_json(const nlohmann::json& j) {
  LossConfig c;
  for (const auto& [key, value] : j.items()) {
    if (key == "sup_kind") {
      const auto s = value.get<std::string>();
      if (s == "bce") c.sup_kind = SupKind::kBce;
      else if (s == "dice") c.sup_kind = SupKind::kDice;
      else if (s == "bce+dice") c.sup_kind = SupKind::kBceDice;
      else throw std::invalid_argument("loss.sup_kind must be bce, dice or bce+dice, got '" + s + "'");
    } else if (key == "lambda") {
      c.lambda = value.get<double>();
    } else if (key == "pseudo_threshold") {
      c.pseudo_threshold = value.get<double>();
    } else if (key == "confidence_floor") {
      c.confidence_floor = value.get<double>();
    } else if (key == "pseudo_kind") {
      const auto s = value.get<std::string>();
      if (s == "hard") c.pseudo_kind = PseudoKind::kHard;
      else if (s == "soft") c.pseudo_kind = PseudoKind::kSoft;
      else throw std::invalid_argument("loss.pseudo_kind must be hard or soft, got '" + s + "'");
    } else {
      throw std::invalid_argument("unknown loss config key '" + key + "'");
    }
  }
  c.validate();
  return c;
}

template <class T>
BasicTensor<T> bce_loss(const BasicTensor<T>& p, const BasicTensor<T>& y,
                        const std::optional<BasicTensor<T>>& valid) {
  check_pair(p, y, "bce_loss");
  if (valid) check_pair(p, *valid, "bce_loss valid mask");
  const T lo = static_cast<T>(kProbClamp), hi = T(1) - static_cast<T>(kProbClamp);
  const auto& pv = p.values();
  const auto& yv = y.values();
  std::vector<T> w(pv.size(), T(1));
  if (valid) {
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = valid->values()[i] > T(0.5) ? T(1) : T(0);
  }
  T count = 0;
  for (T x : w) count += x;
  T total = 0;
  for (std::size_t i = 0; i < pv.size(); ++i) {
    if (w[i] == T(0)) continue;
    const T q = std::clamp(pv[i], lo, hi);
    total -= yv[i] * std::log(q) + (T(1) - yv[i]) * std::log(T(1) - q);
  }
  const T scale = count > 0 ? T(1) / count : T(0);
  auto backward_fn = [y, w = std::move(w), scale, lo, hi](Node<T>& self) {
    auto& in = *self.parents[0];
    if (!in.requires_grad) return;
    in.ensure_grad();
    const T g = self.grad[0] * scale;
    const auto& yv = y.values();
    for (std::size_t i = 0; i < in.data.size(); ++i) {
      const T q = in.data[i];
      if (w[i] == T(0) || q < lo || q > hi) continue;
      in.grad[i] += g * ((T(1) - yv[i]) / (T(1) - q) - yv[i] / q);
    }
  };
  return make_op_result<T>({1}, {total * scale}, {p}, std::move(backward_fn), "bce_loss");
}

template <class T>
BasicTensor<T> dice_loss(const BasicTensor<T>& p, const BasicTensor<T>& y) {
  check_pair(p, y, "dice_loss");
  const auto& pv = p.values();
  const auto& yv = y.values();
  T spy = 0, sp = 0, sy = 0;
  for (std::size_t i = 0; i < pv.size(); ++i) {
    spy += pv[i] * yv[i];
    sp += pv[i];
    sy += yv[i];
  }
  const T denom = sp + sy + static_cast<T>(kDiceEps);
  auto backward_fn = [y, spy, denom](Node<T>& self) {
    auto& in = *self.parents[0];
    if (!in.requires_grad) return;
    in.ensure_grad();
    const auto& yv = y.values();
    const T g = self.grad[0];
    for (std::size_t i = 0; i < in.data.size(); ++i) {
      in.grad[i] += g * (T(-2) * (yv[i] * denom - spy) / (denom * denom));
    }
  };
  return make_op_result<T>({1}, {T(1) - T(2) * spy / denom}, {p}, std::move(backward_fn),
                           "dice_loss");
}

template <class T>
BasicTensor<T> sup_loss(const BasicTensor<T>& p, const BasicTensor<T>& y, SupKind kind) {
  switch (kind) {
    case SupKind::kBce: return bce_loss(p, y);
    case SupKind::kDice: return dice_loss(p, y);
    case SupKind::kBceDice: return ops::add(bce_loss(p, y), dice_loss(p, y));
  }
  throw std::invalid_argument("unknown supervised loss kind");
}

PseudoLabel make_pseudo_label(const Tensor& p_w, const LossConfig& config) {
  const auto& pv = p_w.values();
  std::vector<float> target(pv.size()), valid(pv.size());
  for (std::size_t i = 0; i < pv.size(); ++i) {
    target[i] = config.pseudo_kind == PseudoKind::kSoft
                    ? pv[i]
                    : (pv[i] >= config.pseudo_threshold ? 1.0f : 0.0f);
    valid[i] = std::max(pv[i], 1.0f - pv[i]) >= config.confidence_floor ? 1.0f : 0.0f;
  }
  return {Tensor::from(p_w.shape(), std::move(target)), Tensor::from(p_w.shape(), std::move(valid))};
}

Tensor unsup_loss(const std::vector<Tensor>& p_s, const std::vector<PseudoLabel>& pseudo) {
  if (p_s.size() != pseudo.size()) {
    throw std::invalid_argument("unsup_loss: " + std::to_string(p_s.size()) + " predictions vs " +
                                std::to_string(pseudo.size()) + " pseudo-labels");
  }
  if (p_s.empty()) return Tensor::scalar(0.0f);
  std::vector<Tensor> terms;
  for (std::size_t b = 0; b < p_s.size(); ++b) {
    terms.push_back(bce_loss(p_s[b], pseudo[b].target, std::optional<Tensor>(pseudo[b].valid)));
  }
  return batch_mean(terms);
}

template <class T>
BasicTensor<T> total_loss(const BasicTensor<T>& sup, const BasicTensor<T>& unsup, T lambda) {
  return ops::add(sup, ops::scale(unsup, lambda));
}

template <class T>
BasicTensor<T> batch_mean(const std::vector<BasicTensor<T>>& terms) {
  if (terms.empty()) throw std::invalid_argument("batch_mean of no terms");
  std::vector<BasicTensor<T>> flat;
  for (const auto& t : terms) {
    if (t.numel() != 1) throw ShapeError("batch_mean expects scalar terms, got " + shape_str(t.shape()));
    flat.push_back(ops::reshape(t, {1, 1, 1}));
  }
  return ops::mean(ops::concat_channels(flat));
}

#define UFE_INSTANTIATE_LOSSES(T)                                                              \
  template BasicTensor<T> bce_loss(const BasicTensor<T>&, const BasicTensor<T>&,               \
                                   const std::optional<BasicTensor<T>>&);                      \
  template BasicTensor<T> dice_loss(const BasicTensor<T>&, const BasicTensor<T>&);             \
  template BasicTensor<T> sup_loss(const BasicTensor<T>&, const BasicTensor<T>&, SupKind);     \
  template BasicTensor<T> total_loss(const BasicTensor<T>&, const BasicTensor<T>&, T);         \
  template BasicTensor<T> batch_mean(const std::vector<BasicTensor<T>>&);

UFE_INSTANTIATE_LOSSES(float)
UFE_INSTANTIATE_LOSSES(double)

}  // namespace ufe::losses
