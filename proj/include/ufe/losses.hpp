#pragma once

#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "ufe/tensor.hpp"

namespace ufe::losses {

inline constexpr double kProbClamp = 1e-7;
inline constexpr double kDiceEps = 1e-7;

enum class SupKind { kBce, kDice, kBceDice };
enum class PseudoKind { kHard, kSoft };

struct LossConfig {
  SupKind sup_kind = SupKind::kBce;
  double lambda = 0.5;
  double pseudo_threshold = 0.5;
  double confidence_floor = 0.0;
  PseudoKind pseudo_kind = PseudoKind::kHard;

  void validate() const;
  nlohmann::json to_json() const;
  static LossConfig from_json(const nlohmann::json& j);
};

// -(1/N) sum [y log p + (1-y) log(1-p)] with p clamped to [1e-7, 1-1e-7].
// With `valid`, the sum and N run over valid pixels only; no valid pixels gives 0.
template <class T>
BasicTensor<T> bce_loss(const BasicTensor<T>& p, const BasicTensor<T>& y,
                        const std::optional<BasicTensor<T>>& valid = std::nullopt);

// 1 - 2 sum(p y) / (sum p + sum y + 1e-7)
template <class T>
BasicTensor<T> dice_loss(const BasicTensor<T>& p, const BasicTensor<T>& y);

template <class T>
BasicTensor<T> sup_loss(const BasicTensor<T>& p, const BasicTensor<T>& y, SupKind kind);

struct PseudoLabel {
  Tensor target;  // hard: {0,1}; soft: teacher probabilities
  Tensor valid;   // {0,1}
};

// target = [p >= threshold]; valid = [max(p, 1-p) >= floor]. Never records a graph.
PseudoLabel make_pseudo_label(const Tensor& p_w, const LossConfig& config);

// (1/B) sum_b bce(p_s[b], target[b]) over valid pixels. Empty batch gives 0.
Tensor unsup_loss(const std::vector<Tensor>& p_s, const std::vector<PseudoLabel>& pseudo);

template <class T>
BasicTensor<T> total_loss(const BasicTensor<T>& sup, const BasicTensor<T>& unsup, T lambda);

// Mean of scalar losses, as one graph node per term.
template <class T>
BasicTensor<T> batch_mean(const std::vector<BasicTensor<T>>& terms);

}  // namespace ufe::losses
