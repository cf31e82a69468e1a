#include "ufe/optimizer.hpp"

#include <cmath>
#include <stdexcept>

namespace ufe::optim {

void AdamConfig::validate() const {
  if (!(lr > 0)) throw std::invalid_argument("optimizer.lr must be > 0");
  if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) {
    throw std::invalid_argument("optimizer betas must lie in [0,1)");
  }
  if (!(eps > 0)) throw std::invalid_argument("optimizer.eps must be > 0");
}

Adam::Adam(const AdamConfig& config, const model::Model& model) : config_(config) {
  config.validate();
  for (const auto& p : model.params()) {
    m_.emplace_back(p.value.numel(), 0.0f);
    v_.emplace_back(p.value.numel(), 0.0f);
  }
}

void Adam::step(model::Model& model) {
  auto& params = model.params();
  if (params.size() != m_.size()) throw std::logic_error("optimizer built for a different model");
  ++t_;
  const double c1 = 1 - std::pow(config_.beta1, static_cast<double>(t_));
  const double c2 = 1 - std::pow(config_.beta2, static_cast<double>(t_));
  const float b1 = static_cast<float>(config_.beta1), b2 = static_cast<float>(config_.beta2);
  const float step = static_cast<float>(config_.lr / c1);
  const float inv_c2 = static_cast<float>(1.0 / c2);
  const float eps = static_cast<float>(config_.eps);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = params[k].value;
    if (!p.has_grad()) continue;
    auto g = p.grad();
    auto& w = p.values();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = b1 * m[i] + (1 - b1) * g[i];
      v[i] = b2 * v[i] + (1 - b2) * g[i] * g[i];
      w[i] -= step * m[i] / (std::sqrt(v[i] * inv_c2) + eps);
    }
  }
}

}  // namespace ufe::optim
