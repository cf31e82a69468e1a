#pragma once

#include <cstdint>
#include <vector>

#include "ufe/model.hpp"

namespace ufe::optim {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const;
};

// Adam with bias correction. Parameters without a gradient are skipped but
// still count towards the step index.
class Adam {
 public:
  Adam() = default;
  Adam(const AdamConfig& config, const model::Model& model);

  void step(model::Model& model);

  std::int64_t steps() const { return t_; }
  std::vector<std::vector<float>>& first_moments() { return m_; }
  std::vector<std::vector<float>>& second_moments() { return v_; }
  const std::vector<std::vector<float>>& first_moments() const { return m_; }
  const std::vector<std::vector<float>>& second_moments() const { return v_; }
  void set_steps(std::int64_t t) { t_ = t; }
  const AdamConfig& config() const { return config_; }

 private:
  AdamConfig config_;
  std::int64_t t_ = 0;
  std::vector<std::vector<float>> m_, v_;
};

}  // namespace ufe::optim
