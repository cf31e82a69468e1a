#pragma once

// Burn-in supervised training followed by joint supervised + weak-to-strong
// consistency training. The teacher is the student's own weights evaluated
// without gradient recording.

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "ufe/augment.hpp"
#include "ufe/checkpoint.hpp"
#include "ufe/dataset.hpp"
#include "ufe/losses.hpp"
#include "ufe/metrics.hpp"
#include "ufe/model.hpp"
#include "ufe/optical_flow.hpp"
#include "ufe/optimizer.hpp"

namespace ufe::train {

enum class Mode { kFull, kNfOnly, kDfOnly, kBaseline };
std::string to_string(Mode mode);
// Throws std::invalid_argument listing the valid modes.
Mode mode_from_string(const std::string& name);

struct TrainConfig {
  int max_iterations = 6000;
  int burn_in_iterations = 500;
  int labeled_batch = 8;
  int unlabeled_batch = 8;
  double labeled_fraction = 0.1;
  bool use_flow = true;  // false feeds zero flow
  std::uint64_t seed = 0;
  int eval_every = 500;
  int checkpoint_every = 1000;  // 0 disables periodic checkpoints
  optim::AdamConfig adam;
  losses::LossConfig loss;
  augment::AugmentConfig augment;
  flow::FarnebackParams flow;
  model::ModelConfig model;

  void validate() const;
};

// nf-only drops unlabeled data, df-only drops the flow input, baseline drops both.
TrainConfig apply_mode(TrainConfig config, Mode mode);

// Flow from every frame to its raw-rate successor, in pixels, [2,H,W].
using FlowCache = std::vector<std::vector<Tensor>>;
// Parallel over clips with up to `threads` workers; result does not depend on `threads`.
FlowCache compute_flow_cache(const data::Dataset& dataset, const flow::FarnebackParams& params,
                             int threads = 1);

struct Counters {
  std::int64_t lambda_reads = 0;
  std::int64_t unsup_computations = 0;
  std::int64_t unlabeled_items = 0;
};

struct TrainState {
  model::Model model;
  optim::Adam adam;
  std::int64_t iteration = 0;
  std::mt19937_64 rng;
  Counters counters;
  // Loss sums since the last log record.
  double window_sup = 0, window_unsup = 0, window_total = 0;
  int window_steps = 0;
};

struct StepStats {
  double l_sup = 0;
  double l_unsup = 0;
  double l_total = 0;
};

struct LogRecord {
  std::int64_t iteration = 0;
  double l_sup = 0, l_unsup = 0, l_total = 0;
  double miou = 0, fscore = 0;
  double wall_ms = 0;
  bool final = false;
  nlohmann::json to_json() const;
};

class TrainingAborted : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Trainer {
 public:
  Trainer(TrainConfig config, const data::Dataset& dataset, const FlowCache& flows);

  const TrainConfig& config() const { return config_; }
  const data::TrainingPool& pool() const { return pool_; }

  TrainState init_state() const;

  data::TrainingBatch sample(TrainState& state, bool joint) const;

  // Gradients of L_sup (burn-in) or L_total (joint) left on the model's params.
  // `teacher` defaults to the state's own model.
  StepStats compute_burn_in_gradients(TrainState& state, const data::TrainingBatch& batch) const;
  StepStats compute_joint_gradients(TrainState& state, const data::TrainingBatch& batch,
                                    const model::Model* teacher = nullptr) const;

  StepStats burn_in_step(TrainState& state, const data::TrainingBatch& batch) const;
  StepStats joint_step(TrainState& state, const data::TrainingBatch& batch) const;
  // Samples a batch and dispatches on the iteration counter.
  StepStats step(TrainState& state) const;

  metrics::EvalReport evaluate(const model::Model& model, data::Split split) const;
  Tensor predict(const model::Model& model, int clip, int frame) const;

  struct Hooks {
    std::function<void(const LogRecord&)> on_log;
    std::function<void(const TrainState&)> on_checkpoint;
  };
  // Runs until max_iterations; evaluation on the validation split every eval_every steps and at the end.
  std::vector<LogRecord> train(TrainState& state, const Hooks& hooks = {}) const;

 private:
  Tensor flow_input(int clip, int frame) const;
  augment::View labeled_view(const data::LabeledItem& item) const;
  void check_finite(double loss, const data::TrainingBatch& batch, const TrainState& state) const;

  TrainConfig config_;
  const data::Dataset& dataset_;
  const FlowCache& flows_;
  data::TrainingPool pool_;
};

ckpt::Checkpoint state_to_checkpoint(const TrainState& state, const TrainConfig& config);
// Rejects checkpoints whose model config hash differs from `config`.
TrainState state_from_checkpoint(const ckpt::Checkpoint& checkpoint, const TrainConfig& config);

}  // namespace ufe::train
