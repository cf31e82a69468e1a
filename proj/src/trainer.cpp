#include "ufe/trainer.hpp"

#include <chrono>
#include <cmath>
#include <sstream>
#include <thread>

#include "ufe/ops.hpp"

namespace ufe::train {

std::string to_string(Mode mode) {
  switch (mode) {
    case Mode::kFull: return "full";
    case Mode::kNfOnly: return "nf-only";
    case Mode::kDfOnly: return "df-only";
    case Mode::kBaseline: return "baseline";
  }
  return "?";
}

Mode mode_from_string(const std::string& name) {
  if (name == "full") return Mode::kFull;
  if (name == "nf-only") return Mode::kNfOnly;
  if (name == "df-only") return Mode::kDfOnly;
  if (name == "baseline") return Mode::kBaseline;
  throw std::invalid_argument("unknown mode '" + name + "' (valid: full, nf-only, df-only, baseline)");
}

void TrainConfig::validate() const {
  if (max_iterations < 0) throw std::invalid_argument("train.max_iterations must be >= 0");
  if (burn_in_iterations < 0 || burn_in_iterations > max_iterations) {
    throw std::invalid_argument("train.burn_in_iterations must lie in [0, max_iterations]");
  }
  if (labeled_batch < 1) throw std::invalid_argument("train.labeled_batch must be >= 1");
  if (unlabeled_batch < 0) throw std::invalid_argument("train.unlabeled_batch must be >= 0");
  if (!(labeled_fraction > 0 && labeled_fraction <= 1)) {
    throw std::invalid_argument("train.labeled_fraction must lie in (0,1]");
  }
  if (eval_every < 1) throw std::invalid_argument("train.eval_every must be >= 1");
  if (checkpoint_every < 0) throw std::invalid_argument("train.checkpoint_every must be >= 0");
  adam.validate();
  loss.validate();
  augment.validate();
  flow.validate();
  model.validate();
}

TrainConfig apply_mode(TrainConfig config, Mode mode) {
  if (mode == Mode::kNfOnly || mode == Mode::kBaseline) config.unlabeled_batch = 0;
  if (mode == Mode::kDfOnly || mode == Mode::kBaseline) config.use_flow = false;
  return config;
}

FlowCache compute_flow_cache(const data::Dataset& dataset, const flow::FarnebackParams& params,
                             int threads) {
  FlowCache cache(dataset.clips.size());
  auto work = [&](std::size_t begin, std::size_t stride) {
    for (std::size_t c = begin; c < dataset.clips.size(); c += stride) {
      const auto& clip = dataset.clips[c];
      for (std::size_t t = 0; t < clip.frames.size(); ++t) {
        cache[c].push_back(
            flow::farneback_flow(clip.frames[t], clip.neighbor_frames[t], params).to_tensor());
      }
    }
  };
  const std::size_t n = static_cast<std::size_t>(std::max(1, threads));
  if (n == 1) {
    work(0, 1);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t i = 0; i < n; ++i) pool.emplace_back(work, i, n);
    for (auto& th : pool) th.join();
  }
  return cache;
}

nlohmann::json LogRecord::to_json() const {
  nlohmann::json j{{"iteration", iteration}, {"l_sup", l_sup},   {"l_unsup", l_unsup},
                   {"l_total", l_total},     {"miou", miou},     {"fscore", fscore},
                   {"wall_ms", wall_ms}};
  if (final) j["final"] = true;
  return j;
}

Trainer::Trainer(TrainConfig config, const data::Dataset& dataset, const FlowCache& flows)
    : config_(std::move(config)), dataset_(dataset), flows_(flows) {
  config_.validate();
  if (flows_.size() != dataset_.clips.size()) {
    throw std::invalid_argument("flow cache covers " + std::to_string(flows_.size()) + " clips, dataset has " +
                                std::to_string(dataset_.clips.size()));
  }
  if (config_.model.audio_dim != dataset_.config.audio_dim) {
    throw std::invalid_argument("model.audio_dim " + std::to_string(config_.model.audio_dim) +
                                " does not match dataset audio_dim " +
                                std::to_string(dataset_.config.audio_dim));
  }
  pool_ = data::make_training_pool(dataset_, config_.labeled_fraction);
  if (pool_.labeled.empty()) throw std::invalid_argument("no labeled training frames");
  if (config_.unlabeled_batch > 0 && config_.burn_in_iterations < config_.max_iterations &&
      pool_.distant.empty()) {
    throw std::invalid_argument(
        "train.unlabeled_batch > 0 but the dataset has no unlabeled distant frames (need frames >= 3)");
  }
}

TrainState Trainer::init_state() const {
  TrainState s;
  s.model = model::Model(config_.model, config_.seed);
  s.adam = optim::Adam(config_.adam, s.model);
  s.rng.seed(config_.seed ^ 0x7f4a7c15ULL);
  return s;
}

data::TrainingBatch Trainer::sample(TrainState& state, bool joint) const {
  return data::sample_training_batch(dataset_, pool_, config_.labeled_batch,
                                     joint ? config_.unlabeled_batch : 0, state.rng);
}

Tensor Trainer::flow_input(int clip, int frame) const {
  const Tensor& f = flows_.at(clip).at(frame);
  return config_.use_flow ? f : Tensor::zeros(f.shape());
}

augment::View Trainer::labeled_view(const data::LabeledItem& item) const {
  return {item.image, flow_input(item.ref.clip, item.ref.frame), item.mask};
}

void Trainer::check_finite(double loss, const data::TrainingBatch& batch,
                           const TrainState& state) const {
  if (std::isfinite(loss)) return;
  std::ostringstream msg;
  msg << "non-finite loss at iteration " << state.iteration << "; labeled items:";
  for (const auto& it : batch.labeled) msg << ' ' << dataset_.clips[it.ref.clip].id << '#' << it.ref.frame;
  msg << "; unlabeled items:";
  for (const auto& it : batch.unlabeled) msg << ' ' << dataset_.clips[it.ref.clip].id << '#' << it.ref.frame;
  throw TrainingAborted(msg.str());
}

namespace {

Tensor supervised_term(const model::Model& model, const TrainConfig& cfg,
                       const std::vector<augment::View>& views, const std::vector<Tensor>& audio) {
  std::vector<Tensor> terms;
  for (std::size_t i = 0; i < views.size(); ++i) {
    auto p = model.forward(views[i].image, views[i].flow, audio[i]);
    terms.push_back(losses::sup_loss(p, *views[i].mask, cfg.loss.sup_kind));
  }
  return losses::batch_mean(terms);
}

}  // namespace

StepStats Trainer::compute_burn_in_gradients(TrainState& state,
                                             const data::TrainingBatch& batch) const {
  std::vector<augment::View> views;
  std::vector<Tensor> audio;
  for (const auto& item : batch.labeled) {
    views.push_back(augment::weak_augment(labeled_view(item), config_.augment, state.rng).first);
    audio.push_back(item.audio);
  }
  state.model.zero_grad();
  Tensor sup = supervised_term(state.model, config_, views, audio);
  const double l = sup.item();
  check_finite(l, batch, state);
  backward(sup);
  return {l, 0.0, l};
}

StepStats Trainer::compute_joint_gradients(TrainState& state, const data::TrainingBatch& batch,
                                           const model::Model* teacher) const {
  const model::Model& t_model = teacher ? *teacher : state.model;
  std::vector<augment::View> views;
  std::vector<Tensor> audio;
  for (const auto& item : batch.labeled) {
    views.push_back(augment::weak_augment(labeled_view(item), config_.augment, state.rng).first);
    audio.push_back(item.audio);
  }

  // Teacher: weak views, no graph.
  const std::size_t bu = batch.unlabeled.size();
  std::vector<augment::View> weak(bu);
  std::vector<losses::PseudoLabel> pseudo(bu);
  for (std::size_t i = 0; i < bu; ++i) {
    const auto& item = batch.unlabeled[i];
    augment::View in{item.image, flow_input(item.ref.clip, item.ref.frame), std::nullopt};
    weak[i] = augment::weak_augment(in, config_.augment, state.rng).first;
    NoGradGuard no_grad;
    pseudo[i] = losses::make_pseudo_label(t_model.forward(weak[i].image, weak[i].flow, item.audio),
                                          config_.loss);
  }

  state.model.zero_grad();
  Tensor sup = supervised_term(state.model, config_, views, audio);

  // Student: strong views of the same geometry, cutmix partner i+1 mod B_u.
  std::vector<Tensor> p_s;
  std::vector<losses::PseudoLabel> targets;
  for (std::size_t i = 0; i < bu; ++i) {
    const std::size_t j = (i + 1) % bu;
    auto strong = augment::strong_augment(weak[i], pseudo[i].target, weak[j], pseudo[j].target,
                                          config_.augment, state.rng, static_cast<int>(j));
    Tensor valid = augment::mix_labels(strong.record, pseudo[i].valid, pseudo[j].valid);
    p_s.push_back(state.model.forward(strong.view.image, strong.view.flow, batch.unlabeled[i].audio));
    targets.push_back({strong.label, valid});
  }
  Tensor unsup = losses::unsup_loss(p_s, targets);
  ++state.counters.unsup_computations;
  state.counters.unlabeled_items += static_cast<std::int64_t>(bu);

  ++state.counters.lambda_reads;
  const float lambda = static_cast<float>(config_.loss.lambda);
  Tensor total = losses::total_loss(sup, unsup, lambda);
  const double l = total.item();
  check_finite(l, batch, state);
  backward(total);
  return {sup.item(), unsup.item(), l};
}

StepStats Trainer::burn_in_step(TrainState& state, const data::TrainingBatch& batch) const {
  if (state.iteration >= config_.burn_in_iterations) {
    throw std::logic_error("burn_in_step called at iteration " + std::to_string(state.iteration) +
                           " >= burn-in length " + std::to_string(config_.burn_in_iterations));
  }
  auto stats = compute_burn_in_gradients(state, batch);
  state.adam.step(state.model);
  ++state.iteration;
  return stats;
}

StepStats Trainer::joint_step(TrainState& state, const data::TrainingBatch& batch) const {
  if (state.iteration < config_.burn_in_iterations) {
    throw std::logic_error("joint_step called during burn-in (iteration " +
                           std::to_string(state.iteration) + ")");
  }
  auto stats = compute_joint_gradients(state, batch);
  state.adam.step(state.model);
  ++state.iteration;
  return stats;
}

StepStats Trainer::step(TrainState& state) const {
  const bool joint = state.iteration >= config_.burn_in_iterations;
  auto batch = sample(state, joint);
  return joint ? joint_step(state, batch) : burn_in_step(state, batch);
}

Tensor Trainer::predict(const model::Model& model, int clip, int frame) const {
  NoGradGuard no_grad;
  const auto& c = dataset_.clips.at(clip);
  return model.forward(c.frames.at(frame), flow_input(clip, frame), c.audio.at(frame));
}

metrics::EvalReport Trainer::evaluate(const model::Model& model, data::Split split) const {
  return metrics::evaluate(dataset_, split,
                           [&](int clip, int frame) { return predict(model, clip, frame); });
}

std::vector<LogRecord> Trainer::train(TrainState& state, const Hooks& hooks) const {
  std::vector<LogRecord> log;
  auto start = std::chrono::steady_clock::now();
  auto emit = [&](bool final) {
    LogRecord r;
    r.iteration = state.iteration;
    if (state.window_steps > 0) {
      r.l_sup = state.window_sup / state.window_steps;
      r.l_unsup = state.window_unsup / state.window_steps;
      r.l_total = state.window_total / state.window_steps;
    }
    const auto report = evaluate(state.model, data::Split::kVal);
    r.miou = report.miou;
    r.fscore = report.fscore;
    r.final = final;
    r.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    state.window_sup = state.window_unsup = state.window_total = 0;
    state.window_steps = 0;
    log.push_back(r);
  };

  while (state.iteration < config_.max_iterations) {
    const auto stats = step(state);
    state.window_sup += stats.l_sup;
    state.window_unsup += stats.l_unsup;
    state.window_total += stats.l_total;
    ++state.window_steps;
    if (state.iteration % config_.eval_every == 0) {
      emit(state.iteration == config_.max_iterations);
      if (hooks.on_log) hooks.on_log(log.back());
    }
    if (hooks.on_checkpoint && config_.checkpoint_every > 0 &&
        state.iteration % config_.checkpoint_every == 0 && state.iteration < config_.max_iterations) {
      hooks.on_checkpoint(state);
    }
  }
  if (log.empty() || log.back().iteration != state.iteration) {
    emit(true);
    if (hooks.on_log) hooks.on_log(log.back());
  }
  if (hooks.on_checkpoint) hooks.on_checkpoint(state);
  return log;
}

ckpt::Checkpoint state_to_checkpoint(const TrainState& state, const TrainConfig& config) {
  ckpt::Checkpoint c;
  ckpt::put_model(c, state.model);
  const auto& params = state.model.params();
  for (std::size_t k = 0; k < params.size(); ++k) {
    c.arrays.push_back({"adam.m/" + params[k].name, params[k].value.shape(), state.adam.first_moments()[k]});
    c.arrays.push_back({"adam.v/" + params[k].name, params[k].value.shape(), state.adam.second_moments()[k]});
  }
  std::ostringstream rng;
  rng << state.rng;
  c.meta["train"] = {{"iteration", state.iteration},
                     {"adam_steps", state.adam.steps()},
                     {"rng", rng.str()},
                     {"seed", config.seed},
                     {"lambda_reads", state.counters.lambda_reads},
                     {"unsup_computations", state.counters.unsup_computations},
                     {"unlabeled_items", state.counters.unlabeled_items},
                     {"window_sup", state.window_sup},
                     {"window_unsup", state.window_unsup},
                     {"window_total", state.window_total},
                     {"window_steps", state.window_steps}};
  return c;
}

TrainState state_from_checkpoint(const ckpt::Checkpoint& checkpoint, const TrainConfig& config) {
  TrainState s;
  s.model = ckpt::get_model(checkpoint);
  if (s.model.config().hash() != config.model.hash()) {
    throw ckpt::CheckpointError("checkpoint model config hash " + s.model.config().hash() +
                                " differs from the run config (" + config.model.hash() + ")");
  }
  s.adam = optim::Adam(config.adam, s.model);
  if (checkpoint.meta.contains("train")) {
    const auto& t = checkpoint.meta.at("train");
    const auto& params = s.model.params();
    for (std::size_t k = 0; k < params.size(); ++k) {
      s.adam.first_moments()[k] = checkpoint.get("adam.m/" + params[k].name).values;
      s.adam.second_moments()[k] = checkpoint.get("adam.v/" + params[k].name).values;
    }
    s.adam.set_steps(t.at("adam_steps").get<std::int64_t>());
    s.iteration = t.at("iteration").get<std::int64_t>();
    std::istringstream rng(t.at("rng").get<std::string>());
    rng >> s.rng;
    if (!rng) throw ckpt::CheckpointError("checkpoint rng state is unreadable");
    s.counters.lambda_reads = t.at("lambda_reads");
    s.counters.unsup_computations = t.at("unsup_computations");
    s.counters.unlabeled_items = t.at("unlabeled_items");
    s.window_sup = t.at("window_sup");
    s.window_unsup = t.at("window_unsup");
    s.window_total = t.at("window_total");
    s.window_steps = t.at("window_steps");
  } else {
    s.rng.seed(config.seed ^ 0x7f4a7c15ULL);
  }
  return s;
}

}  // namespace ufe::train
