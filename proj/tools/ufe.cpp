// ufe: command-line front end (gen-data, train, eval, flow-viz, predict).

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <thread>

#include "CLI11.hpp"
#include "ufe/blob.hpp"
#include "ufe/config.hpp"
#include "ufe/image.hpp"
#include "ufe/ops.hpp"
#include "ufe/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ufe;

namespace {

enum Exit { kOk = 0, kUsage = 2, kValidation = 3, kRuntime = 4 };

struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

int worker_threads() {
  int n = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  if (const char* env = std::getenv("UFE_THREADS")) {
    try {
      const int cap = std::stoi(env);
      if (cap < 1) throw std::invalid_argument("");
      n = std::min(n, cap);
    } catch (const std::exception&) {
      throw ValidationError(std::string("UFE_THREADS must be a positive integer, got '") + env + "'");
    }
  }
  return n;
}

// Exclusive lock next to the target directory; removed on scope exit.
class DirLock {
 public:
  explicit DirLock(const fs::path& dir) {
    const fs::path parent = dir.parent_path().empty() ? fs::path(".") : dir.parent_path();
    fs::create_directories(parent);
    path_ = parent / (dir.filename().string() + ".lock");
    fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd_ < 0) throw ValidationError("output " + dir.string() + " is locked by another command (" + path_.string() + ")");
  }
  ~DirLock() {
    ::close(fd_);
    std::error_code ec;
    fs::remove(path_, ec);
  }
  DirLock(const DirLock&) = delete;
  DirLock& operator=(const DirLock&) = delete;

 private:
  fs::path path_;
  int fd_ = -1;
};

bool non_empty_dir(const fs::path& p) { return fs::exists(p) && !fs::is_empty(p); }

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

Tensor read_png_checked(const std::string& path) {
  try {
    return image::read_png(path);
  } catch (const std::runtime_error& e) {
    throw ValidationError(e.what());
  }
}

config::RunConfig load_config(const std::string& path) {
  return path.empty() ? config::from_json(json::object()) : config::load(path);
}

std::string manifest_checksum(const fs::path& dir) {
  const auto bytes = blob::read_file((dir / "manifest.json").string());
  char buf[16];
  std::snprintf(buf, sizeof buf, "%08x", blob::crc32(bytes));
  return buf;
}

// Frames of one clip on the top row, ground truth below.
void write_preview(const data::Clip& clip, const fs::path& path) {
  const int s = image::height(clip.frames[0]);
  const int t = static_cast<int>(clip.frames.size());
  const int w = s * t;
  std::vector<float> px(3 * 2 * s * w, 0.0f);
  const std::size_t plane = static_cast<std::size_t>(2 * s) * w;
  for (int f = 0; f < t; ++f)
    for (int y = 0; y < s; ++y)
      for (int x = 0; x < s; ++x) {
        for (int c = 0; c < 3; ++c) px[c * plane + y * w + f * s + x] = clip.frames[f][(c * s + y) * s + x];
        const float m = clip.masks[f] ? (*clip.masks[f])[y * s + x] : 0.5f;
        for (int c = 0; c < 3; ++c) px[c * plane + (s + y) * w + f * s + x] = m;
      }
  image::write_png(path.string(), Tensor::from({3, 2 * s, w}, std::move(px)));
}

// ---- gen-data ----------------------------------------------------------------

struct GenArgs {
  std::string config, out;
  std::optional<std::uint64_t> seed;
  bool force = false;
};

int gen_data(const GenArgs& a) {
  auto cfg = load_config(a.config);
  if (a.seed) cfg.dataset.seed = *a.seed;
  cfg.dataset.validate();
  const fs::path out(a.out);
  if (non_empty_dir(out) && !a.force) {
    throw ValidationError("output directory " + out.string() + " is not empty (use --force to overwrite)");
  }
  DirLock lock(out);
  const auto ds = data::generate_dataset(cfg.dataset);

  const fs::path tmp = out.string() + ".tmp";
  fs::remove_all(tmp);
  data::write_dataset(ds, tmp.string());
  fs::create_directories(tmp / "previews");
  for (int i = 0; i < std::min<int>(3, ds.clips.size()); ++i) {
    const auto& clip = ds.clips[i];
    write_preview(clip, tmp / "previews" / (clip.id + ".png"));
  }
  fs::remove_all(out);
  fs::rename(tmp, out);

  for (auto split : {data::Split::kTrain, data::Split::kVal, data::Split::kTest}) {
    std::cout << data::to_string(split) << ": " << ds.clip_indices(split).size() << " clips\n";
  }
  std::cout << "manifest crc32: " << manifest_checksum(out) << '\n';
  return kOk;
}

// ---- train -------------------------------------------------------------------

struct TrainArgs {
  std::string config, data, out, mode = "full", resume;
  std::optional<std::uint64_t> seed;
};

ckpt::Checkpoint run_checkpoint(const train::TrainState& state, const config::RunConfig& cfg,
                                const std::string& mode) {
  auto c = train::state_to_checkpoint(state, cfg.train);
  c.meta["run_config"] = config::to_json(cfg);
  c.meta["mode"] = mode;
  return c;
}

int train_cmd(const TrainArgs& a) {
  auto cfg = load_config(a.config);
  if (a.seed) {
    cfg.seed = *a.seed;
    cfg.train.seed = *a.seed;
  }
  if (!a.out.empty()) cfg.output_dir = a.out;
  cfg.train = train::apply_mode(cfg.train, train::mode_from_string(a.mode));
  cfg.validate();
  const fs::path out(cfg.output_dir);
  if (fs::exists(out / "log.jsonl") && a.resume.empty()) {
    throw ValidationError(out.string() + " already holds a run (log.jsonl); choose another --out");
  }
  const auto ds = data::read_dataset(a.data);
  if (ds.config.audio_dim != cfg.train.model.audio_dim) {
    throw ValidationError("dataset audio_dim differs from model.audio_dim");
  }
  std::optional<ckpt::Checkpoint> resume;
  if (!a.resume.empty()) resume = ckpt::load(a.resume);

  const auto flows = train::compute_flow_cache(ds, cfg.train.flow, worker_threads());
  train::Trainer trainer(cfg.train, ds, flows);
  auto state = resume ? train::state_from_checkpoint(*resume, cfg.train) : trainer.init_state();

  DirLock lock(out);
  fs::create_directories(out);
  write_text(out / "config.json", config::to_json(cfg).dump(2) + "\n");
  std::ofstream log(out / "log.jsonl", resume ? std::ios::app : std::ios::trunc);
  if (!log) throw std::runtime_error("cannot write " + (out / "log.jsonl").string());

  train::Trainer::Hooks hooks;
  hooks.on_log = [&](const train::LogRecord& r) {
    log << r.to_json().dump() << '\n';
    log.flush();
    std::cout << "iter " << r.iteration << "  l_sup " << r.l_sup << "  l_unsup " << r.l_unsup
              << "  val mIoU " << r.miou << "  F " << r.fscore << '\n';
  };
  hooks.on_checkpoint = [&](const train::TrainState& s) {
    const auto name = s.iteration == cfg.train.max_iterations ? std::string("final.ckpt")
                                                             : "ckpt_" + std::to_string(s.iteration) + ".ckpt";
    ckpt::save(run_checkpoint(s, cfg, a.mode), (out / name).string());
  };
  trainer.train(state, hooks);

  const auto report = trainer.evaluate(state.model, data::Split::kTest);
  write_text(out / "eval_test.json", report.to_json().dump(2) + "\n");
  std::cout << "test mIoU " << report.miou << "  F " << report.fscore << '\n';
  return kOk;
}

// ---- eval --------------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint, data, split, out;
};

config::RunConfig checkpoint_config(const ckpt::Checkpoint& c) {
  if (!c.meta.contains("run_config")) throw ValidationError("checkpoint carries no run configuration");
  return config::from_json(c.meta.at("run_config"));
}

int eval_cmd(const EvalArgs& a) {
  const auto split = data::split_from_string(a.split);
  const auto c = ckpt::load(a.checkpoint);
  const auto cfg = checkpoint_config(c);
  const auto model = ckpt::get_model(c);
  const auto ds = data::read_dataset(a.data);
  for (int i : ds.clip_indices(split))
    for (const auto& m : ds.clips[i].masks)
      if (!m) throw ValidationError("split '" + a.split + "' lacks ground truth for every frame");
  const auto flows = train::compute_flow_cache(ds, cfg.train.flow, worker_threads());
  auto tcfg = cfg.train;
  tcfg.max_iterations = tcfg.burn_in_iterations;  // evaluation only
  train::Trainer trainer(tcfg, ds, flows);
  const auto report = trainer.evaluate(model, split);
  const std::string text = report.to_json().dump(2);
  if (!a.out.empty()) write_text(a.out, text + "\n");
  std::cout << text << '\n';
  return kOk;
}

// ---- flow-viz ----------------------------------------------------------------

struct FlowVizArgs {
  std::string frame_a, frame_b, out, config;
};

fs::path sibling(const fs::path& out, const std::string& suffix) {
  return out.parent_path() / (out.stem().string() + suffix);
}

int flow_viz(const FlowVizArgs& a) {
  const auto cfg = load_config(a.config);
  const auto fa = read_png_checked(a.frame_a);
  const auto fb = read_png_checked(a.frame_b);
  if (fa.shape() != fb.shape()) {
    throw ValidationError("frame sizes differ: " + shape_str(fa.shape()) + " vs " + shape_str(fb.shape()));
  }
  const auto flow = flow::farneback_flow(fa, fb, cfg.train.flow);
  const auto stats = flow::flow_stats(flow);
  image::write_png_rgb8(a.out, flow.height, flow.width, flow::flow_to_rgb(flow));
  json j{{"width", flow.width},
         {"height", flow.height},
         {"mean_magnitude", stats.mean_magnitude},
         {"max_magnitude", stats.max_magnitude},
         {"p95_magnitude", stats.p95_magnitude},
         {"mean_dx", stats.mean_dx},
         {"mean_dy", stats.mean_dy}};
  write_text(sibling(a.out, ".json"), j.dump(2) + "\n");
  std::cout << j.dump() << '\n';
  return kOk;
}

// ---- predict -----------------------------------------------------------------

struct PredictArgs {
  std::string checkpoint, frame, neighbor, audio, out;
  double threshold = 0.5;
};

Tensor read_audio(const std::string& path, int dim) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open audio file " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ValidationError(path + ": " + e.what());
  }
  if (j.is_object() && j.contains("audio")) j = j.at("audio");
  if (!j.is_array() || static_cast<int>(j.size()) != dim) {
    throw ValidationError("audio must be an array of " + std::to_string(dim) + " numbers");
  }
  std::vector<float> v;
  for (const auto& x : j) {
    if (!x.is_number()) throw ValidationError("audio entries must be numbers");
    v.push_back(x.get<float>());
  }
  return Tensor::from({dim}, std::move(v));
}

int predict_cmd(const PredictArgs& a) {
  const auto c = ckpt::load(a.checkpoint);
  const auto cfg = checkpoint_config(c);
  const auto model = ckpt::get_model(c);
  const auto frame = read_png_checked(a.frame);
  if (image::channels(frame) != 3) throw ValidationError("frame must be an RGB PNG");
  const int h = image::height(frame), w = image::width(frame);
  if (h % 32 != 0 || w % 32 != 0) throw ValidationError("frame sides must be multiples of 32");
  const auto audio = read_audio(a.audio, model.config().audio_dim);

  Tensor flow = Tensor::zeros({2, h, w});
  if (a.neighbor.empty() || !fs::exists(a.neighbor)) {
    std::cerr << "warning: no neighbor frame; predicting with zero flow\n";
  } else if (cfg.train.use_flow) {
    const auto next = read_png_checked(a.neighbor);
    if (next.shape() != frame.shape()) throw ValidationError("neighbor size differs from frame");
    flow = flow::farneback_flow(frame, next, cfg.train.flow).to_tensor();
  }

  Tensor prob;
  {
    NoGradGuard no_grad;
    prob = model.forward(frame, flow, audio);
  }
  const auto mask = metrics::binarize(prob, a.threshold);
  image::write_png(a.out, ops::reshape(mask, {1, h, w}));
  image::write_png(sibling(a.out, "_prob.png").string(), ops::reshape(prob, {1, h, w}));
  double mean = 0, fg = 0;
  for (float v : prob.values()) mean += v;
  for (float v : mask.values()) fg += v;
  std::cout << json{{"mean_probability", mean / prob.numel()}, {"foreground_fraction", fg / mask.numel()}}.dump()
            << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Audio-visual segmentation with flow cues and weak-to-strong consistency"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* g = app.add_subcommand("gen-data", "Generate the synthetic benchmark");
  g->add_option("--config", gen.config, "Run config JSON (defaults when omitted)")->check(CLI::ExistingFile);
  g->add_option("--out", gen.out, "Output directory")->required();
  g->add_option("--seed", gen.seed, "Dataset seed");
  g->add_flag("--force", gen.force, "Overwrite a non-empty output directory");

  TrainArgs tr;
  const std::vector<std::string> modes{"full", "nf-only", "df-only", "baseline"};
  auto* t = app.add_subcommand("train", "Train a model");
  t->add_option("--config", tr.config, "Run config JSON")->check(CLI::ExistingFile);
  t->add_option("--data", tr.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  t->add_option("--out", tr.out, "Run directory (overrides output_dir)");
  t->add_option("--mode", tr.mode, "Ablation mode")->check(CLI::IsMember(modes));
  t->add_option("--seed", tr.seed, "Training seed");
  t->add_option("--resume", tr.resume, "Continue from a checkpoint")->check(CLI::ExistingFile);

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Evaluate a checkpoint");
  e->add_option("--checkpoint", ev.checkpoint)->required()->check(CLI::ExistingFile);
  e->add_option("--data", ev.data)->required()->check(CLI::ExistingDirectory);
  e->add_option("--split", ev.split)->required()->check(CLI::IsMember({"train", "val", "test"}));
  e->add_option("--out", ev.out, "Also write the report JSON here");

  FlowVizArgs fv;
  auto* f = app.add_subcommand("flow-viz", "Colour-wheel visualisation of Farneback flow");
  f->add_option("--frame-a", fv.frame_a)->required()->check(CLI::ExistingFile);
  f->add_option("--frame-b", fv.frame_b)->required()->check(CLI::ExistingFile);
  f->add_option("--out", fv.out)->required();
  f->add_option("--config", fv.config, "Run config JSON (flow section)")->check(CLI::ExistingFile);

  PredictArgs pr;
  auto* p = app.add_subcommand("predict", "Segment the sounding object in one frame");
  p->add_option("--checkpoint", pr.checkpoint)->required()->check(CLI::ExistingFile);
  p->add_option("--frame", pr.frame)->required()->check(CLI::ExistingFile);
  p->add_option("--neighbor", pr.neighbor, "Next raw frame; zero flow when missing");
  p->add_option("--audio", pr.audio, "JSON array with the audio embedding")->required()->check(CLI::ExistingFile);
  p->add_option("--out", pr.out, "Binary mask PNG; the probability map goes to <stem>_prob.png")->required();
  p->add_option("--threshold", pr.threshold)->check(CLI::Range(0.0, 1.0));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*g) return gen_data(gen);
    if (*t) return train_cmd(tr);
    if (*e) return eval_cmd(ev);
    if (*f) return flow_viz(fv);
    if (*p) return predict_cmd(pr);
  } catch (const train::TrainingAborted& err) {
    std::cerr << "training aborted: " << err.what() << '\n';
    return kRuntime;
  } catch (const ValidationError& err) {
    std::cerr << "error: " << err.what() << '\n';
    return kValidation;
  } catch (const std::invalid_argument& err) {
    std::cerr << "error: " << err.what() << '\n';
    return kValidation;
  } catch (const data::DatasetError& err) {
    std::cerr << "error: " << err.what() << '\n';
    return kValidation;
  } catch (const ckpt::CheckpointError& err) {
    std::cerr << "error: " << err.what() << '\n';
    return kValidation;
  } catch (const std::exception& err) {
    std::cerr << "runtime error: " << err.what() << '\n';
    return kRuntime;
  }
  return kUsage;
}
