#include "ufe/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include "json.hpp"

#include "ufe/blob.hpp"

namespace ufe::data {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr float kPi = 3.14159265358979f;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

float lattice(std::uint64_t seed, int ix, int iy) {
  const std::uint64_t h = splitmix64(seed ^ splitmix64(static_cast<std::uint64_t>(ix) * 73856093ULL ^
                                                       static_cast<std::uint64_t>(iy) * 19349663ULL));
  return static_cast<float>(h >> 11) * (1.0f / 9007199254740992.0f);
}

// Smoothly interpolated lattice noise in [0, 1).
float value_noise(std::uint64_t seed, float x, float y, float cell) {
  const float gx = x / cell, gy = y / cell;
  const int ix = static_cast<int>(std::floor(gx)), iy = static_cast<int>(std::floor(gy));
  float fx = gx - ix, fy = gy - iy;
  fx = fx * fx * (3 - 2 * fx);
  fy = fy * fy * (3 - 2 * fy);
  const float a = lattice(seed, ix, iy), b = lattice(seed, ix + 1, iy);
  const float c = lattice(seed, ix, iy + 1), d = lattice(seed, ix + 1, iy + 1);
  const float top = a + fx * (b - a), bot = c + fx * (d - c);
  return top + fy * (bot - top);
}

float luma(const float* c) { return 0.299f * c[0] + 0.587f * c[1] + 0.114f * c[2]; }

float uniform(std::mt19937_64& rng, float lo, float hi) {
  return std::uniform_real_distribution<float>(lo, hi)(rng);
}

ShapePose lerp_pose(const ShapePose& a, const ShapePose& b, float t) {
  return {a.cx + t * (b.cx - a.cx), a.cy + t * (b.cy - a.cy), a.radius + t * (b.radius - a.radius),
          a.rotation + t * (b.rotation - a.rotation)};
}

std::vector<ShapePose> linear_trajectory(const ShapePose& start, const ShapePose& end,
                                         int span_steps, int raw_count) {
  std::vector<ShapePose> out;
  out.reserve(raw_count);
  for (int t = 0; t < raw_count; ++t) {
    out.push_back(lerp_pose(start, end, static_cast<float>(t) / static_cast<float>(span_steps)));
  }
  return out;
}

bool poses_in_canvas(const std::vector<ShapePose>& traj, int size) {
  for (const auto& p : traj) {
    if (p.cx - p.radius < 1 || p.cy - p.radius < 1 || p.cx + p.radius > size - 1 ||
        p.cy + p.radius > size - 1) {
      return false;
    }
  }
  return true;
}

bool trajectories_overlap(const SceneShape& a, const SceneShape& b) {
  for (std::size_t t = 0; t < a.trajectory.size(); ++t) {
    const auto& p = a.trajectory[t];
    const auto& q = b.trajectory[t];
    if (std::hypot(p.cx - q.cx, p.cy - q.cy) < p.radius + q.radius + 1.0f) return true;
  }
  return false;
}

void random_color(std::mt19937_64& rng, const float* avoid, float* out) {
  for (int attempt = 0; attempt < 100; ++attempt) {
    for (int c = 0; c < 3; ++c) out[c] = uniform(rng, 0.05f, 0.95f);
    const float d = std::sqrt((out[0] - avoid[0]) * (out[0] - avoid[0]) +
                              (out[1] - avoid[1]) * (out[1] - avoid[1]) +
                              (out[2] - avoid[2]) * (out[2] - avoid[2]));
    if (d > 0.45f && std::abs(luma(out) - luma(avoid)) > 0.12f) return;
  }
}

std::optional<SceneSpec> try_make_scene(std::mt19937_64& rng, const DatasetConfig& cfg) {
  const int size = cfg.image_size;
  const int span = (cfg.frames - 1) * cfg.raw_stride;
  const int raw = cfg.raw_frame_count();
  SceneSpec scene;
  scene.background_seed = rng();
  for (float& c : scene.background_color) c = uniform(rng, 0.25f, 0.75f);

  int num_sounding = 1;
  if (cfg.style == "ms3" && cfg.num_shapes >= 2) {
    num_sounding = std::uniform_int_distribution<int>(1, 2)(rng);
  }
  std::vector<int> classes{0, 1, 2};
  std::shuffle(classes.begin(), classes.end(), rng);

  const float min_travel = 0.25f * size + 1.0f;
  const float max_travel = std::min(cfg.max_step * span * 0.95f, 0.75f * size);
  for (int s = 0; s < cfg.num_shapes; ++s) {
    SceneShape shape;
    shape.shape_class = static_cast<ShapeClass>(classes[s % kNumClasses]);
    shape.sounding = s < num_sounding;
    shape.texture_seed = rng();
    random_color(rng, scene.background_color, shape.color);
    const float r0 = uniform(rng, 0.11f, 0.17f) * size;
    ShapePose start{0, 0, r0, uniform(rng, 0.0f, 2 * kPi)};
    ShapePose end = start;
    end.radius = r0 * uniform(rng, 0.85f, 1.15f);
    start.radius = r0 * uniform(rng, 0.85f, 1.15f);
    const float margin = std::max(start.radius, end.radius) + cfg.max_step + 2.0f;
    if (2 * margin >= size) return std::nullopt;
    start.cx = uniform(rng, margin, size - margin);
    start.cy = uniform(rng, margin, size - margin);
    if (shape.sounding) {
      const float travel = uniform(rng, min_travel, std::max(min_travel, max_travel));
      const float angle = uniform(rng, 0.0f, 2 * kPi);
      end.cx = start.cx + travel * std::cos(angle);
      end.cy = start.cy + travel * std::sin(angle);
      end.rotation = start.rotation + uniform(rng, -1.0f, 1.0f);
    } else {
      const float drift = uniform(rng, 0.0f, 3.0f);
      const float angle = uniform(rng, 0.0f, 2 * kPi);
      end.cx = start.cx + drift * std::cos(angle);
      end.cy = start.cy + drift * std::sin(angle);
      end.rotation = start.rotation + uniform(rng, -0.15f, 0.15f);
      end.radius = start.radius;
    }
    shape.trajectory = linear_trajectory(start, end, span, raw);
    if (!poses_in_canvas(shape.trajectory, size)) return std::nullopt;
    for (const auto& other : scene.shapes) {
      if (trajectories_overlap(shape, other)) return std::nullopt;
    }
    scene.shapes.push_back(std::move(shape));
  }
  // Sounding shapes are drawn last so their masks are never occluded.
  std::stable_partition(scene.shapes.begin(), scene.shapes.end(),
                        [](const SceneShape& s) { return !s.sounding; });
  return scene;
}

}  // namespace

std::string to_string(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "?";
}

Split split_from_string(const std::string& name) {
  if (name == "train") return Split::kTrain;
  if (name == "val") return Split::kVal;
  if (name == "test") return Split::kTest;
  throw std::invalid_argument("unknown split '" + name + "' (valid: train, val, test)");
}

void DatasetConfig::validate() const {
  if (frames < 2) throw std::invalid_argument("dataset.frames must be >= 2");
  if (image_size != 32 && image_size != 64 && image_size != 128)
    throw std::invalid_argument("dataset.image_size must be 32, 64 or 128");
  if (num_shapes < 1 || num_shapes > 3) throw std::invalid_argument("dataset.num_shapes must be in [1,3]");
  if (raw_stride < 1) throw std::invalid_argument("dataset.raw_stride must be >= 1");
  if (audio_dim < kNumClasses) throw std::invalid_argument("dataset.audio_dim must be >= 3");
  if (!(max_step > 0)) throw std::invalid_argument("dataset.max_step must be > 0");
  if (style != "s4" && style != "ms3") throw std::invalid_argument("dataset.style must be s4 or ms3");
  if (!(audio_noise >= 0)) throw std::invalid_argument("dataset.audio_noise must be >= 0");
  if (train_clips < 0 || val_clips < 0 || test_clips < 0)
    throw std::invalid_argument("clip counts must be >= 0");
  if (max_step * (frames - 1) * raw_stride < 0.25f * image_size + 1.0f)
    throw std::invalid_argument("max_step too small to cover a quarter of the frame");
}

std::vector<int> Dataset::clip_indices(Split split) const {
  std::vector<int> out;
  for (int i = 0; i < static_cast<int>(clips.size()); ++i)
    if (clips[i].split == split) out.push_back(i);
  return out;
}

namespace {
bool tensors_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && a.values() == b.values();
}
bool tensor_lists_equal(const std::vector<Tensor>& a, const std::vector<Tensor>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (!tensors_equal(a[i], b[i])) return false;
  return true;
}
}  // namespace

bool Dataset::operator==(const Dataset& other) const {
  if (clips.size() != other.clips.size()) return false;
  for (std::size_t i = 0; i < clips.size(); ++i) {
    const Clip& a = clips[i];
    const Clip& b = other.clips[i];
    if (a.id != b.id || a.split != b.split || a.seed != b.seed ||
        a.labeled_indices != b.labeled_indices || a.masks.size() != b.masks.size() ||
        !tensor_lists_equal(a.frames, b.frames) ||
        !tensor_lists_equal(a.neighbor_frames, b.neighbor_frames) ||
        !tensor_lists_equal(a.audio, b.audio)) {
      return false;
    }
    for (std::size_t t = 0; t < a.masks.size(); ++t) {
      if (a.masks[t].has_value() != b.masks[t].has_value()) return false;
      if (a.masks[t] && !tensors_equal(*a.masks[t], *b.masks[t])) return false;
    }
  }
  return true;
}

std::uint64_t clip_seed(std::uint64_t base_seed, Split split, int index) {
  return splitmix64(splitmix64(base_seed) ^ (static_cast<std::uint64_t>(split) << 40) ^
                    static_cast<std::uint64_t>(index));
}

SceneSpec make_scene(std::uint64_t seed, const DatasetConfig& config) {
  config.validate();
  std::mt19937_64 rng(seed);
  for (int attempt = 0; attempt < 10000; ++attempt) {
    if (auto scene = try_make_scene(rng, config)) return *scene;
  }
  throw DatasetError("could not place shapes on a " + std::to_string(config.image_size) +
                     " px canvas; reduce num_shapes or max_step");
}

bool shape_contains(const SceneShape& shape, const ShapePose& pose, float px, float py) {
  const float dx = px - pose.cx, dy = py - pose.cy;
  const float c = std::cos(pose.rotation), s = std::sin(pose.rotation);
  const float u = (c * dx + s * dy) / pose.radius;
  const float v = (-s * dx + c * dy) / pose.radius;
  switch (shape.shape_class) {
    case ShapeClass::kCircle:
      return u * u + v * v <= 1.0f;
    case ShapeClass::kSquare:
      return std::abs(u) <= 0.85f && std::abs(v) <= 0.85f;
    case ShapeClass::kTriangle: {
      // Equilateral, circumradius 1, vertices (0,-1), (+-sqrt(3)/2, 1/2).
      const float r3 = 1.7320508f;
      return v <= 0.5f && r3 * u - v <= 1.0f && -r3 * u - v <= 1.0f;
    }
  }
  return false;
}

Tensor rasterize_sounding(const SceneSpec& scene, int raw_index, int size) {
  std::vector<float> mask(static_cast<std::size_t>(size) * size, 0.0f);
  for (const auto& shape : scene.shapes) {
    if (!shape.sounding) continue;
    const ShapePose& pose = shape.trajectory.at(raw_index);
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x)
        if (shape_contains(shape, pose, x + 0.5f, y + 0.5f)) mask[y * size + x] = 1.0f;
  }
  return Tensor::from({size, size}, std::move(mask));
}

Tensor render_frame(const SceneSpec& scene, int raw_index, int size) {
  const std::size_t plane = static_cast<std::size_t>(size) * size;
  std::vector<float> img(3 * plane);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const float n1 = value_noise(scene.background_seed, x + 0.5f, y + 0.5f, 12.0f);
      const float n2 = value_noise(scene.background_seed ^ 0x5bd1e995ULL, x + 0.5f, y + 0.5f, 4.0f);
      for (int c = 0; c < 3; ++c) {
        const float tint = value_noise(scene.background_seed + 1 + c, x + 0.5f, y + 0.5f, 16.0f);
        const float v = scene.background_color[c] + 0.15f * (n1 - 0.5f) + 0.10f * (n2 - 0.5f) +
                        0.10f * (tint - 0.5f);
        img[c * plane + y * size + x] = std::clamp(v, 0.0f, 1.0f);
      }
    }
  for (const auto& shape : scene.shapes) {
    const ShapePose& pose = shape.trajectory.at(raw_index);
    const float c = std::cos(pose.rotation), s = std::sin(pose.rotation);
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        const float px = x + 0.5f, py = y + 0.5f;
        if (!shape_contains(shape, pose, px, py)) continue;
        // Texture lives in shape coordinates so it moves with the shape.
        const float dx = px - pose.cx, dy = py - pose.cy;
        const float u = c * dx + s * dy, v = -s * dx + c * dy;
        const float n = value_noise(shape.texture_seed, u + 100.0f, v + 100.0f, 3.0f);
        const float gain = 0.85f + 0.3f * n;
        for (int ch = 0; ch < 3; ++ch) {
          img[ch * plane + y * size + x] = std::clamp(shape.color[ch] * gain, 0.0f, 1.0f);
        }
      }
  }
  return Tensor::from({3, size, size}, std::move(img));
}

Tensor make_audio(const SceneSpec& scene, const DatasetConfig& config, std::mt19937_64& rng) {
  std::normal_distribution<float> noise(0.0f, config.audio_noise);
  for (;;) {
    std::vector<float> a(config.audio_dim, 0.0f);
    for (const auto& shape : scene.shapes)
      if (shape.sounding) a[static_cast<int>(shape.shape_class)] = 1.0f;
    double norm2 = 0;
    for (float& v : a) {
      v += noise(rng);
      norm2 += v * v;
    }
    const double norm = std::sqrt(norm2);
    if (norm >= 0.5 && norm <= 2.0) return Tensor::from({config.audio_dim}, std::move(a));
  }
}

Clip generate_clip(std::uint64_t seed, const DatasetConfig& config, Split split, int index) {
  const SceneSpec scene = make_scene(seed, config);
  std::mt19937_64 audio_rng(splitmix64(seed ^ 0xa0d10ULL));
  Clip clip;
  clip.seed = seed;
  clip.split = split;
  char id[32];
  std::snprintf(id, sizeof id, "%s_%04d", to_string(split).c_str(), index);
  clip.id = id;
  for (int t = 0; t < config.frames; ++t) {
    const int raw = t * config.raw_stride;
    clip.frames.push_back(render_frame(scene, raw, config.image_size));
    clip.neighbor_frames.push_back(render_frame(scene, raw + 1, config.image_size));
    clip.audio.push_back(make_audio(scene, config, audio_rng));
    const bool exposed = split != Split::kTrain || t == 0;
    if (exposed) {
      clip.masks.emplace_back(rasterize_sounding(scene, raw, config.image_size));
      clip.labeled_indices.push_back(t);
    } else {
      clip.masks.emplace_back(std::nullopt);
    }
  }
  return clip;
}

Dataset generate_dataset(const DatasetConfig& config) {
  config.validate();
  Dataset ds;
  ds.config = config;
  for (auto [split, count] : {std::pair{Split::kTrain, config.train_clips},
                              {Split::kVal, config.val_clips},
                              {Split::kTest, config.test_clips}}) {
    for (int i = 0; i < count; ++i)
      ds.clips.push_back(generate_clip(clip_seed(config.seed, split, i), config, split, i));
  }
  return ds;
}

int decode_audio_class(const Tensor& audio) {
  int best = 0;
  for (int c = 1; c < kNumClasses; ++c)
    if (audio[c] > audio[best]) best = c;
  return best;
}

TrainingPool make_training_pool(const Dataset& dataset, double labeled_fraction) {
  if (!(labeled_fraction > 0.0 && labeled_fraction <= 1.0)) {
    throw std::invalid_argument("labeled_fraction must lie in (0, 1]");
  }
  TrainingPool pool;
  const auto train = dataset.clip_indices(Split::kTrain);
  for (std::size_t k = 0; k < train.size(); ++k) {
    const Clip& clip = dataset.clips[train[k]];
    // Evenly spaced selection: clip k is labeled when floor((k+1) f) > floor(k f).
    const bool use_label = std::floor((k + 1) * labeled_fraction + 1e-9) >
                           std::floor(k * labeled_fraction + 1e-9);
    if (use_label) {
      for (int t : clip.labeled_indices) pool.labeled.push_back({train[k], t});
    }
    for (int t = 2; t < static_cast<int>(clip.frames.size()); ++t) pool.distant.push_back({train[k], t});
  }
  return pool;
}

TrainingBatch sample_training_batch(const Dataset& dataset, const TrainingPool& pool,
                                    int labeled_size, int unlabeled_size, std::mt19937_64& rng) {
  if (pool.labeled.empty()) throw std::invalid_argument("training pool has no labeled frames");
  if (labeled_size < 1) throw std::invalid_argument("labeled batch size must be >= 1");
  if (unlabeled_size < 0) throw std::invalid_argument("unlabeled batch size must be >= 0");
  if (unlabeled_size > 0 && pool.distant.empty()) {
    throw std::invalid_argument("unlabeled batch requested but the dataset has no distant frames");
  }
  TrainingBatch batch;
  std::uniform_int_distribution<std::size_t> pick_l(0, pool.labeled.size() - 1);
  for (int i = 0; i < labeled_size; ++i) {
    const FrameRef ref = pool.labeled[pick_l(rng)];
    const Clip& clip = dataset.clips[ref.clip];
    batch.labeled.push_back({ref, clip.frames[ref.frame], clip.neighbor_frames[ref.frame],
                             clip.audio[ref.frame], *clip.masks[ref.frame]});
  }
  if (unlabeled_size > 0) {
    std::uniform_int_distribution<std::size_t> pick_u(0, pool.distant.size() - 1);
    for (int i = 0; i < unlabeled_size; ++i) {
      const FrameRef ref = pool.distant[pick_u(rng)];
      const Clip& clip = dataset.clips[ref.clip];
      batch.unlabeled.push_back(
          {ref, clip.frames[ref.frame], clip.neighbor_frames[ref.frame], clip.audio[ref.frame]});
    }
  }
  return batch;
}

// ---- persistence ---------------------------------------------------------------

namespace {

json config_to_json(const DatasetConfig& c) {
  return {{"image_size", c.image_size}, {"frames", c.frames},           {"raw_stride", c.raw_stride},
          {"audio_dim", c.audio_dim},   {"max_step", c.max_step},       {"num_shapes", c.num_shapes},
          {"style", c.style},           {"audio_noise", c.audio_noise}, {"train_clips", c.train_clips},
          {"val_clips", c.val_clips},   {"test_clips", c.test_clips},   {"seed", c.seed}};
}

DatasetConfig config_from_json(const json& j) {
  DatasetConfig c;
  c.image_size = j.at("image_size");
  c.frames = j.at("frames");
  c.raw_stride = j.at("raw_stride");
  c.audio_dim = j.at("audio_dim");
  c.max_step = j.at("max_step");
  c.num_shapes = j.at("num_shapes");
  c.style = j.at("style");
  c.audio_noise = j.at("audio_noise");
  c.train_clips = j.at("train_clips");
  c.val_clips = j.at("val_clips");
  c.test_clips = j.at("test_clips");
  c.seed = j.at("seed");
  return c;
}

std::vector<float> stack(const std::vector<Tensor>& ts) {
  std::vector<float> out;
  for (const auto& t : ts) out.insert(out.end(), t.values().begin(), t.values().end());
  return out;
}

json write_entry(const std::string& dir, const std::string& rel, const std::vector<std::uint32_t>& dims,
                 blob::DType dtype, std::span<const float> f32, std::span<const std::uint8_t> u8) {
  const auto bytes = blob::encode(dims, dtype, f32, u8);
  blob::write_file((fs::path(dir) / rel).string(), bytes);
  return {{"path", rel},
          {"dims", dims},
          {"dtype", dtype == blob::DType::kF32 ? "f32" : "u8"},
          {"crc32", blob::crc32(bytes)}};
}

blob::Blob read_entry(const std::string& dir, const json& entry, const std::string& clip_id) {
  const std::string rel = entry.at("path");
  const auto dtype = entry.at("dtype") == "u8" ? blob::DType::kU8 : blob::DType::kF32;
  std::vector<std::uint8_t> bytes;
  try {
    bytes = blob::read_file((fs::path(dir) / rel).string());
  } catch (const std::exception& e) {
    throw DatasetError("clip " + clip_id + ": " + e.what());
  }
  const std::uint32_t expected = entry.at("crc32");
  const std::uint32_t actual = blob::crc32(bytes);
  if (actual != expected) {
    throw DatasetError("clip " + clip_id + ": checksum mismatch in " + rel + " (expected " +
                       std::to_string(expected) + ", got " + std::to_string(actual) + ")");
  }
  blob::Blob b;
  try {
    b = blob::decode(bytes, dtype);
  } catch (const std::exception& e) {
    throw DatasetError("clip " + clip_id + ": " + rel + ": " + e.what());
  }
  if (b.dims != entry.at("dims").get<std::vector<std::uint32_t>>()) {
    throw DatasetError("clip " + clip_id + ": " + rel + " dims disagree with manifest");
  }
  return b;
}

std::vector<Tensor> unstack(const blob::Blob& b, const Shape& item_shape) {
  const std::size_t n = shape_numel(item_shape);
  std::vector<Tensor> out;
  for (std::uint32_t i = 0; i < b.dims.at(0); ++i) {
    out.push_back(Tensor::from(item_shape, std::vector<float>(b.f32.begin() + i * n,
                                                              b.f32.begin() + (i + 1) * n)));
  }
  return out;
}

}  // namespace

void write_dataset(const Dataset& dataset, const std::string& dir) {
  fs::create_directories(fs::path(dir) / "clips");
  const auto& cfg = dataset.config;
  const auto s = static_cast<std::uint32_t>(cfg.image_size);
  const auto t = static_cast<std::uint32_t>(cfg.frames);
  json clips = json::array();
  for (const auto& clip : dataset.clips) {
    const std::string base = "clips/" + clip.id;
    fs::create_directories(fs::path(dir) / base);
    json files;
    files["frames"] = write_entry(dir, base + "/frames.ufet", {t, 3, s, s}, blob::DType::kF32,
                                  stack(clip.frames), {});
    files["neighbors"] = write_entry(dir, base + "/neighbors.ufet", {t, 3, s, s}, blob::DType::kF32,
                                     stack(clip.neighbor_frames), {});
    files["audio"] = write_entry(dir, base + "/audio.ufet",
                                 {t, static_cast<std::uint32_t>(cfg.audio_dim)}, blob::DType::kF32,
                                 stack(clip.audio), {});
    std::vector<std::uint8_t> masks;
    for (int idx : clip.labeled_indices)
      for (float v : clip.masks[idx]->values()) masks.push_back(v > 0.5f ? 1 : 0);
    files["masks"] = write_entry(dir, base + "/masks.ufet",
                                 {static_cast<std::uint32_t>(clip.labeled_indices.size()), s, s},
                                 blob::DType::kU8, {}, masks);
    clips.push_back({{"id", clip.id},
                     {"split", to_string(clip.split)},
                     {"seed", clip.seed},
                     {"labeled_indices", clip.labeled_indices},
                     {"files", files}});
  }
  json manifest = {{"format", "ufe-dataset"},
                   {"version", 1},
                   {"config", config_to_json(cfg)},
                   {"clip_count", dataset.clips.size()},
                   {"clips", clips}};
  std::ofstream out(fs::path(dir) / "manifest.json");
  if (!out) throw DatasetError("cannot write manifest in " + dir);
  out << manifest.dump(2) << '\n';
}

Dataset read_dataset(const std::string& dir) {
  std::ifstream in(fs::path(dir) / "manifest.json");
  if (!in) throw DatasetError("no manifest.json in " + dir);
  json manifest;
  try {
    manifest = json::parse(in);
  } catch (const json::exception& e) {
    throw DatasetError(std::string("corrupt manifest: ") + e.what());
  }
  if (manifest.value("format", "") != "ufe-dataset" || manifest.value("version", 0) != 1) {
    throw DatasetError("manifest has unknown format or version");
  }
  Dataset ds;
  try {
    ds.config = config_from_json(manifest.at("config"));
    const auto& cfg = ds.config;
    const int s = cfg.image_size;
    if (manifest.at("clip_count").get<std::size_t>() != manifest.at("clips").size()) {
      throw DatasetError("manifest clip_count disagrees with clip list");
    }
    for (const auto& entry : manifest.at("clips")) {
      Clip clip;
      clip.id = entry.at("id");
      clip.split = split_from_string(entry.at("split"));
      clip.seed = entry.at("seed");
      clip.labeled_indices = entry.at("labeled_indices").get<std::vector<int>>();
      const auto& files = entry.at("files");
      clip.frames = unstack(read_entry(dir, files.at("frames"), clip.id), {3, s, s});
      clip.neighbor_frames = unstack(read_entry(dir, files.at("neighbors"), clip.id), {3, s, s});
      clip.audio = unstack(read_entry(dir, files.at("audio"), clip.id), {cfg.audio_dim});
      const auto masks = read_entry(dir, files.at("masks"), clip.id);
      if (masks.dims.at(0) != clip.labeled_indices.size() ||
          clip.frames.size() != static_cast<std::size_t>(cfg.frames)) {
        throw DatasetError("clip " + clip.id + ": frame or mask count disagrees with manifest");
      }
      clip.masks.assign(cfg.frames, std::nullopt);
      const std::size_t n = static_cast<std::size_t>(s) * s;
      for (std::size_t k = 0; k < clip.labeled_indices.size(); ++k) {
        std::vector<float> m(n);
        for (std::size_t i = 0; i < n; ++i) m[i] = masks.u8[k * n + i] ? 1.0f : 0.0f;
        clip.masks.at(clip.labeled_indices[k]) = Tensor::from({s, s}, std::move(m));
      }
      ds.clips.push_back(std::move(clip));
    }
  } catch (const json::exception& e) {
    throw DatasetError(std::string("malformed manifest: ") + e.what());
  }
  std::size_t on_disk = 0;
  if (fs::exists(fs::path(dir) / "clips")) {
    for (const auto& e : fs::directory_iterator(fs::path(dir) / "clips"))
      if (e.is_directory()) ++on_disk;
  }
  if (on_disk != ds.clips.size()) {
    throw DatasetError("manifest lists " + std::to_string(ds.clips.size()) + " clips but " +
                       std::to_string(on_disk) + " clip directories exist");
  }
  return ds;
}

json to_json(const DatasetConfig& config) { return config_to_json(config); }

DatasetConfig dataset_config_from_json(const json& j) { return config_from_json(j); }

}  // namespace ufe::data
