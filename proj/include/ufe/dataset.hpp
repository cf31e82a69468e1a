#pragma once

// Synthetic "moving sounding shapes" benchmark.
//
// Each clip shows textured geometric shapes over a static value-noise
// background. The sounding shape travels across the frame; silent distractors
// drift slowly. The audio embedding carries the sounding class as a one-hot
// block plus Gaussian noise. Training clips expose a single annotated frame.

#include <cstdint>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "ufe/tensor.hpp"

namespace ufe::data {

enum class ShapeClass { kCircle = 0, kSquare = 1, kTriangle = 2 };
inline constexpr int kNumClasses = 3;

enum class Split { kTrain, kVal, kTest };
std::string to_string(Split split);
Split split_from_string(const std::string& name);

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DatasetConfig {
  int image_size = 64;      // H = W
  int frames = 5;           // T sampled frames per clip
  int raw_stride = 8;       // raw frames between sampled frames
  int audio_dim = 16;
  float max_step = 2.0f;    // max centroid displacement per raw frame, px
  int num_shapes = 2;
  std::string style = "s4";  // "s4": one sounding shape; "ms3": one or two
  float audio_noise = 0.05f;
  int train_clips = 200;
  int val_clips = 40;
  int test_clips = 40;
  std::uint64_t seed = 0;

  void validate() const;
  int raw_frame_count() const { return (frames - 1) * raw_stride + 2; }
};

struct ShapePose {
  float cx = 0, cy = 0;  // centre, px
  float radius = 0;      // circumradius-like extent, px
  float rotation = 0;    // radians
};

struct SceneShape {
  ShapeClass shape_class = ShapeClass::kCircle;
  bool sounding = false;
  std::vector<ShapePose> trajectory;  // one pose per raw frame
  float color[3] = {0, 0, 0};
  std::uint64_t texture_seed = 0;
};

struct SceneSpec {
  std::vector<SceneShape> shapes;  // drawn in order; sounding shapes last
  std::uint64_t background_seed = 0;
  float background_color[3] = {0, 0, 0};
};

struct Clip {
  std::string id;
  Split split = Split::kTrain;
  std::uint64_t seed = 0;
  std::vector<Tensor> frames;           // T x [3,H,W]
  std::vector<Tensor> neighbor_frames;  // raw-rate successor of each sampled frame
  std::vector<Tensor> audio;            // T x [d]
  std::vector<std::optional<Tensor>> masks;  // T entries, [H,W] in {0,1}; only labeled ones set
  std::vector<int> labeled_indices;
};

struct Dataset {
  DatasetConfig config;
  std::vector<Clip> clips;

  std::vector<int> clip_indices(Split split) const;
  bool operator==(const Dataset& other) const;
};

std::uint64_t clip_seed(std::uint64_t base_seed, Split split, int index);

SceneSpec make_scene(std::uint64_t seed, const DatasetConfig& config);

// Point-in-shape test at real pixel coordinates.
bool shape_contains(const SceneShape& shape, const ShapePose& pose, float px, float py);

// Exact rasterisation (pixel centres) of the sounding shapes at a raw frame.
Tensor rasterize_sounding(const SceneSpec& scene, int raw_index, int size);
Tensor render_frame(const SceneSpec& scene, int raw_index, int size);
Tensor make_audio(const SceneSpec& scene, const DatasetConfig& config, std::mt19937_64& rng);

Clip generate_clip(std::uint64_t seed, const DatasetConfig& config, Split split = Split::kVal,
                   int index = 0);
Dataset generate_dataset(const DatasetConfig& config);

// Sounding class read back from the one-hot block (argmax).
int decode_audio_class(const Tensor& audio);

// ---- training-time sampling -------------------------------------------------

struct FrameRef {
  int clip = 0;
  int frame = 0;
  bool operator==(const FrameRef&) const = default;
};

struct TrainingPool {
  std::vector<FrameRef> labeled;  // frame 0 of the clips whose label is used
  std::vector<FrameRef> distant;  // frames with index >= 2 of every training clip
};

// Every training clip is annotated on frame 0; `labeled_fraction` selects an
// evenly spaced subset of clips whose annotation the trainer may use.
TrainingPool make_training_pool(const Dataset& dataset, double labeled_fraction);

struct LabeledItem {
  FrameRef ref;
  Tensor image, neighbor, audio, mask;
};

struct UnlabeledItem {
  FrameRef ref;
  Tensor image, neighbor, audio;
};

struct TrainingBatch {
  std::vector<LabeledItem> labeled;
  std::vector<UnlabeledItem> unlabeled;
};

// Uniform sampling with replacement.
TrainingBatch sample_training_batch(const Dataset& dataset, const TrainingPool& pool,
                                    int labeled_size, int unlabeled_size, std::mt19937_64& rng);

// ---- persistence --------------------------------------------------------------

nlohmann::json to_json(const DatasetConfig& config);
DatasetConfig dataset_config_from_json(const nlohmann::json& j);

void write_dataset(const Dataset& dataset, const std::string& dir);
Dataset read_dataset(const std::string& dir);

}  // namespace ufe::data
