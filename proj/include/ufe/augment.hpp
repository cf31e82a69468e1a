#pragma once

// Weak and strong perturbations applied jointly to image, flow and labels.
//
// Flow is a [2,H,W] tensor (dx, dy) in the pixel units of the tensor it
// accompanies; resizing rescales it and horizontal flips negate dx. Strong
// views are built on top of weak views, so only cutmix changes geometry.

#include <optional>
#include <random>

#include "ufe/image.hpp"
#include "ufe/tensor.hpp"

namespace ufe::augment {

struct AugmentConfig {
  double crop_scale_min = 0.7;  // area fraction of the square crop
  double crop_scale_max = 1.0;
  double hflip_prob = 0.5;
  double brightness = 0.4;  // factors drawn from [1 - d, 1 + d]
  double contrast = 0.4;
  double saturation = 0.4;
  double grayscale_prob = 0.2;
  double cutmix_prob = 0.5;
  double cutmix_area_min = 0.1;
  double cutmix_area_max = 0.4;

  void validate() const;
};

struct AugmentRecord {
  int src_h = 0, src_w = 0;
  image::Box crop;
  int out_h = 0, out_w = 0;
  bool hflip = false;

  bool photometric = false;
  float brightness = 1, contrast = 1, saturation = 1;  // multiplicative factors
  bool grayscale = false;

  image::Box cutmix;  // zero area when no patch was pasted
  int partner = -1;

  static AugmentRecord identity(int h, int w);
  bool operator==(const AugmentRecord&) const = default;
};

struct View {
  Tensor image;               // [3,H,W] in [0,1]
  Tensor flow;                // [2,H,W]
  std::optional<Tensor> mask;  // [H,W]
};

AugmentRecord sample_weak(int h, int w, const AugmentConfig& config, std::mt19937_64& rng);
View apply_weak(const AugmentRecord& record, const View& input);
std::pair<View, AugmentRecord> weak_augment(const View& input, const AugmentConfig& config,
                                            std::mt19937_64& rng);

// Geometric part of a record applied to a label map with nearest sampling.
// Cutmix is not replayed here because it needs the partner's label; see mix_labels.
Tensor replay(const AugmentRecord& record, const Tensor& mask);

struct StrongResult {
  View view;
  Tensor label;
  AugmentRecord record;
};

AugmentRecord sample_strong(int h, int w, const AugmentConfig& config, std::mt19937_64& rng);
StrongResult apply_strong(const AugmentRecord& record, const View& view_a, const Tensor& pseudo_a,
                          const View& view_b, const Tensor& pseudo_b);
StrongResult strong_augment(const View& view_a, const Tensor& pseudo_a, const View& view_b,
                            const Tensor& pseudo_b, const AugmentConfig& config,
                            std::mt19937_64& rng, int partner = -1);

Tensor photometric(const AugmentRecord& record, const Tensor& image);
// dst with the region `box` replaced by the same region of src. [C,H,W] or [H,W].
Tensor paste(const Tensor& dst, const Tensor& src, const image::Box& box);
Tensor mix_labels(const AugmentRecord& record, const Tensor& label_a, const Tensor& label_b);

}  // namespace ufe::augment
