#include "ufe/augment.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ufe::augment {

namespace {

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

bool coin(std::mt19937_64& rng, double p) { return std::uniform_real_distribution<double>(0, 1)(rng) < p; }

int uniform_int(std::mt19937_64& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

image::Box square_box(int h, int w, double area_fraction, std::mt19937_64& rng) {
  const int side = std::clamp(static_cast<int>(std::lround(std::sqrt(area_fraction * h * w))), 1,
                              std::min(h, w));
  return {uniform_int(rng, 0, w - side), uniform_int(rng, 0, h - side), side, side};
}

void check_record(const AugmentRecord& r, const Tensor& t) {
  if (image::height(t) != r.src_h || image::width(t) != r.src_w) {
    throw ShapeError("augment record expects " + std::to_string(r.src_h) + "x" +
                     std::to_string(r.src_w) + " input, got " + shape_str(t.shape()));
  }
}

Tensor geometric(const AugmentRecord& r, const Tensor& t, bool nearest) {
  check_record(r, t);
  Tensor out = nearest ? image::crop_resize_nearest(t, r.crop, r.out_h, r.out_w)
                       : image::crop_resize_bilinear(t, r.crop, r.out_h, r.out_w);
  return r.hflip ? image::hflip(out) : out;
}

Tensor geometric_flow(const AugmentRecord& r, const Tensor& flow) {
  if (flow.rank() != 3 || flow.dim(0) != 2) {
    throw ShapeError("flow must be [2,H,W], got " + shape_str(flow.shape()));
  }
  Tensor out = geometric(r, flow, false);
  const float sx = static_cast<float>(r.out_w) / r.crop.w;
  const float sy = static_cast<float>(r.out_h) / r.crop.h;
  const std::size_t plane = static_cast<std::size_t>(r.out_h) * r.out_w;
  auto& v = out.values();
  for (std::size_t i = 0; i < plane; ++i) {
    v[i] *= r.hflip ? -sx : sx;
    v[plane + i] *= sy;
  }
  return out;
}

void check_same_size(const Tensor& a, const Tensor& b, const char* what) {
  if (image::height(a) != image::height(b) || image::width(a) != image::width(b)) {
    throw ShapeError(std::string("mismatched ") + what + " sizes: " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
  }
}

float luma(float r, float g, float b) { return 0.299f * r + 0.587f * g + 0.114f * b; }

}  // namespace

void AugmentConfig::validate() const {
  if (!(crop_scale_min > 0 && crop_scale_min <= crop_scale_max && crop_scale_max <= 1)) {
    throw std::invalid_argument("augment crop scale must satisfy 0 < min <= max <= 1");
  }
  if (!(cutmix_area_min > 0 && cutmix_area_min <= cutmix_area_max && cutmix_area_max <= 1)) {
    throw std::invalid_argument("augment cutmix area must satisfy 0 < min <= max <= 1");
  }
  for (double p : {hflip_prob, grayscale_prob, cutmix_prob}) {
    if (!(p >= 0 && p <= 1)) throw std::invalid_argument("augment probabilities must lie in [0,1]");
  }
  for (double d : {brightness, contrast, saturation}) {
    if (!(d >= 0 && d < 1)) throw std::invalid_argument("augment jitter must lie in [0,1)");
  }
}

AugmentRecord AugmentRecord::identity(int h, int w) {
  AugmentRecord r;
  r.src_h = r.out_h = h;
  r.src_w = r.out_w = w;
  r.crop = {0, 0, w, h};
  return r;
}

AugmentRecord sample_weak(int h, int w, const AugmentConfig& config, std::mt19937_64& rng) {
  AugmentRecord r = AugmentRecord::identity(h, w);
  r.crop = square_box(h, w, uniform(rng, config.crop_scale_min, config.crop_scale_max), rng);
  r.hflip = coin(rng, config.hflip_prob);
  return r;
}

View apply_weak(const AugmentRecord& record, const View& input) {
  check_same_size(input.image, input.flow, "image/flow");
  View out;
  out.image = geometric(record, input.image, false);
  out.flow = geometric_flow(record, input.flow);
  if (input.mask) out.mask = replay(record, *input.mask);
  return out;
}

std::pair<View, AugmentRecord> weak_augment(const View& input, const AugmentConfig& config,
                                            std::mt19937_64& rng) {
  auto record = sample_weak(image::height(input.image), image::width(input.image), config, rng);
  return {apply_weak(record, input), record};
}

Tensor replay(const AugmentRecord& record, const Tensor& mask) {
  return geometric(record, mask, true);
}

AugmentRecord sample_strong(int h, int w, const AugmentConfig& config, std::mt19937_64& rng) {
  AugmentRecord r = AugmentRecord::identity(h, w);
  r.photometric = true;
  r.brightness = static_cast<float>(uniform(rng, 1 - config.brightness, 1 + config.brightness));
  r.contrast = static_cast<float>(uniform(rng, 1 - config.contrast, 1 + config.contrast));
  r.saturation = static_cast<float>(uniform(rng, 1 - config.saturation, 1 + config.saturation));
  r.grayscale = coin(rng, config.grayscale_prob);
  if (coin(rng, config.cutmix_prob)) {
    r.cutmix = square_box(h, w, uniform(rng, config.cutmix_area_min, config.cutmix_area_max), rng);
  }
  return r;
}

Tensor photometric(const AugmentRecord& record, const Tensor& image) {
  if (!record.photometric) return image.clone();
  if (image.rank() != 3 || image.dim(0) != 3) {
    throw ShapeError("photometric ops need an RGB [3,H,W] image, got " + shape_str(image.shape()));
  }
  const std::size_t n = static_cast<std::size_t>(image.dim(1)) * image.dim(2);
  std::vector<float> v = image.values();
  float* r = v.data();
  float* g = r + n;
  float* b = g + n;
  auto clamp01 = [](float x) { return std::clamp(x, 0.0f, 1.0f); };

  for (float& x : v) x = clamp01(x * record.brightness);

  double mean = 0;
  for (std::size_t i = 0; i < n; ++i) mean += luma(r[i], g[i], b[i]);
  const float m = static_cast<float>(mean / n);
  for (float& x : v) x = clamp01((x - m) * record.contrast + m);

  for (std::size_t i = 0; i < n; ++i) {
    const float y = luma(r[i], g[i], b[i]);
    r[i] = clamp01((r[i] - y) * record.saturation + y);
    g[i] = clamp01((g[i] - y) * record.saturation + y);
    b[i] = clamp01((b[i] - y) * record.saturation + y);
  }

  if (record.grayscale) {
    for (std::size_t i = 0; i < n; ++i) r[i] = g[i] = b[i] = luma(r[i], g[i], b[i]);
  }
  return Tensor::from(image.shape(), std::move(v));
}

Tensor paste(const Tensor& dst, const Tensor& src, const image::Box& box) {
  if (dst.shape() != src.shape()) {
    throw ShapeError("paste needs equal shapes: " + shape_str(dst.shape()) + " vs " +
                     shape_str(src.shape()));
  }
  Tensor out = dst.clone();
  if (box.area() == 0) return out;
  const int c = image::channels(dst), h = image::height(dst), w = image::width(dst);
  if (box.x < 0 || box.y < 0 || box.x + box.w > w || box.y + box.h > h) {
    throw std::invalid_argument("cutmix box outside the frame");
  }
  auto& o = out.values();
  const auto& s = src.values();
  for (int ch = 0; ch < c; ++ch)
    for (int y = box.y; y < box.y + box.h; ++y)
      for (int x = box.x; x < box.x + box.w; ++x) {
        const std::size_t i = (static_cast<std::size_t>(ch) * h + y) * w + x;
        o[i] = s[i];
      }
  return out;
}

Tensor mix_labels(const AugmentRecord& record, const Tensor& label_a, const Tensor& label_b) {
  return paste(label_a, label_b, record.cutmix);
}

StrongResult apply_strong(const AugmentRecord& record, const View& view_a, const Tensor& pseudo_a,
                          const View& view_b, const Tensor& pseudo_b) {
  check_same_size(view_a.image, view_b.image, "view");
  check_same_size(view_a.image, pseudo_a, "view/label");
  check_same_size(view_b.image, pseudo_b, "view/label");
  check_record(record, view_a.image);
  StrongResult out;
  out.record = record;
  out.view.image = paste(photometric(record, view_a.image), photometric(record, view_b.image),
                         record.cutmix);
  out.view.flow = paste(view_a.flow, view_b.flow, record.cutmix);
  out.label = mix_labels(record, pseudo_a, pseudo_b);
  return out;
}

StrongResult strong_augment(const View& view_a, const Tensor& pseudo_a, const View& view_b,
                            const Tensor& pseudo_b, const AugmentConfig& config,
                            std::mt19937_64& rng, int partner) {
  auto record = sample_strong(image::height(view_a.image), image::width(view_a.image), config, rng);
  if (record.cutmix.area() > 0) record.partner = partner;
  return apply_strong(record, view_a, pseudo_a, view_b, pseudo_b);
}

}  // namespace ufe::augment
