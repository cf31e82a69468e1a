#include "ufe/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ufe::image {

namespace {

struct Planar {
  int c, h, w;
};

Planar planar(const Tensor& t) {
  if (t.rank() == 3) return {t.dim(0), t.dim(1), t.dim(2)};
  if (t.rank() == 2) return {1, t.dim(0), t.dim(1)};
  throw ShapeError("expected [C,H,W] or [H,W] image, got " + shape_str(t.shape()));
}

Shape same_rank_shape(const Tensor& t, int c, int h, int w) {
  return t.rank() == 3 ? Shape{c, h, w} : Shape{h, w};
}

void check_box(const Box& box, int h, int w) {
  if (box.w <= 0 || box.h <= 0 || box.x < 0 || box.y < 0 || box.x + box.w > w ||
      box.y + box.h > h) {
    throw std::invalid_argument("crop box outside a " + std::to_string(w) + "x" +
                                std::to_string(h) + " image");
  }
}

std::vector<float> gaussian_kernel(double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<float> k(2 * radius + 1);
  double total = 0;
  for (int i = -radius; i <= radius; ++i) {
    const double v = std::exp(-0.5 * i * i / (sigma * sigma));
    k[i + radius] = static_cast<float>(v);
    total += v;
  }
  for (float& v : k) v = static_cast<float>(v / total);
  return k;
}

std::vector<float> separable(const std::vector<float>& plane, int h, int w,
                             const std::vector<float>& k) {
  const int r = static_cast<int>(k.size()) / 2;
  std::vector<float> tmp(plane.size()), out(plane.size());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      float acc = 0;
      for (int i = -r; i <= r; ++i) acc += k[i + r] * plane[y * w + std::clamp(x + i, 0, w - 1)];
      tmp[y * w + x] = acc;
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      float acc = 0;
      for (int i = -r; i <= r; ++i) acc += k[i + r] * tmp[std::clamp(y + i, 0, h - 1) * w + x];
      out[y * w + x] = acc;
    }
  return out;
}

}  // namespace

int channels(const Tensor& t) { return planar(t).c; }
int height(const Tensor& t) { return planar(t).h; }
int width(const Tensor& t) { return planar(t).w; }

float sample_bilinear(const float* plane, int h, int w, float x, float y) {
  x = std::clamp(x, 0.0f, static_cast<float>(w - 1));
  y = std::clamp(y, 0.0f, static_cast<float>(h - 1));
  const int x0 = static_cast<int>(x), y0 = static_cast<int>(y);
  const int x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
  const float fx = x - x0, fy = y - y0;
  const float top = plane[y0 * w + x0] + fx * (plane[y0 * w + x1] - plane[y0 * w + x0]);
  const float bot = plane[y1 * w + x0] + fx * (plane[y1 * w + x1] - plane[y1 * w + x0]);
  return top + fy * (bot - top);
}

Tensor crop_resize_bilinear(const Tensor& image, const Box& box, int out_h, int out_w) {
  const Planar p = planar(image);
  check_box(box, p.h, p.w);
  const float sx = static_cast<float>(box.w) / out_w, sy = static_cast<float>(box.h) / out_h;
  std::vector<float> out(static_cast<std::size_t>(p.c) * out_h * out_w);
  for (int c = 0; c < p.c; ++c) {
    const float* plane = image.values().data() + static_cast<std::size_t>(c) * p.h * p.w;
    for (int y = 0; y < out_h; ++y) {
      const float src_y = std::clamp(box.y + (y + 0.5f) * sy - 0.5f, static_cast<float>(box.y),
                                     static_cast<float>(box.y + box.h - 1));
      for (int x = 0; x < out_w; ++x) {
        const float src_x = std::clamp(box.x + (x + 0.5f) * sx - 0.5f, static_cast<float>(box.x),
                                       static_cast<float>(box.x + box.w - 1));
        out[(static_cast<std::size_t>(c) * out_h + y) * out_w + x] =
            sample_bilinear(plane, p.h, p.w, src_x, src_y);
      }
    }
  }
  return Tensor::from(same_rank_shape(image, p.c, out_h, out_w), std::move(out));
}

Tensor crop_resize_nearest(const Tensor& image, const Box& box, int out_h, int out_w) {
  const Planar p = planar(image);
  check_box(box, p.h, p.w);
  std::vector<int> xs(out_w), ys(out_h);
  for (int x = 0; x < out_w; ++x)
    xs[x] = box.x + std::min(box.w - 1, static_cast<int>((x + 0.5) * box.w / out_w));
  for (int y = 0; y < out_h; ++y)
    ys[y] = box.y + std::min(box.h - 1, static_cast<int>((y + 0.5) * box.h / out_h));
  std::vector<float> out(static_cast<std::size_t>(p.c) * out_h * out_w);
  for (int c = 0; c < p.c; ++c)
    for (int y = 0; y < out_h; ++y)
      for (int x = 0; x < out_w; ++x)
        out[(static_cast<std::size_t>(c) * out_h + y) * out_w + x] =
            image[(static_cast<std::size_t>(c) * p.h + ys[y]) * p.w + xs[x]];
  return Tensor::from(same_rank_shape(image, p.c, out_h, out_w), std::move(out));
}

Tensor resize_bilinear(const Tensor& image, int out_h, int out_w) {
  const Planar p = planar(image);
  return crop_resize_bilinear(image, Box{0, 0, p.w, p.h}, out_h, out_w);
}

Tensor hflip(const Tensor& image) {
  const Planar p = planar(image);
  std::vector<float> out(image.numel());
  for (int c = 0; c < p.c; ++c)
    for (int y = 0; y < p.h; ++y)
      for (int x = 0; x < p.w; ++x) {
        const std::size_t row = (static_cast<std::size_t>(c) * p.h + y) * p.w;
        out[row + x] = image[row + (p.w - 1 - x)];
      }
  return Tensor::from(image.shape(), std::move(out));
}

std::vector<float> gaussian_blur(const std::vector<float>& plane, int h, int w, double sigma) {
  if (sigma <= 0) return plane;
  return separable(plane, h, w, gaussian_kernel(sigma));
}

std::vector<float> box_blur(const std::vector<float>& plane, int h, int w, int size) {
  if (size < 1 || size % 2 == 0) throw std::invalid_argument("box_blur size must be odd");
  return separable(plane, h, w, std::vector<float>(size, 1.0f / size));
}

void write_png_rgb8(const std::string& path, int h, int w, const std::vector<std::uint8_t>& rgb) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(w);
  img.height = static_cast<png_uint_32>(h);
  img.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&img, path.c_str(), 0, rgb.data(), 0, nullptr)) {
    throw std::runtime_error("cannot write PNG " + path + ": " + img.message);
  }
}

void write_png(const std::string& path, const Tensor& image) {
  const Planar p = planar(image);
  if (p.c != 1 && p.c != 3) throw ShapeError("write_png needs 1 or 3 channels");
  std::vector<std::uint8_t> buf(static_cast<std::size_t>(p.c) * p.h * p.w);
  for (int y = 0; y < p.h; ++y)
    for (int x = 0; x < p.w; ++x)
      for (int c = 0; c < p.c; ++c) {
        const float v = image[(static_cast<std::size_t>(c) * p.h + y) * p.w + x];
        buf[(static_cast<std::size_t>(y) * p.w + x) * p.c + c] =
            static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
      }
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(p.w);
  img.height = static_cast<png_uint_32>(p.h);
  img.format = p.c == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&img, path.c_str(), 0, buf.data(), 0, nullptr)) {
    throw std::runtime_error("cannot write PNG " + path + ": " + img.message);
  }
}

Tensor read_png(const std::string& path) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) {
    throw std::runtime_error("cannot read PNG " + path + ": " + img.message);
  }
  img.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
    throw std::runtime_error("cannot decode PNG " + path + ": " + img.message);
  }
  const int h = static_cast<int>(img.height), w = static_cast<int>(img.width);
  std::vector<float> out(static_cast<std::size_t>(3) * h * w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        out[(static_cast<std::size_t>(c) * h + y) * w + x] =
            buf[(static_cast<std::size_t>(y) * w + x) * 3 + c] / 255.0f;
  return Tensor::from({3, h, w}, std::move(out));
}

}  // namespace ufe::image
