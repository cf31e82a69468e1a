#pragma once

// Non-differentiable raster helpers over [C, H, W] tensors (masks are [H, W]).

#include <cstdint>
#include <string>
#include <vector>

#include "ufe/tensor.hpp"

namespace ufe::image {

struct Box {
  int x = 0, y = 0, w = 0, h = 0;
  bool operator==(const Box&) const = default;
  int area() const { return w * h; }
};

int channels(const Tensor& t);
int height(const Tensor& t);
int width(const Tensor& t);

// Bilinear resample of the region `box` to out_h x out_w (pixel-center convention).
Tensor crop_resize_bilinear(const Tensor& image, const Box& box, int out_h, int out_w);
// Nearest-neighbour variant; exact for label maps.
Tensor crop_resize_nearest(const Tensor& image, const Box& box, int out_h, int out_w);
Tensor resize_bilinear(const Tensor& image, int out_h, int out_w);

Tensor hflip(const Tensor& image);

// Samples plane `c` at real coordinates with border clamping.
float sample_bilinear(const float* plane, int h, int w, float x, float y);

// Separable Gaussian blur with replicated borders.
std::vector<float> gaussian_blur(const std::vector<float>& plane, int h, int w, double sigma);
// Normalised box filter of odd size with replicated borders.
std::vector<float> box_blur(const std::vector<float>& plane, int h, int w, int size);

// PNG IO through libpng. Images are [C, H, W] in [0,1]; C = 1 or 3.
void write_png(const std::string& path, const Tensor& image);
Tensor read_png(const std::string& path);
void write_png_rgb8(const std::string& path, int h, int w, const std::vector<std::uint8_t>& rgb);

}  // namespace ufe::image
