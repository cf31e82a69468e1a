#pragma once

// Dense two-frame motion estimation with Farneback's polynomial-expansion method.
//
// Every pixel neighbourhood is approximated by f(x) ~ x^T A x + b^T x + c. If
// the second frame is the first displaced by d, then b2 = b1 - 2 A d, so d is
// recovered from windowed least squares over (A, delta b). Estimation runs
// coarse-to-fine on a Gaussian pyramid.

#include <cstdint>
#include <vector>

#include "ufe/tensor.hpp"

namespace ufe::flow {

struct FarnebackParams {
  double pyramid_scale = 0.5;
  int levels = 3;
  int window_size = 15;
  int iterations = 3;
  int poly_n = 5;
  double poly_sigma = 1.1;

  void validate() const;
};

// Displacement (dx, dy) in pixels from frame a to frame b:
// a(x, y) ~ b(x + dx, y + dy).
struct FlowField {
  int width = 0;
  int height = 0;
  std::vector<float> dx, dy;

  static FlowField zeros(int height, int width);
  // [2, H, W] tensor with both channels divided by `normalizer`.
  Tensor to_tensor(float normalizer = 1.0f) const;
  static FlowField from_tensor(const Tensor& t, float normalizer = 1.0f);
  double mean_magnitude() const;
  bool finite() const;
};

// Per-pixel quadratic model f(x0 + u) ~ u^T A u + b^T u + c.
struct PolyExpansion {
  int width = 0;
  int height = 0;
  std::vector<float> a11, a12, a22, b1, b2, c;
};

// Scale divisor applied to flow before it enters the network: 0.1 * min(H, W).
float flow_normalizer(int height, int width);

Tensor to_grayscale(const Tensor& image);

std::vector<Tensor> gaussian_pyramid(const Tensor& gray, const FarnebackParams& params);

PolyExpansion poly_expansion(const Tensor& gray, int poly_n, double poly_sigma);

FlowField farneback_flow(const Tensor& frame_a, const Tensor& frame_b,
                         const FarnebackParams& params = {});

// Backward warp: out(x) = image(x + flow(x)), bilinear with border clamping.
Tensor warp(const Tensor& image, const FlowField& flow);

struct FlowStats {
  double mean_magnitude = 0;
  double max_magnitude = 0;
  double p95_magnitude = 0;
  double mean_dx = 0;
  double mean_dy = 0;
};

FlowStats flow_stats(const FlowField& flow);

// HSV colour wheel: hue = direction (0 deg = +x, red), saturation 1,
// value = magnitude / max(p95, 1 px) clipped to 1. Interleaved RGB8.
std::vector<std::uint8_t> flow_to_rgb(const FlowField& flow);

}  // namespace ufe::flow
