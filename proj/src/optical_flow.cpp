#include "ufe/optical_flow.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>
#include <string>

#include "ufe/image.hpp"

namespace ufe::flow {

namespace {

constexpr double kSingularDet = 1e-9;
constexpr int kMinLevelSide = 8;

std::vector<float> correlate_rows(const std::vector<float>& src, int h, int w,
                                  const std::vector<float>& k) {
  const int r = static_cast<int>(k.size()) / 2;
  std::vector<float> out(src.size(), 0.0f);
  for (int y = 0; y < h; ++y)
    for (int x = r; x < w - r; ++x) {
      float acc = 0;
      for (int i = -r; i <= r; ++i) acc += k[i + r] * src[y * w + x + i];
      out[y * w + x] = acc;
    }
  return out;
}

std::vector<float> correlate_cols(const std::vector<float>& src, int h, int w,
                                  const std::vector<float>& k) {
  const int r = static_cast<int>(k.size()) / 2;
  std::vector<float> out(src.size(), 0.0f);
  for (int y = r; y < h - r; ++y)
    for (int x = 0; x < w; ++x) {
      float acc = 0;
      for (int i = -r; i <= r; ++i) acc += k[i + r] * src[(y + i) * w + x];
      out[y * w + x] = acc;
    }
  return out;
}

// Sample every expansion coefficient at a displaced position.
struct Coeffs {
  float a11, a12, a22, b1, b2;
};

Coeffs sample_coeffs(const PolyExpansion& p, float x, float y) {
  const int h = p.height, w = p.width;
  return {image::sample_bilinear(p.a11.data(), h, w, x, y),
          image::sample_bilinear(p.a12.data(), h, w, x, y),
          image::sample_bilinear(p.a22.data(), h, w, x, y),
          image::sample_bilinear(p.b1.data(), h, w, x, y),
          image::sample_bilinear(p.b2.data(), h, w, x, y)};
}

// Ramp that fades out the outermost pixels, whose expansion is extrapolated.
float border_weight(int i, int n) {
  static constexpr float kRamp[] = {0.14f, 0.14f, 0.4472f, 0.8208f, 0.9542f};
  const int d = std::min(i, n - 1 - i);
  return d < 5 ? kRamp[d] : 1.0f;
}

FlowField resize_flow(const FlowField& flow, int height, int width) {
  const Tensor t = image::resize_bilinear(flow.to_tensor(), height, width);
  FlowField out = FlowField::from_tensor(t);
  const float sx = static_cast<float>(width) / flow.width;
  const float sy = static_cast<float>(height) / flow.height;
  for (float& v : out.dx) v *= sx;
  for (float& v : out.dy) v *= sy;
  return out;
}

void update_flow(const PolyExpansion& r0, const PolyExpansion& r1, const FarnebackParams& params,
                 FlowField& flow) {
  const int h = r0.height, w = r0.width;
  const std::size_t n = static_cast<std::size_t>(h) * w;
  // Normal equations (A^T A) d = A^T delta_b, one entry per plane.
  std::array<std::vector<float>, 5> m;
  for (auto& plane : m) plane.assign(n, 0.0f);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      const float dx = flow.dx[i], dy = flow.dy[i];
      const float fx = x + dx, fy = y + dy;
      // Displaced samples outside the frame carry no information.
      if (fx < 0 || fy < 0 || fx > w - 1 || fy > h - 1) continue;
      const float wgt = border_weight(x, w) * border_weight(y, h);
      const Coeffs c1 = sample_coeffs(r1, fx, fy);
      const float a11 = 0.5f * (r0.a11[i] + c1.a11);
      const float a12 = 0.5f * (r0.a12[i] + c1.a12);
      const float a22 = 0.5f * (r0.a22[i] + c1.a22);
      const float db1 = 0.5f * (r0.b1[i] - c1.b1) + a11 * dx + a12 * dy;
      const float db2 = 0.5f * (r0.b2[i] - c1.b2) + a12 * dx + a22 * dy;
      m[0][i] = wgt * (a11 * a11 + a12 * a12);
      m[1][i] = wgt * (a12 * (a11 + a22));
      m[2][i] = wgt * (a12 * a12 + a22 * a22);
      m[3][i] = wgt * (a11 * db1 + a12 * db2);
      m[4][i] = wgt * (a12 * db1 + a22 * db2);
    }
  for (auto& plane : m) plane = image::box_blur(plane, h, w, params.window_size);
  for (std::size_t i = 0; i < n; ++i) {
    const double g11 = m[0][i], g12 = m[1][i], g22 = m[2][i];
    const double det = g11 * g22 - g12 * g12;
    if (std::abs(det) < kSingularDet) {
      flow.dx[i] = 0.0f;
      flow.dy[i] = 0.0f;
      continue;
    }
    flow.dx[i] = static_cast<float>((g22 * m[3][i] - g12 * m[4][i]) / det);
    flow.dy[i] = static_cast<float>((g11 * m[4][i] - g12 * m[3][i]) / det);
  }
}

void require_frame(const Tensor& t, const char* what) {
  if (t.rank() != 3 || t.dim(0) != 3) {
    throw ShapeError(std::string(what) + ": expected [3,H,W] image, got " + shape_str(t.shape()));
  }
}

}  // namespace

void FarnebackParams::validate() const {
  if (!(pyramid_scale > 0.0 && pyramid_scale < 1.0))
    throw std::invalid_argument("pyramid_scale must lie in (0,1)");
  if (levels < 1) throw std::invalid_argument("levels must be >= 1");
  if (window_size < 1 || window_size % 2 == 0)
    throw std::invalid_argument("window_size must be a positive odd integer");
  if (iterations < 1) throw std::invalid_argument("iterations must be >= 1");
  if (poly_n < 3 || poly_n % 2 == 0) throw std::invalid_argument("poly_n must be odd and >= 3");
  if (!(poly_sigma > 0.0)) throw std::invalid_argument("poly_sigma must be > 0");
}

FlowField FlowField::zeros(int height, int width) {
  FlowField f;
  f.height = height;
  f.width = width;
  f.dx.assign(static_cast<std::size_t>(height) * width, 0.0f);
  f.dy.assign(static_cast<std::size_t>(height) * width, 0.0f);
  return f;
}

Tensor FlowField::to_tensor(float normalizer) const {
  std::vector<float> v;
  v.reserve(dx.size() * 2);
  for (float x : dx) v.push_back(x / normalizer);
  for (float y : dy) v.push_back(y / normalizer);
  return Tensor::from({2, height, width}, std::move(v));
}

FlowField FlowField::from_tensor(const Tensor& t, float normalizer) {
  if (t.rank() != 3 || t.dim(0) != 2) {
    throw ShapeError("flow tensor must be [2,H,W], got " + shape_str(t.shape()));
  }
  FlowField f;
  f.height = t.dim(1);
  f.width = t.dim(2);
  const std::size_t n = static_cast<std::size_t>(f.height) * f.width;
  f.dx.assign(t.values().begin(), t.values().begin() + n);
  f.dy.assign(t.values().begin() + n, t.values().end());
  for (float& v : f.dx) v *= normalizer;
  for (float& v : f.dy) v *= normalizer;
  return f;
}

double FlowField::mean_magnitude() const {
  if (dx.empty()) return 0.0;
  double acc = 0;
  for (std::size_t i = 0; i < dx.size(); ++i) acc += std::hypot(dx[i], dy[i]);
  return acc / dx.size();
}

bool FlowField::finite() const {
  for (std::size_t i = 0; i < dx.size(); ++i)
    if (!std::isfinite(dx[i]) || !std::isfinite(dy[i])) return false;
  return true;
}

float flow_normalizer(int height, int width) {
  return 0.1f * static_cast<float>(std::min(height, width));
}

Tensor to_grayscale(const Tensor& image) {
  require_frame(image, "to_grayscale");
  const int h = image.dim(1), w = image.dim(2);
  const std::size_t n = static_cast<std::size_t>(h) * w;
  std::vector<float> out(n);
  const float* px = image.values().data();
  for (std::size_t i = 0; i < n; ++i)
    out[i] = 0.299f * px[i] + 0.587f * px[n + i] + 0.114f * px[2 * n + i];
  return Tensor::from({1, h, w}, std::move(out));
}

std::vector<Tensor> gaussian_pyramid(const Tensor& gray, const FarnebackParams& params) {
  params.validate();
  if (gray.rank() != 3 || gray.dim(0) != 1) {
    throw ShapeError("gaussian_pyramid: expected [1,H,W], got " + shape_str(gray.shape()));
  }
  std::vector<Tensor> levels{gray};
  int h = gray.dim(1), w = gray.dim(2);
  for (int level = 1; level < params.levels; ++level) {
    const int nh = static_cast<int>(std::lround(h * params.pyramid_scale));
    const int nw = static_cast<int>(std::lround(w * params.pyramid_scale));
    if (nh < kMinLevelSide || nw < kMinLevelSide) {
      throw std::invalid_argument("frame " + std::to_string(gray.dim(2)) + "x" +
                                  std::to_string(gray.dim(1)) + " too small for " +
                                  std::to_string(params.levels) + " pyramid levels");
    }
    const double sigma = 0.5 / params.pyramid_scale;
    std::vector<float> blurred = image::gaussian_blur(levels.back().values(), h, w, sigma);
    levels.push_back(image::resize_bilinear(Tensor::from({1, h, w}, std::move(blurred)), nh, nw));
    h = nh;
    w = nw;
  }
  return levels;
}

PolyExpansion poly_expansion(const Tensor& gray, int poly_n, double poly_sigma) {
  if (poly_n < 3 || poly_n % 2 == 0) throw std::invalid_argument("poly_n must be odd and >= 3");
  if (gray.rank() != 3 || gray.dim(0) != 1) {
    throw ShapeError("poly_expansion: expected [1,H,W], got " + shape_str(gray.shape()));
  }
  const int h = gray.dim(1), w = gray.dim(2);
  if (poly_n > std::min(h, w)) {
    throw std::invalid_argument("poly_n " + std::to_string(poly_n) + " exceeds image side");
  }
  const int r = poly_n / 2;

  // Applicability-weighted moment kernels g(t), t g(t), t^2 g(t).
  std::vector<float> g(poly_n), tg(poly_n), ttg(poly_n);
  for (int t = -r; t <= r; ++t) {
    const double v = std::exp(-0.5 * t * t / (poly_sigma * poly_sigma));
    g[t + r] = static_cast<float>(v);
    tg[t + r] = static_cast<float>(t * v);
    ttg[t + r] = static_cast<float>(t * t * v);
  }
  // Gram matrix of the basis {1, u, v, u^2, v^2, uv} under the applicability.
  Eigen::Matrix<double, 6, 6> gram = Eigen::Matrix<double, 6, 6>::Zero();
  for (int v = -r; v <= r; ++v)
    for (int u = -r; u <= r; ++u) {
      const double wgt = static_cast<double>(g[u + r]) * g[v + r];
      Eigen::Matrix<double, 6, 1> basis;
      basis << 1, u, v, u * u, v * v, u * v;
      gram += wgt * basis * basis.transpose();
    }
  const Eigen::Matrix<double, 6, 6> gram_inv = gram.inverse();

  const std::vector<float>& f = gray.values();
  const auto h0 = correlate_rows(f, h, w, g);
  const auto h1 = correlate_rows(f, h, w, tg);
  const auto h2 = correlate_rows(f, h, w, ttg);
  std::array<std::vector<float>, 6> moments = {
      correlate_cols(h0, h, w, g),   correlate_cols(h1, h, w, g),  correlate_cols(h0, h, w, tg),
      correlate_cols(h2, h, w, g),   correlate_cols(h0, h, w, ttg), correlate_cols(h1, h, w, tg)};

  PolyExpansion out;
  out.width = w;
  out.height = h;
  const std::size_t n = static_cast<std::size_t>(h) * w;
  for (auto* plane : {&out.a11, &out.a12, &out.a22, &out.b1, &out.b2, &out.c}) plane->assign(n, 0.0f);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      // Border pixels inherit the nearest pixel whose window fits.
      const int sy = std::clamp(y, r, h - 1 - r), sx = std::clamp(x, r, w - 1 - r);
      const std::size_t src = static_cast<std::size_t>(sy) * w + sx;
      Eigen::Matrix<double, 6, 1> rhs;
      for (int k = 0; k < 6; ++k) rhs[k] = moments[k][src];
      const Eigen::Matrix<double, 6, 1> p = gram_inv * rhs;
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      out.c[i] = static_cast<float>(p[0]);
      out.b1[i] = static_cast<float>(p[1]);
      out.b2[i] = static_cast<float>(p[2]);
      out.a11[i] = static_cast<float>(p[3]);
      out.a22[i] = static_cast<float>(p[4]);
      out.a12[i] = static_cast<float>(0.5 * p[5]);
    }
  return out;
}

FlowField farneback_flow(const Tensor& frame_a, const Tensor& frame_b,
                         const FarnebackParams& params) {
  params.validate();
  require_frame(frame_a, "farneback_flow");
  require_frame(frame_b, "farneback_flow");
  if (frame_a.shape() != frame_b.shape()) {
    throw ShapeError("farneback_flow: frame shapes differ " + shape_str(frame_a.shape()) + " vs " +
                     shape_str(frame_b.shape()));
  }
  if (frame_a.dim(1) < 32 || frame_a.dim(2) < 32) {
    throw std::invalid_argument("farneback_flow: frames must be at least 32x32");
  }
  const auto pyr_a = gaussian_pyramid(to_grayscale(frame_a), params);
  const auto pyr_b = gaussian_pyramid(to_grayscale(frame_b), params);

  FlowField flow;
  for (int level = params.levels - 1; level >= 0; --level) {
    const int h = pyr_a[level].dim(1), w = pyr_a[level].dim(2);
    flow = flow.dx.empty() ? FlowField::zeros(h, w) : resize_flow(flow, h, w);
    const PolyExpansion r0 = poly_expansion(pyr_a[level], params.poly_n, params.poly_sigma);
    const PolyExpansion r1 = poly_expansion(pyr_b[level], params.poly_n, params.poly_sigma);
    for (int it = 0; it < params.iterations; ++it) update_flow(r0, r1, params, flow);
  }
  return flow;
}

Tensor warp(const Tensor& image, const FlowField& flow) {
  if (image.rank() != 3 || image.dim(1) != flow.height || image.dim(2) != flow.width) {
    throw ShapeError("warp: image " + shape_str(image.shape()) + " does not match flow " +
                     std::to_string(flow.width) + "x" + std::to_string(flow.height));
  }
  const int c = image.dim(0), h = flow.height, w = flow.width;
  std::vector<float> out(image.numel());
  for (int ch = 0; ch < c; ++ch) {
    const float* plane = image.values().data() + static_cast<std::size_t>(ch) * h * w;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const std::size_t i = static_cast<std::size_t>(y) * w + x;
        out[static_cast<std::size_t>(ch) * h * w + i] =
            image::sample_bilinear(plane, h, w, x + flow.dx[i], y + flow.dy[i]);
      }
  }
  return Tensor::from(image.shape(), std::move(out));
}

FlowStats flow_stats(const FlowField& flow) {
  FlowStats s;
  if (flow.dx.empty()) return s;
  std::vector<double> mags(flow.dx.size());
  for (std::size_t i = 0; i < mags.size(); ++i) {
    mags[i] = std::hypot(flow.dx[i], flow.dy[i]);
    s.mean_magnitude += mags[i];
    s.mean_dx += flow.dx[i];
    s.mean_dy += flow.dy[i];
    s.max_magnitude = std::max(s.max_magnitude, mags[i]);
  }
  const double n = static_cast<double>(mags.size());
  s.mean_magnitude /= n;
  s.mean_dx /= n;
  s.mean_dy /= n;
  const std::size_t k = std::min(mags.size() - 1, static_cast<std::size_t>(0.95 * n));
  std::nth_element(mags.begin(), mags.begin() + k, mags.end());
  s.p95_magnitude = mags[k];
  return s;
}

std::vector<std::uint8_t> flow_to_rgb(const FlowField& flow) {
  const double norm = std::max(flow_stats(flow).p95_magnitude, 1.0);
  std::vector<std::uint8_t> rgb(flow.dx.size() * 3);
  for (std::size_t i = 0; i < flow.dx.size(); ++i) {
    double hue = std::atan2(flow.dy[i], flow.dx[i]) * 180.0 / M_PI;
    if (hue < 0) hue += 360.0;
    const double value = std::min(1.0, std::hypot(flow.dx[i], flow.dy[i]) / norm);
    const double sector = hue / 60.0;
    const int k = static_cast<int>(sector) % 6;
    const double frac = sector - std::floor(sector);
    const double p = 0.0, q = value * (1 - frac), t = value * frac;
    double r = 0, g = 0, b = 0;
    switch (k) {
      case 0: r = value; g = t; b = p; break;
      case 1: r = q; g = value; b = p; break;
      case 2: r = p; g = value; b = t; break;
      case 3: r = p; g = q; b = value; break;
      case 4: r = t; g = p; b = value; break;
      default: r = value; g = p; b = q; break;
    }
    rgb[3 * i] = static_cast<std::uint8_t>(std::lround(r * 255));
    rgb[3 * i + 1] = static_cast<std::uint8_t>(std::lround(g * 255));
    rgb[3 * i + 2] = static_cast<std::uint8_t>(std::lround(b * 255));
  }
  return rgb;
}

}  // namespace ufe::flow
