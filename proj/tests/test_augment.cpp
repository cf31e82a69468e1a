#include <gtest/gtest.h>

#include <cmath>

#include "support/textures.hpp"
#include "ufe/augment.hpp"
#include "ufe/dataset.hpp"

using namespace ufe;
using namespace ufe::augment;

namespace {

Tensor constant_flow(int h, int w, float dx, float dy) {
  std::vector<float> v(2 * h * w);
  std::fill(v.begin(), v.begin() + h * w, dx);
  std::fill(v.begin() + h * w, v.end(), dy);
  return Tensor::from({2, h, w}, std::move(v));
}

Tensor random_image(int c, int h, int w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0, 1);
  std::vector<float> v(c * h * w);
  for (float& x : v) x = u(rng);
  return c == 1 ? Tensor::from({h, w}, std::move(v)) : Tensor::from({c, h, w}, std::move(v));
}

Tensor binary_mask(int h, int w, std::uint64_t seed) {
  auto m = random_image(1, h, w, seed);
  for (float& x : m.values()) x = x > 0.5f ? 1.0f : 0.0f;
  return m;
}

// Nearest-neighbour source index written out independently of the library.
int source_index(int out, int out_size, int start, int size) {
  const double centre = (out + 0.5) * size / out_size;
  return start + std::min(size - 1, static_cast<int>(std::floor(centre)));
}

}  // namespace

TEST(WeakAugment, IdentityRecordReturnsInput) {
  View in{random_image(3, 16, 20, 1), constant_flow(16, 20, 1.5f, -2.0f), binary_mask(16, 20, 2)};
  auto out = apply_weak(AugmentRecord::identity(16, 20), in);
  EXPECT_EQ(out.image.values(), in.image.values());
  EXPECT_EQ(out.flow.values(), in.flow.values());
  EXPECT_EQ(out.mask->values(), in.mask->values());
}

TEST(WeakAugment, ForcedIdentityThroughConfig) {
  AugmentConfig cfg;
  cfg.crop_scale_min = cfg.crop_scale_max = 1.0;
  cfg.hflip_prob = 0.0;
  std::mt19937_64 rng(3);
  View in{random_image(3, 16, 16, 1), constant_flow(16, 16, 1, 1), std::nullopt};
  auto [out, record] = weak_augment(in, cfg, rng);
  EXPECT_EQ(record, AugmentRecord::identity(16, 16));
  EXPECT_EQ(out.image.values(), in.image.values());
}

TEST(WeakAugment, HflipIsAnInvolution) {
  auto record = AugmentRecord::identity(12, 17);
  record.hflip = true;
  View in{random_image(3, 12, 17, 4), constant_flow(12, 17, 0.25f, 0.5f), binary_mask(12, 17, 5)};
  auto twice = apply_weak(record, apply_weak(record, in));
  EXPECT_EQ(twice.image.values(), in.image.values());
  EXPECT_EQ(twice.flow.values(), in.flow.values());
  EXPECT_EQ(twice.mask->values(), in.mask->values());
}

TEST(WeakAugment, HflipNegatesFlowDx) {
  auto record = AugmentRecord::identity(10, 10);
  record.hflip = true;
  View in{random_image(3, 10, 10, 6), constant_flow(10, 10, 3, 1), std::nullopt};
  auto out = apply_weak(record, in);
  for (int i = 0; i < 100; ++i) {
    EXPECT_EQ(out.flow[i], -3.0f);
    EXPECT_EQ(out.flow[100 + i], 1.0f);
  }
}

TEST(WeakAugment, CropRescalesFlow) {
  auto record = AugmentRecord::identity(32, 32);
  record.crop = {4, 6, 16, 16};
  View in{random_image(3, 32, 32, 7), constant_flow(32, 32, 2, -1), std::nullopt};
  auto out = apply_weak(record, in);
  for (int i = 0; i < 32 * 32; ++i) {
    EXPECT_FLOAT_EQ(out.flow[i], 4.0f);
    EXPECT_FLOAT_EQ(out.flow[32 * 32 + i], -2.0f);
  }
}

TEST(WeakAugment, HflipMirrorsAsymmetricMask) {
  Tensor mask = Tensor::zeros({4, 6});
  mask.values()[0 * 6 + 0] = 1;
  mask.values()[1 * 6 + 1] = 1;
  mask.values()[3 * 6 + 2] = 1;
  auto record = AugmentRecord::identity(4, 6);
  record.hflip = true;
  auto out = replay(record, mask);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 6; ++x) EXPECT_EQ(out[y * 6 + x], mask[y * 6 + (5 - x)]);
}

TEST(WeakAugment, RecordSizeMismatchIsRejected) {
  EXPECT_THROW(replay(AugmentRecord::identity(8, 8), Tensor::zeros({8, 9})), ShapeError);
  View in{random_image(3, 8, 8, 1), constant_flow(8, 9, 0, 0), std::nullopt};
  EXPECT_THROW(apply_weak(AugmentRecord::identity(8, 8), in), ShapeError);
}

TEST(WeakAugment, CropStaysInBoundsAndCoversScaleRange) {
  AugmentConfig cfg;
  std::mt19937_64 rng(11);
  int flips = 0;
  double min_area = 1, max_area = 0;
  for (int i = 0; i < 2000; ++i) {
    auto r = sample_weak(64, 64, cfg, rng);
    ASSERT_GE(r.crop.x, 0);
    ASSERT_GE(r.crop.y, 0);
    ASSERT_LE(r.crop.x + r.crop.w, 64);
    ASSERT_LE(r.crop.y + r.crop.h, 64);
    const double area = r.crop.area() / (64.0 * 64.0);
    min_area = std::min(min_area, area);
    max_area = std::max(max_area, area);
    flips += r.hflip;
  }
  EXPECT_GE(min_area, 0.69);
  EXPECT_LT(min_area, 0.72);
  EXPECT_DOUBLE_EQ(max_area, 1.0);
  EXPECT_NEAR(flips / 2000.0, 0.5, 3 * std::sqrt(0.25 / 2000));
}

TEST(ReplayVsJoint, SyntheticMasksOnHundredRecords) {
  data::DatasetConfig dcfg;
  dcfg.image_size = 64;
  AugmentConfig cfg;
  std::mt19937_64 rng(2024);
  for (int i = 0; i < 100; ++i) {
    auto clip = data::generate_clip(static_cast<std::uint64_t>(i), dcfg);
    const Tensor& mask = *clip.masks[0];
    View in{clip.frames[0], constant_flow(64, 64, 0, 0), mask};
    auto [view, record] = weak_augment(in, cfg, rng);
    const Tensor replayed = replay(record, mask);
    ASSERT_EQ(replayed.values(), view.mask->values()) << "record " << i;
    // Independent mapping of each output pixel back to its source pixel.
    for (int y = 0; y < 64; ++y)
      for (int x = 0; x < 64; ++x) {
        const int xo = record.hflip ? 63 - x : x;
        const int sx = source_index(xo, 64, record.crop.x, record.crop.w);
        const int sy = source_index(y, 64, record.crop.y, record.crop.h);
        ASSERT_EQ(replayed[y * 64 + x], mask[sy * 64 + sx]) << "record " << i;
      }
  }
}

TEST(StrongAugment, PhotometricLeavesFlowAndLabelsUntouched) {
  AugmentConfig cfg;
  cfg.cutmix_prob = 0.0;
  cfg.grayscale_prob = 1.0;
  std::mt19937_64 rng(5);
  View a{random_image(3, 16, 16, 1), constant_flow(16, 16, 1, 2), std::nullopt};
  View b{random_image(3, 16, 16, 2), constant_flow(16, 16, -1, 0), std::nullopt};
  auto pa = binary_mask(16, 16, 3), pb = binary_mask(16, 16, 4);
  auto out = strong_augment(a, pa, b, pb, cfg, rng);
  EXPECT_EQ(out.record.cutmix.area(), 0);
  EXPECT_EQ(out.label.values(), pa.values());
  EXPECT_EQ(out.view.flow.values(), a.flow.values());
  EXPECT_EQ(out.view.image.values(), photometric(out.record, a.image).values());
  const int n = 256;
  for (int i = 0; i < n; ++i) {
    EXPECT_EQ(out.view.image[i], out.view.image[n + i]);
    EXPECT_EQ(out.view.image[i], out.view.image[2 * n + i]);
  }
  for (float v : out.view.image.values()) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
}

TEST(StrongAugment, PhotometricIdentityFactors) {
  auto r = AugmentRecord::identity(8, 8);
  r.photometric = true;
  auto img = random_image(3, 8, 8, 9);
  auto out = photometric(r, img);
  for (int i = 0; i < img.numel(); ++i) EXPECT_NEAR(out[i], img[i], 1e-6);
}

TEST(StrongAugment, BrightnessMatchesHandComputedValue) {
  auto r = AugmentRecord::identity(1, 2);
  r.photometric = true;
  r.brightness = 1.4f;
  auto img = Tensor::from({3, 1, 2}, {0.5f, 0.9f, 0.5f, 0.9f, 0.5f, 0.9f});
  auto out = photometric(r, img);
  // Grey pixels: contrast and saturation at factor 1 leave them unchanged.
  EXPECT_NEAR(out[0], 0.7f, 1e-6);
  EXPECT_NEAR(out[1], 1.0f, 1e-6);
}

TEST(StrongAugment, FullFrameCutmixReplacesEverything) {
  auto r = AugmentRecord::identity(16, 16);
  r.cutmix = {0, 0, 16, 16};
  View a{random_image(3, 16, 16, 1), constant_flow(16, 16, 1, 2), std::nullopt};
  View b{random_image(3, 16, 16, 2), constant_flow(16, 16, -1, 0), std::nullopt};
  auto pa = binary_mask(16, 16, 3), pb = binary_mask(16, 16, 4);
  auto out = apply_strong(r, a, pa, b, pb);
  EXPECT_EQ(out.label.values(), pb.values());
  EXPECT_EQ(out.view.flow.values(), b.flow.values());
  EXPECT_EQ(out.view.image.values(), b.image.values());
}

TEST(StrongAugment, QuarterBoxMatchesRegionOracle) {
  const int s = 32;
  auto r = AugmentRecord::identity(s, s);
  r.cutmix = {5, 9, 16, 16};
  ASSERT_DOUBLE_EQ(r.cutmix.area() / double(s * s), 0.25);
  View a{random_image(3, s, s, 1), constant_flow(s, s, 1, 2), std::nullopt};
  View b{random_image(3, s, s, 2), constant_flow(s, s, -1, 0), std::nullopt};
  auto pa = binary_mask(s, s, 3), pb = binary_mask(s, s, 4);
  auto out = apply_strong(r, a, pa, b, pb);
  int inside = 0;
  for (int y = 0; y < s; ++y)
    for (int x = 0; x < s; ++x) {
      const bool in = x >= 5 && x < 21 && y >= 9 && y < 25;
      inside += in;
      const int i = y * s + x;
      EXPECT_EQ(out.label[i], in ? pb[i] : pa[i]);
      EXPECT_EQ(out.view.flow[i], in ? -1.0f : 1.0f);
      EXPECT_EQ(out.view.flow[s * s + i], in ? 0.0f : 2.0f);
      for (int c = 0; c < 3; ++c)
        EXPECT_EQ(out.view.image[c * s * s + i], (in ? b : a).image[c * s * s + i]);
    }
  EXPECT_EQ(inside, s * s / 4);
}

TEST(StrongAugment, SampledCutmixAreaAndRate) {
  AugmentConfig cfg;
  std::mt19937_64 rng(8);
  int mixed = 0, gray = 0;
  const int n = 2000;
  for (int i = 0; i < n; ++i) {
    auto r = sample_strong(64, 64, cfg, rng);
    gray += r.grayscale;
    EXPECT_GE(r.brightness, 0.6f);
    EXPECT_LE(r.brightness, 1.4f);
    if (r.cutmix.area() == 0) continue;
    ++mixed;
    const double frac = r.cutmix.area() / (64.0 * 64.0);
    EXPECT_GE(frac, 0.09);
    EXPECT_LE(frac, 0.41);
    EXPECT_LE(r.cutmix.x + r.cutmix.w, 64);
    EXPECT_LE(r.cutmix.y + r.cutmix.h, 64);
  }
  EXPECT_NEAR(mixed / double(n), 0.5, 3 * std::sqrt(0.25 / n));
  EXPECT_NEAR(gray / double(n), 0.2, 3 * std::sqrt(0.16 / n));
}

TEST(StrongAugment, MismatchedViewsAreRejected) {
  AugmentConfig cfg;
  std::mt19937_64 rng(1);
  View a{random_image(3, 16, 16, 1), constant_flow(16, 16, 0, 0), std::nullopt};
  View b{random_image(3, 8, 8, 2), constant_flow(8, 8, 0, 0), std::nullopt};
  EXPECT_THROW(strong_augment(a, binary_mask(16, 16, 1), b, binary_mask(8, 8, 1), cfg, rng),
               ShapeError);
}

TEST(AugmentConfig, Validation) {
  AugmentConfig c;
  EXPECT_NO_THROW(c.validate());
  c.crop_scale_min = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = {};
  c.cutmix_prob = 1.5;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}
