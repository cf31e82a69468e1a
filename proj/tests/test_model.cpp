#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <set>
#include <unistd.h>

#include "support/gradcheck.hpp"
#include "ufe/blob.hpp"
#include "ufe/checkpoint.hpp"
#include "ufe/model.hpp"
#include "ufe/ops.hpp"

using namespace ufe;
using namespace ufe::model;
using oracle::DTensor;

namespace {

Tensor random_input(const Shape& shape, std::uint64_t seed, float lo = 0, float hi = 1) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(lo, hi);
  std::vector<float> v(shape_numel(shape));
  for (float& x : v) x = u(rng);
  return Tensor::from(shape, std::move(v));
}

template <class T>
void randomize(BasicModel<T>& m, std::uint64_t seed, double scale = 0.3) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-scale, scale);
  for (auto& p : m.params())
    for (auto& v : p.value.values()) v = static_cast<T>(u(rng));
}

bool all_finite(const Tensor& t) {
  for (float v : t.values())
    if (!std::isfinite(v)) return false;
  return true;
}

bool all_zero(const Tensor& t) {
  for (float v : t.values())
    if (v != 0.0f) return false;
  return true;
}

}  // namespace

TEST(Model, ParameterBudgetAndNames) {
  Model m(ModelConfig{}, 0);
  EXPECT_LT(m.parameter_count(), 2'000'000u);
  std::set<std::string> names;
  for (const auto& p : m.params()) {
    EXPECT_TRUE(names.insert(p.name).second) << p.name;
    EXPECT_TRUE(all_finite(p.value));
    EXPECT_TRUE(p.value.requires_grad());
  }
}

TEST(Model, InitialisationIsSeeded) {
  Model a(ModelConfig{}, 5), b(ModelConfig{}, 5), c(ModelConfig{}, 6);
  EXPECT_EQ(a.param("img.s1.c1.w").values(), b.param("img.s1.c1.w").values());
  EXPECT_NE(a.param("img.s1.c1.w").values(), c.param("img.s1.c1.w").values());
  const double bound = std::sqrt(1.0 / 27);
  for (float v : a.param("img.s1.c1.w").values()) EXPECT_LE(std::abs(v), bound);
  EXPECT_TRUE(all_zero(a.param("img.s1.c1.b")));
}

TEST(EncodeImage, StageGeometry) {
  Model m(ModelConfig{}, 1);
  auto f = m.encode_image(random_input({3, 64, 64}, 1));
  ASSERT_EQ(f.size(), 4u);
  EXPECT_EQ(f[0].shape(), (Shape{16, 16, 16}));
  EXPECT_EQ(f[1].shape(), (Shape{32, 8, 8}));
  EXPECT_EQ(f[2].shape(), (Shape{64, 4, 4}));
  EXPECT_EQ(f[3].shape(), (Shape{96, 2, 2}));
  for (const auto& s : f) EXPECT_TRUE(all_finite(s));
}

TEST(EncodeImage, ZeroImageGivesZeroFeatures) {
  Model m(ModelConfig{}, 1);
  for (const auto& s : m.encode_image(Tensor::zeros({3, 64, 64}))) EXPECT_TRUE(all_zero(s));
}

TEST(EncodeImage, RejectsIndivisibleSize) {
  Model m(ModelConfig{}, 1);
  EXPECT_THROW(m.encode_image(Tensor::zeros({3, 48, 48})), ShapeError);
  EXPECT_THROW(m.encode_image(Tensor::zeros({2, 64, 64})), ShapeError);
}

TEST(EncodeFlow, GeometryZeroAndChannels) {
  Model m(ModelConfig{}, 2);
  auto f = m.encode_flow(random_input({2, 64, 64}, 3, -1, 1));
  ASSERT_EQ(f.size(), 3u);
  EXPECT_EQ(f[0].shape(), (Shape{8, 16, 16}));
  EXPECT_EQ(f[1].shape(), (Shape{16, 8, 8}));
  EXPECT_EQ(f[2].shape(), (Shape{32, 4, 4}));
  for (const auto& s : m.encode_flow(Tensor::zeros({2, 64, 64}))) EXPECT_TRUE(all_zero(s));
  EXPECT_THROW(m.encode_flow(Tensor::zeros({3, 64, 64})), ShapeError);
}

TEST(EncodeFlow, FirstPreActivationIsLinear) {
  Model m(ModelConfig{}, 3);
  auto flow = random_input({2, 64, 64}, 4, -2, 2);
  auto tap = [&](const Tensor& f) {
    return ops::conv2d(f, m.param("flow.s1.c1.w"), m.param("flow.s1.c1.b"), 2, 1);
  };
  auto a = tap(flow), b = tap(ops::scale(flow, 2.0f));
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_NEAR(b[i], 2 * a[i], 1e-5 * (1 + std::abs(a[i])));
}

TEST(RefineFuse, ZeroBranchIsIdentity) {
  Model m(ModelConfig{}, 4);
  auto v = m.encode_image(random_input({3, 64, 64}, 5));
  auto f = m.encode_flow(random_input({2, 64, 64}, 6, -1, 1));
  auto r = m.refine_fuse(v, f);
  for (int i = 0; i < 4; ++i) {
    EXPECT_EQ(r[i].shape(), v[i].shape());
    EXPECT_EQ(r[i].values(), v[i].values());
  }
}

TEST(RefineFuse, GradientReachesFlowEncoder) {
  Model m(ModelConfig{}, 5);
  randomize(m, 50);
  auto v = m.encode_image(random_input({3, 64, 64}, 7));
  auto f = m.encode_flow(random_input({2, 64, 64}, 8, -1, 1));
  auto r = m.refine_fuse(v, f);
  EXPECT_EQ(r[0].shape(), v[0].shape());
  auto loss = ops::mean(r[0]);
  backward(loss);
  double norm = 0;
  for (const auto& p : m.params()) {
    if (p.name.rfind("flow.s1", 0) != 0 || !p.value.has_grad()) continue;
    for (float g : p.value.grad()) norm += std::abs(g);
  }
  EXPECT_GT(norm, 0.0);
}

TEST(EncodeAudio, ZeroShapeAndInjectivity) {
  Model m(ModelConfig{}, 6);
  auto z = m.encode_audio(Tensor::zeros({16}));
  EXPECT_EQ(z.shape(), (Shape{64}));
  EXPECT_TRUE(all_zero(z));
  EXPECT_THROW(m.encode_audio(Tensor::zeros({15})), ShapeError);
  auto a = Tensor::zeros({16}), b = Tensor::zeros({16});
  a[0] = 1;
  b[1] = 1;
  auto fa = m.encode_audio(a), fb = m.encode_audio(b);
  double diff = 0;
  for (int i = 0; i < 64; ++i) diff = std::max(diff, double(std::abs(fa[i] - fb[i])));
  EXPECT_GT(diff, 1e-6);
}

TEST(FuseAudio, ZeroModulatorIsIdentity) {
  Model m(ModelConfig{}, 7);
  auto v = m.encode_image(random_input({3, 64, 64}, 9));
  auto a = Tensor::zeros({16});
  a[2] = 1;
  auto fused = m.fuse_audio(v, m.encode_audio(a));
  for (int i = 0; i < 4; ++i) {
    EXPECT_EQ(fused[i].shape(), v[i].shape());
    EXPECT_EQ(fused[i].values(), v[i].values());
  }
}

TEST(DecodeMask, RangeAndZeroWeights) {
  Model m(ModelConfig{}, 8);
  auto p = m.forward(random_input({3, 64, 64}, 10), random_input({2, 64, 64}, 11, -3, 3),
                     random_input({16}, 12));
  EXPECT_EQ(p.shape(), (Shape{64, 64}));
  for (float v : p.values()) {
    EXPECT_GT(v, 0.0f);
    EXPECT_LT(v, 1.0f);
  }
  for (auto& prm : m.params()) std::fill(prm.value.values().begin(), prm.value.values().end(), 0.0f);
  auto q = m.forward(random_input({3, 64, 64}, 10), random_input({2, 64, 64}, 11), random_input({16}, 12));
  for (float v : q.values()) EXPECT_EQ(v, 0.5f);
}

TEST(Forward, DeterministicAndBranchFreeAtInit) {
  Model m(ModelConfig{}, 9);
  auto img = random_input({3, 64, 64}, 13);
  auto p1 = m.forward(img, random_input({2, 64, 64}, 14, -3, 3), random_input({16}, 15));
  auto p2 = m.forward(img, random_input({2, 64, 64}, 14, -3, 3), random_input({16}, 15));
  EXPECT_EQ(p1.values(), p2.values());
  auto p3 = m.forward(img, Tensor::zeros({2, 64, 64}), Tensor::zeros({16}));
  EXPECT_EQ(p1.values(), p3.values());
}

TEST(Forward, EveryParameterGetsFiniteGradient) {
  Model m(ModelConfig{}, 10);
  randomize(m, 11, 0.2);
  auto loss = ops::mean(m.forward(random_input({3, 64, 64}, 16), random_input({2, 64, 64}, 17, -3, 3),
                                  random_input({16}, 18)));
  backward(loss);
  for (const auto& p : m.params()) {
    ASSERT_TRUE(p.value.has_grad()) << p.name;
    for (float g : p.value.grad()) ASSERT_TRUE(std::isfinite(g)) << p.name;
  }
}

TEST(Forward, FullPipelineFiniteDifferences) {
  Model mf(ModelConfig{}, 12);
  randomize(mf, 13, 0.25);
  auto m = mf.cast<double>();
  auto img = tensor_cast<double>(random_input({3, 32, 32}, 19));
  auto flow = tensor_cast<double>(random_input({2, 32, 32}, 20, -2, 2));
  auto audio = tensor_cast<double>(random_input({16}, 21));
  auto loss_fn = [&] { return ops::mean(m.forward(img, flow, audio)); };

  m.zero_grad();
  auto l = loss_fn();
  backward(l);

  std::mt19937_64 rng(22);
  const double eps = 1e-4;
  int checked = 0;
  for (int k = 0; k < 10; ++k) {
    auto& p = m.params()[rng() % m.params().size()].value;
    const std::size_t i = rng() % p.numel();
    const double analytic = p.has_grad() ? p.grad()[i] : 0.0;
    const double saved = p[i];
    double plus, minus;
    {
      NoGradGuard guard;
      p[i] = saved + eps;
      plus = loss_fn().item();
      p[i] = saved - eps;
      minus = loss_fn().item();
    }
    p[i] = saved;
    const double numeric = (plus - minus) / (2 * eps);
    const double rel = std::abs(analytic - numeric) / std::max(1e-6, std::abs(analytic) + std::abs(numeric));
    EXPECT_LT(rel, 1e-2) << "analytic " << analytic << " numeric " << numeric;
    ++checked;
  }
  EXPECT_EQ(checked, 10);
}

TEST(ModelConfig, JsonAndHash) {
  ModelConfig c;
  auto back = ModelConfig::from_json(c.to_json());
  EXPECT_EQ(back, c);
  EXPECT_EQ(back.hash(), c.hash());
  c.audio_embed = 32;
  EXPECT_NE(c.hash(), back.hash());
  EXPECT_THROW(ModelConfig::from_json({{"widths", 3}}), std::invalid_argument);
}

class CheckpointTest : public ::testing::Test {
 protected:
  std::filesystem::path dir = std::filesystem::temp_directory_path() /
                              ("ufe_ckpt_" + std::to_string(::getpid()));
  void SetUp() override { std::filesystem::create_directories(dir); }
  void TearDown() override { std::filesystem::remove_all(dir); }
};

TEST_F(CheckpointTest, RoundTripIsBitExact) {
  Model m(ModelConfig{}, 14);
  randomize(m, 15);
  ckpt::Checkpoint c;
  ckpt::put_model(c, m);
  c.meta["note"] = "x";
  const auto path = (dir / "a.ckpt").string();
  ckpt::save(c, path);
  auto loaded = ckpt::load(path);
  auto m2 = ckpt::get_model(loaded);
  ASSERT_EQ(m2.params().size(), m.params().size());
  for (std::size_t k = 0; k < m.params().size(); ++k) {
    EXPECT_EQ(m.params()[k].value.values(), m2.params()[k].value.values());
  }
  ckpt::save(loaded, (dir / "b.ckpt").string());
  EXPECT_EQ(blob::read_file(path), blob::read_file((dir / "b.ckpt").string()));

  auto img = random_input({3, 64, 64}, 23);
  auto flow = random_input({2, 64, 64}, 24);
  auto audio = random_input({16}, 25);
  EXPECT_EQ(m.forward(img, flow, audio).values(), m2.forward(img, flow, audio).values());
}

TEST_F(CheckpointTest, CorruptedFloatBlockIsRejected) {
  Model m(ModelConfig{}, 16);
  ckpt::Checkpoint c;
  ckpt::put_model(c, m);
  auto bytes = ckpt::encode(c);
  bytes[bytes.size() - 100] ^= 0x40;
  try {
    ckpt::decode(bytes);
    FAIL() << "corruption not detected";
  } catch (const ckpt::CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find("checksum"), std::string::npos);
  }
}

TEST_F(CheckpointTest, ConfigHashMismatchIsDescriptive) {
  Model m(ModelConfig{}, 17);
  ckpt::Checkpoint c;
  ckpt::put_model(c, m);
  c.meta["config_hash"] = "0000000000000000";
  EXPECT_THROW(ckpt::get_model(ckpt::decode(ckpt::encode(c))), ckpt::CheckpointError);
  std::vector<std::uint8_t> junk{'U', 'F', 'C', 'K', 9, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0};
  EXPECT_THROW(ckpt::decode(junk), ckpt::CheckpointError);
}
