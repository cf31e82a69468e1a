#include <gtest/gtest.h>

#include <cmath>

#include "support/gradcheck.hpp"
#include "ufe/losses.hpp"
#include "ufe/ops.hpp"

using namespace ufe;
using namespace ufe::losses;
using oracle::DTensor;
using oracle::grad_check;
using oracle::random_tensor;

namespace {

// Direct double-precision evaluations, written out independently of the library.
double bce_direct(const std::vector<double>& p, const std::vector<double>& y) {
  double s = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double q = std::clamp(p[i], 1e-7, 1 - 1e-7);
    s += y[i] * std::log(q) + (1 - y[i]) * std::log(1 - q);
  }
  return -s / p.size();
}

double dice_direct(const std::vector<double>& p, const std::vector<double>& y) {
  double py = 0, sp = 0, sy = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    py += p[i] * y[i];
    sp += p[i];
    sy += y[i];
  }
  return 1 - 2 * py / (sp + sy + 1e-7);
}

Tensor vec(std::vector<float> v) {
  const int n = static_cast<int>(v.size());
  return Tensor::from({1, n}, std::move(v));
}

DTensor binary(const Shape& shape, std::mt19937_64& rng) {
  auto t = random_tensor(shape, rng, 0, 1, false);
  for (double& v : t.values()) v = v > 0.5 ? 1.0 : 0.0;
  return t;
}

}  // namespace

TEST(BceLoss, SymmetricPoint) {
  auto y = Tensor::from({2, 2}, {1, 0, 0, 1});
  EXPECT_NEAR(bce_loss(Tensor::full({2, 2}, 0.5f), y).item(), 0.693147, 1e-6);
}

TEST(BceLoss, TabulatedExample) {
  const double expected = (-std::log(0.9) - std::log(0.8)) / 2;
  EXPECT_NEAR(expected, 0.164252, 1e-6);
  EXPECT_NEAR(bce_loss(vec({0.9f, 0.2f}), vec({1, 0})).item(), expected, 1e-6);
  EXPECT_NEAR(bce_loss(vec({0.9f, 0.2f}), vec({1, 0})).item(), bce_direct({0.9, 0.2}, {1, 0}), 1e-6);
}

TEST(BceLoss, PerfectPredictionHitsClampFloor) {
  auto y = vec({1, 0, 1, 1});
  const double l = bce_loss(y, y).item();
  EXPECT_GT(l, 0.0);
  EXPECT_LT(l, 1e-6);
}

TEST(BceLoss, ValidMaskRestrictsAverage) {
  auto p = vec({0.9f, 0.2f, 0.01f});
  auto y = vec({1, 0, 1});
  auto valid = vec({1, 1, 0});
  EXPECT_NEAR(bce_loss(p, y, std::optional<Tensor>(valid)).item(), 0.164252, 1e-6);
  EXPECT_EQ(bce_loss(p, y, std::optional<Tensor>(vec({0, 0, 0}))).item(), 0.0f);
}

TEST(BceLoss, MonotoneTowardTarget) {
  for (float y : {0.0f, 1.0f}) {
    double prev = -1;
    for (int k = 1; k < 20; ++k) {
      const float p = y == 1.0f ? k / 20.0f : 1 - k / 20.0f;
      const double l = bce_loss(vec({p}), vec({y})).item();
      if (prev >= 0) EXPECT_LT(l, prev);
      prev = l;
    }
  }
}

TEST(BceLoss, ShapeMismatch) {
  EXPECT_THROW(bce_loss(vec({0.5f, 0.5f}), vec({1})), ShapeError);
  EXPECT_THROW(dice_loss(vec({0.5f, 0.5f}), vec({1})), ShapeError);
}

TEST(DiceLoss, TabulatedExample) {
  EXPECT_NEAR(1 - 2.8 / 3.7, 0.243243, 1e-6);
  auto p = vec({0.8f, 0.6f, 0.2f, 0.1f});
  auto y = vec({1, 1, 0, 0});
  EXPECT_NEAR(dice_loss(p, y).item(), dice_direct({0.8, 0.6, 0.2, 0.1}, {1, 1, 0, 0}), 1e-6);
  EXPECT_NEAR(dice_loss(p, y).item(), 0.243243, 1e-6);
}

TEST(DiceLoss, PerfectOverlapAndDisjoint) {
  auto y = vec({1, 0, 1, 0});
  EXPECT_LT(std::abs(dice_loss(y, y).item()), 1e-6);
  EXPECT_NEAR(dice_loss(vec({0.3f, 0.2f}), vec({0, 0})).item(), 1.0, 1e-6);
}

TEST(DiceLoss, BoundedOnRandomInputs) {
  std::mt19937_64 rng(4);
  for (int i = 0; i < 50; ++i) {
    auto p = tensor_cast<float>(random_tensor({4, 4}, rng, 0.001, 0.999, false));
    auto y = tensor_cast<float>(binary({4, 4}, rng));
    const double d = dice_loss(p, y).item();
    EXPECT_GE(d, 0.0);
    EXPECT_LE(d, 1.0 + 1e-6);
    EXPECT_GE(bce_loss(p, y).item(), 0.0);
  }
}

TEST(PseudoLabel, ThresholdConventions) {
  LossConfig cfg;
  auto half = make_pseudo_label(Tensor::full({2, 2}, 0.5f), cfg);
  for (float v : half.target.values()) EXPECT_EQ(v, 1.0f);
  for (float v : half.valid.values()) EXPECT_EQ(v, 1.0f);
  auto two = make_pseudo_label(vec({0.9f, 0.1f}), cfg);
  EXPECT_EQ(two.target.values(), (std::vector<float>{1, 0}));
  cfg.confidence_floor = 0.8;
  auto floor = make_pseudo_label(vec({0.9f, 0.6f}), cfg);
  EXPECT_EQ(floor.valid.values(), (std::vector<float>{1, 0}));
}

TEST(PseudoLabel, SoftTargetsCopyTeacher) {
  LossConfig cfg;
  cfg.pseudo_kind = PseudoKind::kSoft;
  auto pl = make_pseudo_label(vec({0.7f, 0.2f}), cfg);
  EXPECT_EQ(pl.target.values(), (std::vector<float>{0.7f, 0.2f}));
}

TEST(UnsupLoss, Examples) {
  LossConfig cfg;
  auto pseudo = make_pseudo_label(vec({0.8f, 0.3f}), cfg);
  EXPECT_NEAR(unsup_loss({vec({0.9f, 0.2f})}, {pseudo}).item(), 0.164252, 1e-6);
  EXPECT_LT(unsup_loss({pseudo.target}, {pseudo}).item(), 1e-6);
  EXPECT_EQ(unsup_loss({}, {}).item(), 0.0f);
  cfg.confidence_floor = 1 - 1e-6;
  auto none = make_pseudo_label(vec({0.8f, 0.3f}), cfg);
  EXPECT_EQ(unsup_loss({vec({0.9f, 0.2f})}, {none}).item(), 0.0f);
}

TEST(UnsupLoss, PermutationInvariant) {
  LossConfig cfg;
  std::mt19937_64 rng(7);
  std::vector<Tensor> ps;
  std::vector<PseudoLabel> pl;
  for (int b = 0; b < 4; ++b) {
    ps.push_back(tensor_cast<float>(random_tensor({3, 3}, rng, 0.01, 0.99, false)));
    pl.push_back(make_pseudo_label(tensor_cast<float>(random_tensor({3, 3}, rng, 0, 1, false)), cfg));
  }
  const float a = unsup_loss(ps, pl).item();
  std::reverse(ps.begin(), ps.end());
  std::reverse(pl.begin(), pl.end());
  EXPECT_NEAR(unsup_loss(ps, pl).item(), a, 1e-6);
}

TEST(TotalLoss, Arithmetic) {
  EXPECT_NEAR(total_loss(Tensor::scalar(0.4f), Tensor::scalar(0.2f), 0.5f).item(), 0.5, 1e-7);
  EXPECT_EQ(total_loss(Tensor::scalar(0.4f), Tensor::scalar(0.2f), 0.0f).item(), 0.4f);
}

TEST(TotalLoss, GradientIsLinearCombination) {
  std::mt19937_64 rng(9);
  auto theta = random_tensor({6}, rng, -1, 1, true);
  auto y1 = binary({6}, rng), y2 = binary({6}, rng);
  auto sup = [&] { return bce_loss(ops::sigmoid(theta), y1); };
  auto uns = [&] { return dice_loss(ops::sigmoid(ops::scale(theta, 2.0)), y2); };
  auto grad_of = [&](auto fn) {
    theta.zero_grad();
    auto l = fn();
    backward(l);
    return std::vector<double>(theta.grad().begin(), theta.grad().end());
  };
  const auto gs = grad_of(sup), gu = grad_of(uns);
  const auto gt = grad_of([&] { return total_loss(sup(), uns(), 0.5); });
  for (int i = 0; i < 6; ++i) EXPECT_NEAR(gt[i], gs[i] + 0.5 * gu[i], 1e-12);
}

class LossGradientCheck : public ::testing::TestWithParam<int> {};

TEST_P(LossGradientCheck, Bce) {
  std::mt19937_64 rng(GetParam());
  auto p = random_tensor({4, 5}, rng, 0.05, 0.95);
  auto y = binary({4, 5}, rng);
  auto valid = binary({4, 5}, rng);
  valid[0] = 1;
  auto r = grad_check([&] { return bce_loss(p, y); }, {p});
  EXPECT_LT(r.max_error, 1e-3);
  auto rv = grad_check([&] { return bce_loss(p, y, std::optional<DTensor>(valid)); }, {p});
  EXPECT_LT(rv.max_error, 1e-3);
}

TEST_P(LossGradientCheck, Dice) {
  std::mt19937_64 rng(GetParam());
  auto p = random_tensor({4, 5}, rng, 0.05, 0.95);
  auto y = binary({4, 5}, rng);
  auto r = grad_check([&] { return dice_loss(p, y); }, {p});
  EXPECT_LT(r.max_error, 1e-3);
}

TEST_P(LossGradientCheck, BatchMeanAndTotal) {
  std::mt19937_64 rng(GetParam());
  auto a = random_tensor({3}, rng, 0.05, 0.95);
  auto b = random_tensor({3}, rng, 0.05, 0.95);
  auto y = binary({3}, rng);
  auto r = grad_check(
      [&] {
        return total_loss(batch_mean<double>({bce_loss(a, y), dice_loss(b, y)}),
                          sup_loss(b, y, SupKind::kBceDice), 0.5);
      },
      {a, b});
  EXPECT_LT(r.max_error, 1e-3);
}

INSTANTIATE_TEST_SUITE_P(Seeds, LossGradientCheck, ::testing::Range(0, 20));

TEST(LossConfig, StrictJson) {
  auto c = LossConfig::from_json({{"lambda", 0.25}, {"sup_kind", "dice"}});
  EXPECT_EQ(c.lambda, 0.25);
  EXPECT_EQ(c.sup_kind, SupKind::kDice);
  EXPECT_THROW(LossConfig::from_json({{"lamda", 0.25}}), std::invalid_argument);
  EXPECT_THROW(LossConfig::from_json({{"lambda", -1.0}}), std::invalid_argument);
  EXPECT_THROW(LossConfig::from_json({{"sup_kind", "l2"}}), std::invalid_argument);
}
