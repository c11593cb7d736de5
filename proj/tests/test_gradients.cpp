#include <gtest/gtest.h>

#include <cmath>
#include <functional>

#include "gradcheck.hpp"

using namespace pstmo;

using namespace pstmo::testing;

namespace {

constexpr double kStep = kFdStep;
constexpr double kTolerance = kFdTolerance;

}  // namespace

TEST(GradientCheck, StageOneEndToEnd) {
  const PretrainCase pc(11, MaskConfig{0.5, 2, MaskStrategy::spatio_temporal});
  const auto g = pc.gradient();
  const auto r = pc.check(150, 1);
  EXPECT_GE(r.probes, 100u);
  EXPECT_LE(r.worst, kTolerance) << "worst at " << r.worst_name;
  // The padding tokens are in play under this plan.
  EXPECT_GT(g.at("mask.temporal_token").mat().norm(), 0.0);
  EXPECT_GT(g.at("mask.spatial_token").mat().norm(), 0.0);
}

TEST(GradientCheck, StageTwoEndToEnd) {
  const FinetuneCase fc(21);
  const auto r = fc.check(150, 2);
  EXPECT_GE(r.probes, 100u);
  EXPECT_LE(r.worst, kTolerance) << "worst at " << r.worst_name;
}

TEST(GradientCheck, StageTwoWithoutMofa) {
  FinetuneCase fc(31);
  fc.cfg.use_mofa = false;
  fc.reset(31);
  const auto r = fc.check(120, 3);
  EXPECT_LE(r.worst, kTolerance) << "worst at " << r.worst_name;
}

TEST(GradientCheck, KeyBiasIsInvisibleToSoftmax) {
  const FinetuneCase fc(61);
  const auto g = fc.gradient();
  const double scale = largest_entry(g);
  for (const auto& [name, t] : g.entries())
    if (name.find("attn.key.bias") != std::string::npos) EXPECT_LE(t.mat().cwiseAbs().maxCoeff(), 1e-9 * scale) << name;
}

TEST(GradientCheck, IgnoredParametersGetZeroGradient) {
  PretrainCase pc(41, MaskConfig{0.0, 0, MaskStrategy::spatio_temporal});
  const auto g1 = pc.gradient();
  EXPECT_TRUE(g1.at("mask.temporal_token").mat().isZero(0));
  EXPECT_TRUE(g1.at("mask.spatial_token").mat().isZero(0));

  FinetuneCase fc(42);
  fc.lambda = 0.0;
  const auto g2 = fc.gradient();
  EXPECT_TRUE(g2.at("head.frames.weight").mat().isZero(0));
  EXPECT_TRUE(g2.at("head.frames.bias").mat().isZero(0));
  EXPECT_FALSE(g2.at("head.center.weight").mat().isZero(0));
}

TEST(GradientCheck, DoublingTheLossDoublesEveryGradient) {
  const FinetuneCase fc(51);
  const auto g = fc.gradient(1.0);
  const auto g2 = fc.gradient(2.0);
  for (const auto& [name, t] : g.entries())
    for (std::size_t i = 0; i < t.size(); ++i) ASSERT_EQ(g2.at(name).values[i], 2.0 * t.values[i]) << name;
  const PretrainCase pc(52, MaskConfig{});
  const auto h = pc.gradient(1.0);
  const auto h2 = pc.gradient(2.0);
  for (const auto& [name, t] : h.entries())
    for (std::size_t i = 0; i < t.size(); ++i) ASSERT_EQ(h2.at(name).values[i], 2.0 * t.values[i]) << name;
}

TEST(LossGradients, MatchFiniteDifferences) {
  const Mat<double> recon = random_matrix<double>(4, 6, 1);
  const Mat<double> clean = random_matrix<double>(4, 6, 2);
  const Mat<double> pred = random_matrix<double>(3, 12, 3);
  const Mat<double> gt = random_matrix<double>(3, 12, 4);
  using Fn = std::function<LossGrad<double>(const Mat<double>&)>;
  const std::vector<std::pair<Mat<double>, Fn>> cases = {
      {recon, [&](const Mat<double>& x) { return pretrain_loss(x, clean); }},
      {Mat<double>(pred.row(0)), [&](const Mat<double>& x) { return loss_single(x, Mat<double>(gt.row(0))); }},
      {pred, [&](const Mat<double>& x) { return loss_multiple(x, gt); }},
  };
  for (const auto& [x0, fn] : cases) {
    const Mat<double> analytic = fn(x0).grad;
    Mat<double> x = x0;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      const double saved = x.data()[i];
      x.data()[i] = saved + kStep;
      const double up = fn(x).value;
      x.data()[i] = saved - kStep;
      const double down = fn(x).value;
      x.data()[i] = saved;
      EXPECT_LE(relative_error(analytic.data()[i], (up - down) / (2 * kStep)), kTolerance);
    }
  }
}
