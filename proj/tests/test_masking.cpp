#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "test_util.hpp"

using namespace pstmo;

TEST(TemporalMask, ReferenceRatioLeaves48Frames) {
  Rng rng(1);
  const auto m = sample_temporal_mask(243, 0.8, rng);
  EXPECT_EQ(m.size(), 195u);
  EXPECT_EQ(unmasked_count(243, 0.8), 48u);
}

TEST(TemporalMask, ZeroRatioMasksNothing) {
  Rng rng(2);
  EXPECT_TRUE(sample_temporal_mask(243, 0.0, rng).empty());
}

TEST(TemporalMask, NinetyPercentLeaves24Frames) {
  Rng rng(3);
  EXPECT_EQ(sample_temporal_mask(243, 0.9, rng).size(), 219u);
}

TEST(TemporalMask, DistinctSortedInRange) {
  Rng rng(4);
  const auto m = sample_temporal_mask(81, 0.5, rng);
  EXPECT_EQ(m.size(), 81u - 40u);
  EXPECT_TRUE(std::is_sorted(m.begin(), m.end()));
  EXPECT_EQ(std::set<std::size_t>(m.begin(), m.end()).size(), m.size());
  EXPECT_LT(m.back(), 81u);
}

TEST(TemporalMask, RejectsFullMasking) {
  Rng rng(5);
  EXPECT_THROW(sample_temporal_mask(243, 1.0, rng), Error);
  EXPECT_THROW(sample_temporal_mask(3, 0.9, rng), Error);  // floor(0.3) = 0 survivors
}

TEST(TemporalMask, SeededDeterminism) {
  Rng a(9), b(9);
  EXPECT_EQ(sample_temporal_mask(243, 0.8, a), sample_temporal_mask(243, 0.8, b));
}

TEST(SpatialMask, ZeroAndAllJoints) {
  Rng rng(6);
  for (const auto& m : sample_spatial_masks(10, 17, 0, rng)) EXPECT_TRUE(m.empty());
  std::vector<std::size_t> all(17);
  std::iota(all.begin(), all.end(), std::size_t{0});
  for (const auto& m : sample_spatial_masks(10, 17, 17, rng)) EXPECT_EQ(m, all);
}

TEST(SpatialMask, SevenOfSeventeen) {
  MaskConfig c;
  c.masked_joints = 7;
  EXPECT_DOUBLE_EQ(c.spatial_ratio(17), 7.0 / 17.0);
  EXPECT_EQ(std::floor(c.spatial_ratio(17) * 1000.0), 411.0);
  Rng rng(7);
  for (const auto& m : sample_spatial_masks(50, 17, 7, rng)) {
    EXPECT_EQ(m.size(), 7u);
    EXPECT_EQ(std::set<std::size_t>(m.begin(), m.end()).size(), 7u);
  }
}

TEST(SpatialMask, RejectsTooManyJoints) {
  Rng rng(8);
  EXPECT_THROW(sample_spatial_masks(3, 5, 6, rng), Error);
}

TEST(SpatialMask, DiffersBetweenFrames) {
  Rng rng(10);
  const auto masks = sample_spatial_masks(100, 17, 2, rng);
  EXPECT_GT(std::set<std::vector<std::size_t>>(masks.begin(), masks.end()).size(), 50u);
}

TEST(CombinedRatio, ReferenceConfiguration) {
  EXPECT_NEAR(combined_ratio(0.8, 2.0 / 17.0), 0.8235, 5e-5);
  EXPECT_DOUBLE_EQ(combined_ratio(0.8, 0.0), 0.8);
  EXPECT_NEAR(combined_ratio(0.9, 7.0 / 17.0), 0.9412, 5e-5);
}

TEST(BuildPlan, TemporalStrategyHasNoSpatialMasks) {
  MaskConfig c{0.5, 0, MaskStrategy::temporal};
  Rng rng(11);
  const auto plan = build_plan(c, 27, 17, rng);
  for (const auto& m : plan.spatial_masks) EXPECT_TRUE(m.empty());
  EXPECT_EQ(plan.unmasked_order.size(), 13u);
}

TEST(BuildPlan, SpatialStrategyMasksEveryFrame) {
  MaskConfig c{0.0, 3, MaskStrategy::spatial};
  Rng rng(12);
  const auto plan = build_plan(c, 27, 17, rng);
  EXPECT_TRUE(plan.masked_frames.empty());
  ASSERT_EQ(plan.spatial_masks.size(), 27u);
  for (const auto& m : plan.spatial_masks) EXPECT_EQ(m.size(), 3u);
}

TEST(BuildPlan, SmallWindowCardinality) {
  MaskConfig c{0.8, 1, MaskStrategy::spatio_temporal};
  Rng rng(13);
  const auto plan = build_plan(c, 10, 3, rng);
  EXPECT_EQ(plan.unmasked_order.size(), 2u);
  EXPECT_EQ(plan.masked_frames.size(), 8u);
  ASSERT_EQ(plan.spatial_masks.size(), 2u);
  for (const auto& m : plan.spatial_masks) EXPECT_EQ(m.size(), 1u);
  EXPECT_NO_THROW(validate_plan(plan, 10, 3));
}

TEST(BuildPlan, PartitionsTheWindow) {
  MaskConfig c;
  for (std::uint64_t s = 0; s < 20; ++s) {
    Rng rng(s);
    const auto plan = build_plan(c, 243, 17, rng);
    std::vector<int> seen(243, 0);
    for (auto i : plan.masked_frames) ++seen[i];
    for (auto i : plan.unmasked_order) ++seen[i];
    EXPECT_TRUE(std::all_of(seen.begin(), seen.end(), [](int v) { return v == 1; }));
    EXPECT_EQ(plan.unmasked_order.size(), 48u);
    EXPECT_TRUE(std::is_sorted(plan.unmasked_order.begin(), plan.unmasked_order.end()));
  }
}

TEST(BuildPlan, RejectsInconsistentConfig) {
  Rng rng(14);
  EXPECT_THROW(build_plan(MaskConfig{0.5, 2, MaskStrategy::temporal}, 9, 5, rng), Error);
  EXPECT_THROW(build_plan(MaskConfig{0.5, 2, MaskStrategy::spatial}, 9, 5, rng), Error);
  EXPECT_THROW(build_plan(MaskConfig{0.5, 6, MaskStrategy::spatio_temporal}, 9, 5, rng), Error);
}

TEST(BuildPlan, MaskedFractionConvergesToCombinedRatio) {
  MaskConfig c;
  const std::size_t n = 243, j = 17, plans = 1000;
  std::size_t masked = 0;
  for (std::size_t s = 0; s < plans; ++s) {
    Rng rng(derive_seed(77, s));
    const auto plan = build_plan(c, n, j, rng);
    masked += plan.masked_frames.size() * j;
    for (const auto& m : plan.spatial_masks) masked += m.size();
  }
  const double fraction = static_cast<double>(masked) / static_cast<double>(plans * n * j);
  // floor() makes the realized temporal ratio 195/243 rather than 0.8.
  const double expected = combined_ratio(195.0 / 243.0, 2.0 / 17.0);
  EXPECT_NEAR(fraction, expected, 1e-12);
  EXPECT_NEAR(fraction, combined_ratio(0.8, 2.0 / 17.0), 0.01);
}

TEST(MaskPlanJson, RoundTrip) {
  Rng rng(15);
  const auto plan = build_plan(MaskConfig{}, 27, 17, rng);
  const auto j = to_json(plan);
  ASSERT_TRUE(j.contains("masked_frames"));
  ASSERT_TRUE(j.contains("spatial_masks"));
  const auto back = plan_from_json(nlohmann::json::parse(j.dump()), 27);
  EXPECT_EQ(back.masked_frames, plan.masked_frames);
  EXPECT_EQ(back.unmasked_order, plan.unmasked_order);
  EXPECT_EQ(back.spatial_masks, plan.spatial_masks);
}

TEST(MaskPlan, IdentityIsEmptyAndSlotsOrdered) {
  const auto id = MaskPlan::identity(9);
  EXPECT_TRUE(id.empty());
  EXPECT_EQ(id.slot_positions(), id.unmasked_order);
  MaskPlan p = plan_from_json(nlohmann::json::parse(R"({"masked_frames":[1,4],"spatial_masks":[[],[],[],[],[],[],[]]})"), 9);
  EXPECT_EQ(p.slot_positions(), (std::vector<std::size_t>{0, 2, 3, 5, 6, 7, 8, 1, 4}));
  EXPECT_FALSE(p.empty());
}
