#include <gtest/gtest.h>

#include <cmath>

#include "test_util.hpp"

using namespace pstmo;
using pstmo::testing::random_matrix;
using pstmo::testing::random_store;
using pstmo::testing::TempDir;
using pstmo::testing::tiny_config;

namespace {

Mat<float> synth_window(std::size_t n, std::uint64_t seed) {
  const auto seq = synth_generate(h36m17(), 3 * n, seed);
  return to_matrix<float>(extract_window(seq, 3 * n / 2, n, 2).inputs);
}

template <typename T>
void put(ParameterStore<T>& p, const std::string& name, Shape shape, std::vector<T> values) {
  Tensor<T> t(std::move(shape));
  if (!values.empty()) t.values = std::move(values);
  p.set(name, std::move(t));
}

}  // namespace

TEST(ShapePipeline, ReferenceConfiguration) {
  const ModelConfig cfg = preset_small(243);
  const auto params = init_parameters<float>(cfg, Stage::finetune, 1);
  const Mat<float> x = synth_window(243, 3);
  ASSERT_EQ(x.rows(), 243);
  ASSERT_EQ(x.cols(), 34);

  ForwardContext ctx;
  SpatialEncoder sem(cfg);
  SpatialEncoder::Cache<float> sc;
  const Mat<float> h = sem.forward(params, x, ctx, sc);
  EXPECT_EQ(h.rows(), 243);
  EXPECT_EQ(h.cols(), 256);

  StmoNetwork net(cfg);
  StmoNetwork::Cache<float> c;
  const auto out = net.forward(params, x, ctx, c);
  EXPECT_EQ(c.latents.rows(), 243);
  EXPECT_EQ(c.latents.cols(), 256);
  EXPECT_EQ(c.mofa.lengths, (std::vector<std::size_t>{243, 81, 27, 9, 3, 1}));
  EXPECT_EQ(cfg.mofa_lengths(), c.mofa.lengths);
  const PoseArray frames = to_pose_array<float>(out.frames, 17, 3);
  const PoseArray center = to_pose_array<float>(out.center, 17, 3);
  EXPECT_EQ(frames.frames, 243u);
  EXPECT_EQ(frames.joints, 17u);
  EXPECT_EQ(center.frames, 1u);
  EXPECT_EQ(center.joints, 17u);
  EXPECT_EQ(center.channels, 3u);
}

TEST(Sem, SingleFrameMatchesBatchedRowBitwise) {
  const ModelConfig cfg = preset_small(243);
  const auto params = init_parameters<float>(cfg, Stage::finetune, 2);
  const Mat<float> x = synth_window(243, 4);
  SpatialEncoder sem(cfg);
  ForwardContext ctx;
  SpatialEncoder::Cache<float> c;
  const Mat<float> batched = sem.forward(params, x, ctx, c);
  for (Eigen::Index r : {0, 17, 121, 242}) {
    const Mat<float> one = sem.forward(params, Mat<float>(x.row(r)), ctx, c);
    for (Eigen::Index k = 0; k < one.cols(); ++k) ASSERT_EQ(one(0, k), batched(r, k)) << "row " << r << " col " << k;
  }
}

TEST(Sem, FrameWiseSharingAndEquivariance) {
  const ModelConfig cfg = tiny_config();
  const auto params = random_store<float>(cfg, Stage::finetune, 3);
  Mat<float> x = random_matrix<float>(9, 10, 5);
  x.row(4) = x.row(1);
  SpatialEncoder sem(cfg);
  ForwardContext ctx;
  SpatialEncoder::Cache<float> c;
  const Mat<float> h = sem.forward(params, x, ctx, c);
  EXPECT_EQ(Mat<float>(h.row(4)), Mat<float>(h.row(1)));
  Mat<float> rev = x.colwise().reverse();
  const Mat<float> hr = sem.forward(params, rev, ctx, c);
  EXPECT_EQ(Mat<float>(hr.colwise().reverse()), h);
}

TEST(SpatialPadding, EmptyMasksAreIdentity) {
  const Mat<double> x = random_matrix<double>(4, 10, 1);
  RowVec<double> token(2);
  token << 7, 8;
  EXPECT_EQ(apply_spatial_padding<double>(x, std::vector<std::vector<std::size_t>>(4), token), x);
}

TEST(SpatialPadding, AllJointsMasked) {
  const Mat<double> x = random_matrix<double>(3, 10, 2);
  RowVec<double> token(2);
  token << 7, 8;
  const auto out = apply_spatial_padding<double>(x, {{0, 1, 2, 3, 4}, {0, 1, 2, 3, 4}, {0, 1, 2, 3, 4}}, token);
  for (Eigen::Index r = 0; r < 3; ++r)
    for (Eigen::Index j = 0; j < 5; ++j) {
      EXPECT_EQ(out(r, 2 * j), 7.0);
      EXPECT_EQ(out(r, 2 * j + 1), 8.0);
    }
}

TEST(SpatialPadding, SingleMaskChangesOneJoint) {
  const Mat<double> x = random_matrix<double>(3, 10, 3);
  RowVec<double> token(2);
  token << 7, 8;
  const auto out = apply_spatial_padding<double>(x, {{3}, {}, {}}, token);
  int differing_joints = 0;
  for (Eigen::Index r = 0; r < 3; ++r)
    for (Eigen::Index j = 0; j < 5; ++j)
      if (out(r, 2 * j) != x(r, 2 * j) || out(r, 2 * j + 1) != x(r, 2 * j + 1)) ++differing_joints;
  EXPECT_EQ(differing_joints, 1);
  EXPECT_EQ(out(0, 6), 7.0);
  EXPECT_EQ(out(0, 7), 8.0);
}

TEST(Attention, HandComputedSingleHead) {
  ParameterStore<double> p;
  put<double>(p, "a.query.weight", {2, 2}, {1, 0, 0, 1});
  put<double>(p, "a.key.weight", {2, 2}, {1, 0, 0, 1});
  put<double>(p, "a.value.weight", {2, 2}, {1, 0, 0, 2});
  put<double>(p, "a.out.weight", {2, 2}, {1, 0, 0, 1});
  for (const char* n : {"a.query.bias", "a.key.bias", "a.value.bias", "a.out.bias"}) put<double>(p, n, {2}, {});
  nn::SelfAttention attn("a", 1, "tem", 0);
  Mat<double> x(2, 2);
  x << 1, 2, 3, -1;
  ForwardContext ctx;
  nn::SelfAttention::Cache<double> c;
  const Mat<double> y = attn.forward(p, x, ctx, c);

  // scores x_i . x_j / sqrt(2): [[5, 1], [1, 10]] / sqrt(2); values [1, 4] and [3, -2].
  const double r2 = std::sqrt(2.0);
  const double p00 = std::exp(5 / r2) / (std::exp(5 / r2) + std::exp(1 / r2));
  const double p10 = std::exp(1 / r2) / (std::exp(1 / r2) + std::exp(10 / r2));
  EXPECT_NEAR(y(0, 0), p00 * 1 + (1 - p00) * 3, 1e-12);
  EXPECT_NEAR(y(0, 1), p00 * 4 + (1 - p00) * -2, 1e-12);
  EXPECT_NEAR(y(1, 0), p10 * 1 + (1 - p10) * 3, 1e-12);
  EXPECT_NEAR(y(1, 1), p10 * 4 + (1 - p10) * -2, 1e-12);
}

TEST(Attention, RowsAreStochasticEverywhere) {
  ModelConfig cfg = tiny_config(27, 17, 32);
  cfg.heads = 4;
  AttentionRecorder rec;
  ForwardContext ctx;
  ctx.recorder = &rec;
  const auto p2 = random_store<float>(cfg, Stage::finetune, 4);
  StmoNetwork(cfg).forward(p2, random_matrix<float>(27, 34, 6, 0.5), ctx);
  const auto p1 = random_store<float>(cfg, Stage::pretrain, 5);
  Rng rng(7);
  const auto plan = build_plan(MaskConfig{}, 27, 17, rng);
  PretrainNetwork(cfg).forward(p1, random_matrix<float>(27, 34, 8, 0.5), plan, ctx);
  // TEM and MOFA for Stage II, TEM and decoder for Stage I, 4 heads each.
  EXPECT_EQ(rec.dumps.size(), 4u * (2 + 3 + 2 + 1));
  for (const auto& d : rec.dumps)
    for (Eigen::Index r = 0; r < d.weights.rows(); ++r) {
      EXPECT_NEAR(d.weights.row(r).sum(), 1.0, 1e-5);
      EXPECT_GE(d.weights.row(r).minCoeff(), 0.0);
    }
}

TEST(TransformerStack, RejectsPositionBeyondTable) {
  const ModelConfig cfg = tiny_config();
  const auto p = random_store<float>(cfg, Stage::finetune, 1);
  TransformerStack tem("tem", cfg.tem_depth, cfg.heads);
  ForwardContext ctx;
  TransformerStack::Cache<float> c;
  EXPECT_THROW(tem.forward(p, random_matrix<float>(2, 16, 1), {0, 9}, ctx, c), Error);
  EXPECT_THROW(tem.forward(p, random_matrix<float>(10, 16, 1), std::vector<std::size_t>(10, 0), ctx, c), Error);
}

TEST(Mofa, HandConvolutionOnConstantSequence) {
  ParameterStore<double> p;
  for (const char* n : {"m.norm1", "m.norm2"}) {
    put<double>(p, std::string(n) + ".weight", {2}, {0, 0});
    put<double>(p, std::string(n) + ".bias", {2}, {});
  }
  for (const char* n : {"m.attn.query", "m.attn.key", "m.attn.value", "m.attn.out"}) {
    put<double>(p, std::string(n) + ".weight", {2, 2}, {});
    put<double>(p, std::string(n) + ".bias", {2}, {});
  }
  // norm2 and fc1 emit constants, so every hidden unit at every frame equals gelu(0.8).
  put<double>(p, "m.conv.fc1.weight", {2, 2}, {});
  put<double>(p, "m.conv.fc1.bias", {2}, {0.8, 0.8});
  const std::vector<double> w{0.1, -0.2, 0.3, 0.4, -0.5, 0.6, 1.0, 2.0, 3.0, -4.0, 5.0, 6.0};
  put<double>(p, "m.conv.weight", {2, 3, 2}, w);
  put<double>(p, "m.conv.bias", {2}, {0.25, -0.5});
  nn::StridedLayer layer("m", 1, 3, 0);
  ForwardContext ctx;
  nn::StridedLayer::Cache<double> c;
  const Mat<double> x = Mat<double>::Constant(3, 2, 1.0);
  const Mat<double> y = layer.forward(p, x, ctx, c);
  ASSERT_EQ(y.rows(), 1);
  ASSERT_EQ(y.cols(), 2);
  const double h = 0.8 * 0.5 * (1.0 + std::erf(0.8 / std::sqrt(2.0)));
  EXPECT_NEAR(y(0, 0), h * (0.1 - 0.2 + 0.3 + 0.4 - 0.5 + 0.6) + 0.25, 1e-12);
  EXPECT_NEAR(y(0, 1), h * (1.0 + 2.0 + 3.0 - 4.0 + 5.0 + 6.0) - 0.5, 1e-12);
}

TEST(Mofa, ConvolutionTapsFollowFrameOrder) {
  ParameterStore<double> p;
  for (const char* n : {"m.norm1", "m.norm2"}) {
    put<double>(p, std::string(n) + ".weight", {2}, {1, 1});
    put<double>(p, std::string(n) + ".bias", {2}, {});
  }
  for (const char* n : {"m.attn.query", "m.attn.key", "m.attn.value", "m.attn.out"}) {
    put<double>(p, std::string(n) + ".weight", {2, 2}, {});
    put<double>(p, std::string(n) + ".bias", {2}, {});
  }
  // A row (a, b) normalizes to (+u, -u) when a > b and (-u, +u) otherwise; one hidden unit reads channel 0.
  put<double>(p, "m.conv.fc1.weight", {1, 2}, {1, 0});
  put<double>(p, "m.conv.fc1.bias", {1}, {2.0});
  put<double>(p, "m.conv.weight", {1, 3, 1}, {1.0, 10.0, 100.0});
  put<double>(p, "m.conv.bias", {1}, {});
  nn::StridedLayer layer("m", 1, 3, 0);
  ForwardContext ctx;
  nn::StridedLayer::Cache<double> c;
  Mat<double> x(6, 2);
  x << 1, -1, -1, 1, -1, 1,  //
      -1, 1, -1, 1, 1, -1;
  const Mat<double> y = layer.forward(p, x, ctx, c);
  ASSERT_EQ(y.rows(), 2);
  const double u = 1.0 / std::sqrt(1.0 + 1e-5);
  auto gelu = [](double v) { return v * 0.5 * (1.0 + std::erf(v / std::sqrt(2.0))); };
  const double hi = gelu(2.0 + u), lo = gelu(2.0 - u);
  EXPECT_NEAR(y(0, 0), 1.0 * hi + 10.0 * lo + 100.0 * lo, 1e-9);
  EXPECT_NEAR(y(1, 0), 1.0 * lo + 10.0 * lo + 100.0 * hi, 1e-9);
}

TEST(Mofa, DegenerateSingleFrameConfig) {
  ModelConfig cfg = tiny_config(1, 5, 8);
  cfg.kernel = 1;
  cfg.mofa_depth = 0;
  const auto p = random_store<double>(cfg, Stage::finetune, 2);
  StmoNetwork net(cfg);
  ForwardContext ctx;
  StmoNetwork::Cache<double> c;
  const auto out = net.forward(p, random_matrix<double>(1, 10, 3), ctx, c);
  EXPECT_EQ(c.mofa.lengths, (std::vector<std::size_t>{1}));
  EXPECT_EQ(c.aggregated.rows(), 1);
  EXPECT_EQ(c.aggregated.cols(), 8);
  EXPECT_EQ(out.center.rows(), 1);
  EXPECT_EQ(out.center.cols(), 15);
}

TEST(Mofa, RejectsLengthNotReducibleToOne) {
  ModelConfig cfg = tiny_config();
  cfg.frames = 15;
  EXPECT_THROW(cfg.validate(), Error);
  cfg.frames = 9;
  cfg.kernel = 2;
  EXPECT_THROW(cfg.validate(), Error);
}

TEST(StmoNetwork, ZeroHeadsGiveZeroOutput) {
  const ModelConfig cfg = tiny_config();
  auto p = random_store<float>(cfg, Stage::finetune, 3);
  for (const char* n : {"head.center.weight", "head.center.bias", "head.frames.weight", "head.frames.bias"}) p.at(n).values.assign(p.at(n).size(), 0.0f);
  ForwardContext ctx;
  const auto out = StmoNetwork(cfg).forward(p, random_matrix<float>(9, 10, 4), ctx);
  EXPECT_TRUE(out.center.isZero(0));
  EXPECT_TRUE(out.frames.isZero(0));
}

TEST(StmoNetwork, CenterHeadDiffersFromFrameHeadAndIsDeterministic) {
  const ModelConfig cfg = tiny_config();
  const auto p = random_store<float>(cfg, Stage::finetune, 4);
  const Mat<float> x = random_matrix<float>(9, 10, 5);
  ForwardContext ctx;
  StmoNetwork net(cfg);
  const auto a = net.forward(p, x, ctx);
  const auto b = net.forward(p, x, ctx);
  EXPECT_EQ(a.center, b.center);
  EXPECT_EQ(a.frames, b.frames);
  EXPECT_GT((a.center - a.frames.row(4)).norm(), 1e-3);
}

TEST(StmoNetwork, RejectsWrongWindowShape) {
  const ModelConfig cfg = tiny_config();
  const auto p = random_store<float>(cfg, Stage::finetune, 4);
  ForwardContext ctx;
  EXPECT_THROW(StmoNetwork(cfg).forward(p, random_matrix<float>(7, 10, 5), ctx), Error);
  EXPECT_THROW(StmoNetwork(cfg).forward(p, random_matrix<float>(9, 12, 5), ctx), Error);
}

TEST(StmoNetwork, DropoutOnlyInTrainingMode) {
  ModelConfig cfg = tiny_config();
  cfg.dropout = 0.3;
  const auto p = random_store<float>(cfg, Stage::finetune, 4);
  const Mat<float> x = random_matrix<float>(9, 10, 5);
  StmoNetwork net(cfg);
  ForwardContext eval;
  Rng rng(1);
  ForwardContext train{true, cfg.dropout, &rng, nullptr};
  EXPECT_EQ(net.forward(p, x, eval).center, net.forward(p, x, eval).center);
  EXPECT_NE(net.forward(p, x, train).center, net.forward(p, x, eval).center);
}

TEST(Encoder, ReferenceMaskingKeeps48Frames) {
  ModelConfig cfg = tiny_config(243, 17, 16);
  const auto p = random_store<float>(cfg, Stage::pretrain, 6);
  Rng rng(2);
  const auto plan = build_plan(MaskConfig{}, 243, 17, rng);
  ForwardContext ctx;
  const Mat<float> enc = encoder_forward<float>(cfg, p, synth_window(243, 1), plan, Stage::pretrain, ctx);
  EXPECT_EQ(enc.rows(), 48);
  EXPECT_EQ(enc.cols(), 16);
}

TEST(Encoder, FinetuneRejectsMaskedPlan) {
  const ModelConfig cfg = tiny_config();
  const auto p = random_store<float>(cfg, Stage::finetune, 6);
  Rng rng(3);
  const auto plan = build_plan(MaskConfig{0.5, 1, MaskStrategy::spatio_temporal}, 9, 5, rng);
  ForwardContext ctx;
  EXPECT_THROW(encoder_forward<float>(cfg, p, random_matrix<float>(9, 10, 1), plan, Stage::finetune, ctx), Error);
}

TEST(Decoder, OutputShapeAndOriginalOrder) {
  ModelConfig cfg = tiny_config(27, 17, 16);
  const auto p = random_store<float>(cfg, Stage::pretrain, 7);
  Rng rng(4);
  const auto plan = build_plan(MaskConfig{}, 27, 17, rng);
  PretrainNetwork net(cfg);
  ForwardContext ctx;
  PretrainNetwork::Cache<float> c;
  const Mat<float> recon = net.forward(p, random_matrix<float>(27, 34, 2), plan, ctx, c);
  EXPECT_EQ(recon.rows(), 27);
  EXPECT_EQ(recon.cols(), 34);
  EXPECT_EQ(to_pose_array<float>(recon, 17, 2).frames, 27u);
  // Slot k of the decoder writes original frame slots[k]; check against the head applied to the slot outputs.
  nn::Linear head("decoder.head");
  const Mat<float> slots = head.forward(p, c.decoded);
  for (std::size_t k = 0; k < c.slots.size(); ++k)
    EXPECT_EQ(Mat<float>(recon.row(static_cast<Eigen::Index>(c.slots[k]))), Mat<float>(slots.row(static_cast<Eigen::Index>(k))));
}

TEST(Decoder, NoMaskingMeansNoTemporalPadding) {
  const ModelConfig cfg = tiny_config();
  auto p = random_store<float>(cfg, Stage::pretrain, 8);
  const Mat<float> x = random_matrix<float>(9, 10, 3);
  PretrainNetwork net(cfg);
  ForwardContext ctx;
  const auto plan = MaskPlan::identity(9);
  const Mat<float> before = net.forward(p, x, plan, ctx);
  p.at("mask.temporal_token").values.assign(16, 5.0f);
  p.at("mask.spatial_token").values = {3.0f, -3.0f};
  EXPECT_EQ(net.forward(p, x, plan, ctx), before);
}

TEST(Decoder, AttentionPartitionMatchesSurvivors) {
  ModelConfig cfg = tiny_config(243, 17, 16);
  cfg.decoder_depth = 1;
  const auto p = random_store<float>(cfg, Stage::pretrain, 9);
  Rng rng(5);
  const auto plan = build_plan(MaskConfig{}, 243, 17, rng);
  AttentionRecorder rec;
  ForwardContext ctx;
  ctx.recorder = &rec;
  PretrainNetwork(cfg).forward(p, synth_window(243, 2), plan, ctx);
  std::size_t decoder_dumps = 0;
  for (const auto& d : rec.dumps) {
    if (d.module == "tem") {
      EXPECT_EQ(d.weights.rows(), 48);
      EXPECT_EQ(d.weights.cols(), 48);
    }
    if (d.module != "decoder") continue;
    ++decoder_dumps;
    EXPECT_EQ(d.partition, 48u);
    EXPECT_EQ(d.weights.rows(), 243);
    EXPECT_EQ(d.weights.topLeftCorner(48, 48).rows(), 48);
  }
  EXPECT_EQ(decoder_dumps, cfg.heads);
}

TEST(TransferEncoder, CopiesEncoderBitExactly) {
  const ModelConfig cfg = tiny_config();
  const auto s1 = random_store<float>(cfg, Stage::pretrain, 10);
  auto s2 = init_parameters<float>(cfg, Stage::finetune, 11);
  const auto fresh = s2;
  transfer_encoder(s1, s2);
  std::size_t copied = 0;
  for (const auto& [name, t] : s2.entries()) {
    if (is_encoder_parameter(name)) {
      EXPECT_EQ(t, s1.at(name)) << name;
      ++copied;
    } else {
      EXPECT_EQ(t, fresh.at(name)) << name;
    }
  }
  EXPECT_GT(copied, 10u);
  EXPECT_TRUE(s2.contains("tem.pos_embed"));
  for (const auto& [name, t] : s2.entries()) {
    EXPECT_NE(name.rfind("decoder.", 0), 0u) << name;
    EXPECT_NE(name.rfind("mask.", 0), 0u) << name;
  }
}

TEST(TransferEncoder, NamesTheOffendingArray) {
  const ModelConfig cfg = tiny_config();
  auto s1 = random_store<float>(cfg, Stage::pretrain, 10);
  auto s2 = init_parameters<float>(cfg, Stage::finetune, 11);
  auto missing = s1;
  missing.erase("tem.layer1.ffn.fc2.bias");
  try {
    transfer_encoder(missing, s2);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("tem.layer1.ffn.fc2.bias"), std::string::npos);
  }
  auto wrong = s1;
  wrong.set("sem.embed.weight", Tensor<float>({16, 12}));
  try {
    transfer_encoder(wrong, s2);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("sem.embed.weight"), std::string::npos);
  }
}

TEST(TransferEncoder, StageTwoEncoderEqualsStageOneWithEmptyPlan) {
  const ModelConfig cfg = tiny_config();
  const auto s1 = random_store<float>(cfg, Stage::pretrain, 12);
  auto s2 = init_parameters<float>(cfg, Stage::finetune, 13);
  transfer_encoder(s1, s2);
  const Mat<float> x = random_matrix<float>(9, 10, 14);
  ForwardContext ctx;
  const auto id = MaskPlan::identity(9);
  EXPECT_EQ(encoder_forward<float>(cfg, s1, x, id, Stage::pretrain, ctx), encoder_forward<float>(cfg, s2, x, id, Stage::finetune, ctx));
}

TEST(Parameters, InitializationConventions) {
  const ModelConfig cfg = tiny_config();
  const auto p = init_parameters<float>(cfg, Stage::pretrain, 1);
  for (const auto& [name, t] : p.entries()) {
    if (name.ends_with(".bias") || name.rfind("mask.", 0) == 0) {
      for (float v : t.values) EXPECT_EQ(v, 0.0f) << name;
    } else if (name.find("norm") != std::string::npos) {
      for (float v : t.values) EXPECT_EQ(v, 1.0f) << name;
    } else {
      for (float v : t.values) EXPECT_LE(std::abs(v), 0.04f) << name;
    }
  }
  EXPECT_EQ(p, init_parameters<float>(cfg, Stage::pretrain, 1));
  EXPECT_NE(p, init_parameters<float>(cfg, Stage::pretrain, 2));
  EXPECT_EQ(p.at("mask.spatial_token").shape, (Shape{2}));
  EXPECT_EQ(p.at("mask.temporal_token").shape, (Shape{16}));
}

TEST(Checkpoint, RoundTripIsBitExact) {
  TempDir dir("ckpt");
  const ModelConfig cfg = tiny_config();
  Checkpoint ck;
  ck.config = cfg;
  ck.stage = Stage::pretrain;
  ck.params = random_store<float>(cfg, Stage::pretrain, 20);
  ck.epoch = 3;
  ck.step = 17;
  ck.seed = 99;
  OptimizerState st;
  st.step = 17;
  st.m = random_store<float>(cfg, Stage::pretrain, 21);
  st.v = random_store<float>(cfg, Stage::pretrain, 22);
  ck.optimizer = st;
  ck.extra = {{"best_val", 0.5}};
  save_checkpoint(dir / "a.ckpt", ck);
  const auto back = load_checkpoint(dir / "a.ckpt");
  EXPECT_EQ(back.params, ck.params);
  EXPECT_EQ(back.stage, Stage::pretrain);
  EXPECT_EQ(back.epoch, 3u);
  EXPECT_EQ(back.step, 17u);
  EXPECT_EQ(back.seed, 99u);
  EXPECT_EQ(to_json(back.config), to_json(cfg));
  ASSERT_TRUE(back.optimizer.has_value());
  EXPECT_EQ(back.optimizer->m, st.m);
  EXPECT_EQ(back.optimizer->v, st.v);
  EXPECT_EQ(back.optimizer->step, 17u);
  EXPECT_EQ(back.extra["best_val"].get<double>(), 0.5);
  save_checkpoint(dir / "b.ckpt", back);
  EXPECT_EQ(le::read_file(dir / "a.ckpt"), le::read_file(dir / "b.ckpt"));
}

TEST(Checkpoint, BinaryLayoutHeader) {
  ParameterStore<float> p;
  p.set("w", Tensor<float>({2, 1}, 1.5f));
  const std::string bytes = encode_store(p);
  ASSERT_EQ(bytes.size(), 4u + 4 + 4 + 4 + 1 + 4 + 8 + 8);
  EXPECT_EQ(bytes.substr(0, 4), "PSTM");
  const auto* u = reinterpret_cast<const unsigned char*>(bytes.data());
  EXPECT_EQ(le::get_u32(u + 4), 1u);   // version
  EXPECT_EQ(le::get_u32(u + 8), 1u);   // entries
  EXPECT_EQ(le::get_u32(u + 12), 1u);  // name length
  EXPECT_EQ(bytes[16], 'w');
  EXPECT_EQ(le::get_u32(u + 17), 2u);  // rank
  EXPECT_EQ(le::get_u32(u + 21), 2u);
  EXPECT_EQ(le::get_u32(u + 25), 1u);
  EXPECT_EQ(le::get_f32(u + 29), 1.5f);
}

TEST(Checkpoint, RejectsCorruptFiles) {
  ParameterStore<float> p;
  p.set("w", Tensor<float>({3}, 2.0f));
  const std::string bytes = encode_store(p);
  auto decode = [](const std::string& s) { return decode_store(std::vector<unsigned char>(s.begin(), s.end()), "test"); };
  EXPECT_NO_THROW(decode(bytes));
  EXPECT_THROW(decode(bytes.substr(0, bytes.size() - 2)), Error);
  EXPECT_THROW(decode(bytes + "x"), Error);
  std::string bad = bytes;
  bad[0] = 'Q';
  EXPECT_THROW(decode(bad), Error);
  std::string version = bytes;
  version[4] = 9;
  try {
    decode(version);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::unsupported_version);
  }
}

TEST(Checkpoint, LayoutCheckAndEncoderExport) {
  TempDir dir("layout");
  const ModelConfig cfg = tiny_config();
  Checkpoint ck;
  ck.config = cfg;
  ck.stage = Stage::pretrain;
  ck.params = init_parameters<float>(cfg, Stage::pretrain, 1);
  ck.params.erase("decoder.head.bias");
  save_checkpoint(dir / "bad.ckpt", ck);
  EXPECT_THROW(load_checkpoint(dir / "bad.ckpt"), Error);
  const auto full = init_parameters<float>(cfg, Stage::pretrain, 1);
  const auto enc = export_encoder(full);
  bool any_decoder = false;
  for (const auto& [name, t] : enc.entries()) any_decoder |= !is_encoder_parameter(name);
  EXPECT_FALSE(any_decoder);
  EXPECT_TRUE(full.contains("decoder.head.weight"));
  EXPECT_FALSE(enc.contains("decoder.head.weight"));
}
