#pragma once

#include <optional>
#include <string>
#include <vector>

#include "pstmo/data/sequence.hpp"
#include "pstmo/masking.hpp"
#include "pstmo/model/layers.hpp"

namespace pstmo {

/// (frames, joints * channels) matrix view of a pose array.
template <typename T>
Mat<T> to_matrix(const PoseArray& a) {
  Mat<T> m(static_cast<Eigen::Index>(a.frames), static_cast<Eigen::Index>(a.joints * a.channels));
  for (std::size_t i = 0; i < a.values.size(); ++i) m.data()[i] = static_cast<T>(a.values[i]);
  return m;
}

template <typename T>
PoseArray to_pose_array(const Mat<T>& m, std::size_t joints, std::size_t channels) {
  PoseArray a(static_cast<std::size_t>(m.rows()), joints, channels);
  require(static_cast<std::size_t>(m.cols()) == joints * channels, ErrorCode::shape_mismatch, "matrix width does not match J*C");
  for (std::size_t i = 0; i < a.values.size(); ++i) a.values[i] = static_cast<float>(m.data()[i]);
  return a;
}

/// Replaces the (x, y) of every masked joint with the spatial padding joint. Row r of `frames`
/// pairs with masks[r].
template <typename T>
Mat<T> apply_spatial_padding(const Mat<T>& frames, const std::vector<std::vector<std::size_t>>& masks, const RowVec<T>& token) {
  require(static_cast<std::size_t>(frames.rows()) == masks.size(), ErrorCode::shape_mismatch, "one spatial mask per frame expected");
  require(token.size() == 2, ErrorCode::shape_mismatch, "spatial padding joint must have two coordinates");
  Mat<T> out = frames;
  for (std::size_t r = 0; r < masks.size(); ++r)
    for (std::size_t j : masks[r]) {
      require(2 * j + 1 < static_cast<std::size_t>(frames.cols()), ErrorCode::invalid_argument, "masked joint index out of range");
      out(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(2 * j)) = token[0];
      out(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(2 * j + 1)) = token[1];
    }
  return out;
}

/// SEM: per-frame input projection then residual MLP sub-blocks; weights shared across frames.
/// Frames are processed one at a time so a frame's latent is bit-identical however many frames are batched.
struct SpatialEncoder {
  nn::Linear embed{"sem.embed", true};
  std::vector<nn::ResidualMlp> blocks;

  template <typename T>
  struct Cache {
    Mat<T> input;
    std::vector<typename nn::ResidualMlp::Cache<T>> blocks;
  };

  SpatialEncoder() = default;
  explicit SpatialEncoder(const ModelConfig& c) {
    for (std::size_t k = 0; k < c.sem_blocks; ++k) {
      const std::string bp = "sem.block" + std::to_string(k);
      blocks.emplace_back(bp + ".norm", bp, true);
    }
  }

  template <typename T>
  Mat<T> forward(const ParameterStore<T>& p, const Mat<T>& x, ForwardContext& ctx, Cache<T>& c) const {
    c.input = x;
    Mat<T> h = embed.forward(p, x);
    c.blocks.resize(blocks.size());
    for (std::size_t k = 0; k < blocks.size(); ++k) h = blocks[k].forward(p, h, ctx, c.blocks[k]);
    return h;
  }

  template <typename T>
  Mat<T> backward(const ParameterStore<T>& p, ParameterStore<T>& g, const Cache<T>& c, Mat<T> dy) const {
    for (std::size_t k = blocks.size(); k-- > 0;) dy = blocks[k].backward(p, g, c.blocks[k], dy);
    return embed.backward(p, g, c.input, dy);
  }
};

/// Positional embedding lookup, encoder layers, final normalization. Used by TEM and the decoder.
struct TransformerStack {
  std::string pos_embed;
  std::vector<nn::EncoderLayer> layers;
  nn::LayerNorm norm;

  template <typename T>
  struct Cache {
    std::vector<std::size_t> positions;
    std::vector<typename nn::EncoderLayer::Cache<T>> layers;
    typename nn::LayerNorm::Cache<T> norm;
  };

  TransformerStack() = default;
  TransformerStack(const std::string& prefix, std::size_t depth, std::size_t heads)
      : pos_embed(prefix + ".pos_embed"), norm(prefix + ".norm") {
    for (std::size_t k = 0; k < depth; ++k) layers.emplace_back(prefix + ".layer" + std::to_string(k), heads, prefix, k);
  }

  template <typename T>
  Mat<T> forward(const ParameterStore<T>& p, const Mat<T>& x, const std::vector<std::size_t>& positions, ForwardContext& ctx,
                 Cache<T>& c) const {
    const auto table = p.mat(pos_embed);
    require(positions.size() == static_cast<std::size_t>(x.rows()), ErrorCode::shape_mismatch, "one position per token expected");
    require(x.rows() <= table.rows(), ErrorCode::invalid_argument,
            std::to_string(x.rows()) + " tokens exceed the positional table (" + std::to_string(table.rows()) + ")");
    Mat<T> h = x;
    for (std::size_t r = 0; r < positions.size(); ++r) {
      require(positions[r] < static_cast<std::size_t>(table.rows()), ErrorCode::invalid_argument,
              "position " + std::to_string(positions[r]) + " exceeds the positional table (" + std::to_string(table.rows()) + ")");
      h.row(static_cast<Eigen::Index>(r)) += table.row(static_cast<Eigen::Index>(positions[r]));
    }
    c.positions = positions;
    c.layers.resize(layers.size());
    for (std::size_t k = 0; k < layers.size(); ++k) h = layers[k].forward(p, h, ctx, c.layers[k]);
    return norm.forward(p, h, c.norm);
  }

  template <typename T>
  Mat<T> backward(const ParameterStore<T>& p, ParameterStore<T>& g, const Cache<T>& c, const Mat<T>& dy) const {
    Mat<T> d = norm.backward(p, g, c.norm, dy);
    for (std::size_t k = layers.size(); k-- > 0;) d = layers[k].backward(p, g, c.layers[k], d);
    auto table = g.mat(pos_embed);
    for (std::size_t r = 0; r < c.positions.size(); ++r)
      table.row(static_cast<Eigen::Index>(c.positions[r])) += d.row(static_cast<Eigen::Index>(r));
    return d;
  }
};

/// SEM followed (optionally) by TEM. Token positions index the TEM positional table.
struct Encoder {
  SpatialEncoder sem;
  std::optional<TransformerStack> tem;

  template <typename T>
  struct Cache {
    typename SpatialEncoder::Cache<T> sem;
    typename TransformerStack::Cache<T> tem;
  };

  Encoder() = default;
  explicit Encoder(const ModelConfig& c) : sem(c) {
    if (c.use_tem) tem.emplace("tem", c.tem_depth, c.heads);
  }

  template <typename T>
  Mat<T> forward(const ParameterStore<T>& p, const Mat<T>& x, const std::vector<std::size_t>& positions, ForwardContext& ctx,
                 Cache<T>& c) const {
    Mat<T> h = sem.forward(p, x, ctx, c.sem);
    if (!tem) return h;
    return tem->forward(p, h, positions, ctx, c.tem);
  }

  template <typename T>
  Mat<T> backward(const ParameterStore<T>& p, ParameterStore<T>& g, const Cache<T>& c, const Mat<T>& dy) const {
    const Mat<T> d = tem ? tem->backward(p, g, c.tem, dy) : dy;
    return sem.backward(p, g, c.sem, d);
  }
};

/// MOFA: strided Transformer layers collapsing N frames to one, then a final normalization.
struct FrameAggregator {
  std::vector<nn::StridedLayer> layers;
  nn::LayerNorm norm{"mofa.norm"};

  template <typename T>
  struct Cache {
    std::vector<typename nn::StridedLayer::Cache<T>> layers;
    typename nn::LayerNorm::Cache<T> norm;
    std::vector<std::size_t> lengths;
  };

  FrameAggregator() = default;
  explicit FrameAggregator(const ModelConfig& c) {
    for (std::size_t k = 0; k < c.mofa_depth; ++k) layers.emplace_back("mofa.layer" + std::to_string(k), c.heads, c.kernel, k);
  }

  template <typename T>
  Mat<T> forward(const ParameterStore<T>& p, const Mat<T>& x, ForwardContext& ctx, Cache<T>& c) const {
    Mat<T> h = x;
    c.layers.resize(layers.size());
    c.lengths.assign(1, static_cast<std::size_t>(x.rows()));
    for (std::size_t k = 0; k < layers.size(); ++k) {
      h = layers[k].forward(p, h, ctx, c.layers[k]);
      c.lengths.push_back(static_cast<std::size_t>(h.rows()));
    }
    require(h.rows() == 1, ErrorCode::shape_mismatch, "MOFA did not reduce the sequence to a single frame");
    return norm.forward(p, h, c.norm);
  }

  template <typename T>
  Mat<T> backward(const ParameterStore<T>& p, ParameterStore<T>& g, const Cache<T>& c, const Mat<T>& dy) const {
    Mat<T> d = norm.backward(p, g, c.norm, dy);
    for (std::size_t k = layers.size(); k-- > 0;) d = layers[k].backward(p, g, c.layers[k], d);
    return d;
  }
};

template <typename T>
struct StmoOutput {
  Mat<T> center;  // 1 x 3J, millimeters
  Mat<T> frames;  // N x 3J, millimeters
};

/// Stage-II network: encoder, MOFA, and the two 3D regression heads.
class StmoNetwork {
 public:
  template <typename T>
  struct Cache {
    typename Encoder::Cache<T> encoder;
    typename FrameAggregator::Cache<T> mofa;
    Mat<T> latents, aggregated;
  };

  explicit StmoNetwork(ModelConfig config) : config_(std::move(config)), encoder_(config_) {
    config_.validate();
    if (config_.use_mofa) mofa_ = FrameAggregator(config_);
  }

  const ModelConfig& config() const { return config_; }

  /// input: N x 2J normalized 2D poses.
  template <typename T>
  StmoOutput<T> forward(const ParameterStore<T>& p, const Mat<T>& input, ForwardContext& ctx, Cache<T>& c) const {
    check_input(input);
    std::vector<std::size_t> positions(config_.frames);
    for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = i;
    c.latents = encoder_.forward(p, input, positions, ctx, c.encoder);
    const T scale = static_cast<T>(config_.output_scale);
    StmoOutput<T> out;
    out.frames = head_frames_.forward(p, c.latents) * scale;
    if (config_.use_mofa) {
      c.aggregated = mofa_.forward(p, c.latents, ctx, c.mofa);
      out.center = head_center_.forward(p, c.aggregated) * scale;
    } else {
      out.center = out.frames.row(static_cast<Eigen::Index>(config_.center()));
    }
    return out;
  }

  template <typename T>
  StmoOutput<T> forward(const ParameterStore<T>& p, const Mat<T>& input, ForwardContext& ctx) const {
    Cache<T> c;
    return forward(p, input, ctx, c);
  }

  /// Accumulates parameter gradients for upstream gradients on both outputs.
  template <typename T>
  void backward(const ParameterStore<T>& p, ParameterStore<T>& g, const Cache<T>& c, const Mat<T>& d_center,
                const Mat<T>& d_frames) const {
    const T scale = static_cast<T>(config_.output_scale);
    Mat<T> d_frames_scaled = d_frames * scale;
    if (!config_.use_mofa) d_frames_scaled.row(static_cast<Eigen::Index>(config_.center())) += d_center * scale;
    Mat<T> d_latents = head_frames_.backward(p, g, c.latents, d_frames_scaled);
    if (config_.use_mofa) {
      const Mat<T> d_agg = head_center_.backward(p, g, c.aggregated, Mat<T>(d_center * scale));
      d_latents += mofa_.backward(p, g, c.mofa, d_agg);
    }
    encoder_.backward(p, g, c.encoder, d_latents);
  }

  const Encoder& encoder() const { return encoder_; }
  const FrameAggregator& aggregator() const { return mofa_; }

 private:
  template <typename T>
  void check_input(const Mat<T>& input) const {
    require(static_cast<std::size_t>(input.rows()) == config_.frames && static_cast<std::size_t>(input.cols()) == 2 * config_.joints,
            ErrorCode::shape_mismatch,
            "expected a (" + std::to_string(config_.frames) + "," + std::to_string(2 * config_.joints) + ") window, got (" +
                std::to_string(input.rows()) + "," + std::to_string(input.cols()) + ")");
  }

  ModelConfig config_;
  Encoder encoder_;
  FrameAggregator mofa_;
  nn::Linear head_center_{"head.center"};
  nn::Linear head_frames_{"head.frames"};
};

/// Stage-I network: masked encoder plus the reconstruction decoder.
class PretrainNetwork {
 public:
  template <typename T>
  struct Cache {
    MaskPlan plan;
    std::vector<std::size_t> slots;
    typename Encoder::Cache<T> encoder;
    typename TransformerStack::Cache<T> decoder;
    Mat<T> decoded;
  };

  explicit PretrainNetwork(ModelConfig config)
      : config_(std::move(config)), encoder_(config_), decoder_("decoder", config_.decoder_depth, config_.heads) {
    config_.validate();
  }

  const ModelConfig& config() const { return config_; }

  /// Surviving frames with spatial padding applied: the encoder's actual input (a x 2J).
  template <typename T>
  Mat<T> masked_input(const ParameterStore<T>& p, const Mat<T>& input, const MaskPlan& plan) const {
    Mat<T> kept(static_cast<Eigen::Index>(plan.unmasked_order.size()), input.cols());
    for (std::size_t r = 0; r < plan.unmasked_order.size(); ++r)
      kept.row(static_cast<Eigen::Index>(r)) = input.row(static_cast<Eigen::Index>(plan.unmasked_order[r]));
    return apply_spatial_padding<T>(kept, plan.spatial_masks, p.mat("mask.spatial_token").row(0));
  }

  /// Encoded surviving frames (a x d).
  template <typename T>
  Mat<T> encode(const ParameterStore<T>& p, const Mat<T>& input, const MaskPlan& plan, ForwardContext& ctx, Cache<T>& c) const {
    check(input, plan);
    c.plan = plan;
    return encoder_.forward(p, masked_input(p, input, plan), plan.unmasked_order, ctx, c.encoder);
  }

  /// Reconstruction (N x 2J) in original frame order.
  template <typename T>
  Mat<T> decode(const ParameterStore<T>& p, const Mat<T>& encoded, const MaskPlan& plan, ForwardContext& ctx, Cache<T>& c) const {
    const std::size_t a = plan.unmasked_order.size();
    require(static_cast<std::size_t>(encoded.rows()) == a, ErrorCode::shape_mismatch,
            "decoder expects " + std::to_string(a) + " encoded frames, got " + std::to_string(encoded.rows()));
    c.slots = plan.slot_positions();
    const Eigen::Index n = static_cast<Eigen::Index>(config_.frames);
    Mat<T> seq(n, encoded.cols());
    seq.topRows(static_cast<Eigen::Index>(a)) = encoded;
    const auto token = p.mat("mask.temporal_token").row(0);
    for (Eigen::Index r = static_cast<Eigen::Index>(a); r < n; ++r) seq.row(r) = token;
    if (ctx.recorder) ctx.recorder->partition = a;
    c.decoded = decoder_.forward(p, seq, c.slots, ctx, c.decoder);
    const Mat<T> slots_out = head_.forward(p, c.decoded);
    Mat<T> recon(n, slots_out.cols());
    for (std::size_t r = 0; r < c.slots.size(); ++r) recon.row(static_cast<Eigen::Index>(c.slots[r])) = slots_out.row(static_cast<Eigen::Index>(r));
    return recon;
  }

  template <typename T>
  Mat<T> forward(const ParameterStore<T>& p, const Mat<T>& input, const MaskPlan& plan, ForwardContext& ctx, Cache<T>& c) const {
    const Mat<T> encoded = encode(p, input, plan, ctx, c);
    return decode(p, encoded, plan, ctx, c);
  }

  template <typename T>
  Mat<T> forward(const ParameterStore<T>& p, const Mat<T>& input, const MaskPlan& plan, ForwardContext& ctx) const {
    Cache<T> c;
    return forward(p, input, plan, ctx, c);
  }

  template <typename T>
  void backward(const ParameterStore<T>& p, ParameterStore<T>& g, const Cache<T>& c, const Mat<T>& d_recon) const {
    Mat<T> d_slots(d_recon.rows(), d_recon.cols());
    for (std::size_t r = 0; r < c.slots.size(); ++r) d_slots.row(static_cast<Eigen::Index>(r)) = d_recon.row(static_cast<Eigen::Index>(c.slots[r]));
    const Mat<T> d_decoded = head_.backward(p, g, c.decoded, d_slots);
    const Mat<T> d_seq = decoder_.backward(p, g, c.decoder, d_decoded);
    const Eigen::Index a = static_cast<Eigen::Index>(c.plan.unmasked_order.size());
    if (d_seq.rows() > a) g.mat("mask.temporal_token").row(0) += d_seq.bottomRows(d_seq.rows() - a).colwise().sum();
    const Mat<T> d_input = encoder_.backward(p, g, c.encoder, Mat<T>(d_seq.topRows(a)));
    auto spatial = g.mat("mask.spatial_token");
    for (std::size_t r = 0; r < c.plan.spatial_masks.size(); ++r)
      for (std::size_t j : c.plan.spatial_masks[r]) {
        spatial(0, 0) += d_input(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(2 * j));
        spatial(0, 1) += d_input(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(2 * j + 1));
      }
  }

  const Encoder& encoder() const { return encoder_; }

 private:
  template <typename T>
  void check(const Mat<T>& input, const MaskPlan& plan) const {
    require(static_cast<std::size_t>(input.rows()) == config_.frames && static_cast<std::size_t>(input.cols()) == 2 * config_.joints,
            ErrorCode::shape_mismatch, "pretraining input must be (N, 2J)");
    validate_plan(plan, config_.frames, config_.joints);
  }

  ModelConfig config_;
  Encoder encoder_;
  TransformerStack decoder_;
  nn::Linear head_{"decoder.head"};
};

/**
 * Encoder pass for either stage. Pre-training drops masked frames and pads masked joints;
 * fine-tuning requires an empty plan and runs over all N frames.
 */
template <typename T>
Mat<T> encoder_forward(const ModelConfig& config, const ParameterStore<T>& p, const Mat<T>& input, const MaskPlan& plan, Stage stage,
                       ForwardContext& ctx) {
  if (stage == Stage::finetune) {
    require(plan.empty(), ErrorCode::invalid_argument, "fine-tuning runs without masking");
    Encoder enc(config);
    typename Encoder::Cache<T> c;
    std::vector<std::size_t> positions(static_cast<std::size_t>(input.rows()));
    for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = i;
    return enc.forward(p, input, positions, ctx, c);
  }
  PretrainNetwork net(config);
  typename PretrainNetwork::Cache<T> c;
  return net.encode(p, input, plan, ctx, c);
}

/**
 * Copies every SEM/TEM array from a Stage-I store into a Stage-II store. Padding tokens, decoder
 * and heads stay behind; MOFA and heads in the target keep their initialization.
 */
template <typename T>
void transfer_encoder(const ParameterStore<T>& stage1, ParameterStore<T>& stage2) {
  for (const auto& [name, tensor] : stage2.entries()) {
    if (!is_encoder_parameter(name)) continue;
    require(stage1.contains(name), ErrorCode::shape_mismatch, "pre-trained checkpoint lacks '" + name + "'");
    require(stage1.at(name).shape == tensor.shape, ErrorCode::shape_mismatch,
            "shape mismatch for '" + name + "': pre-trained " + shape_string(stage1.at(name).shape) + " vs " + shape_string(tensor.shape));
  }
  for (const auto& [name, tensor] : stage1.entries())
    if (is_encoder_parameter(name))
      require(stage2.contains(name), ErrorCode::shape_mismatch, "fine-tuning model has no slot for '" + name + "'");
  for (auto& [name, tensor] : stage2.entries())
    if (is_encoder_parameter(name)) tensor = stage1.at(name);
}

}  // namespace pstmo
