#pragma once

#include <nlohmann/json.hpp>

#include <cstddef>
#include <set>
#include <string>
#include <vector>

#include "pstmo/core/error.hpp"

namespace pstmo {

enum class Stage { pretrain, finetune };

inline std::string to_string(Stage s) { return s == Stage::pretrain ? "pretrain" : "finetune"; }

inline Stage parse_stage(const std::string& s) {
  if (s == "pretrain" || s == "stage1") return Stage::pretrain;
  if (s == "finetune" || s == "stage2") return Stage::finetune;
  throw Error(ErrorCode::invalid_argument, "unknown stage '" + s + "'");
}

enum class Variant { small, full, custom };

inline std::string to_string(Variant v) {
  switch (v) {
    case Variant::small: return "S";
    case Variant::full: return "full";
    case Variant::custom: return "custom";
  }
  return "?";
}

inline Variant parse_variant(const std::string& s) {
  if (s == "S" || s == "small") return Variant::small;
  if (s == "full") return Variant::full;
  if (s == "custom") return Variant::custom;
  throw Error(ErrorCode::invalid_argument, "unknown model variant '" + s + "'");
}

/// Architecture hyperparameters. Defaults are the small reference model on 243 frames.
struct ModelConfig {
  std::size_t frames = 243;        // N
  std::size_t joints = 17;         // J
  std::size_t dim = 256;           // d
  std::size_t heads = 8;
  std::size_t sem_blocks = 1;      // L
  std::size_t tem_depth = 3;       // L1
  std::size_t mofa_depth = 5;      // L2
  std::size_t decoder_depth = 2;   // L_D
  std::size_t kernel = 3;          // M, also the MOFA stride
  std::size_t ffn_expansion = 2;   // Transformer / MOFA hidden width = ffn_expansion * d
  std::size_t sem_expansion = 4;   // SEM sub-block hidden width = sem_expansion * d
  double dropout = 0.1;
  double output_scale = 1000.0;    // 3D heads regress meters; outputs are reported in mm
  Variant variant = Variant::small;
  // Ablation switches; the full model has both on.
  bool use_tem = true;
  bool use_mofa = true;

  std::size_t ffn_hidden() const { return ffn_expansion * dim; }
  std::size_t sem_hidden() const { return sem_expansion * dim; }
  std::size_t center() const { return frames / 2; }

  /// Temporal lengths entering each MOFA layer, followed by the final length.
  std::vector<std::size_t> mofa_lengths() const {
    std::vector<std::size_t> out{frames};
    for (std::size_t k = 0; k < mofa_depth; ++k) out.push_back(out.back() / kernel);
    return out;
  }

  void validate() const {
    require(frames >= 1 && frames % 2 == 1, ErrorCode::invalid_argument, "frames (N) must be odd and positive");
    require(joints >= 2, ErrorCode::invalid_argument, "joints (J) must be >= 2");
    require(dim >= 1 && heads >= 1 && dim % heads == 0, ErrorCode::invalid_argument,
            "dim (" + std::to_string(dim) + ") must be divisible by heads (" + std::to_string(heads) + ")");
    require(ffn_expansion >= 1 && sem_expansion >= 1, ErrorCode::invalid_argument, "expansion ratios must be >= 1");
    require(dropout >= 0.0 && dropout < 1.0, ErrorCode::invalid_argument, "dropout must lie in [0, 1)");
    require(output_scale > 0.0, ErrorCode::invalid_argument, "output_scale must be positive");
    if (use_mofa) {
      require(kernel >= 1, ErrorCode::invalid_argument, "MOFA kernel must be >= 1");
      std::size_t len = frames;
      for (std::size_t k = 0; k < mofa_depth; ++k) {
        require(len % kernel == 0, ErrorCode::invalid_argument,
                "MOFA layer " + std::to_string(k) + " input length " + std::to_string(len) + " is not divisible by kernel " +
                    std::to_string(kernel));
        len /= kernel;
      }
      require(len == 1, ErrorCode::invalid_argument,
              "MOFA must reduce " + std::to_string(frames) + " frames to one; kernel^depth does not match N");
    }
    if (variant == Variant::small)
      require(tem_depth == 3 && decoder_depth == 2, ErrorCode::invalid_argument, "variant S requires tem_depth 3, decoder_depth 2");
    if (variant == Variant::full)
      require(tem_depth == 4 && decoder_depth == 3, ErrorCode::invalid_argument, "variant full requires tem_depth 4, decoder_depth 3");
  }
};

/// MOFA depth such that kernel^depth == frames, or throws.
inline std::size_t mofa_depth_for(std::size_t frames, std::size_t kernel = 3) {
  std::size_t depth = 0;
  std::size_t len = frames;
  while (len > 1) {
    require(kernel > 1 && len % kernel == 0, ErrorCode::invalid_argument,
            std::to_string(frames) + " frames are not a power of the MOFA kernel " + std::to_string(kernel));
    len /= kernel;
    ++depth;
  }
  return depth;
}

inline ModelConfig preset_small(std::size_t frames = 243) {
  ModelConfig c;
  c.frames = frames;
  c.mofa_depth = mofa_depth_for(frames);
  return c;
}

inline ModelConfig preset_full(std::size_t frames = 243) {
  ModelConfig c = preset_small(frames);
  c.variant = Variant::full;
  c.tem_depth = 4;
  c.decoder_depth = 3;
  return c;
}

/// Ablation rows of the component study: SEM alone, a plain Transformer alone, SEM + TEM.
/// The SEM-only network carries two sub-blocks (see README, complexity accounting).
inline ModelConfig preset_sem_only(std::size_t frames = 243) {
  ModelConfig c = preset_small(frames);
  c.variant = Variant::custom;
  c.sem_blocks = 2;
  c.use_tem = false;
  c.use_mofa = false;
  return c;
}

inline ModelConfig preset_tem_only(std::size_t frames = 243) {
  ModelConfig c = preset_small(frames);
  c.variant = Variant::custom;
  c.sem_blocks = 0;
  c.use_mofa = false;
  return c;
}

inline ModelConfig preset_sem_tem(std::size_t frames = 243) {
  ModelConfig c = preset_small(frames);
  c.variant = Variant::custom;
  c.use_mofa = false;
  return c;
}

inline ModelConfig model_preset(const std::string& name, std::size_t frames = 243) {
  if (name == "p-stmo-s") return preset_small(frames);
  if (name == "p-stmo") return preset_full(frames);
  if (name == "sem-only") return preset_sem_only(frames);
  if (name == "tem-only") return preset_tem_only(frames);
  if (name == "sem-tem") return preset_sem_tem(frames);
  throw Error(ErrorCode::invalid_argument, "unknown model preset '" + name + "'");
}

namespace detail {

inline void reject_unknown_keys(const nlohmann::json& j, const std::set<std::string>& known, const std::string& where) {
  require(j.is_object(), ErrorCode::parse_error, where + " must be a JSON object");
  for (const auto& [key, value] : j.items())
    require(known.count(key) == 1, ErrorCode::parse_error, "unknown key '" + key + "' in " + where);
}

}  // namespace detail

inline nlohmann::json to_json(const ModelConfig& c) {
  return {{"frames", c.frames},
          {"joints", c.joints},
          {"dim", c.dim},
          {"heads", c.heads},
          {"sem_blocks", c.sem_blocks},
          {"tem_depth", c.tem_depth},
          {"mofa_depth", c.mofa_depth},
          {"decoder_depth", c.decoder_depth},
          {"kernel", c.kernel},
          {"ffn_expansion", c.ffn_expansion},
          {"sem_expansion", c.sem_expansion},
          {"dropout", c.dropout},
          {"output_scale", c.output_scale},
          {"variant", to_string(c.variant)},
          {"use_tem", c.use_tem},
          {"use_mofa", c.use_mofa}};
}

/// Strict: unknown keys are rejected; missing keys keep `base` values. A "preset" key selects the base.
inline ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig base = {}) {
  detail::reject_unknown_keys(j,
                              {"preset", "frames", "joints", "dim", "heads", "sem_blocks", "tem_depth", "mofa_depth",
                               "decoder_depth", "kernel", "ffn_expansion", "sem_expansion", "dropout", "output_scale",
                               "variant", "use_tem", "use_mofa"},
                              "model config");
  try {
    if (j.contains("preset")) base = model_preset(j.at("preset").get<std::string>(), j.value("frames", base.frames));
    ModelConfig c = base;
    c.frames = j.value("frames", c.frames);
    c.joints = j.value("joints", c.joints);
    c.dim = j.value("dim", c.dim);
    c.heads = j.value("heads", c.heads);
    c.sem_blocks = j.value("sem_blocks", c.sem_blocks);
    c.tem_depth = j.value("tem_depth", c.tem_depth);
    c.decoder_depth = j.value("decoder_depth", c.decoder_depth);
    c.kernel = j.value("kernel", c.kernel);
    c.mofa_depth = j.contains("mofa_depth") ? j.at("mofa_depth").get<std::size_t>()
                   : (c.use_mofa && c.frames != base.frames ? mofa_depth_for(c.frames, c.kernel) : c.mofa_depth);
    c.ffn_expansion = j.value("ffn_expansion", c.ffn_expansion);
    c.sem_expansion = j.value("sem_expansion", c.sem_expansion);
    c.dropout = j.value("dropout", c.dropout);
    c.output_scale = j.value("output_scale", c.output_scale);
    if (j.contains("variant")) c.variant = parse_variant(j.at("variant").get<std::string>());
    c.use_tem = j.value("use_tem", c.use_tem);
    c.use_mofa = j.value("use_mofa", c.use_mofa);
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::parse_error, std::string("model config: ") + e.what());
  }
}

}  // namespace pstmo
