#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <map>
#include <string>

#include "pstmo/model/config.hpp"

namespace pstmo {

struct ModuleCost {
  std::uint64_t params = 0;
  std::uint64_t flops = 0;
};

/// Totals are the sums of the per-module entries.
struct ComplexityReport {
  std::uint64_t params = 0;
  std::uint64_t flops = 0;
  std::map<std::string, ModuleCost> modules;

  void add(const std::string& module, std::uint64_t p, std::uint64_t f) {
    modules[module].params += p;
    modules[module].flops += f;
    params += p;
    flops += f;
  }
};

/**
 * FLOP convention: 2 operations per multiply-accumulate in linear maps, convolutions and the two attention
 * products (scores, mixing); softmax, layer normalization and GELU cost one operation per element. Residual
 * and positional-embedding additions, biases and dropout are not counted.
 */
namespace cost {

using u64 = std::uint64_t;

inline u64 linear_params(u64 in, u64 out) { return in * out + out; }
inline u64 linear_flops(u64 rows, u64 in, u64 out) { return 2 * rows * in * out; }
inline u64 norm_params(u64 d) { return 2 * d; }

/// Pre-norm multi-head self-attention sub-layer over `t` tokens (includes its normalization).
inline ModuleCost attention(u64 t, u64 d, u64 heads) {
  ModuleCost c;
  c.params = norm_params(d) + 4 * linear_params(d, d);
  c.flops = t * d + 4 * linear_flops(t, d, d) + 2 * (2 * t * t * d) + heads * t * t;
  return c;
}

/// Pre-norm feed-forward sub-layer: norm, fc1, GELU, fc2.
inline ModuleCost feed_forward(u64 t, u64 d, u64 hidden) {
  return {norm_params(d) + linear_params(d, hidden) + linear_params(hidden, d),
          t * d + linear_flops(t, d, hidden) + t * hidden + linear_flops(t, hidden, d)};
}

inline ModuleCost sem(const ModelConfig& c, u64 t) {
  const u64 d = c.dim, in = 2 * c.joints;
  ModuleCost out{linear_params(in, d), linear_flops(t, in, d)};
  for (std::size_t k = 0; k < c.sem_blocks; ++k) {
    const auto b = feed_forward(t, d, c.sem_hidden());
    out.params += b.params;
    out.flops += b.flops;
  }
  return out;
}

/// Positional table of `table` rows, `depth` encoder layers over `t` tokens, final norm.
inline ModuleCost transformer(const ModelConfig& c, u64 depth, u64 t, u64 table) {
  const u64 d = c.dim;
  ModuleCost out{table * d + norm_params(d), t * d};
  for (u64 k = 0; k < depth; ++k) {
    const auto a = attention(t, d, c.heads);
    const auto f = feed_forward(t, d, c.ffn_hidden());
    out.params += a.params + f.params;
    out.flops += a.flops + f.flops;
  }
  return out;
}

inline ModuleCost mofa(const ModelConfig& c) {
  const u64 d = c.dim, h = c.ffn_hidden(), m = c.kernel;
  ModuleCost out{norm_params(d), d};
  u64 t = c.frames;
  for (std::size_t k = 0; k < c.mofa_depth; ++k) {
    const auto a = attention(t, d, c.heads);
    const u64 rows_out = t / m;
    out.params += a.params + norm_params(d) + linear_params(d, h) + d * m * h + d;
    out.flops += a.flops + t * d + linear_flops(t, d, h) + t * h + 2 * rows_out * m * h * d;
    t = rows_out;
  }
  return out;
}

}  // namespace cost

/// Closed-form parameter and FLOP accounting for one window pass. Stage II excludes the Stage-I decoder.
inline ComplexityReport complexity(const ModelConfig& c, Stage stage = Stage::finetune) {
  c.validate();
  using cost::u64;
  ComplexityReport r;
  const u64 n = c.frames, d = c.dim, j = c.joints;
  const u64 enc_tokens = n;
  const auto s = cost::sem(c, enc_tokens);
  r.add("sem", s.params, s.flops);
  if (c.use_tem) {
    const auto t = cost::transformer(c, c.tem_depth, enc_tokens, n);
    r.add("tem", t.params, t.flops);
  }
  if (stage == Stage::pretrain) {
    const auto dec = cost::transformer(c, c.decoder_depth, n, n);
    r.add("decoder", dec.params + cost::linear_params(d, 2 * j) + 2 + d, dec.flops + cost::linear_flops(n, d, 2 * j));
    return r;
  }
  if (c.use_mofa) {
    const auto m = cost::mofa(c);
    r.add("mofa", m.params, m.flops);
    r.add("heads", cost::linear_params(d, 3 * j), cost::linear_flops(1, d, 3 * j));
  }
  r.add("heads", cost::linear_params(d, 3 * j), cost::linear_flops(n, d, 3 * j));
  return r;
}

inline std::uint64_t count_params(const ModelConfig& c, Stage stage = Stage::finetune) { return complexity(c, stage).params; }
inline std::uint64_t count_flops(const ModelConfig& c, Stage stage = Stage::finetune) { return complexity(c, stage).flops; }

inline nlohmann::json to_json(const ComplexityReport& r) {
  nlohmann::json modules = nlohmann::json::object();
  for (const auto& [name, m] : r.modules) modules[name] = {{"params", m.params}, {"flops", m.flops}};
  return {{"params", r.params},
          {"params_m", static_cast<double>(r.params) / 1e6},
          {"flops_per_output_frame", r.flops},
          {"flops_m", static_cast<double>(r.flops) / 1e6},
          {"modules", modules}};
}

struct ReceptiveField {
  std::uint64_t rf = 0;    // N * s
  std::uint64_t span = 0;  // frames from first to last sampled, N * s - s + 1
};

inline ReceptiveField receptive_field(std::uint64_t n, std::uint64_t s) {
  require(n >= 1 && s >= 1, ErrorCode::invalid_argument, "receptive_field needs N >= 1 and s >= 1");
  return {n * s, n * s - s + 1};
}

}  // namespace pstmo
