#pragma once

#include <cmath>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "pstmo/core/error.hpp"
#include "pstmo/core/random.hpp"
#include "pstmo/core/tensor.hpp"
#include "pstmo/model/config.hpp"

namespace pstmo {

/// Named learnable arrays, iterated in lexicographic name order.
template <typename T>
class ParameterStore {
 public:
  using Entries = std::map<std::string, Tensor<T>>;

  void add(const std::string& name, Shape shape, T fill = T(0)) {
    require(entries_.count(name) == 0, ErrorCode::invalid_argument, "duplicate parameter '" + name + "'");
    entries_.emplace(name, Tensor<T>(std::move(shape), fill));
  }

  void set(const std::string& name, Tensor<T> value) { entries_[name] = std::move(value); }
  void erase(const std::string& name) { entries_.erase(name); }

  bool contains(const std::string& name) const { return entries_.count(name) == 1; }

  Tensor<T>& at(const std::string& name) {
    auto it = entries_.find(name);
    require(it != entries_.end(), ErrorCode::invalid_argument, "no parameter named '" + name + "'");
    return it->second;
  }
  const Tensor<T>& at(const std::string& name) const {
    auto it = entries_.find(name);
    require(it != entries_.end(), ErrorCode::invalid_argument, "no parameter named '" + name + "'");
    return it->second;
  }

  Eigen::Map<Mat<T>> mat(const std::string& name) { return at(name).mat(); }
  Eigen::Map<const Mat<T>> mat(const std::string& name) const { return at(name).mat(); }

  std::size_t size() const { return entries_.size(); }
  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : entries_) n += t.size();
    return n;
  }

  const Entries& entries() const { return entries_; }
  Entries& entries() { return entries_; }

  ParameterStore zeros_like() const {
    ParameterStore out;
    for (const auto& [name, t] : entries_) out.entries_.emplace(name, Tensor<T>(t.shape));
    return out;
  }

  void set_zero() {
    for (auto& [name, t] : entries_) std::fill(t.values.begin(), t.values.end(), T(0));
  }

  /// this += scale * other, name by name. Shapes must agree.
  void add_scaled(const ParameterStore& other, T scale) {
    for (auto& [name, t] : entries_) {
      const auto& o = other.at(name);
      require(o.shape == t.shape, ErrorCode::shape_mismatch, "shape mismatch for '" + name + "'");
      for (std::size_t i = 0; i < t.values.size(); ++i) t.values[i] += scale * o.values[i];
    }
  }

  void scale(T s) {
    for (auto& [name, t] : entries_)
      for (auto& v : t.values) v *= s;
  }

  template <typename U>
  ParameterStore<U> cast() const {
    ParameterStore<U> out;
    for (const auto& [name, t] : entries_) {
      Tensor<U> u(t.shape);
      for (std::size_t i = 0; i < t.values.size(); ++i) u.values[i] = static_cast<U>(t.values[i]);
      out.set(name, std::move(u));
    }
    return out;
  }

  bool all_finite() const {
    for (const auto& [name, t] : entries_)
      for (auto v : t.values)
        if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  friend bool operator==(const ParameterStore& a, const ParameterStore& b) { return a.entries_ == b.entries_; }

 private:
  Entries entries_;
};

enum class ParamKind { weight, bias, norm_scale, norm_shift, embedding, token };

struct ParamSpec {
  std::string name;
  Shape shape;
  ParamKind kind;
};

namespace detail {

inline void add_linear(std::vector<ParamSpec>& out, const std::string& prefix, std::size_t in, std::size_t outdim) {
  out.push_back({prefix + ".weight", {outdim, in}, ParamKind::weight});
  out.push_back({prefix + ".bias", {outdim}, ParamKind::bias});
}

inline void add_norm(std::vector<ParamSpec>& out, const std::string& prefix, std::size_t d) {
  out.push_back({prefix + ".weight", {d}, ParamKind::norm_scale});
  out.push_back({prefix + ".bias", {d}, ParamKind::norm_shift});
}

inline void add_attention(std::vector<ParamSpec>& out, const std::string& prefix, std::size_t d) {
  for (const char* proj : {"query", "key", "value", "out"}) add_linear(out, prefix + "." + proj, d, d);
}

inline void add_encoder_stack(std::vector<ParamSpec>& out, const std::string& prefix, std::size_t depth, std::size_t d,
                              std::size_t hidden) {
  for (std::size_t k = 0; k < depth; ++k) {
    const std::string lp = prefix + ".layer" + std::to_string(k);
    add_norm(out, lp + ".norm1", d);
    add_attention(out, lp + ".attn", d);
    add_norm(out, lp + ".norm2", d);
    add_linear(out, lp + ".ffn.fc1", d, hidden);
    add_linear(out, lp + ".ffn.fc2", hidden, d);
  }
  add_norm(out, prefix + ".norm", d);
}

}  // namespace detail

/// Names and shapes of every learnable array for a stage. Single source for instantiation.
inline std::vector<ParamSpec> parameter_layout(const ModelConfig& c, Stage stage) {
  std::vector<ParamSpec> out;
  const std::size_t d = c.dim;
  detail::add_linear(out, "sem.embed", 2 * c.joints, d);
  for (std::size_t k = 0; k < c.sem_blocks; ++k) {
    const std::string bp = "sem.block" + std::to_string(k);
    detail::add_norm(out, bp + ".norm", d);
    detail::add_linear(out, bp + ".fc1", d, c.sem_hidden());
    detail::add_linear(out, bp + ".fc2", c.sem_hidden(), d);
  }
  if (c.use_tem) {
    out.push_back({"tem.pos_embed", {c.frames, d}, ParamKind::embedding});
    detail::add_encoder_stack(out, "tem", c.tem_depth, d, c.ffn_hidden());
  }
  if (stage == Stage::pretrain) {
    out.push_back({"mask.spatial_token", {2}, ParamKind::token});
    out.push_back({"mask.temporal_token", {d}, ParamKind::token});
    out.push_back({"decoder.pos_embed", {c.frames, d}, ParamKind::embedding});
    detail::add_encoder_stack(out, "decoder", c.decoder_depth, d, c.ffn_hidden());
    detail::add_linear(out, "decoder.head", d, 2 * c.joints);
    return out;
  }
  if (c.use_mofa) {
    for (std::size_t k = 0; k < c.mofa_depth; ++k) {
      const std::string lp = "mofa.layer" + std::to_string(k);
      detail::add_norm(out, lp + ".norm1", d);
      detail::add_attention(out, lp + ".attn", d);
      detail::add_norm(out, lp + ".norm2", d);
      detail::add_linear(out, lp + ".conv.fc1", d, c.ffn_hidden());
      // Strided temporal convolution, stored (out channel, tap, in channel).
      out.push_back({lp + ".conv.weight", {d, c.kernel, c.ffn_hidden()}, ParamKind::weight});
      out.push_back({lp + ".conv.bias", {d}, ParamKind::bias});
    }
    detail::add_norm(out, "mofa.norm", d);
    detail::add_linear(out, "head.center", d, 3 * c.joints);
  }
  detail::add_linear(out, "head.frames", d, 3 * c.joints);
  return out;
}

/// True for arrays that belong to the shared encoder (SEM + TEM) and move between stages.
inline bool is_encoder_parameter(const std::string& name) {
  return name.rfind("sem.", 0) == 0 || name.rfind("tem.", 0) == 0;
}

/// Truncated normal (std 0.02, cut at 2 sigma) for weights and embeddings; zeros for biases and
/// padding tokens; ones for normalization scales. Each array draws from its own name-derived stream.
template <typename T>
ParameterStore<T> init_parameters(const ModelConfig& c, Stage stage, std::uint64_t seed) {
  c.validate();
  ParameterStore<T> store;
  for (const auto& spec : parameter_layout(c, stage)) {
    Tensor<T> t(spec.shape);
    switch (spec.kind) {
      case ParamKind::weight:
      case ParamKind::embedding: {
        Rng rng(derive_seed(seed, hash_name(spec.name)));
        std::normal_distribution<double> n01(0.0, 1.0);
        for (auto& v : t.values) {
          double z = n01(rng);
          while (std::abs(z) > 2.0) z = n01(rng);
          v = static_cast<T>(0.02 * z);
        }
        break;
      }
      case ParamKind::norm_scale:
        std::fill(t.values.begin(), t.values.end(), T(1));
        break;
      case ParamKind::bias:
      case ParamKind::norm_shift:
      case ParamKind::token:
        break;
    }
    store.set(spec.name, std::move(t));
  }
  return store;
}

}  // namespace pstmo
