#pragma once

#include <cmath>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "pstmo/core/random.hpp"
#include "pstmo/core/tensor.hpp"
#include "pstmo/model/params.hpp"

namespace pstmo {

/// One head's attention probabilities from one forward pass.
struct AttentionDump {
  std::string stage;
  std::string module;
  std::size_t layer = 0;
  std::size_t head = 0;
  Mat<double> weights;      // queries x keys, rows sum to one
  std::size_t partition = 0;  // decoder only: number of encoded (unmasked) slots before the padding slots
};

struct AttentionRecorder {
  std::string stage;
  std::size_t partition = 0;
  std::vector<AttentionDump> dumps;
};

struct ForwardContext {
  bool training = false;
  double dropout = 0.0;
  Rng* rng = nullptr;
  AttentionRecorder* recorder = nullptr;

  bool dropout_active() const { return training && dropout > 0.0; }
};

namespace nn {

template <typename T>
struct DropoutMask {
  Mat<T> scale;  // empty when inactive
};

template <typename T>
Mat<T> dropout_forward(const Mat<T>& x, ForwardContext& ctx, DropoutMask<T>& mask) {
  if (!ctx.dropout_active()) {
    mask.scale.resize(0, 0);
    return x;
  }
  require(ctx.rng != nullptr, ErrorCode::invalid_argument, "training-mode dropout needs a random generator");
  std::bernoulli_distribution keep(1.0 - ctx.dropout);
  const T inv = T(1) / static_cast<T>(1.0 - ctx.dropout);
  mask.scale.resize(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < mask.scale.size(); ++i) mask.scale.data()[i] = keep(*ctx.rng) ? inv : T(0);
  return x.cwiseProduct(mask.scale);
}

template <typename T>
Mat<T> dropout_backward(const Mat<T>& dy, const DropoutMask<T>& mask) {
  if (mask.scale.size() == 0) return dy;
  return dy.cwiseProduct(mask.scale);
}

/// Exact (erf) GELU.
template <typename T>
Mat<T> gelu(const Mat<T>& x) {
  return x.unaryExpr([](T v) { return T(0.5) * v * (T(1) + std::erf(v / std::numbers::sqrt2_v<T>)); });
}

template <typename T>
Mat<T> gelu_backward(const Mat<T>& x, const Mat<T>& dy) {
  const T inv_sqrt_2pi = T(1) / std::sqrt(T(2) * std::numbers::pi_v<T>);
  Mat<T> d = x.unaryExpr([&](T v) {
    const T cdf = T(0.5) * (T(1) + std::erf(v / std::numbers::sqrt2_v<T>));
    const T pdf = inv_sqrt_2pi * std::exp(T(-0.5) * v * v);
    return cdf + v * pdf;
  });
  return d.cwiseProduct(dy);
}

/// y = x W^T + b with W stored (out, in).
struct Linear {
  std::string weight;
  std::string bias;
  bool per_row = false;  // one matrix-vector product per row: a row's output does not depend on the batch

  Linear() = default;
  explicit Linear(const std::string& prefix, bool rowwise = false) : weight(prefix + ".weight"), bias(prefix + ".bias"), per_row(rowwise) {}

  template <typename T>
  Mat<T> forward(const ParameterStore<T>& p, const Mat<T>& x) const {
    const auto w = p.mat(weight);
    require(x.cols() == w.cols(), ErrorCode::shape_mismatch,
            weight + ": input width " + std::to_string(x.cols()) + " != " + std::to_string(w.cols()));
    Mat<T> y(x.rows(), w.rows());
    if (per_row) {
      for (Eigen::Index r = 0; r < x.rows(); ++r) y.row(r).noalias() = x.row(r) * w.transpose();
    } else {
      y.noalias() = x * w.transpose();
    }
    y.rowwise() += p.mat(bias).row(0);
    return y;
  }

  template <typename T>
  Mat<T> backward(const ParameterStore<T>& p, ParameterStore<T>& g, const Mat<T>& x, const Mat<T>& dy) const {
    g.mat(weight).noalias() += dy.transpose() * x;
    g.mat(bias).row(0) += dy.colwise().sum();
    return dy * p.mat(weight);
  }
};

/// Row-wise layer normalization.
struct LayerNorm {
  std::string weight;
  std::string bias;
  static constexpr double eps = 1e-5;

  template <typename T>
  struct Cache {
    Mat<T> normalized;
    Eigen::Matrix<T, Eigen::Dynamic, 1> inv_std;
  };

  LayerNorm() = default;
  explicit LayerNorm(const std::string& prefix) : weight(prefix + ".weight"), bias(prefix + ".bias") {}

  template <typename T>
  Mat<T> forward(const ParameterStore<T>& p, const Mat<T>& x, Cache<T>& cache) const {
    const Eigen::Index d = x.cols();
    cache.normalized.resize(x.rows(), d);
    cache.inv_std.resize(x.rows());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      const T mean = x.row(r).mean();
      const auto centered = (x.row(r).array() - mean).matrix();
      const T var = centered.squaredNorm() / static_cast<T>(d);
      const T inv = T(1) / std::sqrt(var + static_cast<T>(eps));
      cache.inv_std[r] = inv;
      cache.normalized.row(r) = centered * inv;
    }
    Mat<T> y = cache.normalized.array().rowwise() * p.mat(weight).row(0).array();
    y.rowwise() += p.mat(bias).row(0);
    return y;
  }

  template <typename T>
  Mat<T> backward(const ParameterStore<T>& p, ParameterStore<T>& g, const Cache<T>& cache, const Mat<T>& dy) const {
    g.mat(weight).row(0) += (dy.cwiseProduct(cache.normalized)).colwise().sum();
    g.mat(bias).row(0) += dy.colwise().sum();
    const Mat<T> dxhat = dy.array().rowwise() * p.mat(weight).row(0).array();
    Mat<T> dx(dy.rows(), dy.cols());
    const T inv_d = T(1) / static_cast<T>(dy.cols());
    for (Eigen::Index r = 0; r < dy.rows(); ++r) {
      const T mean_d = dxhat.row(r).sum() * inv_d;
      const T mean_dx = dxhat.row(r).dot(cache.normalized.row(r)) * inv_d;
      dx.row(r) = cache.inv_std[r] * (dxhat.row(r).array() - mean_d - cache.normalized.row(r).array() * mean_dx).matrix();
    }
    return dx;
  }
};

/// Multi-head scaled dot-product self-attention.
struct SelfAttention {
  Linear query, key, value, out;
  std::size_t heads = 1;
  std::string module;
  std::size_t layer = 0;

  template <typename T>
  struct Cache {
    Mat<T> input, q, k, v, mixed;
    std::vector<Mat<T>> probs;
    std::vector<DropoutMask<T>> drops;
  };

  SelfAttention() = default;
  SelfAttention(const std::string& prefix, std::size_t num_heads, std::string module_label, std::size_t layer_index)
      : query(prefix + ".query"), key(prefix + ".key"), value(prefix + ".value"), out(prefix + ".out"), heads(num_heads),
        module(std::move(module_label)), layer(layer_index) {}

  template <typename T>
  Mat<T> forward(const ParameterStore<T>& p, const Mat<T>& x, ForwardContext& ctx, Cache<T>& c) const {
    c.input = x;
    c.q = query.forward(p, x);
    c.k = key.forward(p, x);
    c.v = value.forward(p, x);
    const Eigen::Index n = x.rows();
    const Eigen::Index dk = x.cols() / static_cast<Eigen::Index>(heads);
    const T scale = T(1) / std::sqrt(static_cast<T>(dk));
    c.mixed.resize(n, x.cols());
    c.probs.resize(heads);
    c.drops.resize(heads);
    for (std::size_t h = 0; h < heads; ++h) {
      const Eigen::Index off = static_cast<Eigen::Index>(h) * dk;
      Mat<T> s = (c.q.middleCols(off, dk) * c.k.middleCols(off, dk).transpose()) * scale;
      for (Eigen::Index r = 0; r < n; ++r) {
        const T mx = s.row(r).maxCoeff();
        s.row(r) = (s.row(r).array() - mx).exp().matrix();
        s.row(r) /= s.row(r).sum();
      }
      if (ctx.recorder != nullptr) {
        AttentionDump dump;
        dump.stage = ctx.recorder->stage;
        dump.module = module;
        dump.layer = layer;
        dump.head = h;
        dump.weights = s.template cast<double>();
        if (module == "decoder") dump.partition = ctx.recorder->partition;
        ctx.recorder->dumps.push_back(std::move(dump));
      }
      c.probs[h] = s;
      const Mat<T> a = dropout_forward(s, ctx, c.drops[h]);
      c.mixed.middleCols(off, dk).noalias() = a * c.v.middleCols(off, dk);
    }
    return out.forward(p, c.mixed);
  }

  template <typename T>
  Mat<T> backward(const ParameterStore<T>& p, ParameterStore<T>& g, const Cache<T>& c, const Mat<T>& dy) const {
    const Mat<T> dmixed = out.backward(p, g, c.mixed, dy);
    const Eigen::Index n = c.input.rows();
    const Eigen::Index dk = c.input.cols() / static_cast<Eigen::Index>(heads);
    const T scale = T(1) / std::sqrt(static_cast<T>(dk));
    Mat<T> dq(n, c.input.cols()), dkm(n, c.input.cols()), dv(n, c.input.cols());
    for (std::size_t h = 0; h < heads; ++h) {
      const Eigen::Index off = static_cast<Eigen::Index>(h) * dk;
      const auto dmh = dmixed.middleCols(off, dk);
      const Mat<T>& prob = c.probs[h];
      const Mat<T> a = c.drops[h].scale.size() ? Mat<T>(prob.cwiseProduct(c.drops[h].scale)) : prob;
      dv.middleCols(off, dk).noalias() = a.transpose() * dmh;
      Mat<T> da = dmh * c.v.middleCols(off, dk).transpose();
      da = dropout_backward(da, c.drops[h]);
      // Softmax Jacobian, row by row.
      const Eigen::Matrix<T, Eigen::Dynamic, 1> inner = da.cwiseProduct(prob).rowwise().sum();
      Mat<T> ds = prob.cwiseProduct((da.colwise() - inner));
      ds *= scale;
      dq.middleCols(off, dk).noalias() = ds * c.k.middleCols(off, dk);
      dkm.middleCols(off, dk).noalias() = ds.transpose() * c.q.middleCols(off, dk);
    }
    Mat<T> dx = query.backward(p, g, c.input, dq);
    dx += key.backward(p, g, c.input, dkm);
    dx += value.backward(p, g, c.input, dv);
    return dx;
  }
};

/// Pre-norm residual MLP: x + drop(fc2(drop(gelu(fc1(norm(x)))))).
struct ResidualMlp {
  LayerNorm norm;
  Linear fc1, fc2;

  template <typename T>
  struct Cache {
    typename LayerNorm::Cache<T> norm;
    Mat<T> normed, pre, act;
    DropoutMask<T> drop_hidden, drop_out;
  };

  ResidualMlp() = default;
  ResidualMlp(const std::string& norm_prefix, const std::string& fc_prefix, bool rowwise = false)
      : norm(norm_prefix), fc1(fc_prefix + ".fc1", rowwise), fc2(fc_prefix + ".fc2", rowwise) {}

  template <typename T>
  Mat<T> forward(const ParameterStore<T>& p, const Mat<T>& x, ForwardContext& ctx, Cache<T>& c) const {
    c.normed = norm.forward(p, x, c.norm);
    c.pre = fc1.forward(p, c.normed);
    c.act = dropout_forward(gelu(c.pre), ctx, c.drop_hidden);
    return x + dropout_forward(fc2.forward(p, c.act), ctx, c.drop_out);
  }

  template <typename T>
  Mat<T> backward(const ParameterStore<T>& p, ParameterStore<T>& g, const Cache<T>& c, const Mat<T>& dy) const {
    Mat<T> d = dropout_backward(dy, c.drop_out);
    d = fc2.backward(p, g, c.act, d);
    d = gelu_backward(c.pre, dropout_backward(d, c.drop_hidden));
    d = fc1.backward(p, g, c.normed, d);
    return dy + norm.backward(p, g, c.norm, d);
  }
};

/// Pre-norm residual attention sub-layer: x + drop(attn(norm(x))).
struct ResidualAttention {
  LayerNorm norm;
  SelfAttention attn;

  template <typename T>
  struct Cache {
    typename LayerNorm::Cache<T> norm;
    typename SelfAttention::Cache<T> attn;
    DropoutMask<T> drop;
  };

  ResidualAttention() = default;
  ResidualAttention(const std::string& prefix, std::size_t heads, const std::string& module, std::size_t layer)
      : norm(prefix + ".norm1"), attn(prefix + ".attn", heads, module, layer) {}

  template <typename T>
  Mat<T> forward(const ParameterStore<T>& p, const Mat<T>& x, ForwardContext& ctx, Cache<T>& c) const {
    const Mat<T> normed = norm.forward(p, x, c.norm);
    return x + dropout_forward(attn.forward(p, normed, ctx, c.attn), ctx, c.drop);
  }

  template <typename T>
  Mat<T> backward(const ParameterStore<T>& p, ParameterStore<T>& g, const Cache<T>& c, const Mat<T>& dy) const {
    const Mat<T> da = attn.backward(p, g, c.attn, dropout_backward(dy, c.drop));
    return dy + norm.backward(p, g, c.norm, da);
  }
};

/// Standard pre-norm Transformer encoder layer.
struct EncoderLayer {
  ResidualAttention attention;
  ResidualMlp mlp;

  template <typename T>
  struct Cache {
    typename ResidualAttention::Cache<T> attention;
    typename ResidualMlp::Cache<T> mlp;
  };

  EncoderLayer() = default;
  EncoderLayer(const std::string& prefix, std::size_t heads, const std::string& module, std::size_t layer)
      : attention(prefix, heads, module, layer), mlp(prefix + ".norm2", prefix + ".ffn") {}

  template <typename T>
  Mat<T> forward(const ParameterStore<T>& p, const Mat<T>& x, ForwardContext& ctx, Cache<T>& c) const {
    return mlp.forward(p, attention.forward(p, x, ctx, c.attention), ctx, c.mlp);
  }

  template <typename T>
  Mat<T> backward(const ParameterStore<T>& p, ParameterStore<T>& g, const Cache<T>& c, const Mat<T>& dy) const {
    return attention.backward(p, g, c.attention, mlp.backward(p, g, c.mlp, dy));
  }
};

/**
 * Transformer layer whose feed-forward ends in a strided temporal convolution
 * (kernel = stride = M), shrinking the sequence by M. Only the attention sub-layer is residual.
 */
struct StridedLayer {
  ResidualAttention attention;
  LayerNorm norm;
  Linear fc1;
  std::string conv_weight, conv_bias;
  std::size_t kernel = 3;

  template <typename T>
  struct Cache {
    typename ResidualAttention::Cache<T> attention;
    typename LayerNorm::Cache<T> norm;
    Mat<T> normed, pre, act;
    DropoutMask<T> drop_hidden, drop_out;
  };

  StridedLayer() = default;
  StridedLayer(const std::string& prefix, std::size_t heads, std::size_t kernel_size, std::size_t layer)
      : attention(prefix, heads, "mofa", layer), norm(prefix + ".norm2"), fc1(prefix + ".conv.fc1"),
        conv_weight(prefix + ".conv.weight"), conv_bias(prefix + ".conv.bias"), kernel(kernel_size) {}

  template <typename T>
  Mat<T> forward(const ParameterStore<T>& p, const Mat<T>& x, ForwardContext& ctx, Cache<T>& c) const {
    const Eigen::Index m = static_cast<Eigen::Index>(kernel);
    require(x.rows() % m == 0, ErrorCode::shape_mismatch,
            "strided layer input length " + std::to_string(x.rows()) + " is not divisible by " + std::to_string(kernel));
    const Mat<T> x1 = attention.forward(p, x, ctx, c.attention);
    c.normed = norm.forward(p, x1, c.norm);
    c.pre = fc1.forward(p, c.normed);
    c.act = dropout_forward(gelu(c.pre), ctx, c.drop_hidden);
    // Row-major (T, H) reinterpreted as (T/M, M*H): row n holds frames nM .. nM+M-1 back to back,
    // matching the (out, tap, in) weight layout.
    const Eigen::Index hidden = c.act.cols();
    Eigen::Map<const Mat<T>> grouped(c.act.data(), x.rows() / m, m * hidden);
    Mat<T> y = grouped * p.mat(conv_weight).transpose();
    y.rowwise() += p.mat(conv_bias).row(0);
    return dropout_forward(y, ctx, c.drop_out);
  }

  template <typename T>
  Mat<T> backward(const ParameterStore<T>& p, ParameterStore<T>& g, const Cache<T>& c, const Mat<T>& dy_in) const {
    const Eigen::Index m = static_cast<Eigen::Index>(kernel);
    const Mat<T> dy = dropout_backward(dy_in, c.drop_out);
    const Eigen::Index hidden = c.act.cols();
    Eigen::Map<const Mat<T>> grouped(c.act.data(), c.act.rows() / m, m * hidden);
    g.mat(conv_weight).noalias() += dy.transpose() * grouped;
    g.mat(conv_bias).row(0) += dy.colwise().sum();
    Mat<T> dgrouped = dy * p.mat(conv_weight);
    Mat<T> dact = Eigen::Map<Mat<T>>(dgrouped.data(), c.act.rows(), hidden);
    Mat<T> d = gelu_backward(c.pre, dropout_backward(dact, c.drop_hidden));
    d = fc1.backward(p, g, c.normed, d);
    const Mat<T> dx1 = norm.backward(p, g, c.norm, d);
    return attention.backward(p, g, c.attention, dx1);
  }
};

}  // namespace nn
}  // namespace pstmo
