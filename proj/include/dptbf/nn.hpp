// Copyright 2026 The dptbf Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Learnable blocks built on the autodiff core. Each block registers its
// parameters in a ParamStore under "<prefix>.<name>" at construction.
// Weights start uniform in +-1/sqrt(fan_in), biases at zero, norm gains at one.

#pragma once

#include <optional>
#include <random>
#include <string>

#include "dptbf/autodiff.hpp"
#include "dptbf/param_store.hpp"

namespace dptbf::nn {

/// Affine map over the last axis, applied independently at every position.
/// With kernel > 1 the input must be [..., T, C] and the map also sees the
/// (kernel - 1) / 2 neighbouring frames on each side (zero padded).
template <typename Scalar>
class PointwiseConv {
 public:
  using Tensor = ad::Tensor<Scalar>;

  PointwiseConv() = default;
  PointwiseConv(ParamStore<Scalar>& store, const std::string& prefix, Index in_channels, Index out_channels,
                std::mt19937_64& rng, Index kernel = 1);

  Tensor forward(const Tensor& x) const;

  Index in_channels() const { return in_; }
  Index out_channels() const { return out_; }
  const Tensor& weight() const { return weight_; }  // [kernel * in, out]
  const Tensor& bias() const { return bias_; }      // [out]

  static Index parameter_count(Index in, Index out, Index kernel = 1) { return kernel * in * out + out; }

 private:
  Tensor weight_, bias_;
  Index in_ = 0, out_ = 0, kernel_ = 1;
};

/// Unidirectional GRU:
///   z = sigmoid(x Wz + h Uz + bz),  r = sigmoid(x Wr + h Ur + br)
///   n = tanh(x Wn + (r * h) Un + bn),  h' = (1 - z) * h + z * n
/// Parameters: w_input [in, 3H] (gate blocks z|r|n), bias [3H],
/// w_hidden_zr [H, 2H], w_hidden_n [H, H].
template <typename Scalar>
class Gru {
 public:
  using Tensor = ad::Tensor<Scalar>;

  Gru() = default;
  Gru(ParamStore<Scalar>& store, const std::string& prefix, Index in_features, Index hidden, std::mt19937_64& rng);

  /// x [B, in], h [B, H] -> h' [B, H]
  Tensor cell(const Tensor& x, const Tensor& h) const;

  /// x [B, T, in] -> hidden states [B, T, H]; h0 defaults to zeros.
  Tensor forward(const Tensor& x, const std::optional<Tensor>& h0 = std::nullopt) const;

  Index hidden() const { return hidden_; }
  static Index parameter_count(Index in, Index hidden) { return 3 * (in + hidden + 1) * hidden; }

 private:
  Tensor step(const Tensor& x_proj, const Tensor& h) const;

  Tensor w_input_, bias_, w_hidden_zr_, w_hidden_n_;
  Index in_ = 0, hidden_ = 0;
};

/// Scaled dot-product attention with n_heads heads of width D / n_heads.
template <typename Scalar>
class MultiHeadAttention {
 public:
  using Tensor = ad::Tensor<Scalar>;

  MultiHeadAttention() = default;
  MultiHeadAttention(ParamStore<Scalar>& store, const std::string& prefix, Index model_dim, Index n_heads,
                     std::mt19937_64& rng);

  /// q [B, Lq, D], k and v [B, Lk, D]; `mask` is an additive [Lq, Lk] bias.
  Tensor forward(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor* mask = nullptr) const;

  /// Softmax weights [B * n_heads, Lq, Lk] for the same inputs.
  Tensor attention_weights(const Tensor& q, const Tensor& k, const Tensor* mask = nullptr) const;

  Index heads() const { return heads_; }
  Index model_dim() const { return dim_; }
  static Index parameter_count(Index d) { return 4 * (d * d + d); }

 private:
  Tensor split_heads(const Tensor& x) const;
  Tensor merge_heads(const Tensor& x, Index batch) const;

  Tensor wq_, bq_, wk_, bk_, wv_, bv_, wo_, bo_;
  Index dim_ = 0, heads_ = 1;
};

template <typename Scalar>
class LayerNorm {
 public:
  using Tensor = ad::Tensor<Scalar>;

  LayerNorm() = default;
  LayerNorm(ParamStore<Scalar>& store, const std::string& prefix, Index dim);
  Tensor forward(const Tensor& x) const { return ad::layer_norm(x, gain_, bias_); }
  static Index parameter_count(Index d) { return 2 * d; }

 private:
  Tensor gain_, bias_;
};

/// Two-layer position-wise ReLU network D -> hidden -> D.
template <typename Scalar>
class FeedForward {
 public:
  using Tensor = ad::Tensor<Scalar>;

  FeedForward() = default;
  FeedForward(ParamStore<Scalar>& store, const std::string& prefix, Index dim, Index hidden, std::mt19937_64& rng);
  Tensor forward(const Tensor& x) const;
  static Index parameter_count(Index d, Index hidden) { return 2 * d * hidden + hidden + d; }

 private:
  PointwiseConv<Scalar> in_, out_;
};

/// Pre-norm residual attention sublayer, optionally followed by a pre-norm
/// residual feed-forward sublayer:
///   x = q + MHA(LN_q(q), LN_kv(c), LN_kv(c));  x = x + FFN(LN_f(x))
/// For self-attention (cross = false) LN_kv is LN_q.
template <typename Scalar>
class AttentionBlock {
 public:
  using Tensor = ad::Tensor<Scalar>;

  AttentionBlock() = default;
  AttentionBlock(ParamStore<Scalar>& store, const std::string& prefix, Index dim, Index n_heads, bool cross,
                 Index ffn_hidden, std::mt19937_64& rng);

  Tensor forward(const Tensor& query, const Tensor& context, const Tensor* mask = nullptr) const;
  Tensor forward(const Tensor& x, const Tensor* mask = nullptr) const { return forward(x, x, mask); }

  static Index parameter_count(Index dim, bool cross, Index ffn_hidden);

 private:
  LayerNorm<Scalar> norm_q_, norm_kv_, norm_ffn_;
  MultiHeadAttention<Scalar> attention_;
  std::optional<FeedForward<Scalar>> ffn_;
  bool cross_ = false;
};

}  // namespace dptbf::nn
