// Copyright 2026 The dptbf Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "dptbf/nn.hpp"

#include <cmath>

namespace dptbf::nn {

using ad::Shape;

// ------------------------------------------------------------ PointwiseConv

template <typename Scalar>
PointwiseConv<Scalar>::PointwiseConv(ParamStore<Scalar>& store, const std::string& prefix, Index in_channels,
                                     Index out_channels, std::mt19937_64& rng, Index kernel)
    : in_(in_channels), out_(out_channels), kernel_(kernel) {
  require(in_channels > 0 && out_channels > 0, "conv: channel counts must be positive");
  require(kernel >= 1 && kernel % 2 == 1, "conv: kernel must be odd and >= 1");
  const double bound = 1.0 / std::sqrt(double(kernel * in_channels));
  weight_ = store.add_uniform(prefix + ".weight", {kernel * in_channels, out_channels}, bound, rng);
  bias_ = store.add_constant(prefix + ".bias", {out_channels}, Scalar(0));
}

template <typename Scalar>
ad::Tensor<Scalar> PointwiseConv<Scalar>::forward(const Tensor& x) const {
  ad::check_shape(x.rank() >= 1 && x.dim(-1) == in_,
                  "conv: expected trailing dim " + std::to_string(in_) + ", got " + ad::to_string(x.shape()));
  if (kernel_ == 1) return ad::add(ad::matmul(x, weight_), bias_);

  ad::check_shape(x.rank() >= 2, "conv: temporal kernel needs a [..., T, C] input");
  const Index half = kernel_ / 2, frames = x.dim(-2);
  Shape pad_shape = x.shape();
  pad_shape[pad_shape.size() - 2] = half;
  const Tensor pad = Tensor::zeros(pad_shape);
  const Tensor padded = ad::concat<Scalar>({pad, x, pad}, -2);
  std::vector<Tensor> taps;
  for (Index k = 0; k < kernel_; ++k) taps.push_back(ad::slice(padded, -2, k, frames));
  return ad::add(ad::matmul(ad::concat(taps, -1), weight_), bias_);
}

// --------------------------------------------------------------------- Gru

template <typename Scalar>
Gru<Scalar>::Gru(ParamStore<Scalar>& store, const std::string& prefix, Index in_features, Index hidden,
                 std::mt19937_64& rng)
    : in_(in_features), hidden_(hidden) {
  require(in_features > 0 && hidden > 0, "gru: sizes must be positive");
  w_input_ = store.add_uniform(prefix + ".w_input", {in_features, 3 * hidden}, 1.0 / std::sqrt(double(in_features)), rng);
  bias_ = store.add_constant(prefix + ".bias", {3 * hidden}, Scalar(0));
  const double hb = 1.0 / std::sqrt(double(hidden));
  w_hidden_zr_ = store.add_uniform(prefix + ".w_hidden_zr", {hidden, 2 * hidden}, hb, rng);
  w_hidden_n_ = store.add_uniform(prefix + ".w_hidden_n", {hidden, hidden}, hb, rng);
}

template <typename Scalar>
ad::Tensor<Scalar> Gru<Scalar>::step(const Tensor& x_proj, const Tensor& h) const {
  const Index H = hidden_;
  const Tensor zr = ad::sigmoid(ad::add(ad::slice(x_proj, -1, 0, 2 * H), ad::matmul(h, w_hidden_zr_)));
  const Tensor z = ad::slice(zr, -1, 0, H);
  const Tensor r = ad::slice(zr, -1, H, H);
  const Tensor n = ad::tanh(ad::add(ad::slice(x_proj, -1, 2 * H, H), ad::matmul(ad::mul(r, h), w_hidden_n_)));
  return ad::add(h, ad::mul(z, ad::sub(n, h)));
}

template <typename Scalar>
ad::Tensor<Scalar> Gru<Scalar>::cell(const Tensor& x, const Tensor& h) const {
  ad::check_shape(x.rank() == 2 && x.dim(1) == in_ && h.rank() == 2 && h.dim(1) == hidden_ && h.dim(0) == x.dim(0),
                  "gru cell: expected x [B, in] and h [B, H]");
  return step(ad::add(ad::matmul(x, w_input_), bias_), h);
}

template <typename Scalar>
ad::Tensor<Scalar> Gru<Scalar>::forward(const Tensor& x, const std::optional<Tensor>& h0) const {
  ad::check_shape(x.rank() == 3 && x.dim(2) == in_, "gru: expected x [B, T, " + std::to_string(in_) + "], got " +
                                                        ad::to_string(x.shape()));
  const Index batch = x.dim(0), frames = x.dim(1);
  Tensor h = h0 ? *h0 : Tensor::zeros({batch, hidden_});
  ad::check_shape(h.shape() == Shape({batch, hidden_}), "gru: h0 must be [B, H]");
  const Tensor x_proj = ad::add(ad::matmul(x, w_input_), bias_);  // [B, T, 3H]
  std::vector<Tensor> states;
  states.reserve(frames);
  for (Index t = 0; t < frames; ++t) {
    h = step(ad::select(x_proj, 1, t), h);
    states.push_back(h);
  }
  return ad::stack(states, 1);
}

// ------------------------------------------------------- MultiHeadAttention

template <typename Scalar>
MultiHeadAttention<Scalar>::MultiHeadAttention(ParamStore<Scalar>& store, const std::string& prefix, Index model_dim,
                                               Index n_heads, std::mt19937_64& rng)
    : dim_(model_dim), heads_(n_heads) {
  require(n_heads >= 1 && model_dim % n_heads == 0, "attention: model dim must be divisible by the head count");
  const double bound = 1.0 / std::sqrt(double(model_dim));
  wq_ = store.add_uniform(prefix + ".wq", {model_dim, model_dim}, bound, rng);
  bq_ = store.add_constant(prefix + ".bq", {model_dim}, Scalar(0));
  wk_ = store.add_uniform(prefix + ".wk", {model_dim, model_dim}, bound, rng);
  bk_ = store.add_constant(prefix + ".bk", {model_dim}, Scalar(0));
  wv_ = store.add_uniform(prefix + ".wv", {model_dim, model_dim}, bound, rng);
  bv_ = store.add_constant(prefix + ".bv", {model_dim}, Scalar(0));
  wo_ = store.add_uniform(prefix + ".wo", {model_dim, model_dim}, bound, rng);
  bo_ = store.add_constant(prefix + ".bo", {model_dim}, Scalar(0));
}

template <typename Scalar>
ad::Tensor<Scalar> MultiHeadAttention<Scalar>::split_heads(const Tensor& x) const {
  // [B, L, D] -> [B * H, L, D / H]
  const Index b = x.dim(0), l = x.dim(1), dh = dim_ / heads_;
  if (heads_ == 1) return x;
  return ad::reshape(ad::permute(ad::reshape(x, {b, l, heads_, dh}), {0, 2, 1, 3}), {b * heads_, l, dh});
}

template <typename Scalar>
ad::Tensor<Scalar> MultiHeadAttention<Scalar>::merge_heads(const Tensor& x, Index batch) const {
  const Index l = x.dim(1), dh = dim_ / heads_;
  if (heads_ == 1) return x;
  return ad::reshape(ad::permute(ad::reshape(x, {batch, heads_, l, dh}), {0, 2, 1, 3}), {batch, l, dim_});
}

template <typename Scalar>
ad::Tensor<Scalar> MultiHeadAttention<Scalar>::attention_weights(const Tensor& q, const Tensor& k,
                                                                 const Tensor* mask) const {
  ad::check_shape(q.rank() == 3 && k.rank() == 3 && q.dim(0) == k.dim(0) && q.dim(2) == dim_ && k.dim(2) == dim_,
                  "attention: expected q [B, Lq, D] and k [B, Lk, D] with D = " + std::to_string(dim_));
  ad::check_shape(k.dim(1) > 0, "attention: no keys (Lk = 0)");
  // scaling the queries is cheaper than scaling the [Lq, Lk] scores
  const Scalar s = Scalar(1.0 / std::sqrt(double(dim_ / heads_)));
  const Tensor qh = split_heads(ad::scale(ad::add(ad::matmul(q, wq_), bq_), s));
  const Tensor kh = split_heads(ad::add(ad::matmul(k, wk_), bk_));
  Tensor scores = ad::bmm(qh, kh, true);
  if (mask) scores = ad::add(scores, *mask);
  return ad::softmax(scores, -1);
}

template <typename Scalar>
ad::Tensor<Scalar> MultiHeadAttention<Scalar>::forward(const Tensor& q, const Tensor& k, const Tensor& v,
                                                       const Tensor* mask) const {
  ad::check_shape(v.shape() == k.shape(), "attention: key and value shapes differ");
  const Tensor weights = attention_weights(q, k, mask);
  const Tensor vh = split_heads(ad::add(ad::matmul(v, wv_), bv_));
  const Tensor context = merge_heads(ad::bmm(weights, vh), q.dim(0));
  return ad::add(ad::matmul(context, wo_), bo_);
}

// ----------------------------------------------------------- small blocks

template <typename Scalar>
LayerNorm<Scalar>::LayerNorm(ParamStore<Scalar>& store, const std::string& prefix, Index dim) {
  gain_ = store.add_constant(prefix + ".gain", {dim}, Scalar(1));
  bias_ = store.add_constant(prefix + ".bias", {dim}, Scalar(0));
}

template <typename Scalar>
FeedForward<Scalar>::FeedForward(ParamStore<Scalar>& store, const std::string& prefix, Index dim, Index hidden,
                                 std::mt19937_64& rng)
    : in_(store, prefix + ".in", dim, hidden, rng), out_(store, prefix + ".out", hidden, dim, rng) {}

template <typename Scalar>
ad::Tensor<Scalar> FeedForward<Scalar>::forward(const Tensor& x) const {
  return out_.forward(ad::relu(in_.forward(x)));
}

template <typename Scalar>
AttentionBlock<Scalar>::AttentionBlock(ParamStore<Scalar>& store, const std::string& prefix, Index dim, Index n_heads,
                                       bool cross, Index ffn_hidden, std::mt19937_64& rng)
    : cross_(cross) {
  norm_q_ = LayerNorm<Scalar>(store, prefix + ".norm_q", dim);
  if (cross) norm_kv_ = LayerNorm<Scalar>(store, prefix + ".norm_kv", dim);
  attention_ = MultiHeadAttention<Scalar>(store, prefix + ".attn", dim, n_heads, rng);
  if (ffn_hidden > 0) {
    norm_ffn_ = LayerNorm<Scalar>(store, prefix + ".norm_ffn", dim);
    ffn_.emplace(store, prefix + ".ffn", dim, ffn_hidden, rng);
  }
}

template <typename Scalar>
ad::Tensor<Scalar> AttentionBlock<Scalar>::forward(const Tensor& query, const Tensor& context,
                                                   const Tensor* mask) const {
  const Tensor q = norm_q_.forward(query);
  const Tensor kv = cross_ ? norm_kv_.forward(context) : q;
  Tensor x = ad::add(query, attention_.forward(q, kv, kv, mask));
  if (ffn_) x = ad::add(x, ffn_->forward(norm_ffn_.forward(x)));
  return x;
}

template <typename Scalar>
Index AttentionBlock<Scalar>::parameter_count(Index dim, bool cross, Index ffn_hidden) {
  Index n = MultiHeadAttention<Scalar>::parameter_count(dim) + LayerNorm<Scalar>::parameter_count(dim) * (cross ? 2 : 1);
  if (ffn_hidden > 0)
    n += LayerNorm<Scalar>::parameter_count(dim) + FeedForward<Scalar>::parameter_count(dim, ffn_hidden);
  return n;
}

template class PointwiseConv<float>;
template class PointwiseConv<double>;
template class Gru<float>;
template class Gru<double>;
template class MultiHeadAttention<float>;
template class MultiHeadAttention<double>;
template class LayerNorm<float>;
template class LayerNorm<double>;
template class FeedForward<float>;
template class FeedForward<double>;
template class AttentionBlock<float>;
template class AttentionBlock<double>;

}  // namespace dptbf::nn
