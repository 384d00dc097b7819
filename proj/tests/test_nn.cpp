// Copyright 2026 The dptbf Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <random>

#include "doctest.h"
#include "dptbf/gradcheck_suite.hpp"
#include "dptbf/nn.hpp"

using namespace dptbf;
using T = ad::Tensor<double>;
using A = T::Array;
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

namespace {

T randn(ad::Shape shape, std::mt19937_64& rng, bool grad = false) {
  std::normal_distribution<double> gauss;
  A v(ad::numel(shape));
  for (Index i = 0; i < v.size(); ++i) v[i] = gauss(rng);
  return T::from(std::move(shape), std::move(v), grad);
}

Mat mat(const T& t, Index rows, Index cols, Index offset = 0) {
  return Eigen::Map<const Mat>(t.value().data() + offset, rows, cols);
}

Mat param(const ParamStore<double>& store, const std::string& name) {
  const T& t = store.get(name);
  return t.rank() == 1 ? mat(t, 1, t.dim(0)) : mat(t, t.dim(0), t.dim(1));
}

Mat sigmoid(const Mat& x) { return (1.0 / (1.0 + (-x.array()).exp())).matrix(); }

}  // namespace

TEST_CASE("pointwise conv is an affine map over the last axis") {
  std::mt19937_64 rng(1);
  ParamStore<double> store;
  nn::PointwiseConv<double> conv(store, "c", 5, 3, rng);
  CHECK(store.parameter_count() == nn::PointwiseConv<double>::parameter_count(5, 3));
  store.slot("c.bias").param.mutable_value().setRandom();
  const T x = randn({2, 4, 5}, rng);
  const T y = conv.forward(x);
  CHECK(y.shape() == ad::Shape{2, 4, 3});
  const Mat expect = (mat(x, 8, 5) * param(store, "c.weight")).rowwise() + param(store, "c.bias").row(0);
  CHECK((mat(y, 8, 3) - expect).cwiseAbs().maxCoeff() < 1e-12);
  CHECK_THROWS_AS(conv.forward(randn({2, 4}, rng)), ad::ShapeError);
}

TEST_CASE("temporal kernel convolves along the frame axis with zero padding") {
  std::mt19937_64 rng(2);
  ParamStore<double> store;
  nn::PointwiseConv<double> conv(store, "c", 2, 3, rng, 3);
  CHECK(store.parameter_count() == 3 * 2 * 3 + 3);
  const T x = randn({1, 5, 2}, rng);
  const Mat X = mat(x, 5, 2), W = param(store, "c.weight");
  const Mat y = mat(conv.forward(x), 5, 3);
  for (Index t = 0; t < 5; ++t) {
    Eigen::RowVectorXd acc = param(store, "c.bias").row(0);
    for (Index k = 0; k < 3; ++k) {
      const Index src = t + k - 1;
      if (src < 0 || src >= 5) continue;
      acc += X.row(src) * W.middleRows(2 * k, 2);
    }
    CHECK((y.row(t) - acc).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("GRU matches a scalar-loop reference") {
  std::mt19937_64 rng(3);
  const Index B = 2, Tn = 4, I = 3, H = 5;
  ParamStore<double> store;
  nn::Gru<double> gru(store, "g", I, H, rng);
  CHECK(store.parameter_count() == nn::Gru<double>::parameter_count(I, H));
  CHECK(store.parameter_count() == 3 * (I * H + H * H + H));
  store.slot("g.bias").param.mutable_value().setRandom();
  const T x = randn({B, Tn, I}, rng);
  const T y = gru.forward(x);
  REQUIRE(y.shape() == ad::Shape{B, Tn, H});

  const Mat Wi = param(store, "g.w_input"), b = param(store, "g.bias");
  const Mat Wzr = param(store, "g.w_hidden_zr"), Wn = param(store, "g.w_hidden_n");
  for (Index bi = 0; bi < B; ++bi) {
    Eigen::RowVectorXd h = Eigen::RowVectorXd::Zero(H);
    for (Index t = 0; t < Tn; ++t) {
      const Eigen::RowVectorXd xt = mat(x, 1, I, (bi * Tn + t) * I);
      const Eigen::RowVectorXd p = xt * Wi + b;
      const Eigen::RowVectorXd z = sigmoid(p.head(H) + h * Wzr.leftCols(H));
      const Eigen::RowVectorXd r = sigmoid(p.segment(H, H) + h * Wzr.rightCols(H));
      const Eigen::RowVectorXd n = (p.tail(H) + r.cwiseProduct(h) * Wn).array().tanh().matrix();
      h = (1.0 - z.array()).matrix().cwiseProduct(h) + z.cwiseProduct(n);
      CHECK((mat(y, 1, H, (bi * Tn + t) * H) - h).cwiseAbs().maxCoeff() < 1e-12);
    }
  }
}

TEST_CASE("GRU sequence equals iterated cells") {
  std::mt19937_64 rng(4);
  ParamStore<double> store;
  nn::Gru<double> gru(store, "g", 3, 4, rng);
  const T x = randn({2, 3, 3}, rng);
  const T h0 = randn({2, 4}, rng);
  const T y = gru.forward(x, h0);
  T h = h0;
  for (Index t = 0; t < 3; ++t) {
    h = gru.cell(ad::select(x, 1, t), h);
    CHECK((ad::select(y, 1, t).value() - h.value()).abs().maxCoeff() < 1e-12);
  }
  CHECK_THROWS_AS(gru.forward(randn({2, 3, 4}, rng)), ad::ShapeError);
  CHECK_THROWS_AS(gru.forward(x, randn({3, 4}, rng)), ad::ShapeError);
}

TEST_CASE("multi-head attention matches a per-head reference") {
  std::mt19937_64 rng(5);
  const Index B = 2, Lq = 3, Lk = 4, D = 6, heads = 2, dh = 3;
  ParamStore<double> store;
  nn::MultiHeadAttention<double> mha(store, "a", D, heads, rng);
  CHECK(store.parameter_count() == 4 * (D * D + D));
  for (const char* name : {"a.bq", "a.bk", "a.bv", "a.bo"}) store.slot(name).param.mutable_value().setRandom();
  const T q = randn({B, Lq, D}, rng), k = randn({B, Lk, D}, rng), v = randn({B, Lk, D}, rng);
  const T y = mha.forward(q, k, v);
  REQUIRE(y.shape() == ad::Shape{B, Lq, D});

  auto proj = [&](const T& x, Index rows, Index bi, const char* w, const char* bias) {
    return Mat((mat(x, rows, D, bi * rows * D) * param(store, w)).rowwise() + param(store, bias).row(0));
  };
  for (Index bi = 0; bi < B; ++bi) {
    const Mat Q = proj(q, Lq, bi, "a.wq", "a.bq"), K = proj(k, Lk, bi, "a.wk", "a.bk"),
              V = proj(v, Lk, bi, "a.wv", "a.bv");
    Mat context(Lq, D);
    for (Index h = 0; h < heads; ++h) {
      Mat s = Q.middleCols(h * dh, dh) * K.middleCols(h * dh, dh).transpose() / std::sqrt(double(dh));
      for (Index i = 0; i < Lq; ++i) {
        const Eigen::RowVectorXd e = (s.row(i).array() - s.row(i).maxCoeff()).exp().matrix();
        s.row(i) = e / e.sum();
      }
      context.middleCols(h * dh, dh) = s * V.middleCols(h * dh, dh);
    }
    const Mat out = (context * param(store, "a.wo")).rowwise() + param(store, "a.bo").row(0);
    CHECK((mat(y, Lq, D, bi * Lq * D) - out).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("attention weights and masking") {
  std::mt19937_64 rng(6);
  ParamStore<double> store;
  nn::MultiHeadAttention<double> mha(store, "a", 4, 2, rng);
  const T x = randn({3, 5, 4}, rng);
  const T w = mha.attention_weights(x, x);
  CHECK(w.shape() == ad::Shape{6, 5, 5});
  for (Index r = 0; r < 30; ++r) CHECK(w.value().segment(5 * r, 5).sum() == doctest::Approx(1.0));

  A causal(25);
  for (Index i = 0; i < 5; ++i)
    for (Index j = 0; j < 5; ++j) causal[i * 5 + j] = j > i ? -1e9 : 0.0;
  const T mask = T::from({5, 5}, causal);
  const T wm = mha.attention_weights(x, x, &mask);
  for (Index b = 0; b < 6; ++b)
    for (Index i = 0; i < 5; ++i)
      for (Index j = i + 1; j < 5; ++j) CHECK(wm.value()[(b * 5 + i) * 5 + j] == 0.0);
  // with a causal mask, output at frame t ignores later frames
  const T y = mha.forward(x, x, x, &mask);
  T x2 = T::from(x.shape(), x.value());
  for (Index b = 0; b < 3; ++b) x2.mutable_value().segment((b * 5 + 4) * 4, 4).setRandom();
  const T y2 = mha.forward(x2, x2, x2, &mask);
  for (Index b = 0; b < 3; ++b)
    CHECK((y.value().segment(b * 20, 16) - y2.value().segment(b * 20, 16)).abs().maxCoeff() < 1e-12);
}

TEST_CASE("attention is invariant to reordering keys and values together") {
  std::mt19937_64 rng(7);
  ParamStore<double> store;
  nn::MultiHeadAttention<double> mha(store, "a", 4, 2, rng);
  const T q = randn({1, 3, 4}, rng), k = randn({1, 4, 4}, rng), v = randn({1, 4, 4}, rng);
  const std::vector<Index> order{2, 0, 3, 1};
  auto reorder = [&](const T& x) {
    std::vector<T> rows;
    for (Index i : order) rows.push_back(ad::slice(x, 1, i, 1));
    return ad::concat(rows, 1);
  };
  const T y = mha.forward(q, k, v), yp = mha.forward(q, reorder(k), reorder(v));
  CHECK((y.value() - yp.value()).abs().maxCoeff() < 1e-12);
  CHECK_THROWS_AS(nn::MultiHeadAttention<double>(store, "b", 5, 2, rng), ValidationError);
}

TEST_CASE("attention block is a residual map") {
  std::mt19937_64 rng(8);
  for (bool cross : {false, true}) {
    ParamStore<double> store;
    nn::AttentionBlock<double> block(store, "blk", 4, 2, cross, 24, rng);
    CHECK(store.parameter_count() == nn::AttentionBlock<double>::parameter_count(4, cross, 24));
    const T q = randn({2, 3, 4}, rng), c = randn({2, 3, 4}, rng);
    CHECK(block.forward(q, c).shape() == ad::Shape{2, 3, 4});
    // zero output projections turn the block into the identity
    for (const std::string name : {"blk.attn.wo", "blk.attn.bo", "blk.ffn.out.weight", "blk.ffn.out.bias"})
      store.slot(name).param.mutable_value().setZero();
    CHECK((block.forward(q, c).value() - q.value()).abs().maxCoeff() == 0.0);
  }
  ParamStore<double> store;
  nn::AttentionBlock<double> no_ffn(store, "blk", 4, 2, false, 0, rng);
  CHECK(store.parameter_count() == 4 * (16 + 4) + 8);
}

TEST_CASE("layer gradients pass finite-difference checks") {
  for (const std::string name : {"pointwise_conv", "gru", "mha", "attention_block"}) {
    const BlockCheck c = run_gradcheck_block(name, 2);
    INFO(name << " max rel error " << c.max_rel_error);
    CHECK(c.checked > 0);
    CHECK(c.passed);
  }
}

TEST_CASE("single precision forward agrees with double") {
  std::mt19937_64 rng_d(9), rng_f(9);
  ParamStore<double> sd;
  ParamStore<float> sf;
  nn::Gru<double> gd(sd, "g", 3, 4, rng_d);
  nn::Gru<float> gf(sf, "g", 3, 4, rng_f);
  std::mt19937_64 rng(10);
  const T x = randn({2, 5, 3}, rng);
  const auto xf = ad::Tensor<float>::from(x.shape(), x.value().cast<float>());
  const auto yd = gd.forward(x).value();
  const auto yf = gf.forward(xf).value().cast<double>();
  CHECK((yd - yf).abs().maxCoeff() < 1e-5);
}
