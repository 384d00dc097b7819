// Copyright 2026 The dptbf Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "dptbf/gradcheck_suite.hpp"

#include <functional>
#include <map>
#include <random>

#include "dptbf/model.hpp"
#include "dptbf/nn.hpp"
#include "dptbf/spectral_ops.hpp"
#include "dptbf/train.hpp"

namespace dptbf {
namespace {

using T = ad::Tensor<double>;
using ad::Shape;

struct Rand {
  std::mt19937_64 rng;

  T uniform(Shape shape, double lo, double hi, bool grad = true) {
    std::uniform_real_distribution<double> dist(lo, hi);
    T::Array v(ad::numel(shape));
    for (Index i = 0; i < v.size(); ++i) v[i] = dist(rng);
    return T::from(std::move(shape), std::move(v), grad);
  }
  T normal(Shape shape, bool grad = true) { return uniform(std::move(shape), -1.0, 1.0, grad); }
  /// Values bounded away from zero, for ops with a kink or pole there.
  T away_from_zero(Shape shape, double lo = 0.2, double hi = 1.0) {
    T x = uniform(std::move(shape), lo, hi);
    std::bernoulli_distribution coin(0.5);
    for (Index i = 0; i < x.size(); ++i)
      if (coin(rng)) x.mutable_value()[i] = -x.value()[i];
    return x;
  }
};

/// Reduces an arbitrary tensor to a scalar with fixed random weights so that
/// every output element contributes a distinct sensitivity.
T project(const T& y, std::uint64_t seed) {
  Rand r{std::mt19937_64(seed)};
  return ad::sum(ad::mul(y, r.normal(y.shape(), false)));
}

BlockCheck run(const std::string& name, const std::function<T()>& fn, const std::vector<T>& inputs,
               const ad::GradcheckOptions& opts) {
  const auto report = ad::gradcheck<double>(fn, inputs, opts);
  return {name, report.max_rel_error, static_cast<Index>(report.entries.size()), report.passed};
}

using Block = std::function<BlockCheck(std::uint64_t, const ad::GradcheckOptions&)>;

std::vector<std::pair<std::string, Block>> blocks() {
  std::vector<std::pair<std::string, Block>> out;

  out.emplace_back("elementwise", [](std::uint64_t seed, const ad::GradcheckOptions& o) {
    Rand r{std::mt19937_64(seed)};
    T a = r.normal({3, 4}), b = r.normal({4}), c = r.uniform({3, 4}, 0.5, 2.0);
    return run("elementwise",
               [=] {
                 T y = ad::add(ad::mul(ad::sub(a, b), c), ad::div(a, c));
                 y = ad::add(ad::sigmoid(y), ad::tanh(ad::affine(y, 0.7, 0.1)));
                 return project(ad::add(y, ad::exp(ad::scale(a, 0.5))), 11);
               },
               {a, b, c}, o);
  });
  out.emplace_back("pointwise_nonlinear", [](std::uint64_t seed, const ad::GradcheckOptions& o) {
    Rand r{std::mt19937_64(seed)};
    T a = r.away_from_zero({2, 5}), p = r.uniform({2, 5}, 0.3, 2.0), c = r.away_from_zero({2, 5}, 0.1, 0.4);
    return run("pointwise_nonlinear",
               [=] {
                 T y = ad::add(ad::relu(a), ad::sqrt(p));
                 y = ad::add(y, ad::log(p));
                 y = ad::add(y, ad::square(a));
                 return project(ad::add(y, ad::clamp(c, -0.5, 0.5)), 12);
               },
               {a, p, c}, o);
  });
  out.emplace_back("reductions", [](std::uint64_t seed, const ad::GradcheckOptions& o) {
    Rand r{std::mt19937_64(seed)};
    T a = r.normal({2, 3, 4});
    return run("reductions",
               [=] {
                 T s = ad::add(project(ad::sum(a, 1), 13), ad::mean(ad::square(a)));
                 return ad::add(s, ad::scale(ad::sum(a), 0.3));
               },
               {a}, o);
  });
  out.emplace_back("matmul", [](std::uint64_t seed, const ad::GradcheckOptions& o) {
    Rand r{std::mt19937_64(seed)};
    T x = r.normal({2, 3, 4}), w = r.normal({4, 5}), a = r.normal({3, 4, 2}), b = r.normal({3, 2, 5}),
      c = r.normal({3, 5, 2});
    return run("matmul",
               [=] {
                 return ad::add(ad::add(project(ad::matmul(x, w), 14), project(ad::bmm(a, b), 15)),
                                project(ad::bmm(a, c, true), 16));
               },
               {x, w, a, b, c}, o);
  });
  out.emplace_back("layout", [](std::uint64_t seed, const ad::GradcheckOptions& o) {
    Rand r{std::mt19937_64(seed)};
    T a = r.normal({2, 3, 4}), b = r.normal({2, 3, 4}), c = r.normal({2, 3, 2});
    return run("layout",
               [=] {
                 T y = project(ad::permute(a, {2, 0, 1}), 17);
                 y = ad::add(y, project(ad::transpose(ad::reshape(b, {6, 4})), 18));
                 y = ad::add(y, project(ad::slice(a, 2, 1, 2), 19));
                 y = ad::add(y, project(ad::select(b, 1, 2), 20));
                 y = ad::add(y, project(ad::concat<double>({a, c}, -1), 21));
                 return ad::add(y, project(ad::stack<double>({a, b}, 1), 22));
               },
               {a, b, c}, o);
  });
  out.emplace_back("softmax", [](std::uint64_t seed, const ad::GradcheckOptions& o) {
    Rand r{std::mt19937_64(seed)};
    T a = r.normal({3, 5});
    return run("softmax", [=] { return ad::add(project(ad::softmax(a, -1), 23), project(ad::softmax(a, 0), 24)); },
               {a}, o);
  });
  out.emplace_back("layer_norm", [](std::uint64_t seed, const ad::GradcheckOptions& o) {
    Rand r{std::mt19937_64(seed)};
    T x = r.normal({3, 6}), g = r.uniform({6}, 0.5, 1.5), b = r.normal({6});
    return run("layer_norm", [=] { return project(ad::layer_norm(x, g, b), 25); }, {x, g, b}, o);
  });
  out.emplace_back("complex", [](std::uint64_t seed, const ad::GradcheckOptions& o) {
    Rand r{std::mt19937_64(seed)};
    T a = r.away_from_zero({3, 2, 2}), b = r.normal({3, 2, 2});
    return run("complex",
               [=] {
                 return ad::add(project(ad::cmul(ad::conj(a), b), 26), project(ad::cabs(a), 27));
               },
               {a, b}, o);
  });
  out.emplace_back("pointwise_conv", [](std::uint64_t seed, const ad::GradcheckOptions& o) {
    Rand r{std::mt19937_64(seed)};
    std::mt19937_64 init(seed + 100);
    auto store = std::make_shared<ParamStore<double>>();
    nn::PointwiseConv<double> conv1(*store, "c1", 3, 4, init), conv3(*store, "c3", 4, 2, init, 3);
    T x = r.normal({2, 5, 3});
    auto inputs = store->tensors();
    inputs.push_back(x);
    return run("pointwise_conv", [=] { return project(conv3.forward(conv1.forward(x)), 28); }, inputs, o);
  });
  out.emplace_back("gru", [](std::uint64_t seed, const ad::GradcheckOptions& o) {
    Rand r{std::mt19937_64(seed)};
    std::mt19937_64 init(seed + 101);
    auto store = std::make_shared<ParamStore<double>>();
    nn::Gru<double> gru(*store, "gru", 4, 3, init);
    for (auto& s : store->slots()) s.param.mutable_value() += r.uniform(s.param.shape(), -0.3, 0.3, false).value();
    T x = r.normal({2, 3, 4}), h0 = r.normal({2, 3});
    auto inputs = store->tensors();
    inputs.push_back(x);
    inputs.push_back(h0);
    return run("gru", [=] { return project(gru.forward(x, h0), 29); }, inputs, o);
  });
  out.emplace_back("mha", [](std::uint64_t seed, const ad::GradcheckOptions& o) {
    Rand r{std::mt19937_64(seed)};
    std::mt19937_64 init(seed + 102);
    auto store = std::make_shared<ParamStore<double>>();
    nn::MultiHeadAttention<double> mha(*store, "mha", 6, 2, init);
    for (auto& s : store->slots()) s.param.mutable_value() += r.uniform(s.param.shape(), -0.3, 0.3, false).value();
    T q = r.normal({2, 4, 6}), k = r.normal({2, 5, 6}), v = r.normal({2, 5, 6});
    auto inputs = store->tensors();
    for (const auto& t : {q, k, v}) inputs.push_back(t);
    return run("mha", [=] { return project(mha.forward(q, k, v), 30); }, inputs, o);
  });
  out.emplace_back("attention_block", [](std::uint64_t seed, const ad::GradcheckOptions& o) {
    Rand r{std::mt19937_64(seed)};
    std::mt19937_64 init(seed + 103);
    auto store = std::make_shared<ParamStore<double>>();
    nn::AttentionBlock<double> cross(*store, "cross", 4, 2, true, 8, init), self(*store, "self", 4, 1, false, 0, init);
    for (auto& s : store->slots()) s.param.mutable_value() += r.uniform(s.param.shape(), -0.3, 0.3, false).value();
    T q = r.normal({2, 3, 4}), c = r.normal({2, 3, 4});
    T::Array m = T::Array::Zero(9);
    m[1] = m[2] = m[5] = -1e9;
    T mask = T::from({3, 3}, m);
    auto inputs = store->tensors();
    inputs.push_back(q);
    inputs.push_back(c);
    return run("attention_block", [=] { return project(self.forward(cross.forward(q, c, &mask)), 31); }, inputs,
               o);
  });
  auto tiny_model = [](const std::string& name, DptbfConfig cfg) {
    return [name, cfg](std::uint64_t seed, const ad::GradcheckOptions& o) {
      Rand r{std::mt19937_64(seed)};
      auto model = std::make_shared<Dptbf<double>>(cfg, seed + 104);
      for (auto& s : model->params().slots())
        s.param.mutable_value() += r.uniform(s.param.shape(), -0.2, 0.2, false).value();
      const Index F = 5, TT = 6;
      NetworkInputs<double> in{r.normal({F, TT, cfg.feature_channels()}, false),
                               r.normal({F, TT, cfg.covariance_channels()}, false),
                               r.normal({F, TT, cfg.n_mics, 2}, false)};
      return run(name, [=] { return project(model->forward(in).enhanced, 32); }, model->params().tensors(), o);
    };
  };
  DptbfConfig tiny;
  tiny.d_model = 8;
  tiny.gru_hidden = 16;
  tiny.n_heads = 2;
  tiny.n_mics = 2;
  tiny.n_pairs = 1;
  out.emplace_back("dptbf_tiny", tiny_model("dptbf_tiny", tiny));
  DptbfConfig ablated = tiny;
  ablated.freq_attention = false;
  ablated.gru_skip = true;
  ablated.causal_mhca = true;
  ablated.conv_kernel = 3;
  out.emplace_back("dptbf_tiny_variants", tiny_model("dptbf_tiny_variants", ablated));

  out.emplace_back("composite_loss_istft", [](std::uint64_t seed, const ad::GradcheckOptions& o) {
    Rand r{std::mt19937_64(seed)};
    StftConfig cfg;
    cfg.fft_size = 16;
    cfg.win_length = 16;
    cfg.hop = 8;
    const Index n = 64, M = 2;
    Waveform mix;
    mix.samples = Eigen::Map<const Eigen::MatrixXd>(r.normal({M * n}, false).value().data(), M, n);
    Waveform ref;
    ref.samples = 0.5 * mix.samples.row(0) +
                  0.1 * Eigen::Map<const Eigen::RowVectorXd>(r.normal({n}, false).value().data(), n);
    const Spectrogram ys = stft(mix, cfg), rs = stft(ref, cfg);
    const T y = spectrogram_tensor<double>(ys);
    const T rs4 = spectrogram_tensor<double>(rs);
    const T ref_spec = ad::reshape(rs4, {rs4.dim(0), rs4.dim(1), 2});
    const T ref_wave = T::from({n}, ref.samples.row(0).transpose().array());
    T w = r.uniform(y.shape(), -1.0, 1.0);
    return run("composite_loss_istft",
               [=] {
                 const T est = apply_beamformer(w, y);
                 return composite_loss(est, istft(est, cfg, n), ref_spec, ref_wave).total;
               },
               {w}, o);
  });
  return out;
}

}  // namespace

std::vector<std::string> gradcheck_block_names() {
  std::vector<std::string> names;
  for (const auto& [name, fn] : blocks()) names.push_back(name);
  return names;
}

BlockCheck run_gradcheck_block(const std::string& name, std::uint64_t seed, const ad::GradcheckOptions& opts) {
  for (const auto& [n, fn] : blocks()) {
    if (n == name) return fn(seed, opts);
  }
  throw ValidationError("unknown gradcheck block '" + name + "'");
}

std::vector<BlockCheck> run_gradcheck_suite(std::uint64_t seed, const ad::GradcheckOptions& opts) {
  std::vector<BlockCheck> out;
  for (const auto& [name, fn] : blocks()) out.push_back(fn(seed, opts));
  return out;
}

}  // namespace dptbf
