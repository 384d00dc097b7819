// Copyright 2026 The dptbf Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "dptbf/spectral_ops.hpp"

namespace dptbf {

template <typename Scalar>
ad::Tensor<Scalar> spectrogram_tensor(const Spectrogram& spec) {
  const Index F = spec.n_freq(), T = spec.n_frames(), C = spec.n_channels();
  typename ad::Tensor<Scalar>::Array v(F * T * C * 2);
  Index k = 0;
  for (Index f = 0; f < F; ++f)
    for (Index t = 0; t < T; ++t)
      for (Index c = 0; c < C; ++c) {
        v[k++] = static_cast<Scalar>(spec.channels[c](f, t).real());
        v[k++] = static_cast<Scalar>(spec.channels[c](f, t).imag());
      }
  return ad::Tensor<Scalar>::from({F, T, C, 2}, std::move(v));
}

template <typename Scalar>
Spectrogram tensor_spectrogram(const ad::Tensor<Scalar>& x, const StftConfig& cfg, Index n_samples) {
  ad::check_shape((x.rank() == 3 || x.rank() == 4) && x.dim(-1) == 2,
                  "expected a [F, T, 2] or [F, T, C, 2] tensor, got " + ad::to_string(x.shape()));
  const Index F = x.dim(0), T = x.dim(1), C = x.rank() == 4 ? x.dim(2) : 1;
  require(F == cfg.n_freq(), "tensor has " + std::to_string(F) + " bins, config expects " + std::to_string(cfg.n_freq()));
  Spectrogram spec;
  spec.config = cfg;
  spec.n_samples = n_samples;
  spec.channels.assign(C, Eigen::MatrixXcd(F, T));
  const auto& v = x.value();
  Index k = 0;
  for (Index f = 0; f < F; ++f)
    for (Index t = 0; t < T; ++t)
      for (Index c = 0; c < C; ++c, k += 2) spec.channels[c](f, t) = Complex(double(v[k]), double(v[k + 1]));
  return spec;
}

template <typename Scalar>
ad::Tensor<Scalar> istft(const ad::Tensor<Scalar>& x, const StftConfig& cfg, Index length) {
  using Array = typename ad::Tensor<Scalar>::Array;
  cfg.validate();
  ad::check_shape(x.rank() == 3 && x.dim(0) == cfg.n_freq() && x.dim(2) == 2,
                  "istft: expected [" + std::to_string(cfg.n_freq()) + ", T, 2], got " + ad::to_string(x.shape()));
  require(length >= 1, "istft: output length must be positive");
  const Index F = x.dim(0), T = x.dim(1), half = cfg.win_length / 2;
  const Eigen::VectorXd w = analysis_window(cfg);
  const Eigen::VectorXd env = detail::synthesis_envelope(cfg, T, length);

  Eigen::VectorXd y = Eigen::VectorXd::Zero(length);
  Eigen::VectorXcd frame(F);
  const auto& xv = x.value();
  for (Index t = 0; t < T; ++t) {
    for (Index f = 0; f < F; ++f) {
      const Index k = (f * T + t) * 2;
      frame[f] = Complex(double(xv[k]), double(xv[k + 1]));
    }
    const Eigen::VectorXd s = detail::inverse_real_frame(cfg, frame);
    const Index start = t * cfg.hop - half;
    for (Index i = 0; i < cfg.win_length; ++i) {
      const Index pos = start + i;
      if (pos >= 0 && pos < length) y[pos] += w[i] * s[i];
    }
  }
  Array out(length);
  for (Index i = 0; i < length; ++i) out[i] = static_cast<Scalar>(env[i] > 0.0 ? y[i] / env[i] : 0.0);

  auto nx = x.node();
  return ad::custom_op<Scalar>({length}, std::move(out), {x}, [nx, cfg, w, env, F, T, half, length](ad::Node<Scalar>& node) {
    if (!nx->requires_grad) return;
    auto& gx = nx->grad_buffer();
    Eigen::VectorXd g(cfg.fft_size);
    for (Index t = 0; t < T; ++t) {
      g.setZero();
      const Index start = t * cfg.hop - half;
      for (Index i = 0; i < cfg.win_length; ++i) {
        const Index pos = start + i;
        if (pos >= 0 && pos < length && env[pos] > 0.0) g[i] = w[i] * double(node.grad[pos]) / env[pos];
      }
      const Eigen::VectorXcd d = detail::inverse_real_frame_adjoint(cfg, g);
      for (Index f = 0; f < F; ++f) {
        const Index k = (f * T + t) * 2;
        gx[k] += static_cast<Scalar>(d[f].real());
        gx[k + 1] += static_cast<Scalar>(d[f].imag());
      }
    }
  });
}

template <typename Scalar>
ad::Tensor<Scalar> apply_beamformer(const ad::Tensor<Scalar>& w, const ad::Tensor<Scalar>& y) {
  ad::check_shape(w.rank() == 4 && w.shape() == y.shape() && w.dim(3) == 2,
                  "beamformer: weights " + ad::to_string(w.shape()) + " and mixture " + ad::to_string(y.shape()) +
                      " must both be [F, T, M, 2]");
  return ad::sum(ad::cmul(ad::conj(w), y), 2);
}

template <typename Scalar>
BeamWeights weights_from_tensor(const ad::Tensor<Scalar>& w) {
  ad::check_shape(w.rank() == 4 && w.dim(3) == 2, "weights: expected [F, T, M, 2]");
  const Index F = w.dim(0), T = w.dim(1), M = w.dim(2);
  BeamWeights out;
  out.channels.assign(M, Eigen::MatrixXcd(F, T));
  const auto& v = w.value();
  Index k = 0;
  for (Index f = 0; f < F; ++f)
    for (Index t = 0; t < T; ++t)
      for (Index m = 0; m < M; ++m, k += 2) out.channels[m](f, t) = Complex(double(v[k]), double(v[k + 1]));
  return out;
}

#define DPTBF_INSTANTIATE(S)                                                                   \
  template ad::Tensor<S> spectrogram_tensor<S>(const Spectrogram&);                           \
  template Spectrogram tensor_spectrogram<S>(const ad::Tensor<S>&, const StftConfig&, Index); \
  template ad::Tensor<S> istft<S>(const ad::Tensor<S>&, const StftConfig&, Index);            \
  template ad::Tensor<S> apply_beamformer<S>(const ad::Tensor<S>&, const ad::Tensor<S>&);     \
  template BeamWeights weights_from_tensor<S>(const ad::Tensor<S>&);

DPTBF_INSTANTIATE(float)
DPTBF_INSTANTIATE(double)
#undef DPTBF_INSTANTIATE

}  // namespace dptbf
