// Copyright 2026 The dptbf Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "dptbf/mvdr.hpp"

#include <cmath>
#include <iostream>

#include <Eigen/Eigenvalues>

namespace dptbf {

MaskPair oracle_masks(const Spectrogram& target, const Spectrogram& mixture, int ref_channel) {
  require(target.n_channels() == 1, "oracle masks: target must be a single channel");
  require(ref_channel >= 0 && ref_channel < mixture.n_channels(), "oracle masks: bad reference channel");
  require(target.n_freq() == mixture.n_freq() && target.n_frames() == mixture.n_frames(),
          "oracle masks: target and mixture grids differ");
  const Eigen::ArrayXXd x = target.channels[0].array().abs();
  const Eigen::ArrayXXd v = (mixture.channels[ref_channel] - target.channels[0]).array().abs();
  const Eigen::ArrayXXd total = x + v;
  MaskPair masks;
  masks.speech_mask = (total > 0.0).select(x / total, 0.5).min(1.0).max(0.0).matrix();
  masks.noise_mask = (total > 0.0).select(v / total, 0.5).min(1.0).max(0.0).matrix();
  return masks;
}

namespace {

Eigen::MatrixXcd weighted_covariance(const Spectrogram& spec, Index f, const Eigen::RowVectorXd& weights) {
  const Index M = spec.n_channels(), T = spec.n_frames();
  Eigen::MatrixXcd y(M, T);
  for (Index m = 0; m < M; ++m) y.row(m) = spec.channels[m].row(f);
  return (y * weights.transpose().cast<Complex>().asDiagonal()) * y.adjoint();
}

}  // namespace

CovariancePair masked_covariances(const Spectrogram& spec, const MaskPair& masks) {
  const Index F = spec.n_freq(), T = spec.n_frames();
  require(spec.n_channels() >= 1 && T >= 1, "masked covariance: empty spectrogram");
  for (const auto* m : {&masks.speech_mask, &masks.noise_mask}) {
    require(m->rows() == F && m->cols() == T, "masked covariance: mask shape does not match the spectrogram");
    require(m->allFinite(), "masked covariance: non-finite mask");
  }
  CovariancePair out;
  out.speech.resize(F);
  out.noise.resize(F);
  const Eigen::RowVectorXd uniform = Eigen::RowVectorXd::Constant(T, 1.0 / double(T));
  for (Index f = 0; f < F; ++f) {
    auto estimate = [&](const Eigen::MatrixXd& mask) {
      const Eigen::RowVectorXd m = mask.row(f).cwiseMax(0.0).cwiseMin(1.0);
      const double total = m.sum();
      if (total <= 0.0) {
        ++out.degenerate_bins;
        return weighted_covariance(spec, f, uniform);
      }
      return Eigen::MatrixXcd(weighted_covariance(spec, f, m / total));
    };
    out.speech[f] = estimate(masks.speech_mask);
    out.noise[f] = estimate(masks.noise_mask);
  }
  if (out.degenerate_bins > 0)
    std::cerr << "warning: " << out.degenerate_bins << " all-zero mask bins, used unweighted covariance\n";
  return out;
}

Eigen::VectorXcd steering_vector(const Eigen::MatrixXcd& phi_xx, const MvdrConfig& cfg) {
  const Index M = phi_xx.rows();
  require(phi_xx.cols() == M && M >= 1, "steering: covariance must be square");
  require(cfg.ref_channel >= 0 && cfg.ref_channel < M, "steering: bad reference channel");
  if (!phi_xx.allFinite()) throw std::runtime_error("steering: non-finite covariance");
  Eigen::VectorXcd d;
  if (cfg.steering == SteeringMode::kReferenceColumn) {
    d = phi_xx.col(cfg.ref_channel);
  } else {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> eig(phi_xx);
    if (eig.info() != Eigen::Success || !eig.eigenvectors().allFinite())
      throw std::runtime_error("steering: eigendecomposition failed");
    d = eig.eigenvectors().col(M - 1);
  }
  const Complex ref = d[cfg.ref_channel];
  if (std::abs(ref) > 1e-12 * d.norm()) return d / ref;
  return d / (d.norm() > 0.0 ? d.norm() : 1.0);
}

Eigen::VectorXcd mvdr_solve(const Eigen::MatrixXcd& phi_nn, const Eigen::VectorXcd& d, double loading) {
  const Index M = phi_nn.rows();
  require(phi_nn.cols() == M && d.size() == M, "mvdr: shapes disagree");
  if (!phi_nn.allFinite() || !d.allFinite()) throw std::runtime_error("mvdr: non-finite input");
  const double trace = phi_nn.trace().real();
  const double eps = loading * (trace > 0.0 ? trace / double(M) : 1.0);
  Eigen::MatrixXcd loaded = phi_nn;
  loaded.diagonal().array() += eps;
  const Eigen::VectorXcd num = loaded.ldlt().solve(d);
  const Complex den = d.dot(num);  // d^H Phi^-1 d
  if (!num.allFinite() || std::abs(den) == 0.0) throw std::runtime_error("mvdr: noise covariance not invertible");
  return num / den;
}

BeamWeights mvdr_weights(const CovariancePair& cov, const MvdrConfig& cfg) {
  require(!cov.speech.empty() && cov.speech.size() == cov.noise.size(), "mvdr: covariance lists differ");
  const Index F = static_cast<Index>(cov.speech.size()), M = cov.speech.front().rows();
  BeamWeights w;
  w.channels.assign(M, Eigen::MatrixXcd(F, 1));
  for (Index f = 0; f < F; ++f) {
    const Eigen::VectorXcd wf = mvdr_solve(cov.noise[f], steering_vector(cov.speech[f], cfg), cfg.loading);
    for (Index m = 0; m < M; ++m) w.channels[m](f, 0) = wf[m];
  }
  return w;
}

Spectrogram mvdr_oracle_enhance(const Spectrogram& mixture, const Spectrogram& target, const MvdrConfig& cfg) {
  const MaskPair masks = oracle_masks(target, mixture, cfg.ref_channel);
  return apply_beamformer(mvdr_weights(masked_covariances(mixture, masks), cfg), mixture);
}

}  // namespace dptbf
