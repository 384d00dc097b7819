// Copyright 2026 The dptbf Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "dptbf/features.hpp"

#include <cmath>

namespace dptbf {

ArrayGeometry ArrayGeometry::linear(int n_mics, double spacing) {
  require(n_mics >= 2, "geometry: need at least two microphones");
  ArrayGeometry g;
  g.mic_positions = Eigen::Matrix<double, Eigen::Dynamic, 3>::Zero(n_mics, 3);
  const double center = 0.5 * (n_mics - 1);
  for (int m = 0; m < n_mics; ++m) g.mic_positions(m, 0) = (m - center) * spacing;
  for (int m = 1; m < n_mics; ++m) g.pairs.emplace_back(0, m);
  return g;
}

void ArrayGeometry::validate() const {
  require(n_mics() >= 2, "geometry: need at least two microphones");
  require(!pairs.empty(), "geometry: need at least one microphone pair");
  for (const auto& [a, b] : pairs) {
    require(a >= 0 && a < n_mics() && b >= 0 && b < n_mics(),
            "geometry: pair index out of range");
  }
  require(sound_speed > 0.0, "geometry: sound speed must be positive");
}

double ArrayGeometry::expected_phase_difference(Index pair, double doa, double freq_hz) const {
  const auto [a, b] = pairs[pair];
  const Eigen::RowVector3d u(std::cos(doa), std::sin(doa), 0.0);
  const double path = (mic_positions.row(b) - mic_positions.row(a)).dot(u);
  return 2.0 * kPi * freq_hz * path / sound_speed;
}

Eigen::MatrixXcd CovarianceTensor::complex_at(Index f, Index t) const {
  Eigen::MatrixXcd phi(n_mics, n_mics);
  const double* p = data.data() + offset(f, t);
  for (Index i = 0; i < n_mics; ++i)
    for (Index j = 0; j < n_mics; ++j, p += 2) phi(i, j) = Complex(p[0], p[1]);
  return phi;
}

Eigen::MatrixXd magnitude_feature(const Spectrogram& spec, int ref_channel) {
  require(ref_channel >= 0 && ref_channel < spec.n_channels(),
          "magnitude_feature: reference channel out of range");
  return spec.channels[ref_channel].cwiseAbs();
}

std::vector<Eigen::MatrixXd> cos_ipd(const Spectrogram& spec,
                                     const std::vector<std::pair<int, int>>& pairs) {
  std::vector<Eigen::MatrixXd> out;
  for (const auto& [a, b] : pairs) {
    require(a >= 0 && a < spec.n_channels() && b >= 0 && b < spec.n_channels(),
            "cos_ipd: pair channel missing from spectrogram");
    Eigen::MatrixXd c(spec.n_freq(), spec.n_frames());
    for (Index f = 0; f < c.rows(); ++f)
      for (Index t = 0; t < c.cols(); ++t)
        c(f, t) = std::cos(phase(spec.at(b, f, t)) - phase(spec.at(a, f, t)));
    out.push_back(std::move(c));
  }
  return out;
}

Eigen::MatrixXd angle_feature(const Spectrogram& spec, double doa, const ArrayGeometry& geom) {
  geom.validate();
  require(doa >= 0.0 && doa <= kPi, "angle_feature: doa must lie in [0, pi]");
  const double bin_hz = double(spec.config.sample_rate) / spec.config.fft_size;
  Eigen::MatrixXd af = Eigen::MatrixXd::Zero(spec.n_freq(), spec.n_frames());
  for (Index p = 0; p < geom.n_pairs(); ++p) {
    const auto [a, b] = geom.pairs[p];
    require(a < spec.n_channels() && b < spec.n_channels(),
            "angle_feature: pair channel missing from spectrogram");
    for (Index f = 0; f < af.rows(); ++f) {
      const double delta = geom.expected_phase_difference(p, doa, f * bin_hz);
      for (Index t = 0; t < af.cols(); ++t) {
        // principal value of the observed phase difference
        const double ipd = std::remainder(phase(spec.at(b, f, t)) - phase(spec.at(a, f, t)), 2.0 * kPi);
        af(f, t) += std::cos(ipd - delta);
      }
    }
  }
  return af;
}

CovarianceTensor noisy_covariance(const Spectrogram& spec, CovarianceNorm norm) {
  const Index m = spec.n_channels();
  require(m >= 2, "noisy_covariance: need at least two channels");
  CovarianceTensor cov;
  cov.n_freq = spec.n_freq();
  cov.n_frames = spec.n_frames();
  cov.n_mics = m;
  cov.data.assign(static_cast<std::size_t>(cov.n_freq * cov.n_frames * m * m * 2), 0.0);
  Eigen::VectorXcd y(m);
  for (Index f = 0; f < cov.n_freq; ++f) {
    for (Index t = 0; t < cov.n_frames; ++t) {
      for (Index c = 0; c < m; ++c) y[c] = spec.at(c, f, t);
      double scale = 1.0;
      if (norm == CovarianceNorm::kTrace) {
        const double trace = y.squaredNorm();
        scale = trace > 0.0 ? 1.0 / trace : 0.0;
      }
      double* p = cov.data.data() + cov.offset(f, t);
      for (Index i = 0; i < m; ++i) {
        for (Index j = 0; j < m; ++j, p += 2) {
          const Complex v = y[i] * std::conj(y[j]) * scale;
          p[0] = v.real();
          p[1] = i == j ? 0.0 : v.imag();
        }
      }
    }
  }
  return cov;
}

ModelInputs assemble_inputs(const Spectrogram& spec, double doa, const ArrayGeometry& geom,
                            const FeatureConfig& cfg) {
  geom.validate();
  require(spec.n_channels() == geom.n_mics(),
          "assemble_inputs: spectrogram channels do not match the array geometry");
  ModelInputs in;
  in.features.channels.push_back(magnitude_feature(spec, cfg.ref_channel));
  for (auto& c : cos_ipd(spec, geom.pairs)) in.features.channels.push_back(std::move(c));
  in.features.channels.push_back(angle_feature(spec, doa, geom));
  in.covariance = noisy_covariance(spec, cfg.cov_norm);
  return in;
}

ContainerData to_container(const FeatureTensor& features) {
  ContainerData data;
  data.kind = ContainerKind::kReal;
  data.dims = {static_cast<std::uint64_t>(features.n_channels()),
               static_cast<std::uint64_t>(features.n_freq()),
               static_cast<std::uint64_t>(features.n_frames())};
  for (const auto& ch : features.channels)
    for (Index f = 0; f < ch.rows(); ++f)
      for (Index t = 0; t < ch.cols(); ++t) data.values.push_back(static_cast<float>(ch(f, t)));
  return data;
}

ContainerData to_container(const CovarianceTensor& cov) {
  ContainerData data;
  data.kind = ContainerKind::kReal;
  data.dims = {static_cast<std::uint64_t>(cov.n_freq), static_cast<std::uint64_t>(cov.n_frames),
               static_cast<std::uint64_t>(cov.n_mics), static_cast<std::uint64_t>(cov.n_mics), 2};
  data.values.assign(cov.data.begin(), cov.data.end());
  return data;
}

}  // namespace dptbf
