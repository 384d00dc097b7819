// Copyright 2026 The dptbf Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "dptbf/beamformer.hpp"

namespace dptbf {

Spectrogram apply_beamformer(const BeamWeights& weights, const Spectrogram& mixture) {
  require(weights.n_mics() == mixture.n_channels(),
          "beamformer: " + std::to_string(weights.n_mics()) + " filters for " +
              std::to_string(mixture.n_channels()) + " channels");
  require(weights.n_freq() == mixture.n_freq(), "beamformer: frequency bins differ");
  require(weights.n_frames() == 1 || weights.n_frames() == mixture.n_frames(), "beamformer: frame counts differ");
  for (const auto& c : weights.channels) {
    require(c.rows() == weights.n_freq() && c.cols() == weights.n_frames(), "beamformer: ragged weights");
  }
  Spectrogram out;
  out.config = mixture.config;
  out.n_samples = mixture.n_samples;
  Eigen::MatrixXcd x = Eigen::MatrixXcd::Zero(mixture.n_freq(), mixture.n_frames());
  for (Index m = 0; m < weights.n_mics(); ++m) {
    const auto& w = weights.channels[m];
    if (w.cols() == 1) {
      x += (mixture.channels[m].array().colwise() * w.col(0).conjugate().array()).matrix();
    } else {
      x += (w.conjugate().array() * mixture.channels[m].array()).matrix();
    }
  }
  out.channels.push_back(std::move(x));
  return out;
}

ContainerData to_container(const BeamWeights& weights) {
  const Index M = weights.n_mics(), F = weights.n_freq(), T = weights.n_frames();
  ContainerData data;
  data.kind = ContainerKind::kReal;
  data.dims = {static_cast<std::uint64_t>(F), static_cast<std::uint64_t>(T), static_cast<std::uint64_t>(M), 2};
  data.values.resize(static_cast<std::size_t>(F * T * M * 2));
  std::size_t k = 0;
  for (Index f = 0; f < F; ++f)
    for (Index t = 0; t < T; ++t)
      for (Index m = 0; m < M; ++m) {
        data.values[k++] = static_cast<float>(weights.channels[m](f, t).real());
        data.values[k++] = static_cast<float>(weights.channels[m](f, t).imag());
      }
  return data;
}

}  // namespace dptbf
