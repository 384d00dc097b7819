// Copyright 2026 The dptbf Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <vector>

#include "dptbf/common.hpp"
#include "dptbf/container.hpp"
#include "dptbf/stft.hpp"

namespace dptbf {

/// Complex filter coefficients, one n_freq x n_frames matrix per microphone.
/// Time-invariant filters use a single column.
struct BeamWeights {
  std::vector<Eigen::MatrixXcd> channels;

  Index n_mics() const { return static_cast<Index>(channels.size()); }
  Index n_freq() const { return channels.empty() ? 0 : channels.front().rows(); }
  Index n_frames() const { return channels.empty() ? 0 : channels.front().cols(); }
  const Complex& at(Index m, Index f, Index t) const {
    const auto& c = channels[m];
    return c(f, c.cols() == 1 ? 0 : t);
  }
};

/// Single-channel output X(f,t) = sum_m conj(w_m(f,t)) Y_m(f,t).
Spectrogram apply_beamformer(const BeamWeights& weights, const Spectrogram& mixture);

/// Layout [F, T, M, 2] (real, imaginary), f32.
ContainerData to_container(const BeamWeights& weights);

}  // namespace dptbf
