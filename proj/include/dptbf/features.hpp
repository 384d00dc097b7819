// Copyright 2026 The dptbf Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <utility>
#include <vector>

#include "dptbf/container.hpp"
#include "dptbf/stft.hpp"

namespace dptbf {

/// Microphone layout in array-local coordinates; the x axis is the array axis
/// and DOA is measured from it.
struct ArrayGeometry {
  Eigen::Matrix<double, Eigen::Dynamic, 3> mic_positions;
  std::vector<std::pair<int, int>> pairs;
  double sound_speed = kSoundSpeed;

  /// Uniform linear array along x centered at the origin, pairs (0,1)..(0,M-1).
  static ArrayGeometry linear(int n_mics = 4, double spacing = 0.03);

  Index n_mics() const { return mic_positions.rows(); }
  Index n_pairs() const { return static_cast<Index>(pairs.size()); }
  void validate() const;

  /// Far-field phase difference of a plane wave from `doa` between the two
  /// mics of pair p at `freq_hz`: 2*pi*f * (r1 - r0).u(doa) / c.
  double expected_phase_difference(Index pair, double doa, double freq_hz) const;
};

enum class CovarianceNorm { kNone, kTrace };

struct FeatureConfig {
  int ref_channel = 0;
  CovarianceNorm cov_norm = CovarianceNorm::kNone;
};

/// Real model features, channel order [magnitude, cosIPD_1..P, angle feature].
struct FeatureTensor {
  std::vector<Eigen::MatrixXd> channels;  // each n_freq x n_frames

  Index n_channels() const { return static_cast<Index>(channels.size()); }
  Index n_freq() const { return channels.empty() ? 0 : channels.front().rows(); }
  Index n_frames() const { return channels.empty() ? 0 : channels.front().cols(); }
};

/// Per-(t,f) noisy covariance stacked as real values [freq][frame][M][M][re/im].
struct CovarianceTensor {
  Index n_freq = 0, n_frames = 0, n_mics = 0;
  std::vector<double> data;

  Index offset(Index f, Index t) const { return ((f * n_frames) + t) * n_mics * n_mics * 2; }
  Eigen::MatrixXcd complex_at(Index f, Index t) const;
};

struct ModelInputs {
  FeatureTensor features;
  CovarianceTensor covariance;
};

Eigen::MatrixXd magnitude_feature(const Spectrogram& spec, int ref_channel = 0);

/// cos of the inter-channel phase difference per pair; the phase of an exact zero is 0.
std::vector<Eigen::MatrixXd> cos_ipd(const Spectrogram& spec,
                                     const std::vector<std::pair<int, int>>& pairs);

/// sum_p cos(IPD_p(t,f) - expected_phase_difference(p, doa, f)). doa in [0, pi].
Eigen::MatrixXd angle_feature(const Spectrogram& spec, double doa, const ArrayGeometry& geom);

/// Instantaneous Y Y^H per bin, no temporal smoothing.
CovarianceTensor noisy_covariance(const Spectrogram& spec,
                                  CovarianceNorm norm = CovarianceNorm::kNone);

ModelInputs assemble_inputs(const Spectrogram& spec, double doa, const ArrayGeometry& geom,
                            const FeatureConfig& cfg = {});

/// Phase of z with the convention arg(0) = 0.
inline double phase(const Complex& z) {
  return (z.real() == 0.0 && z.imag() == 0.0) ? 0.0 : std::arg(z);
}

ContainerData to_container(const FeatureTensor& features);
ContainerData to_container(const CovarianceTensor& cov);

}  // namespace dptbf
