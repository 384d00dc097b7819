// Copyright 2026 The dptbf Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Mask-based MVDR with oracle ratio masks.

#pragma once

#include <vector>

#include "dptbf/beamformer.hpp"
#include "dptbf/stft.hpp"

namespace dptbf {

/// Real masks in [0, 1], n_freq x n_frames.
struct MaskPair {
  Eigen::MatrixXd speech_mask;
  Eigen::MatrixXd noise_mask;
};

/// Ratio masks |X| / (|X| + |V|) and |V| / (|X| + |V|) with V = Y_ref - X.
/// `target` holds the target image at the reference channel (one channel).
MaskPair oracle_masks(const Spectrogram& target, const Spectrogram& mixture, int ref_channel = 0);

/// Per-frequency M x M covariance matrices.
struct CovariancePair {
  std::vector<Eigen::MatrixXcd> speech;
  std::vector<Eigen::MatrixXcd> noise;
  /// Bins where a mask summed to zero and the plain average was used instead.
  int degenerate_bins = 0;
};

/// Phi(f) = sum_t m(f,t) Y Y^H / sum_t m(f,t) for each mask.
CovariancePair masked_covariances(const Spectrogram& spec, const MaskPair& masks);

enum class SteeringMode { kPrincipalEigenvector, kReferenceColumn };

struct MvdrConfig {
  SteeringMode steering = SteeringMode::kPrincipalEigenvector;
  int ref_channel = 0;
  /// Diagonal loading as a fraction of trace(Phi_NN) / M.
  double loading = 1e-6;
};

/// Steering vector from Phi_XX, scaled so that its reference entry is 1.
Eigen::VectorXcd steering_vector(const Eigen::MatrixXcd& phi_xx, const MvdrConfig& cfg = {});

/// w = Phi^-1 d / (d^H Phi^-1 d) after diagonal loading of Phi.
Eigen::VectorXcd mvdr_solve(const Eigen::MatrixXcd& phi_nn, const Eigen::VectorXcd& d, double loading = 1e-6);

/// Frequency-dependent, time-invariant filters.
BeamWeights mvdr_weights(const CovariancePair& cov, const MvdrConfig& cfg = {});

/// Oracle-mask MVDR output for a mixture given its reference target image.
Spectrogram mvdr_oracle_enhance(const Spectrogram& mixture, const Spectrogram& target, const MvdrConfig& cfg = {});

}  // namespace dptbf
