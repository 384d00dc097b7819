// Copyright 2026 The dptbf Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Bridges between Spectrogram values and autodiff tensors. Complex bins are
// stored as trailing (re, im) pairs.

#pragma once

#include "dptbf/autodiff.hpp"
#include "dptbf/beamformer.hpp"
#include "dptbf/stft.hpp"

namespace dptbf {

/// [F, T, C, 2] constant tensor.
template <typename Scalar>
ad::Tensor<Scalar> spectrogram_tensor(const Spectrogram& spec);

/// Inverse of spectrogram_tensor; also accepts a single-channel [F, T, 2].
template <typename Scalar>
Spectrogram tensor_spectrogram(const ad::Tensor<Scalar>& x, const StftConfig& cfg, Index n_samples);

/// Differentiable weighted overlap-add inverse of a [F, T, 2] spectrum; matches
/// dptbf::istft and returns [length].
template <typename Scalar>
ad::Tensor<Scalar> istft(const ad::Tensor<Scalar>& x, const StftConfig& cfg, Index length);

/// sum_m conj(w_m) * Y_m for w, y of shape [F, T, M, 2]; returns [F, T, 2].
template <typename Scalar>
ad::Tensor<Scalar> apply_beamformer(const ad::Tensor<Scalar>& w, const ad::Tensor<Scalar>& y);

/// BeamWeights from a [F, T, M, 2] tensor.
template <typename Scalar>
BeamWeights weights_from_tensor(const ad::Tensor<Scalar>& w);

}  // namespace dptbf
