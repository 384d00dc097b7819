// Copyright 2026 The dptbf Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <optional>
#include <string>
#include <vector>

#include "dptbf/common.hpp"

namespace dptbf {

enum class WindowType : std::uint32_t { kHann = 0, kRect = 1 };

/// Analysis configuration. Defaults: 512-point FFT, 32 ms Hann window, 50% hop at 16 kHz.
struct StftConfig {
  int fft_size = 512;
  int win_length = 512;
  int hop = 256;
  WindowType window = WindowType::kHann;
  int sample_rate = kSampleRate;

  Index n_freq() const { return fft_size / 2 + 1; }

  /// Frames for a signal of n samples: ceil(n / hop), frame t centered at t * hop.
  Index n_frames(Index n_samples) const { return (n_samples + hop - 1) / hop; }

  /// Throws ValidationError unless hop | win_length, win_length <= fft_size and
  /// the squared window overlap-adds to a strictly positive envelope.
  void validate() const;

  /// Parses "fft=512,hop=256,win=hann[,winlen=512]" on top of the defaults.
  static StftConfig parse(const std::string& text);
  std::string to_string() const;

  bool operator==(const StftConfig&) const = default;
};

/// Periodic window of cfg.win_length samples.
Eigen::VectorXd analysis_window(const StftConfig& cfg);

/// Complex time-frequency data, one n_freq x n_frames matrix per channel.
struct Spectrogram {
  StftConfig config;
  std::vector<Eigen::MatrixXcd> channels;
  /// Samples of the waveform this was computed from; 0 when unknown.
  Index n_samples = 0;

  Index n_channels() const { return static_cast<Index>(channels.size()); }
  Index n_freq() const { return channels.empty() ? 0 : channels.front().rows(); }
  Index n_frames() const { return channels.empty() ? 0 : channels.front().cols(); }
  const Complex& at(Index ch, Index f, Index t) const { return channels[ch](f, t); }
};

Spectrogram stft(const Waveform& wave, const StftConfig& cfg = {});

/// Appends one hop of zeros. With ceil(n / hop) centered frames the last
/// samples sit under a single window tail (weight ~1e-5 for Hann), so any
/// modification of the spectrum is amplified there on synthesis. Pipelines
/// that process a spectrum analyze the padded signal and cut the synthesis
/// back to the original length.
Waveform pad_for_processing(const Waveform& wave, const StftConfig& cfg = {});

/// Weighted overlap-add inverse. The output has `length` samples when given,
/// spec.n_samples when that is set, and n_frames * hop otherwise.
Waveform istft(const Spectrogram& spec, std::optional<Index> length = std::nullopt);

namespace detail {

/// Inverse real DFT of one half-spectrum frame (imaginary parts of DC and
/// Nyquist are ignored), scaled by 1/fft_size.
Eigen::VectorXd inverse_real_frame(const StftConfig& cfg, const Eigen::VectorXcd& half);

/// Adjoint of inverse_real_frame: gradient w.r.t. (Re, Im) of the half spectrum.
Eigen::VectorXcd inverse_real_frame_adjoint(const StftConfig& cfg, const Eigen::VectorXd& grad);

/// Sum over frames of the squared synthesis window, in original-signal coordinates.
Eigen::VectorXd synthesis_envelope(const StftConfig& cfg, Index n_frames, Index length);

/// Mirror-reflected index into [0, n).
Index reflect_index(Index i, Index n);

}  // namespace detail

}  // namespace dptbf
