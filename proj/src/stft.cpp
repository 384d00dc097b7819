// Copyright 2026 The dptbf Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "dptbf/stft.hpp"

#include <cmath>
#include <sstream>

#include <unsupported/Eigen/FFT>

namespace dptbf {

void StftConfig::validate() const {
  require(fft_size >= 2 && fft_size % 2 == 0, "stft: fft_size must be even and >= 2");
  require(win_length >= 1 && win_length <= fft_size, "stft: need 1 <= win_length <= fft_size");
  require(hop >= 1 && hop <= win_length && win_length % hop == 0,
          "stft: hop must divide win_length");
  require(sample_rate > 0, "stft: sample_rate must be positive");
  const Eigen::VectorXd w = analysis_window(*this);
  for (int n = 0; n < hop; ++n) {
    double acc = 0.0;
    for (int k = n; k < win_length; k += hop) acc += w[k] * w[k];
    require(acc > 0.0, "stft: window does not overlap-add to a positive envelope at this hop");
  }
}

StftConfig StftConfig::parse(const std::string& text) {
  StftConfig cfg;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    const auto eq = item.find('=');
    require(eq != std::string::npos, "stft: expected key=value, got '" + item + "'");
    const std::string key = item.substr(0, eq), value = item.substr(eq + 1);
    try {
      if (key == "fft") {
        cfg.fft_size = std::stoi(value);
        cfg.win_length = cfg.fft_size;
      } else if (key == "hop") {
        cfg.hop = std::stoi(value);
      } else if (key == "winlen") {
        cfg.win_length = std::stoi(value);
      } else if (key == "win") {
        if (value == "hann") cfg.window = WindowType::kHann;
        else if (value == "rect") cfg.window = WindowType::kRect;
        else throw ValidationError("stft: unknown window '" + value + "'");
      } else {
        throw ValidationError("stft: unknown key '" + key + "'");
      }
    } catch (const std::logic_error& e) {
      if (dynamic_cast<const ValidationError*>(&e)) throw;
      throw ValidationError("stft: bad value for '" + key + "'");
    }
  }
  cfg.validate();
  return cfg;
}

std::string StftConfig::to_string() const {
  std::ostringstream os;
  os << "fft=" << fft_size << ",hop=" << hop << ",win=" << (window == WindowType::kHann ? "hann" : "rect")
     << ",winlen=" << win_length;
  return os.str();
}

Eigen::VectorXd analysis_window(const StftConfig& cfg) {
  Eigen::VectorXd w(cfg.win_length);
  for (int n = 0; n < cfg.win_length; ++n) {
    w[n] = cfg.window == WindowType::kHann
               ? 0.5 - 0.5 * std::cos(2.0 * kPi * n / cfg.win_length)
               : 1.0;
  }
  return w;
}

namespace detail {

Index reflect_index(Index i, Index n) {
  if (n == 1) return 0;
  const Index period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

Eigen::VectorXd inverse_real_frame(const StftConfig& cfg, const Eigen::VectorXcd& half) {
  const int n = cfg.fft_size;
  std::vector<Complex> full(n);
  full[0] = Complex(half[0].real(), 0.0);
  full[n / 2] = Complex(half[n / 2].real(), 0.0);
  for (int k = 1; k < n / 2; ++k) {
    full[k] = half[k];
    full[n - k] = std::conj(half[k]);
  }
  std::vector<Complex> time;
  Eigen::FFT<double> fft;
  fft.inv(time, full);  // includes the 1/n factor
  Eigen::VectorXd out(n);
  for (int i = 0; i < n; ++i) out[i] = time[i].real();
  return out;
}

Eigen::VectorXcd inverse_real_frame_adjoint(const StftConfig& cfg, const Eigen::VectorXd& grad) {
  const int n = cfg.fft_size;
  std::vector<Complex> in(grad.data(), grad.data() + n), spec;
  Eigen::FFT<double> fft;
  fft.fwd(spec, in);
  Eigen::VectorXcd out(n / 2 + 1);
  for (int k = 0; k <= n / 2; ++k) {
    const double c = (k == 0 || k == n / 2) ? 1.0 : 2.0;
    out[k] = (c / n) * spec[k];
  }
  out[0] = Complex(out[0].real(), 0.0);
  out[n / 2] = Complex(out[n / 2].real(), 0.0);
  return out;
}

Eigen::VectorXd synthesis_envelope(const StftConfig& cfg, Index n_frames, Index length) {
  const Eigen::VectorXd w = analysis_window(cfg);
  const Index half = cfg.win_length / 2;
  Eigen::VectorXd env = Eigen::VectorXd::Zero(length);
  for (Index t = 0; t < n_frames; ++t) {
    const Index start = t * cfg.hop - half;
    for (Index i = 0; i < cfg.win_length; ++i) {
      const Index pos = start + i;
      if (pos >= 0 && pos < length) env[pos] += w[i] * w[i];
    }
  }
  return env;
}

}  // namespace detail

Spectrogram stft(const Waveform& wave, const StftConfig& cfg) {
  cfg.validate();
  require(wave.channels() >= 1 && wave.length() >= 1, "stft: empty input");
  require(wave.samples.allFinite(), "stft: non-finite samples");

  const Index n = wave.length();
  const Index frames = cfg.n_frames(n);
  const Index half = cfg.win_length / 2;
  const Eigen::VectorXd w = analysis_window(cfg);

  Spectrogram spec;
  spec.config = cfg;
  spec.n_samples = n;
  spec.channels.assign(wave.channels(), Eigen::MatrixXcd(cfg.n_freq(), frames));

  Eigen::FFT<double> fft;
  std::vector<Complex> buf(cfg.fft_size), out;
  for (Index ch = 0; ch < wave.channels(); ++ch) {
    for (Index t = 0; t < frames; ++t) {
      std::fill(buf.begin(), buf.end(), Complex(0.0));
      const Index start = t * cfg.hop - half;
      for (Index i = 0; i < cfg.win_length; ++i) {
        buf[i] = w[i] * wave.samples(ch, detail::reflect_index(start + i, n));
      }
      fft.fwd(out, buf);
      for (Index k = 0; k < cfg.n_freq(); ++k) spec.channels[ch](k, t) = out[k];
    }
  }
  return spec;
}

Waveform pad_for_processing(const Waveform& wave, const StftConfig& cfg) {
  Waveform out;
  out.sample_rate = wave.sample_rate;
  out.samples = Eigen::MatrixXd::Zero(wave.channels(), wave.length() + cfg.hop);
  out.samples.leftCols(wave.length()) = wave.samples;
  return out;
}

Waveform istft(const Spectrogram& spec, std::optional<Index> length) {
  const StftConfig& cfg = spec.config;
  cfg.validate();
  require(spec.n_channels() >= 1, "istft: empty spectrogram");
  for (const auto& ch : spec.channels) {
    if (ch.rows() != cfg.n_freq() || ch.cols() != spec.n_frames())
      throw ValidationError("istft: frame layout does not match the stft config");
  }
  const Index frames = spec.n_frames();
  const Index n = length ? *length : (spec.n_samples > 0 ? spec.n_samples : frames * cfg.hop);
  require(n >= 1, "istft: output length must be positive");

  const Eigen::VectorXd w = analysis_window(cfg);
  const Eigen::VectorXd env = detail::synthesis_envelope(cfg, frames, n);
  const Index half = cfg.win_length / 2;

  Waveform out;
  out.sample_rate = cfg.sample_rate;
  out.samples = Eigen::MatrixXd::Zero(spec.n_channels(), n);
  for (Index ch = 0; ch < spec.n_channels(); ++ch) {
    for (Index t = 0; t < frames; ++t) {
      const Eigen::VectorXd y = detail::inverse_real_frame(cfg, spec.channels[ch].col(t));
      const Index start = t * cfg.hop - half;
      for (Index i = 0; i < cfg.win_length; ++i) {
        const Index pos = start + i;
        if (pos >= 0 && pos < n) out.samples(ch, pos) += w[i] * y[i];
      }
    }
    for (Index i = 0; i < n; ++i) {
      out.samples(ch, i) = env[i] > 0.0 ? out.samples(ch, i) / env[i] : 0.0;
    }
  }
  return out;
}

}  // namespace dptbf
