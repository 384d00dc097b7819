// Copyright 2026 The dptbf Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <bit>
#include <complex>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <ostream>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace dptbf {

static_assert(std::endian::native == std::endian::little,
              "binary containers are written in host order and assume a little-endian host");

using Index = Eigen::Index;
using Complex = std::complex<double>;

constexpr double kPi = 3.14159265358979323846;
constexpr double kSoundSpeed = 343.0;
constexpr int kSampleRate = 16000;

/// Input that violates a documented precondition (shape, range, config).
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// File-system or format failure while reading/writing artifacts.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require(bool condition, const std::string& message) {
  if (!condition) throw ValidationError(message);
}

/// M-channel time-domain audio, one row per channel.
struct Waveform {
  Eigen::MatrixXd samples;  // channels x n_samples
  int sample_rate = kSampleRate;

  Index channels() const { return samples.rows(); }
  Index length() const { return samples.cols(); }
};

/// Writes through a temporary sibling and renames it into place.
void atomic_write(const std::filesystem::path& path,
                  const std::function<void(std::ostream&)>& writer, bool binary = true);

}  // namespace dptbf
