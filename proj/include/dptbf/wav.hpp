// Copyright 2026 The dptbf Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <filesystem>

#include "dptbf/common.hpp"

namespace dptbf {

/// Reads 16-bit PCM or 32-bit IEEE float RIFF/WAVE. Rejects any rate other
/// than `expected_rate`; resampling is not supported.
Waveform read_wav(const std::filesystem::path& path, int expected_rate = kSampleRate);

/// Writes 32-bit IEEE float WAVE (interleaved channels), atomically.
void write_wav(const std::filesystem::path& path, const Waveform& wave);

}  // namespace dptbf
