// Copyright 2026 The dptbf Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Flat binary container shared by spectrogram, feature and weight dumps.
//
// Layout (all little-endian):
//   char[8]  magic "DPTBFTF1"
//   u32      kind        0 = complex (interleaved re/im), 1 = real
//   u32 x 5  fft_size, win_length, hop, window (0 hann, 1 rect), sample_rate
//            (all zero when the payload carries no STFT config)
//   u64      n_samples   source waveform length, 0 when unknown
//   u32      rank
//   u64 x rank dims      row-major, last dim fastest
//   f32 ...  payload     prod(dims) values, or 2 * prod(dims) for complex
//
// Spectrograms are stored with dims [channel, frequency, frame].

#pragma once

#include <filesystem>
#include <optional>
#include <vector>

#include "dptbf/stft.hpp"

namespace dptbf {

enum class ContainerKind : std::uint32_t { kComplex = 0, kReal = 1 };

struct ContainerData {
  ContainerKind kind = ContainerKind::kReal;
  std::optional<StftConfig> config;
  std::uint64_t n_samples = 0;
  std::vector<std::uint64_t> dims;
  std::vector<float> values;  // interleaved re/im for kComplex

  std::uint64_t element_count() const;
};

void write_container(const std::filesystem::path& path, const ContainerData& data);
ContainerData read_container(const std::filesystem::path& path);

ContainerData to_container(const Spectrogram& spec);
Spectrogram spectrogram_from_container(const ContainerData& data);

void write_spectrogram(const std::filesystem::path& path, const Spectrogram& spec);
Spectrogram read_spectrogram(const std::filesystem::path& path);

/// 20*log10(|X| + floor) per bin, dims [channel, frequency, frame].
ContainerData magnitude_db(const Spectrogram& spec, double floor = 1e-5);

/// Writes magnitude_db as the binary container at `path` and a long-format
/// CSV (channel,bin,frame,db) at `csv_path`.
void dump_spectrogram(const Spectrogram& spec, const std::filesystem::path& path,
                      const std::filesystem::path& csv_path);

}  // namespace dptbf
