// Copyright 2026 The dptbf Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "dptbf/wav.hpp"

#include <cstring>
#include <fstream>
#include <vector>

namespace dptbf {
namespace {

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T load(const char* p) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  return v;
}

}  // namespace

Waveform read_wav(const std::filesystem::path& path, int expected_rate) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
    throw IoError(path.string() + ": not a RIFF/WAVE file");

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  const char* data = nullptr;
  std::size_t data_size = 0;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const char* id = bytes.data() + pos;
    const auto size = load<std::uint32_t>(id + 4);
    const char* body = id + 8;
    if (pos + 8 + size > bytes.size()) {
      if (std::memcmp(id, "data", 4) != 0) break;
      data_size = bytes.size() - pos - 8;  // tolerate a streamed, unpatched size
      data = body;
      break;
    }
    if (std::memcmp(id, "fmt ", 4) == 0 && size >= 16) {
      format = load<std::uint16_t>(body);
      channels = load<std::uint16_t>(body + 2);
      rate = load<std::uint32_t>(body + 4);
      bits = load<std::uint16_t>(body + 14);
      if (format == 0xFFFE && size >= 26) format = load<std::uint16_t>(body + 24);
    } else if (std::memcmp(id, "data", 4) == 0) {
      data = body;
      data_size = size;
    }
    pos += 8 + size + (size & 1);
  }
  if (!data || channels == 0) throw IoError(path.string() + ": missing fmt or data chunk");
  if (static_cast<int>(rate) != expected_rate)
    throw ValidationError(path.string() + ": sample rate " + std::to_string(rate) +
                          " Hz, expected " + std::to_string(expected_rate));

  const bool pcm16 = format == 1 && bits == 16;
  const bool float32 = format == 3 && bits == 32;
  if (!pcm16 && !float32) throw IoError(path.string() + ": only 16-bit PCM and 32-bit float are supported");

  const std::size_t frame_bytes = channels * (bits / 8);
  const Index n = static_cast<Index>(data_size / frame_bytes);
  Waveform wave;
  wave.sample_rate = static_cast<int>(rate);
  wave.samples.resize(channels, n);
  for (Index i = 0; i < n; ++i) {
    for (Index c = 0; c < channels; ++c) {
      const char* p = data + i * frame_bytes + c * (bits / 8);
      wave.samples(c, i) = pcm16 ? load<std::int16_t>(p) / 32768.0 : double(load<float>(p));
    }
  }
  return wave;
}

void write_wav(const std::filesystem::path& path, const Waveform& wave) {
  const auto channels = static_cast<std::uint16_t>(wave.channels());
  const auto n = static_cast<std::uint32_t>(wave.length());
  const std::uint32_t data_size = n * channels * 4;
  atomic_write(path, [&](std::ostream& os) {
    os.write("RIFF", 4);
    put<std::uint32_t>(os, 36 + data_size);
    os.write("WAVE", 4);
    os.write("fmt ", 4);
    put<std::uint32_t>(os, 16);
    put<std::uint16_t>(os, 3);
    put<std::uint16_t>(os, channels);
    put<std::uint32_t>(os, static_cast<std::uint32_t>(wave.sample_rate));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(wave.sample_rate) * channels * 4);
    put<std::uint16_t>(os, static_cast<std::uint16_t>(channels * 4));
    put<std::uint16_t>(os, 32);
    os.write("data", 4);
    put<std::uint32_t>(os, data_size);
    std::vector<float> frame(channels);
    for (std::uint32_t i = 0; i < n; ++i) {
      for (std::uint16_t c = 0; c < channels; ++c) frame[c] = static_cast<float>(wave.samples(c, i));
      os.write(reinterpret_cast<const char*>(frame.data()), channels * 4);
    }
  });
}

}  // namespace dptbf
