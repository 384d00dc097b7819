// Copyright 2026 The dptbf Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "dptbf/container.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>

namespace dptbf {
namespace {

constexpr char kMagic[8] = {'D', 'P', 'T', 'B', 'F', 'T', 'F', '1'};

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw IoError("container: truncated header");
  return v;
}

}  // namespace

void atomic_write(const std::filesystem::path& path,
                  const std::function<void(std::ostream&)>& writer, bool binary) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::random_device rd;
  std::filesystem::path tmp = path;
  tmp += ".tmp" + std::to_string(rd());
  {
    std::ofstream os(tmp, binary ? std::ios::binary | std::ios::trunc : std::ios::trunc);
    if (!os) throw IoError("cannot open " + tmp.string() + " for writing");
    try {
      writer(os);
      os.flush();
      if (!os) throw IoError("write failed for " + path.string());
    } catch (...) {
      os.close();
      std::filesystem::remove(tmp);
      throw;
    }
  }
  std::filesystem::rename(tmp, path);
}

std::uint64_t ContainerData::element_count() const {
  std::uint64_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

void write_container(const std::filesystem::path& path, const ContainerData& data) {
  const std::uint64_t expected =
      data.element_count() * (data.kind == ContainerKind::kComplex ? 2 : 1);
  require(expected == data.values.size(), "container: payload size does not match dims");
  atomic_write(path, [&](std::ostream& os) {
    os.write(kMagic, sizeof(kMagic));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(data.kind));
    const StftConfig cfg = data.config.value_or(StftConfig{0, 0, 0, WindowType::kHann, 0});
    put<std::uint32_t>(os, cfg.fft_size);
    put<std::uint32_t>(os, cfg.win_length);
    put<std::uint32_t>(os, cfg.hop);
    put<std::uint32_t>(os, static_cast<std::uint32_t>(cfg.window));
    put<std::uint32_t>(os, cfg.sample_rate);
    put<std::uint64_t>(os, data.n_samples);
    put<std::uint32_t>(os, static_cast<std::uint32_t>(data.dims.size()));
    for (auto d : data.dims) put<std::uint64_t>(os, d);
    os.write(reinterpret_cast<const char*>(data.values.data()),
             static_cast<std::streamsize>(data.values.size() * sizeof(float)));
  });
}

ContainerData read_container(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw IoError(path.string() + ": not a dptbf container");
  ContainerData data;
  const auto kind = get<std::uint32_t>(is);
  if (kind > 1) throw IoError(path.string() + ": unknown container kind");
  data.kind = static_cast<ContainerKind>(kind);
  StftConfig cfg;
  cfg.fft_size = static_cast<int>(get<std::uint32_t>(is));
  cfg.win_length = static_cast<int>(get<std::uint32_t>(is));
  cfg.hop = static_cast<int>(get<std::uint32_t>(is));
  cfg.window = static_cast<WindowType>(get<std::uint32_t>(is));
  cfg.sample_rate = static_cast<int>(get<std::uint32_t>(is));
  if (cfg.fft_size != 0) data.config = cfg;
  data.n_samples = get<std::uint64_t>(is);
  const auto rank = get<std::uint32_t>(is);
  if (rank > 16) throw IoError(path.string() + ": implausible rank");
  for (std::uint32_t i = 0; i < rank; ++i) data.dims.push_back(get<std::uint64_t>(is));
  const std::uint64_t count =
      data.element_count() * (data.kind == ContainerKind::kComplex ? 2 : 1);
  data.values.resize(count);
  is.read(reinterpret_cast<char*>(data.values.data()),
          static_cast<std::streamsize>(count * sizeof(float)));
  if (!is) throw IoError(path.string() + ": truncated payload");
  return data;
}

ContainerData to_container(const Spectrogram& spec) {
  ContainerData data;
  data.kind = ContainerKind::kComplex;
  data.config = spec.config;
  data.n_samples = static_cast<std::uint64_t>(spec.n_samples);
  data.dims = {static_cast<std::uint64_t>(spec.n_channels()),
               static_cast<std::uint64_t>(spec.n_freq()),
               static_cast<std::uint64_t>(spec.n_frames())};
  data.values.reserve(2 * data.element_count());
  for (const auto& ch : spec.channels) {
    for (Index f = 0; f < ch.rows(); ++f) {
      for (Index t = 0; t < ch.cols(); ++t) {
        data.values.push_back(static_cast<float>(ch(f, t).real()));
        data.values.push_back(static_cast<float>(ch(f, t).imag()));
      }
    }
  }
  return data;
}

Spectrogram spectrogram_from_container(const ContainerData& data) {
  if (data.kind != ContainerKind::kComplex || data.dims.size() != 3 || !data.config)
    throw IoError("container does not hold a spectrogram");
  Spectrogram spec;
  spec.config = *data.config;
  spec.n_samples = static_cast<Index>(data.n_samples);
  const auto channels = static_cast<Index>(data.dims[0]);
  const auto freq = static_cast<Index>(data.dims[1]);
  const auto frames = static_cast<Index>(data.dims[2]);
  if (freq != spec.config.n_freq()) throw IoError("spectrogram bins do not match its config");
  std::size_t k = 0;
  for (Index c = 0; c < channels; ++c) {
    Eigen::MatrixXcd m(freq, frames);
    for (Index f = 0; f < freq; ++f) {
      for (Index t = 0; t < frames; ++t, k += 2) m(f, t) = Complex(data.values[k], data.values[k + 1]);
    }
    spec.channels.push_back(std::move(m));
  }
  return spec;
}

void write_spectrogram(const std::filesystem::path& path, const Spectrogram& spec) {
  write_container(path, to_container(spec));
}

Spectrogram read_spectrogram(const std::filesystem::path& path) {
  return spectrogram_from_container(read_container(path));
}

ContainerData magnitude_db(const Spectrogram& spec, double floor) {
  ContainerData data;
  data.kind = ContainerKind::kReal;
  data.config = spec.config;
  data.n_samples = static_cast<std::uint64_t>(spec.n_samples);
  data.dims = {static_cast<std::uint64_t>(spec.n_channels()),
               static_cast<std::uint64_t>(spec.n_freq()),
               static_cast<std::uint64_t>(spec.n_frames())};
  data.values.reserve(data.element_count());
  for (const auto& ch : spec.channels) {
    for (Index f = 0; f < ch.rows(); ++f) {
      for (Index t = 0; t < ch.cols(); ++t) {
        data.values.push_back(static_cast<float>(20.0 * std::log10(std::abs(ch(f, t)) + floor)));
      }
    }
  }
  return data;
}

void dump_spectrogram(const Spectrogram& spec, const std::filesystem::path& path,
                      const std::filesystem::path& csv_path) {
  const ContainerData db = magnitude_db(spec);
  write_container(path, db);
  atomic_write(
      csv_path,
      [&](std::ostream& os) {
        os << "channel,bin,frame,db\n";
        std::size_t k = 0;
        for (std::uint64_t c = 0; c < db.dims[0]; ++c)
          for (std::uint64_t f = 0; f < db.dims[1]; ++f)
            for (std::uint64_t t = 0; t < db.dims[2]; ++t, ++k)
              os << c << ',' << f << ',' << t << ',' << db.values[k] << '\n';
      },
      false);
}

}  // namespace dptbf
