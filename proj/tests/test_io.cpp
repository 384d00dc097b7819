// Copyright 2026 The dptbf Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <cstring>
#include <fstream>
#include <iterator>

#include "doctest.h"
#include "dptbf/beamformer.hpp"
#include "dptbf/container.hpp"
#include "dptbf/param_store.hpp"
#include "dptbf/wav.hpp"
#include "test_util.hpp"

using namespace dptbf;
using dptbf::testing::random_spectrogram;
using dptbf::testing::temp_dir;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

template <typename V>
V at(const std::string& bytes, std::size_t offset) {
  V v;
  std::memcpy(&v, bytes.data() + offset, sizeof(V));
  return v;
}

template <typename V>
void put(std::string& out, V v) {
  out.append(reinterpret_cast<const char*>(&v), sizeof(V));
}

// Minimal 16-bit PCM writer used as an independent source of test files.
void write_pcm16(const std::filesystem::path& p, const std::vector<std::int16_t>& interleaved, int channels,
                 int rate) {
  std::string b = "RIFF";
  put<std::uint32_t>(b, std::uint32_t(36 + 2 * interleaved.size()));
  b += "WAVEfmt ";
  put<std::uint32_t>(b, 16);
  put<std::uint16_t>(b, 1);
  put<std::uint16_t>(b, std::uint16_t(channels));
  put<std::uint32_t>(b, std::uint32_t(rate));
  put<std::uint32_t>(b, std::uint32_t(rate * channels * 2));
  put<std::uint16_t>(b, std::uint16_t(channels * 2));
  put<std::uint16_t>(b, 16);
  b += "data";
  put<std::uint32_t>(b, std::uint32_t(2 * interleaved.size()));
  for (auto s : interleaved) put<std::int16_t>(b, s);
  std::ofstream(p, std::ios::binary) << b;
}

bool leftover_temp_files(const std::filesystem::path& dir) {
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.path().string().find(".tmp") != std::string::npos) return true;
  return false;
}

}  // namespace

TEST_CASE("container header layout") {
  const auto dir = temp_dir("container");
  ContainerData d;
  d.kind = ContainerKind::kReal;
  d.n_samples = 1234;
  d.dims = {2, 3};
  d.values = {1, 2, 3, 4, 5, 6.5f};
  write_container(dir / "a.bin", d);
  const std::string b = slurp(dir / "a.bin");
  REQUIRE(b.size() == 8 + 4 + 20 + 8 + 4 + 16 + 24);
  CHECK(b.substr(0, 8) == "DPTBFTF1");
  CHECK(at<std::uint32_t>(b, 8) == 1);
  for (int i = 0; i < 5; ++i) CHECK(at<std::uint32_t>(b, 12 + 4 * i) == 0);  // no STFT config
  CHECK(at<std::uint64_t>(b, 32) == 1234);
  CHECK(at<std::uint32_t>(b, 40) == 2);
  CHECK(at<std::uint64_t>(b, 44) == 2);
  CHECK(at<std::uint64_t>(b, 52) == 3);
  CHECK(at<float>(b, 60 + 20) == 6.5f);
  const ContainerData back = read_container(dir / "a.bin");
  CHECK(back.dims == d.dims);
  CHECK(back.values == d.values);
  CHECK(back.n_samples == 1234);
  CHECK_FALSE(back.config.has_value());
  CHECK_FALSE(leftover_temp_files(dir));
  std::filesystem::remove_all(dir);
}

TEST_CASE("spectrogram container round trip") {
  const auto dir = temp_dir("spec");
  std::mt19937_64 rng(1);
  Spectrogram s = random_spectrogram(3, 33, 7, rng);
  s.config = StftConfig::parse("fft=64,winlen=48,hop=16,win=rect");
  s.n_samples = 100;
  write_spectrogram(dir / "s.bin", s);
  const std::string b = slurp(dir / "s.bin");
  CHECK(at<std::uint32_t>(b, 8) == 0);
  CHECK(at<std::uint32_t>(b, 12) == 64);
  CHECK(at<std::uint32_t>(b, 16) == 48);
  CHECK(at<std::uint32_t>(b, 20) == 16);
  CHECK(at<std::uint32_t>(b, 24) == 1);
  const Spectrogram r = read_spectrogram(dir / "s.bin");
  CHECK(r.config == s.config);
  CHECK(r.n_samples == 100);
  REQUIRE(r.n_channels() == 3);
  for (int c = 0; c < 3; ++c)
    CHECK((r.channels[c] - s.channels[c]).cwiseAbs().maxCoeff() < 1e-6 * (1.0 + s.channels[c].cwiseAbs().maxCoeff()));
  // complex payload is channel, frequency, frame with re/im interleaved
  const std::size_t payload = 8 + 4 + 20 + 8 + 4 + 3 * 8;
  const std::size_t k = ((1 * 33 + 5) * 7 + 2) * 2;
  CHECK(at<float>(b, payload + 4 * k) == float(s.at(1, 5, 2).real()));
  CHECK(at<float>(b, payload + 4 * (k + 1)) == float(s.at(1, 5, 2).imag()));
  std::filesystem::remove_all(dir);
}

TEST_CASE("corrupt containers are rejected") {
  const auto dir = temp_dir("corrupt");
  std::ofstream(dir / "junk.bin") << "not a container at all";
  CHECK_THROWS_AS(read_container(dir / "junk.bin"), IoError);
  CHECK_THROWS_AS(read_container(dir / "missing.bin"), IoError);
  ContainerData d;
  d.dims = {4, 4};
  d.values.assign(16, 1.0f);
  write_container(dir / "ok.bin", d);
  const std::string b = slurp(dir / "ok.bin");
  std::ofstream(dir / "short.bin", std::ios::binary) << b.substr(0, b.size() - 5);
  CHECK_THROWS_AS(read_container(dir / "short.bin"), IoError);
  d.values.pop_back();
  CHECK_THROWS_AS(write_container(dir / "bad.bin", d), ValidationError);
  CHECK_FALSE(leftover_temp_files(dir));
  ContainerData real;
  real.dims = {1, 2, 2};
  real.values.assign(4, 0.0f);
  CHECK_THROWS_AS(spectrogram_from_container(real), IoError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("magnitude dump in dB") {
  const auto dir = temp_dir("dump");
  Spectrogram s;
  s.config = StftConfig::parse("fft=4,winlen=4,hop=2");
  Eigen::MatrixXcd a(3, 2);
  a << Complex(3, 4), Complex(0, 0), Complex(0.1, 0), Complex(0, -1), Complex(10, 0), Complex(1e-3, 0);
  s.channels = {a};
  const ContainerData db = magnitude_db(s);
  CHECK(db.dims == std::vector<std::uint64_t>{1, 3, 2});
  CHECK(db.values[0] == doctest::Approx(20 * std::log10(5.0 + 1e-5)));
  CHECK(db.values[1] == doctest::Approx(-100.0));
  CHECK(db.values[4] == doctest::Approx(20 * std::log10(10.0 + 1e-5)));
  dump_spectrogram(s, dir / "d.bin", dir / "d.csv");
  std::ifstream is(dir / "d.csv");
  std::string line;
  std::getline(is, line);
  CHECK(line == "channel,bin,frame,db");
  std::getline(is, line);
  CHECK(line.rfind("0,0,0,13.97", 0) == 0);
  int rows = 1;
  while (std::getline(is, line)) ++rows;
  CHECK(rows == 6);
  CHECK(read_container(dir / "d.bin").values == db.values);
  std::filesystem::remove_all(dir);
}

TEST_CASE("beam weights container layout") {
  BeamWeights w;
  for (int m = 0; m < 3; ++m) w.channels.push_back(Eigen::MatrixXcd::Random(4, 5));
  const ContainerData d = to_container(w);
  CHECK(d.dims == std::vector<std::uint64_t>{4, 5, 3, 2});
  const std::size_t k = ((2 * 5 + 3) * 3 + 1) * 2;
  CHECK(d.values[k] == float(w.channels[1](2, 3).real()));
  CHECK(d.values[k + 1] == float(w.channels[1](2, 3).imag()));
}

TEST_CASE("16-bit PCM wav is read with a 1/32768 scale") {
  const auto dir = temp_dir("wav16");
  write_pcm16(dir / "a.wav", {0, 16384, -32768, 32767, 1, -1}, 2, 16000);
  const Waveform w = read_wav(dir / "a.wav");
  REQUIRE(w.samples.rows() == 2);
  REQUIRE(w.samples.cols() == 3);
  CHECK(w.samples(0, 0) == 0.0);
  CHECK(w.samples(1, 0) == 0.5);
  CHECK(w.samples(0, 1) == -1.0);
  CHECK(w.samples(1, 1) == 32767.0 / 32768.0);
  CHECK(w.samples(1, 2) == -1.0 / 32768.0);
  write_pcm16(dir / "b.wav", {0, 1}, 1, 44100);
  CHECK_THROWS_AS(read_wav(dir / "b.wav"), ValidationError);
  CHECK(read_wav(dir / "b.wav", 44100).sample_rate == 44100);
  std::filesystem::remove_all(dir);
}

TEST_CASE("float wav round trip and header") {
  const auto dir = temp_dir("wavf");
  std::mt19937_64 rng(2);
  const Waveform w = dptbf::testing::random_wave(4, 1001, rng);
  write_wav(dir / "x.wav", w);
  const std::string b = slurp(dir / "x.wav");
  CHECK(b.substr(0, 4) == "RIFF");
  CHECK(b.substr(8, 4) == "WAVE");
  CHECK(at<std::uint16_t>(b, 20) == 3);
  CHECK(at<std::uint16_t>(b, 22) == 4);
  CHECK(at<std::uint32_t>(b, 24) == 16000);
  CHECK(at<std::uint16_t>(b, 34) == 32);
  const Waveform r = read_wav(dir / "x.wav");
  CHECK(r.samples.rows() == 4);
  CHECK(r.samples.cols() == 1001);
  CHECK((r.samples - w.samples).cwiseAbs().maxCoeff() < 1e-6);
  CHECK_FALSE(leftover_temp_files(dir));

  std::ofstream(dir / "junk.wav") << "RIFFxxxxWAVE";
  CHECK_THROWS_AS(read_wav(dir / "junk.wav"), IoError);
  CHECK_THROWS_AS(read_wav(dir / "none.wav"), IoError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("checkpoint byte layout and corruption handling") {
  const auto dir = temp_dir("ckpt");
  ParamStore<float> store;
  ParamStore<float>::Array v(6);
  v << 1, 2, 3, 4, 5, 6;
  store.add("layer.w", {2, 3}, v);
  store.save(dir / "c.bin");
  const std::string b = slurp(dir / "c.bin");
  CHECK(b.substr(0, 8) == "DPTBFCK1");
  CHECK(at<std::uint64_t>(b, 8) == 1);
  CHECK(at<std::uint32_t>(b, 16) == 7);
  CHECK(b.substr(20, 7) == "layer.w");
  CHECK(at<std::uint8_t>(b, 27) == 0);
  CHECK(at<std::uint32_t>(b, 28) == 2);
  CHECK(at<std::uint64_t>(b, 32) == 2);
  CHECK(at<std::uint64_t>(b, 40) == 3);
  CHECK(at<float>(b, 48 + 4 * 5) == 6.0f);
  CHECK(b.size() == 48 + 24);

  std::ofstream(dir / "t.bin", std::ios::binary) << b.substr(0, b.size() - 3);
  ParamStore<float> other;
  other.add("layer.w", {2, 3}, ParamStore<float>::Array::Zero(6));
  CHECK_THROWS_AS(other.load(dir / "t.bin"), IoError);

  ParamStore<float> fresh;
  fresh.load(dir / "c.bin");
  CHECK(fresh.get("layer.w").value().isApprox(v));

  ParamStore<float> renamed;
  renamed.add("layer.v", {2, 3}, ParamStore<float>::Array::Zero(6));
  CHECK_THROWS_AS(renamed.load(dir / "c.bin"), IoError);
  std::filesystem::remove_all(dir);
}
