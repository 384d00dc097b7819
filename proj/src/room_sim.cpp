// Copyright 2026 The dptbf Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "dptbf/room_sim.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <fstream>
#include <limits>

#include <unsupported/Eigen/FFT>

#include "dptbf/wav.hpp"
#include "json.hpp"

namespace dptbf {
namespace {

constexpr int kSincHalfTaps = 40;  // 81 taps in total
constexpr double kHighPassHz = 40.0;

bool inside(const Eigen::Vector3d& p, const Eigen::Vector3d& dims) {
  return (p.array() > 0.0).all() && (p.array() < dims.array()).all();
}

double power(const Eigen::Ref<const Eigen::RowVectorXd>& x) {
  return x.squaredNorm() / std::max<Index>(1, x.size());
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
  if (hi <= lo) return lo;
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

// Two-pole resonator y[n] = g x[n] + a1 y[n-1] + a2 y[n-2] with unit peak gain.
struct Resonator {
  double a1 = 0, a2 = 0, g = 1, y1 = 0, y2 = 0;
  void set(double freq, double bandwidth, int fs) {
    const double r = std::exp(-kPi * bandwidth / fs);
    const double theta = 2.0 * kPi * freq / fs;
    a1 = 2.0 * r * std::cos(theta);
    a2 = -r * r;
    g = (1.0 - r) * std::sqrt(1.0 - 2.0 * r * std::cos(2.0 * theta) + r * r);
  }
  double step(double x) {
    const double y = g * x + a1 * y1 + a2 * y2;
    y2 = y1;
    y1 = y;
    return y;
  }
};

nlohmann::json vec3(const Eigen::Vector3d& v) { return {v.x(), v.y(), v.z()}; }
Eigen::Vector3d vec3_from(const nlohmann::json& j) {
  return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()};
}

// Calls fn(distance, reflections) for every image of `s` seen from `r` with at
// most `order` wall reflections.
template <typename Fn>
void for_each_image(const Eigen::Vector3d& dims, const Eigen::Vector3d& s, const Eigen::Vector3d& r,
                    int order, Fn&& fn) {
  const int bound = order / 2 + 1;
  for (int qx = 0; qx <= 1; ++qx)
    for (int qy = 0; qy <= 1; ++qy)
      for (int qz = 0; qz <= 1; ++qz)
        for (int nx = -bound; nx <= bound; ++nx)
          for (int ny = -bound; ny <= bound; ++ny)
            for (int nz = -bound; nz <= bound; ++nz) {
              const int reflections = std::abs(nx - qx) + std::abs(nx) + std::abs(ny - qy) +
                                      std::abs(ny) + std::abs(nz - qz) + std::abs(nz);
              if (reflections > order) continue;
              const Eigen::Vector3d image((1 - 2 * qx) * s.x() + 2 * nx * dims.x(),
                                          (1 - 2 * qy) * s.y() + 2 * ny * dims.y(),
                                          (1 - 2 * qz) * s.z() + 2 * nz * dims.z());
              fn((image - r).norm(), reflections);
            }
}

double sabine_absorption(const Eigen::Vector3d& dims, double rt60) {
  const double surface = 2.0 * (dims.x() * dims.y() + dims.x() * dims.z() + dims.y() * dims.z());
  return 0.161 * dims.prod() / (surface * rt60);
}

// Second-order Butterworth high-pass, applied in place. Every image adds a
// positive tap, so the dense late tail otherwise piles up at DC.
void high_pass(Eigen::VectorXd& x, double cutoff, double fs) {
  const double w0 = 2.0 * kPi * cutoff / fs;
  const double alpha = std::sin(w0) / std::sqrt(2.0), cw = std::cos(w0);
  const double a0 = 1.0 + alpha;
  const double b0 = 0.5 * (1.0 + cw) / a0, b1 = -(1.0 + cw) / a0, b2 = b0;
  const double a1 = -2.0 * cw / a0, a2 = (1.0 - alpha) / a0;
  double x1 = 0, x2 = 0, y1 = 0, y2 = 0;
  for (Index i = 0; i < x.size(); ++i) {
    const double y = b0 * x[i] + b1 * x1 + b2 * x2 - a1 * y1 - a2 * y2;
    x2 = x1, x1 = x[i], y2 = y1, y1 = y;
    x[i] = y;
  }
}

}  // namespace

// ---------------------------------------------------------------- RoomSpec

void RoomSpec::validate() const {
  require((dims.array() > 0.0).all(), "room: dimensions must be positive");
  require(rt60 > 0.0, "room: rt60 must be positive");
  require(mics.rows() >= 1, "room: no microphones");
  for (const auto& s : sources) require(inside(s, dims), "room: source outside the room");
  for (Index m = 0; m < mics.rows(); ++m)
    require(inside(mics.row(m).transpose(), dims), "room: microphone outside the room");
  if (image_order() > 0)
    require(sabine_absorption(dims, rt60) <= 1.0, "room: rt60 too short for this room (Sabine absorption > 1)");
}

double RoomSpec::absorption() const {
  const double a = sabine_absorption(dims, rt60);
  if (a > 1.0) throw ValidationError("room: rt60 too short for this room (Sabine absorption > 1)");
  return std::clamp(a, 1e-9, 1.0);
}

int RoomSpec::image_order() const {
  if (max_image_order >= 0) return max_image_order;
  return std::min(30, static_cast<int>(std::ceil(sound_speed * rt60 / dims.minCoeff())));
}

Eigen::Vector3d RoomSpec::array_centroid() const { return mics.colwise().mean().transpose(); }

Eigen::Vector3d RoomSpec::array_axis() const {
  Eigen::Vector3d axis = (mics.row(mics.rows() - 1) - mics.row(0)).transpose();
  return axis.normalized();
}

double RoomSpec::doa(int source) const {
  const Eigen::Vector3d dir = (sources.at(source) - array_centroid()).normalized();
  return std::acos(std::clamp(dir.dot(array_axis()), -1.0, 1.0));
}

double RoomSpec::source_separation(int a, int b) const {
  const Eigen::Vector3d c = array_centroid();
  const Eigen::Vector3d u = (sources.at(a) - c).normalized(), v = (sources.at(b) - c).normalized();
  return std::acos(std::clamp(u.dot(v), -1.0, 1.0));
}

// --------------------------------------------------------------------- RIR

Eigen::VectorXd simulate_rir(const RoomSpec& room, int source, int mic, std::optional<Index> length) {
  room.validate();
  require(source >= 0 && source < static_cast<int>(room.sources.size()), "rir: source index out of range");
  require(mic >= 0 && mic < room.mics.rows(), "rir: mic index out of range");

  const int order = room.image_order();
  const double beta = order > 0 ? std::sqrt(1.0 - room.absorption()) : 1.0;
  const Eigen::Vector3d s = room.sources[source];
  const Eigen::Vector3d r = room.mics.row(mic).transpose();
  const double fs = room.sample_rate, c = room.sound_speed;

  const double direct = (s - r).norm() * fs / c;
  const Index n = length.value_or(std::max<Index>(
      static_cast<Index>(std::ceil(direct)) + kSincHalfTaps + 1,
      static_cast<Index>(std::ceil((room.rt60 + 0.1) * fs))));
  Eigen::VectorXd h = Eigen::VectorXd::Zero(n);

  for_each_image(room.dims, s, r, order, [&](double dist, int reflections) {
    const double delay = dist * fs / c;
    const auto center = static_cast<Index>(std::llround(delay));
    if (center - kSincHalfTaps >= n) return;
    const double gain = std::pow(beta, reflections) / (4.0 * kPi * dist);
    for (Index k = center - kSincHalfTaps; k <= center + kSincHalfTaps; ++k) {
      if (k < 0 || k >= n) continue;
      const double x = k - delay;
      const double window = 0.5 * (1.0 + std::cos(kPi * x / (kSincHalfTaps + 1)));
      const double sinc = x == 0.0 ? 1.0 : std::sin(kPi * x) / (kPi * x);
      h[k] += gain * window * sinc;
    }
  });
  if (order > 0) high_pass(h, kHighPassHz, fs);
  return h;
}

Eigen::VectorXd convolve(const Eigen::VectorXd& signal, const Eigen::VectorXd& filter) {
  const Index n = signal.size();
  Index size = 1;
  while (size < n + filter.size() - 1) size <<= 1;
  std::vector<double> a(size, 0.0), b(size, 0.0);
  std::copy(signal.data(), signal.data() + n, a.begin());
  std::copy(filter.data(), filter.data() + filter.size(), b.begin());
  Eigen::FFT<double> fft;
  std::vector<Complex> fa, fb;
  fft.fwd(fa, a);
  fft.fwd(fb, b);
  for (std::size_t i = 0; i < fa.size(); ++i) fa[i] *= fb[i];
  std::vector<double> out;
  fft.inv(out, fa);
  Eigen::VectorXd y(n);
  for (Index i = 0; i < n; ++i) y[i] = out[i];
  return y;
}

// ----------------------------------------------------------------- Mixing

TrainingExample render_mixture(const MixtureSpec& spec, const RoomSpec& room,
                               const std::vector<Eigen::VectorXd>& dry, const Eigen::MatrixXd& noise) {
  room.validate();
  require(!dry.empty() && dry.size() <= room.sources.size(),
          "render_mixture: need one dry signal per room source");
  const auto n = static_cast<Index>(std::llround(spec.duration * room.sample_rate));
  for (const auto& d : dry) require(d.size() >= n, "render_mixture: dry source shorter than duration");
  const Index m = room.mics.rows();

  auto image = [&](int src) {
    Eigen::MatrixXd img(m, n);
    const Eigen::VectorXd seg = dry[src].head(n);
    for (Index c = 0; c < m; ++c) img.row(c) = convolve(seg, simulate_rir(room, src, c)).transpose();
    return img;
  };

  TrainingExample ex;
  ex.mix = spec;
  ex.room = room;
  ex.target_image = image(0);
  const double p_target = power(ex.target_image.row(0));
  require(p_target > 0.0, "render_mixture: silent target source");

  ex.interference_image = Eigen::MatrixXd::Zero(m, n);
  if (dry.size() > 1 && std::isfinite(spec.sir_db)) {
    Eigen::MatrixXd interf = image(1);
    const double p_interf = power(interf.row(0));
    require(p_interf > 0.0, "render_mixture: silent interference source");
    ex.interference_image = interf * std::sqrt(p_target / (p_interf * std::pow(10.0, spec.sir_db / 10.0)));
  }

  ex.noise = Eigen::MatrixXd::Zero(m, n);
  if (noise.size() > 0 && std::isfinite(spec.snr_db)) {
    require(noise.rows() == m && noise.cols() >= n, "render_mixture: noise must be M x N");
    const Eigen::MatrixXd seg = noise.leftCols(n);
    const double p_noise = power(seg.row(0));
    require(p_noise > 0.0, "render_mixture: silent noise");
    ex.noise = seg * std::sqrt(p_target / (p_noise * std::pow(10.0, spec.snr_db / 10.0)));
  }

  ex.mixture.sample_rate = room.sample_rate;
  ex.mixture.samples = ex.target_image + ex.interference_image + ex.noise;
  ex.target = ex.target_image.row(0).transpose();
  if (room.sources.size() > 0) ex.mix.target_doa = room.doa(0);
  if (room.sources.size() > 1) ex.mix.interference_doa = room.doa(1);
  return ex;
}

// ----------------------------------------------------------- Dry signals

std::mt19937_64 example_rng(std::uint64_t seed, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32),
                    0x5eedu};
  return std::mt19937_64(seq);
}

Eigen::VectorXd synthesize_speech(Index n_samples, int fs, std::mt19937_64& rng) {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(n_samples);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const double speaker_f0 = uniform(rng, 90.0, 240.0);

  Index pos = static_cast<Index>(uniform(rng, 0.0, std::min(0.3, 0.1 * n_samples / fs)) * fs);
  double glottal_phase = 0.0;
  while (pos < n_samples) {
    const int syllables = std::uniform_int_distribution<int>(1, 4)(rng);
    for (int s = 0; s < syllables && pos < n_samples; ++s) {
      const auto len = static_cast<Index>(uniform(rng, 0.08, 0.25) * fs);
      const bool voiced = uniform(rng, 0.0, 1.0) < 0.8;
      const double f0_start = speaker_f0 * uniform(rng, 0.85, 1.15);
      const double f0_end = speaker_f0 * uniform(rng, 0.85, 1.15);
      Resonator formants[3];
      formants[0].set(uniform(rng, 300.0, 900.0), 90.0, fs);
      formants[1].set(uniform(rng, 900.0, 2500.0), 130.0, fs);
      formants[2].set(uniform(rng, 2300.0, 3500.0), 180.0, fs);
      Resonator fricative;
      fricative.set(uniform(rng, 3000.0, 6500.0), 1500.0, fs);
      const double amp = uniform(rng, 0.5, 1.0);
      double tilt = 0.0;
      for (Index i = 0; i < len && pos + i < n_samples; ++i) {
        const double frac = double(i) / len;
        const double env = amp * std::sin(kPi * frac);
        double y;
        if (voiced) {
          const double f0 = f0_start + (f0_end - f0_start) * frac;
          glottal_phase += f0 / fs;
          double excitation = 0.05 * gauss(rng);
          if (glottal_phase >= 1.0) {
            glottal_phase -= 1.0;
            excitation += 1.0;
          }
          tilt = excitation + 0.9 * tilt;  // falling spectral tilt
          y = formants[0].step(tilt) + 0.6 * formants[1].step(tilt) + 0.3 * formants[2].step(tilt);
        } else {
          y = fricative.step(gauss(rng)) * 0.3;
        }
        out[pos + i] = env * y;
      }
      pos += len;
    }
    pos += static_cast<Index>(uniform(rng, 0.03, 0.4) * fs);
  }
  const double rms = std::sqrt(out.squaredNorm() / std::max<Index>(1, n_samples));
  if (rms > 0.0) out /= rms;
  return out;
}

Eigen::MatrixXd synthesize_noise(Index channels, Index n_samples, NoiseType type, std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::MatrixXd out(channels, n_samples);
  for (Index c = 0; c < channels; ++c) {
    // Paul Kellet's pink filter
    double b0 = 0, b1 = 0, b2 = 0, b3 = 0, b4 = 0, b5 = 0, b6 = 0;
    for (Index i = 0; i < n_samples; ++i) {
      const double w = gauss(rng);
      if (type == NoiseType::kWhite) {
        out(c, i) = w;
        continue;
      }
      b0 = 0.99886 * b0 + w * 0.0555179;
      b1 = 0.99332 * b1 + w * 0.0750759;
      b2 = 0.96900 * b2 + w * 0.1538520;
      b3 = 0.86650 * b3 + w * 0.3104856;
      b4 = 0.55000 * b4 + w * 0.5329522;
      b5 = -0.7616 * b5 - w * 0.0168980;
      out(c, i) = b0 + b1 + b2 + b3 + b4 + b5 + b6 + w * 0.5362;
      b6 = w * 0.115926;
    }
  }
  return out;
}

// ---------------------------------------------------------------- Dataset

void DatasetConfig::validate() const {
  require((dims_min.array() > 2.0 * wall_margin).all() && (dims_max.array() >= dims_min.array()).all(),
          "dataset: room dimension range too small for the wall margin");
  require(rt60_min > 0.0 && rt60_max >= rt60_min, "dataset: bad rt60 range");
  require(sir_max >= sir_min && snr_max >= snr_min, "dataset: bad SIR/SNR range");
  require(duration > 0.0, "dataset: duration must be positive");
  require(n_mics >= 2 && mic_spacing > 0.0, "dataset: bad array");
  require(min_separation_deg >= 0.0 && min_separation_deg < 180.0, "dataset: bad separation");
}

namespace {

std::vector<std::filesystem::path> list_wavs(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> files;
  if (std::filesystem::is_directory(dir)) {
    for (const auto& e : std::filesystem::recursive_directory_iterator(dir))
      if (e.is_regular_file() && e.path().extension() == ".wav") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw ValidationError("dataset: no .wav files under " + dir.string());
  return files;
}

Eigen::VectorXd load_speech(const std::vector<std::filesystem::path>& files, Index n, int fs,
                            std::mt19937_64& rng) {
  const auto pick = std::uniform_int_distribution<std::size_t>(0, files.size() - 1)(rng);
  const Waveform w = read_wav(files[pick], fs);
  Eigen::VectorXd x(n);
  const Index len = w.length();
  const Index start = len > n ? std::uniform_int_distribution<Index>(0, len - n)(rng) : 0;
  for (Index i = 0; i < n; ++i) x[i] = w.samples(0, (start + i) % std::max<Index>(1, len));
  return x;
}

}  // namespace

namespace {

Scene draw_scene(std::mt19937_64& rng, std::uint64_t seed, const DatasetConfig& cfg) {
  const double min_sep = cfg.min_separation_deg * kPi / 180.0;

  RoomSpec room;
  room.sample_rate = cfg.sample_rate;
  for (int attempt = 0;; ++attempt) {
    if (attempt > 1000) throw std::runtime_error("dataset: could not place sources");
    for (int k = 0; k < 3; ++k) room.dims[k] = uniform(rng, cfg.dims_min[k], cfg.dims_max[k]);
    room.rt60 = uniform(rng, cfg.rt60_min, cfg.rt60_max);
    room.max_image_order = cfg.anechoic ? 0 : -1;
    if (!cfg.anechoic && sabine_absorption(room.dims, room.rt60) > 1.0) continue;
    const Eigen::Vector3d lo = Eigen::Vector3d::Constant(cfg.wall_margin);
    const Eigen::Vector3d hi = room.dims - lo;
    auto draw = [&] {
      return Eigen::Vector3d(uniform(rng, lo.x(), hi.x()), uniform(rng, lo.y(), hi.y()),
                             uniform(rng, lo.z(), hi.z()));
    };
    const Eigen::Vector3d centroid = draw();
    const double heading = uniform(rng, 0.0, 2.0 * kPi);
    const Eigen::Vector3d axis(std::cos(heading), std::sin(heading), 0.0);
    room.mics.resize(cfg.n_mics, 3);
    for (int m = 0; m < cfg.n_mics; ++m)
      room.mics.row(m) = (centroid + (m - 0.5 * (cfg.n_mics - 1)) * cfg.mic_spacing * axis).transpose();
    if (!inside(room.mics.row(0).transpose(), room.dims) ||
        !inside(room.mics.row(cfg.n_mics - 1).transpose(), room.dims))
      continue;

    bool placed = false;
    for (int tries = 0; tries < 200 && !placed; ++tries) {
      room.sources = {draw(), draw()};
      if ((room.sources[0] - centroid).norm() < cfg.min_source_distance ||
          (room.sources[1] - centroid).norm() < cfg.min_source_distance)
        continue;
      // DOA difference bounds the 3-D separation from below.
      placed = std::abs(room.doa(0) - room.doa(1)) >= min_sep && room.source_separation(0, 1) >= min_sep;
    }
    if (placed) break;
  }

  MixtureSpec mix;
  mix.seed = seed;
  mix.duration = cfg.duration;
  mix.sir_db = uniform(rng, cfg.sir_min, cfg.sir_max);
  mix.snr_db = cfg.with_noise ? uniform(rng, cfg.snr_min, cfg.snr_max)
                              : std::numeric_limits<double>::infinity();
  mix.target_doa = room.doa(0);
  mix.interference_doa = room.doa(1);
  return {room, mix};
}

}  // namespace

Scene sample_scene(std::uint64_t seed, std::uint64_t index, const DatasetConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng = example_rng(seed, index);
  return draw_scene(rng, seed, cfg);
}

TrainingExample sample_example(std::uint64_t seed, std::uint64_t index, const DatasetConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng = example_rng(seed, index);
  const auto [room, mix] = draw_scene(rng, seed, cfg);

  const auto n = static_cast<Index>(std::llround(cfg.duration * cfg.sample_rate));
  std::vector<Eigen::VectorXd> dry;
  if (cfg.speech_dir) {
    const auto files = list_wavs(*cfg.speech_dir);
    dry = {load_speech(files, n, cfg.sample_rate, rng), load_speech(files, n, cfg.sample_rate, rng)};
  } else {
    dry = {synthesize_speech(n, cfg.sample_rate, rng), synthesize_speech(n, cfg.sample_rate, rng)};
  }
  const Eigen::MatrixXd noise =
      cfg.with_noise ? synthesize_noise(cfg.n_mics, n, cfg.noise, rng) : Eigen::MatrixXd();

  TrainingExample ex = render_mixture(mix, room, dry, noise);
  ex.noise_type = cfg.noise == NoiseType::kPink ? "pink" : "white";
  if (cfg.normalize_rms > 0.0) {
    const double rms = std::sqrt(power(ex.mixture.samples.row(0)));
    if (rms > 0.0) {
      ex.gain = cfg.normalize_rms / rms;
      ex.target_image *= ex.gain;
      ex.interference_image *= ex.gain;
      ex.noise *= ex.gain;
      ex.mixture.samples = ex.target_image + ex.interference_image + ex.noise;
      ex.target = ex.target_image.row(0).transpose();
    }
  }
  return ex;
}

std::vector<TrainingExample> sample_dataset(std::size_t n, std::uint64_t seed, const DatasetConfig& cfg) {
  require(n >= 1, "dataset: n must be at least 1");
  cfg.validate();
  std::vector<TrainingExample> out(n);
  std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < n; ++i) {
    try {
      out[i] = sample_example(seed, i, cfg);
    } catch (...) {
#pragma omp critical
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  return out;
}

// --------------------------------------------------------------------- I/O

void write_example(const std::filesystem::path& dir, const TrainingExample& ex) {
  std::filesystem::create_directories(dir);
  write_wav(dir / "mixture.wav", ex.mixture);
  Waveform target;
  target.sample_rate = ex.mixture.sample_rate;
  target.samples = ex.target.transpose();
  write_wav(dir / "target.wav", target);

  nlohmann::json meta;
  meta["sir_db"] = ex.mix.sir_db;
  meta["snr_db"] = std::isfinite(ex.mix.snr_db) ? nlohmann::json(ex.mix.snr_db) : nlohmann::json(nullptr);
  meta["seed"] = ex.mix.seed;
  meta["duration"] = ex.mix.duration;
  meta["target_doa_deg"] = ex.mix.target_doa * 180.0 / kPi;
  meta["interference_doa_deg"] = ex.mix.interference_doa * 180.0 / kPi;
  meta["gain"] = ex.gain;
  meta["noise_type"] = ex.noise_type;
  meta["sample_rate"] = ex.mixture.sample_rate;
  nlohmann::json room;
  room["dims"] = vec3(ex.room.dims);
  room["rt60"] = ex.room.rt60;
  room["max_image_order"] = ex.room.image_order();
  room["absorption"] = ex.room.image_order() > 0 ? ex.room.absorption() : 1.0;
  room["sound_speed"] = ex.room.sound_speed;
  for (const auto& s : ex.room.sources) room["sources"].push_back(vec3(s));
  for (Index m = 0; m < ex.room.mics.rows(); ++m) room["mics"].push_back(vec3(ex.room.mics.row(m).transpose()));
  meta["room"] = room;
  atomic_write(dir / "meta.json", [&](std::ostream& os) { os << meta.dump(2) << '\n'; }, false);
}

TrainingExample read_example(const std::filesystem::path& dir) {
  std::ifstream is(dir / "meta.json");
  if (!is) throw IoError("missing " + (dir / "meta.json").string());
  nlohmann::json meta;
  try {
    is >> meta;
  } catch (const nlohmann::json::exception& e) {
    throw IoError((dir / "meta.json").string() + ": " + e.what());
  }
  TrainingExample ex;
  ex.mixture = read_wav(dir / "mixture.wav");
  const Waveform target = read_wav(dir / "target.wav");
  ex.target = target.samples.row(0).transpose();
  if (ex.target.size() != ex.mixture.length()) throw IoError(dir.string() + ": target/mixture length mismatch");
  ex.mix.sir_db = meta.value("sir_db", 0.0);
  ex.mix.snr_db = meta["snr_db"].is_null() ? std::numeric_limits<double>::infinity()
                                           : meta["snr_db"].get<double>();
  ex.mix.seed = meta.value("seed", std::uint64_t{0});
  ex.mix.duration = meta.value("duration", 0.0);
  ex.mix.target_doa = meta.at("target_doa_deg").get<double>() * kPi / 180.0;
  ex.mix.interference_doa = meta.value("interference_doa_deg", 0.0) * kPi / 180.0;
  ex.gain = meta.value("gain", 1.0);
  ex.noise_type = meta.value("noise_type", std::string("white"));
  if (meta.contains("room")) {
    const auto& room = meta["room"];
    ex.room.dims = vec3_from(room.at("dims"));
    ex.room.rt60 = room.at("rt60").get<double>();
    ex.room.max_image_order = room.value("max_image_order", -1);
    for (const auto& s : room.at("sources")) ex.room.sources.push_back(vec3_from(s));
    const auto& mics = room.at("mics");
    ex.room.mics.resize(static_cast<Index>(mics.size()), 3);
    for (std::size_t m = 0; m < mics.size(); ++m) ex.room.mics.row(static_cast<Index>(m)) = vec3_from(mics[m]).transpose();
  }
  return ex;
}

std::vector<std::filesystem::path> list_examples(const std::filesystem::path& root) {
  std::vector<std::filesystem::path> dirs;
  if (!std::filesystem::is_directory(root)) throw IoError("not a directory: " + root.string());
  for (const auto& e : std::filesystem::directory_iterator(root))
    if (e.is_directory() && std::filesystem::exists(e.path() / "meta.json")) dirs.push_back(e.path());
  std::sort(dirs.begin(), dirs.end());
  return dirs;
}

}  // namespace dptbf
