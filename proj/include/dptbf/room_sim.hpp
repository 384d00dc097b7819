// Copyright 2026 The dptbf Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Shoebox image-source simulation and synthetic multichannel mixtures.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "dptbf/common.hpp"

namespace dptbf {

struct RoomSpec {
  Eigen::Vector3d dims{5.0, 4.0, 2.5};
  double rt60 = 0.3;
  std::vector<Eigen::Vector3d> sources;
  Eigen::Matrix<double, Eigen::Dynamic, 3> mics;
  /// Total number of wall reflections per image; negative selects
  /// ceil(c * rt60 / min(dims)) capped at 30.
  int max_image_order = -1;
  double sound_speed = kSoundSpeed;
  int sample_rate = kSampleRate;

  void validate() const;
  /// Uniform wall absorption from Sabine's formula, 0.161 V / (S rt60).
  double absorption() const;
  int image_order() const;
  Eigen::Vector3d array_centroid() const;
  /// Unit vector from the first to the last microphone.
  Eigen::Vector3d array_axis() const;
  /// Angle in [0, pi] between the array axis and the direction to `source`.
  double doa(int source) const;
  /// Angle between two sources as seen from the array centroid.
  double source_separation(int a, int b) const;
};

/// Impulse response from `source` to `mic`: reflections up to the image
/// order, 1/(4 pi r) spreading, fractional delays via an 81-tap Hann-windowed sinc.
/// Reverberant responses (order > 0) pass through a 40 Hz Butterworth high-pass.
Eigen::VectorXd simulate_rir(const RoomSpec& room, int source, int mic,
                             std::optional<Index> length = std::nullopt);

struct MixtureSpec {
  double sir_db = 0.0;
  double snr_db = 10.0;
  std::uint64_t seed = 0;
  double duration = 4.0;
  double target_doa = 0.0;  // radians, filled from the room geometry
  double interference_doa = 0.0;
};

/// mixture = target_image + interference_image + noise, all M x N.
struct TrainingExample {
  Waveform mixture;
  Eigen::VectorXd target;  // reverberant target at the reference mic
  Eigen::MatrixXd target_image, interference_image, noise;  // M x N; empty when loaded from disk
  MixtureSpec mix;
  RoomSpec room;
  double gain = 1.0;  // global level applied after mixing
  std::string noise_type = "white";
};

/// Convolves dry[0] (target) and dry[1] (interference) with the room's RIRs,
/// scales interference to sir_db and `noise` (M x N) to snr_db, both against
/// the target image at channel 0. Set dry[1] or noise to zero-ratio by passing
/// +inf sir_db / snr_db to omit them.
TrainingExample render_mixture(const MixtureSpec& spec, const RoomSpec& room,
                               const std::vector<Eigen::VectorXd>& dry,
                               const Eigen::MatrixXd& noise);

enum class NoiseType { kWhite, kPink };

struct DatasetConfig {
  Eigen::Vector3d dims_min{3.0, 3.0, 1.5};
  Eigen::Vector3d dims_max{8.0, 8.0, 2.5};
  double rt60_min = 0.1, rt60_max = 0.6;
  double sir_min = -6.0, sir_max = 6.0;
  double snr_min = -5.0, snr_max = 20.0;
  double duration = 4.0;
  double min_separation_deg = 5.0;
  double wall_margin = 0.5;
  double min_source_distance = 0.5;
  int n_mics = 4;
  double mic_spacing = 0.03;
  bool anechoic = false;  // direct path only
  bool with_noise = true;
  NoiseType noise = NoiseType::kWhite;
  double normalize_rms = 0.05;  // mixture channel-0 RMS after scaling; 0 disables
  std::optional<std::filesystem::path> speech_dir;  // ingest mode
  int sample_rate = kSampleRate;

  void validate() const;
};

struct Scene {
  RoomSpec room;
  MixtureSpec mix;
};

/// Room, geometry and ratios of example `index` without rendering any audio.
Scene sample_scene(std::uint64_t seed, std::uint64_t index, const DatasetConfig& cfg);

/// Draws room, geometry, ratios and dry signals for example `index`.
TrainingExample sample_example(std::uint64_t seed, std::uint64_t index, const DatasetConfig& cfg);

/// Examples 0..n-1; each derives its RNG from (seed, index) only.
std::vector<TrainingExample> sample_dataset(std::size_t n, std::uint64_t seed,
                                            const DatasetConfig& cfg = {});

/// Amplitude-modulated, formant-filtered pulse/noise excitation with pauses
/// and a falling spectral tilt. Unit RMS.
Eigen::VectorXd synthesize_speech(Index n_samples, int sample_rate, std::mt19937_64& rng);

Eigen::MatrixXd synthesize_noise(Index channels, Index n_samples, NoiseType type,
                                 std::mt19937_64& rng);

std::mt19937_64 example_rng(std::uint64_t seed, std::uint64_t index);

/// Linear convolution truncated to the length of `signal`.
Eigen::VectorXd convolve(const Eigen::VectorXd& signal, const Eigen::VectorXd& filter);

void write_example(const std::filesystem::path& dir, const TrainingExample& ex);
TrainingExample read_example(const std::filesystem::path& dir);
/// Subdirectories holding a meta.json, in lexicographic order.
std::vector<std::filesystem::path> list_examples(const std::filesystem::path& root);

}  // namespace dptbf
