// Copyright 2026 The dptbf Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Loss, optimizer, training loop and Si-SDR evaluation.

#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dptbf/autodiff.hpp"
#include "dptbf/features.hpp"
#include "dptbf/model.hpp"
#include "dptbf/param_store.hpp"
#include "dptbf/room_sim.hpp"
#include "dptbf/stft.hpp"

namespace dptbf {

inline constexpr double kSiSdrCap = 60.0;

/// Scale-invariant SDR in dB, clamped to [-60, 60]. Throws on a zero or
/// mismatched reference; a zero estimate gives -60.
double si_sdr(const Eigen::VectorXd& est, const Eigen::VectorXd& ref);

/// Differentiable Si-SDR of est [N] against a constant ref [N], clamped to +-60.
template <typename Scalar>
ad::Tensor<Scalar> si_sdr(const ad::Tensor<Scalar>& est, const ad::Tensor<Scalar>& ref);

struct LossWeights {
  double si_sdr = 1.0;
  double mse = 1.0;
  /// Magnitudes enter the MSE as |X|^power; 1 keeps raw magnitudes.
  double mag_power = 1.0;
};

template <typename Scalar>
struct LossTerms {
  ad::Tensor<Scalar> total;
  double si_sdr_term = 0.0;  // weighted -si_sdr
  double mse_term = 0.0;     // weighted magnitude MSE
};

/// -w_s * si_sdr(est_wave, ref_wave) + w_m * mean((|est_spec| - |ref_spec|)^2).
/// Spectra are [F, T, 2], waveforms [N].
template <typename Scalar>
LossTerms<Scalar> composite_loss(const ad::Tensor<Scalar>& est_spec, const ad::Tensor<Scalar>& est_wave,
                                 const ad::Tensor<Scalar>& ref_spec, const ad::Tensor<Scalar>& ref_wave,
                                 const LossWeights& weights = {});

struct AdamConfig {
  double lr = 2e-3;
  double decay = 0.98;  // per epoch
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 10.0;
  void validate() const;
};

struct StepStats {
  double grad_norm = 0.0;  // before clipping
  double clip_scale = 1.0;
  double lr = 0.0;
  bool skipped = false;  // non-finite gradient
};

/// Scales all gradients so that their global L2 norm is at most max_norm.
/// Returns (norm before clipping, applied scale).
template <typename Scalar>
std::pair<double, double> clip_gradients(ParamStore<Scalar>& params, double max_norm);

template <typename Scalar>
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) { cfg_.validate(); }

  double learning_rate(int epoch) const;
  /// Clips, then updates every parameter with a gradient; leaves all
  /// parameters untouched when any gradient is non-finite.
  StepStats step(ParamStore<Scalar>& params, int epoch);

  long steps_taken() const { return t_; }
  long steps_skipped() const { return skipped_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  AdamConfig cfg_;
  long t_ = 0;
  long skipped_ = 0;
};

struct TrainConfig {
  AdamConfig optimizer;
  LossWeights loss;
  DptbfConfig model;
  int batch = 4;
  int epochs = 5;
  std::uint64_t seed = 0;
  double crop_seconds = 2.0;  // 0 uses whole clips
  double validation_fraction = 0.1;
  int checkpoint_every = 1;  // epochs; 0 disables intermediate checkpoints
  bool double_precision = false;
  StftConfig stft;

  void validate() const;
  /// Applies one key=value setting; throws ValidationError for unknown keys.
  void set(const std::string& key, const std::string& value);
  /// Reads "key = value" lines; '#' starts a comment.
  static TrainConfig from_file(const std::filesystem::path& path, TrainConfig base);
  static TrainConfig from_file(const std::filesystem::path& path) { return from_file(path, TrainConfig()); }
  std::string to_string() const;
};

/// Local array geometry of a simulated room: mic coordinates projected onto
/// the array axis, pairs (0, k).
ArrayGeometry array_geometry(const RoomSpec& room);

std::vector<TrainingExample> load_dataset(const std::filesystem::path& root);

struct StepLog {
  long step = 0;
  int epoch = 0;
  double loss = 0.0;
  double si_sdr_term = 0.0;
  double mse_term = 0.0;
  double grad_norm = 0.0;
  double lr = 0.0;
  bool skipped = false;
};

struct ClipScore {
  std::string name;
  double input_si_sdr = 0.0;
  double output_si_sdr = 0.0;
};

struct EvalReport {
  std::string method;
  std::vector<ClipScore> clips;
  double mean_input_si_sdr = 0.0;
  double mean_output_si_sdr = 0.0;
  Index parameter_count = 0;
  double wall_seconds = 0.0;

  double improvement() const { return mean_output_si_sdr - mean_input_si_sdr; }
  std::string to_json() const;
};

enum class EvalMethod { kDptbf, kMvdrOracle, kNone };
EvalMethod parse_eval_method(const std::string& name);
std::string to_string(EvalMethod method);

/// Si-SDR of the enhanced channel-0 estimate against each example's target.
/// `model` is required for kDptbf.
template <typename Scalar>
EvalReport evaluate(const std::vector<TrainingExample>& data, EvalMethod method, const Dptbf<Scalar>* model,
                    const StftConfig& cfg = {});

struct TrainHooks {
  std::optional<std::filesystem::path> log_csv;
  std::optional<std::filesystem::path> checkpoint;  // final weights; epoch snapshots go next to it
  std::function<void(const StepLog&)> on_step;
};

struct TrainResult {
  std::vector<StepLog> log;
  long examples_consumed = 0;
  long skipped_steps = 0;
  std::optional<EvalReport> heldout;
};

/// Minibatch training over a stream of reshuffled passes through `data`;
/// steps = ceil(epochs * |data| / batch), each consuming exactly `batch` clips.
template <typename Scalar>
TrainResult train(Dptbf<Scalar>& model, const std::vector<TrainingExample>& data,
                  const std::vector<TrainingExample>& heldout, const TrainConfig& cfg, const TrainHooks& hooks = {});

/// Loss of one clip, building the graph through features, network, beamformer
/// and the inverse STFT.
template <typename Scalar>
LossTerms<Scalar> clip_loss(const Dptbf<Scalar>& model, const Waveform& mixture, const Eigen::VectorXd& target,
                            double doa, const ArrayGeometry& geom, const StftConfig& stft, const LossWeights& weights);

}  // namespace dptbf
