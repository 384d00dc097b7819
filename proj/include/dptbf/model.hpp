// Copyright 2026 The dptbf Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Dual-path transformer beamformer.
//
// Data flow for one utterance with F bins, T frames, M mics, P pairs:
//   features [F, T, P+2] --conv--> E_mix [F, T, D]
//   covariance [F, T, 2M^2] --conv--> E_cov [F, T, D]
//   concat -> GRU over time (batch F) -> [F, T, 2D] -> split -> E'_mix, E'_cov
//   cross attention over time per bin (query E'_mix, key/value E'_cov)
//   self attention over frequency per frame
//   conv D -> 2M -> weights [F, T, M, 2]; output sum_m conj(w_m) Y_m

#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <utility>

#include "dptbf/beamformer.hpp"
#include "dptbf/features.hpp"
#include "dptbf/nn.hpp"
#include "dptbf/param_store.hpp"
#include "dptbf/stft.hpp"

namespace dptbf {

struct DptbfConfig {
  Index d_model = 128;
  Index gru_hidden = 256;  // must equal 2 * d_model
  Index n_heads = 4;
  Index n_mics = 4;
  Index n_pairs = 3;
  Index ffn_mult = 6;  // feed-forward width d_model * ffn_mult; 0 disables
  Index conv_kernel = 1;
  bool freq_attention = true;
  bool gru_skip = false;
  bool causal_mhca = false;
  bool identity_init = true;  // output bias starts as a pass-through of mic 0

  Index feature_channels() const { return n_pairs + 2; }
  Index covariance_channels() const { return 2 * n_mics * n_mics; }
  Index ffn_hidden() const { return ffn_mult * d_model; }
  void validate() const;

  /// Closed-form parameter count for this configuration.
  Index parameter_count() const;

  static DptbfConfig standard() { return {}; }
  /// Reduced variant: half width.
  static DptbfConfig less();
  /// Small variant for tests and quick overfitting runs.
  static DptbfConfig tiny();
  static DptbfConfig preset(const std::string& name);

  std::string to_json() const;
  static DptbfConfig from_json(const std::string& text);
  bool operator==(const DptbfConfig&) const = default;
};

template <typename Scalar>
struct NetworkInputs {
  ad::Tensor<Scalar> features;    // [F, T, P+2]
  ad::Tensor<Scalar> covariance;  // [F, T, 2M^2]
  ad::Tensor<Scalar> mixture;     // [F, T, M, 2]
};

template <typename Scalar>
NetworkInputs<Scalar> make_inputs(const ModelInputs& inputs, const Spectrogram& mixture);

template <typename Scalar>
NetworkInputs<Scalar> make_inputs(const Spectrogram& mixture, double doa, const ArrayGeometry& geom,
                                  const FeatureConfig& cfg = {});

template <typename Scalar>
class Dptbf {
 public:
  using Tensor = ad::Tensor<Scalar>;

  struct Output {
    Tensor enhanced;  // [F, T, 2]
    Tensor weights;   // [F, T, M, 2]
  };

  explicit Dptbf(const DptbfConfig& cfg, std::uint64_t seed = 0);
  Dptbf(const Dptbf&) = delete;
  Dptbf& operator=(const Dptbf&) = delete;
  Dptbf(Dptbf&&) noexcept = default;
  Dptbf& operator=(Dptbf&&) noexcept = default;

  const DptbfConfig& config() const { return cfg_; }
  ParamStore<Scalar>& params() { return *params_; }
  const ParamStore<Scalar>& params() const { return *params_; }
  Index parameter_count() const { return params_->parameter_count(); }

  std::pair<Tensor, Tensor> embed(const Tensor& features, const Tensor& covariance) const;
  std::pair<Tensor, Tensor> recurrent_mix(const Tensor& e_mix, const Tensor& e_cov) const;
  Tensor dual_path_attend(const Tensor& e_mix, const Tensor& e_cov) const;
  Tensor predict_weights(const Tensor& embedding) const;
  Output forward(const NetworkInputs<Scalar>& inputs) const;

  /// Writes the parameters to `path` and the configuration to `path` + ".json".
  void save(const std::filesystem::path& path) const;
  static Dptbf load(const std::filesystem::path& path);

 private:
  DptbfConfig cfg_;
  std::unique_ptr<ParamStore<Scalar>> params_;
  nn::PointwiseConv<Scalar> embed_mix_, embed_cov_, output_;
  nn::Gru<Scalar> gru_;
  nn::AttentionBlock<Scalar> mhca_, mhsa_;
};

std::filesystem::path config_sidecar(const std::filesystem::path& checkpoint);

/// Runs the network without recording gradients and returns the single-channel
/// enhanced spectrum together with the estimated filters.
template <typename Scalar>
std::pair<Spectrogram, BeamWeights> enhance(const Dptbf<Scalar>& model, const Spectrogram& mixture, double doa,
                                            const ArrayGeometry& geom, const FeatureConfig& cfg = {});

}  // namespace dptbf
