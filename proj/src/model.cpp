// Copyright 2026 The dptbf Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "dptbf/model.hpp"

#include <fstream>
#include <random>
#include <sstream>

#include "json.hpp"

#include "dptbf/spectral_ops.hpp"

namespace dptbf {

// ----------------------------------------------------------------- config

void DptbfConfig::validate() const {
  require(d_model > 0 && n_heads > 0, "model: d_model and n_heads must be positive");
  require(d_model % n_heads == 0, "model: d_model " + std::to_string(d_model) + " is not divisible by n_heads " +
                                      std::to_string(n_heads));
  require(gru_hidden == 2 * d_model, "model: gru_hidden must equal 2 * d_model");
  require(n_mics >= 2 && n_pairs >= 1, "model: need at least two microphones and one pair");
  require(ffn_mult >= 0, "model: ffn_mult must be non-negative");
  require(conv_kernel >= 1 && conv_kernel % 2 == 1, "model: conv_kernel must be odd");
}

Index DptbfConfig::parameter_count() const {
  using C = nn::PointwiseConv<float>;
  using A = nn::AttentionBlock<float>;
  Index n = C::parameter_count(feature_channels(), d_model, conv_kernel) +
            C::parameter_count(covariance_channels(), d_model, conv_kernel) +
            nn::Gru<float>::parameter_count(2 * d_model, gru_hidden) + A::parameter_count(d_model, true, ffn_hidden()) +
            C::parameter_count(d_model, 2 * n_mics);
  if (freq_attention) n += A::parameter_count(d_model, false, ffn_hidden());
  return n;
}

DptbfConfig DptbfConfig::less() {
  DptbfConfig c;
  c.d_model = 64;
  c.gru_hidden = 128;
  return c;
}

DptbfConfig DptbfConfig::tiny() {
  DptbfConfig c;
  c.d_model = 32;
  c.gru_hidden = 64;
  c.n_heads = 2;
  return c;
}

DptbfConfig DptbfConfig::preset(const std::string& name) {
  if (name == "default" || name == "standard") return standard();
  if (name == "less") return less();
  if (name == "tiny") return tiny();
  throw ValidationError("unknown model preset '" + name + "' (expected default, less or tiny)");
}

std::string DptbfConfig::to_json() const {
  nlohmann::json j = {{"d_model", d_model},           {"gru_hidden", gru_hidden},
                      {"n_heads", n_heads},           {"n_mics", n_mics},
                      {"n_pairs", n_pairs},           {"ffn_mult", ffn_mult},
                      {"conv_kernel", conv_kernel},   {"freq_attention", freq_attention},
                      {"gru_skip", gru_skip},         {"causal_mhca", causal_mhca},
                      {"identity_init", identity_init}};
  return j.dump(2);
}

DptbfConfig DptbfConfig::from_json(const std::string& text) {
  DptbfConfig c;
  try {
    const auto j = nlohmann::json::parse(text);
    c.d_model = j.value("d_model", c.d_model);
    c.gru_hidden = j.value("gru_hidden", 2 * c.d_model);
    c.n_heads = j.value("n_heads", c.n_heads);
    c.n_mics = j.value("n_mics", c.n_mics);
    c.n_pairs = j.value("n_pairs", c.n_pairs);
    c.ffn_mult = j.value("ffn_mult", c.ffn_mult);
    c.conv_kernel = j.value("conv_kernel", c.conv_kernel);
    c.freq_attention = j.value("freq_attention", c.freq_attention);
    c.gru_skip = j.value("gru_skip", c.gru_skip);
    c.causal_mhca = j.value("causal_mhca", c.causal_mhca);
    c.identity_init = j.value("identity_init", c.identity_init);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

// ----------------------------------------------------------------- inputs

template <typename Scalar>
NetworkInputs<Scalar> make_inputs(const ModelInputs& inputs, const Spectrogram& mixture) {
  using Tensor = ad::Tensor<Scalar>;
  const auto& feats = inputs.features;
  const auto& cov = inputs.covariance;
  const Index F = feats.n_freq(), T = feats.n_frames(), C = feats.n_channels();
  require(cov.n_freq == F && cov.n_frames == T, "inputs: feature and covariance grids differ");
  require(mixture.n_freq() == F && mixture.n_frames() == T, "inputs: mixture grid differs from features");

  typename Tensor::Array fv(F * T * C);
  Index k = 0;
  for (Index f = 0; f < F; ++f)
    for (Index t = 0; t < T; ++t)
      for (Index c = 0; c < C; ++c) fv[k++] = static_cast<Scalar>(feats.channels[c](f, t));

  const Index width = 2 * cov.n_mics * cov.n_mics;
  typename Tensor::Array cv(static_cast<Index>(cov.data.size()));
  for (Index i = 0; i < cv.size(); ++i) cv[i] = static_cast<Scalar>(cov.data[i]);

  return {Tensor::from({F, T, C}, std::move(fv)), Tensor::from({F, T, width}, std::move(cv)),
          spectrogram_tensor<Scalar>(mixture)};
}

template <typename Scalar>
NetworkInputs<Scalar> make_inputs(const Spectrogram& mixture, double doa, const ArrayGeometry& geom,
                                  const FeatureConfig& cfg) {
  return make_inputs<Scalar>(assemble_inputs(mixture, doa, geom, cfg), mixture);
}

// ------------------------------------------------------------------ model

template <typename Scalar>
Dptbf<Scalar>::Dptbf(const DptbfConfig& cfg, std::uint64_t seed)
    : cfg_(cfg), params_(std::make_unique<ParamStore<Scalar>>()) {
  cfg_.validate();
  std::mt19937_64 rng(seed);
  auto& store = *params_;
  const Index D = cfg_.d_model;
  embed_mix_ = nn::PointwiseConv<Scalar>(store, "dptbf.embed_mix", cfg_.feature_channels(), D, rng, cfg_.conv_kernel);
  embed_cov_ =
      nn::PointwiseConv<Scalar>(store, "dptbf.embed_cov", cfg_.covariance_channels(), D, rng, cfg_.conv_kernel);
  gru_ = nn::Gru<Scalar>(store, "dptbf.gru", 2 * D, cfg_.gru_hidden, rng);
  mhca_ = nn::AttentionBlock<Scalar>(store, "dptbf.mhca", D, cfg_.n_heads, true, cfg_.ffn_hidden(), rng);
  if (cfg_.freq_attention)
    mhsa_ = nn::AttentionBlock<Scalar>(store, "dptbf.mhsa", D, cfg_.n_heads, false, cfg_.ffn_hidden(), rng);
  output_ = nn::PointwiseConv<Scalar>(store, "dptbf.output", D, 2 * cfg_.n_mics, rng);
  if (cfg_.identity_init) store.slot("dptbf.output.bias").param.mutable_value()[0] = Scalar(1);
}

template <typename Scalar>
std::pair<ad::Tensor<Scalar>, ad::Tensor<Scalar>> Dptbf<Scalar>::embed(const Tensor& features,
                                                                       const Tensor& covariance) const {
  ad::check_shape(features.rank() == 3 && features.dim(2) == cfg_.feature_channels(),
                  "model: features must be [F, T, " + std::to_string(cfg_.feature_channels()) + "], got " +
                      ad::to_string(features.shape()));
  ad::check_shape(covariance.rank() == 3 && covariance.dim(2) == cfg_.covariance_channels(),
                  "model: covariance must be [F, T, " + std::to_string(cfg_.covariance_channels()) + "], got " +
                      ad::to_string(covariance.shape()));
  ad::check_shape(features.dim(0) == covariance.dim(0) && features.dim(1) == covariance.dim(1),
                  "model: feature and covariance grids differ");
  return {embed_mix_.forward(features), embed_cov_.forward(covariance)};
}

template <typename Scalar>
std::pair<ad::Tensor<Scalar>, ad::Tensor<Scalar>> Dptbf<Scalar>::recurrent_mix(const Tensor& e_mix,
                                                                               const Tensor& e_cov) const {
  const Tensor joint = ad::concat<Scalar>({e_mix, e_cov}, -1);  // [F, T, 2D]
  Tensor hidden = gru_.forward(joint);
  if (cfg_.gru_skip) hidden = ad::add(hidden, joint);
  const Index D = cfg_.d_model;
  return {ad::slice(hidden, -1, 0, D), ad::slice(hidden, -1, D, D)};
}

template <typename Scalar>
ad::Tensor<Scalar> Dptbf<Scalar>::dual_path_attend(const Tensor& e_mix, const Tensor& e_cov) const {
  std::optional<Tensor> mask;
  if (cfg_.causal_mhca) {
    const Index T = e_mix.dim(1);
    typename Tensor::Array m = Tensor::Array::Zero(T * T);
    for (Index i = 0; i < T; ++i)
      for (Index j = i + 1; j < T; ++j) m[i * T + j] = Scalar(-1e9);
    mask = Tensor::from({T, T}, std::move(m));
  }
  // time path: batch over frequency
  Tensor x = mhca_.forward(e_mix, e_cov, mask ? &*mask : nullptr);
  if (!cfg_.freq_attention) return x;
  // frequency path: batch over frames
  x = mhsa_.forward(ad::permute(x, {1, 0, 2}));
  return ad::permute(x, {1, 0, 2});
}

template <typename Scalar>
ad::Tensor<Scalar> Dptbf<Scalar>::predict_weights(const Tensor& embedding) const {
  const Tensor w = output_.forward(embedding);  // [F, T, 2M]
  return ad::reshape(w, {w.dim(0), w.dim(1), cfg_.n_mics, 2});
}

template <typename Scalar>
typename Dptbf<Scalar>::Output Dptbf<Scalar>::forward(const NetworkInputs<Scalar>& inputs) const {
  ad::check_shape(inputs.mixture.rank() == 4 && inputs.mixture.dim(2) == cfg_.n_mics,
                  "model: mixture must be [F, T, " + std::to_string(cfg_.n_mics) + ", 2]");
  auto [e_mix, e_cov] = embed(inputs.features, inputs.covariance);
  auto [r_mix, r_cov] = recurrent_mix(e_mix, e_cov);
  const Tensor weights = predict_weights(dual_path_attend(r_mix, r_cov));
  return {apply_beamformer(weights, inputs.mixture), weights};
}

std::filesystem::path config_sidecar(const std::filesystem::path& checkpoint) {
  return checkpoint.string() + ".json";
}

template <typename Scalar>
void Dptbf<Scalar>::save(const std::filesystem::path& path) const {
  params_->save(path);
  atomic_write(config_sidecar(path), [&](std::ostream& os) { os << cfg_.to_json() << '\n'; }, false);
}

template <typename Scalar>
Dptbf<Scalar> Dptbf<Scalar>::load(const std::filesystem::path& path) {
  std::ifstream is(config_sidecar(path));
  if (!is) throw IoError("missing model config " + config_sidecar(path).string());
  std::stringstream ss;
  ss << is.rdbuf();
  Dptbf model(DptbfConfig::from_json(ss.str()));
  model.params_->load(path);
  return model;
}

template <typename Scalar>
std::pair<Spectrogram, BeamWeights> enhance(const Dptbf<Scalar>& model, const Spectrogram& mixture, double doa,
                                            const ArrayGeometry& geom, const FeatureConfig& cfg) {
  require(mixture.n_channels() == model.config().n_mics,
          "enhance: model expects " + std::to_string(model.config().n_mics) + " channels, input has " +
              std::to_string(mixture.n_channels()));
  ad::NoGradGuard no_grad;
  const auto out = model.forward(make_inputs<Scalar>(mixture, doa, geom, cfg));
  return {tensor_spectrogram(out.enhanced, mixture.config, mixture.n_samples), weights_from_tensor(out.weights)};
}

template struct NetworkInputs<float>;
template struct NetworkInputs<double>;
template NetworkInputs<float> make_inputs<float>(const ModelInputs&, const Spectrogram&);
template NetworkInputs<double> make_inputs<double>(const ModelInputs&, const Spectrogram&);
template NetworkInputs<float> make_inputs<float>(const Spectrogram&, double, const ArrayGeometry&, const FeatureConfig&);
template NetworkInputs<double> make_inputs<double>(const Spectrogram&, double, const ArrayGeometry&,
                                                   const FeatureConfig&);
template class Dptbf<float>;
template class Dptbf<double>;
template std::pair<Spectrogram, BeamWeights> enhance<float>(const Dptbf<float>&, const Spectrogram&, double,
                                                            const ArrayGeometry&, const FeatureConfig&);
template std::pair<Spectrogram, BeamWeights> enhance<double>(const Dptbf<double>&, const Spectrogram&, double,
                                                             const ArrayGeometry&, const FeatureConfig&);

}  // namespace dptbf
