// Copyright 2026 The dptbf Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "dptbf/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>

#include "dptbf/mvdr.hpp"
#include "dptbf/spectral_ops.hpp"
#include "json.hpp"

namespace dptbf {

// ------------------------------------------------------------------ Si-SDR

double si_sdr(const Eigen::VectorXd& est, const Eigen::VectorXd& ref) {
  require(est.size() == ref.size() && ref.size() > 0,
          "si_sdr: lengths differ (" + std::to_string(est.size()) + " vs " + std::to_string(ref.size()) + ")");
  require(est.allFinite() && ref.allFinite(), "si_sdr: non-finite samples");
  const double rr = ref.squaredNorm();
  require(rr > 0.0, "si_sdr: zero reference");
  const double alpha = est.dot(ref) / rr;
  const double num = alpha * alpha * rr;
  const double den = (est - alpha * ref).squaredNorm();
  if (num <= 0.0) return -kSiSdrCap;
  if (den <= 0.0) return kSiSdrCap;
  return std::clamp(10.0 * std::log10(num / den), -kSiSdrCap, kSiSdrCap);
}

template <typename Scalar>
ad::Tensor<Scalar> si_sdr(const ad::Tensor<Scalar>& est, const ad::Tensor<Scalar>& ref) {
  using Tensor = ad::Tensor<Scalar>;
  ad::check_shape(est.rank() == 1 && est.shape() == ref.shape(),
                  "si_sdr: expected equal [N] shapes, got " + ad::to_string(est.shape()) + " and " +
                      ad::to_string(ref.shape()));
  const double rr = double(ref.value().template cast<double>().square().sum());
  require(rr > 0.0, "si_sdr: zero reference");
  const Tensor alpha = ad::scale(ad::sum(ad::mul(est, ref)), Scalar(1.0 / rr));
  const Tensor proj = ad::mul(ref, alpha);
  const Tensor num = ad::sum(ad::square(proj));
  const Tensor den = ad::sum(ad::square(ad::sub(est, proj)));
  const Tensor eps = Tensor::scalar(Scalar(1e-8 * rr));
  const Tensor ratio = ad::sub(ad::log(ad::add(num, eps)), ad::log(ad::add(den, eps)));
  return ad::clamp(ad::scale(ratio, Scalar(10.0 / std::log(10.0))), Scalar(-kSiSdrCap), Scalar(kSiSdrCap));
}

template <typename Scalar>
LossTerms<Scalar> composite_loss(const ad::Tensor<Scalar>& est_spec, const ad::Tensor<Scalar>& est_wave,
                                 const ad::Tensor<Scalar>& ref_spec, const ad::Tensor<Scalar>& ref_wave,
                                 const LossWeights& weights) {
  using Tensor = ad::Tensor<Scalar>;
  require(weights.si_sdr >= 0.0 && weights.mse >= 0.0 && weights.mag_power > 0.0, "loss: invalid weights");
  ad::check_shape(est_spec.shape() == ref_spec.shape(), "loss: spectra shapes differ: " +
                                                            ad::to_string(est_spec.shape()) + " vs " +
                                                            ad::to_string(ref_spec.shape()));
  auto magnitude = [&](const Tensor& spec) {
    Tensor mag = ad::cabs(spec);
    if (weights.mag_power != 1.0)
      mag = ad::exp(ad::scale(ad::log(ad::add(mag, Tensor::scalar(Scalar(1e-8)))), Scalar(weights.mag_power)));
    return mag;
  };
  const Tensor sdr = si_sdr(est_wave, ref_wave);
  const Tensor mse = ad::mean(ad::square(ad::sub(magnitude(est_spec), magnitude(ref_spec))));
  LossTerms<Scalar> terms;
  terms.total = ad::add(ad::scale(sdr, Scalar(-weights.si_sdr)), ad::scale(mse, Scalar(weights.mse)));
  terms.si_sdr_term = -weights.si_sdr * double(sdr.item());
  terms.mse_term = weights.mse * double(mse.item());
  return terms;
}

// --------------------------------------------------------------- optimizer

void AdamConfig::validate() const {
  require(lr > 0.0, "optimizer: lr must be positive");
  require(decay > 0.0 && decay <= 1.0, "optimizer: decay must be in (0, 1]");
  require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0, "optimizer: betas must be in [0, 1)");
  require(eps > 0.0, "optimizer: eps must be positive");
  require(clip_norm > 0.0, "optimizer: clip_norm must be positive");
}

template <typename Scalar>
std::pair<double, double> clip_gradients(ParamStore<Scalar>& params, double max_norm) {
  double sq = 0.0;
  for (auto& s : params.slots()) {
    if (s.param.has_grad()) sq += s.param.grad().template cast<double>().square().sum();
  }
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm) || norm <= max_norm) return {norm, 1.0};
  const double scale = max_norm / norm;
  for (auto& s : params.slots()) {
    if (s.param.has_grad()) s.param.mutable_grad() *= Scalar(scale);
  }
  return {norm, scale};
}

template <typename Scalar>
double Adam<Scalar>::learning_rate(int epoch) const {
  return cfg_.lr * std::pow(cfg_.decay, epoch);
}

template <typename Scalar>
StepStats Adam<Scalar>::step(ParamStore<Scalar>& params, int epoch) {
  StepStats stats;
  stats.lr = learning_rate(epoch);
  const auto [norm, scale] = clip_gradients(params, cfg_.clip_norm);
  stats.grad_norm = norm;
  stats.clip_scale = scale;
  if (!std::isfinite(norm)) {
    stats.skipped = true;
    ++skipped_;
    return stats;
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, double(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, double(t_));
  const Scalar b1 = Scalar(cfg_.beta1), b2 = Scalar(cfg_.beta2);
  const Scalar step = Scalar(stats.lr / bc1), inv_bc2 = Scalar(1.0 / bc2), eps = Scalar(cfg_.eps);
  for (auto& s : params.slots()) {
    if (!s.param.has_grad()) continue;
    const auto& g = s.param.grad();
    s.m = b1 * s.m + (Scalar(1) - b1) * g;
    s.v = b2 * s.v + (Scalar(1) - b2) * g.square();
    s.param.mutable_value() -= step * s.m / ((s.v * inv_bc2).sqrt() + eps);
  }
  return stats;
}

// ------------------------------------------------------------------ config

namespace {

double to_number(const std::string& key, const std::string& value) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(value, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != value.size()) throw ValidationError("config: '" + key + "' expects a number, got '" + value + "'");
  return v;
}

long to_integer(const std::string& key, const std::string& value) {
  const double v = to_number(key, value);
  if (v != std::floor(v)) throw ValidationError("config: '" + key + "' expects an integer, got '" + value + "'");
  return static_cast<long>(v);
}

bool to_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes" || value == "on") return true;
  if (value == "false" || value == "0" || value == "no" || value == "off") return false;
  throw ValidationError("config: '" + key + "' expects true or false, got '" + value + "'");
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

void TrainConfig::validate() const {
  optimizer.validate();
  model.validate();
  stft.validate();
  require(batch >= 1, "train: batch must be at least 1");
  require(epochs >= 1, "train: epochs must be at least 1");
  require(crop_seconds >= 0.0, "train: crop_seconds must be non-negative");
  require(validation_fraction >= 0.0 && validation_fraction < 1.0, "train: validation_fraction must be in [0, 1)");
  require(checkpoint_every >= 0, "train: checkpoint_every must be non-negative");
  require(loss.si_sdr >= 0.0 && loss.mse >= 0.0 && loss.mag_power > 0.0, "train: loss weights must be non-negative");
}

void TrainConfig::set(const std::string& key, const std::string& value) {
  if (key == "lr") optimizer.lr = to_number(key, value);
  else if (key == "decay") optimizer.decay = to_number(key, value);
  else if (key == "beta1") optimizer.beta1 = to_number(key, value);
  else if (key == "beta2") optimizer.beta2 = to_number(key, value);
  else if (key == "eps") optimizer.eps = to_number(key, value);
  else if (key == "clip_norm") optimizer.clip_norm = to_number(key, value);
  else if (key == "si_sdr_weight") loss.si_sdr = to_number(key, value);
  else if (key == "mse_weight") loss.mse = to_number(key, value);
  else if (key == "mag_power") loss.mag_power = to_number(key, value);
  else if (key == "batch") batch = static_cast<int>(to_integer(key, value));
  else if (key == "epochs") epochs = static_cast<int>(to_integer(key, value));
  else if (key == "seed") seed = static_cast<std::uint64_t>(to_integer(key, value));
  else if (key == "crop_seconds") crop_seconds = to_number(key, value);
  else if (key == "validation_fraction") validation_fraction = to_number(key, value);
  else if (key == "checkpoint_every") checkpoint_every = static_cast<int>(to_integer(key, value));
  else if (key == "double_precision") double_precision = to_bool(key, value);
  else if (key == "stft") stft = StftConfig::parse(value);
  else if (key == "model") model = DptbfConfig::preset(value);
  else if (key == "d_model") {
    model.d_model = to_integer(key, value);
    model.gru_hidden = 2 * model.d_model;
  } else if (key == "gru_hidden") model.gru_hidden = to_integer(key, value);
  else if (key == "n_heads") model.n_heads = to_integer(key, value);
  else if (key == "ffn_mult") model.ffn_mult = to_integer(key, value);
  else if (key == "conv_kernel") model.conv_kernel = to_integer(key, value);
  else if (key == "freq_attention") model.freq_attention = to_bool(key, value);
  else if (key == "gru_skip") model.gru_skip = to_bool(key, value);
  else if (key == "causal_mhca") model.causal_mhca = to_bool(key, value);
  else if (key == "identity_init") model.identity_init = to_bool(key, value);
  else throw ValidationError("config: unknown key '" + key + "'");
}

TrainConfig TrainConfig::from_file(const std::filesystem::path& path, TrainConfig base) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config " + path.string());
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty() || line.front() == '[') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": expected key = value");
    std::string value = trim(line.substr(eq + 1));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
    base.set(trim(line.substr(0, eq)), value);
  }
  return base;
}

std::string TrainConfig::to_string() const {
  std::ostringstream os;
  os << std::setprecision(10) << "lr=" << optimizer.lr << " decay=" << optimizer.decay
     << " clip_norm=" << optimizer.clip_norm << " beta1=" << optimizer.beta1 << " beta2=" << optimizer.beta2
     << " eps=" << optimizer.eps << " batch=" << batch << " epochs=" << epochs << " seed=" << seed
     << " crop_seconds=" << crop_seconds << " validation_fraction=" << validation_fraction
     << " checkpoint_every=" << checkpoint_every << " double_precision=" << (double_precision ? "true" : "false")
     << " si_sdr_weight=" << loss.si_sdr << " mse_weight=" << loss.mse << " mag_power=" << loss.mag_power
     << " stft=" << stft.to_string() << " d_model=" << model.d_model << " gru_hidden=" << model.gru_hidden
     << " n_heads=" << model.n_heads << " ffn_mult=" << model.ffn_mult << " conv_kernel=" << model.conv_kernel
     << " freq_attention=" << model.freq_attention << " gru_skip=" << model.gru_skip
     << " causal_mhca=" << model.causal_mhca << " identity_init=" << model.identity_init;
  return os.str();
}

// ------------------------------------------------------------------- data

ArrayGeometry array_geometry(const RoomSpec& room) {
  const Index M = room.mics.rows();
  require(M >= 2, "geometry: need at least two microphones");
  const Eigen::Vector3d c = room.array_centroid();
  const Eigen::Vector3d axis = room.array_axis().normalized();
  ArrayGeometry g;
  g.sound_speed = room.sound_speed;
  g.mic_positions = Eigen::Matrix<double, Eigen::Dynamic, 3>::Zero(M, 3);
  for (Index m = 0; m < M; ++m) g.mic_positions(m, 0) = (room.mics.row(m).transpose() - c).dot(axis);
  for (int k = 1; k < M; ++k) g.pairs.emplace_back(0, k);
  g.validate();
  return g;
}

std::vector<TrainingExample> load_dataset(const std::filesystem::path& root) {
  const auto dirs = list_examples(root);
  if (dirs.empty()) throw ValidationError("no examples (directories with meta.json) under " + root.string());
  std::vector<TrainingExample> out;
  out.reserve(dirs.size());
  for (const auto& d : dirs) out.push_back(read_example(d));
  const Index n = out.front().mixture.length(), m = out.front().mixture.channels();
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (out[i].mixture.channels() != m)
      throw ValidationError(dirs[i].string() + ": " + std::to_string(out[i].mixture.channels()) +
                            " channels, expected " + std::to_string(m));
    if (out[i].target.size() != out[i].mixture.length())
      throw ValidationError(dirs[i].string() + ": target and mixture lengths differ");
  }
  (void)n;
  return out;
}

// -------------------------------------------------------------- evaluation

EvalMethod parse_eval_method(const std::string& name) {
  if (name == "dptbf") return EvalMethod::kDptbf;
  if (name == "mvdr-oracle") return EvalMethod::kMvdrOracle;
  if (name == "none") return EvalMethod::kNone;
  throw ValidationError("unknown method '" + name + "' (expected dptbf, mvdr-oracle or none)");
}

std::string to_string(EvalMethod method) {
  switch (method) {
    case EvalMethod::kDptbf: return "dptbf";
    case EvalMethod::kMvdrOracle: return "mvdr-oracle";
    case EvalMethod::kNone: return "none";
  }
  return "none";
}

std::string EvalReport::to_json() const {
  nlohmann::json j;
  j["method"] = method;
  j["parameter_count"] = parameter_count;
  j["mean_input_si_sdr"] = mean_input_si_sdr;
  j["mean_output_si_sdr"] = mean_output_si_sdr;
  j["mean_improvement"] = improvement();
  j["wall_seconds"] = wall_seconds;
  j["clips"] = nlohmann::json::array();
  for (const auto& c : clips)
    j["clips"].push_back({{"name", c.name}, {"input_si_sdr", c.input_si_sdr}, {"output_si_sdr", c.output_si_sdr}});
  return j.dump(2);
}

template <typename Scalar>
EvalReport evaluate(const std::vector<TrainingExample>& data, EvalMethod method, const Dptbf<Scalar>* model,
                    const StftConfig& cfg) {
  require(!data.empty(), "eval: empty dataset");
  require(method != EvalMethod::kDptbf || model != nullptr, "eval: method dptbf needs a model");
  const auto start = std::chrono::steady_clock::now();
  EvalReport report;
  report.method = to_string(method);
  report.parameter_count = model ? model->parameter_count() : 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& ex = data[i];
    const Index n = ex.mixture.length();
    const Eigen::VectorXd mix0 = ex.mixture.samples.row(0).transpose();
    Eigen::VectorXd est;
    if (method == EvalMethod::kNone) {
      est = mix0;
    } else {
      const Spectrogram y = stft(pad_for_processing(ex.mixture, cfg), cfg);
      Spectrogram x;
      if (method == EvalMethod::kMvdrOracle) {
        Waveform t;
        t.sample_rate = ex.mixture.sample_rate;
        t.samples = ex.target.transpose();
        x = mvdr_oracle_enhance(y, stft(pad_for_processing(t, cfg), cfg));
      } else {
        x = enhance(*model, y, ex.mix.target_doa, array_geometry(ex.room)).first;
      }
      est = istft(x, n).samples.row(0).transpose();
    }
    report.clips.push_back({std::to_string(i), si_sdr(mix0, ex.target), si_sdr(est, ex.target)});
  }
  for (const auto& c : report.clips) {
    report.mean_input_si_sdr += c.input_si_sdr / double(report.clips.size());
    report.mean_output_si_sdr += c.output_si_sdr / double(report.clips.size());
  }
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

// ---------------------------------------------------------------- training

template <typename Scalar>
LossTerms<Scalar> clip_loss(const Dptbf<Scalar>& model, const Waveform& mixture, const Eigen::VectorXd& target,
                            double doa, const ArrayGeometry& geom, const StftConfig& cfg, const LossWeights& weights) {
  using Tensor = ad::Tensor<Scalar>;
  const Index n = mixture.length();
  require(target.size() == n, "train: target and mixture lengths differ");
  const Spectrogram y = stft(pad_for_processing(mixture, cfg), cfg);
  const auto out = model.forward(make_inputs<Scalar>(y, doa, geom));
  const Tensor est_wave = istft(out.enhanced, cfg, n);

  Waveform t;
  t.sample_rate = mixture.sample_rate;
  t.samples = target.transpose();
  const Tensor ref_spec_4d = spectrogram_tensor<Scalar>(stft(pad_for_processing(t, cfg), cfg));
  const Tensor ref_spec = ad::reshape(ref_spec_4d, {ref_spec_4d.dim(0), ref_spec_4d.dim(1), 2});
  const Tensor ref_wave = Tensor::from({n}, target.cast<Scalar>().array());
  return composite_loss(out.enhanced, est_wave, ref_spec, ref_wave, weights);
}

namespace {

std::string csv_row(const StepLog& s) {
  std::ostringstream os;
  os << std::setprecision(9) << s.step << ',' << s.loss << ',' << s.si_sdr_term << ',' << s.mse_term << ','
     << s.grad_norm << ',' << s.lr << '\n';
  return os.str();
}

}  // namespace

template <typename Scalar>
TrainResult train(Dptbf<Scalar>& model, const std::vector<TrainingExample>& data,
                  const std::vector<TrainingExample>& heldout, const TrainConfig& cfg, const TrainHooks& hooks) {
  cfg.validate();
  require(!data.empty(), "train: empty dataset");
  const Index channels = model.config().n_mics;
  std::vector<ArrayGeometry> geoms;
  for (const auto& ex : data) {
    require(ex.mixture.channels() == channels, "train: example has " + std::to_string(ex.mixture.channels()) +
                                                   " channels, model expects " + std::to_string(channels));
    require(ex.target.size() == ex.mixture.length(), "train: target and mixture lengths differ");
    geoms.push_back(array_geometry(ex.room));
  }

  Adam<Scalar> adam(cfg.optimizer);
  std::mt19937_64 rng(cfg.seed);
  const long n_data = static_cast<long>(data.size());
  const long total = static_cast<long>(cfg.epochs) * n_data;
  const long steps = (total + cfg.batch - 1) / cfg.batch;
  std::vector<std::size_t> order(data.size());
  std::size_t cursor = order.size();

  TrainResult result;
  std::string csv = "step,loss,si_sdr_term,mse_term,grad_norm,lr\n";
  auto flush_log = [&] {
    if (hooks.log_csv) atomic_write(*hooks.log_csv, [&](std::ostream& os) { os << csv; }, false);
  };
  const int sample_rate = data.front().mixture.sample_rate;
  const Index crop = static_cast<Index>(std::llround(cfg.crop_seconds * sample_rate));

  for (long step = 1; step <= steps; ++step) {
    const int epoch = static_cast<int>(result.examples_consumed / n_data);
    model.params().zero_grad();
    StepLog log;
    log.step = step;
    log.epoch = epoch;
    bool finite = true;
    for (int b = 0; b < cfg.batch; ++b) {
      if (cursor == order.size()) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      const std::size_t idx = order[cursor++];
      const auto& ex = data[idx];
      Waveform mix = ex.mixture;
      Eigen::VectorXd target = ex.target;
      if (crop > 0 && ex.mixture.length() > crop) {
        std::uniform_int_distribution<Index> pick(0, ex.mixture.length() - crop);
        const Index s = pick(rng);
        mix.samples = ex.mixture.samples.middleCols(s, crop);
        target = ex.target.segment(s, crop);
      }
      const auto terms = clip_loss(model, mix, target, ex.mix.target_doa, geoms[idx], cfg.stft, cfg.loss);
      ++result.examples_consumed;
      const double value = double(terms.total.item());
      if (!std::isfinite(value)) {
        finite = false;
        continue;
      }
      ad::scale(terms.total, Scalar(1.0 / cfg.batch)).backward();
      log.loss += value / cfg.batch;
      log.si_sdr_term += terms.si_sdr_term / cfg.batch;
      log.mse_term += terms.mse_term / cfg.batch;
    }
    if (finite) {
      const StepStats stats = adam.step(model.params(), epoch);
      log.grad_norm = stats.grad_norm;
      log.lr = stats.lr;
      log.skipped = stats.skipped;
    } else {
      log.lr = adam.learning_rate(epoch);
      log.skipped = true;
    }
    if (log.skipped) ++result.skipped_steps;
    model.params().zero_grad();
    result.log.push_back(log);
    csv += csv_row(log);
    if (hooks.on_step) hooks.on_step(log);

    const int next_epoch = static_cast<int>(result.examples_consumed / n_data);
    if (next_epoch > epoch) {
      flush_log();
      if (hooks.checkpoint && cfg.checkpoint_every > 0 && next_epoch % cfg.checkpoint_every == 0 && step < steps)
        model.save(hooks.checkpoint->string() + ".epoch" + std::to_string(next_epoch));
    }
  }
  flush_log();
  if (hooks.checkpoint) model.save(*hooks.checkpoint);
  if (!heldout.empty()) result.heldout = evaluate(heldout, EvalMethod::kDptbf, &model, cfg.stft);
  return result;
}

#define DPTBF_INSTANTIATE(S)                                                                                       \
  template ad::Tensor<S> si_sdr<S>(const ad::Tensor<S>&, const ad::Tensor<S>&);                                   \
  template LossTerms<S> composite_loss<S>(const ad::Tensor<S>&, const ad::Tensor<S>&, const ad::Tensor<S>&,       \
                                          const ad::Tensor<S>&, const LossWeights&);                              \
  template std::pair<double, double> clip_gradients<S>(ParamStore<S>&, double);                                   \
  template class Adam<S>;                                                                                         \
  template EvalReport evaluate<S>(const std::vector<TrainingExample>&, EvalMethod, const Dptbf<S>*,              \
                                  const StftConfig&);                                                             \
  template LossTerms<S> clip_loss<S>(const Dptbf<S>&, const Waveform&, const Eigen::VectorXd&, double,            \
                                     const ArrayGeometry&, const StftConfig&, const LossWeights&);                \
  template TrainResult train<S>(Dptbf<S>&, const std::vector<TrainingExample>&,                                   \
                                const std::vector<TrainingExample>&, const TrainConfig&, const TrainHooks&);

DPTBF_INSTANTIATE(float)
DPTBF_INSTANTIATE(double)
#undef DPTBF_INSTANTIATE

}  // namespace dptbf
