// Copyright 2026 The dptbf Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Command-line front end: simulate, features, train, enhance, eval, gradcheck.
// Exit codes: 0 success, 1 usage, 2 validation, 3 runtime.

#include <Eigen/Core>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "CLI11.hpp"
#include "dptbf/container.hpp"
#include "dptbf/features.hpp"
#include "dptbf/gradcheck_suite.hpp"
#include "dptbf/model.hpp"
#include "dptbf/room_sim.hpp"
#include "dptbf/spectral_ops.hpp"
#include "dptbf/stft.hpp"
#include "dptbf/train.hpp"
#include "dptbf/wav.hpp"

namespace fs = std::filesystem;
using namespace dptbf;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitValidation = 2;
constexpr int kExitRuntime = 3;

double deg2rad(double d) { return d * kPi / 180.0; }

/// "a:b" or a single value "a".
std::pair<double, double> parse_range(const std::string& name, const std::string& text) {
  try {
    const auto colon = text.find(':');
    if (colon == std::string::npos) {
      const double v = std::stod(text);
      return {v, v};
    }
    return {std::stod(text.substr(0, colon)), std::stod(text.substr(colon + 1))};
  } catch (const std::exception&) {
    throw ValidationError("--" + name + ": expected a value or lo:hi range, got '" + text + "'");
  }
}

void log_config(const std::string& command, const std::vector<std::pair<std::string, std::string>>& items) {
  std::cerr << "[" << command << "] config:";
  for (const auto& [k, v] : items) std::cerr << ' ' << k << '=' << v;
  std::cerr << '\n';
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

struct Globals {
  int threads = 0;
  std::string stft = "fft=512,hop=256,win=hann";
  StftConfig stft_config() const {
    StftConfig cfg = StftConfig::parse(stft);
    cfg.validate();
    return cfg;
  }
};

// ---------------------------------------------------------------- simulate

struct SimulateArgs {
  std::size_t n = 8;
  std::uint64_t seed = 0;
  std::string out;
  std::string rt60 = "0.1:0.6", sir = "-6:6", snr = "-5:20", noise = "white";
  double duration = 4.0;
  bool anechoic = false;
  std::string speech_dir;
};

int run_simulate(const SimulateArgs& a) {
  DatasetConfig cfg;
  std::tie(cfg.rt60_min, cfg.rt60_max) = parse_range("rt60", a.rt60);
  std::tie(cfg.sir_min, cfg.sir_max) = parse_range("sir", a.sir);
  if (a.snr == "none") {
    cfg.with_noise = false;
  } else {
    std::tie(cfg.snr_min, cfg.snr_max) = parse_range("snr", a.snr);
  }
  if (a.noise == "pink") cfg.noise = NoiseType::kPink;
  else if (a.noise != "white") throw ValidationError("--noise: expected white or pink");
  cfg.duration = a.duration;
  cfg.anechoic = a.anechoic;
  if (!a.speech_dir.empty()) cfg.speech_dir = a.speech_dir;
  cfg.validate();
  log_config("simulate", {{"n", std::to_string(a.n)},
                          {"seed", std::to_string(a.seed)},
                          {"out", a.out},
                          {"rt60", fmt(cfg.rt60_min) + ":" + fmt(cfg.rt60_max)},
                          {"sir", fmt(cfg.sir_min) + ":" + fmt(cfg.sir_max)},
                          {"snr", cfg.with_noise ? fmt(cfg.snr_min) + ":" + fmt(cfg.snr_max) : "none"},
                          {"noise", a.noise},
                          {"duration", fmt(cfg.duration)},
                          {"anechoic", a.anechoic ? "true" : "false"},
                          {"speech_dir", a.speech_dir.empty() ? "synthetic" : a.speech_dir}});
  const auto examples = sample_dataset(a.n, a.seed, cfg);
  for (std::size_t i = 0; i < examples.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "ex_%05zu", i);
    write_example(fs::path(a.out) / name, examples[i]);
  }
  std::cout << "wrote " << examples.size() << " examples to " << a.out << '\n';
  return 0;
}

// ---------------------------------------------------------------- features

struct FeaturesArgs {
  std::string in, out;
  double doa_deg = 90.0;
  double spacing = 0.03;
  std::string cov_norm = "none";
  bool dump_spec = false;
};

int run_features(const FeaturesArgs& a, const Globals& g) {
  const StftConfig cfg = g.stft_config();
  const Waveform wave = read_wav(a.in);
  const ArrayGeometry geom = ArrayGeometry::linear(static_cast<int>(wave.channels()), a.spacing);
  FeatureConfig fc;
  if (a.cov_norm == "trace") fc.cov_norm = CovarianceNorm::kTrace;
  else if (a.cov_norm != "none") throw ValidationError("--cov-norm: expected none or trace");
  log_config("features", {{"in", a.in}, {"out", a.out}, {"doa_deg", fmt(a.doa_deg)}, {"spacing", fmt(a.spacing)},
                          {"cov_norm", a.cov_norm}, {"stft", cfg.to_string()}});
  const Spectrogram spec = stft(wave, cfg);
  const ModelInputs in = assemble_inputs(spec, deg2rad(a.doa_deg), geom, fc);
  fs::create_directories(a.out);
  write_container(fs::path(a.out) / "features.bin", to_container(in.features));
  write_container(fs::path(a.out) / "covariance.bin", to_container(in.covariance));
  if (a.dump_spec) dump_spectrogram(spec, fs::path(a.out) / "spectrum_db.bin", fs::path(a.out) / "spectrum_db.csv");
  std::cout << "features [" << in.features.n_channels() << ", " << in.features.n_freq() << ", "
            << in.features.n_frames() << "] written to " << a.out << '\n';
  return 0;
}

// ------------------------------------------------------------------- train

struct TrainArgs {
  std::string data, out, config, log;
  std::vector<std::string> overrides;
};

template <typename Scalar>
int train_with(const TrainConfig& cfg, const std::vector<TrainingExample>& all, const TrainArgs& a) {
  const std::size_t n_val = static_cast<std::size_t>(std::floor(cfg.validation_fraction * double(all.size())));
  const std::vector<TrainingExample> train_set(all.begin(), all.end() - static_cast<long>(n_val));
  const std::vector<TrainingExample> val_set(all.end() - static_cast<long>(n_val), all.end());
  if (train_set.empty()) throw ValidationError("train: validation split leaves no training data");
  Dptbf<Scalar> model(cfg.model, cfg.seed);
  std::cerr << "[train] model parameters: " << model.parameter_count() << ", train clips: " << train_set.size()
            << ", held-out clips: " << val_set.size() << '\n';
  TrainHooks hooks;
  hooks.checkpoint = fs::path(a.out);
  hooks.log_csv = a.log.empty() ? fs::path(a.out + ".log.csv") : fs::path(a.log);
  hooks.on_step = [](const StepLog& s) {
    if (s.step % 10 == 1)
      std::cerr << "step " << s.step << " epoch " << s.epoch << " loss " << s.loss << " grad " << s.grad_norm
                << (s.skipped ? " (skipped)" : "") << '\n';
  };
  const TrainResult result = train(model, train_set, val_set, cfg, hooks);
  std::cout << "steps " << result.log.size() << ", examples consumed " << result.examples_consumed
            << ", skipped steps " << result.skipped_steps << '\n';
  if (result.heldout) {
    const fs::path report = a.out + ".heldout.json";
    atomic_write(report, [&](std::ostream& os) { os << result.heldout->to_json() << '\n'; }, false);
    std::cout << "held-out Si-SDR: input " << result.heldout->mean_input_si_sdr << " dB, output "
              << result.heldout->mean_output_si_sdr << " dB\n";
  }
  return 0;
}

int run_train(const TrainArgs& a, const Globals& g) {
  TrainConfig cfg;
  cfg.stft = g.stft_config();
  if (!a.config.empty()) cfg = TrainConfig::from_file(a.config, cfg);
  for (const auto& kv : a.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ValidationError("--set expects key=value, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  cfg.validate();
  log_config("train", {{"data", a.data}, {"out", a.out}, {"resolved", cfg.to_string()}});
  const auto all = load_dataset(a.data);
  return cfg.double_precision ? train_with<double>(cfg, all, a) : train_with<float>(cfg, all, a);
}

// ----------------------------------------------------------------- enhance

struct EnhanceArgs {
  std::string model, in, out, ref, dump_weights, dump_spec;
  double doa_deg = 90.0;
  double spacing = 0.03;
};

int run_enhance(const EnhanceArgs& a, const Globals& g) {
  const StftConfig cfg = g.stft_config();
  log_config("enhance", {{"model", a.model}, {"in", a.in}, {"out", a.out}, {"doa_deg", fmt(a.doa_deg)},
                         {"spacing", fmt(a.spacing)}, {"stft", cfg.to_string()}});
  const auto model = Dptbf<float>::load(a.model);
  const Waveform wave = read_wav(a.in);
  const ArrayGeometry geom = ArrayGeometry::linear(static_cast<int>(wave.channels()), a.spacing);
  const Spectrogram y = stft(pad_for_processing(wave, cfg), cfg);
  const auto [x, weights] = enhance(model, y, deg2rad(a.doa_deg), geom);
  const Waveform est = istft(x, wave.length());
  write_wav(a.out, est);
  if (!a.dump_weights.empty()) write_container(a.dump_weights, to_container(weights));
  if (!a.dump_spec.empty()) dump_spectrogram(x, a.dump_spec, a.dump_spec + ".csv");
  std::cout << "wrote " << a.out << '\n';
  if (!a.ref.empty()) {
    const Waveform ref = read_wav(a.ref);
    const Eigen::VectorXd r = ref.samples.row(0).transpose();
    std::cout << std::fixed << std::setprecision(2)
              << "input Si-SDR " << si_sdr(wave.samples.row(0).transpose(), r) << " dB, output Si-SDR "
              << si_sdr(est.samples.row(0).transpose(), r) << " dB\n";
  }
  return 0;
}

// -------------------------------------------------------------------- eval

struct EvalArgs {
  std::string method = "dptbf", data, model, report;
};

int run_eval(const EvalArgs& a, const Globals& g) {
  const StftConfig cfg = g.stft_config();
  const EvalMethod method = parse_eval_method(a.method);
  log_config("eval", {{"method", a.method}, {"data", a.data}, {"model", a.model}, {"report", a.report},
                      {"stft", cfg.to_string()}});
  const auto data = load_dataset(a.data);
  std::optional<Dptbf<float>> model;
  if (method == EvalMethod::kDptbf) {
    if (a.model.empty()) throw ValidationError("eval --method dptbf requires --model");
    model.emplace(Dptbf<float>::load(a.model));
  }
  const EvalReport report = evaluate<float>(data, method, model ? &*model : nullptr, cfg);
  if (!a.report.empty()) atomic_write(a.report, [&](std::ostream& os) { os << report.to_json() << '\n'; }, false);
  std::cout << std::fixed << std::setprecision(2) << a.method << ": " << report.clips.size() << " clips, input "
            << report.mean_input_si_sdr << " dB, output " << report.mean_output_si_sdr << " dB, improvement "
            << report.improvement() << " dB";
  if (model) std::cout << ", parameters " << report.parameter_count;
  std::cout << '\n';
  return 0;
}

// --------------------------------------------------------------- gradcheck

struct GradcheckArgs {
  bool all = false;
  std::vector<std::string> blocks;
  std::uint64_t seed = 1;
};

int run_gradcheck(const GradcheckArgs& a) {
  std::vector<std::string> names = a.blocks;
  if (a.all || names.empty()) names = gradcheck_block_names();
  bool ok = true;
  for (const auto& name : names) {
    const BlockCheck r = run_gradcheck_block(name, a.seed);
    ok = ok && r.passed;
    std::cout << std::left << std::setw(24) << r.name << " max_rel_error " << std::scientific << std::setprecision(3)
              << r.max_rel_error << std::defaultfloat << "  (" << r.checked << " derivatives)  "
              << (r.passed ? "ok" : "FAIL") << '\n';
  }
  return ok ? 0 : kExitRuntime;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dptbf: dual-path transformer beamformer toolkit"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--threads", g.threads, "Cap on worker threads (0 = library default)")->check(CLI::NonNegativeNumber);
  app.add_option("--stft", g.stft, "STFT configuration, e.g. fft=512,hop=256,win=hann");

  SimulateArgs sim;
  auto* c_sim = app.add_subcommand("simulate", "Render simulated multichannel mixtures");
  c_sim->add_option("--n", sim.n, "Number of examples")->required();
  c_sim->add_option("--seed", sim.seed, "Base seed");
  c_sim->add_option("--out", sim.out, "Output directory")->required();
  c_sim->add_option("--rt60", sim.rt60, "Reverberation time in s, value or lo:hi");
  c_sim->add_option("--sir", sim.sir, "Signal-to-interference ratio in dB, value or lo:hi");
  c_sim->add_option("--snr", sim.snr, "Signal-to-noise ratio in dB, value, lo:hi or none");
  c_sim->add_option("--noise", sim.noise, "Noise colour: white or pink");
  c_sim->add_option("--duration", sim.duration, "Clip length in s");
  c_sim->add_flag("--anechoic", sim.anechoic, "Direct path only");
  c_sim->add_option("--speech-dir", sim.speech_dir, "Directory of 16 kHz WAV files used as dry sources");

  FeaturesArgs feat;
  auto* c_feat = app.add_subcommand("features", "Compute model input features of a multichannel WAV");
  c_feat->add_option("--in", feat.in, "Input WAV")->required()->check(CLI::ExistingFile);
  c_feat->add_option("--doa", feat.doa_deg, "Target direction in degrees from the array axis")->required();
  c_feat->add_option("--out", feat.out, "Output directory")->required();
  c_feat->add_option("--spacing", feat.spacing, "Linear array spacing in m");
  c_feat->add_option("--cov-norm", feat.cov_norm, "Covariance normalization: none or trace");
  c_feat->add_flag("--dump-spec", feat.dump_spec, "Also write the magnitude spectrum in dB");

  TrainArgs tr;
  auto* c_train = app.add_subcommand("train", "Train a model on a simulated dataset");
  c_train->add_option("--data", tr.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  c_train->add_option("--out", tr.out, "Checkpoint path")->required();
  c_train->add_option("--config", tr.config, "key = value configuration file")->check(CLI::ExistingFile);
  c_train->add_option("--set", tr.overrides, "Override key=value (repeatable)");
  c_train->add_option("--log", tr.log, "Loss curve CSV (default <out>.log.csv)");

  EnhanceArgs en;
  auto* c_enh = app.add_subcommand("enhance", "Enhance a multichannel WAV with a trained model");
  c_enh->add_option("--model", en.model, "Checkpoint")->required()->check(CLI::ExistingFile);
  c_enh->add_option("--in", en.in, "Input mixture WAV")->required()->check(CLI::ExistingFile);
  c_enh->add_option("--doa", en.doa_deg, "Target direction in degrees from the array axis")->required();
  c_enh->add_option("--out", en.out, "Output WAV")->required();
  c_enh->add_option("--ref", en.ref, "Reference target WAV; prints Si-SDR")->check(CLI::ExistingFile);
  c_enh->add_option("--dump-weights", en.dump_weights, "Write beamforming weights [F, T, M, 2]");
  c_enh->add_option("--dump-spec", en.dump_spec, "Write the enhanced magnitude spectrum in dB");
  c_enh->add_option("--spacing", en.spacing, "Linear array spacing in m");

  EvalArgs ev;
  auto* c_eval = app.add_subcommand("eval", "Score an enhancement method by Si-SDR");
  c_eval->add_option("--method", ev.method, "dptbf, mvdr-oracle or none");
  c_eval->add_option("--data", ev.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  c_eval->add_option("--model", ev.model, "Checkpoint (method dptbf)");
  c_eval->add_option("--report", ev.report, "JSON report path");

  GradcheckArgs gc;
  auto* c_gc = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
  c_gc->add_flag("--all", gc.all, "Run every block");
  c_gc->add_option("--block", gc.blocks, "Block name (repeatable)");
  c_gc->add_option("--seed", gc.seed, "Seed for random inputs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  if (g.threads > 0) {
#ifdef _OPENMP
    omp_set_num_threads(g.threads);
#endif
    Eigen::setNbThreads(g.threads);
  }

  try {
    if (c_sim->parsed()) return run_simulate(sim);
    if (c_feat->parsed()) return run_features(feat, g);
    if (c_train->parsed()) return run_train(tr, g);
    if (c_enh->parsed()) return run_enhance(en, g);
    if (c_eval->parsed()) return run_eval(ev, g);
    if (c_gc->parsed()) return run_gradcheck(gc);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}
