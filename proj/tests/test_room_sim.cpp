// Copyright 2026 The dptbf Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <set>

#include "doctest.h"
#include "dptbf/room_sim.hpp"
#include "test_util.hpp"

using namespace dptbf;

namespace {

RoomSpec shoebox(double rt60) {
  RoomSpec room;
  room.dims = {6.0, 5.0, 3.0};
  room.rt60 = rt60;
  room.sources = {{1.5, 3.5, 1.4}, {4.5, 1.2, 1.6}};
  room.mics.resize(2, 3);
  room.mics << 3.0, 2.0, 1.5, 3.05, 2.0, 1.5;
  return room;
}

// T20 from the Schroeder backward integral, extrapolated to 60 dB.
double schroeder_rt60(const Eigen::VectorXd& h, int fs) {
  const Index n = h.size();
  Eigen::VectorXd edc(n);
  double acc = 0.0;
  for (Index i = n - 1; i >= 0; --i) edc[i] = (acc += h[i] * h[i]);
  Index peak = 0;
  h.cwiseAbs().maxCoeff(&peak);
  const double e0 = edc[peak];
  std::vector<double> xs, ys;
  for (Index i = peak; i < n; ++i) {
    const double db = 10.0 * std::log10(edc[i] / e0);
    if (db <= -5.0 && db >= -25.0) {
      xs.push_back(double(i) / fs);
      ys.push_back(db);
    }
  }
  REQUIRE(xs.size() > 10);
  const Eigen::Map<const Eigen::VectorXd> x(xs.data(), Index(xs.size())), y(ys.data(), Index(ys.size()));
  const double mx = x.mean(), my = y.mean();
  const double slope = ((x.array() - mx) * (y.array() - my)).sum() / (x.array() - mx).square().sum();
  return -60.0 / slope;
}

}  // namespace

TEST_CASE("direct path delay and spreading") {
  RoomSpec room = shoebox(0.3);
  room.max_image_order = 0;
  // Put the source an integer number of samples away so the sinc hits a tap exactly.
  const double samples = 100.0;
  const double dist = samples * room.sound_speed / room.sample_rate;
  room.sources = {room.mics.row(0).transpose() + Eigen::Vector3d(0.0, dist, 0.0)};
  Eigen::VectorXd h = simulate_rir(room, 0, 0);
  Index peak = 0;
  h.cwiseAbs().maxCoeff(&peak);
  CHECK(peak == 100);
  CHECK(h[100] == doctest::Approx(1.0 / (4.0 * kPi * dist)).epsilon(1e-9));
  h[100] = 0.0;
  CHECK(h.cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("first-order reflections arrive at mirror-image distances") {
  RoomSpec room = shoebox(0.3);
  room.max_image_order = 1;
  const Eigen::VectorXd h = simulate_rir(room, 0, 0, 2000);
  const Eigen::Vector3d s = room.sources[0], r = room.mics.row(0).transpose();
  const double beta = std::sqrt(1.0 - room.absorption());
  std::vector<Eigen::Vector3d> images{s};
  for (int axis = 0; axis < 3; ++axis) {
    Eigen::Vector3d lo = s, hi = s;
    lo[axis] = -s[axis];
    hi[axis] = 2.0 * room.dims[axis] - s[axis];
    images.push_back(lo);
    images.push_back(hi);
  }
  // Rebuild the response from the 7 images with an independent fractional-delay sum.
  Eigen::VectorXd expect = Eigen::VectorXd::Zero(2000);
  for (std::size_t k = 0; k < images.size(); ++k) {
    const double d = (images[k] - r).norm();
    const double delay = d * room.sample_rate / room.sound_speed;
    const double g = (k == 0 ? 1.0 : beta) / (4.0 * kPi * d);
    for (Index i = 0; i < 2000; ++i) {
      const double x = i - delay;
      if (std::abs(x) > 40.5) continue;
      const double win = 0.5 * (1.0 + std::cos(kPi * x / 41.0));
      expect[i] += g * win * (x == 0.0 ? 1.0 : std::sin(kPi * x) / (kPi * x));
    }
  }
  // bilinear transform of s^2 / (s^2 + sqrt(2) wc s + wc^2), prewarped to 40 Hz
  const double fs = room.sample_rate, k = 2.0 * fs, wc = k * std::tan(kPi * 40.0 / fs);
  const double d0 = k * k + std::sqrt(2.0) * wc * k + wc * wc;
  const double d1 = 2.0 * wc * wc - 2.0 * k * k, d2 = k * k - std::sqrt(2.0) * wc * k + wc * wc;
  Eigen::VectorXd filtered(2000);
  for (Index i = 0; i < 2000; ++i) {
    double y = k * k * (expect[i] - 2.0 * (i > 0 ? expect[i - 1] : 0.0) + (i > 1 ? expect[i - 2] : 0.0));
    if (i > 0) y -= d1 * filtered[i - 1];
    if (i > 1) y -= d2 * filtered[i - 2];
    filtered[i] = y / d0;
  }
  CHECK((h - filtered).norm() / filtered.norm() < 1e-9);
}

TEST_CASE("reverberant tail decays") {
  for (double rt60 : {0.2, 0.4, 0.6}) {
    RoomSpec room = shoebox(rt60);
    const Eigen::VectorXd h = simulate_rir(room, 1, 1);
    const auto fs = room.sample_rate;
    const double early = h.head(Index(0.05 * fs)).squaredNorm();
    const double late = h.segment(Index(rt60 * fs), Index(0.1 * fs)).squaredNorm();
    CHECK(std::isfinite(h.squaredNorm()));
    CHECK(late < 1e-3 * early);
  }
}

TEST_CASE("Schroeder decay matches the requested reverberation time") {
  // 5 x 4 x 2.5 m room, source and mic placed at least 0.75 m from every wall
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  RoomSpec room;
  room.dims = {5.0, 4.0, 2.5};
  room.rt60 = 0.3;
  room.mics.resize(1, 3);
  const Eigen::Vector3d margin = Eigen::Vector3d::Constant(0.75);
  auto draw = [&] {
    const Eigen::Vector3d u(unit(rng), unit(rng), unit(rng));
    return Eigen::Vector3d(margin + u.cwiseProduct(room.dims - 2.0 * margin));
  };
  double mean = 0.0;
  for (int k = 0; k < 8; ++k) {
    room.sources = {draw()};
    room.mics.row(0) = draw().transpose();
    const double measured = schroeder_rt60(simulate_rir(room, 0, 0), room.sample_rate);
    CHECK(std::abs(measured - room.rt60) / room.rt60 < 0.2);
    mean += measured / 8.0;
  }
  MESSAGE("mean T20 " << mean);
  CHECK(std::abs(mean - room.rt60) / room.rt60 < 0.1);
}

TEST_CASE("image order heuristic") {
  RoomSpec room = shoebox(0.3);
  room.rt60 = 0.2;
  CHECK(room.image_order() == 23);
  room.rt60 = 1.0;
  CHECK(room.image_order() == 30);
  room.max_image_order = 4;
  CHECK(room.image_order() == 4);
}

TEST_CASE("geometry helpers") {
  RoomSpec room = shoebox(0.3);
  CHECK(room.array_axis().isApprox(Eigen::Vector3d(1, 0, 0)));
  const Eigen::Vector3d c = room.array_centroid();
  CHECK(c.isApprox(Eigen::Vector3d(3.025, 2.0, 1.5)));
  const Eigen::Vector3d d = (room.sources[0] - c).normalized();
  CHECK(room.doa(0) == doctest::Approx(std::acos(d.x())));
  room.sources.push_back(c + Eigen::Vector3d(-1.0, 0.0, 0.0));
  CHECK(room.doa(2) == doctest::Approx(kPi));
}

TEST_CASE("room validation") {
  RoomSpec room = shoebox(0.3);
  room.rt60 = 0.01;  // Sabine absorption above one
  CHECK_THROWS_AS(room.validate(), ValidationError);
  room.max_image_order = 0;
  CHECK_NOTHROW(room.validate());
  room = shoebox(0.3);
  room.sources[0] = {7.0, 1.0, 1.0};
  CHECK_THROWS_AS(room.validate(), ValidationError);
  room = shoebox(0.3);
  CHECK_THROWS_AS(simulate_rir(room, 2, 0), ValidationError);
}

TEST_CASE("convolution matches the direct sum") {
  std::mt19937_64 rng(1);
  const Eigen::VectorXd x = dptbf::testing::random_signal(1, 300, rng).row(0).transpose();
  const Eigen::VectorXd h = dptbf::testing::random_signal(1, 37, rng).row(0).transpose();
  const Eigen::VectorXd y = convolve(x, h);
  REQUIRE(y.size() == 300);
  for (Index n : {0, 5, 36, 100, 299}) {
    double s = 0.0;
    for (Index k = 0; k <= std::min<Index>(n, 36); ++k) s += h[k] * x[n - k];
    CHECK(y[n] == doctest::Approx(s).epsilon(1e-10));
  }
}

TEST_CASE("mixture levels follow SIR and SNR") {
  std::mt19937_64 rng(2);
  const RoomSpec room = shoebox(0.25);
  const Index n = 16000;
  std::vector<Eigen::VectorXd> dry{synthesize_speech(n, 16000, rng), synthesize_speech(n, 16000, rng)};
  const Eigen::MatrixXd noise = synthesize_noise(2, n, NoiseType::kWhite, rng);
  MixtureSpec spec;
  spec.duration = 1.0;
  spec.sir_db = 3.5;
  spec.snr_db = -2.0;
  const TrainingExample ex = render_mixture(spec, room, dry, noise);
  auto db = [](const Eigen::RowVectorXd& a, const Eigen::RowVectorXd& b) {
    return 10.0 * std::log10(a.squaredNorm() / b.squaredNorm());
  };
  CHECK(db(ex.target_image.row(0), ex.interference_image.row(0)) == doctest::Approx(3.5).epsilon(1e-9));
  CHECK(db(ex.target_image.row(0), ex.noise.row(0)) == doctest::Approx(-2.0).epsilon(1e-9));
  CHECK((ex.mixture.samples - ex.target_image - ex.interference_image - ex.noise).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(ex.target == ex.target_image.row(0).transpose());
  CHECK(ex.mix.target_doa == doctest::Approx(room.doa(0)));
  CHECK(ex.mix.interference_doa == doctest::Approx(room.doa(1)));

  spec.snr_db = std::numeric_limits<double>::infinity();
  CHECK(render_mixture(spec, room, dry, noise).noise.isZero(0.0));
}

TEST_CASE("synthetic sources") {
  std::mt19937_64 rng(3);
  const Eigen::VectorXd s = synthesize_speech(32000, 16000, rng);
  CHECK(std::sqrt(s.squaredNorm() / 32000) == doctest::Approx(1.0));
  // pauses make the level vary strongly between 20 ms blocks
  int quiet = 0;
  for (Index b = 0; b < 100; ++b) quiet += s.segment(b * 320, 320).norm() < 0.1 * std::sqrt(320.0);
  CHECK(quiet > 3);

  const Eigen::MatrixXd white = synthesize_noise(3, 50000, NoiseType::kWhite, rng);
  const Eigen::MatrixXd pink = synthesize_noise(1, 50000, NoiseType::kPink, rng);
  // channel independence
  const double corr = white.row(0).dot(white.row(1)) / (white.row(0).norm() * white.row(1).norm());
  CHECK(std::abs(corr) < 0.03);
  // pink noise has more low-frequency power than high: compare first differences
  auto diff_ratio = [](const Eigen::RowVectorXd& x) {
    const Eigen::RowVectorXd d = x.tail(x.size() - 1) - x.head(x.size() - 1);
    return d.squaredNorm() / x.squaredNorm();
  };
  CHECK(diff_ratio(white.row(0)) == doctest::Approx(2.0).epsilon(0.05));
  CHECK(diff_ratio(pink.row(0)) < 1.0);
}

TEST_CASE("dataset sampling is reproducible and respects its ranges") {
  DatasetConfig cfg;
  cfg.duration = 0.5;
  cfg.rt60_max = 0.3;
  const auto a = sample_dataset(6, 42, cfg);
  const auto b = sample_dataset(6, 42, cfg);
  const TrainingExample c = sample_example(42, 3, cfg);
  std::set<double> sirs;
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].mixture.samples == b[i].mixture.samples);
    CHECK(a[i].mixture.samples.cols() == 8000);
    CHECK(a[i].mixture.samples.rows() == 4);
    CHECK(a[i].room.rt60 >= 0.1);
    CHECK(a[i].room.rt60 <= 0.3);
    CHECK(a[i].mix.sir_db >= -6.0);
    CHECK(a[i].mix.sir_db <= 6.0);
    CHECK(a[i].mix.snr_db >= -5.0);
    CHECK(a[i].mix.snr_db <= 20.0);
    CHECK(a[i].mix.target_doa >= 0.0);
    CHECK(a[i].mix.target_doa <= kPi);
    CHECK(std::abs(a[i].mix.target_doa - a[i].mix.interference_doa) >= 5.0 * kPi / 180.0 - 1e-12);
    const double rms = std::sqrt(a[i].mixture.samples.row(0).squaredNorm() / 8000.0);
    CHECK(rms == doctest::Approx(0.05));
    sirs.insert(a[i].mix.sir_db);
  }
  CHECK(sirs.size() == a.size());
  CHECK(c.mixture.samples == a[3].mixture.samples);
  CHECK(sample_dataset(6, 43, cfg)[0].mixture.samples != a[0].mixture.samples);
}

TEST_CASE("example files round trip") {
  DatasetConfig cfg;
  cfg.duration = 0.25;
  cfg.rt60_max = 0.2;
  const TrainingExample ex = sample_example(7, 0, cfg);
  const auto dir = dptbf::testing::temp_dir("room_io") / "ex_00000";
  write_example(dir, ex);
  const TrainingExample back = read_example(dir);
  CHECK(back.mixture.samples.rows() == 4);
  // 32-bit float samples
  CHECK((back.mixture.samples - ex.mixture.samples).cwiseAbs().maxCoeff() < 1e-7);
  CHECK((back.target - ex.target).cwiseAbs().maxCoeff() < 1e-7);
  CHECK(back.mix.target_doa == doctest::Approx(ex.mix.target_doa));
  CHECK(back.mix.sir_db == doctest::Approx(ex.mix.sir_db));
  CHECK(back.room.mics.isApprox(ex.room.mics));
  CHECK(back.room.rt60 == doctest::Approx(ex.room.rt60));
  const auto listed = list_examples(dir.parent_path());
  REQUIRE(listed.size() == 1);
  CHECK(listed[0] == dir);
  CHECK_THROWS_AS(read_example(dir.parent_path()), IoError);
}

TEST_CASE("dataset configuration validation") {
  DatasetConfig cfg;
  cfg.rt60_min = 0.5;
  cfg.rt60_max = 0.2;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg = {};
  cfg.n_mics = 1;
  CHECK_THROWS_AS(sample_dataset(2, 0, cfg), ValidationError);
  cfg = {};
  cfg.speech_dir = dptbf::testing::temp_dir("empty_speech");
  CHECK_THROWS_AS(sample_example(0, 0, cfg), ValidationError);
}

TEST_CASE("scene sampling spans the configured ranges") {
  const DatasetConfig cfg;
  double lo_rt = 1e9, hi_rt = -1e9, lo_sir = 1e9, hi_sir = -1e9, lo_snr = 1e9, hi_snr = -1e9;
  Eigen::Vector3d lo_dims = Eigen::Vector3d::Constant(1e9), hi_dims = Eigen::Vector3d::Constant(-1e9);
  for (std::uint64_t i = 0; i < 10000; ++i) {
    const Scene s = sample_scene(5, i, cfg);
    lo_rt = std::min(lo_rt, s.room.rt60), hi_rt = std::max(hi_rt, s.room.rt60);
    lo_sir = std::min(lo_sir, s.mix.sir_db), hi_sir = std::max(hi_sir, s.mix.sir_db);
    lo_snr = std::min(lo_snr, s.mix.snr_db), hi_snr = std::max(hi_snr, s.mix.snr_db);
    lo_dims = lo_dims.cwiseMin(s.room.dims), hi_dims = hi_dims.cwiseMax(s.room.dims);
    if (i < 100) {
      CHECK(s.room.source_separation(0, 1) >= 5.0 * kPi / 180.0);
      for (const auto& src : s.room.sources) CHECK(((src.array() > 0.0) && (src.array() < s.room.dims.array())).all());
    }
  }
  auto near = [](double value, double bound, double width) { return std::abs(value - bound) <= 0.05 * width; };
  CHECK(near(lo_rt, 0.1, 0.5));
  CHECK(near(hi_rt, 0.6, 0.5));
  CHECK(near(lo_sir, -6.0, 12.0));
  CHECK(near(hi_sir, 6.0, 12.0));
  CHECK(near(lo_snr, -5.0, 25.0));
  CHECK(near(hi_snr, 20.0, 25.0));
  for (int k = 0; k < 3; ++k) {
    const double width = cfg.dims_max[k] - cfg.dims_min[k];
    CHECK(near(lo_dims[k], cfg.dims_min[k], width));
    CHECK(near(hi_dims[k], cfg.dims_max[k], width));
  }
}

TEST_CASE("scene and rendered example agree") {
  DatasetConfig cfg;
  cfg.duration = 0.25;
  cfg.rt60_max = 0.2;
  const Scene s = sample_scene(9, 4, cfg);
  const TrainingExample ex = sample_example(9, 4, cfg);
  CHECK(ex.room.dims == s.room.dims);
  CHECK(ex.room.mics == s.room.mics);
  CHECK(ex.mix.sir_db == s.mix.sir_db);
  CHECK(ex.mix.target_doa == s.mix.target_doa);
}

TEST_CASE("render without interference or noise gives the reverberant target") {
  std::mt19937_64 rng(12);
  const RoomSpec room = shoebox(0.2);
  const std::vector<Eigen::VectorXd> dry{synthesize_speech(8000, 16000, rng)};
  MixtureSpec spec;
  spec.duration = 0.5;
  const TrainingExample ex = render_mixture(spec, room, dry, Eigen::MatrixXd());
  CHECK(ex.mixture.samples == ex.target_image);
  // linear in the dry source
  const TrainingExample twice = render_mixture(spec, room, {2.0 * dry[0]}, Eigen::MatrixXd());
  CHECK((twice.mixture.samples - 2.0 * ex.mixture.samples).cwiseAbs().maxCoeff() < 1e-12);
  CHECK_THROWS_AS(render_mixture(spec, room, {Eigen::VectorXd::Zero(8000)}, Eigen::MatrixXd()), ValidationError);
}
