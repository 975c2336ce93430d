#include "doctest.h"

#include <cmath>
#include <complex>
#include <filesystem>
#include <set>

#include "vibrosense/modal.hpp"
#include "vibrosense/rng.hpp"
#include "vibrosense/spectral.hpp"

using namespace vibro;

namespace {

double rms(const Eigen::VectorXd& x) {
  return std::sqrt(x.squaredNorm() / double(x.size()));
}

// energy fraction of x outside [lo, hi] Hz, via plain DFT magnitudes
double out_of_band_fraction(const Eigen::VectorXd& x, double rate, double lo,
                            double hi) {
  const Eigen::Index n = x.size();
  double in = 0.0, total = 0.0;
  for (Eigen::Index k = 1; k < n / 2; ++k) {
    const double f = double(k) * rate / double(n);
    std::complex<double> acc(0.0, 0.0);
    for (Eigen::Index t = 0; t < n; ++t)
      acc += x(t) * std::exp(std::complex<double>(
                        0.0, -2.0 * M_PI * double(k * t) / double(n)));
    const double p = std::norm(acc);
    total += p;
    if (f >= lo && f <= hi) in += p;
  }
  return total > 0.0 ? 1.0 - in / total : 0.0;
}

ContainerModel single_tone_model(double f_empty, double beta, double zeta) {
  // synthesis requires >= 3 modes; make the extra two acoustically invisible
  ContainerModel m;
  ModeSpec dominant;
  dominant.f_empty_hz = f_empty;
  dominant.beta = beta;
  dominant.zeta = zeta;
  dominant.shape.setZero();
  dominant.shape(0, 0) = 1.0;
  m.modes.push_back(dominant);
  for (double f : {1900.0, 2200.0}) {
    ModeSpec silent = dominant;
    silent.f_empty_hz = f;
    silent.shape.setZero();
    silent.shape(2, 1) = 1e-9;
    m.modes.push_back(silent);
  }
  return m;
}

}  // namespace

TEST_CASE("added-mass law matches its closed form and properties") {
  ModeSpec m;
  m.f_empty_hz = 820.0;
  m.beta = 0.6;
  CHECK(resonant_freq(m, 0.0) == doctest::Approx(820.0));
  CHECK(resonant_freq(m, 0.5) == doctest::Approx(820.0 / std::sqrt(1.3)));
  CHECK(resonant_freq(m, 1.0) == doctest::Approx(820.0 / std::sqrt(1.6)));
  double prev = resonant_freq(m, 0.0);
  for (double l = 0.1; l <= 1.0; l += 0.1) {
    const double f = resonant_freq(m, l);
    CHECK(f < prev);
    prev = f;
  }
  CHECK_THROWS_AS(resonant_freq(m, -0.1), std::invalid_argument);
  CHECK_THROWS_AS(resonant_freq(m, 1.1), std::invalid_argument);
}

TEST_CASE("the resonator peaks on the added-mass frequency, within a bin") {
  const ContainerModel model = single_tone_model(700.0, 0.7, 0.003);
  Excitation exc;
  exc.kind = ExcitationKind::chirp;
  exc.duration_s = 2.0;
  exc.f_samp_hz = 5100.0;
  const Eigen::VectorXd force = make_excitation(exc);
  const FrequencyGrid grid = FrequencyGrid::standard();
  for (double level : {0.0, 0.4, 1.0}) {
    const SynthSample s =
        synthesize_response(model, level, exc, force, 0.0, 1);
    const SpectralFeature f = featurize(s.signals[0], grid);
    Eigen::Index peak = 0;
    f.magnitudes.row(0).maxCoeff(&peak);
    const double expected = resonant_freq(model.modes[0], level);
    CHECK(std::abs(grid.frequencies(peak) - expected) <= 0.5 + 1e-9);
  }
}

TEST_CASE("mode shapes route energy to the right points and axes") {
  const ContainerModel model = single_tone_model(500.0, 0.5, 0.01);
  Excitation exc;
  exc.duration_s = 0.5;
  const Eigen::VectorXd force = make_excitation(exc);
  const SynthSample s = synthesize_response(model, 0.2, exc, force, 0.0, 1);
  // the dominant mode lives on point 0, axis x only
  CHECK(rms(s.signals[0].samples.row(0).transpose()) > 1e-3);
  CHECK(rms(s.signals[0].samples.row(1).transpose()) < 1e-8);
  CHECK(rms(s.signals[1].samples.row(0).transpose()) < 1e-8);
}

TEST_CASE("sensor noise is seeded and scales with the requested sigma") {
  const ContainerModel model = single_tone_model(500.0, 0.5, 0.01);
  Excitation exc;
  exc.duration_s = 0.5;
  const Eigen::VectorXd force = make_excitation(exc);
  const SynthSample clean = synthesize_response(model, 0.2, exc, force, 0.0, 7);
  const SynthSample a = synthesize_response(model, 0.2, exc, force, 0.05, 7);
  const SynthSample b = synthesize_response(model, 0.2, exc, force, 0.05, 7);
  const SynthSample c = synthesize_response(model, 0.2, exc, force, 0.05, 8);
  CHECK(a.signals[0].samples == b.signals[0].samples);
  CHECK(a.signals[0].samples != c.signals[0].samples);
  const Eigen::VectorXd noise =
      (a.signals[0].samples.row(0) - clean.signals[0].samples.row(0))
          .transpose();
  const double signal_rms = rms(clean.signals[0].samples.row(0).transpose());
  CHECK(rms(noise) / signal_rms == doctest::Approx(0.05).epsilon(0.1));
}

TEST_CASE("excitations are deterministic, zero mean, and band limited") {
  for (ExcitationKind kind :
       {ExcitationKind::chirp, ExcitationKind::song_surrogate,
        ExcitationKind::ambient_surrogate}) {
    Excitation e;
    e.kind = kind;
    e.duration_s = 0.25;
    e.seed = 99;
    const Eigen::VectorXd x = make_excitation(e);
    CHECK(x.size() == Eigen::Index(0.25 * 5100.0));
    CHECK(std::abs(x.mean()) < 1e-9);
    CHECK(x == make_excitation(e));
    if (kind != ExcitationKind::chirp) {
      Excitation e2 = e;
      e2.seed = 100;
      CHECK(x != make_excitation(e2));
      CHECK(rms(x) == doctest::Approx(1.0).epsilon(1e-9));
      CHECK(out_of_band_fraction(x, e.f_samp_hz, 50.0, 2550.0) < 0.02);
    }
  }
  Excitation bad;
  bad.f_samp_hz = 4000.0;
  CHECK_THROWS_AS(make_excitation(bad), std::invalid_argument);
}

TEST_CASE("ambient surrogate rolls off like pink noise") {
  Excitation e;
  e.kind = ExcitationKind::ambient_surrogate;
  e.duration_s = 1.0;
  e.seed = 5;
  const Eigen::VectorXd x = make_excitation(e);
  // average power over [200, 400] should exceed [1600, 1800] by roughly the
  // 1/f factor (8x); allow a wide band for estimation noise
  const FrequencyGrid g = FrequencyGrid::standard();
  VibrationSignal v;
  v.rate_hz = e.f_samp_hz;
  v.samples.resize(2, x.size());
  v.samples.row(0) = x.transpose();
  v.samples.row(1) = x.transpose();
  const SpectralFeature f = featurize(v, g);
  double lo = 0.0, hi = 0.0;
  int n_lo = 0, n_hi = 0;
  for (int k = 0; k < 4800; ++k) {
    const double fr = g.frequencies(k);
    const double p = f.magnitudes(0, k) * f.magnitudes(0, k);
    if (fr >= 200.0 && fr <= 400.0) lo += p, ++n_lo;
    if (fr >= 1600.0 && fr <= 1800.0) hi += p, ++n_hi;
  }
  const double ratio = (lo / n_lo) / (hi / n_hi);
  CHECK(ratio > 3.0);
  CHECK(ratio < 20.0);
}

TEST_CASE("speaker filter is seeded and stays inside +-6 dB") {
  Excitation e;
  e.kind = ExcitationKind::chirp;
  e.duration_s = 0.5;
  const Eigen::VectorXd x = make_excitation(e);
  const Eigen::VectorXd y1 = apply_speaker_filter(x, e.f_samp_hz, 21);
  const Eigen::VectorXd y2 = apply_speaker_filter(x, e.f_samp_hz, 21);
  const Eigen::VectorXd y3 = apply_speaker_filter(x, e.f_samp_hz, 22);
  CHECK(y1 == y2);
  CHECK(y1 != y3);
  // a +-6 dB magnitude response bounds the output RMS by 2x either way
  // (bumps can stack, but not on a sweep that spends little time per band)
  CHECK(rms(y1) / rms(x) > 0.35);
  CHECK(rms(y1) / rms(x) < 2.9);
}

TEST_CASE("instance jitter is seeded and bounded") {
  const ContainerModel base = make_container_class(0, 77);
  const ContainerModel a = instance_jitter(base, 5);
  const ContainerModel b = instance_jitter(base, 5);
  const ContainerModel c = instance_jitter(base, 6);
  REQUIRE(a.modes.size() == base.modes.size());
  bool differs = false;
  for (std::size_t k = 0; k < a.modes.size(); ++k) {
    CHECK(a.modes[k].f_empty_hz == b.modes[k].f_empty_hz);
    if (a.modes[k].f_empty_hz != c.modes[k].f_empty_hz) differs = true;
    const double fr = a.modes[k].f_empty_hz / base.modes[k].f_empty_hz;
    CHECK(fr >= 0.98);
    CHECK(fr <= 1.02);
    const double zr = a.modes[k].zeta / base.modes[k].zeta;
    CHECK(zr >= 0.90);
    CHECK(zr <= 1.10);
    CHECK(a.modes[k].shape.norm() == doctest::Approx(1.0).epsilon(1e-12));
  }
  CHECK(differs);
}

TEST_CASE("class draws respect mode count, spacing, and the hard profile") {
  for (int cls = 0; cls < 6; ++cls) {
    const ContainerModel easy = make_container_class(cls, 1000 + cls);
    CHECK(easy.modes.size() >= 8);
    CHECK(easy.modes.size() <= 16);
    for (std::size_t k = 1; k < easy.modes.size(); ++k)
      CHECK(easy.modes[k].f_empty_hz - easy.modes[k - 1].f_empty_hz >= 5.0);
    for (const auto& m : easy.modes) {
      CHECK(m.shape.norm() == doctest::Approx(1.0).epsilon(1e-12));
      CHECK(m.beta >= 0.3);
      CHECK(m.beta <= 0.9);
    }
    const ContainerModel hard = make_container_class(cls, 2000 + cls, true);
    double min_zeta = 1.0;
    for (const auto& m : hard.modes) min_zeta = std::min(min_zeta, m.zeta);
    CHECK(min_zeta == doctest::Approx(0.002));
    int sharp = 0;
    for (const auto& m : hard.modes)
      if (m.zeta < 0.01) ++sharp;
    CHECK(sharp == 1);  // exactly one dominant high-Q mode
  }
}

TEST_CASE("excitation names round-trip") {
  for (ExcitationKind k :
       {ExcitationKind::chirp, ExcitationKind::song_surrogate,
        ExcitationKind::ambient_surrogate})
    CHECK(excitation_from_name(excitation_name(k)) == k);
  CHECK_THROWS_AS(excitation_from_name("drumroll"), std::invalid_argument);
}

TEST_CASE("dataset build emits the expected strata and is reproducible") {
  DatasetRecipe r;
  r.n_classes = 2;
  r.n_instances = 2;
  r.n_speakers = 2;
  r.duration_s = 0.1;
  r.seed = 9;
  const auto dir =
      (std::filesystem::temp_directory_path() / "vibro_ds_test").string();
  const auto rows = build_dataset(r, dir);
  // train 96 + intermediate 48 + unseen instance 48 + ambient 48+24+24
  REQUIRE(rows.size() == 288);

  std::set<std::tuple<int, int, int, std::string, int>> keys;
  int n_ambient = 0, n_interm = 0, n_unseen = 0;
  for (const auto& row : rows) {
    CHECK(keys
              .insert({row.class_id, row.instance, int(row.level * 100 + 0.5),
                       row.excitation, row.speaker})
              .second);
    if (row.excitation == "ambient_surrogate") ++n_ambient;
    if (row.level == 0.25 || row.level == 0.5 || row.level == 0.75) ++n_interm;
    if (row.instance == r.n_instances) ++n_unseen;
  }
  CHECK(n_ambient == 96);
  CHECK(n_interm == 72);
  CHECK(n_unseen == 72);

  // manifest round-trips with identical fields
  const auto loaded = load_manifest(dir + "/manifest.csv");
  REQUIRE(loaded.size() == rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(loaded[i].sample_id == rows[i].sample_id);
    CHECK(loaded[i].class_id == rows[i].class_id);
    CHECK(loaded[i].instance == rows[i].instance);
    CHECK(loaded[i].level == rows[i].level);
    CHECK(loaded[i].excitation == rows[i].excitation);
    CHECK(loaded[i].speaker == rows[i].speaker);
    CHECK(loaded[i].seed == rows[i].seed);
  }

  // signals load back and a rebuild with the same seed is bit-identical
  const SynthSample s0 = load_sample_signals(loaded[0]);
  CHECK(s0.signals[0].samples.cols() == Eigen::Index(0.1 * 5100.0));
  const auto dir2 =
      (std::filesystem::temp_directory_path() / "vibro_ds_test2").string();
  const auto rows2 = build_dataset(r, dir2);
  REQUIRE(rows2.size() == rows.size());
  for (std::size_t i : {std::size_t(0), rows.size() / 2, rows.size() - 1}) {
    const SynthSample a = load_sample_signals(rows[i]);
    const SynthSample b = load_sample_signals(rows2[i]);
    for (int p = 0; p < 3; ++p)
      CHECK(a.signals[std::size_t(p)].samples ==
            b.signals[std::size_t(p)].samples);
  }
  std::filesystem::remove_all(dir);
  std::filesystem::remove_all(dir2);
}
