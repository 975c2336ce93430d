#include "doctest.h"

#include <cmath>
#include <complex>
#include <filesystem>

#include "vibrosense/rng.hpp"
#include "vibrosense/spectral.hpp"

using namespace vibro;

namespace {

// naive O(T) reference: |sum_t x_t e^{-2 pi i f t / fs}| / T on the
// mean-removed signal
double dtft_mag_reference(const Eigen::RowVectorXd& row, double rate_hz,
                          double freq_hz) {
  const Eigen::Index T = row.size();
  const double mean = row.mean();
  std::complex<double> acc(0.0, 0.0);
  const double w = 2.0 * M_PI * freq_hz / rate_hz;
  for (Eigen::Index t = 0; t < T; ++t)
    acc += (row(t) - mean) * std::exp(std::complex<double>(0.0, -w * double(t)));
  return std::abs(acc) / double(T);
}

VibrationSignal sinusoid_signal(double rate_hz, int T, double fx, double fy,
                                double amp_x, double amp_y) {
  VibrationSignal v;
  v.rate_hz = rate_hz;
  v.samples.resize(2, T);
  for (int t = 0; t < T; ++t) {
    v.samples(0, t) = amp_x * std::sin(2.0 * M_PI * fx * double(t) / rate_hz);
    v.samples(1, t) = amp_y * std::cos(2.0 * M_PI * fy * double(t) / rate_hz);
  }
  v.valid.assign(std::size_t(T), true);
  return v;
}

}  // namespace

TEST_CASE("standard grid covers 100..2499.5 Hz in 0.5 Hz steps") {
  const FrequencyGrid g = FrequencyGrid::standard();
  REQUIRE(g.frequencies.size() == 4800);
  CHECK(g.frequencies(0) == 100.0);
  CHECK(g.frequencies(4799) == 2499.5);
  double step = 0.0;
  CHECK(g.uniform_step(&step));
  CHECK(step == doctest::Approx(0.5));
}

TEST_CASE("grid hash is stable and sensitive to single-bin changes") {
  const FrequencyGrid a = FrequencyGrid::standard();
  FrequencyGrid b = FrequencyGrid::standard();
  CHECK(a.hash() == b.hash());
  b.frequencies(123) += 1e-9;
  CHECK(a.hash() != b.hash());
}

TEST_CASE("a unit on-grid sinusoid yields magnitude 0.5 at its bin") {
  // 0.5 Hz bins resolve exactly for T a multiple of fs / 0.5 = 2 fs... use a
  // rate and length where the tone period divides the window instead
  const double rate = 5100.0;
  const int T = 10200;  // 2 s: every 0.5 Hz multiple is an exact DFT bin
  const VibrationSignal v = sinusoid_signal(rate, T, 180.0, 410.0, 1.0, 0.7);
  const FrequencyGrid g = FrequencyGrid::standard();
  const SpectralFeature f = featurize(v, g);
  REQUIRE(f.magnitudes.cols() == 4800);
  const int kx = int((180.0 - 100.0) / 0.5);
  const int ky = int((410.0 - 100.0) / 0.5);
  CHECK(f.magnitudes(0, kx) == doctest::Approx(0.5).epsilon(1e-6));
  CHECK(f.magnitudes(1, ky) == doctest::Approx(0.35).epsilon(1e-6));
  // axes do not leak into each other
  CHECK(f.magnitudes(0, ky) < 1e-9);
  CHECK(f.magnitudes(1, kx) < 1e-9);
  // off-peak bins are near zero for an exactly periodic window
  Eigen::Index peak_x = 0;
  f.magnitudes.row(0).maxCoeff(&peak_x);
  CHECK(int(peak_x) == kx);
}

TEST_CASE("normalization by T keeps tone magnitude length-invariant") {
  const FrequencyGrid g = FrequencyGrid::standard();
  const int kx = int((180.0 - 100.0) / 0.5);
  for (int T : {10200, 20400}) {
    const VibrationSignal v = sinusoid_signal(5100.0, T, 180.0, 180.0, 1.0, 1.0);
    const SpectralFeature f = featurize(v, g);
    CHECK(f.magnitudes(0, kx) == doctest::Approx(0.5).epsilon(1e-6));
  }
}

TEST_CASE("a constant offset does not change the feature") {
  Rng rng(311);
  VibrationSignal v;
  v.rate_hz = 5100.0;
  v.samples.resize(2, 400);
  for (int t = 0; t < 400; ++t)
    for (int a = 0; a < 2; ++a) v.samples(a, t) = rng.normal();
  VibrationSignal w = v;
  w.samples.row(0).array() += 3.5;
  w.samples.row(1).array() -= 1.25;
  const FrequencyGrid g = FrequencyGrid::standard();
  const SpectralFeature fa = featurize(v, g);
  const SpectralFeature fb = featurize(w, g);
  CHECK((fa.magnitudes - fb.magnitudes).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("chirp-Z path matches the naive DTFT on random data") {
  Rng rng(42);
  VibrationSignal v;
  v.rate_hz = 5100.0;
  v.samples.resize(2, 500);
  for (int t = 0; t < 500; ++t)
    for (int a = 0; a < 2; ++a) v.samples(a, t) = rng.normal();
  FrequencyGrid g;
  g.frequencies.resize(60);
  for (int i = 0; i < 60; ++i) g.frequencies(i) = 150.0 + 7.25 * i;
  REQUIRE(g.uniform_step(nullptr));
  const SpectralFeature f = featurize(v, g);
  for (int k = 0; k < 60; k += 7)
    for (int a = 0; a < 2; ++a)
      CHECK(f.magnitudes(a, k) ==
            doctest::Approx(dtft_mag_reference(v.samples.row(a), v.rate_hz,
                                               g.frequencies(k)))
                .epsilon(1e-9));
}

TEST_CASE("Goertzel path matches the naive DTFT on a non-uniform grid") {
  Rng rng(43);
  VibrationSignal v;
  v.rate_hz = 5100.0;
  v.samples.resize(2, 300);
  for (int t = 0; t < 300; ++t)
    for (int a = 0; a < 2; ++a) v.samples(a, t) = rng.normal();
  FrequencyGrid g;
  g.frequencies.resize(25);
  for (int i = 0; i < 25; ++i)
    g.frequencies(i) = 120.0 + 40.0 * i + 3.0 * std::sin(double(i));
  REQUIRE_FALSE(g.uniform_step(nullptr));
  const SpectralFeature f = featurize(v, g);
  for (int k = 0; k < 25; ++k)
    for (int a = 0; a < 2; ++a)
      CHECK(f.magnitudes(a, k) ==
            doctest::Approx(dtft_mag_reference(v.samples.row(a), v.rate_hz,
                                               g.frequencies(k)))
                .epsilon(1e-9));
}

TEST_CASE("both evaluation routes agree at shared frequencies") {
  Rng rng(44);
  VibrationSignal v;
  v.rate_hz = 5100.0;
  v.samples.resize(2, 350);
  for (int t = 0; t < 350; ++t)
    for (int a = 0; a < 2; ++a) v.samples(a, t) = rng.normal();
  FrequencyGrid uniform;
  uniform.frequencies.resize(40);
  for (int i = 0; i < 40; ++i) uniform.frequencies(i) = 200.0 + 11.0 * i;
  FrequencyGrid jagged = uniform;
  jagged.frequencies.conservativeResize(41);
  jagged.frequencies(40) = 700.0;  // breaks the arithmetic progression
  REQUIRE(uniform.uniform_step(nullptr));
  REQUIRE_FALSE(jagged.uniform_step(nullptr));
  const SpectralFeature fu = featurize(v, uniform);
  const SpectralFeature fj = featurize(v, jagged);
  for (int k = 0; k < 40; ++k)
    for (int a = 0; a < 2; ++a)
      CHECK(fu.magnitudes(a, k) ==
            doctest::Approx(fj.magnitudes(a, k)).epsilon(1e-9));
}

TEST_CASE("featurize validates rate, length, and finiteness") {
  const FrequencyGrid g = FrequencyGrid::standard();
  VibrationSignal slow = sinusoid_signal(2247.0, 100, 180.0, 180.0, 1.0, 1.0);
  CHECK_THROWS_AS(featurize(slow, g), std::invalid_argument);
  VibrationSignal tiny = sinusoid_signal(5100.0, 1, 180.0, 180.0, 1.0, 1.0);
  CHECK_THROWS_AS(featurize(tiny, g), std::invalid_argument);
  VibrationSignal bad = sinusoid_signal(5100.0, 100, 180.0, 180.0, 1.0, 1.0);
  bad.samples(0, 3) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(featurize(bad, g), std::invalid_argument);
}

TEST_CASE("preprocessing standardizes to zero mean and unit variance") {
  Rng rng(45);
  SpectralFeature s;
  s.magnitudes.resize(2, 128);
  for (int k = 0; k < 128; ++k)
    for (int a = 0; a < 2; ++a) s.magnitudes(a, k) = std::abs(rng.normal());
  const SpectralFeature p = preprocess_feature(s);
  CHECK(p.standardized);
  CHECK_FALSE(p.zero_variance);
  CHECK(p.magnitudes.mean() == doctest::Approx(0.0).epsilon(1e-12));
  const double var = p.magnitudes.array().square().mean();
  CHECK(var == doctest::Approx(1.0).epsilon(1e-9));
  // log1p is monotone, so per-row argmax positions survive preprocessing
  Eigen::Index before = 0, after = 0;
  s.magnitudes.row(0).maxCoeff(&before);
  p.magnitudes.row(0).maxCoeff(&after);
  CHECK(before == after);
}

TEST_CASE("preprocessing flags constant features instead of dividing by zero") {
  SpectralFeature s;
  s.magnitudes = Eigen::MatrixXd::Constant(2, 64, 0.7);
  const SpectralFeature p = preprocess_feature(s);
  CHECK(p.zero_variance);
  CHECK_FALSE(p.standardized);
  CHECK(p.magnitudes.allFinite());
}

TEST_CASE("spectral feature round-trips through VSPC") {
  Rng rng(46);
  SpectralFeature s;
  s.point_index = 2;
  s.grid_hash = FrequencyGrid::standard().hash();
  s.magnitudes.resize(2, 77);
  for (int k = 0; k < 77; ++k)
    for (int a = 0; a < 2; ++a)
      s.magnitudes(a, k) = double(float(std::abs(rng.normal())));
  const auto path =
      (std::filesystem::temp_directory_path() / "roundtrip.vspc").string();
  save_spectral_feature(s, path);
  const SpectralFeature back = load_spectral_feature(path);
  CHECK(back.point_index == 2);
  CHECK(back.grid_hash == s.grid_hash);
  CHECK(back.magnitudes == s.magnitudes);  // values were float-representable
  std::filesystem::remove(path);
}
