#include "vibrosense/spectral.hpp"

#include <cmath>
#include <stdexcept>

#include "vibrosense/fft.hpp"
#include "vibrosense/io.hpp"

namespace vibro {

FrequencyGrid FrequencyGrid::standard() {
  FrequencyGrid g;
  g.frequencies.resize(4800);
  for (int i = 0; i < 4800; ++i) g.frequencies(i) = 100.0 + 0.5 * i;
  return g;
}

bool FrequencyGrid::uniform_step(double* step) const {
  if (frequencies.size() < 2) return false;
  const double d = frequencies(1) - frequencies(0);
  for (Eigen::Index i = 2; i < frequencies.size(); ++i)
    if (std::abs(frequencies(i) - frequencies(i - 1) - d) > 1e-9 * d)
      return false;
  if (step) *step = d;
  return true;
}

std::uint64_t FrequencyGrid::hash() const {
  return fnv1a(frequencies.data(),
               std::size_t(frequencies.size()) * sizeof(double));
}

namespace {

// |sum_t x_t e^{-i w t}| via the Goertzel recurrence.
double goertzel_mag(const Eigen::ArrayXd& x, double w) {
  const double coeff = 2.0 * std::cos(w);
  double q1 = 0.0, q2 = 0.0;
  for (Eigen::Index t = 0; t < x.size(); ++t) {
    const double q0 = x(t) + coeff * q1 - q2;
    q2 = q1;
    q1 = q0;
  }
  // X = q1 e^{-iw(N-1)} ... magnitude only, phase factors drop out
  const double re = q1 * std::cos(w) - q2;
  const double im = -q1 * std::sin(w);
  return std::sqrt(re * re + im * im);
}

}  // namespace

SpectralFeature featurize(const VibrationSignal& v, const FrequencyGrid& grid) {
  const Eigen::Index T = v.samples.cols();
  const Eigen::Index n_f = grid.frequencies.size();
  if (T < 2) throw std::invalid_argument("need at least two samples");
  if (!(v.rate_hz > 2.0 * grid.frequencies(n_f - 1)))
    throw std::invalid_argument(
        "sampling rate must exceed twice the top grid frequency");
  if (!v.samples.allFinite())
    throw std::invalid_argument("non-finite samples");

  SpectralFeature out;
  out.point_index = v.point_index;
  out.grid_hash = grid.hash();
  out.magnitudes.resize(2, n_f);

  double step = 0.0;
  const bool uniform = grid.uniform_step(&step);
  for (int axis = 0; axis < 2; ++axis) {
    Eigen::ArrayXd x = v.samples.row(axis).array();
    x -= x.mean();
    if (uniform) {
      const double w0 = 2.0 * M_PI * grid.frequencies(0) / v.rate_hz;
      const double dw = 2.0 * M_PI * step / v.rate_hz;
      std::vector<std::complex<double>> in(static_cast<std::size_t>(T));
      for (Eigen::Index t = 0; t < T; ++t) in[std::size_t(t)] = x(t);
      const auto spec = fft::czt(in, std::size_t(n_f), w0, dw);
      for (Eigen::Index k = 0; k < n_f; ++k)
        out.magnitudes(axis, k) = std::abs(spec[std::size_t(k)]) / double(T);
    } else {
      for (Eigen::Index k = 0; k < n_f; ++k) {
        const double w = 2.0 * M_PI * grid.frequencies(k) / v.rate_hz;
        out.magnitudes(axis, k) = goertzel_mag(x, w) / double(T);
      }
    }
  }
  return out;
}

SpectralFeature preprocess_feature(const SpectralFeature& s) {
  if (!s.magnitudes.allFinite())
    throw std::invalid_argument("non-finite feature");
  SpectralFeature out = s;
  out.magnitudes = s.magnitudes.array().log1p();
  const double mean = out.magnitudes.mean();
  const double var =
      (out.magnitudes.array() - mean).square().sum() /
      double(out.magnitudes.size());
  if (var <= 1e-24) {
    out.zero_variance = true;
    out.standardized = false;
    return out;
  }
  out.magnitudes = (out.magnitudes.array() - mean) / std::sqrt(var);
  out.standardized = true;
  return out;
}

void save_spectral_feature(const SpectralFeature& s, const std::string& path) {
  BinaryWriter w(path);
  w.magic("VSPC");
  w.pod<std::uint64_t>(s.grid_hash);
  w.pod<std::uint32_t>(std::uint32_t(s.point_index));
  const Eigen::Index n = s.magnitudes.cols();
  w.pod<std::uint32_t>(std::uint32_t(n));
  for (int axis = 0; axis < 2; ++axis)
    for (Eigen::Index k = 0; k < n; ++k)
      w.pod<float>(float(s.magnitudes(axis, k)));
}

SpectralFeature load_spectral_feature(const std::string& path) {
  BinaryReader r(path);
  r.expect_magic("VSPC");
  SpectralFeature s;
  s.grid_hash = r.pod<std::uint64_t>();
  s.point_index = int(r.pod<std::uint32_t>());
  const auto n = r.pod<std::uint32_t>();
  s.magnitudes.resize(2, n);
  for (int axis = 0; axis < 2; ++axis)
    for (std::uint32_t k = 0; k < n; ++k) s.magnitudes(axis, k) = r.pod<float>();
  return s;
}

}  // namespace vibro
