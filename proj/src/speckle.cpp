#include "vibrosense/speckle.hpp"

#include <cmath>
#include <stdexcept>

#include "vibrosense/fft.hpp"
#include "vibrosense/io.hpp"
#include "vibrosense/rng.hpp"

namespace vibro {

namespace {

// Signed spatial frequency of bin k out of n, in cycles/px.
double bin_freq(int k, int n) {
  return (k <= n / 2 ? double(k) : double(k - n)) / double(n);
}

// Frequency-domain phase ramp for a translation by (dx, dy).
Eigen::MatrixXcd phase_ramp(const Eigen::MatrixXcd& spec, double dx,
                            double dy) {
  const int rows = int(spec.rows()), cols = int(spec.cols());
  Eigen::MatrixXcd out(rows, cols);
  for (int r = 0; r < rows; ++r) {
    const double fy = bin_freq(r, rows);
    for (int c = 0; c < cols; ++c) {
      const double fx = bin_freq(c, cols);
      const double ang = -2.0 * M_PI * (fx * dx + fy * dy);
      out(r, c) = spec(r, c) * std::complex<double>(std::cos(ang),
                                                    std::sin(ang));
    }
  }
  return out;
}

}  // namespace

SpecklePattern generate_speckle(std::uint64_t seed, int rows, int cols,
                                double grain_size_px) {
  if (rows < 16 || cols < 16)
    throw std::invalid_argument("speckle patch must be at least 16x16");
  if (grain_size_px < 2.0)
    throw std::invalid_argument(
        "grain_size_px < 2 would alias under subpixel shifting");

  Rng rng(seed);
  Eigen::MatrixXcd field(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c)
      field(r, c) = std::complex<double>(rng.normal(), rng.normal());

  // Low-pass the complex field with a disk aperture at 1/(4*grain) cycles/px.
  // Intensity = |field|^2 doubles the spectral support, which lands the
  // intensity band edge at 1/(2*grain) as the pattern invariant requires.
  fft::transform2d(field, false);
  const double cutoff = 1.0 / (4.0 * grain_size_px);
  for (int r = 0; r < rows; ++r) {
    const double fy = bin_freq(r, rows);
    for (int c = 0; c < cols; ++c) {
      const double fx = bin_freq(c, cols);
      if (std::sqrt(fx * fx + fy * fy) > cutoff) field(r, c) = 0.0;
    }
  }
  fft::transform2d(field, true);

  SpecklePattern p;
  p.grain_size_px = grain_size_px;
  p.seed = seed;
  p.intensity = field.cwiseAbs2();
  const double mean = p.intensity.mean();
  if (mean <= 0.0) throw std::runtime_error("degenerate speckle field");
  p.intensity /= mean;
  return p;
}

SpecklePattern shift_pattern(const SpecklePattern& p,
                             const Eigen::Vector2d& delta) {
  SpecklePattern out = p;
  Eigen::MatrixXcd spec = fft::forward2d(p.intensity);
  spec = phase_ramp(spec, delta.x(), delta.y());
  out.intensity = fft::inverse2d_real(spec).cwiseMax(0.0);
  return out;
}

FrameSequence render_sequence(const std::vector<SpecklePattern>& base,
                              const std::vector<ShiftTrajectory>& trajectories,
                              double rate_hz, double noise_sigma,
                              std::uint64_t noise_seed) {
  if (base.size() != trajectories.size())
    throw std::invalid_argument("one trajectory per grid point required");
  if (base.empty()) throw std::invalid_argument("empty grid");
  const std::size_t steps = trajectories[0].shifts.size();
  for (const auto& tr : trajectories) {
    if (tr.shifts.size() != steps)
      throw std::invalid_argument("trajectory length mismatch across points");
    for (const auto& s : tr.shifts)
      if (!s.allFinite() || s.norm() > ShiftTrajectory::kMaxStepPx)
        throw std::invalid_argument("trajectory step exceeds max shift bound");
  }

  const int rows = int(base[0].intensity.rows());
  const int cols = int(base[0].intensity.cols());
  const std::size_t T = steps + 1;

  FrameSequence seq;
  seq.patch_rows = rows;
  seq.patch_cols = cols;
  seq.noise_sigma = noise_sigma;
  seq.rate_hz = rate_hz;
  seq.ground_truth = trajectories;
  seq.frames.assign(T, std::vector<Eigen::MatrixXf>(base.size()));

  for (std::size_t p = 0; p < base.size(); ++p) {
    if (base[p].intensity.rows() != rows || base[p].intensity.cols() != cols)
      throw std::invalid_argument("patch geometry mismatch across points");
    const Eigen::MatrixXcd spec = fft::forward2d(base[p].intensity);
    Eigen::Vector2d cum = Eigen::Vector2d::Zero();
    for (std::size_t t = 0; t < T; ++t) {
      if (t > 0) cum += trajectories[p].shifts[t - 1];
      Eigen::MatrixXd frame =
          fft::inverse2d_real(phase_ramp(spec, cum.x(), cum.y()))
              .cwiseMax(0.0);
      if (noise_sigma > 0.0) {
        Rng rng(mix_seed(noise_seed, mix_seed(p, t)));
        const double sigma = noise_sigma * frame.mean();
        for (int r = 0; r < rows; ++r)
          for (int c = 0; c < cols; ++c) frame(r, c) += sigma * rng.normal();
      }
      seq.frames[t][p] = frame.cast<float>();
    }
  }
  return seq;
}

double roi_rate_model(const CameraConfig& config) {
  const long read = long(config.roi_count) * config.roi_height_px;
  if (read <= 0 || read > config.full_height_px)
    throw std::invalid_argument("ROI rows must satisfy 0 < m*h <= H");
  return config.full_rate_hz * double(config.full_height_px) / double(read);
}

double out_of_band_energy_fraction(const SpecklePattern& p) {
  const Eigen::MatrixXcd spec = fft::forward2d(p.intensity);
  const int rows = int(spec.rows()), cols = int(spec.cols());
  const double band_edge = 1.0 / (2.0 * p.grain_size_px);
  double total = 0.0, above = 0.0;
  for (int r = 0; r < rows; ++r) {
    const double fy = bin_freq(r, rows);
    for (int c = 0; c < cols; ++c) {
      const double fx = bin_freq(c, cols);
      const double e = std::norm(spec(r, c));
      total += e;
      if (std::sqrt(fx * fx + fy * fy) > band_edge) above += e;
    }
  }
  return total > 0.0 ? above / total : 0.0;
}

void save_frame_sequence(const FrameSequence& seq, const std::string& path) {
  BinaryWriter w(path);
  w.magic("VSFQ");
  w.pod<std::uint16_t>(1);
  const std::uint32_t T = std::uint32_t(seq.frames.size());
  const std::uint32_t grid = T ? std::uint32_t(seq.frames[0].size()) : 0;
  w.pod<std::uint32_t>(T);
  w.pod<std::uint32_t>(grid);
  w.pod<std::uint32_t>(std::uint32_t(seq.patch_rows));
  w.pod<std::uint32_t>(std::uint32_t(seq.patch_cols));
  std::vector<float> row_major(std::size_t(seq.patch_rows) * seq.patch_cols);
  for (std::uint32_t t = 0; t < T; ++t)
    for (std::uint32_t p = 0; p < grid; ++p) {
      const auto& m = seq.frames[t][p];
      for (int r = 0; r < seq.patch_rows; ++r)
        for (int c = 0; c < seq.patch_cols; ++c)
          row_major[std::size_t(r) * seq.patch_cols + c] = m(r, c);
      w.array(row_major.data(), row_major.size());
    }
  for (std::uint32_t p = 0; p < grid; ++p)
    for (const auto& s : seq.ground_truth[p].shifts) {
      w.pod<float>(float(s.x()));
      w.pod<float>(float(s.y()));
    }
  w.pod<double>(seq.rate_hz);
  w.pod<double>(seq.noise_sigma);
}

FrameSequence load_frame_sequence(const std::string& path) {
  BinaryReader r(path);
  r.expect_magic("VSFQ");
  const auto version = r.pod<std::uint16_t>();
  if (version != 1) throw std::runtime_error("unsupported VSFQ version");
  const auto T = r.pod<std::uint32_t>();
  const auto grid = r.pod<std::uint32_t>();
  FrameSequence seq;
  seq.patch_rows = int(r.pod<std::uint32_t>());
  seq.patch_cols = int(r.pod<std::uint32_t>());
  seq.frames.assign(T, std::vector<Eigen::MatrixXf>(grid));
  std::vector<float> buf(std::size_t(seq.patch_rows) * seq.patch_cols);
  for (std::uint32_t t = 0; t < T; ++t)
    for (std::uint32_t p = 0; p < grid; ++p) {
      r.array(buf.data(), buf.size());
      Eigen::MatrixXf m(seq.patch_rows, seq.patch_cols);
      for (int rr = 0; rr < seq.patch_rows; ++rr)
        for (int cc = 0; cc < seq.patch_cols; ++cc)
          m(rr, cc) = buf[std::size_t(rr) * seq.patch_cols + cc];
      seq.frames[t][p] = std::move(m);
    }
  seq.ground_truth.resize(grid);
  for (std::uint32_t p = 0; p < grid; ++p) {
    seq.ground_truth[p].shifts.resize(T > 0 ? T - 1 : 0);
    for (auto& s : seq.ground_truth[p].shifts) {
      s.x() = r.pod<float>();
      s.y() = r.pod<float>();
    }
  }
  seq.rate_hz = r.pod<double>();
  seq.noise_sigma = r.pod<double>();
  return seq;
}

}  // namespace vibro
