#include "vibrosense/shift.hpp"

#include <cmath>
#include <map>
#include <mutex>
#include <stdexcept>

#include "vibrosense/fft.hpp"
#include "vibrosense/io.hpp"
#include "vibrosense/parallel.hpp"

namespace vibro {

namespace {

const Eigen::MatrixXd& hann2d(int rows, int cols) {
  static std::mutex mu;
  static std::map<std::pair<int, int>, Eigen::MatrixXd> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto& w = cache[{rows, cols}];
  if (w.size() == 0) {
    Eigen::VectorXd wr(rows), wc(cols);
    for (int r = 0; r < rows; ++r)
      wr(r) = 0.5 - 0.5 * std::cos(2.0 * M_PI * r / double(rows - 1));
    for (int c = 0; c < cols; ++c)
      wc(c) = 0.5 - 0.5 * std::cos(2.0 * M_PI * c / double(cols - 1));
    w = wr * wc.transpose();
  }
  return w;
}

int unfold(int i, int n) { return i <= n / 2 ? i : i - n; }

double bilinear(const Eigen::MatrixXd& img, double y, double x) {
  const int r0 = int(std::floor(y)), c0 = int(std::floor(x));
  const double fy = y - r0, fx = x - c0;
  return (1 - fy) * ((1 - fx) * img(r0, c0) + fx * img(r0, c0 + 1)) +
         fy * ((1 - fx) * img(r0 + 1, c0) + fx * img(r0 + 1, c0 + 1));
}

}  // namespace

PhaseCorrResult phase_correlate(const Eigen::MatrixXd& a,
                                const Eigen::MatrixXd& b, bool hann_window) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument("patch shape mismatch");
  if (a.rows() < 8 || a.cols() < 8)
    throw std::invalid_argument("patches must be at least 8x8");

  PhaseCorrResult res;
  const double var_a = (a.array() - a.mean()).square().sum();
  const double var_b = (b.array() - b.mean()).square().sum();
  if (var_a <= 1e-12 * a.size() || var_b <= 1e-12 * b.size()) return res;

  Eigen::MatrixXcd fa, fb;
  if (hann_window) {
    const Eigen::MatrixXd& w = hann2d(int(a.rows()), int(a.cols()));
    fa = fft::forward2d((a.array() - a.mean()).matrix().cwiseProduct(w));
    fb = fft::forward2d((b.array() - b.mean()).matrix().cwiseProduct(w));
  } else {
    fa = fft::forward2d(a);
    fb = fft::forward2d(b);
  }

  // magnitude-gated whitening: bins with (near) zero energy carry no shift
  // information, and normalizing them injects junk phase — band-limited
  // speckle has many such bins
  Eigen::MatrixXcd cross(a.rows(), a.cols());
  double max_mag = 0.0;
  for (Eigen::Index r = 0; r < a.rows(); ++r)
    for (Eigen::Index c = 0; c < a.cols(); ++c) {
      cross(r, c) = fb(r, c) * std::conj(fa(r, c));
      max_mag = std::max(max_mag, std::abs(cross(r, c)));
    }
  const double gate = 1e-3 * max_mag;
  for (Eigen::Index r = 0; r < a.rows(); ++r)
    for (Eigen::Index c = 0; c < a.cols(); ++c) {
      const double mag = std::abs(cross(r, c));
      cross(r, c) = mag > gate ? cross(r, c) / mag : std::complex<double>(0, 0);
    }
  const Eigen::MatrixXd corr = fft::inverse2d_real(cross);

  // argmax, ties broken by lowest linear (column-major) index
  Eigen::Index best_r = 0, best_c = 0;
  double best = corr(0, 0);
  for (Eigen::Index c = 0; c < corr.cols(); ++c)
    for (Eigen::Index r = 0; r < corr.rows(); ++r)
      if (corr(r, c) > best) {
        best = corr(r, c);
        best_r = r;
        best_c = c;
      }
  res.shift = Eigen::Vector2i(unfold(int(best_c), int(corr.cols())),
                              unfold(int(best_r), int(corr.rows())));
  res.ok = true;
  return res;
}

ShiftEstimate lk_refine(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                        const Eigen::Vector2d& init, const PclkOptions& opt) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument("patch shape mismatch");
  const int rows = int(a.rows()), cols = int(a.cols());
  const int margin =
      std::max(4, int(std::ceil(init.cwiseAbs().maxCoeff())) + 1);
  if (2 * margin + 2 >= std::min(rows, cols))
    throw std::invalid_argument("patch too small for LK interior crop");

  ShiftEstimate est;
  est.delta = init;

  const int r_lo = margin, r_hi = rows - margin;
  const int c_lo = margin, c_hi = cols - margin;
  double mean_a = 0.0, denom = 0.0;
  for (int r = r_lo; r < r_hi; ++r)
    for (int c = c_lo; c < c_hi; ++c) mean_a += a(r, c);
  mean_a /= double((r_hi - r_lo) * (c_hi - c_lo));
  for (int r = r_lo; r < r_hi; ++r)
    for (int c = c_lo; c < c_hi; ++c)
      denom += (a(r, c) - mean_a) * (a(r, c) - mean_a);
  if (denom <= 0.0) {
    est.converged = false;
    return est;
  }

  double ssd = 0.0;
  for (int it = 0; it < opt.max_iterations; ++it) {
    est.iterations = it + 1;
    Eigen::Matrix2d normal = Eigen::Matrix2d::Zero();
    Eigen::Vector2d rhs = Eigen::Vector2d::Zero();
    ssd = 0.0;
    bool in_bounds = true;
    for (int r = r_lo; r < r_hi && in_bounds; ++r) {
      for (int c = c_lo; c < c_hi; ++c) {
        const double y = r + est.delta.y();
        const double x = c + est.delta.x();
        if (y < 1.0 || y > rows - 2.001 || x < 1.0 || x > cols - 2.001) {
          in_bounds = false;
          break;
        }
        const double resid = a(r, c) - bilinear(b, y, x);
        const double gx = 0.5 * (bilinear(b, y, x + 1) - bilinear(b, y, x - 1));
        const double gy = 0.5 * (bilinear(b, y + 1, x) - bilinear(b, y - 1, x));
        normal(0, 0) += gx * gx;
        normal(0, 1) += gx * gy;
        normal(1, 1) += gy * gy;
        rhs.x() += gx * resid;
        rhs.y() += gy * resid;
        ssd += resid * resid;
      }
    }
    est.residual = ssd / denom;
    if (!in_bounds) {
      est.converged = false;
      return est;
    }
    normal(1, 0) = normal(0, 1);
    const double tr = normal.trace();
    const double det = normal.determinant();
    if (tr <= 0.0 || det <= 0.0) {
      est.converged = false;  // singular normal matrix (flat patch)
      return est;
    }
    // eigenvalue ratio of the 2x2 SPD normal matrix
    const double disc = std::sqrt(std::max(0.0, tr * tr / 4.0 - det));
    const double lam_min = tr / 2.0 - disc, lam_max = tr / 2.0 + disc;
    if (lam_min <= 0.0 || lam_max / lam_min > opt.condition_limit) {
      est.converged = false;
      return est;
    }
    const Eigen::Vector2d update = normal.ldlt().solve(rhs);
    est.delta += update;
    if (update.norm() < opt.update_tol_px) {
      est.converged = est.residual <= opt.residual_tol;
      return est;
    }
  }
  est.converged = false;  // iteration cap
  return est;
}

ShiftEstimate pclk(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                   const PclkOptions& opt) {
  const PhaseCorrResult pc = phase_correlate(a, b, opt.hann_window);
  if (!pc.ok) throw std::invalid_argument("degenerate (zero-variance) patch");
  const double limit = std::min(a.rows(), a.cols()) / 4.0;
  if (pc.shift.cast<double>().norm() > limit)
    throw std::domain_error("shift exceeds patch_size/4; estimate rejected");
  ShiftEstimate est = lk_refine(a, b, pc.shift.cast<double>(), opt);
  if (est.delta.norm() > limit)
    throw std::domain_error("refined shift exceeds patch_size/4");
  return est;
}

std::vector<VibrationSignal> pclk_batch(const FrameSequence& seq,
                                        const PclkOptions& opt,
                                        unsigned n_threads) {
  const std::size_t T = seq.frames.size();
  if (T < 2) throw std::invalid_argument("need at least two frames");
  const std::size_t n_points = seq.frames[0].size();
  const std::size_t n_pairs = T - 1;

  struct Slot {
    Eigen::Vector2d delta = Eigen::Vector2d::Zero();
    bool ok = false;
  };
  std::vector<Slot> slots(n_points * n_pairs);

  parallel_for(
      n_points * n_pairs,
      [&](std::size_t idx) {
        const std::size_t p = idx / n_pairs;
        const std::size_t t = idx % n_pairs;
        const Eigen::MatrixXd a = seq.frames[t][p].cast<double>();
        const Eigen::MatrixXd b = seq.frames[t + 1][p].cast<double>();
        try {
          const ShiftEstimate est = pclk(a, b, opt);
          slots[idx].delta = est.delta;
          slots[idx].ok = est.converged;
        } catch (const std::exception&) {
          slots[idx].ok = false;
        }
      },
      n_threads);

  // deterministic gather ordered by (point, frame); invalid pairs hold the
  // last valid sample so the downstream DFT stays well-defined
  std::vector<VibrationSignal> out(n_points);
  for (std::size_t p = 0; p < n_points; ++p) {
    VibrationSignal& v = out[p];
    v.point_index = int(p);
    v.rate_hz = seq.rate_hz;
    v.samples.resize(2, Eigen::Index(n_pairs));
    v.valid.assign(n_pairs, true);
    Eigen::Vector2d last = Eigen::Vector2d::Zero();
    for (std::size_t t = 0; t < n_pairs; ++t) {
      const Slot& s = slots[p * n_pairs + t];
      if (s.ok) {
        last = s.delta;
      } else {
        v.valid[t] = false;
      }
      v.samples.col(Eigen::Index(t)) = last;
    }
  }
  return out;
}

void save_vibration_signal(const VibrationSignal& v, const std::string& path) {
  BinaryWriter w(path);
  w.magic("VSIG");
  w.pod<std::uint16_t>(1);
  w.pod<std::uint32_t>(std::uint32_t(v.point_index));
  const std::uint32_t T = std::uint32_t(v.samples.cols());
  w.pod<std::uint32_t>(T);
  w.pod<double>(v.rate_hz);
  for (int axis = 0; axis < 2; ++axis)
    for (std::uint32_t t = 0; t < T; ++t)
      w.pod<float>(float(v.samples(axis, t)));
  std::vector<std::uint8_t> mask((T + 7) / 8, 0);
  for (std::uint32_t t = 0; t < T; ++t)
    if (t < v.valid.size() ? v.valid[t] : true) mask[t / 8] |= 1u << (t % 8);
  w.array(mask.data(), mask.size());
}

VibrationSignal load_vibration_signal(const std::string& path) {
  BinaryReader r(path);
  r.expect_magic("VSIG");
  const auto version = r.pod<std::uint16_t>();
  if (version != 1) throw std::runtime_error("unsupported VSIG version");
  VibrationSignal v;
  v.point_index = int(r.pod<std::uint32_t>());
  const auto T = r.pod<std::uint32_t>();
  v.rate_hz = r.pod<double>();
  v.samples.resize(2, T);
  for (int axis = 0; axis < 2; ++axis)
    for (std::uint32_t t = 0; t < T; ++t) v.samples(axis, t) = r.pod<float>();
  std::vector<std::uint8_t> mask((T + 7) / 8);
  r.array(mask.data(), mask.size());
  v.valid.assign(T, false);
  for (std::uint32_t t = 0; t < T; ++t)
    v.valid[t] = (mask[t / 8] >> (t % 8)) & 1u;
  return v;
}

}  // namespace vibro
