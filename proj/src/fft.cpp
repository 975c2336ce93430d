#include "vibrosense/fft.hpp"

#include <cmath>

namespace vibro::fft {

namespace {

bool is_pow2(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

void fft_radix2(std::vector<cd>& a, bool inverse) {
  const std::size_t n = a.size();
  // bit reversal
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = (inverse ? 2.0 : -2.0) * M_PI / double(len);
    const cd wlen(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      cd w(1.0, 0.0);
      for (std::size_t k = 0; k < len / 2; ++k) {
        const cd u = a[i + k];
        const cd v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wlen;
      }
    }
  }
}

void dft_direct(std::vector<cd>& a, bool inverse) {
  const std::size_t n = a.size();
  std::vector<cd> out(n, cd(0, 0));
  const double sgn = inverse ? 1.0 : -1.0;
  for (std::size_t k = 0; k < n; ++k) {
    for (std::size_t t = 0; t < n; ++t) {
      const double ang = sgn * 2.0 * M_PI * double(k * t % n) / double(n);
      out[k] += a[t] * cd(std::cos(ang), std::sin(ang));
    }
  }
  a = std::move(out);
}

}  // namespace

void transform(std::vector<cd>& a, bool inverse) {
  if (a.size() <= 1) return;
  if (is_pow2(a.size()))
    fft_radix2(a, inverse);
  else
    dft_direct(a, inverse);
}

void transform2d(Eigen::MatrixXcd& m, bool inverse) {
  const Eigen::Index rows = m.rows(), cols = m.cols();
  std::vector<cd> buf;
  buf.resize(std::size_t(cols));
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) buf[std::size_t(c)] = m(r, c);
    transform(buf, inverse);
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = buf[std::size_t(c)];
  }
  buf.resize(std::size_t(rows));
  for (Eigen::Index c = 0; c < cols; ++c) {
    for (Eigen::Index r = 0; r < rows; ++r) buf[std::size_t(r)] = m(r, c);
    transform(buf, inverse);
    for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = buf[std::size_t(r)];
  }
  if (inverse) m /= double(rows * cols);
}

Eigen::MatrixXcd forward2d(const Eigen::MatrixXd& m) {
  Eigen::MatrixXcd c = m.cast<cd>();
  transform2d(c, false);
  return c;
}

Eigen::MatrixXd inverse2d_real(const Eigen::MatrixXcd& m) {
  Eigen::MatrixXcd c = m;
  transform2d(c, true);
  return c.real();
}

std::vector<cd> czt(const std::vector<cd>& x, std::size_t m, double w0,
                    double dw) {
  const std::size_t n = x.size();
  std::size_t fft_n = 1;
  while (fft_n < n + m - 1) fft_n <<= 1;

  // chirp c_t = exp(-i*dw*t^2/2); X_k = conj(c_k') * sum_t [x_t e^{-i w0 t} c_t'] * h_{k-t}
  // with h_j = exp(+i*dw*j^2/2).
  auto chirp = [&](double j) { return std::polar(1.0, 0.5 * dw * j * j); };

  std::vector<cd> a(fft_n, cd(0, 0)), b(fft_n, cd(0, 0));
  for (std::size_t t = 0; t < n; ++t) {
    const double dt = double(t);
    a[t] = x[t] * std::polar(1.0, -w0 * dt) * std::conj(chirp(dt));
  }
  // kernel lags run over k - t in [-(n-1), m-1]; h is even in j
  for (std::size_t j = 0; j < m; ++j) b[j] = chirp(double(j));
  for (std::size_t j = 1; j < n; ++j) b[fft_n - j] = chirp(double(j));
  transform(a, false);
  transform(b, false);
  for (std::size_t i = 0; i < fft_n; ++i) a[i] *= b[i];
  transform(a, true);
  const double scale = 1.0 / double(fft_n);
  std::vector<cd> out(m);
  for (std::size_t k = 0; k < m; ++k)
    out[k] = a[k] * scale * std::conj(chirp(double(k)));
  return out;
}

}  // namespace vibro::fft
