#pragma once

#include <Eigen/Dense>
#include <complex>
#include <vector>

namespace vibro::fft {

using cd = std::complex<double>;

// In-place complex transform of arbitrary length: iterative radix-2 for
// powers of two, direct DFT otherwise (patch dimensions here are tiny).
void transform(std::vector<cd>& a, bool inverse);

// 2D transform of a complex matrix (rows then columns). Inverse includes
// the 1/(rows*cols) normalization.
void transform2d(Eigen::MatrixXcd& m, bool inverse);

// Forward 2D transform of a real matrix.
Eigen::MatrixXcd forward2d(const Eigen::MatrixXd& m);

// Real part of the inverse 2D transform.
Eigen::MatrixXd inverse2d_real(const Eigen::MatrixXcd& m);

// Chirp-Z transform: evaluates X_k = sum_t x_t * exp(-i*(w0 + k*dw)*t) for
// k in [0, m) via Bluestein's algorithm. Exact DTFT evaluation on a uniform
// angular-frequency ladder; cost O(n log n) independent of m's structure.
std::vector<cd> czt(const std::vector<cd>& x, std::size_t m, double w0,
                    double dw);

}  // namespace vibro::fft
