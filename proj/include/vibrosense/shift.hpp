#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "vibrosense/speckle.hpp"

namespace vibro {

struct ShiftEstimate {
  Eigen::Vector2d delta = Eigen::Vector2d::Zero();  // (dx, dy) px
  bool converged = false;
  int iterations = 0;
  double residual = 0.0;  // final normalized SSD
};

// Two-axis shift samples recovered at one grid point. Row 0 is the x axis,
// row 1 the y axis. valid[t] is false where the estimator fell back to
// hold-last-value.
struct VibrationSignal {
  Eigen::Matrix2Xd samples;
  double rate_hz = 0.0;
  int point_index = 0;
  std::vector<bool> valid;
};

struct PclkOptions {
  bool hann_window = true;
  double update_tol_px = 1e-3;
  int max_iterations = 20;
  double residual_tol = 0.25;
  double condition_limit = 1e8;
};

struct PhaseCorrResult {
  Eigen::Vector2i shift = Eigen::Vector2i::Zero();
  bool ok = false;  // false for degenerate (zero-variance) input
};

// Integer shift via the argmax of the inverse-transformed normalized
// cross-power spectrum, unfolded into (-size/2, size/2]. Returns the delta
// such that b approximates a translated by +delta.
PhaseCorrResult phase_correlate(const Eigen::MatrixXd& a,
                                const Eigen::MatrixXd& b,
                                bool hann_window = true);

// Gauss-Newton refinement of a translation-only warp, bilinear sampling,
// central-difference gradients, interior crop of max(4, ceil(|init|)) px.
ShiftEstimate lk_refine(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                        const Eigen::Vector2d& init,
                        const PclkOptions& opt = {});

// Phase correlation seeding Lucas-Kanade. Throws std::invalid_argument on
// degenerate patches and std::domain_error when |shift| > min(size)/4.
ShiftEstimate pclk(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                   const PclkOptions& opt = {});

// Consecutive-frame shifts for every grid point, 2x(T-1) per point.
// Numerically identical to the serial per-pair loop; per-point failures
// hold the last valid sample and clear the validity flag.
std::vector<VibrationSignal> pclk_batch(const FrameSequence& seq,
                                        const PclkOptions& opt = {},
                                        unsigned n_threads = 0);

void save_vibration_signal(const VibrationSignal& v, const std::string& path);
VibrationSignal load_vibration_signal(const std::string& path);

}  // namespace vibro
