#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

namespace vibro {

// Band-limited synthetic speckle patch, unit mean intensity.
struct SpecklePattern {
  Eigen::MatrixXd intensity;  // rows x cols, all >= 0
  double grain_size_px = 0.0;
  std::uint64_t seed = 0;
};

struct CameraConfig {
  int full_height_px = 1080;
  int full_width_px = 1440;
  int roi_count = 6;      // m, number of laser-point rows read out
  int roi_height_px = 6;  // h
  double full_rate_hz = 2247.0;
};

// Per-frame-step shift (dx, dy) in pixels.
struct ShiftTrajectory {
  std::vector<Eigen::Vector2d> shifts;
  static constexpr double kMaxStepPx = 2.0;
};

// Rendered capture: frames[t][p] is the patch at grid point p, frame t.
// ground_truth[p] holds the T-1 inter-frame shifts for point p.
struct FrameSequence {
  std::vector<std::vector<Eigen::MatrixXf>> frames;
  std::vector<ShiftTrajectory> ground_truth;
  int patch_rows = 0;
  int patch_cols = 0;
  double noise_sigma = 0.0;
  double rate_hz = 0.0;
};

// |low-pass complex circular-Gaussian field|^2, normalized to unit mean.
// Throws std::invalid_argument for size < 16x16 or grain_size_px < 2.
SpecklePattern generate_speckle(std::uint64_t seed, int rows, int cols,
                                double grain_size_px);

// Translation by delta=(dx,dy) via a frequency-domain phase ramp with
// periodic boundary. Exact for band-limited inputs.
SpecklePattern shift_pattern(const SpecklePattern& p,
                             const Eigen::Vector2d& delta);

// Renders one patch per grid point per frame: frame t = base shifted by the
// cumulative trajectory, plus i.i.d. Gaussian noise of std noise_sigma*mean.
FrameSequence render_sequence(const std::vector<SpecklePattern>& base,
                              const std::vector<ShiftTrajectory>& trajectories,
                              double rate_hz, double noise_sigma,
                              std::uint64_t noise_seed);

// Nominal ROI readout rate: full_rate * H / (m*h). Optimistic upper bound;
// real cameras fall short of it.
double roi_rate_model(const CameraConfig& config);

// Fraction of intensity-spectrum energy above spatial frequency
// 1/(2*grain_size_px) cycles/px (band-limit diagnostic).
double out_of_band_energy_fraction(const SpecklePattern& p);

void save_frame_sequence(const FrameSequence& seq, const std::string& path);
FrameSequence load_frame_sequence(const std::string& path);

}  // namespace vibro
