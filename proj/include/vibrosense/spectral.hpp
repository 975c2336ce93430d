#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>

#include "vibrosense/shift.hpp"

namespace vibro {

// Ordered evaluation frequencies in Hz. The default grid is 4800 points
// from 100.0 Hz in 0.5 Hz steps (so 48 tokens x 100 bins downstream).
struct FrequencyGrid {
  Eigen::VectorXd frequencies;

  static FrequencyGrid standard();
  // true when the grid is an arithmetic progression (fast chirp-Z path)
  bool uniform_step(double* step) const;
  std::uint64_t hash() const;
};

struct SpectralFeature {
  Eigen::MatrixXd magnitudes;  // 2 x grid size; row 0 = x axis, row 1 = y
  int point_index = 0;
  std::uint64_t grid_hash = 0;
  bool standardized = false;
  bool zero_variance = false;
};

// DTFT magnitude of the mean-removed signal evaluated exactly at every grid
// frequency, normalized by T (two-sided convention: a unit sinusoid on a
// grid frequency yields 0.5). Uniformly spaced grids go through a chirp-Z
// transform; arbitrary grids through a Goertzel recurrence. Both are exact
// per-frequency evaluations.
SpectralFeature featurize(const VibrationSignal& v, const FrequencyGrid& grid);

// log1p then per-sample standardization over all entries. Zero-variance
// inputs are passed through with the flag set.
SpectralFeature preprocess_feature(const SpectralFeature& s);

void save_spectral_feature(const SpectralFeature& s, const std::string& path);
SpectralFeature load_spectral_feature(const std::string& path);

}  // namespace vibro
