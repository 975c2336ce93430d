#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "vibrosense/shift.hpp"

namespace vibro {

// One damped vibration mode of a container. shape(i, a) is the modal
// amplitude at surface point i, axis a; unit Frobenius norm.
struct ModeSpec {
  double f_empty_hz = 0.0;  // resonance of the empty container
  double beta = 0.0;        // added-mass coefficient
  double zeta = 0.01;       // damping ratio
  Eigen::Matrix<double, 3, 2> shape = Eigen::Matrix<double, 3, 2>::Zero();
};

struct ContainerModel {
  int class_id = 0;
  int instance_id = 0;
  std::uint64_t jitter_seed = 0;
  std::vector<ModeSpec> modes;
};

enum class ExcitationKind { chirp, song_surrogate, ambient_surrogate };

const char* excitation_name(ExcitationKind k);
ExcitationKind excitation_from_name(const std::string& name);

struct Excitation {
  ExcitationKind kind = ExcitationKind::chirp;
  double duration_s = 2.0;
  double f_samp_hz = 5100.0;
  std::uint64_t seed = 0;
};

struct SynthSample {
  std::array<VibrationSignal, 3> signals;
  int class_id = 0;
  double level = 0.0;
  ExcitationKind kind = ExcitationKind::chirp;
  int speaker_id = 0;
};

// Added-mass law: f_empty / sqrt(1 + beta*l).
double resonant_freq(const ModeSpec& mode, double level);

// chirp: unit log sweep 100->2500 Hz. song_surrogate: seeded colored noise
// with a random smooth spectral envelope and slow amplitude modulation.
// ambient_surrogate: seeded pink noise band-limited to [100, 2500] Hz.
// All zero-mean.
Eigen::VectorXd make_excitation(const Excitation& e);

// Random smooth speaker magnitude response: six log-domain Gaussian bumps,
// amplitudes within +-6 dB. Applied to the excitation spectrum.
Eigen::VectorXd apply_speaker_filter(const Eigen::VectorXd& excitation,
                                     double f_samp_hz,
                                     std::uint64_t speaker_seed);

// Drives each mode as a second-order resonator (impulse-invariant
// discretization) and projects through the mode shapes onto 3 points x 2
// axes, plus Gaussian sensor noise of std noise_sigma * signal RMS.
SynthSample synthesize_response(const ContainerModel& model, double level,
                                const Excitation& e,
                                const Eigen::VectorXd& force,
                                double noise_sigma, std::uint64_t noise_seed);

// Manufacturing jitter: f_empty * (1 +- 2%), zeta * (1 +- 10%), shape
// perturbed by renormalized Gaussian of std 0.05. Deterministic in seed.
ContainerModel instance_jitter(const ContainerModel& model,
                               std::uint64_t seed);

// Seeded parametric class draw: 8-16 modes, frequencies >= 5 Hz apart.
// Hard classes get a single dominant high-Q mode (the failure mode where
// instance jitter moves a lone resonance more than a level change does).
ContainerModel make_container_class(int class_id, std::uint64_t seed,
                                    bool hard = false);

inline const std::vector<double>& standard_levels() {
  static const std::vector<double> L = {0.0, 0.2, 0.4, 0.6, 0.8, 1.0};
  return L;
}
inline const std::vector<double>& intermediate_levels() {
  static const std::vector<double> L = {0.25, 0.50, 0.75};
  return L;
}

struct DatasetRecipe {
  int n_classes = 8;
  int n_instances = 4;  // training-pool instances; one extra is held out
  int n_speakers = 5;
  int n_hard_classes = 0;  // first n classes drawn as "hard"
  double duration_s = 2.0;
  double f_samp_hz = 5100.0;
  double noise_sigma = 0.01;
  std::uint64_t seed = 0;
  bool emit_heldout = true;  // intermediate levels, unseen instance, ambient
};

struct ManifestRow {
  int sample_id = 0;
  int class_id = 0;
  int instance = 0;
  double level = 0.0;
  std::string excitation;
  int speaker = 0;
  std::uint64_t seed = 0;
  std::string path;  // sample stem; signals at <stem>_p{0,1,2}.vsig
};

// Synthesizes every recipe row into <out_dir> and writes manifest.csv.
std::vector<ManifestRow> build_dataset(const DatasetRecipe& recipe,
                                       const std::string& out_dir);

std::vector<ManifestRow> load_manifest(const std::string& path);
void save_manifest(const std::vector<ManifestRow>& rows,
                   const std::string& path);

SynthSample load_sample_signals(const ManifestRow& row);

}  // namespace vibro
