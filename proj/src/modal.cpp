#include "vibrosense/modal.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>
#include <sstream>
#include <stdexcept>

#include "vibrosense/fft.hpp"
#include "vibrosense/io.hpp"
#include "vibrosense/rng.hpp"

namespace vibro {

namespace fs = std::filesystem;
using cd = std::complex<double>;

const char* excitation_name(ExcitationKind k) {
  switch (k) {
    case ExcitationKind::chirp:
      return "chirp";
    case ExcitationKind::song_surrogate:
      return "song_surrogate";
    case ExcitationKind::ambient_surrogate:
      return "ambient_surrogate";
  }
  return "?";
}

ExcitationKind excitation_from_name(const std::string& name) {
  if (name == "chirp") return ExcitationKind::chirp;
  if (name == "song_surrogate") return ExcitationKind::song_surrogate;
  if (name == "ambient_surrogate") return ExcitationKind::ambient_surrogate;
  throw std::invalid_argument("unknown excitation: " + name);
}

double resonant_freq(const ModeSpec& mode, double level) {
  if (level < 0.0 || level > 1.0)
    throw std::invalid_argument("level must be in [0, 1]");
  return mode.f_empty_hz / std::sqrt(1.0 + mode.beta * level);
}

namespace {

constexpr double kBandLo = 100.0;
constexpr double kBandHi = 2500.0;

// Raised-cosine band mask with ~50 Hz soft edges.
double band_mask(double f) {
  const double edge = 50.0;
  if (f < kBandLo - edge || f > kBandHi + edge) return 0.0;
  double m = 1.0;
  if (f < kBandLo) m *= 0.5 * (1.0 + std::cos(M_PI * (kBandLo - f) / edge));
  if (f > kBandHi) m *= 0.5 * (1.0 + std::cos(M_PI * (f - kBandHi) / edge));
  return m;
}

std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

// Seeded real noise with amplitude spectrum env(f), built directly in the
// frequency domain on a power-of-two ladder and truncated to n samples.
template <class Env>
Eigen::VectorXd spectral_noise(std::size_t n, double f_samp, Env env,
                               Rng& rng) {
  const std::size_t m = next_pow2(2 * n);
  std::vector<cd> spec(m, cd(0, 0));
  for (std::size_t k = 1; k < m / 2; ++k) {
    const double f = double(k) * f_samp / double(m);
    const double a = env(f);
    const cd v = a * cd(rng.normal(), rng.normal());
    spec[k] = v;
    spec[m - k] = std::conj(v);
  }
  fft::transform(spec, true);
  Eigen::VectorXd out{Eigen::Index(n)};
  for (std::size_t t = 0; t < n; ++t)
    out(Eigen::Index(t)) = spec[t].real() / double(m);
  return out;
}

void normalize_series(Eigen::VectorXd& x) {
  x.array() -= x.mean();
  const double rms = std::sqrt(x.squaredNorm() / double(x.size()));
  if (rms > 0.0) x /= rms;
}

}  // namespace

Eigen::VectorXd make_excitation(const Excitation& e) {
  if (e.f_samp_hz < 5100.0)
    throw std::invalid_argument("excitation sampling rate must be >= 5100 Hz");
  if (e.duration_s <= 0.0) throw std::invalid_argument("duration must be > 0");
  const auto n = std::size_t(std::llround(e.duration_s * e.f_samp_hz));
  Eigen::VectorXd x{Eigen::Index(n)};
  Rng rng(e.seed);

  switch (e.kind) {
    case ExcitationKind::chirp: {
      // log sweep: f(t) = f0 * k^t, phase = 2*pi*f0*(k^t - 1)/ln k
      const double k = std::pow(kBandHi / kBandLo, 1.0 / e.duration_s);
      const double lnk = std::log(k);
      for (std::size_t t = 0; t < n; ++t) {
        const double tt = double(t) / e.f_samp_hz;
        x(Eigen::Index(t)) = std::sin(
            2.0 * M_PI * kBandLo * (std::pow(k, tt) - 1.0) / lnk);
      }
      x.array() -= x.mean();
      break;
    }
    case ExcitationKind::song_surrogate: {
      // random piecewise-smooth log-amplitude envelope
      struct Bump {
        double center, width, amp;
      };
      std::vector<Bump> bumps(8);
      for (auto& b : bumps) {
        b.center = rng.uniform(kBandLo, kBandHi);
        b.width = rng.uniform(80.0, 500.0);
        b.amp = rng.uniform(-1.0, 1.0);
      }
      const double f_am = rng.uniform(0.5, 4.0);
      const double phi = rng.uniform(0.0, 2.0 * M_PI);
      x = spectral_noise(
          n, e.f_samp_hz,
          [&](double f) {
            double g = 0.0;
            for (const auto& b : bumps) {
              const double d = (f - b.center) / b.width;
              g += b.amp * std::exp(-0.5 * d * d);
            }
            return band_mask(f) * std::exp(g);
          },
          rng);
      for (std::size_t t = 0; t < n; ++t)
        x(Eigen::Index(t)) *=
            1.0 + 0.5 * std::sin(2.0 * M_PI * f_am * double(t) / e.f_samp_hz +
                                 phi);
      normalize_series(x);
      break;
    }
    case ExcitationKind::ambient_surrogate: {
      // pink noise: power ~ 1/f, i.e. -3 dB/octave, inside the band
      x = spectral_noise(
          n, e.f_samp_hz,
          [&](double f) { return band_mask(f) * std::sqrt(kBandLo / f); },
          rng);
      normalize_series(x);
      break;
    }
  }
  return x;
}

Eigen::VectorXd apply_speaker_filter(const Eigen::VectorXd& excitation,
                                     double f_samp_hz,
                                     std::uint64_t speaker_seed) {
  Rng rng(speaker_seed);
  struct Bump {
    double center, width, amp;
  };
  std::vector<Bump> bumps(6);
  const double six_db = std::log(10.0) * 6.0 / 20.0;  // +-6 dB in nats
  for (auto& b : bumps) {
    b.center = rng.uniform(kBandLo, kBandHi);
    b.width = rng.uniform(100.0, 600.0);
    b.amp = rng.uniform(-six_db, six_db);
  }
  const std::size_t n = std::size_t(excitation.size());
  const std::size_t m = next_pow2(2 * n);
  std::vector<cd> spec(m, cd(0, 0));
  for (std::size_t t = 0; t < n; ++t) spec[t] = excitation(Eigen::Index(t));
  fft::transform(spec, false);
  for (std::size_t k = 0; k < m; ++k) {
    const double f =
        (k <= m / 2 ? double(k) : double(m - k)) * f_samp_hz / double(m);
    double g = 0.0;
    for (const auto& b : bumps) {
      const double d = (f - b.center) / b.width;
      g += b.amp * std::exp(-0.5 * d * d);
    }
    spec[k] *= std::exp(g);
  }
  fft::transform(spec, true);
  Eigen::VectorXd out(excitation.size());
  for (std::size_t t = 0; t < n; ++t)
    out(Eigen::Index(t)) = spec[t].real() / double(m);
  return out;
}

SynthSample synthesize_response(const ContainerModel& model, double level,
                                const Excitation& e,
                                const Eigen::VectorXd& force,
                                double noise_sigma, std::uint64_t noise_seed) {
  if (model.modes.size() < 3)
    throw std::invalid_argument("container model needs at least 3 modes");
  const double ts = 1.0 / e.f_samp_hz;
  const Eigen::Index n = force.size();

  SynthSample sample;
  sample.class_id = model.class_id;
  sample.level = level;
  sample.kind = e.kind;

  Eigen::MatrixXd mixed(6, n);  // (point, axis) flattened x time
  mixed.setZero();

  for (const auto& mode : model.modes) {
    const double fr = resonant_freq(mode, level);
    if (fr >= e.f_samp_hz / 2.0)
      throw std::invalid_argument("resonant frequency above Nyquist");
    const double wn = 2.0 * M_PI * fr;
    const double wd = wn * std::sqrt(1.0 - mode.zeta * mode.zeta);
    const double p = std::exp(-mode.zeta * wn * ts);
    const double a1 = 2.0 * p * std::cos(wd * ts);
    const double a2 = -p * p;
    const double g = ts * wn / std::sqrt(1.0 - mode.zeta * mode.zeta) * p *
                     std::sin(wd * ts);
    // impulse-invariant second-order resonator
    double y1 = 0.0, y2 = 0.0, x1 = 0.0;
    Eigen::VectorXd y(n);
    for (Eigen::Index t = 0; t < n; ++t) {
      const double y0 = a1 * y1 + a2 * y2 + g * x1;
      y(t) = y0;
      y2 = y1;
      y1 = y0;
      x1 = force(t);
    }
    for (int i = 0; i < 3; ++i)
      for (int a = 0; a < 2; ++a) mixed.row(i * 2 + a) += mode.shape(i, a) * y;
  }

  for (int i = 0; i < 3; ++i) {
    VibrationSignal& v = sample.signals[std::size_t(i)];
    v.point_index = i;
    v.rate_hz = e.f_samp_hz;
    v.samples.resize(2, n);
    v.valid.assign(std::size_t(n), true);
    for (int a = 0; a < 2; ++a) {
      Eigen::VectorXd row = mixed.row(i * 2 + a);
      if (noise_sigma > 0.0) {
        Rng rng(mix_seed(noise_seed, std::uint64_t(i * 2 + a)));
        const double rms = std::sqrt(row.squaredNorm() / double(n));
        for (Eigen::Index t = 0; t < n; ++t)
          row(t) += noise_sigma * rms * rng.normal();
      }
      v.samples.row(a) = row.transpose();
    }
  }
  return sample;
}

ContainerModel instance_jitter(const ContainerModel& model,
                               std::uint64_t seed) {
  Rng rng(seed);
  ContainerModel out = model;
  out.jitter_seed = seed;
  for (auto& mode : out.modes) {
    mode.f_empty_hz *= 1.0 + rng.uniform(-0.02, 0.02);
    mode.zeta *= 1.0 + rng.uniform(-0.10, 0.10);
    Eigen::Matrix<double, 3, 2> noise;
    for (int i = 0; i < 3; ++i)
      for (int a = 0; a < 2; ++a) noise(i, a) = rng.normal();
    mode.shape += 0.05 * noise;
    mode.shape /= mode.shape.norm();
  }
  return out;
}

ContainerModel make_container_class(int class_id, std::uint64_t seed,
                                    bool hard) {
  Rng rng(seed);
  ContainerModel model;
  model.class_id = class_id;
  const int n_modes = hard ? 8 : 8 + int(rng.below(9));

  std::vector<double> freqs;
  while (true) {  // redraw until modes are >= 5 Hz apart
    freqs.clear();
    for (int k = 0; k < n_modes; ++k) freqs.push_back(rng.uniform(150.0, 2350.0));
    std::sort(freqs.begin(), freqs.end());
    bool ok = true;
    for (int k = 1; k < n_modes; ++k)
      if (freqs[std::size_t(k)] - freqs[std::size_t(k - 1)] < 6.0) ok = false;
    if (ok) break;
  }

  for (int k = 0; k < n_modes; ++k) {
    ModeSpec m;
    m.f_empty_hz = freqs[std::size_t(k)];
    m.beta = rng.uniform(0.3, 0.9);
    if (hard)
      m.zeta = (k == 0) ? 0.002 : rng.uniform(0.035, 0.05);
    else
      m.zeta = rng.uniform(0.004, 0.03);
    for (int i = 0; i < 3; ++i)
      for (int a = 0; a < 2; ++a) m.shape(i, a) = rng.normal();
    m.shape /= m.shape.norm();
    model.modes.push_back(m);
  }
  if (hard) {
    // put the dominant mode mid-band so its level sweep stays in range
    model.modes[0].f_empty_hz = 300.0 + 150.0 * double(class_id % 8) +
                                rng.uniform(-30.0, 30.0);
    std::sort(model.modes.begin(), model.modes.end(),
              [](const ModeSpec& a, const ModeSpec& b) {
                return a.f_empty_hz < b.f_empty_hz;
              });
  }
  // enforce the >= 5 Hz separation invariant after any repositioning
  for (std::size_t k = 1; k < model.modes.size(); ++k)
    if (model.modes[k].f_empty_hz - model.modes[k - 1].f_empty_hz < 5.0)
      model.modes[k].f_empty_hz = model.modes[k - 1].f_empty_hz + 6.0;
  return model;
}

namespace {

std::string format_level(double level) {
  std::ostringstream ss;
  ss << level;
  return ss.str();
}

}  // namespace

std::vector<ManifestRow> build_dataset(const DatasetRecipe& recipe,
                                       const std::string& out_dir) {
  fs::create_directories(out_dir);

  std::vector<ContainerModel> instances;  // class-major, instance-minor
  const int total_instances = recipe.n_instances + (recipe.emit_heldout ? 1 : 0);
  for (int c = 0; c < recipe.n_classes; ++c) {
    const ContainerModel base = make_container_class(
        c, mix_seed(recipe.seed, 0x636c7300ull + std::uint64_t(c)),
        c < recipe.n_hard_classes);
    for (int inst = 0; inst < total_instances; ++inst)
      instances.push_back(instance_jitter(
          base, mix_seed(recipe.seed,
                         0x696e7300ull + std::uint64_t(c * 1000 + inst))));
  }
  auto model_at = [&](int c, int inst) -> const ContainerModel& {
    return instances[std::size_t(c * total_instances + inst)];
  };

  struct Stratum {
    std::vector<int> instances;
    std::vector<double> levels;
    std::vector<ExcitationKind> excitations;
    std::vector<int> speakers;
  };
  auto iota = [](int lo, int hi) {
    std::vector<int> v;
    for (int i = lo; i < hi; ++i) v.push_back(i);
    return v;
  };

  std::vector<Stratum> strata;
  const auto both = std::vector<ExcitationKind>{
      ExcitationKind::chirp, ExcitationKind::song_surrogate};
  const auto ambient =
      std::vector<ExcitationKind>{ExcitationKind::ambient_surrogate};
  // training pool
  strata.push_back({iota(0, recipe.n_instances), standard_levels(), both,
                    iota(0, recipe.n_speakers)});
  if (recipe.emit_heldout) {
    const int few_inst = std::min(2, recipe.n_instances);
    const int few_spk = std::min(2, recipe.n_speakers);
    // intermediate levels
    strata.push_back({iota(0, few_inst), intermediate_levels(), both,
                      iota(0, few_spk)});
    // unseen instance
    strata.push_back({{recipe.n_instances}, standard_levels(), both,
                      iota(0, recipe.n_speakers)});
    // ambient excitation on seen instances / intermediate / unseen instance
    strata.push_back({iota(0, recipe.n_instances), standard_levels(), ambient,
                      iota(0, few_spk)});
    strata.push_back({iota(0, few_inst), intermediate_levels(), ambient,
                      iota(0, few_spk)});
    strata.push_back({{recipe.n_instances}, standard_levels(), ambient,
                      iota(0, few_spk)});
  }

  std::set<std::tuple<int, int, int, int, int>> keys;
  std::vector<ManifestRow> rows;
  int sample_id = 0;
  for (const auto& st : strata) {
    for (int c = 0; c < recipe.n_classes; ++c)
      for (int inst : st.instances)
        for (double level : st.levels)
          for (ExcitationKind kind : st.excitations)
            for (int spk : st.speakers) {
              const auto key = std::make_tuple(c, inst, int(level * 100 + 0.5),
                                               int(kind), spk);
              if (!keys.insert(key).second)
                throw std::invalid_argument(
                    "duplicate (class, instance, level, excitation, speaker) "
                    "key in recipe");
              const std::int32_t key_words[5] = {c, inst,
                                                 std::int32_t(level * 100 + 0.5),
                                                 std::int32_t(kind), spk};
              const std::uint64_t row_seed =
                  mix_seed(recipe.seed, fnv1a(key_words, sizeof(key_words)));

              Excitation exc{kind, recipe.duration_s, recipe.f_samp_hz,
                             mix_seed(row_seed, 0xe5ull)};
              Eigen::VectorXd force = make_excitation(exc);
              force = apply_speaker_filter(
                  force, recipe.f_samp_hz,
                  mix_seed(recipe.seed, 0x73706bull + std::uint64_t(spk)));
              SynthSample sample = synthesize_response(
                  model_at(c, inst), level, exc, force, recipe.noise_sigma,
                  mix_seed(row_seed, 0x6eull));
              sample.speaker_id = spk;

              char stem[64];
              std::snprintf(stem, sizeof(stem), "sample_%06d", sample_id);
              for (int i = 0; i < 3; ++i)
                save_vibration_signal(
                    sample.signals[std::size_t(i)],
                    (fs::path(out_dir) /
                     (std::string(stem) + "_p" + std::to_string(i) + ".vsig"))
                        .string());

              ManifestRow row;
              row.sample_id = sample_id++;
              row.class_id = c;
              row.instance = inst;
              row.level = level;
              row.excitation = excitation_name(kind);
              row.speaker = spk;
              row.seed = row_seed;
              row.path = (fs::path(out_dir) / stem).string();
              rows.push_back(row);
            }
  }
  save_manifest(rows, (fs::path(out_dir) / "manifest.csv").string());
  return rows;
}

void save_manifest(const std::vector<ManifestRow>& rows,
                   const std::string& path) {
  std::ostringstream out;
  out << "sample_id,class,instance,level,excitation,speaker,seed,path\n";
  for (const auto& r : rows) {
    out << r.sample_id << ',' << r.class_id << ',' << r.instance << ','
        << format_level(r.level) << ',' << r.excitation << ',' << r.speaker
        << ',' << r.seed << ',' << fs::path(r.path).filename().string()
        << '\n';
  }
  write_text_file(path, out.str());
}

std::vector<ManifestRow> load_manifest(const std::string& path) {
  const std::string text = read_text_file(path);
  const fs::path dir = fs::path(path).parent_path();
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("empty manifest");
  std::vector<ManifestRow> rows;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    const auto f = split_csv_line(line);
    if (f.size() != 8) throw std::runtime_error("bad manifest row: " + line);
    ManifestRow r;
    r.sample_id = std::stoi(f[0]);
    r.class_id = std::stoi(f[1]);
    r.instance = std::stoi(f[2]);
    r.level = std::stod(f[3]);
    r.excitation = f[4];
    r.speaker = std::stoi(f[5]);
    r.seed = std::stoull(f[6]);
    r.path = (dir / f[7]).string();
    rows.push_back(r);
  }
  return rows;
}

SynthSample load_sample_signals(const ManifestRow& row) {
  SynthSample s;
  s.class_id = row.class_id;
  s.level = row.level;
  s.kind = excitation_from_name(row.excitation);
  s.speaker_id = row.speaker;
  for (int i = 0; i < 3; ++i)
    s.signals[std::size_t(i)] =
        load_vibration_signal(row.path + "_p" + std::to_string(i) + ".vsig");
  return s;
}

}  // namespace vibro
