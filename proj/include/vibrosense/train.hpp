#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "vibrosense/model.hpp"
#include "vibrosense/spectral.hpp"

namespace vibro {

inline const std::vector<double>& level_grid() {
  static const std::vector<double> L = {0.0, 0.2, 0.4, 0.6, 0.8, 1.0};
  return L;
}

struct SordTarget {
  Eigen::VectorXd q;  // 6 entries, sums to 1
};

// q_l[j] proportional to exp(-50 (l - L[j])^2).
SordTarget sord_target(double l);

// -q . log(p_hat) with p_hat clamped at 1e-12 inside the log.
double sord_loss(const Eigen::VectorXd& p_hat, const SordTarget& target);

// w_sord * sord + w_ce * class cross-entropy, both from raw logits.
double total_loss(const Eigen::VectorXd& class_logits,
                  const Eigen::VectorXd& level_logits, int class_id,
                  double level, const LossWeights& weights);

// L[argmax p_hat]; ties break toward the lower index.
double map_estimate(const Eigen::VectorXd& p_hat);

// sum_j L[j] * p_hat[j]
double expect_estimate(const Eigen::VectorXd& p_hat);

struct FilterAugment {
  int n_bumps = 6;
  double amp_nats = 0.7;       // amplitudes uniform in +-amp_nats
  double width_min_hz = 100.0;
  double width_max_hz = 600.0;
};

// Multiplies raw (pre-log) magnitudes by exp(g(f)), g a seeded sum of smooth
// Gaussian bumps; both axes share the filter. Apply before preprocessing.
SpectralFeature augment_filter(const SpectralFeature& s,
                               const FrequencyGrid& grid, std::uint64_t seed,
                               const FilterAugment& aug = {});

// Exactly round(rate*n_tokens) positions set true, uniformly at random.
Mask token_dropout(int n_tokens, double rate, std::uint64_t seed);

struct TrainConfig {
  double lr = 1e-5;
  int epochs = 300;
  int batch_size = 32;
  LossWeights weights;
  double token_dropout_rate = 0.5;
  FilterAugment filter;
  bool augment = true;
  std::uint64_t seed = 0;
  unsigned n_threads = 1;
  std::string log_path;  // optional per-epoch CSV
};

// Adam over the flat parameter vector; step() is the bias-corrected update.
struct AdamState {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  Eigen::VectorXd m, v;
  long t = 0;

  explicit AdamState(std::size_t n_params)
      : m(Eigen::VectorXd::Zero(Eigen::Index(n_params))),
        v(Eigen::VectorXd::Zero(Eigen::Index(n_params))) {}
  void step(TransformerParams& params, TransformerParams& grads, double lr);
};

// One dataset sample in the raw magnitude domain (before augmentation and
// preprocessing), with the labels and strata needed for splits.
struct TrainSample {
  std::vector<SpectralFeature> raw;  // one per point, un-preprocessed
  int class_id = 0;
  int instance = 0;
  double level = 0.0;
  std::string excitation;
  int speaker = 0;
};

TrainExample make_example(const TrainSample& s);  // preprocess, no masks

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double val_mae = 0.0;
  double val_class_acc = 0.0;
};

struct TrainResult {
  TransformerParams params;  // best validation checkpoint
  std::vector<EpochLog> log;
  int best_epoch = -1;
  double best_val_mae = 0.0;
};

// Adam loop over the training pool with the held-out speaker (the largest
// speaker id present) as validation. Deterministic in cfg.seed. Throws on
// divergence (loss > 10x initial for 20 consecutive epochs).
TrainResult train(const std::vector<TrainSample>& samples,
                  const ModelConfig& model_config, const TrainConfig& cfg,
                  const FrequencyGrid& grid);

void save_training_log(const std::vector<EpochLog>& log,
                       const std::string& path);

}  // namespace vibro
