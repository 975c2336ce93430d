#include "vibrosense/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <stdexcept>

#include "vibrosense/rng.hpp"

namespace vibro {

SordTarget sord_target(double l) {
  if (l < 0.0 || l > 1.0)
    throw std::invalid_argument("level outside [0, 1]");
  const auto& L = level_grid();
  Eigen::VectorXd q(Eigen::Index(L.size()));
  for (std::size_t j = 0; j < L.size(); ++j) {
    const double d = l - L[j];
    q(Eigen::Index(j)) = std::exp(-50.0 * d * d);
  }
  q /= q.sum();
  return {q};
}

double sord_loss(const Eigen::VectorXd& p_hat, const SordTarget& target) {
  if (p_hat.size() != target.q.size())
    throw std::invalid_argument("distribution size mismatch");
  double loss = 0.0;
  for (Eigen::Index j = 0; j < p_hat.size(); ++j)
    loss -= target.q(j) * std::log(std::max(p_hat(j), 1e-12));
  return loss;
}

namespace {

Eigen::VectorXd softmax(const Eigen::VectorXd& z) {
  const Eigen::ArrayXd e = (z.array() - z.maxCoeff()).exp();
  return (e / e.sum()).matrix();
}

}  // namespace

double total_loss(const Eigen::VectorXd& class_logits,
                  const Eigen::VectorXd& level_logits, int class_id,
                  double level, const LossWeights& weights) {
  if (weights.w_sord < 0.0 || weights.w_ce < 0.0 ||
      weights.w_sord + weights.w_ce <= 0.0)
    throw std::invalid_argument("invalid loss weights");
  if (class_id < 0 || class_id >= class_logits.size())
    throw std::invalid_argument("class label out of range");
  const Eigen::VectorXd pc = softmax(class_logits);
  const double ce = -std::log(std::max(pc(class_id), 1e-12));
  const double sord = sord_loss(softmax(level_logits), sord_target(level));
  return weights.w_sord * sord + weights.w_ce * ce;
}

double map_estimate(const Eigen::VectorXd& p_hat) {
  const auto& L = level_grid();
  Eigen::Index best = 0;
  for (Eigen::Index j = 1; j < p_hat.size(); ++j)
    if (p_hat(j) > p_hat(best)) best = j;  // strict: ties keep lower index
  return L[std::size_t(best)];
}

double expect_estimate(const Eigen::VectorXd& p_hat) {
  const auto& L = level_grid();
  double e = 0.0;
  for (Eigen::Index j = 0; j < p_hat.size(); ++j) e += L[std::size_t(j)] * p_hat(j);
  return e;
}

SpectralFeature augment_filter(const SpectralFeature& s,
                               const FrequencyGrid& grid, std::uint64_t seed,
                               const FilterAugment& aug) {
  if (s.magnitudes.cols() != grid.frequencies.size())
    throw std::invalid_argument("feature does not match the grid");
  Rng rng(seed);
  const double f_lo = grid.frequencies(0);
  const double f_hi = grid.frequencies(grid.frequencies.size() - 1);
  Eigen::ArrayXd g = Eigen::ArrayXd::Zero(grid.frequencies.size());
  for (int b = 0; b < aug.n_bumps; ++b) {
    const double center = rng.uniform(f_lo, f_hi);
    const double width = rng.uniform(aug.width_min_hz, aug.width_max_hz);
    const double amp = rng.uniform(-aug.amp_nats, aug.amp_nats);
    g += amp * (-0.5 * ((grid.frequencies.array() - center) / width).square())
                   .exp();
  }
  SpectralFeature out = s;
  const Eigen::ArrayXd gain = g.exp();
  out.magnitudes.row(0).array() *= gain.transpose();
  out.magnitudes.row(1).array() *= gain.transpose();
  return out;
}

Mask token_dropout(int n_tokens, double rate, std::uint64_t seed) {
  if (rate < 0.0 || rate >= 1.0)
    throw std::invalid_argument("dropout rate must lie in [0, 1)");
  const int k = int(std::lround(rate * n_tokens));
  Mask mask(std::size_t(n_tokens), false);
  if (k == 0) return mask;
  // partial Fisher-Yates: the first k entries of a random permutation
  std::vector<int> idx(static_cast<std::size_t>(n_tokens));
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  for (int i = 0; i < k; ++i) {
    const std::size_t j =
        std::size_t(i) + std::size_t(rng.below(std::uint64_t(n_tokens - i)));
    std::swap(idx[std::size_t(i)], idx[j]);
    mask[std::size_t(idx[std::size_t(i)])] = true;
  }
  return mask;
}

void AdamState::step(TransformerParams& params, TransformerParams& grads,
                     double lr) {
  ++t;
  const double bc1 = 1.0 - std::pow(beta1, double(t));
  const double bc2 = 1.0 - std::pow(beta2, double(t));
  auto pb = params.blocks();
  auto gb = grads.blocks();
  Eigen::Index off = 0;
  for (std::size_t i = 0; i < pb.size(); ++i) {
    const Eigen::Index n = Eigen::Index(pb[i].size);
    Eigen::Map<Eigen::ArrayXd> p(pb[i].data, n);
    Eigen::Map<const Eigen::ArrayXd> g(gb[i].data, n);
    Eigen::Map<Eigen::ArrayXd> mi(m.data() + off, n);
    Eigen::Map<Eigen::ArrayXd> vi(v.data() + off, n);
    mi = beta1 * mi + (1.0 - beta1) * g;
    vi = beta2 * vi + (1.0 - beta2) * g.square();
    p -= lr * (mi / bc1) / ((vi / bc2).sqrt() + eps);
    off += n;
  }
  if (off != m.size()) throw std::logic_error("optimizer shape mismatch");
}

TrainExample make_example(const TrainSample& s) {
  TrainExample ex;
  ex.class_id = s.class_id;
  ex.level = s.level;
  ex.features.reserve(s.raw.size());
  for (const auto& f : s.raw)
    ex.features.push_back(preprocess_feature(f).magnitudes);
  return ex;
}

void save_training_log(const std::vector<EpochLog>& log,
                       const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "epoch,train_loss,val_mae,val_class_acc\n";
  for (const auto& row : log)
    out << row.epoch << ',' << row.train_loss << ',' << row.val_mae << ','
        << row.val_class_acc << '\n';
}

TrainResult train(const std::vector<TrainSample>& samples,
                  const ModelConfig& model_config, const TrainConfig& cfg,
                  const FrequencyGrid& grid) {
  if (samples.empty()) throw std::invalid_argument("empty dataset");
  if (cfg.lr <= 0.0 || cfg.epochs <= 0 || cfg.batch_size <= 0)
    throw std::invalid_argument("invalid training configuration");
  model_config.validate();

  // validation = the largest speaker id present, held out across classes
  int val_speaker = samples.front().speaker;
  for (const auto& s : samples) val_speaker = std::max(val_speaker, s.speaker);
  std::vector<std::size_t> train_idx, val_idx;
  for (std::size_t i = 0; i < samples.size(); ++i)
    (samples[i].speaker == val_speaker ? val_idx : train_idx).push_back(i);
  if (train_idx.empty() || val_idx.empty())
    throw std::invalid_argument("need at least two speakers for validation");

  std::vector<TrainExample> val_examples;
  val_examples.reserve(val_idx.size());
  for (std::size_t i : val_idx) val_examples.push_back(make_example(samples[i]));

  TransformerParams params =
      TransformerParams::init(model_config, mix_seed(cfg.seed, 0x9d1a));
  TransformerParams grads = TransformerParams::zeros(model_config);
  AdamState opt(params.parameter_count());

  TrainResult res;
  res.params = params;
  double initial_loss = 0.0;
  int diverged_epochs = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const std::uint64_t epoch_seed = mix_seed(cfg.seed, std::uint64_t(epoch));
    std::vector<std::size_t> order = train_idx;
    Rng shuffle_rng(mix_seed(epoch_seed, 0x5u));
    for (std::size_t i = order.size(); i > 1; --i) {
      const std::size_t j = std::size_t(shuffle_rng.below(i));
      std::swap(order[i - 1], order[j]);
    }

    double loss_sum = 0.0;
    std::size_t n_batches = 0;
    for (std::size_t start = 0; start < order.size();
         start += std::size_t(cfg.batch_size)) {
      const std::size_t end =
          std::min(order.size(), start + std::size_t(cfg.batch_size));
      std::vector<TrainExample> batch;
      batch.reserve(end - start);
      for (std::size_t bi = start; bi < end; ++bi) {
        const TrainSample& s = samples[order[bi]];
        const std::uint64_t sseed = mix_seed(epoch_seed, order[bi]);
        TrainExample ex;
        ex.class_id = s.class_id;
        ex.level = s.level;
        for (std::size_t p = 0; p < s.raw.size(); ++p) {
          SpectralFeature f = s.raw[p];
          if (cfg.augment)
            f = augment_filter(f, grid, mix_seed(sseed, 0x100 + p), cfg.filter);
          ex.features.push_back(preprocess_feature(f).magnitudes);
          ex.token_masks.push_back(token_dropout(model_config.n_tokens,
                                                 cfg.token_dropout_rate,
                                                 mix_seed(sseed, 0x200 + p)));
        }
        batch.push_back(std::move(ex));
      }
      loss_sum += grad(params, batch, cfg.weights, grads, cfg.n_threads);
      ++n_batches;
      opt.step(params, grads, cfg.lr);
    }
    const double train_loss = loss_sum / double(n_batches);
    if (epoch == 0) initial_loss = train_loss;
    diverged_epochs = train_loss > 10.0 * initial_loss ? diverged_epochs + 1 : 0;
    if (diverged_epochs >= 20)
      throw std::runtime_error("training diverged (loss > 10x initial)");

    double abs_err = 0.0;
    int correct = 0;
    for (const auto& ex : val_examples) {
      const PredictionResult pr = forward(ex.features, params);
      abs_err += std::abs(pr.l_map - ex.level);
      Eigen::Index amax = 0;
      pr.class_logits.maxCoeff(&amax);
      if (int(amax) == ex.class_id) ++correct;
    }
    EpochLog row;
    row.epoch = epoch;
    row.train_loss = train_loss;
    row.val_mae = abs_err / double(val_examples.size());
    row.val_class_acc = double(correct) / double(val_examples.size());
    res.log.push_back(row);

    if (res.best_epoch < 0 || row.val_mae < res.best_val_mae) {
      res.best_epoch = epoch;
      res.best_val_mae = row.val_mae;
      res.params = params;
    }
  }
  if (!cfg.log_path.empty()) save_training_log(res.log, cfg.log_path);
  return res;
}

}  // namespace vibro
