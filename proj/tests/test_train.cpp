#include "doctest.h"

#include <cmath>
#include <set>

#include "vibrosense/rng.hpp"
#include "vibrosense/train.hpp"

using namespace vibro;

namespace {

Eigen::VectorXd uniform6() {
  return Eigen::VectorXd::Constant(6, 1.0 / 6.0);
}

}  // namespace

TEST_CASE("sord target matches the closed form at l = 0.2") {
  const SordTarget t = sord_target(0.2);
  REQUIRE(t.q.size() == 6);
  // hand-evaluated: exp(-50 d^2) over d = {0.2, 0, 0.2, 0.4, 0.6, 0.8},
  // normalized
  CHECK(t.q(0) == doctest::Approx(0.1064788668).epsilon(1e-9));
  CHECK(t.q(1) == doctest::Approx(0.7867783198).epsilon(1e-9));
  CHECK(t.q(2) == doctest::Approx(0.1064788668).epsilon(1e-9));
  CHECK(t.q(3) == doctest::Approx(0.0002639347227).epsilon(1e-9));
  CHECK(t.q(4) == doctest::Approx(1.198261787e-08).epsilon(1e-6));
  CHECK(t.q(5) == doctest::Approx(9.963890892e-15).epsilon(1e-6));
  CHECK(t.q.sum() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("sord targets honor the grid symmetries") {
  const SordTarget lo = sord_target(0.0);
  const SordTarget hi = sord_target(1.0);
  for (int j = 0; j < 6; ++j)
    CHECK(lo.q(j) == doctest::Approx(hi.q(5 - j)).epsilon(1e-12));
  CHECK(lo.q(0) == doctest::Approx(0.88053689).epsilon(1e-9));
  // midpoints split their mass evenly between the two nearest levels
  const SordTarget mid = sord_target(0.3);
  CHECK(mid.q(1) == doctest::Approx(mid.q(2)).epsilon(1e-12));
  CHECK(mid.q(1) == doctest::Approx(0.4910054137).epsilon(1e-9));
  CHECK_THROWS_AS(sord_target(-0.01), std::invalid_argument);
  CHECK_THROWS_AS(sord_target(1.01), std::invalid_argument);
}

TEST_CASE("sord targets are valid distributions across the unit interval") {
  Rng rng(1234);
  for (int i = 0; i < 1000; ++i) {
    const double l = rng.uniform(0.0, 1.0);
    const SordTarget t = sord_target(l);
    CHECK(t.q.minCoeff() >= 0.0);
    CHECK(t.q.sum() == doctest::Approx(1.0).epsilon(1e-12));
    // mass concentrates near l: the argmax must be one of the two
    // bracketing grid levels
    Eigen::Index amax = 0;
    t.q.maxCoeff(&amax);
    CHECK(std::abs(level_grid()[std::size_t(amax)] - l) <= 0.1 + 1e-12);
  }
}

TEST_CASE("sord loss of a target against itself is its entropy") {
  const SordTarget t = sord_target(0.2);
  CHECK(sord_loss(t.q, t) == doctest::Approx(0.667835908249).epsilon(1e-9));
  // uniform prediction scores log 6 against any target
  CHECK(sord_loss(uniform6(), t) ==
        doctest::Approx(std::log(6.0)).epsilon(1e-12));
  CHECK(sord_loss(uniform6(), sord_target(0.9)) ==
        doctest::Approx(std::log(6.0)).epsilon(1e-12));
  // cross-entropy >= entropy (Gibbs)
  CHECK(sord_loss(sord_target(0.4).q, t) > sord_loss(t.q, t));
}

TEST_CASE("sord loss clamps vanishing predicted mass") {
  Eigen::VectorXd p = Eigen::VectorXd::Zero(6);
  p(1) = 1.0;
  const double loss = sord_loss(p, sord_target(0.0));
  CHECK(std::isfinite(loss));
  // the zero bins contribute q_j * log(1e-12)
  CHECK(loss > 0.0);
  Eigen::VectorXd bad = Eigen::VectorXd::Zero(5);
  CHECK_THROWS_AS(sord_loss(bad, sord_target(0.0)), std::invalid_argument);
}

TEST_CASE("total loss combines both heads with the given weights") {
  Eigen::VectorXd cls = Eigen::VectorXd::Zero(4);
  Eigen::VectorXd lvl = Eigen::VectorXd::Zero(6);
  LossWeights w;
  w.w_sord = 0.9;
  w.w_ce = 0.1;
  // both logits uniform: ce = log 4, sord = log 6
  const double expected = 0.9 * std::log(6.0) + 0.1 * std::log(4.0);
  CHECK(total_loss(cls, lvl, 2, 0.4, w) == doctest::Approx(expected));
  LossWeights sord_only;
  sord_only.w_sord = 1.0;
  sord_only.w_ce = 0.0;
  CHECK(total_loss(cls, lvl, 0, 0.4, sord_only) ==
        doctest::Approx(std::log(6.0)));
  LossWeights bad;
  bad.w_sord = 0.0;
  bad.w_ce = 0.0;
  CHECK_THROWS_AS(total_loss(cls, lvl, 0, 0.4, bad), std::invalid_argument);
  CHECK_THROWS_AS(total_loss(cls, lvl, 9, 0.4, w), std::invalid_argument);
}

TEST_CASE("MAP and expectation estimators agree with hand values") {
  Eigen::VectorXd p(6);
  p << 0.05, 0.1, 0.5, 0.2, 0.1, 0.05;
  CHECK(map_estimate(p) == 0.4);
  CHECK(expect_estimate(p) ==
        doctest::Approx(0.2 * 0.1 + 0.4 * 0.5 + 0.6 * 0.2 + 0.8 * 0.1 + 0.05));
  // MAP ties break to the lower level
  Eigen::VectorXd tie(6);
  tie << 0.3, 0.3, 0.1, 0.1, 0.1, 0.1;
  CHECK(map_estimate(tie) == 0.0);
  // expectation of a sord target lands near the on-grid level; endpoints
  // are pulled inward by the neighbor's tail mass (~0.024)
  for (double l : level_grid())
    CHECK(std::abs(expect_estimate(sord_target(l).q) - l) <= 0.025);
  CHECK(expect_estimate(sord_target(0.3).q) ==
        doctest::Approx(0.300001508434).epsilon(1e-9));
}

TEST_CASE("filter augmentation is seeded, positive, and bounded") {
  Rng rng(7);
  SpectralFeature s;
  s.magnitudes.resize(2, 4800);
  for (int k = 0; k < 4800; ++k)
    for (int a = 0; a < 2; ++a) s.magnitudes(a, k) = std::abs(rng.normal());
  const FrequencyGrid g = FrequencyGrid::standard();
  const SpectralFeature a1 = augment_filter(s, g, 55);
  const SpectralFeature a2 = augment_filter(s, g, 55);
  const SpectralFeature a3 = augment_filter(s, g, 56);
  CHECK(a1.magnitudes == a2.magnitudes);
  CHECK(a1.magnitudes != a3.magnitudes);
  // six bumps of +-0.7 nats bound the gain by e^{+-4.2}
  const Eigen::ArrayXXd ratio = a1.magnitudes.array() / s.magnitudes.array();
  CHECK(ratio.minCoeff() > std::exp(-4.2) - 1e-12);
  CHECK(ratio.maxCoeff() < std::exp(4.2) + 1e-12);
  // both axes share one filter
  CHECK((ratio.row(0) - ratio.row(1)).abs().maxCoeff() < 1e-9);
  // zero amplitude bumps are the identity
  FilterAugment null_aug;
  null_aug.amp_nats = 0.0;
  const SpectralFeature id = augment_filter(s, g, 55, null_aug);
  CHECK((id.magnitudes - s.magnitudes).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("token dropout masks exactly round(rate * n) positions") {
  for (double rate : {0.0, 0.25, 0.5, 0.9}) {
    const Mask m = token_dropout(48, rate, 3);
    int k = 0;
    for (bool b : m) k += b ? 1 : 0;
    CHECK(k == int(std::lround(rate * 48)));
  }
  CHECK(token_dropout(48, 0.5, 3) == token_dropout(48, 0.5, 3));
  CHECK(token_dropout(48, 0.5, 3) != token_dropout(48, 0.5, 4));
  CHECK_THROWS_AS(token_dropout(48, 1.0, 3), std::invalid_argument);
  CHECK_THROWS_AS(token_dropout(48, -0.1, 3), std::invalid_argument);
  // positions are spread out, not a fixed prefix: over many seeds every
  // position gets masked at least once
  std::set<int> seen;
  for (int s = 0; s < 200; ++s) {
    const Mask m = token_dropout(48, 0.5, std::uint64_t(s));
    for (int i = 0; i < 48; ++i)
      if (m[std::size_t(i)]) seen.insert(i);
  }
  CHECK(seen.size() == 48);
}

TEST_CASE("Adam takes no step on a zero gradient") {
  ModelConfig c;
  c.d_model = 16;
  c.n_heads = 4;
  c.n_layers_point = 1;
  c.n_layers_shape = 1;
  c.head_hidden = 8;
  c.n_tokens = 4;
  c.token_bins = 5;
  c.k_cont = 3;
  TransformerParams p = TransformerParams::init(c, 99);
  TransformerParams g = TransformerParams::zeros(c);
  AdamState opt(p.parameter_count());
  const std::uint64_t before = p.content_hash();
  opt.step(p, g, 1e-3);
  CHECK(p.content_hash() == before);
  CHECK(opt.t == 1);
}

TEST_CASE("Adam first step moves each coordinate by about lr") {
  ModelConfig c;
  c.d_model = 16;
  c.n_heads = 4;
  c.n_layers_point = 1;
  c.n_layers_shape = 1;
  c.head_hidden = 8;
  c.n_tokens = 4;
  c.token_bins = 5;
  c.k_cont = 3;
  TransformerParams p = TransformerParams::zeros(c);
  TransformerParams g = TransformerParams::zeros(c);
  for (auto& b : g.blocks())
    for (std::size_t i = 0; i < b.size; ++i) b.data[i] = 2.5;  // any constant
  AdamState opt(p.parameter_count());
  opt.step(p, g, 1e-3);
  // bias-corrected m/sqrt(v) = g/|g| on step one, so |delta| ~= lr
  for (auto& b : p.blocks())
    for (std::size_t i = 0; i < b.size; ++i)
      CHECK(b.data[i] == doctest::Approx(-1e-3).epsilon(1e-6));
}

TEST_CASE("training on a separable toy problem reduces loss and fits") {
  // two classes, two levels; class decided by which half of the band has
  // energy, level by a peak that moves with the added-mass law
  const FrequencyGrid grid = FrequencyGrid::standard();
  ModelConfig mc;
  mc.d_model = 16;
  mc.n_heads = 4;
  mc.n_layers_point = 1;
  mc.n_layers_shape = 1;
  mc.head_hidden = 16;
  mc.n_tokens = 48;
  mc.token_bins = 100;
  mc.k_cont = 2;

  Rng rng(15);
  std::vector<TrainSample> samples;
  for (int cls = 0; cls < 2; ++cls)
    for (double level : {0.0, 0.4, 0.8})
      for (int spk = 0; spk < 3; ++spk)
        for (int rep = 0; rep < 8; ++rep) {
          TrainSample s;
          s.class_id = cls;
          s.level = level;
          s.speaker = spk;
          s.excitation = "chirp";
          const double f0 = cls == 0 ? 400.0 : 1800.0;
          const double peak = f0 / std::sqrt(1.0 + 0.8 * level);
          for (int p = 0; p < 3; ++p) {
            SpectralFeature f;
            f.point_index = p;
            f.grid_hash = grid.hash();
            f.magnitudes.resize(2, 4800);
            for (int k = 0; k < 4800; ++k) {
              const double d = (grid.frequencies(k) - peak) / 12.0;
              const double v = std::exp(-0.5 * d * d) + 0.02 * rng.normal();
              f.magnitudes(0, k) = std::abs(v);
              f.magnitudes(1, k) = std::abs(v + 0.02 * rng.normal());
            }
            s.raw.push_back(f);
          }
          samples.push_back(s);
        }

  TrainConfig tc;
  tc.lr = 1e-3;
  tc.epochs = 150;
  tc.batch_size = 8;
  tc.augment = false;
  tc.token_dropout_rate = 0.0;
  tc.seed = 4;
  const TrainResult res = train(samples, mc, tc, grid);
  REQUIRE(res.log.size() == 150);
  CHECK(res.log.back().train_loss < 0.7 * res.log.front().train_loss);
  CHECK(res.best_val_mae <= 0.2);

  // deterministic in the seed (short run: two epochs suffice to exercise
  // shuffling, augment seeding, and the optimizer)
  TrainConfig short_tc = tc;
  short_tc.epochs = 2;
  short_tc.augment = true;
  short_tc.token_dropout_rate = 0.5;
  const TrainResult r1 = train(samples, mc, short_tc, grid);
  const TrainResult r2 = train(samples, mc, short_tc, grid);
  CHECK(r1.params.content_hash() == r2.params.content_hash());
  CHECK(r1.best_epoch == r2.best_epoch);
  CHECK(r1.log.back().train_loss == r2.log.back().train_loss);
}

TEST_CASE("training validates its inputs") {
  const FrequencyGrid grid = FrequencyGrid::standard();
  ModelConfig mc;
  TrainConfig tc;
  CHECK_THROWS_AS(train({}, mc, tc, grid), std::invalid_argument);
  TrainSample lone;
  lone.speaker = 0;
  CHECK_THROWS_AS(train({lone, lone}, mc, tc, grid), std::invalid_argument);
  tc.lr = -1.0;
  TrainSample other = lone;
  other.speaker = 1;
  CHECK_THROWS_AS(train({lone, other}, mc, tc, grid), std::invalid_argument);
}
