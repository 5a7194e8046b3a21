#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "support.hpp"

using namespace campus;

namespace {

MlpParams random_params(std::size_t in, std::size_t hidden, std::mt19937_64& rng) {
  MlpParams p(in, hidden);
  std::normal_distribution<double> n(0.0, 0.7);
  for (auto& w : p.flat()) w = n(rng);
  return p;
}

std::vector<LabeledFeature> random_batch(std::size_t n, std::size_t dim, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<LabeledFeature> out(n);
  for (std::size_t k = 0; k < n; ++k) {
    out[k].z.resize(dim);
    for (auto& x : out[k].z) x = g(rng);
    out[k].label = static_cast<int>(k % 2);
  }
  return out;
}

double min_abs_preactivation(const MlpParams& p, std::span<const LabeledFeature> batch) {
  double m = INFINITY;
  for (const auto& ex : batch)
    for (double a : mlp_trace(p, ex.z).pre) m = std::min(m, std::abs(a));
  return m;
}

/// Relative error between an analytic gradient and central differences of `loss`.
template <typename Loss>
double gradient_error(MlpParams p, const MlpParams& analytic, Loss loss, double h = 1e-5) {
  double diff = 0.0, norm = 0.0;
  for (std::size_t k = 0; k < p.flat().size(); ++k) {
    const double w = p.flat()[k];
    p.flat()[k] = w + h;
    const double up = loss(p);
    p.flat()[k] = w - h;
    const double down = loss(p);
    p.flat()[k] = w;
    const double numeric = (up - down) / (2 * h);
    diff += (numeric - analytic.flat()[k]) * (numeric - analytic.flat()[k]);
    norm += numeric * numeric + analytic.flat()[k] * analytic.flat()[k];
  }
  return std::sqrt(diff) / std::max(std::sqrt(norm), 1e-12);
}

}  // namespace

TEST(Mlp, ZeroParamsGiveOneHalf) {
  MlpParams p(4, 3);
  EXPECT_EQ(mlp_forward(p, std::vector<double>{1, -2, 3, 4}), 0.5);
}

TEST(Mlp, ForwardMatchesHandComputation) {
  std::mt19937_64 rng(1);
  const auto p = random_params(3, 4, rng);
  const std::vector<double> z{0.3, -1.2, 2.0};
  double logit = p.b2();
  for (std::size_t h = 0; h < 4; ++h) {
    double a = p.b1(h);
    for (std::size_t i = 0; i < 3; ++i) a += p.w1(h, i) * z[i];
    logit += p.w2(h) * std::max(a, 0.0);
  }
  EXPECT_NEAR(mlp_forward(p, z), 1.0 / (1.0 + std::exp(-logit)), 1e-9);
  EXPECT_THROW(mlp_forward(p, std::vector<double>{1.0}), ConfigError);
}

TEST(Mlp, KaimingScale) {
  std::mt19937_64 rng(2);
  const auto p = MlpParams::kaiming(64, 256, rng);
  double ss = 0.0;
  for (std::size_t h = 0; h < 256; ++h)
    for (std::size_t i = 0; i < 64; ++i) ss += p.w1(h, i) * p.w1(h, i);
  EXPECT_NEAR(ss / (256.0 * 64.0), 2.0 / 64.0, 0.1 * 2.0 / 64.0);
  for (std::size_t h = 0; h < 256; ++h) EXPECT_EQ(p.b1(h), 0.0);
  EXPECT_EQ(p.b2(), 0.0);
}

TEST(Mlp, BceIsStable) {
  EXPECT_NEAR(bce_with_logit(0.0, 1.0), std::log(2.0), 1e-15);
  EXPECT_NEAR(bce_with_logit(800.0, 0.0), 800.0, 1e-9);
  EXPECT_NEAR(bce_with_logit(-800.0, 0.0), 0.0, 1e-12);
  EXPECT_TRUE(std::isfinite(bce_with_logit(-800.0, 1.0)));
}

TEST(Gradients, DiscriminatorMatchesFiniteDifferences) {
  std::mt19937_64 rng(3);
  int checked = 0;
  while (checked < 10) {
    const auto batch = random_batch(4, 6, rng);
    const auto d = random_params(6, 5, rng);
    if (min_abs_preactivation(d, batch) < 1e-3) continue;
    const auto o = discriminator_objective(d, batch);
    const double err = gradient_error(d, o.grad, [&](const MlpParams& q) { return discriminator_objective(q, batch).loss; });
    EXPECT_LT(err, 1e-4);
    ++checked;
  }
}

TEST(Gradients, ScorerMatchesFiniteDifferences) {
  std::mt19937_64 rng(4);
  ScorerConfig cfg;
  int checked = 0;
  while (checked < 10) {
    const auto batch = random_batch(4, 6, rng);
    const auto r = random_params(6, 5, rng);
    const auto d = random_params(6, 5, rng);
    if (min_abs_preactivation(r, batch) < 1e-3) continue;
    const auto o = scorer_objective(r, d, batch, cfg);
    const double err =
        gradient_error(r, o.grad, [&](const MlpParams& q) { return scorer_objective(q, d, batch, cfg).loss; });
    EXPECT_LT(err, 1e-4);
    ++checked;
  }
}

TEST(ScorerObjective, Composition) {
  std::mt19937_64 rng(5);
  const auto batch = random_batch(6, 4, rng);
  const auto r = random_params(4, 3, rng);
  const auto d = random_params(4, 3, rng);
  ScorerConfig cfg;
  cfg.label_smoothing = 0.2;
  cfg.adv_weight = 0.5;
  ScorerLosses parts;
  const auto o = scorer_objective(r, d, batch, cfg, &parts);
  double bce = 0.0, adv = 0.0;
  for (const auto& ex : batch) {
    const double y = ex.label ? 0.8 : 0.2;
    const double pr = mlp_forward(r, ex.z);
    bce -= (y * std::log(pr) + (1 - y) * std::log(1 - pr)) / 6.0;
    const double pd = mlp_forward(d, ex.z);
    adv -= (ex.label ? std::log(1 - pd) : std::log(pd)) / 6.0;
  }
  EXPECT_NEAR(parts.bce, bce, 1e-9);
  EXPECT_NEAR(parts.adversarial, adv, 1e-9);
  EXPECT_NEAR(o.loss, bce + 0.5 * adv, 1e-9);
}

TEST(Training, DiscriminatorLearnsSeparableData) {
  std::mt19937_64 rng(6);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<LabeledFeature> data;
  for (int k = 0; k < 1000; ++k) {
    LabeledFeature ex;
    ex.z.resize(16);
    for (auto& x : ex.z) x = g(rng);
    ex.label = k % 2;
    ex.z[0] += ex.label ? 1.5 : -1.5;
    data.push_back(ex);
  }
  ScorerConfig cfg;
  cfg.lr = 1e-2;
  auto d = MlpParams::kaiming(16, cfg.hidden, rng);
  std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
  for (int step = 0; step < 2000; ++step) {
    std::vector<LabeledFeature> batch;
    for (std::size_t b = 0; b < cfg.batch; ++b) batch.push_back(data[pick(rng)]);
    train_step_d(d, batch, cfg);
  }
  EXPECT_GE(accuracy(d, data), 0.95);
}

TEST(Training, NonFiniteLossIsReported) {
  MlpParams d(2, 2);
  d.b2() = NAN;
  std::vector<LabeledFeature> batch{{{1.0, 2.0}, 1, 0}};
  EXPECT_THROW(train_step_d(d, batch, ScorerConfig{}), TrainingError);
}

TEST(Pairs, PortionsAndCounts) {
  Corpus c(synthetic_corpus(100, 7));
  NGramProbe p(2, c.vocab().size());
  ScorerConfig cfg;
  const auto pairs = build_training_pairs(c, p, cfg);
  EXPECT_EQ(pairs.size(), 160u);  // 4 rounds of 20 easy + 20 hard
  std::size_t hard = 0;
  for (const auto& ex : pairs) {
    EXPECT_EQ(ex.z.size(), 2 * kStatFeatureDim);
    hard += ex.label;
  }
  EXPECT_EQ(hard, 80u);
  ScorerConfig bad = cfg;
  bad.n_portions = 60;
  EXPECT_THROW(build_training_pairs(c, p, bad), ConfigError);
}

TEST(Pairs, SplitRemainderGoesLast) {
  std::mt19937_64 rng(0);
  const auto parts = split_portions(23, 5, rng);
  for (std::size_t k = 0; k < 4; ++k) EXPECT_EQ(parts[k].size(), 4u);
  EXPECT_EQ(parts[4].size(), 7u);
}

TEST(Pairs, UpsampleBalances) {
  std::mt19937_64 rng(0);
  std::vector<LabeledFeature> data;
  for (int k = 0; k < 10; ++k) data.push_back({{double(k)}, k < 3 ? 1 : 0, 0});
  const auto up = upsample_minority(data, rng);
  std::size_t ones = 0;
  for (const auto& ex : up) ones += ex.label;
  EXPECT_EQ(up.size(), 14u);
  EXPECT_EQ(ones, 7u);
}

TEST(Config, Validation) {
  ScorerConfig c;
  c.label_smoothing = 0.5;
  EXPECT_THROW(c.validate(), ConfigError);
  c = ScorerConfig{};
  c.lr = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = ScorerConfig{};
  c.n_portions = 1;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Checkpoint, RoundTripIsBitIdentical) {
  Corpus c(synthetic_corpus(100, 8));
  NGramProbe p(2, c.vocab().size());
  ScorerConfig cfg;
  cfg.hidden = 16;
  const auto m = train_scorer(c, p, cfg);
  const auto dir = test::scratch_dir("ckpt");
  const auto path = (dir / "s.json").string();
  save_scorer(m, path);
  const auto back = load_scorer(path);
  EXPECT_TRUE(back.r == m.r);
  EXPECT_TRUE(back.d == m.d);
  EXPECT_EQ(back.feature_dim, m.feature_dim);
  EXPECT_EQ(back.config.hidden, 16u);
  test::write_text(dir / "junk.json", "{\"format\":\"other\"}");
  EXPECT_THROW(load_scorer((dir / "junk.json").string()), ConfigError);
}

TEST(TrainScorer, SeededRunsAreReproducible) {
  Corpus c(synthetic_corpus(60, 9));
  ScorerConfig cfg;
  cfg.hidden = 8;
  NGramProbe p1(2, c.vocab().size()), p2(2, c.vocab().size());
  const auto a = train_scorer(c, p1, cfg);
  const auto b = train_scorer(c, p2, cfg);
  EXPECT_TRUE(a.r == b.r);
  EXPECT_EQ(a.history.size(), 4u * cfg.inner_iters * 2);
}
