#pragma once

// Competence-aware scoring model R and its adversarial discriminator D.
//
// Training pairs come from splitting a shuffled dataset into portions and
// walking them in rounds: the probe is trained on portion i, samples of
// portion i are labeled easy (0) and samples of portion i+1 hard (1), with
// features taken after the update. R minimizes label-smoothed BCE plus a
// weighted fooling term against D; D minimizes BCE on the true labels.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "campus/corpus.hpp"
#include "campus/error.hpp"
#include "campus/mlp.hpp"
#include "campus/probe.hpp"

namespace campus {

struct ScorerConfig {
  std::size_t n_portions = 5;
  double lr = 1e-5;
  std::size_t batch = 4;
  std::size_t inner_iters = 2;
  double label_smoothing = 0.1;
  bool upsample = true;
  double adv_weight = 0.1;
  std::size_t hidden = kDefaultHidden;
  std::uint64_t seed = 0;

  void validate() const {
    if (n_portions < 2) throw ConfigError("n_portions must be >= 2");
    if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("learning rate must be > 0");
    if (batch == 0) throw ConfigError("batch size must be >= 1");
    if (inner_iters == 0) throw ConfigError("inner_iters must be >= 1");
    if (!(label_smoothing >= 0.0 && label_smoothing < 0.5))
      throw ConfigError("label smoothing must lie in [0, 0.5)");
    if (!(adv_weight >= 0.0)) throw ConfigError("adversarial weight must be >= 0");
    if (hidden == 0) throw ConfigError("hidden width must be >= 1");
  }
};

struct LabeledFeature {
  std::vector<double> z;
  int label = 0;  // 0 easy, 1 hard
  std::size_t portion = 0;
};

inline double smoothed_target(int label, double eps) {
  return label ? 1.0 - eps : eps;
}

// ---------------------------------------------------------------------------
// Objectives

struct Objective {
  double loss = 0.0;
  MlpParams grad;
};

/// Mean BCE of D on true hard labels.
inline Objective discriminator_objective(const MlpParams& d, std::span<const LabeledFeature> batch) {
  Objective o{0.0, MlpParams(d.input_dim(), d.hidden())};
  const double inv = 1.0 / static_cast<double>(batch.size());
  for (const auto& ex : batch) {
    const auto t = mlp_trace(d, ex.z);
    const double y = ex.label;
    o.loss += inv * bce_with_logit(t.logit, y);
    mlp_backprop(d, ex.z, t, inv * (logistic(t.logit) - y), o.grad);
  }
  return o;
}

struct ScorerLosses {
  double total = 0.0;
  double bce = 0.0;
  double adversarial = 0.0;
};

/// R's objective: mean smoothed BCE plus adv_weight times D's BCE against the
/// flipped label. D reads the same feature vector R reads, so the fooling
/// term carries no gradient into R's parameters.
inline Objective scorer_objective(const MlpParams& r, const MlpParams& d,
                                  std::span<const LabeledFeature> batch, const ScorerConfig& cfg,
                                  ScorerLosses* parts = nullptr) {
  Objective o{0.0, MlpParams(r.input_dim(), r.hidden())};
  const double inv = 1.0 / static_cast<double>(batch.size());
  double bce = 0.0, adv = 0.0;
  for (const auto& ex : batch) {
    const auto t = mlp_trace(r, ex.z);
    const double y = smoothed_target(ex.label, cfg.label_smoothing);
    bce += inv * bce_with_logit(t.logit, y);
    mlp_backprop(r, ex.z, t, inv * (logistic(t.logit) - y), o.grad);
    if (cfg.adv_weight > 0.0) adv += inv * bce_with_logit(mlp_logit(d, ex.z), 1.0 - ex.label);
  }
  o.loss = bce + cfg.adv_weight * adv;
  if (parts) *parts = {o.loss, bce, adv};
  return o;
}

inline void check_finite(double loss, const char* who) {
  if (!std::isfinite(loss)) throw TrainingError(std::string(who) + ": non-finite loss");
}

inline ScorerLosses train_step_r(MlpParams& r, const MlpParams& d, std::span<const LabeledFeature> batch,
                                 const ScorerConfig& cfg) {
  ScorerLosses parts;
  auto o = scorer_objective(r, d, batch, cfg, &parts);
  check_finite(o.loss, "train_step_r");
  sgd_step(r, o.grad, cfg.lr);
  return parts;
}

inline double train_step_d(MlpParams& d, std::span<const LabeledFeature> batch, const ScorerConfig& cfg) {
  auto o = discriminator_objective(d, batch);
  check_finite(o.loss, "train_step_d");
  sgd_step(d, o.grad, cfg.lr);
  return o.loss;
}

inline double accuracy(const MlpParams& m, std::span<const LabeledFeature> data) {
  if (data.empty()) return 0.0;
  std::size_t hits = 0;
  for (const auto& ex : data) hits += ((mlp_logit(m, ex.z) > 0.0) == (ex.label == 1));
  return static_cast<double>(hits) / static_cast<double>(data.size());
}

// ---------------------------------------------------------------------------
// Pair construction

/// Seeded shuffle of [0, n) cut into `parts` equal portions; the remainder
/// goes to the last portion.
template <typename Rng>
std::vector<std::vector<SampleId>> split_portions(std::size_t n, std::size_t parts, Rng& rng) {
  if (parts < 2) throw ConfigError("n_portions must be >= 2");
  std::vector<SampleId> ids(n);
  for (std::size_t i = 0; i < n; ++i) ids[i] = i;
  std::shuffle(ids.begin(), ids.end(), rng);
  const std::size_t base = n / parts;
  if (base == 0) throw ConfigError("dataset too small: empty portion");
  std::vector<std::vector<SampleId>> out(parts);
  for (std::size_t p = 0; p < parts; ++p) {
    const auto lo = p * base;
    const auto hi = p + 1 == parts ? n : lo + base;
    out[p].assign(ids.begin() + static_cast<std::ptrdiff_t>(lo), ids.begin() + static_cast<std::ptrdiff_t>(hi));
  }
  return out;
}

/// Round `round` (0-based): update the probe on portion `round`, then label
/// that portion easy and the next one hard.
inline std::vector<LabeledFeature> build_round_pairs(const Corpus& corpus, Probe& probe,
                                                     const std::vector<std::vector<SampleId>>& portions,
                                                     std::size_t round) {
  const auto& easy = portions.at(round);
  const auto& hard = portions.at(round + 1);
  update_on(probe, corpus, easy);
  std::vector<LabeledFeature> pairs;
  pairs.reserve(easy.size() + hard.size());
  for (auto id : easy) pairs.push_back({probe.features(corpus.encoded(id)).concat(), 0, round});
  for (auto id : hard) pairs.push_back({probe.features(corpus.encoded(id)).concat(), 1, round + 1});
  return pairs;
}

inline std::vector<LabeledFeature> build_training_pairs(const Corpus& corpus, Probe& probe,
                                                        const ScorerConfig& cfg) {
  cfg.validate();
  if (corpus.size() < 2 * cfg.n_portions)
    throw ConfigError("dataset needs at least 2 * n_portions samples");
  std::mt19937_64 rng(cfg.seed);
  const auto portions = split_portions(corpus.size(), cfg.n_portions, rng);
  std::vector<LabeledFeature> pairs;
  for (std::size_t round = 0; round + 1 < cfg.n_portions; ++round) {
    auto r = build_round_pairs(corpus, probe, portions, round);
    pairs.insert(pairs.end(), std::make_move_iterator(r.begin()), std::make_move_iterator(r.end()));
  }
  return pairs;
}

/// Resamples the minority label with replacement until both labels have
/// equal counts. Balanced or single-label input is returned unchanged.
template <typename Rng>
std::vector<LabeledFeature> upsample_minority(std::vector<LabeledFeature> pairs, Rng& rng) {
  std::vector<std::size_t> by_label[2];
  for (std::size_t k = 0; k < pairs.size(); ++k) by_label[pairs[k].label ? 1 : 0].push_back(k);
  const std::size_t minority = by_label[0].size() < by_label[1].size() ? 0 : 1;
  const auto& pool = by_label[minority];
  const std::size_t deficit = by_label[1 - minority].size() - pool.size();
  if (deficit == 0 || pool.empty()) return pairs;
  std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
  pairs.reserve(pairs.size() + deficit);
  for (std::size_t k = 0; k < deficit; ++k) pairs.push_back(pairs[pool[pick(rng)]]);
  return pairs;
}

// ---------------------------------------------------------------------------
// Training loop

struct LossRecord {
  std::size_t round = 0;
  std::size_t iteration = 0;
  char model = 'R';  // 'D' or 'R'
  double loss = 0.0;  // mean over the epoch's minibatches
};

struct ScorerModel {
  std::size_t feature_dim = 0;
  MlpParams r;
  MlpParams d;
  ScorerConfig config;
  std::vector<LossRecord> history;

  double score(std::span<const double> z) const { return mlp_forward(r, z); }
};

template <typename Rng>
ScorerModel init_scorer(std::size_t feature_dim, const ScorerConfig& cfg, Rng& rng) {
  ScorerModel m;
  m.feature_dim = feature_dim;
  m.config = cfg;
  m.r = MlpParams::kaiming(2 * feature_dim, cfg.hidden, rng);
  m.d = MlpParams::kaiming(2 * feature_dim, cfg.hidden, rng);
  return m;
}

/// One epoch of minibatch steps over a shuffled copy of `pairs`.
template <typename Rng, typename Step>
double run_epoch(std::vector<LabeledFeature>& pairs, std::size_t batch, Rng& rng, Step step) {
  std::shuffle(pairs.begin(), pairs.end(), rng);
  double sum = 0.0;
  std::size_t steps = 0;
  for (std::size_t lo = 0; lo < pairs.size(); lo += batch) {
    const auto hi = std::min(pairs.size(), lo + batch);
    sum += step(std::span<const LabeledFeature>(pairs.data() + lo, hi - lo));
    ++steps;
  }
  return steps ? sum / static_cast<double>(steps) : 0.0;
}

/// Trains R and D on one round's pairs: optional upsampling, then
/// `inner_iters` alternating epochs of D-steps and R-steps.
template <typename Rng>
void train_round(ScorerModel& m, std::vector<LabeledFeature> pairs, std::size_t round, Rng& rng) {
  const auto& cfg = m.config;
  if (cfg.upsample) pairs = upsample_minority(std::move(pairs), rng);
  for (std::size_t it = 0; it < cfg.inner_iters; ++it) {
    const double d_loss = run_epoch(pairs, cfg.batch, rng, [&](auto b) { return train_step_d(m.d, b, cfg); });
    m.history.push_back({round, it, 'D', d_loss});
    const double r_loss =
        run_epoch(pairs, cfg.batch, rng, [&](auto b) { return train_step_r(m.r, m.d, b, cfg).total; });
    m.history.push_back({round, it, 'R', r_loss});
  }
}

/// Full scorer training against `probe`, which is updated in place (pass a
/// copy when the probe must stay at its initial state).
inline ScorerModel train_scorer(const Corpus& corpus, Probe& probe, const ScorerConfig& cfg) {
  cfg.validate();
  if (corpus.size() < 2 * cfg.n_portions)
    throw ConfigError("dataset needs at least 2 * n_portions samples");
  std::mt19937_64 rng(cfg.seed);
  const auto portions = split_portions(corpus.size(), cfg.n_portions, rng);
  auto model = init_scorer(probe.feature_dim(), cfg, rng);
  for (std::size_t round = 0; round + 1 < cfg.n_portions; ++round)
    train_round(model, build_round_pairs(corpus, probe, portions, round), round, rng);
  return model;
}

/// Trains directly on precomputed pairs, treating the whole set as one round.
inline ScorerModel train_scorer_on_pairs(std::vector<LabeledFeature> pairs, std::size_t feature_dim,
                                         const ScorerConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  auto model = init_scorer(feature_dim, cfg, rng);
  train_round(model, std::move(pairs), 0, rng);
  return model;
}

// ---------------------------------------------------------------------------
// Checkpoint: JSON with shapes, row-major flat weights and a config echo.

inline nlohmann::ordered_json config_json(const ScorerConfig& c) {
  return {{"n_portions", c.n_portions}, {"lr", c.lr},
          {"batch", c.batch},           {"inner_iters", c.inner_iters},
          {"label_smoothing", c.label_smoothing}, {"upsample", c.upsample},
          {"adv_weight", c.adv_weight}, {"hidden", c.hidden},
          {"seed", c.seed}};
}

inline void save_scorer(const ScorerModel& m, const std::string& path) {
  nlohmann::ordered_json j;
  j["format"] = "campus-scorer";
  j["version"] = 1;
  j["feature_dim"] = m.feature_dim;
  j["input_dim"] = m.r.input_dim();
  j["hidden"] = m.r.hidden();
  j["layout"] = "W1[hidden][input], b1[hidden], w2[hidden], b2";
  j["R"] = std::vector<double>(m.r.flat().begin(), m.r.flat().end());
  j["D"] = std::vector<double>(m.d.flat().begin(), m.d.flat().end());
  j["config"] = config_json(m.config);
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write scorer checkpoint: " + path);
  out << j.dump() << '\n';
}

inline ScorerModel load_scorer(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open scorer checkpoint: " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("malformed scorer checkpoint: " + std::string(e.what()));
  }
  if (j.value("format", "") != "campus-scorer") throw ConfigError("not a scorer checkpoint: " + path);
  ScorerModel m;
  m.feature_dim = j.at("feature_dim").get<std::size_t>();
  const auto input = j.at("input_dim").get<std::size_t>();
  const auto hidden = j.at("hidden").get<std::size_t>();
  if (input != 2 * m.feature_dim) throw ConfigError("checkpoint input_dim != 2 * feature_dim");
  auto fill = [&](const char* key) {
    MlpParams p(input, hidden);
    const auto values = j.at(key).get<std::vector<double>>();
    if (values.size() != p.flat().size()) throw ConfigError(std::string("checkpoint: bad size of ") + key);
    std::copy(values.begin(), values.end(), p.flat().begin());
    return p;
  };
  m.r = fill("R");
  m.d = fill("D");
  const auto& c = j.at("config");
  m.config.n_portions = c.at("n_portions").get<std::size_t>();
  m.config.lr = c.at("lr").get<double>();
  m.config.batch = c.at("batch").get<std::size_t>();
  m.config.inner_iters = c.at("inner_iters").get<std::size_t>();
  m.config.label_smoothing = c.at("label_smoothing").get<double>();
  m.config.upsample = c.at("upsample").get<bool>();
  m.config.adv_weight = c.at("adv_weight").get<double>();
  m.config.hidden = c.at("hidden").get<std::size_t>();
  m.config.seed = c.at("seed").get<std::uint64_t>();
  return m;
}

}  // namespace campus
