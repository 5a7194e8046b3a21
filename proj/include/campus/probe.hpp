#pragma once

// Competence probe: the model whose log-probabilities, losses and features
// drive every competence-aware metric and the scheduler's perplexity.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <unordered_map>
#include <vector>

#include "campus/corpus.hpp"
#include "campus/error.hpp"
#include "campus/lexical.hpp"

namespace campus {

struct FeaturePair {
  std::vector<double> initial;  // z1: frozen initial state
  std::vector<double> current;  // z2: current state

  /// concat(z1, z2), the scorer input.
  std::vector<double> concat() const {
    std::vector<double> z(initial);
    z.insert(z.end(), current.begin(), current.end());
    return z;
  }
};

/// Abstract probe. Calls on one instance are strictly ordered; a handle is
/// single-owner.
class Probe {
 public:
  virtual ~Probe() = default;

  virtual std::size_t feature_dim() const = 0;

  /// log P(w_m | w_<m) in nats for every position of `tokens`.
  virtual std::vector<double> logprobs(TokenView tokens) = 0;

  /// One training step on the batch (token streams in batch order).
  virtual void update(std::span<const TokenView> batch) = 0;

  virtual FeaturePair features(const EncodedSample& sample) = 0;

  /// Re-freezes the initial state used for z1 to the current state.
  virtual void snapshot() = 0;
};

struct ProbeReport {
  std::vector<double> token_logprobs;
  double sample_loss = 0.0;
  std::vector<double> features_initial;
  std::vector<double> features_current;
  std::size_t feature_dim = 0;
};

/// −Σ logprob over target positions.
inline double masked_loss(std::span<const double> logprobs, std::span<const TokenRole> roles) {
  double loss = 0.0;
  for (std::size_t m = 0; m < logprobs.size(); ++m)
    if (roles[m] == TokenRole::target) loss -= logprobs[m];
  return loss;
}

inline ProbeReport probe_report(Probe& probe, const EncodedSample& sample) {
  ProbeReport r;
  r.token_logprobs = probe.logprobs(sample.tokens);
  if (r.token_logprobs.size() != sample.tokens.size())
    throw ProbeError("probe returned " + std::to_string(r.token_logprobs.size()) +
                     " logprobs for " + std::to_string(sample.tokens.size()) + " tokens");
  r.sample_loss = masked_loss(r.token_logprobs, sample.roles);
  auto f = probe.features(sample);
  r.features_initial = std::move(f.initial);
  r.features_current = std::move(f.current);
  r.feature_dim = probe.feature_dim();
  return r;
}

/// exp(mean −logprob); the per-sample perplexity term.
inline double perplexity_from_logprobs(std::span<const double> logprobs) {
  double sum = 0.0;
  for (double lp : logprobs) sum -= lp;
  return std::exp(sum / static_cast<double>(logprobs.size()));
}

// ---------------------------------------------------------------------------
// Reference n-gram probe

/// Additive-smoothed n-gram counts over a fixed vocabulary. Contexts are
/// padded on the left with a reserved begin-of-sequence id and packed into a
/// 64-bit key, which limits order to 4 and ids to 21 bits.
class NGramModel {
 public:
  static constexpr int kMaxOrder = 4;
  static constexpr unsigned kIdBits = 21;
  static constexpr std::uint64_t kBos = (std::uint64_t{1} << kIdBits) - 1;

  NGramModel() = default;

  NGramModel(int order, std::size_t vocab_size, double alpha)
      : order_(order), vocab_size_(vocab_size), alpha_(alpha) {
    if (order < 1 || order > kMaxOrder)
      throw ConfigError("n-gram order must lie in [1," + std::to_string(kMaxOrder) + "]");
    if (vocab_size < 1 || vocab_size >= kBos) throw ConfigError("n-gram vocab size out of range");
    if (!(alpha > 0.0) || !std::isfinite(alpha)) throw ConfigError("smoothing alpha must be > 0");
  }

  int order() const { return order_; }
  std::size_t vocab_size() const { return vocab_size_; }
  double alpha() const { return alpha_; }

  TokenId clamp(TokenId id) const { return id < vocab_size_ ? id : kUnknownToken; }

  /// Key of the context preceding position `m`.
  std::uint64_t context_key(TokenView tokens, std::size_t m) const {
    std::uint64_t key = 0;
    for (int k = order_ - 1; k >= 1; --k) {
      const std::uint64_t id = m >= static_cast<std::size_t>(k)
                                   ? clamp(tokens[m - static_cast<std::size_t>(k)])
                                   : kBos;
      key = (key << kIdBits) | id;
    }
    return key;
  }

  double probability(std::uint64_t context, TokenId token) const {
    const auto v = static_cast<double>(vocab_size_);
    auto it = counts_.find(context);
    if (it == counts_.end()) return alpha_ / (alpha_ * v);
    const auto& ctx = it->second;
    auto jt = ctx.next.find(clamp(token));
    const double c = jt == ctx.next.end() ? 0.0 : static_cast<double>(jt->second);
    return (c + alpha_) / (static_cast<double>(ctx.total) + alpha_ * v);
  }

  bool context_seen(std::uint64_t context) const { return counts_.count(context) != 0; }

  std::uint64_t count(std::uint64_t context, TokenId token) const {
    auto it = counts_.find(context);
    if (it == counts_.end()) return 0;
    auto jt = it->second.next.find(clamp(token));
    return jt == it->second.next.end() ? 0 : jt->second;
  }

  std::uint64_t context_total(std::uint64_t context) const {
    auto it = counts_.find(context);
    return it == counts_.end() ? 0 : it->second.total;
  }

  std::vector<double> logprobs(TokenView tokens) const {
    std::vector<double> out(tokens.size());
    for (std::size_t m = 0; m < tokens.size(); ++m)
      out[m] = std::log(probability(context_key(tokens, m), tokens[m]));
    return out;
  }

  void add(TokenView tokens) {
    for (std::size_t m = 0; m < tokens.size(); ++m) {
      auto& ctx = counts_[context_key(tokens, m)];
      ++ctx.next[clamp(tokens[m])];
      ++ctx.total;
    }
  }

 private:
  struct ContextCounts {
    std::uint64_t total = 0;
    std::unordered_map<TokenId, std::uint64_t> next;
  };

  int order_ = 2;
  std::size_t vocab_size_ = 1;
  double alpha_ = 1.0;
  std::unordered_map<std::uint64_t, ContextCounts> counts_;
};

inline constexpr std::size_t kStatFeatureDim = 8;

/// Eight statistics of a sample under one model state:
/// [mean logprob, std logprob, min logprob, unknown fraction, log(1+count),
///  MTLD/100, mean target logprob, context coverage].
inline std::vector<double> sample_statistics(const NGramModel& model, const EncodedSample& sample) {
  std::vector<double> f(kStatFeatureDim, 0.0);
  const auto& tokens = sample.tokens;
  const std::size_t n = tokens.size();
  f[4] = std::log1p(static_cast<double>(n));
  if (n == 0) return f;

  const auto lp = model.logprobs(tokens);
  double sum = 0.0, minimum = std::numeric_limits<double>::infinity();
  double target_sum = 0.0;
  std::size_t unknown = 0, covered = 0, targets = 0;
  for (std::size_t m = 0; m < n; ++m) {
    sum += lp[m];
    minimum = std::min(minimum, lp[m]);
    if (model.clamp(tokens[m]) == kUnknownToken) ++unknown;
    if (model.context_seen(model.context_key(tokens, m))) ++covered;
    if (m < sample.roles.size() && sample.roles[m] == TokenRole::target) {
      target_sum += lp[m];
      ++targets;
    }
  }
  const double dn = static_cast<double>(n);
  const double mean = sum / dn;
  double var = 0.0;
  for (double v : lp) var += (v - mean) * (v - mean);
  f[0] = mean;
  f[1] = std::sqrt(var / dn);
  f[2] = minimum;
  f[3] = static_cast<double>(unknown) / dn;
  const auto& lexical = sample.content.empty() ? tokens : sample.content;
  f[5] = mtld(lexical) / 100.0;
  f[6] = targets ? target_sum / static_cast<double>(targets) : mean;
  f[7] = static_cast<double>(covered) / dn;
  return f;
}

/// Reference probe: an additive-smoothed n-gram model trained by counting,
/// with a frozen copy of its construction-time state for z1.
class NGramProbe final : public Probe {
 public:
  NGramProbe(int order, std::size_t vocab_size, double alpha = 1.0)
      : current_(order, vocab_size, alpha), initial_(current_) {}

  std::size_t feature_dim() const override { return kStatFeatureDim; }

  std::vector<double> logprobs(TokenView tokens) override { return current_.logprobs(tokens); }

  void update(std::span<const TokenView> batch) override {
    for (auto tokens : batch) current_.add(tokens);
  }

  FeaturePair features(const EncodedSample& sample) override {
    return {sample_statistics(initial_, sample), sample_statistics(current_, sample)};
  }

  void snapshot() override { initial_ = current_; }

  const NGramModel& current() const { return current_; }
  const NGramModel& initial() const { return initial_; }

 private:
  NGramModel current_;
  NGramModel initial_;
};

/// Updates `probe` on the encoded streams of `ids`.
inline void update_on(Probe& probe, const Corpus& corpus, std::span<const SampleId> ids) {
  std::vector<TokenView> batch;
  batch.reserve(ids.size());
  for (auto id : ids) batch.emplace_back(corpus.encoded(id).tokens);
  probe.update(batch);
}

/// Mean per-token negative log-likelihood over the given samples, in nats.
inline double cross_entropy(Probe& probe, const Corpus& corpus, std::span<const SampleId> ids) {
  double nll = 0.0;
  std::size_t count = 0;
  for (auto id : ids) {
    for (double lp : probe.logprobs(corpus.encoded(id).tokens)) nll -= lp;
    count += corpus.encoded(id).tokens.size();
  }
  if (count == 0) throw ProbeError("cross_entropy: no tokens");
  return nll / static_cast<double>(count);
}

}  // namespace campus
