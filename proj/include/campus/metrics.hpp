#pragma once

// Difficulty metrics d1..d4 and the statically sorted schedules.

#include <algorithm>
#include <cstddef>
#include <exception>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "campus/corpus.hpp"
#include "campus/error.hpp"
#include "campus/lexical.hpp"
#include "campus/probe.hpp"
#include "campus/scorer.hpp"

namespace campus {

enum class Metric : int { length = 1, mtld = 2, loss = 3, score = 4 };

inline constexpr bool competence_aware(Metric m) { return m == Metric::loss || m == Metric::score; }

inline int metric_index(Metric m) { return static_cast<int>(m); }

inline std::string metric_name(Metric m) { return "d" + std::to_string(metric_index(m)); }

inline Metric parse_metric(const std::string& s) {
  if (s == "d1" || s == "length") return Metric::length;
  if (s == "d2" || s == "mtld") return Metric::mtld;
  if (s == "d3" || s == "loss") return Metric::loss;
  if (s == "d4" || s == "score") return Metric::score;
  throw ConfigError("unknown metric '" + s + "'");
}

/// Parses "d1,d2,..." into a sorted, duplicate-free metric list.
inline std::vector<Metric> parse_metric_set(const std::string& csv) {
  std::vector<Metric> out;
  std::size_t start = 0;
  while (start <= csv.size()) {
    const auto comma = csv.find(',', start);
    const auto item = csv.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
    if (!item.empty()) out.push_back(parse_metric(item));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  if (out.empty()) throw ConfigError("metric set is empty");
  return out;
}

struct DifficultyVector {
  double d1 = 0.0;
  double d2 = 0.0;
  std::optional<double> d3;
  std::optional<double> d4;
  bool d3_stale = false;
  bool d4_stale = false;
};

// ---------------------------------------------------------------------------
// Individual metrics

/// Instruction, input and output token count (template markers excluded).
inline double length_difficulty(const EncodedSample& s) { return static_cast<double>(s.content.size()); }

inline double mtld_difficulty(const EncodedSample& s, double threshold = kDefaultTtrThreshold) {
  return mtld(s.content, threshold);
}

/// −Σ log p over response tokens, conditioned on everything before them.
inline double loss_difficulty(const EncodedSample& s, Probe& probe) {
  if (s.target_count == 0) throw MetricError("loss: sample has no response tokens");
  const auto lp = probe.logprobs(s.tokens);
  if (lp.size() != s.tokens.size()) throw ProbeError("probe returned wrong number of logprobs");
  return masked_loss(lp, s.roles);
}

inline double score_difficulty(const EncodedSample& s, Probe& probe, const ScorerModel& scorer) {
  if (scorer.feature_dim != probe.feature_dim())
    throw MetricError("score: scorer expects feature_dim " + std::to_string(scorer.feature_dim) +
                      " but probe provides " + std::to_string(probe.feature_dim()));
  return scorer.score(probe.features(s).concat());
}

/// What metric evaluation may touch. Probe and scorer are optional; metrics
/// needing an absent one fail.
struct MetricContext {
  const Corpus* corpus = nullptr;
  Probe* probe = nullptr;
  const ScorerModel* scorer = nullptr;
  double ttr_threshold = kDefaultTtrThreshold;
  std::size_t jobs = 1;
};

inline double metric_value(Metric m, SampleId id, const MetricContext& ctx) {
  const auto& s = ctx.corpus->encoded(id);
  try {
    switch (m) {
      case Metric::length:
        return length_difficulty(s);
      case Metric::mtld:
        return mtld_difficulty(s, ctx.ttr_threshold);
      case Metric::loss:
        if (!ctx.probe) throw MetricError("no probe supplied");
        return loss_difficulty(s, *ctx.probe);
      case Metric::score:
        if (!ctx.probe || !ctx.scorer) throw MetricError("probe and scorer required");
        return score_difficulty(s, *ctx.probe, *ctx.scorer);
    }
  } catch (const ProbeError&) {
    throw;
  } catch (const Error& e) {
    throw MetricError("sample " + std::to_string(id) + ", metric " + metric_name(m) + ": " + e.what());
  }
  throw MetricError("unknown metric");
}

/// Values of `m` for `ids`. Pure metrics fan out over `ctx.jobs` threads;
/// probe-backed metrics run sequentially.
inline std::vector<double> metric_values(Metric m, std::span<const SampleId> ids, const MetricContext& ctx) {
  std::vector<double> out(ids.size());
  const std::size_t jobs = competence_aware(m) ? 1 : std::max<std::size_t>(1, ctx.jobs);
  if (jobs == 1 || ids.size() < 2 * jobs) {
    for (std::size_t k = 0; k < ids.size(); ++k) out[k] = metric_value(m, ids[k], ctx);
    return out;
  }
  std::vector<std::exception_ptr> errors(jobs);
  std::vector<std::thread> workers;
  const std::size_t chunk = (ids.size() + jobs - 1) / jobs;
  for (std::size_t w = 0; w < jobs; ++w) {
    workers.emplace_back([&, w] {
      try {
        for (std::size_t k = w * chunk; k < std::min(ids.size(), (w + 1) * chunk); ++k)
          out[k] = metric_value(m, ids[k], ctx);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : workers) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

inline std::vector<SampleId> all_ids(std::size_t n) {
  std::vector<SampleId> ids(n);
  std::iota(ids.begin(), ids.end(), SampleId{0});
  return ids;
}

/// d1..d4 for every sample; d3/d4 only when the context allows them.
inline std::vector<DifficultyVector> compute_difficulties(const MetricContext& ctx) {
  const auto ids = all_ids(ctx.corpus->size());
  std::vector<DifficultyVector> out(ids.size());
  const auto d1 = metric_values(Metric::length, ids, ctx);
  const auto d2 = metric_values(Metric::mtld, ids, ctx);
  for (std::size_t k = 0; k < ids.size(); ++k) {
    out[k].d1 = d1[k];
    out[k].d2 = d2[k];
  }
  if (ctx.probe) {
    const auto d3 = metric_values(Metric::loss, ids, ctx);
    for (std::size_t k = 0; k < ids.size(); ++k) out[k].d3 = d3[k];
  }
  if (ctx.probe && ctx.scorer) {
    const auto d4 = metric_values(Metric::score, ids, ctx);
    for (std::size_t k = 0; k < ids.size(); ++k) out[k].d4 = d4[k];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Schedules

struct Schedule {
  Metric metric = Metric::length;
  std::vector<SampleId> order;

  bool competence_aware() const { return campus::competence_aware(metric); }
};

/// Sorts `ids` ascending by `values` (aligned with ids), ties by id.
inline void sort_by_values(std::span<SampleId> ids, std::span<const double> values) {
  std::vector<std::size_t> idx(ids.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    if (values[a] != values[b]) return values[a] < values[b];
    return ids[a] < ids[b];
  });
  std::vector<SampleId> sorted(ids.size());
  for (std::size_t k = 0; k < idx.size(); ++k) sorted[k] = ids[idx[k]];
  std::copy(sorted.begin(), sorted.end(), ids.begin());
}

/// One ascending schedule per metric, evaluated under the probe's current
/// (initial) state.
inline std::vector<Schedule> build_schedules(std::span<const Metric> metrics, const MetricContext& ctx) {
  std::vector<Schedule> out;
  for (auto m : metrics) {
    Schedule s{m, all_ids(ctx.corpus->size())};
    const auto values = metric_values(m, s.order, ctx);
    sort_by_values(s.order, values);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace campus
