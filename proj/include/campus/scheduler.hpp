#pragma once

// Dynamic curriculum scheduler: learning scope, schedule segmentation,
// candidate perplexity, selection policies and competence-aware re-sorting.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "campus/corpus.hpp"
#include "campus/error.hpp"
#include "campus/metrics.hpp"
#include "campus/probe.hpp"

namespace campus {

struct ScopeConfig {
  double s1 = 0.01;
  double p = 2.0;
  std::size_t total_steps = 100;  // T

  void validate() const {
    if (!(s1 > 0.0 && s1 < 1.0)) throw ConfigError("s1 must lie in (0,1)");
    if (!(p >= 1.0) || !std::isfinite(p)) throw ConfigError("p must be >= 1");
    if (total_steps < 1) throw ConfigError("T must be >= 1");
  }
};

/// Learning scope s(t) for 1 <= t <= T. s(T) is exactly 1.
inline double scope(std::size_t t, const ScopeConfig& cfg) {
  if (t < 1 || t > cfg.total_steps)
    throw ConfigError("scope: step " + std::to_string(t) + " outside [1, " +
                      std::to_string(cfg.total_steps) + "]");
  if (t == cfg.total_steps) return 1.0;
  if (t == 1) return cfg.s1;
  const double base = std::pow(cfg.s1, cfg.p);
  const double arg = static_cast<double>(t) * (1.0 - base) / static_cast<double>(cfg.total_steps) + base;
  return std::min(1.0, std::pow(arg, 1.0 / cfg.p));
}

/// s(t) with s(0) = 0.
inline double scope_edge(std::size_t t, const ScopeConfig& cfg) { return t == 0 ? 0.0 : scope(t, cfg); }

/// floor(fraction * n), clamped to [0, n].
inline std::size_t position_of(double fraction, std::size_t n) {
  if (fraction >= 1.0) return n;
  if (fraction <= 0.0) return 0;
  return std::min(n, static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n))));
}

struct SubCurriculum {
  Metric metric = Metric::length;
  std::size_t t = 1;
  double lo = 0.0;
  double hi = 0.0;
  std::size_t begin = 0;  // order positions [begin, end)
  std::size_t end = 0;
  std::vector<SampleId> ids;

  bool empty() const { return ids.empty(); }
};

/// Sub-curriculum t of `schedule`: order positions [floor(s(t-1) N), floor(s(t) N)).
inline SubCurriculum slice_at(const Schedule& schedule, std::size_t t, const ScopeConfig& cfg) {
  SubCurriculum sc;
  sc.metric = schedule.metric;
  sc.t = t;
  sc.lo = scope_edge(t - 1, cfg);
  sc.hi = scope(t, cfg);
  const std::size_t n = schedule.order.size();
  sc.begin = position_of(sc.lo, n);
  sc.end = std::max(sc.begin, position_of(sc.hi, n));
  sc.ids.assign(schedule.order.begin() + static_cast<std::ptrdiff_t>(sc.begin),
                schedule.order.begin() + static_cast<std::ptrdiff_t>(sc.end));
  return sc;
}

/// All T sub-curricula; empty ones (from rounding) are kept.
inline std::vector<SubCurriculum> segment(const Schedule& schedule, const ScopeConfig& cfg) {
  cfg.validate();
  if (schedule.order.empty()) throw ConfigError("segment: empty schedule");
  std::vector<SubCurriculum> out;
  out.reserve(cfg.total_steps);
  for (std::size_t t = 1; t <= cfg.total_steps; ++t) out.push_back(slice_at(schedule, t, cfg));
  return out;
}

/// Mean over the batch of exp(−mean token logprob), each sample scored over
/// its full rendered stream. Samples without tokens are skipped.
inline double batch_ppl(std::span<const SampleId> ids, Probe& probe, const Corpus& corpus) {
  double sum = 0.0;
  std::size_t used = 0;
  for (auto id : ids) {
    const auto& tokens = corpus.encoded(id).tokens;
    if (tokens.empty()) continue;
    sum += perplexity_from_logprobs(probe.logprobs(tokens));
    ++used;
  }
  if (used == 0) throw MetricError("batch_ppl: no sample in the batch has tokens");
  return sum / static_cast<double>(used);
}

// ---------------------------------------------------------------------------
// Selection

struct Candidate {
  int schedule = 0;  // metric index
  double ppl = 0.0;
};

/// Minimum-PPL candidate; ties go to the lowest schedule index.
inline int select_next(std::span<const Candidate> candidates) {
  if (candidates.empty()) throw ConfigError("select_next: no candidates (all schedules exhausted)");
  const Candidate* best = &candidates[0];
  for (const auto& c : candidates)
    if (c.ppl < best->ppl || (c.ppl == best->ppl && c.schedule < best->schedule)) best = &c;
  return best->schedule;
}

enum class SelectionPolicy { min, max, random, sequential };

inline SelectionPolicy parse_policy(const std::string& s) {
  if (s == "min") return SelectionPolicy::min;
  if (s == "max") return SelectionPolicy::max;
  if (s == "random") return SelectionPolicy::random;
  if (s == "sequential") return SelectionPolicy::sequential;
  throw ConfigError("unknown selection policy '" + s + "'");
}

inline std::string policy_name(SelectionPolicy p) {
  switch (p) {
    case SelectionPolicy::min: return "min";
    case SelectionPolicy::max: return "max";
    case SelectionPolicy::random: return "random";
    case SelectionPolicy::sequential: return "sequential";
  }
  return "?";
}

/// Stateful chooser over the live candidates for each policy.
class Selector {
 public:
  Selector(SelectionPolicy policy, std::uint64_t seed) : policy_(policy), rng_(seed) {}

  int choose(std::span<const Candidate> candidates) {
    if (candidates.empty()) throw ConfigError("no candidates (all schedules exhausted)");
    int chosen = 0;
    switch (policy_) {
      case SelectionPolicy::min:
        chosen = select_next(candidates);
        break;
      case SelectionPolicy::max: {
        const Candidate* best = &candidates[0];
        for (const auto& c : candidates)
          if (c.ppl > best->ppl || (c.ppl == best->ppl && c.schedule < best->schedule)) best = &c;
        chosen = best->schedule;
        break;
      }
      case SelectionPolicy::random: {
        std::uniform_int_distribution<std::size_t> pick(0, candidates.size() - 1);
        chosen = candidates[pick(rng_)].schedule;
        break;
      }
      case SelectionPolicy::sequential: {
        // Next schedule index after the previous pick, wrapping around.
        const Candidate* next = nullptr;
        const Candidate* first = &candidates[0];
        for (const auto& c : candidates) {
          if (c.schedule < first->schedule) first = &c;
          if (c.schedule > last_ && (!next || c.schedule < next->schedule)) next = &c;
        }
        chosen = (next ? next : first)->schedule;
        break;
      }
    }
    last_ = chosen;
    return chosen;
  }

  /// Whether choose() reads candidate PPL values at all.
  bool needs_ppl() const { return policy_ == SelectionPolicy::min || policy_ == SelectionPolicy::max; }

 private:
  SelectionPolicy policy_;
  std::mt19937_64 rng_;
  int last_ = 0;
};

// ---------------------------------------------------------------------------
// Competence-aware re-sort

/// Re-sorts order positions at and after floor(fraction * N) by fresh metric
/// values (ties by id). The consumed prefix is untouched. A non-zero
/// `window` limits fresh evaluation and re-sorting to the next `window`
/// positions.
template <typename ValueFn>
void resort_tail(Schedule& schedule, double fraction, ValueFn&& value_of, std::size_t window = 0) {
  if (!schedule.competence_aware())
    throw ConfigError("resort_tail: schedule " + metric_name(schedule.metric) + " is not competence-aware");
  if (!(fraction >= 0.0 && fraction <= 1.0)) throw ConfigError("resort_tail: fraction outside [0,1]");
  const std::size_t n = schedule.order.size();
  const std::size_t cut = position_of(fraction, n);
  const std::size_t stop = window ? std::min(n, cut + window) : n;
  if (stop <= cut) return;
  std::span<SampleId> tail(schedule.order.data() + cut, stop - cut);
  std::vector<double> values(tail.size());
  for (std::size_t k = 0; k < tail.size(); ++k) values[k] = value_of(tail[k]);
  sort_by_values(tail, values);
}

/// Per-schedule bookkeeping: cursor t and the cached candidate PPL.
struct ScheduleCursor {
  std::size_t t = 1;
  std::optional<double> ppl;
  SubCurriculum candidate;

  bool exhausted(const ScopeConfig& cfg) const { return t > cfg.total_steps; }
};

}  // namespace campus
