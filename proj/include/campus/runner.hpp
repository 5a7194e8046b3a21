#pragma once

// End-to-end curriculum loop: initial sorts, then repeatedly pick a
// sub-curriculum among the schedules' next candidates, train the probe on
// it, re-sort competence-aware schedules past the consumed prefix, and
// advance the chosen schedule's cursor.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "campus/corpus.hpp"
#include "campus/error.hpp"
#include "campus/metrics.hpp"
#include "campus/probe.hpp"
#include "campus/scheduler.hpp"
#include "campus/scorer.hpp"

namespace campus {

struct RunConfig {
  ScopeConfig scope;
  std::vector<Metric> metrics{Metric::length, Metric::mtld, Metric::loss, Metric::score};
  SelectionPolicy policy = SelectionPolicy::min;
  bool dedup = false;
  /// Recompute every live candidate's PPL after each step instead of only
  /// the selected schedule's.
  bool refresh_all = false;
  /// 0 re-sorts the whole tail; otherwise only the next `resort_window` positions.
  std::size_t resort_window = 0;
  /// Early stop on loss plateau (relative improvement < rel_tol for
  /// `patience` consecutive trained steps).
  bool plateau = false;
  double rel_tol = 1e-4;
  std::size_t patience = 5;
  /// 0 means no cap; otherwise stop after this many steps.
  std::size_t max_steps = 0;
  double ttr_threshold = kDefaultTtrThreshold;
  std::uint64_t seed = 0;
  /// Worker threads for the pure metrics of the initial sort.
  std::size_t jobs = 1;

  void validate() const {
    scope.validate();
    if (metrics.empty()) throw ConfigError("metric set must not be empty");
    if (patience < 1) throw ConfigError("patience must be >= 1");
    if (!(rel_tol >= 0.0)) throw ConfigError("rel_tol must be >= 0");
  }
};

inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline nlohmann::ordered_json to_json(const RunConfig& c) {
  std::string metrics;
  for (auto m : c.metrics) metrics += (metrics.empty() ? "" : ",") + metric_name(m);
  return {{"metrics", metrics},
          {"T", c.scope.total_steps},
          {"s1", c.scope.s1},
          {"p", c.scope.p},
          {"select", policy_name(c.policy)},
          {"dedup", c.dedup},
          {"refresh_ppl", c.refresh_all ? "all" : "selected"},
          {"resort_window", c.resort_window},
          {"plateau", c.plateau},
          {"rel_tol", c.rel_tol},
          {"patience", c.patience},
          {"max_steps", c.max_steps},
          {"ttr_threshold", c.ttr_threshold},
          {"seed", c.seed}};
}

struct TraceStep {
  std::size_t step = 0;
  int schedule = 0;
  std::size_t t = 0;
  double lo = 0.0;
  double hi = 0.0;
  std::vector<SampleId> ids;
  std::map<int, double> ppl;  // live candidates at selection time
  std::optional<double> loss;  // absent when skipped
  bool skipped = false;

  double selected_ppl() const { return ppl.at(schedule); }
};

inline nlohmann::ordered_json to_json(const TraceStep& s) {
  nlohmann::ordered_json j;
  j["step"] = s.step;
  j["schedule"] = s.schedule;
  j["t"] = s.t;
  j["lo"] = s.lo;
  j["hi"] = s.hi;
  j["ids"] = s.ids;
  nlohmann::ordered_json ppl = nlohmann::ordered_json::object();
  for (const auto& [k, v] : s.ppl) ppl[std::to_string(k)] = v;
  j["ppl"] = std::move(ppl);
  j["loss"] = s.loss ? nlohmann::ordered_json(*s.loss) : nlohmann::ordered_json(nullptr);
  if (s.skipped) j["skipped"] = true;
  return j;
}

inline TraceStep trace_step_from_json(const nlohmann::json& j) {
  TraceStep s;
  s.step = j.at("step").get<std::size_t>();
  s.schedule = j.at("schedule").get<int>();
  s.t = j.at("t").get<std::size_t>();
  s.lo = j.at("lo").get<double>();
  s.hi = j.at("hi").get<double>();
  s.ids = j.at("ids").get<std::vector<SampleId>>();
  for (const auto& [k, v] : j.at("ppl").items()) s.ppl[std::stoi(k)] = v.get<double>();
  if (!j.at("loss").is_null()) s.loss = j.at("loss").get<double>();
  s.skipped = j.value("skipped", false);
  return s;
}

struct CurriculumTrace {
  nlohmann::ordered_json meta;
  std::vector<TraceStep> steps;

  /// Trained sample ids in trace order.
  std::vector<SampleId> trained_ids() const {
    std::vector<SampleId> out;
    for (const auto& s : steps)
      if (!s.skipped) out.insert(out.end(), s.ids.begin(), s.ids.end());
    return out;
  }
};

inline bool operator==(const TraceStep& a, const TraceStep& b) {
  return a.step == b.step && a.schedule == b.schedule && a.t == b.t && a.lo == b.lo && a.hi == b.hi &&
         a.ids == b.ids && a.ppl == b.ppl && a.loss == b.loss && a.skipped == b.skipped;
}

/// Serializes steps as JSONL, one object per line.
inline std::string trace_jsonl(const CurriculumTrace& trace) {
  std::string out;
  for (const auto& s : trace.steps) out += to_json(s).dump() + "\n";
  return out;
}

/// Runs the loop to convergence. When `sink` is given each step is written
/// and flushed as it happens, so a failure mid-run leaves the prefix on disk.
inline CurriculumTrace run(const Corpus& corpus, Probe& probe, const ScorerModel* scorer, const RunConfig& cfg,
                           std::ostream* sink = nullptr) {
  cfg.validate();
  if (corpus.empty()) throw ConfigError("run: empty dataset");
  const bool wants_score = std::find(cfg.metrics.begin(), cfg.metrics.end(), Metric::score) != cfg.metrics.end();
  if (wants_score && !scorer) throw ConfigError("metric d4 requires a trained scorer");

  CurriculumTrace trace;
  trace.meta["config"] = to_json(cfg);
  trace.meta["dataset_digest"] = dataset_digest(corpus);
  trace.meta["samples"] = corpus.size();
  trace.meta["vocab_size"] = corpus.vocab().size();

  MetricContext ctx;
  ctx.corpus = &corpus;
  ctx.probe = &probe;
  ctx.scorer = scorer;
  ctx.ttr_threshold = cfg.ttr_threshold;
  ctx.jobs = cfg.jobs;

  auto schedules = build_schedules(cfg.metrics, ctx);
  std::vector<ScheduleCursor> cursors(schedules.size());

  auto refresh_candidate = [&](std::size_t k) {
    auto& c = cursors[k];
    c.ppl.reset();
    while (!c.exhausted(cfg.scope)) {
      c.candidate = slice_at(schedules[k], c.t, cfg.scope);
      if (!c.candidate.empty()) break;
      ++c.t;
    }
    if (!c.exhausted(cfg.scope)) c.ppl = batch_ppl(c.candidate.ids, probe, corpus);
  };
  for (std::size_t k = 0; k < schedules.size(); ++k) refresh_candidate(k);

  Selector selector(cfg.policy, cfg.seed);
  std::set<SampleId> trained;
  std::optional<double> previous_loss;
  std::size_t flat_steps = 0;

  for (std::size_t step = 1;; ++step) {
    if (cfg.max_steps && step > cfg.max_steps) break;
    std::vector<Candidate> candidates;
    for (std::size_t k = 0; k < schedules.size(); ++k)
      if (cursors[k].ppl) candidates.push_back({metric_index(schedules[k].metric), *cursors[k].ppl});
    if (candidates.empty()) break;

    const int chosen = selector.choose(candidates);
    std::size_t k = 0;
    while (metric_index(schedules[k].metric) != chosen) ++k;
    auto& cursor = cursors[k];
    const SubCurriculum& sc = cursor.candidate;

    TraceStep rec;
    rec.step = step;
    rec.schedule = chosen;
    rec.t = sc.t;
    rec.lo = sc.lo;
    rec.hi = sc.hi;
    for (const auto& c : candidates) rec.ppl[c.schedule] = c.ppl;

    std::vector<SampleId> batch;
    for (auto id : sc.ids)
      if (!cfg.dedup || !trained.count(id)) batch.push_back(id);

    if (batch.empty()) {
      rec.skipped = true;
    } else {
      update_on(probe, corpus, batch);
      trained.insert(batch.begin(), batch.end());
      rec.loss = cross_entropy(probe, corpus, batch);
    }
    rec.ids = std::move(batch);

    if (schedules[k].competence_aware()) {
      const Metric m = schedules[k].metric;
      resort_tail(
          schedules[k], sc.hi, [&](SampleId id) { return metric_value(m, id, ctx); }, cfg.resort_window);
    }

    ++cursor.t;
    refresh_candidate(k);
    if (cfg.refresh_all)
      for (std::size_t o = 0; o < schedules.size(); ++o)
        if (o != k && cursors[o].ppl) cursors[o].ppl = batch_ppl(cursors[o].candidate.ids, probe, corpus);

    if (sink) *sink << to_json(rec).dump() << '\n' << std::flush;
    const auto loss = rec.loss;
    trace.steps.push_back(std::move(rec));

    if (cfg.plateau && loss) {
      if (previous_loss) {
        const double denom = std::max(std::abs(*previous_loss), 1e-300);
        flat_steps = (*previous_loss - *loss) / denom < cfg.rel_tol ? flat_steps + 1 : 0;
      }
      previous_loss = loss;
      if (flat_steps >= cfg.patience) break;
    }
  }
  return trace;
}

}  // namespace campus
