#pragma once

// Reports over a finished trace: source composition of the first/last k
// trained samples and a per-step convergence table.

#include <algorithm>
#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "campus/corpus.hpp"
#include "campus/error.hpp"
#include "campus/runner.hpp"

namespace campus {

struct CompositionReport {
  std::map<std::string, double> first;
  std::map<std::string, double> last;
  std::size_t k = 0;
  bool clamped = false;
};

inline std::map<std::string, double> source_fractions(const Corpus& corpus, std::span<const SampleId> ids) {
  std::map<std::string, double> out;
  for (auto id : ids) out[corpus.sample(id).source] += 1.0;
  for (auto& [_, v] : out) v /= static_cast<double>(ids.size());
  return out;
}

/// Per-source fractions among the first and last `k` trained occurrences;
/// `k` beyond the trained count is clamped and flagged.
inline CompositionReport composition_report(const CurriculumTrace& trace, const Corpus& corpus, std::size_t k) {
  if (k < 1) throw ConfigError("composition_report: k must be >= 1");
  const auto ids = trace.trained_ids();
  if (ids.empty()) throw ConfigError("composition_report: trace has no trained samples");
  CompositionReport r;
  r.clamped = k > ids.size();
  r.k = std::min(k, ids.size());
  r.first = source_fractions(corpus, std::span<const SampleId>(ids.data(), r.k));
  r.last = source_fractions(corpus, std::span<const SampleId>(ids.data() + ids.size() - r.k, r.k));
  return r;
}

inline nlohmann::ordered_json to_json(const CompositionReport& r) {
  nlohmann::ordered_json j;
  j["first"] = nlohmann::ordered_json::object();
  for (const auto& [s, v] : r.first) j["first"][s] = v;
  j["last"] = nlohmann::ordered_json::object();
  for (const auto& [s, v] : r.last) j["last"][s] = v;
  j["k"] = r.k;
  j["clamped"] = r.clamped;
  return j;
}

inline constexpr const char* kConvergenceHeader = "step,schedule,loss,batch_ppl";

/// CSV, one row per step. Skipped steps leave the loss cell empty.
inline std::string convergence_report(const CurriculumTrace& trace) {
  std::string out = std::string(kConvergenceHeader) + "\n";
  for (const auto& s : trace.steps) {
    out += std::to_string(s.step) + "," + std::to_string(s.schedule) + ",";
    if (s.loss) out += format_double(*s.loss);
    out += "," + format_double(s.selected_ppl()) + "\n";
  }
  return out;
}

}  // namespace campus
