#pragma once

// Type-token ratio and MTLD lexical diversity.

#include <algorithm>
#include <cstddef>
#include <unordered_set>
#include <vector>

#include "campus/corpus.hpp"
#include "campus/error.hpp"

namespace campus {

inline constexpr double kDefaultTtrThreshold = 0.72;

/// Unique types over token count.
inline double ttr(TokenView tokens) {
  if (tokens.empty()) throw MetricError("ttr: empty token sequence");
  std::unordered_set<TokenId> types(tokens.begin(), tokens.end());
  return static_cast<double>(types.size()) / static_cast<double>(tokens.size());
}

/// Factor count of one MTLD pass, partial factor included.
template <typename It>
double mtld_factor_count(It first, It last, double threshold) {
  double factors = 0.0;
  std::unordered_set<TokenId> types;
  std::size_t window = 0;
  for (; first != last; ++first) {
    types.insert(*first);
    ++window;
    const double running = static_cast<double>(types.size()) / static_cast<double>(window);
    if (running <= threshold) {
      factors += 1.0;
      types.clear();
      window = 0;
    }
  }
  if (window > 0) {
    const double running = static_cast<double>(types.size()) / static_cast<double>(window);
    factors += (1.0 - running) / (1.0 - threshold);
  }
  return factors;
}

/// One directional MTLD pass: tokens / factors, or the token count when no
/// factor ever completes (every token in the text is distinct).
template <typename It>
double mtld_pass(It first, It last, double threshold) {
  const auto count = static_cast<double>(std::distance(first, last));
  const double factors = mtld_factor_count(first, last, threshold);
  return factors > 0.0 ? count / factors : count;
}

/// Bidirectional MTLD: mean of the forward and reverse passes.
inline double mtld(TokenView tokens, double threshold = kDefaultTtrThreshold) {
  if (tokens.empty()) throw MetricError("mtld: empty token sequence");
  if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("mtld: threshold must lie in (0,1)");
  const double forward = mtld_pass(tokens.begin(), tokens.end(), threshold);
  const double backward = mtld_pass(tokens.rbegin(), tokens.rend(), threshold);
  return 0.5 * (forward + backward);
}

}  // namespace campus
