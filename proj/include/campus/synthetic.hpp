#pragma once

// Seeded synthetic instruction corpora with per-source vocabularies and
// length profiles, for demos, tests and desk-scale experiments.

#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "campus/corpus.hpp"

namespace campus {

struct SourceProfile {
  std::string name;
  std::string verb;         // leading instruction word
  std::string prefix;       // word prefix making the vocabulary source-specific
  std::size_t vocab = 50;
  std::size_t min_len = 10; // output length range in words
  std::size_t max_len = 40;
  double repeat = 0.2;      // chance of copying an earlier output word
};

inline std::vector<SourceProfile> default_profiles() {
  return {
      {"math", "Solve", "ma", 60, 20, 60, 0.35},
      {"code", "Implement", "co", 80, 8, 40, 0.5},
      {"general", "Explain", "ge", 200, 10, 50, 0.1},
  };
}

/// Short, repetitive code and long math: code is easy under length and
/// lexical diversity, math hard.
inline std::vector<SourceProfile> code_easy_profiles() {
  return {
      {"math", "Solve", "ma", 120, 60, 100, 0.05},
      {"code", "Implement", "co", 30, 3, 10, 0.6},
      {"general", "Explain", "ge", 200, 20, 40, 0.2},
  };
}

/// Large flat vocabularies and no repeats: a bigram model memorizes what it
/// has seen and knows little about the rest, so seen/unseen features separate.
inline std::vector<SourceProfile> separable_profiles() {
  return {
      {"math", "Solve", "ma", 4000, 15, 40, 0.0},
      {"code", "Implement", "co", 4000, 15, 40, 0.0},
      {"general", "Explain", "ge", 4000, 15, 40, 0.0},
  };
}

namespace detail {

inline std::string synthetic_word(const std::string& prefix, std::size_t k) {
  std::string w = prefix;
  do {
    w += static_cast<char>('a' + k % 26);
    k /= 26;
  } while (k);
  return w;
}

}  // namespace detail

/// Sample i draws its source round-robin from `profiles`. Words follow a
/// Zipf-like rank distribution within each source's vocabulary.
inline Dataset synthetic_corpus(std::size_t n, std::uint64_t seed,
                                const std::vector<SourceProfile>& profiles = default_profiles()) {
  std::mt19937_64 rng(seed);
  Dataset ds;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& prof = profiles[i % profiles.size()];
    std::vector<double> weights(prof.vocab);
    for (std::size_t r = 0; r < prof.vocab; ++r) weights[r] = 1.0 / static_cast<double>(r + 1);
    std::discrete_distribution<std::size_t> rank(weights.begin(), weights.end());
    std::uniform_int_distribution<std::size_t> len(prof.min_len, prof.max_len);
    std::uniform_int_distribution<std::size_t> ilen(2, 6);

    InstructionSample s;
    s.id = i;
    s.source = prof.name;
    s.instruction = prof.verb;
    for (std::size_t k = 0, m = ilen(rng); k < m; ++k)
      s.instruction += " " + detail::synthetic_word(prof.prefix, rank(rng));
    s.instruction += ".";

    std::vector<std::string> words;
    for (std::size_t k = 0, m = len(rng); k < m; ++k) {
      if (!words.empty() && unit(rng) < prof.repeat) {
        std::uniform_int_distribution<std::size_t> back(0, words.size() - 1);
        words.push_back(words[back(rng)]);
      } else {
        words.push_back(detail::synthetic_word(prof.prefix, rank(rng)));
      }
    }
    for (std::size_t k = 0; k < words.size(); ++k) {
      if (k) s.output += k % 9 == 0 ? ". " : " ";
      s.output += words[k];
    }
    s.output += ".";
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

}  // namespace campus
