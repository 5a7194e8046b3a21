#pragma once

// Dataset ingestion, canonical rendering and the corpus tokenizer.

#include <cctype>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <istream>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include <json.hpp>

#include "campus/error.hpp"

namespace campus {

using TokenId = std::uint32_t;
using SampleId = std::size_t;
using TokenView = std::span<const TokenId>;

inline constexpr TokenId kUnknownToken = 0;

enum class TurnRole { user, assistant };

struct Turn {
  TurnRole role = TurnRole::user;
  std::string text;
};

struct InstructionSample {
  SampleId id = 0;
  std::optional<std::int64_t> explicit_id;
  std::string instruction;
  std::string input;
  std::string output;
  std::vector<Turn> turns;
  std::string source;

  bool multi_turn() const { return !turns.empty(); }
};

struct Dataset {
  std::vector<InstructionSample> samples;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
  const InstructionSample& operator[](SampleId id) const { return samples.at(id); }

  /// Appends another dataset, renumbering its ids so the range stays contiguous.
  void append(Dataset other) {
    for (auto& s : other.samples) {
      s.id = samples.size();
      samples.push_back(std::move(s));
    }
  }
};

// ---------------------------------------------------------------------------
// Tokenizer

/// Splits on whitespace, then splits every ASCII punctuation character into
/// its own piece. Bytes >= 0x80 are treated as word characters so UTF-8
/// sequences stay intact.
inline std::vector<std::string_view> split_words(std::string_view text) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  const std::size_t n = text.size();
  auto is_space = [](unsigned char c) { return c < 0x80 && std::isspace(c); };
  auto is_punct = [](unsigned char c) { return c < 0x80 && std::ispunct(c); };
  while (i < n) {
    const auto c = static_cast<unsigned char>(text[i]);
    if (is_space(c)) {
      ++i;
    } else if (is_punct(c)) {
      out.push_back(text.substr(i, 1));
      ++i;
    } else {
      std::size_t j = i;
      while (j < n) {
        const auto d = static_cast<unsigned char>(text[j]);
        if (is_space(d) || is_punct(d)) break;
        ++j;
      }
      out.push_back(text.substr(i, j - i));
      i = j;
    }
  }
  return out;
}

/// Token string <-> id mapping. Id 0 is reserved for the unknown token.
class Vocab {
 public:
  Vocab() { strings_.emplace_back("<unk>"); }

  std::size_t size() const { return strings_.size(); }

  /// Returns the id for `piece`, inserting it when absent.
  TokenId intern(std::string_view piece) {
    auto it = ids_.find(std::string(piece));
    if (it != ids_.end()) return it->second;
    const auto id = static_cast<TokenId>(strings_.size());
    strings_.emplace_back(piece);
    ids_.emplace(strings_.back(), id);
    return id;
  }

  TokenId lookup(std::string_view piece) const {
    auto it = ids_.find(std::string(piece));
    return it == ids_.end() ? kUnknownToken : it->second;
  }

  const std::string& piece(TokenId id) const { return strings_.at(id); }

 private:
  std::vector<std::string> strings_;
  std::unordered_map<std::string, TokenId> ids_;
};

struct TokenSequence {
  std::vector<TokenId> tokens;

  std::size_t size() const { return tokens.size(); }
  bool empty() const { return tokens.empty(); }
  TokenView view() const { return tokens; }
};

/// Tokenizes and grows `vocab` with unseen pieces.
inline TokenSequence tokenize(std::string_view text, Vocab& vocab) {
  TokenSequence seq;
  for (auto piece : split_words(text)) seq.tokens.push_back(vocab.intern(piece));
  return seq;
}

/// Tokenizes against a frozen vocab; unseen pieces map to the unknown id.
inline TokenSequence encode(std::string_view text, const Vocab& vocab) {
  TokenSequence seq;
  for (auto piece : split_words(text)) seq.tokens.push_back(vocab.lookup(piece));
  return seq;
}

inline std::string detokenize(TokenView tokens, const Vocab& vocab) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += vocab.piece(tokens[i]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Rendering

struct RenderTemplate {
  std::string instruction_marker = "### Instruction:\n";
  std::string input_marker = "### Input:\n";
  std::string response_marker = "### Response:\n";
  std::string separator = "\n\n";

  /// Reads `key=value` lines (instruction, input, response, separator).
  /// Values may use \n and \t escapes; '#'-prefixed lines are comments.
  static RenderTemplate load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open template file: " + path);
    RenderTemplate tpl;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty() || line[0] == '#') continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key=value");
      const std::string key = line.substr(0, eq);
      std::string value;
      for (std::size_t i = eq + 1; i < line.size(); ++i) {
        if (line[i] == '\\' && i + 1 < line.size()) {
          const char e = line[++i];
          value += e == 'n' ? '\n' : e == 't' ? '\t' : e;
        } else {
          value += line[i];
        }
      }
      if (key == "instruction") tpl.instruction_marker = value;
      else if (key == "input") tpl.input_marker = value;
      else if (key == "response") tpl.response_marker = value;
      else if (key == "separator") tpl.separator = value;
      else throw ConfigError(path + ":" + std::to_string(lineno) + ": unknown key '" + key + "'");
    }
    return tpl;
  }
};

enum class TokenRole : std::uint8_t { marker, prompt, target };

struct RenderPiece {
  std::string text;
  TokenRole role;
};

/// The rendered sample as an ordered list of pieces tagged by role. Pieces
/// meet on whitespace boundaries, so tokenizing them one by one yields the
/// same stream as tokenizing the joined text.
inline std::vector<RenderPiece> render_pieces(const InstructionSample& s,
                                              const RenderTemplate& tpl = {}) {
  std::vector<RenderPiece> pieces;
  if (!s.multi_turn()) {
    pieces.push_back({tpl.instruction_marker, TokenRole::marker});
    pieces.push_back({s.instruction, TokenRole::prompt});
    pieces.push_back({tpl.separator, TokenRole::marker});
    if (!s.input.empty()) {
      pieces.push_back({tpl.input_marker, TokenRole::marker});
      pieces.push_back({s.input, TokenRole::prompt});
      pieces.push_back({tpl.separator, TokenRole::marker});
    }
    pieces.push_back({tpl.response_marker, TokenRole::marker});
    pieces.push_back({s.output, TokenRole::target});
    return pieces;
  }
  for (std::size_t k = 0; k < s.turns.size(); ++k) {
    if (k) pieces.push_back({tpl.separator, TokenRole::marker});
    const auto& turn = s.turns[k];
    if (turn.role == TurnRole::user) {
      pieces.push_back({tpl.instruction_marker, TokenRole::marker});
      pieces.push_back({turn.text, TokenRole::prompt});
    } else {
      pieces.push_back({tpl.response_marker, TokenRole::marker});
      pieces.push_back({turn.text, TokenRole::target});
    }
  }
  return pieces;
}

inline std::string render_text(const InstructionSample& s, const RenderTemplate& tpl = {}) {
  std::string out;
  for (const auto& p : render_pieces(s, tpl)) out += p.text;
  return out;
}

// ---------------------------------------------------------------------------
// Loading

namespace detail {

inline std::string line_error(const std::string& origin, std::size_t lineno,
                              const std::string& what) {
  return origin + ":" + std::to_string(lineno) + ": " + what;
}

inline TurnRole parse_role(const std::string& role) {
  if (role == "user") return TurnRole::user;
  if (role == "assistant") return TurnRole::assistant;
  throw DataError("unknown turn role '" + role + "'");
}

inline InstructionSample parse_record(const nlohmann::json& j, const std::string& default_source) {
  if (!j.is_object()) throw DataError("record is not a JSON object");
  InstructionSample s;
  auto get_string = [&](const char* key, std::string& dst) {
    if (!j.contains(key) || j[key].is_null()) return;
    if (!j[key].is_string()) throw DataError(std::string("field '") + key + "' must be a string");
    dst = j[key].get<std::string>();
  };
  get_string("instruction", s.instruction);
  get_string("input", s.input);
  get_string("output", s.output);
  get_string("source", s.source);
  if (s.source.empty()) s.source = default_source;

  if (j.contains("id") && !j["id"].is_null()) {
    if (!j["id"].is_number_integer()) throw DataError("field 'id' must be an integer");
    s.explicit_id = j["id"].get<std::int64_t>();
  }
  if (j.contains("turns") && !j["turns"].is_null()) {
    if (!j["turns"].is_array()) throw DataError("field 'turns' must be an array");
    for (const auto& t : j["turns"]) {
      if (!t.is_object() || !t.contains("role") || !t.contains("text") ||
          !t["role"].is_string() || !t["text"].is_string())
        throw DataError("each turn needs string fields 'role' and 'text'");
      s.turns.push_back({parse_role(t["role"].get<std::string>()), t["text"].get<std::string>()});
    }
    for (std::size_t k = 0; k < s.turns.size(); ++k) {
      const auto expected = k % 2 == 0 ? TurnRole::user : TurnRole::assistant;
      if (s.turns[k].role != expected)
        throw DataError("turns must alternate user/assistant starting with user");
    }
  }
  if (s.output.empty() && s.turns.empty())
    throw DataError("record has neither 'output' nor 'turns'");
  if (s.turns.empty() && !j.contains("instruction"))
    throw DataError("single-turn record is missing 'instruction'");
  return s;
}

}  // namespace detail

/// Parses JSONL records. Ids follow line order; blank lines are ignored.
inline Dataset parse_dataset(std::istream& in, const std::string& default_source = "default",
                             const std::string& origin = "<stream>") {
  Dataset ds;
  std::unordered_set<std::int64_t> seen_ids;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw DataError(detail::line_error(origin, lineno, std::string("malformed JSON: ") + e.what()));
    }
    InstructionSample s;
    try {
      s = detail::parse_record(j, default_source);
    } catch (const DataError& e) {
      throw DataError(detail::line_error(origin, lineno, e.what()));
    }
    if (s.explicit_id && !seen_ids.insert(*s.explicit_id).second)
      throw DataError(detail::line_error(origin, lineno,
                                         "duplicate id " + std::to_string(*s.explicit_id)));
    s.id = ds.samples.size();
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

inline Dataset load_dataset(const std::string& path, const std::string& default_source = "default") {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset: " + path);
  return parse_dataset(in, default_source, path);
}

inline nlohmann::ordered_json to_json(const InstructionSample& s) {
  nlohmann::ordered_json j;
  if (s.explicit_id) j["id"] = *s.explicit_id;
  if (s.multi_turn()) {
    auto turns = nlohmann::ordered_json::array();
    for (const auto& t : s.turns)
      turns.push_back({{"role", t.role == TurnRole::user ? "user" : "assistant"}, {"text", t.text}});
    j["turns"] = std::move(turns);
  } else {
    j["instruction"] = s.instruction;
    if (!s.input.empty()) j["input"] = s.input;
    j["output"] = s.output;
  }
  j["source"] = s.source;
  return j;
}

// ---------------------------------------------------------------------------
// Encoded corpus

/// A sample tokenized once for every metric and probe.
struct EncodedSample {
  /// Full rendered stream, markers included.
  std::vector<TokenId> tokens;
  std::vector<TokenRole> roles;
  /// Instruction, input and output tokens only (no template markers).
  std::vector<TokenId> content;
  std::size_t target_count = 0;
};

inline EncodedSample encode_sample(const InstructionSample& s, const Vocab& vocab,
                                   const RenderTemplate& tpl = {}) {
  EncodedSample e;
  for (const auto& piece : render_pieces(s, tpl)) {
    for (auto word : split_words(piece.text)) {
      const TokenId id = vocab.lookup(word);
      e.tokens.push_back(id);
      e.roles.push_back(piece.role);
      if (piece.role != TokenRole::marker) e.content.push_back(id);
      if (piece.role == TokenRole::target) ++e.target_count;
    }
  }
  return e;
}

/// Dataset plus its vocabulary and encoded samples. The vocab is built once
/// at construction and immutable afterwards.
class Corpus {
 public:
  Corpus() = default;

  explicit Corpus(Dataset ds, RenderTemplate tpl = {}) : dataset_(std::move(ds)), template_(std::move(tpl)) {
    for (const auto& s : dataset_.samples)
      for (const auto& piece : render_pieces(s, template_))
        for (auto word : split_words(piece.text)) vocab_.intern(word);
    encoded_.reserve(dataset_.size());
    for (const auto& s : dataset_.samples) encoded_.push_back(encode_sample(s, vocab_, template_));
  }

  std::size_t size() const { return dataset_.size(); }
  bool empty() const { return dataset_.empty(); }
  const Dataset& dataset() const { return dataset_; }
  const Vocab& vocab() const { return vocab_; }
  const RenderTemplate& render_template() const { return template_; }
  const InstructionSample& sample(SampleId id) const { return dataset_.samples.at(id); }
  const EncodedSample& encoded(SampleId id) const { return encoded_.at(id); }

 private:
  Dataset dataset_;
  RenderTemplate template_;
  Vocab vocab_;
  std::vector<EncodedSample> encoded_;
};

/// FNV-1a digest over ids, sources and rendered text.
inline std::uint64_t dataset_digest(const Corpus& corpus) {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&](std::string_view bytes) {
    for (unsigned char c : bytes) {
      h ^= c;
      h *= 1099511628211ull;
    }
    h ^= 0xff;
    h *= 1099511628211ull;
  };
  for (const auto& s : corpus.dataset().samples) {
    mix(std::to_string(s.id));
    mix(s.source);
    mix(render_text(s, corpus.render_template()));
  }
  return h;
}

}  // namespace campus
