#pragma once

// Text cleaning, rule-based sentence splitting and TF-IDF features.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <regex>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "json.hpp"
#include "policyscope/error.hpp"

namespace policyscope {

// ---------------------------------------------------------------------------
// Cleaning

namespace detail {

inline bool is_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

inline bool is_alpha(char c) { return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z'); }

// A tag is '<', an optional '/', a letter or '!' or '?', then anything up to
// the next '>' that does not contain another '<'.
inline std::string strip_tags(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  std::size_t i = 0;
  while (i < s.size()) {
    if (s[i] == '<') {
      std::size_t j = i + 1;
      if (j < s.size() && s[j] == '/') ++j;
      if (j < s.size() && (is_alpha(s[j]) || s[j] == '!' || s[j] == '?')) {
        std::size_t k = j;
        while (k < s.size() && s[k] != '>' && s[k] != '<') ++k;
        if (k < s.size() && s[k] == '>') {
          out.push_back(' ');
          i = k + 1;
          continue;
        }
      }
    }
    out.push_back(s[i++]);
  }
  return out;
}

inline std::string decode_entities(std::string_view s) {
  static constexpr std::pair<std::string_view, char> kEntities[] = {
      {"&amp;", '&'}, {"&lt;", '<'}, {"&gt;", '>'}, {"&quot;", '"'}, {"&nbsp;", ' '}, {"&apos;", '\''}};
  std::string out;
  out.reserve(s.size());
  std::size_t i = 0;
  while (i < s.size()) {
    if (s[i] == '&') {
      bool matched = false;
      for (auto [name, ch] : kEntities) {
        if (s.substr(i, name.size()) == name) {
          out.push_back(ch);
          i += name.size();
          matched = true;
          break;
        }
      }
      if (matched) continue;
    }
    out.push_back(s[i++]);
  }
  return out;
}

// Drops bytes above 127 and control characters; whitespace runs become one
// space and the ends are trimmed.
inline std::string ascii_collapse(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  bool pending_space = false;
  for (char c : s) {
    auto u = static_cast<unsigned char>(c);
    if (u > 127) continue;
    if (is_space(c)) {
      pending_space = true;
      continue;
    }
    if (u < 32 || u == 127) continue;
    if (pending_space && !out.empty()) out.push_back(' ');
    pending_space = false;
    out.push_back(c);
  }
  return out;
}

}  // namespace detail

/// Removes HTML tags and non-ASCII, decodes a small set of named entities and
/// normalizes whitespace. Repeats until nothing changes, so decoded entities
/// cannot reintroduce a tag and the function is idempotent.
inline std::string clean_text(std::string_view raw) {
  std::string current(raw);
  while (true) {
    std::string next = detail::ascii_collapse(detail::decode_entities(detail::strip_tags(current)));
    if (next == current) return next;
    current = std::move(next);
  }
}

// ---------------------------------------------------------------------------
// Sentences

struct SentenceConfig {
  std::set<std::string> abbreviations = {"e.g", "i.e", "etc", "no", "vs", "inc", "ltd", "cf"};
  std::size_t min_tokens = 3;
};

namespace detail {

inline std::size_t count_tokens(std::string_view s) {
  std::size_t n = 0;
  bool in_token = false;
  for (char c : s) {
    if (is_space(c)) in_token = false;
    else if (!in_token) {
      in_token = true;
      ++n;
    }
  }
  return n;
}

inline bool is_abbreviation_period(std::string_view text, std::size_t dot,
                                   const SentenceConfig& config) {
  std::size_t start = dot;
  while (start > 0 && !is_space(text[start - 1])) --start;
  std::string word;
  for (std::size_t i = start; i < dot; ++i) {
    char c = text[i];
    if (word.empty() && (c == '(' || c == '[' || c == '"' || c == '\'')) continue;
    word.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  if (word.size() == 1 && is_alpha(word[0])) return true;
  return config.abbreviations.contains(word);
}

}  // namespace detail

/// Splits on . ! ? ; followed by whitespace or end of text. A period closing a
/// listed abbreviation or a single letter does not end a sentence. Sentences
/// with fewer than `min_tokens` whitespace tokens are dropped.
inline std::vector<std::string> split_sentences(std::string_view text,
                                                const SentenceConfig& config = {}) {
  std::vector<std::string> out;
  auto emit = [&](std::size_t b, std::size_t e) {
    std::string_view piece = text.substr(b, e - b);
    while (!piece.empty() && detail::is_space(piece.front())) piece.remove_prefix(1);
    while (!piece.empty() && detail::is_space(piece.back())) piece.remove_suffix(1);
    if (!piece.empty() && detail::count_tokens(piece) >= config.min_tokens) out.emplace_back(piece);
  };
  std::size_t begin = 0;
  for (std::size_t i = 0; i < text.size(); ++i) {
    char c = text[i];
    if (c != '.' && c != '!' && c != '?' && c != ';') continue;
    if (i + 1 < text.size() && !detail::is_space(text[i + 1])) continue;
    if (c == '.' && detail::is_abbreviation_period(text, i, config)) continue;
    emit(begin, i + 1);
    begin = i + 1;
  }
  if (begin < text.size()) emit(begin, text.size());
  return out;
}

// ---------------------------------------------------------------------------
// TF-IDF

inline constexpr std::string_view kDefaultTokenPattern = "[a-z0-9]+";

struct TfidfConfig {
  bool lowercase = true;
  std::string token_pattern{kDefaultTokenPattern};
  std::size_t min_df = 2;
  std::size_t max_features = 50000;
  bool remove_stop_words = false;
  std::size_t ngram_max = 1;  // only unigrams are implemented

  friend bool operator==(const TfidfConfig&, const TfidfConfig&) = default;
};

struct FeatureEntry {
  std::uint32_t index;
  double weight;

  friend bool operator==(const FeatureEntry&, const FeatureEntry&) = default;
  friend auto operator<=>(const FeatureEntry&, const FeatureEntry&) = default;
};

/// Sparse vector with strictly increasing indices below `dimension`.
struct FeatureVector {
  std::size_t dimension = 0;
  std::vector<FeatureEntry> entries;
  bool normalized = false;

  double norm() const {
    double s = 0.0;
    for (const auto& e : entries) s += e.weight * e.weight;
    return std::sqrt(s);
  }

  /// Value at `index`, zero when absent.
  double at(std::uint32_t index) const {
    auto it = std::lower_bound(entries.begin(), entries.end(), index,
                               [](const FeatureEntry& e, std::uint32_t i) { return e.index < i; });
    return (it != entries.end() && it->index == index) ? it->weight : 0.0;
  }

  friend bool operator==(const FeatureVector&, const FeatureVector&) = default;
};

struct TermInfo {
  std::string term;
  std::uint32_t index;
  std::size_t df;
};

class Vocabulary {
 public:
  Vocabulary() = default;
  Vocabulary(std::vector<TermInfo> terms, std::size_t total_documents)
      : terms_(std::move(terms)), total_documents_(total_documents) {
    std::sort(terms_.begin(), terms_.end(),
              [](const TermInfo& a, const TermInfo& b) { return a.index < b.index; });
    for (std::size_t i = 0; i < terms_.size(); ++i) {
      const auto& t = terms_[i];
      if (t.index != i) throw ValidationError("vocabulary indices must be contiguous from 0");
      if (t.df < 1 || t.df > total_documents_) {
        throw ValidationError("vocabulary: document frequency of '" + t.term + "' out of range");
      }
      if (!lookup_.emplace(t.term, t.index).second) {
        throw ValidationError("vocabulary: duplicate term '" + t.term + "'");
      }
    }
  }

  std::size_t size() const noexcept { return terms_.size(); }
  std::size_t total_documents() const noexcept { return total_documents_; }
  const std::vector<TermInfo>& terms() const noexcept { return terms_; }
  std::optional<std::uint32_t> index_of(std::string_view term) const {
    auto it = lookup_.find(std::string(term));
    if (it == lookup_.end()) return std::nullopt;
    return it->second;
  }

 private:
  std::vector<TermInfo> terms_;
  std::unordered_map<std::string, std::uint32_t> lookup_;
  std::size_t total_documents_ = 0;
};

namespace detail {

inline const std::unordered_set<std::string>& english_stop_words() {
  static const std::unordered_set<std::string> words = {
      "a",    "an",   "and",  "are",  "as",    "at",   "be",   "by",    "for",  "from",
      "has",  "he",   "in",   "is",   "it",    "its",  "of",   "on",    "or",   "that",
      "the",  "to",   "was",  "were", "will",  "with", "this", "these", "they", "their",
      "them", "then", "than", "there", "which", "who", "whom", "we",    "our",  "you",
      "your", "i",    "me",   "my",   "not",   "but",  "if",   "so",    "do",   "does"};
  return words;
}

class Tokenizer {
 public:
  explicit Tokenizer(const TfidfConfig& config) : config_(config) {
    if (config_.ngram_max != 1) throw FitError("only unigram features are supported");
    if (config_.token_pattern != kDefaultTokenPattern) {
      try {
        pattern_ = std::regex(config_.token_pattern);
      } catch (const std::regex_error& e) {
        throw FitError(std::string("invalid token pattern: ") + e.what());
      }
    }
  }

  std::vector<std::string> operator()(std::string_view text) const {
    std::string s(text);
    if (config_.lowercase) {
      std::transform(s.begin(), s.end(), s.begin(),
                     [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    }
    std::vector<std::string> tokens;
    if (!pattern_) {
      std::size_t i = 0;
      while (i < s.size()) {
        auto word = [](char c) { return (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9'); };
        if (!word(s[i])) {
          ++i;
          continue;
        }
        std::size_t j = i;
        while (j < s.size() && word(s[j])) ++j;
        tokens.emplace_back(s.substr(i, j - i));
        i = j;
      }
    } else {
      for (std::sregex_iterator it(s.begin(), s.end(), *pattern_), end; it != end; ++it) {
        if (it->length() > 0) tokens.push_back(it->str());
      }
    }
    if (config_.remove_stop_words) {
      const auto& stop = english_stop_words();
      std::erase_if(tokens, [&](const std::string& t) { return stop.contains(t); });
    }
    return tokens;
  }

 private:
  TfidfConfig config_;
  std::optional<std::regex> pattern_;
};

}  // namespace detail

class TfidfModel {
 public:
  TfidfModel(TfidfConfig config, Vocabulary vocabulary)
      : config_(std::move(config)), vocabulary_(std::move(vocabulary)), tokenizer_(config_) {
    const double n = static_cast<double>(vocabulary_.total_documents());
    idf_.reserve(vocabulary_.size());
    for (const auto& t : vocabulary_.terms()) {
      idf_.push_back(std::log((1.0 + n) / (1.0 + static_cast<double>(t.df))) + 1.0);
    }
  }

  const TfidfConfig& config() const noexcept { return config_; }
  const Vocabulary& vocabulary() const noexcept { return vocabulary_; }
  std::size_t dimension() const noexcept { return vocabulary_.size(); }
  double idf(std::uint32_t index) const { return idf_.at(index); }
  std::vector<std::string> tokenize(std::string_view text) const { return tokenizer_(text); }

  /// Raw count times idf, L2-normalized unless every weight is zero.
  /// Out-of-vocabulary tokens are ignored.
  FeatureVector transform(std::string_view document) const {
    std::map<std::uint32_t, double> counts;
    for (const auto& tok : tokenizer_(document)) {
      if (auto idx = vocabulary_.index_of(tok)) counts[*idx] += 1.0;
    }
    FeatureVector v;
    v.dimension = dimension();
    v.entries.reserve(counts.size());
    double sq = 0.0;
    for (auto [idx, count] : counts) {
      double w = count * idf_[idx];
      v.entries.push_back({idx, w});
      sq += w * w;
    }
    if (sq > 0.0) {
      const double norm = std::sqrt(sq);
      for (auto& e : v.entries) e.weight /= norm;
      v.normalized = true;
    }
    return v;
  }

  nlohmann::json to_json() const {
    nlohmann::json terms = nlohmann::json::array();
    for (const auto& t : vocabulary_.terms()) {
      terms.push_back({{"term", t.term}, {"index", t.index}, {"df", t.df}});
    }
    return {{"format", "policyscope.tfidf"},
            {"format_version", 1},
            {"config",
             {{"lowercase", config_.lowercase},
              {"token_pattern", config_.token_pattern},
              {"min_df", config_.min_df},
              {"max_features", config_.max_features},
              {"remove_stop_words", config_.remove_stop_words},
              {"ngram_max", config_.ngram_max}}},
            {"total_documents", vocabulary_.total_documents()},
            {"terms", std::move(terms)}};
  }

  static TfidfModel from_json(const nlohmann::json& j) {
    try {
      if (j.at("format") != "policyscope.tfidf") throw ModelFormatError("not a TF-IDF model file");
      if (j.at("format_version") != 1) {
        throw ModelFormatError("unsupported TF-IDF format_version " + j.at("format_version").dump());
      }
      const auto& c = j.at("config");
      TfidfConfig config;
      config.lowercase = c.at("lowercase").get<bool>();
      config.token_pattern = c.at("token_pattern").get<std::string>();
      config.min_df = c.at("min_df").get<std::size_t>();
      config.max_features = c.at("max_features").get<std::size_t>();
      config.remove_stop_words = c.at("remove_stop_words").get<bool>();
      config.ngram_max = c.at("ngram_max").get<std::size_t>();
      std::vector<TermInfo> terms;
      for (const auto& t : j.at("terms")) {
        terms.push_back({t.at("term").get<std::string>(), t.at("index").get<std::uint32_t>(),
                         t.at("df").get<std::size_t>()});
      }
      return TfidfModel(config, Vocabulary(std::move(terms), j.at("total_documents").get<std::size_t>()));
    } catch (const nlohmann::json::exception& e) {
      throw ModelFormatError(std::string("corrupted TF-IDF model: ") + e.what());
    }
  }

 private:
  TfidfConfig config_;
  Vocabulary vocabulary_;
  detail::Tokenizer tokenizer_;
  std::vector<double> idf_;
};

/// Document frequency filter (min_df), then the max_features most frequent
/// terms (ties by term), indexed in lexicographic order.
/// idf(t) = ln((1 + N) / (1 + df(t))) + 1.
template <class Range>
TfidfModel fit_tfidf(const Range& documents, const TfidfConfig& config = {}) {
  detail::Tokenizer tokenize(config);
  std::unordered_map<std::string, std::size_t> df;
  std::size_t n_docs = 0;
  bool any_token = false;
  for (const auto& doc : documents) {
    ++n_docs;
    auto tokens = tokenize(std::string_view(doc));
    std::sort(tokens.begin(), tokens.end());
    tokens.erase(std::unique(tokens.begin(), tokens.end()), tokens.end());
    any_token = any_token || !tokens.empty();
    for (auto& t : tokens) ++df[std::move(t)];
  }
  if (n_docs == 0 || !any_token) throw FitError("empty corpus");

  std::vector<std::pair<std::string, std::size_t>> kept;
  for (auto& [term, count] : df) {
    if (count >= config.min_df) kept.emplace_back(term, count);
  }
  if (kept.empty()) throw FitError("no term reaches min_df = " + std::to_string(config.min_df));
  std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  if (kept.size() > config.max_features) kept.resize(config.max_features);
  std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) { return a.first < b.first; });

  std::vector<TermInfo> terms;
  terms.reserve(kept.size());
  for (std::size_t i = 0; i < kept.size(); ++i) {
    terms.push_back({kept[i].first, static_cast<std::uint32_t>(i), kept[i].second});
  }
  return TfidfModel(config, Vocabulary(std::move(terms), n_docs));
}

inline void save_tfidf(const TfidfModel& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << model.to_json().dump() << '\n';
}

inline TfidfModel load_tfidf(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ModelFormatError(std::string("corrupted model file: ") + e.what());
  }
  return TfidfModel::from_json(j);
}

}  // namespace policyscope
