#pragma once

// Annotation records: parsing, trimming, document-type mapping, the
// per-document train/test split and class-balancing oversampling.

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <tuple>
#include <unordered_map>
#include <utility>
#include <vector>

#include "json.hpp"
#include "policyscope/detail/csv.hpp"
#include "policyscope/detail/random.hpp"
#include "policyscope/error.hpp"

namespace policyscope {

inline constexpr int kCaseCount = 246;
inline constexpr int kAbstainCase = 245;

enum class Status { Pending, Accepted, Declined, ChangesRequested };

inline constexpr std::string_view to_string(Status s) {
  switch (s) {
    case Status::Pending: return "Pending";
    case Status::Accepted: return "Accepted";
    case Status::Declined: return "Declined";
    case Status::ChangesRequested: return "ChangesRequested";
  }
  return "Pending";
}

inline std::optional<Status> parse_status(std::string_view text) {
  const std::string key = detail::normalize_key(text);
  if (key == "pending") return Status::Pending;
  if (key == "accepted") return Status::Accepted;
  if (key == "declined") return Status::Declined;
  if (key == "changesrequested") return Status::ChangesRequested;
  return std::nullopt;
}

enum class DocType { TermsOfService = 0, PrivacyPolicy, CookiePolicy, DataPolicy, OtherPolicy };

inline constexpr int kDocTypeCount = 5;
inline constexpr std::array<DocType, kDocTypeCount> kAllDocTypes = {
    DocType::TermsOfService, DocType::PrivacyPolicy, DocType::CookiePolicy,
    DocType::DataPolicy, DocType::OtherPolicy};

inline constexpr std::string_view to_string(DocType d) {
  switch (d) {
    case DocType::TermsOfService: return "TermsOfService";
    case DocType::PrivacyPolicy: return "PrivacyPolicy";
    case DocType::CookiePolicy: return "CookiePolicy";
    case DocType::DataPolicy: return "DataPolicy";
    case DocType::OtherPolicy: return "OtherPolicy";
  }
  return "OtherPolicy";
}

inline constexpr std::string_view display_name(DocType d) {
  switch (d) {
    case DocType::TermsOfService: return "Terms of Service";
    case DocType::PrivacyPolicy: return "Privacy Policy";
    case DocType::CookiePolicy: return "Cookie Policy";
    case DocType::DataPolicy: return "Data Policy";
    case DocType::OtherPolicy: return "Other Policy";
  }
  return "Other Policy";
}

/// Accepts the identifier ("PrivacyPolicy"), the display name ("Privacy
/// Policy") or the numeric index ("1").
inline std::optional<DocType> parse_doc_type(std::string_view text) {
  const std::string key = detail::normalize_key(text);
  for (DocType d : kAllDocTypes) {
    if (key == detail::normalize_key(to_string(d))) return d;
  }
  if (key == "tos" || key == "termsofservice") return DocType::TermsOfService;
  if (key.size() == 1 && key[0] >= '0' && key[0] < '0' + kDocTypeCount) {
    return static_cast<DocType>(key[0] - '0');
  }
  return std::nullopt;
}

struct AnnotationRecord {
  std::string description;
  int case_id = 0;
  std::string doc_type_raw;
  Status status = Status::Pending;
  std::string service_id;
  std::string author_id;
  std::string comments;

  friend bool operator==(const AnnotationRecord&, const AnnotationRecord&) = default;
};

struct LabeledRecord {
  AnnotationRecord record;
  DocType doc_type = DocType::OtherPolicy;

  friend bool operator==(const LabeledRecord&, const LabeledRecord&) = default;
};

// ---------------------------------------------------------------------------
// Case taxonomy

class CaseTaxonomy {
 public:
  CaseTaxonomy() = default;

  /// Entries are indexed by case id, which must therefore be contiguous from 0.
  explicit CaseTaxonomy(std::vector<std::string> descriptions)
      : descriptions_(std::move(descriptions)) {
    for (std::size_t i = 0; i < descriptions_.size(); ++i) {
      auto [it, inserted] = by_text_.emplace(descriptions_[i], static_cast<int>(i));
      if (!inserted) {
        throw ValidationError("taxonomy: duplicate case description '" + descriptions_[i] + "'");
      }
    }
  }

  /// Placeholder names for the 245 substantive cases plus abstain at id 245.
  static CaseTaxonomy make_default() {
    std::vector<std::string> d;
    d.reserve(kCaseCount);
    for (int i = 0; i < kAbstainCase; ++i) d.push_back("Case " + std::to_string(i));
    d.push_back("Abstain");
    return CaseTaxonomy(std::move(d));
  }

  std::size_t size() const noexcept { return descriptions_.size(); }
  bool contains(int id) const noexcept {
    return id >= 0 && static_cast<std::size_t>(id) < descriptions_.size();
  }
  const std::string& description(int id) const {
    if (!contains(id)) throw ValidationError("taxonomy: unknown case id " + std::to_string(id));
    return descriptions_[static_cast<std::size_t>(id)];
  }
  std::optional<int> find(std::string_view description) const {
    auto it = by_text_.find(std::string(description));
    if (it == by_text_.end()) return std::nullopt;
    return it->second;
  }

  nlohmann::json to_json() const {
    nlohmann::json j = nlohmann::json::object();
    for (std::size_t i = 0; i < descriptions_.size(); ++i) j[std::to_string(i)] = descriptions_[i];
    return j;
  }

  static CaseTaxonomy from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ValidationError("taxonomy: expected a JSON object of id -> description");
    std::map<int, std::string> by_id;
    for (const auto& [key, value] : j.items()) {
      int id = -1;
      auto [p, ec] = std::from_chars(key.data(), key.data() + key.size(), id);
      if (ec != std::errc{} || p != key.data() + key.size() || id < 0) {
        throw ValidationError("taxonomy: key '" + key + "' is not a case id");
      }
      if (!value.is_string()) throw ValidationError("taxonomy: description for " + key + " is not a string");
      by_id.emplace(id, value.get<std::string>());
    }
    std::vector<std::string> d;
    for (const auto& [id, text] : by_id) {
      if (id != static_cast<int>(d.size())) {
        throw ValidationError("taxonomy: case ids are not contiguous at " + std::to_string(d.size()));
      }
      d.push_back(text);
    }
    return CaseTaxonomy(std::move(d));
  }

  static CaseTaxonomy load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open taxonomy file " + path.string());
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError("taxonomy " + path.string() + ": " + e.what());
    }
    return from_json(j);
  }

 private:
  std::vector<std::string> descriptions_;
  std::unordered_map<std::string, int> by_text_;
};

// ---------------------------------------------------------------------------
// Parsing

enum class InputFormat { Delimited, JsonLines };

struct RowError {
  std::size_t line = 0;
  std::string message;
};

struct ParseResult {
  std::vector<AnnotationRecord> records;
  std::vector<std::size_t> record_lines;  // source line of each record
  std::vector<RowError> errors;
};

namespace detail {

enum class Field { Description, Case, Title, Status, Service, Author, Comments };

struct FieldSpec {
  Field field;
  std::string_view name;  // canonical name used in messages and JSON-lines keys
  std::array<std::string_view, 4> aliases;
  bool required;
};

// Service is optional: the six exported attributes do not include it.
inline constexpr std::array<FieldSpec, 7> kFieldSpecs = {{
    {Field::Description, "description", {"description", "quote", "text", ""}, true},
    {Field::Case, "case", {"case", "caseid", "", ""}, true},
    {Field::Title, "title", {"title", "documenttitle", "document", ""}, true},
    {Field::Status, "status", {"status", "", "", ""}, true},
    {Field::Service, "service", {"service", "serviceid", "", ""}, false},
    {Field::Author, "author", {"authorid", "author", "userid", "user"}, true},
    {Field::Comments, "comments", {"comments", "comment", "", ""}, false},
}};

inline std::optional<int> parse_case_id(std::string_view text) {
  text = trim(text);
  int id = -1;
  auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), id);
  if (ec != std::errc{} || p != text.data() + text.size()) return std::nullopt;
  return id;
}

/// Builds a record from raw field text; returns an error message on failure.
inline std::optional<std::string> build_record(
    const std::array<std::optional<std::string>, 7>& values, AnnotationRecord& out) {
  auto get = [&](Field f) -> std::string {
    const auto& v = values[static_cast<std::size_t>(f)];
    return v ? *v : std::string{};
  };
  out.description = get(Field::Description);
  if (trim(out.description).empty()) return "empty description";
  const std::string case_text = get(Field::Case);
  auto id = parse_case_id(case_text);
  if (!id) return "unparseable case id '" + case_text + "'";
  if (*id < 0 || *id >= kCaseCount) return "case id " + std::to_string(*id) + " outside [0, 245]";
  out.case_id = *id;
  out.doc_type_raw = get(Field::Title);
  const std::string status_text = get(Field::Status);
  auto status = parse_status(status_text);
  if (!status) return "unknown status '" + status_text + "'";
  out.status = *status;
  out.service_id = get(Field::Service);
  out.author_id = get(Field::Author);
  out.comments = get(Field::Comments);
  return std::nullopt;
}

inline ParseResult parse_delimited(std::istream& in) {
  CsvReader reader(in);
  auto header = reader.next();
  if (!header) throw SchemaError("description");
  std::array<std::optional<std::size_t>, 7> column{};
  for (std::size_t c = 0; c < header->fields.size(); ++c) {
    const std::string key = normalize_key(header->fields[c]);
    for (const auto& spec : kFieldSpecs) {
      auto& slot = column[static_cast<std::size_t>(spec.field)];
      if (slot) continue;
      for (auto alias : spec.aliases) {
        if (!alias.empty() && key == alias) {
          slot = c;
          break;
        }
      }
    }
  }
  for (const auto& spec : kFieldSpecs) {
    if (spec.required && !column[static_cast<std::size_t>(spec.field)]) {
      throw SchemaError(std::string(spec.name));
    }
  }
  ParseResult result;
  while (true) {
    std::optional<CsvRow> row;
    try {
      row = reader.next();
    } catch (const ParseError& e) {
      result.errors.push_back({e.line(), "unterminated quoted field"});
      break;
    }
    if (!row) break;
    std::array<std::optional<std::string>, 7> values{};
    bool short_row = false;
    for (std::size_t f = 0; f < column.size(); ++f) {
      if (!column[f]) continue;
      if (*column[f] >= row->fields.size()) {
        short_row = kFieldSpecs[f].required;
        continue;
      }
      values[f] = row->fields[*column[f]];
    }
    if (short_row) {
      result.errors.push_back({row->line, "row has " + std::to_string(row->fields.size()) +
                                              " fields, fewer than the header"});
      continue;
    }
    AnnotationRecord rec;
    if (auto err = build_record(values, rec)) {
      result.errors.push_back({row->line, *err});
    } else {
      result.records.push_back(std::move(rec));
      result.record_lines.push_back(row->line);
    }
  }
  return result;
}

inline ParseResult parse_json_lines(std::istream& in) {
  ParseResult result;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception&) {
      result.errors.push_back({line_no, "invalid JSON"});
      continue;
    }
    if (!j.is_object()) {
      result.errors.push_back({line_no, "expected a JSON object"});
      continue;
    }
    std::array<std::optional<std::string>, 7> values{};
    std::optional<std::string> missing;
    for (const auto& spec : kFieldSpecs) {
      auto it = j.find(std::string(spec.name));
      if (it == j.end() || it->is_null()) {
        if (spec.required && !missing) missing = std::string(spec.name);
        continue;
      }
      auto& slot = values[static_cast<std::size_t>(spec.field)];
      if (it->is_string()) slot = it->get<std::string>();
      else if (it->is_number_integer()) slot = std::to_string(it->get<long long>());
      else slot = it->dump();
    }
    if (missing) {
      result.errors.push_back({line_no, "missing key '" + *missing + "'"});
      continue;
    }
    AnnotationRecord rec;
    if (auto err = build_record(values, rec)) {
      result.errors.push_back({line_no, *err});
    } else {
      result.records.push_back(std::move(rec));
      result.record_lines.push_back(line_no);
    }
  }
  return result;
}

}  // namespace detail

inline ParseResult parse_records(std::istream& in, InputFormat format) {
  return format == InputFormat::Delimited ? detail::parse_delimited(in)
                                          : detail::parse_json_lines(in);
}

/// Malformed rows are reported in ParseResult::errors; a missing required
/// column raises SchemaError.
inline ParseResult parse_records(const std::filesystem::path& path, InputFormat format) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return parse_records(in, format);
}

inline InputFormat guess_format(const std::filesystem::path& path) {
  auto ext = path.extension().string();
  return (ext == ".jsonl" || ext == ".json" || ext == ".ndjson") ? InputFormat::JsonLines
                                                                 : InputFormat::Delimited;
}

// ---------------------------------------------------------------------------
// Trimming

struct TrimPolicy {
  std::set<Status> allowed_statuses = {Status::Accepted};
  bool filter_status = true;
  bool drop_empty = true;
  bool deduplicate = true;
};

struct TrimResult {
  std::vector<AnnotationRecord> records;
  std::size_t input_count = 0;
  std::size_t dropped_status = 0;
  std::size_t dropped_empty = 0;
  std::size_t dropped_duplicate = 0;
};

/// Status filter, then empty-description filter, then exact deduplication on
/// (description, title, case). The first occurrence of a duplicate survives.
inline TrimResult trim_records(std::span<const AnnotationRecord> records,
                               const TrimPolicy& policy = {}) {
  TrimResult out;
  out.input_count = records.size();
  std::set<std::tuple<std::string_view, std::string_view, int>> seen;
  for (const auto& r : records) {
    if (policy.filter_status && !policy.allowed_statuses.contains(r.status)) {
      ++out.dropped_status;
      continue;
    }
    if (policy.drop_empty && detail::trim(r.description).empty()) {
      ++out.dropped_empty;
      continue;
    }
    if (policy.deduplicate && !seen.emplace(r.description, r.doc_type_raw, r.case_id).second) {
      ++out.dropped_duplicate;
      continue;
    }
    out.records.push_back(r);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Document-type mapping

struct MappingRule {
  std::string keyword;  // lowercase
  DocType doc_type;
};

class MappingRuleset {
 public:
  MappingRuleset() = default;
  explicit MappingRuleset(std::vector<MappingRule> rules) : rules_(std::move(rules)) {
    for (auto& r : rules_) {
      std::transform(r.keyword.begin(), r.keyword.end(), r.keyword.begin(),
                     [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
      if (r.keyword.empty()) throw ValidationError("mapping rule with empty keyword");
    }
  }

  static MappingRuleset make_default() {
    return MappingRuleset({{"terms", DocType::TermsOfService},
                           {"conditions", DocType::TermsOfService},
                           {"eula", DocType::TermsOfService},
                           {"privacy", DocType::PrivacyPolicy},
                           {"cookie", DocType::CookiePolicy},
                           {"data", DocType::DataPolicy}});
  }

  const std::vector<MappingRule>& rules() const noexcept { return rules_; }

  nlohmann::json to_json() const {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& r : rules_) {
      j.push_back({{"keyword", r.keyword}, {"doctype", std::string(to_string(r.doc_type))}});
    }
    return j;
  }

  static MappingRuleset from_json(const nlohmann::json& j) {
    if (!j.is_array()) throw ValidationError("mapping: expected an array of {keyword, doctype}");
    std::vector<MappingRule> rules;
    for (const auto& item : j) {
      if (!item.is_object() || !item.contains("keyword") || !item.contains("doctype")) {
        throw ValidationError("mapping: each rule needs 'keyword' and 'doctype'");
      }
      auto d = parse_doc_type(item.at("doctype").get<std::string>());
      if (!d) throw ValidationError("mapping: unknown doctype " + item.at("doctype").dump());
      rules.push_back({item.at("keyword").get<std::string>(), *d});
    }
    return MappingRuleset(std::move(rules));
  }

  static MappingRuleset load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open mapping file " + path.string());
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError("mapping " + path.string() + ": " + e.what());
    }
    return from_json(j);
  }

 private:
  std::vector<MappingRule> rules_;
};

/// First rule whose keyword is a case-insensitive substring wins.
inline DocType map_doctype(std::string_view doc_type_raw, const MappingRuleset& rules) {
  std::string lower(doc_type_raw);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  for (const auto& r : rules.rules()) {
    if (lower.find(r.keyword) != std::string::npos) return r.doc_type;
  }
  return DocType::OtherPolicy;
}

inline std::vector<LabeledRecord> map_doctypes(std::span<const AnnotationRecord> records,
                                               const MappingRuleset& rules) {
  std::vector<LabeledRecord> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back({r, map_doctype(r.doc_type_raw, rules)});
  return out;
}

// ---------------------------------------------------------------------------
// Split

struct DatasetSplit {
  std::vector<LabeledRecord> train;
  std::vector<LabeledRecord> test;
  std::size_t threshold = 10;
  std::size_t train_groups = 0;
  std::size_t test_groups = 0;
  std::vector<std::string> warnings;

  double annotation_ratio() const {
    auto total = train.size() + test.size();
    return total ? static_cast<double>(train.size()) / static_cast<double>(total) : 0.0;
  }
  double document_ratio() const {
    auto total = train_groups + test_groups;
    return total ? static_cast<double>(train_groups) / static_cast<double>(total) : 0.0;
  }
};

/// Groups by (service, doctype); records without a service are grouped by
/// their raw title instead. Groups with at least `threshold` records go to
/// train, the rest to test. Input order is kept within each side.
inline DatasetSplit split_by_service(std::span<const LabeledRecord> records,
                                     std::size_t threshold = 10) {
  DatasetSplit split;
  split.threshold = threshold;
  if (records.empty()) {
    split.warnings.push_back("empty input: nothing to split");
    return split;
  }
  using GroupKey = std::tuple<bool, std::string_view, DocType>;
  auto key_of = [](const LabeledRecord& r) -> GroupKey {
    const bool by_title = r.record.service_id.empty();
    return {by_title, by_title ? std::string_view(r.record.doc_type_raw) : std::string_view(r.record.service_id),
            r.doc_type};
  };
  std::map<GroupKey, std::size_t> group_size;
  for (const auto& r : records) ++group_size[key_of(r)];
  for (const auto& [key, n] : group_size) {
    (n >= threshold ? split.train_groups : split.test_groups) += 1;
  }
  for (const auto& r : records) {
    if (group_size.at(key_of(r)) >= threshold) split.train.push_back(r);
    else split.test.push_back(r);
  }
  if (split.train.empty()) split.warnings.push_back("no group reaches the threshold; train is empty");
  return split;
}

// ---------------------------------------------------------------------------
// Oversampling

/// Random oversampling with replacement: every label is topped up to the
/// majority label's count by drawing uniformly from that label's originals.
/// Duplicates are appended after the originals (labels in ascending order)
/// and the combined set is shuffled with the same seed. When no label needs
/// topping up the input is returned unchanged.
template <class T, class LabelOf>
std::vector<T> oversample(std::span<const T> items, LabelOf label_of, std::uint64_t seed) {
  using Label = std::decay_t<decltype(label_of(items[0]))>;
  std::vector<T> out(items.begin(), items.end());
  if (items.empty()) return out;
  std::map<Label, std::vector<std::size_t>> by_label;
  for (std::size_t i = 0; i < items.size(); ++i) by_label[label_of(items[i])].push_back(i);
  std::size_t majority = 0;
  for (const auto& [label, idx] : by_label) majority = std::max(majority, idx.size());
  if (majority * by_label.size() == items.size()) return out;

  detail::Rng rng(seed);
  out.reserve(majority * by_label.size());
  for (const auto& [label, idx] : by_label) {
    for (std::size_t k = idx.size(); k < majority; ++k) out.push_back(items[idx[rng.below(idx.size())]]);
  }
  rng.shuffle(std::span<T>(out));
  return out;
}

// ---------------------------------------------------------------------------
// JSON-lines serialization

inline nlohmann::json to_json(const AnnotationRecord& r) {
  return {{"description", r.description}, {"case", r.case_id},
          {"title", r.doc_type_raw},      {"status", std::string(to_string(r.status))},
          {"service", r.service_id},      {"author", r.author_id},
          {"comments", r.comments}};
}

inline nlohmann::json to_json(const LabeledRecord& r) {
  auto j = to_json(r.record);
  j["doctype"] = std::string(to_string(r.doc_type));
  return j;
}

/// Reads JSON-lines records that carry a "doctype" field (the output of ingest
/// or split). Malformed lines raise ParseError.
inline std::vector<LabeledRecord> read_labeled_records(std::istream& in) {
  std::vector<LabeledRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    std::istringstream one(line);
    auto parsed = detail::parse_json_lines(one);
    if (!parsed.errors.empty()) throw ParseError(line_no, parsed.errors.front().message);
    auto j = nlohmann::json::parse(line);
    auto it = j.find("doctype");
    if (it == j.end() || !it->is_string()) throw ParseError(line_no, "missing key 'doctype'");
    auto d = parse_doc_type(it->get<std::string>());
    if (!d) throw ParseError(line_no, "unknown doctype '" + it->get<std::string>() + "'");
    out.push_back({std::move(parsed.records.front()), *d});
  }
  return out;
}

inline std::vector<LabeledRecord> read_labeled_records(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return read_labeled_records(in);
}

}  // namespace policyscope
