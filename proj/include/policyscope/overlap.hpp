#pragma once

// Concept overlap between document types: per-type case frequencies, the
// total-variation loss between two case distributions, regime buckets by
// count difference, annotator agreement and encroachment reporting.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "policyscope/corpus.hpp"
#include "policyscope/detail/csv.hpp"
#include "policyscope/error.hpp"
#include "policyscope/predictions.hpp"

namespace policyscope {

/// case id -> fraction of a document type's examples with that case.
using CaseDistribution = std::map<int, double>;

struct CaseObservation {
  int case_id = 0;
  DocType doc_type = DocType::OtherPolicy;
};

class CaseFrequencyTable {
 public:
  void add(int case_id, DocType d, std::uint64_t n = 1) {
    auto& t = per_type_[static_cast<std::size_t>(d)];
    t.counts[case_id] += n;
    t.total += n;
  }

  std::uint64_t total(DocType d) const { return per_type_[static_cast<std::size_t>(d)].total; }
  const std::map<int, std::uint64_t>& counts(DocType d) const {
    return per_type_[static_cast<std::size_t>(d)].counts;
  }
  std::uint64_t count(DocType d, int case_id) const {
    const auto& c = counts(d);
    auto it = c.find(case_id);
    return it == c.end() ? 0 : it->second;
  }

  /// f_c = count_c / total. Throws when the document type has no examples.
  CaseDistribution fractions(DocType d) const {
    const auto& t = per_type_[static_cast<std::size_t>(d)];
    if (t.total == 0) {
      throw ValidationError("no examples for " + std::string(to_string(d)) + "; fractions undefined");
    }
    CaseDistribution f;
    for (auto [c, n] : t.counts) f[c] = static_cast<double>(n) / static_cast<double>(t.total);
    return f;
  }

  /// Document types whose fractions are undefined.
  std::vector<DocType> empty_doc_types() const {
    std::vector<DocType> out;
    for (DocType d : kAllDocTypes) {
      if (total(d) == 0) out.push_back(d);
    }
    return out;
  }

 private:
  struct PerType {
    std::map<int, std::uint64_t> counts;
    std::uint64_t total = 0;
  };
  std::array<PerType, kDocTypeCount> per_type_{};
};

inline CaseFrequencyTable case_frequencies(std::span<const CaseObservation> observations,
                                           bool include_abstain = true) {
  CaseFrequencyTable table;
  for (const auto& o : observations) {
    if (!include_abstain && o.case_id == kAbstainCase) continue;
    table.add(o.case_id, o.doc_type);
  }
  return table;
}

/// Uses the predicted case of every entry; each entry must carry a doc type.
inline CaseFrequencyTable case_frequencies(const PredictionSet& predictions, bool include_abstain = true) {
  if (predictions.task != Task::Case) throw ValidationError("case_frequencies needs case predictions");
  std::vector<CaseObservation> obs;
  obs.reserve(predictions.entries.size());
  for (const auto& e : predictions.entries) {
    if (!e.doc_type) throw ValidationError("prediction '" + e.example_id + "' has no doctype tag");
    obs.push_back({e.predicted, *e.doc_type});
  }
  return case_frequencies(obs, include_abstain);
}

inline nlohmann::json to_json(const CaseFrequencyTable& t) {
  nlohmann::json j = nlohmann::json::object();
  for (DocType d : kAllDocTypes) {
    nlohmann::json counts = nlohmann::json::object();
    nlohmann::json fractions = nlohmann::json::object();
    for (auto [c, n] : t.counts(d)) {
      counts[std::to_string(c)] = n;
      fractions[std::to_string(c)] = static_cast<double>(n) / static_cast<double>(t.total(d));
    }
    j[std::string(to_string(d))] = {{"total", t.total(d)}, {"counts", counts}, {"fractions", fractions}};
  }
  return j;
}

// ---------------------------------------------------------------------------
// Total-variation loss

inline constexpr double kNormalizationTolerance = 1e-6;

namespace detail {

inline void check_distribution(const CaseDistribution& f, const char* which) {
  double sum = 0.0;
  for (auto [c, p] : f) {
    if (!(p >= 0.0) || !std::isfinite(p)) {
      throw ValidationError(std::string(which) + ": fraction for case " + std::to_string(c) + " is not a probability");
    }
    sum += p;
  }
  if (std::abs(sum - 1.0) > kNormalizationTolerance) {
    throw ValidationError(std::string(which) + ": fractions sum to " + std::to_string(sum) + ", not 1");
  }
}

}  // namespace detail

/// Half the L1 distance between two case distributions; cases missing from
/// one side count as 0. Identical inputs give 0 and disjoint supports give
/// exactly 1.
inline double tv_loss(const CaseDistribution& first, const CaseDistribution& second) {
  detail::check_distribution(first, "first distribution");
  detail::check_distribution(second, "second distribution");
  double sum = 0.0, compensation = 0.0;  // Neumaier summation
  bool overlap = false;
  auto add = [&](double x) {
    const double t = sum + x;
    compensation += std::abs(sum) >= std::abs(x) ? (sum - t) + x : (x - t) + sum;
    sum = t;
  };
  auto a = first.begin(), b = second.begin();
  while (a != first.end() || b != second.end()) {
    if (b == second.end() || (a != first.end() && a->first < b->first)) {
      add(a->second);
      ++a;
    } else if (a == first.end() || b->first < a->first) {
      add(b->second);
      ++b;
    } else {
      if (a->second > 0.0 && b->second > 0.0) overlap = true;
      add(std::abs(a->second - b->second));
      ++a;
      ++b;
    }
  }
  if (!overlap) return 1.0;
  return std::clamp(0.5 * (sum + compensation), 0.0, 1.0);
}

// ---------------------------------------------------------------------------
// Regimes

struct RegimeEntry {
  int case_id = 0;
  std::uint64_t count_pp = 0;
  std::uint64_t count_tos = 0;
  std::int64_t diff = 0;  // count_pp - count_tos
};

struct RegimeReport {
  std::vector<RegimeEntry> pp_dominant;   // diff > band
  std::vector<RegimeEntry> tos_dominant;  // diff < -band
  std::vector<RegimeEntry> contested;     // |diff| <= band
  std::vector<RegimeEntry> filtered_out;  // below min_count on either side
  std::vector<int> excluded;              // present but listed in exclusions
  std::uint64_t min_count = 3;
  std::int64_t band = 5;
  std::set<int> exclusions;
};

/// Keeps cases with at least min_count occurrences in both Privacy Policy and
/// Terms of Service, drops exclusions, and buckets by raw count difference.
/// Buckets are sorted by |diff| descending, then case id.
inline RegimeReport regime_partition(const CaseFrequencyTable& table, std::uint64_t min_count = 3,
                                     std::int64_t band = 5, std::set<int> exclusions = {}) {
  if (table.total(DocType::PrivacyPolicy) == 0 || table.total(DocType::TermsOfService) == 0) {
    throw ValidationError("regime_partition needs both PrivacyPolicy and TermsOfService examples");
  }
  RegimeReport r;
  r.min_count = min_count;
  r.band = band;
  r.exclusions = std::move(exclusions);
  std::set<int> cases;
  for (const auto& [c, n] : table.counts(DocType::PrivacyPolicy)) cases.insert(c);
  for (const auto& [c, n] : table.counts(DocType::TermsOfService)) cases.insert(c);
  for (int c : cases) {
    RegimeEntry e;
    e.case_id = c;
    e.count_pp = table.count(DocType::PrivacyPolicy, c);
    e.count_tos = table.count(DocType::TermsOfService, c);
    e.diff = static_cast<std::int64_t>(e.count_pp) - static_cast<std::int64_t>(e.count_tos);
    if (r.exclusions.contains(c)) {
      r.excluded.push_back(c);
    } else if (e.count_pp < min_count || e.count_tos < min_count) {
      r.filtered_out.push_back(e);
    } else if (e.diff > band) {
      r.pp_dominant.push_back(e);
    } else if (e.diff < -band) {
      r.tos_dominant.push_back(e);
    } else {
      r.contested.push_back(e);
    }
  }
  auto by_magnitude = [](const RegimeEntry& a, const RegimeEntry& b) {
    auto ma = std::abs(a.diff), mb = std::abs(b.diff);
    return ma != mb ? ma > mb : a.case_id < b.case_id;
  };
  std::sort(r.pp_dominant.begin(), r.pp_dominant.end(), by_magnitude);
  std::sort(r.tos_dominant.begin(), r.tos_dominant.end(), by_magnitude);
  std::sort(r.contested.begin(), r.contested.end(), by_magnitude);
  return r;
}

inline nlohmann::json to_json(const RegimeEntry& e) {
  return {{"case_id", e.case_id}, {"count_pp", e.count_pp}, {"count_tos", e.count_tos}, {"diff", e.diff}};
}

inline nlohmann::json to_json(const RegimeReport& r) {
  auto list = [](const std::vector<RegimeEntry>& v) {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& e : v) a.push_back(to_json(e));
    return a;
  };
  return {{"filters", {{"min_count", r.min_count}, {"band", r.band}, {"exclusions", r.exclusions}}},
          {"pp_dominant", list(r.pp_dominant)},
          {"tos_dominant", list(r.tos_dominant)},
          {"contested", list(r.contested)},
          {"filtered_out", list(r.filtered_out)},
          {"excluded", r.excluded}};
}

// ---------------------------------------------------------------------------
// Agreement

struct KappaResult {
  double kappa = 0.0;
  double observed = 0.0;  // p_o
  double expected = 0.0;  // p_e
  bool degenerate = false;
};

/// Cohen's kappa between two raters. When chance agreement is 1 the ratio is
/// undefined; kappa is then 1 if observed agreement is 1, else 0, and the
/// result is flagged degenerate.
inline KappaResult cohen_kappa(std::span<const int> a, std::span<const int> b) {
  if (a.size() != b.size()) throw ValidationError("cohen_kappa: label lists differ in length");
  if (a.empty()) throw ValidationError("cohen_kappa: empty label lists");
  const double n = static_cast<double>(a.size());
  std::map<int, std::pair<std::uint64_t, std::uint64_t>> marginals;
  std::uint64_t agree = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ++marginals[a[i]].first;
    ++marginals[b[i]].second;
    if (a[i] == b[i]) ++agree;
  }
  KappaResult r;
  r.observed = static_cast<double>(agree) / n;
  for (const auto& [label, m] : marginals) {
    r.expected += (static_cast<double>(m.first) / n) * (static_cast<double>(m.second) / n);
  }
  if (r.expected >= 1.0) {
    r.degenerate = true;
    r.kappa = agree == a.size() ? 1.0 : 0.0;
    return r;
  }
  r.kappa = (r.observed - r.expected) / (1.0 - r.expected);
  return r;
}

/// One row per case, one binary label (1 = privacy-related) per annotator.
struct AnnotatorLabels {
  std::vector<std::string> annotators;
  std::vector<int> case_ids;
  std::vector<std::vector<int>> labels;  // labels[case][annotator]

  std::size_t annotator_count() const noexcept { return annotators.size(); }

  void validate() const {
    if (labels.size() != case_ids.size()) throw ValidationError("annotator labels: row count mismatch");
    std::set<int> seen;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (!seen.insert(case_ids[i]).second) {
        throw ValidationError("annotator labels: case " + std::to_string(case_ids[i]) + " listed twice");
      }
      if (labels[i].size() != annotators.size()) {
        throw ValidationError("annotator labels: case " + std::to_string(case_ids[i]) + " has " +
                              std::to_string(labels[i].size()) + " labels, expected " +
                              std::to_string(annotators.size()));
      }
      for (int l : labels[i]) {
        if (l != 0 && l != 1) {
          throw ValidationError("annotator labels: case " + std::to_string(case_ids[i]) + " has non-binary label");
        }
      }
    }
  }

  /// Column `annotator` as a list over cases.
  std::vector<int> column(std::size_t annotator) const {
    std::vector<int> out;
    out.reserve(labels.size());
    for (const auto& row : labels) out.push_back(row.at(annotator));
    return out;
  }
};

/// Reads "case_id,annotator_1,...,annotator_n" (any number of annotator columns).
inline AnnotatorLabels read_annotator_labels(std::istream& in) {
  detail::CsvReader reader(in);
  auto header = reader.next();
  if (!header || header->fields.empty()) throw SchemaError("case_id");
  if (detail::normalize_key(header->fields[0]) != "caseid") throw SchemaError("case_id");
  AnnotatorLabels out;
  for (std::size_t i = 1; i < header->fields.size(); ++i) {
    out.annotators.emplace_back(detail::trim(header->fields[i]));
  }
  while (auto row = reader.next()) {
    if (row->fields.size() != header->fields.size()) {
      throw ParseError(row->line, "expected " + std::to_string(header->fields.size()) + " fields");
    }
    auto id = detail::parse_case_id(row->fields[0]);
    if (!id) throw ParseError(row->line, "unparseable case_id '" + row->fields[0] + "'");
    std::vector<int> labels;
    for (std::size_t i = 1; i < row->fields.size(); ++i) {
      auto l = detail::parse_case_id(row->fields[i]);
      if (!l || (*l != 0 && *l != 1)) throw ParseError(row->line, "label '" + row->fields[i] + "' is not 0 or 1");
      labels.push_back(*l);
    }
    out.case_ids.push_back(*id);
    out.labels.push_back(std::move(labels));
  }
  out.validate();
  return out;
}

inline AnnotatorLabels read_annotator_labels(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return read_annotator_labels(in);
}

struct ConsensusLabel {
  int label = 0;
  bool contested = false;  // exact tie, resolved to 0
  std::size_t positive_votes = 0;
};

struct PairKappa {
  std::size_t first = 0;
  std::size_t second = 0;
  KappaResult result;
};

struct AgreementReport {
  std::vector<std::string> annotators;
  std::vector<std::vector<std::optional<double>>> kappa_matrix;  // diagonal left empty
  std::vector<PairKappa> pairs;
  double mean_kappa = 0.0;
  std::optional<KappaResult> fleiss;
  std::map<int, ConsensusLabel> consensus;
  std::size_t labels_consumed = 0;

  const ConsensusLabel& consensus_for(int case_id) const {
    auto it = consensus.find(case_id);
    if (it == consensus.end()) {
      throw ValidationError("no consensus label for case " + std::to_string(case_id));
    }
    return it->second;
  }
};

/// Fleiss' kappa for binary labels with a fixed number of raters per case.
inline KappaResult fleiss_kappa(const AnnotatorLabels& labels) {
  labels.validate();
  const std::size_t raters = labels.annotator_count();
  if (raters < 2 || labels.labels.empty()) throw ValidationError("fleiss_kappa: need >= 2 raters and >= 1 case");
  const double n = static_cast<double>(raters);
  const double cases = static_cast<double>(labels.labels.size());
  double agreement_sum = 0.0, positives = 0.0;
  for (const auto& row : labels.labels) {
    double ones = 0.0;
    for (int l : row) ones += l;
    const double zeros = n - ones;
    agreement_sum += (ones * ones + zeros * zeros - n) / (n * (n - 1.0));
    positives += ones;
  }
  KappaResult r;
  r.observed = agreement_sum / cases;
  const double p1 = positives / (cases * n);
  r.expected = p1 * p1 + (1.0 - p1) * (1.0 - p1);
  if (r.expected >= 1.0) {
    r.degenerate = true;
    r.kappa = r.observed >= 1.0 ? 1.0 : 0.0;
  } else {
    r.kappa = (r.observed - r.expected) / (1.0 - r.expected);
  }
  return r;
}

/// Pairwise Cohen's kappa for every annotator pair, their mean as the
/// headline figure, and a majority-vote consensus per case. An exact tie
/// resolves to 0 (not privacy-related) and is flagged contested.
inline AgreementReport agreement_report(const AnnotatorLabels& labels, bool with_fleiss = false) {
  labels.validate();
  const std::size_t n = labels.annotator_count();
  if (n < 2) throw ValidationError("agreement_report: need at least 2 annotators");
  if (labels.labels.empty()) throw ValidationError("agreement_report: no cases");
  AgreementReport r;
  r.annotators = labels.annotators;
  r.kappa_matrix.assign(n, std::vector<std::optional<double>>(n));
  std::vector<std::vector<int>> columns;
  for (std::size_t a = 0; a < n; ++a) columns.push_back(labels.column(a));
  double sum = 0.0;
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = a + 1; b < n; ++b) {
      auto k = cohen_kappa(columns[a], columns[b]);
      r.kappa_matrix[a][b] = r.kappa_matrix[b][a] = k.kappa;
      r.pairs.push_back({a, b, k});
      sum += k.kappa;
    }
  }
  r.mean_kappa = sum / static_cast<double>(r.pairs.size());
  for (std::size_t i = 0; i < labels.labels.size(); ++i) {
    ConsensusLabel c;
    for (int l : labels.labels[i]) c.positive_votes += static_cast<std::size_t>(l);
    r.labels_consumed += labels.labels[i].size();
    if (2 * c.positive_votes > n) c.label = 1;
    else if (2 * c.positive_votes == n) c.contested = true;
    r.consensus[labels.case_ids[i]] = c;
  }
  if (with_fleiss) r.fleiss = fleiss_kappa(labels);
  return r;
}

inline nlohmann::json to_json(const KappaResult& k) {
  return {{"kappa", k.kappa}, {"observed", k.observed}, {"expected", k.expected}, {"degenerate", k.degenerate}};
}

inline nlohmann::json to_json(const AgreementReport& r) {
  nlohmann::json matrix = nlohmann::json::array();
  for (const auto& row : r.kappa_matrix) {
    nlohmann::json jr = nlohmann::json::array();
    for (const auto& v : row) jr.push_back(v ? nlohmann::json(*v) : nlohmann::json(nullptr));
    matrix.push_back(std::move(jr));
  }
  nlohmann::json pairs = nlohmann::json::array();
  for (const auto& p : r.pairs) {
    auto j = to_json(p.result);
    j["first"] = r.annotators[p.first];
    j["second"] = r.annotators[p.second];
    pairs.push_back(std::move(j));
  }
  nlohmann::json consensus = nlohmann::json::array();
  std::size_t contested = 0, positive = 0;
  for (const auto& [id, c] : r.consensus) {
    consensus.push_back({{"case_id", id}, {"label", c.label}, {"contested", c.contested},
                         {"positive_votes", c.positive_votes}});
    contested += c.contested;
    positive += static_cast<std::size_t>(c.label);
  }
  nlohmann::json j = {{"annotators", r.annotators},
                      {"mean_pairwise_kappa", r.mean_kappa},
                      {"kappa_matrix", std::move(matrix)},
                      {"pairs", std::move(pairs)},
                      {"labels_consumed", r.labels_consumed},
                      {"cases", r.consensus.size()},
                      {"privacy_related_cases", positive},
                      {"contested_cases", contested},
                      {"consensus", std::move(consensus)}};
  if (r.fleiss) j["fleiss"] = to_json(*r.fleiss);
  return j;
}

// ---------------------------------------------------------------------------
// Encroachment

struct EncroachmentEntry {
  RegimeEntry counts;
  std::string description;
  bool privacy_related = false;
  bool label_contested = false;
};

struct EncroachmentBucket {
  std::vector<EncroachmentEntry> entries;
  std::size_t privacy_related = 0;
  std::size_t size() const noexcept { return entries.size(); }
};

struct EncroachmentReport {
  EncroachmentBucket pp_dominant;
  EncroachmentBucket tos_dominant;
  EncroachmentBucket contested;
  std::size_t pp_misplaced = 0;   // not privacy-related, yet PP-dominant
  std::size_t tos_misplaced = 0;  // privacy-related, yet ToS-dominant
};

inline EncroachmentReport encroachment_report(const RegimeReport& regimes, const AgreementReport& agreement,
                                              const CaseTaxonomy& taxonomy) {
  auto fill = [&](const std::vector<RegimeEntry>& src) {
    EncroachmentBucket b;
    for (const auto& e : src) {
      const auto& c = agreement.consensus_for(e.case_id);
      EncroachmentEntry out{e, taxonomy.contains(e.case_id) ? taxonomy.description(e.case_id)
                                                            : "case " + std::to_string(e.case_id),
                            c.label == 1, c.contested};
      b.privacy_related += out.privacy_related;
      b.entries.push_back(std::move(out));
    }
    return b;
  };
  EncroachmentReport r;
  r.pp_dominant = fill(regimes.pp_dominant);
  r.tos_dominant = fill(regimes.tos_dominant);
  r.contested = fill(regimes.contested);
  r.pp_misplaced = r.pp_dominant.size() - r.pp_dominant.privacy_related;
  r.tos_misplaced = r.tos_dominant.privacy_related;
  return r;
}

inline nlohmann::json to_json(const EncroachmentReport& r) {
  auto bucket = [](const EncroachmentBucket& b) {
    nlohmann::json entries = nlohmann::json::array();
    for (const auto& e : b.entries) {
      auto j = to_json(e.counts);
      j["description"] = e.description;
      j["privacy_related"] = e.privacy_related;
      j["label_contested"] = e.label_contested;
      entries.push_back(std::move(j));
    }
    return nlohmann::json{{"cases", b.size()}, {"privacy_related", b.privacy_related}, {"entries", entries}};
  };
  return {{"pp_dominant", bucket(r.pp_dominant)},
          {"tos_dominant", bucket(r.tos_dominant)},
          {"contested", bucket(r.contested)},
          {"pp_misplaced", r.pp_misplaced},
          {"tos_misplaced", r.tos_misplaced}};
}

inline std::string to_markdown(const EncroachmentReport& r) {
  std::ostringstream out;
  auto section = [&](const char* title, const EncroachmentBucket& b) {
    out << "## " << title << " (" << b.privacy_related << "/" << b.size() << " privacy-related)\n\n";
    if (b.entries.empty()) {
      out << "_none_\n\n";
      return;
    }
    out << "| privacy | case | description | PP | ToS | diff |\n|---|---|---|---|---|---|\n";
    for (const auto& e : b.entries) {
      out << "| " << (e.privacy_related ? "yes" : "no") << (e.label_contested ? " (tie)" : "") << " | "
          << e.counts.case_id << " | " << e.description << " | " << e.counts.count_pp << " | "
          << e.counts.count_tos << " | " << e.counts.diff << " |\n";
    }
    out << "\n";
  };
  section("Privacy Policy dominant", r.pp_dominant);
  section("Terms of Service dominant", r.tos_dominant);
  section("Contested", r.contested);
  out << "- not privacy-related but PP-dominant: " << r.pp_misplaced << "/" << r.pp_dominant.size() << "\n"
      << "- privacy-related but ToS-dominant: " << r.tos_misplaced << "/" << r.tos_dominant.size() << "\n";
  return out.str();
}

inline std::string to_markdown(const RegimeReport& r) {
  std::ostringstream out;
  auto section = [&](const char* title, const std::vector<RegimeEntry>& v) {
    out << "## " << title << " (" << v.size() << ")\n\n";
    if (v.empty()) {
      out << "_none_\n\n";
      return;
    }
    out << "| case | PP | ToS | diff |\n|---|---|---|---|\n";
    for (const auto& e : v) {
      out << "| " << e.case_id << " | " << e.count_pp << " | " << e.count_tos << " | " << e.diff << " |\n";
    }
    out << "\n";
  };
  section("Privacy Policy dominant", r.pp_dominant);
  section("Terms of Service dominant", r.tos_dominant);
  section("Contested", r.contested);
  return out.str();
}

}  // namespace policyscope
