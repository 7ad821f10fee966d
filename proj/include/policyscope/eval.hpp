#pragma once

// Confusion matrices, per-class and aggregate metrics, and pairwise accuracy
// as a proxy for how separable two classes are.

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <map>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "policyscope/detail/csv.hpp"
#include "policyscope/error.hpp"
#include "policyscope/predictions.hpp"

namespace policyscope {

/// Rows are gold labels, columns predicted labels, both in label-space order.
class ConfusionMatrix {
 public:
  ConfusionMatrix() = default;
  explicit ConfusionMatrix(std::vector<int> labels)
      : labels_(std::move(labels)), counts_(labels_.size(), std::vector<std::uint64_t>(labels_.size(), 0)) {
    for (std::size_t i = 0; i < labels_.size(); ++i) {
      if (!index_.emplace(labels_[i], i).second) {
        throw ValidationError("label space contains " + std::to_string(labels_[i]) + " twice");
      }
    }
  }

  const std::vector<int>& labels() const noexcept { return labels_; }
  std::size_t size() const noexcept { return labels_.size(); }

  std::size_t index_of(int label) const {
    auto it = index_.find(label);
    if (it == index_.end()) throw ValidationError("label " + std::to_string(label) + " outside label space");
    return it->second;
  }
  bool contains(int label) const { return index_.contains(label); }

  void add(int gold, int predicted, std::uint64_t n = 1) { counts_[index_of(gold)][index_of(predicted)] += n; }

  std::uint64_t at(int gold, int predicted) const { return counts_[index_of(gold)][index_of(predicted)]; }
  std::uint64_t cell(std::size_t row, std::size_t col) const { return counts_[row][col]; }

  std::uint64_t total() const {
    std::uint64_t t = 0;
    for (const auto& r : counts_)
      for (auto c : r) t += c;
    return t;
  }

 private:
  std::vector<int> labels_;
  std::vector<std::vector<std::uint64_t>> counts_;
  std::map<int, std::size_t> index_;
};

inline ConfusionMatrix confusion(std::span<const int> gold, std::span<const int> predicted,
                                 std::vector<int> label_space) {
  if (gold.size() != predicted.size()) throw ValidationError("gold and predicted lengths differ");
  ConfusionMatrix m(std::move(label_space));
  for (std::size_t i = 0; i < gold.size(); ++i) m.add(gold[i], predicted[i]);
  return m;
}

inline ConfusionMatrix confusion(const PredictionSet& predictions) {
  ConfusionMatrix m(label_space(predictions.task));
  for (const auto& e : predictions.entries) m.add(e.gold, e.predicted);
  return m;
}

struct ClassMetrics {
  int label = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::uint64_t support = 0;    // gold count
  std::uint64_t predicted = 0;  // predicted count
};

struct EvalReport {
  std::vector<ClassMetrics> per_class;
  std::uint64_t total = 0;
  double accuracy = 0.0;
  double weighted_precision = 0.0;
  double weighted_recall = 0.0;
  double weighted_f1 = 0.0;
  double macro_f1 = 0.0;
  std::size_t macro_classes = 0;  // classes that occur in gold or predictions
};

/// Zero denominators give 0 for precision, recall and F1. Weighted averages
/// use gold support; the macro average runs over classes that occur in gold
/// or predictions.
inline EvalReport metrics(const ConfusionMatrix& m) {
  EvalReport r;
  r.total = m.total();
  if (r.total == 0) throw ValidationError("metrics: confusion matrix is empty");
  const std::size_t k = m.size();
  std::uint64_t correct = 0;
  double macro_sum = 0.0;
  for (std::size_t c = 0; c < k; ++c) {
    ClassMetrics cm;
    cm.label = m.labels()[c];
    const std::uint64_t tp = m.cell(c, c);
    for (std::size_t o = 0; o < k; ++o) {
      cm.support += m.cell(c, o);
      cm.predicted += m.cell(o, c);
    }
    correct += tp;
    cm.precision = cm.predicted ? static_cast<double>(tp) / static_cast<double>(cm.predicted) : 0.0;
    cm.recall = cm.support ? static_cast<double>(tp) / static_cast<double>(cm.support) : 0.0;
    const double denom = cm.precision + cm.recall;
    cm.f1 = denom > 0.0 ? 2.0 * cm.precision * cm.recall / denom : 0.0;
    const double w = static_cast<double>(cm.support) / static_cast<double>(r.total);
    r.weighted_precision += w * cm.precision;
    r.weighted_recall += w * cm.recall;
    r.weighted_f1 += w * cm.f1;
    if (cm.support + cm.predicted > 0) {
      macro_sum += cm.f1;
      ++r.macro_classes;
    }
    r.per_class.push_back(cm);
  }
  r.accuracy = static_cast<double>(correct) / static_cast<double>(r.total);
  r.macro_f1 = r.macro_classes ? macro_sum / static_cast<double>(r.macro_classes) : 0.0;
  return r;
}

/// Accuracy of the matrix restricted to gold and predicted labels in {a, b}.
inline double pairwise_accuracy(const ConfusionMatrix& m, int a, int b) {
  if (a == b) throw ValidationError("pairwise_accuracy: labels must differ");
  const auto aa = m.at(a, a), ab = m.at(a, b), ba = m.at(b, a), bb = m.at(b, b);
  const auto denom = aa + ab + ba + bb;
  if (denom == 0) {
    throw ValidationError("no examples for pair (" + std::to_string(a) + ", " + std::to_string(b) + ")");
  }
  return static_cast<double>(aa + bb) / static_cast<double>(denom);
}

struct PairwiseEntry {
  int a = 0;
  int b = 0;
  std::optional<double> accuracy;  // empty when the pair has no examples
};

/// All unordered pairs a < b of the label space.
inline std::vector<PairwiseEntry> pairwise_table(const ConfusionMatrix& m) {
  std::vector<PairwiseEntry> out;
  for (std::size_t i = 0; i < m.size(); ++i) {
    for (std::size_t j = i + 1; j < m.size(); ++j) {
      PairwiseEntry e{m.labels()[i], m.labels()[j], std::nullopt};
      const auto denom = m.cell(i, i) + m.cell(i, j) + m.cell(j, i) + m.cell(j, j);
      if (denom) e.accuracy = pairwise_accuracy(m, e.a, e.b);
      out.push_back(e);
    }
  }
  return out;
}

inline constexpr std::string_view kPairwiseInterpretation =
    "Pairwise accuracy near 1.0 means the two classes are easy to tell apart "
    "(little concept overlap); near 0.5 means they are indistinguishable "
    "(heavy overlap).";

using LabelNamer = std::function<std::string(int)>;

inline LabelNamer label_namer(Task task) {
  if (task == Task::DocType) {
    return [](int l) { return std::string(to_string(static_cast<DocType>(l))); };
  }
  return [](int l) { return std::to_string(l); };
}

inline nlohmann::json to_json(const EvalReport& r, const LabelNamer& name, bool include_empty = false) {
  nlohmann::json per_class = nlohmann::json::array();
  for (const auto& c : r.per_class) {
    if (!include_empty && c.support == 0 && c.predicted == 0) continue;
    per_class.push_back({{"label", c.label},
                         {"name", name(c.label)},
                         {"precision", c.precision},
                         {"recall", c.recall},
                         {"f1", c.f1},
                         {"support", c.support},
                         {"predicted", c.predicted}});
  }
  return {{"total", r.total},
          {"accuracy", r.accuracy},
          {"weighted_precision", r.weighted_precision},
          {"weighted_recall", r.weighted_recall},
          {"weighted_f1", r.weighted_f1},
          {"macro_f1", r.macro_f1},
          {"macro_classes", r.macro_classes},
          {"per_class", std::move(per_class)}};
}

inline nlohmann::json to_json(const std::vector<PairwiseEntry>& table, const LabelNamer& name) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& e : table) {
    arr.push_back({{"a", name(e.a)},
                   {"b", name(e.b)},
                   {"accuracy", e.accuracy ? nlohmann::json(*e.accuracy) : nlohmann::json(nullptr)}});
  }
  return arr;
}

namespace detail {
inline std::string fixed4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}
}  // namespace detail

/// Markdown table of per-class metrics followed by the aggregates.
inline std::string to_markdown(const EvalReport& r, const LabelNamer& name) {
  std::ostringstream out;
  out << "| label | precision | recall | f1 | support |\n|---|---|---|---|---|\n";
  for (const auto& c : r.per_class) {
    if (c.support == 0 && c.predicted == 0) continue;
    out << "| " << name(c.label) << " | " << detail::fixed4(c.precision) << " | " << detail::fixed4(c.recall)
        << " | " << detail::fixed4(c.f1) << " | " << c.support << " |\n";
  }
  out << "\n- examples: " << r.total << "\n- accuracy: " << detail::fixed4(r.accuracy)
      << "\n- weighted F1: " << detail::fixed4(r.weighted_f1) << "\n- macro F1: " << detail::fixed4(r.macro_f1)
      << "\n";
  return out.str();
}

inline void write_confusion_csv(std::ostream& out, const ConfusionMatrix& m, const LabelNamer& name) {
  std::vector<std::string> row = {"gold\\predicted"};
  for (int l : m.labels()) row.push_back(name(l));
  detail::write_csv_row(out, row);
  for (std::size_t i = 0; i < m.size(); ++i) {
    row.assign(1, name(m.labels()[i]));
    for (std::size_t j = 0; j < m.size(); ++j) row.push_back(std::to_string(m.cell(i, j)));
    detail::write_csv_row(out, row);
  }
}

}  // namespace policyscope
