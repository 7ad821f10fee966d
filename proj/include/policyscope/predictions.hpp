#pragma once

// Prediction sets: the exchange format between classifiers (including
// externally trained ones) and the evaluation and overlap code.

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "policyscope/corpus.hpp"
#include "policyscope/detail/csv.hpp"
#include "policyscope/error.hpp"

namespace policyscope {

enum class Task { Case, DocType };

inline std::string_view to_string(Task t) { return t == Task::Case ? "case" : "doctype"; }

inline std::optional<Task> parse_task(std::string_view s) {
  auto k = detail::normalize_key(s);
  if (k == "case") return Task::Case;
  if (k == "doctype") return Task::DocType;
  return std::nullopt;
}

/// Labels are 0..size-1: case ids for Task::Case, DocType indices otherwise.
inline int label_space_size(Task t) { return t == Task::Case ? kCaseCount : kDocTypeCount; }

inline std::vector<int> label_space(Task t) {
  std::vector<int> out(static_cast<std::size_t>(label_space_size(t)));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<int>(i);
  return out;
}

struct PredictionEntry {
  std::string example_id;
  int gold = 0;
  int predicted = 0;
  std::optional<double> score;
  std::optional<DocType> doc_type;  // document type the example came from
};

struct PredictionSet {
  Task task = Task::Case;
  std::string source_name;
  std::vector<PredictionEntry> entries;

  /// Throws ValidationError on duplicate ids or out-of-space labels.
  void validate() const {
    std::set<std::string_view> ids;
    const int n = label_space_size(task);
    for (std::size_t i = 0; i < entries.size(); ++i) {
      const auto& e = entries[i];
      if (!ids.insert(e.example_id).second) {
        throw ValidationError("duplicate example_id '" + e.example_id + "'");
      }
      if (e.gold < 0 || e.gold >= n || e.predicted < 0 || e.predicted >= n) {
        throw ValidationError("label outside the " + std::string(to_string(task)) + " label space for '" +
                              e.example_id + "'");
      }
    }
  }
};

namespace detail {

inline std::optional<int> parse_label(std::string_view text, Task task) {
  text = trim(text);
  if (auto n = parse_case_id(text)) return n;
  if (task == Task::DocType) {
    if (auto d = parse_doc_type(text)) return static_cast<int>(*d);
  }
  return std::nullopt;
}

}  // namespace detail

/// Reads "example_id,gold,predicted[,score][,doctype]". All offending rows
/// are listed in the error message.
inline PredictionSet import_predictions(std::istream& in, Task task, std::string source_name = {}) {
  detail::CsvReader reader(in);
  auto header = reader.next();
  if (!header) throw SchemaError("example_id");
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header->fields.size(); ++i) {
    col.emplace(detail::normalize_key(header->fields[i]), i);
  }
  for (const char* required : {"exampleid", "gold", "predicted"}) {
    if (!col.contains(required)) {
      throw SchemaError(std::string(required) == "exampleid" ? "example_id" : required);
    }
  }
  auto optional_col = [&](const char* k) -> std::optional<std::size_t> {
    auto it = col.find(k);
    return it == col.end() ? std::nullopt : std::optional(it->second);
  };
  const auto score_col = optional_col("score");
  const auto doctype_col = optional_col("doctype");
  const int n_labels = label_space_size(task);

  PredictionSet set;
  set.task = task;
  set.source_name = std::move(source_name);
  std::vector<std::string> problems;
  std::map<std::string, std::size_t> first_line;
  while (auto row = reader.next()) {
    auto field = [&](std::size_t c) -> std::string {
      return c < row->fields.size() ? row->fields[c] : std::string{};
    };
    const std::string where = "row at line " + std::to_string(row->line);
    PredictionEntry e;
    e.example_id = std::string(detail::trim(field(col["exampleid"])));
    auto gold = detail::parse_label(field(col["gold"]), task);
    auto pred = detail::parse_label(field(col["predicted"]), task);
    if (e.example_id.empty()) {
      problems.push_back(where + ": empty example_id");
      continue;
    }
    if (auto [it, inserted] = first_line.emplace(e.example_id, row->line); !inserted) {
      problems.push_back(where + ": duplicate example_id '" + e.example_id + "' (first at line " +
                         std::to_string(it->second) + ")");
      continue;
    }
    if (!gold || *gold < 0 || *gold >= n_labels) {
      problems.push_back(where + ": gold label '" + field(col["gold"]) + "' outside label space");
      continue;
    }
    if (!pred || *pred < 0 || *pred >= n_labels) {
      problems.push_back(where + ": predicted label '" + field(col["predicted"]) + "' outside label space");
      continue;
    }
    e.gold = *gold;
    e.predicted = *pred;
    if (score_col) {
      auto s = std::string(detail::trim(field(*score_col)));
      if (!s.empty()) {
        try {
          e.score = std::stod(s);
        } catch (const std::exception&) {
          problems.push_back(where + ": unparseable score '" + s + "'");
          continue;
        }
      }
    }
    if (doctype_col) {
      auto s = std::string(detail::trim(field(*doctype_col)));
      if (!s.empty()) {
        e.doc_type = parse_doc_type(s);
        if (!e.doc_type) {
          problems.push_back(where + ": unknown doctype '" + s + "'");
          continue;
        }
      }
    }
    set.entries.push_back(std::move(e));
  }
  if (!problems.empty()) {
    std::string msg = "invalid predictions file:";
    for (const auto& p : problems) msg += "\n  " + p;
    throw ValidationError(msg);
  }
  return set;
}

inline PredictionSet import_predictions(const std::filesystem::path& path, Task task) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return import_predictions(in, task, path.filename().string());
}

inline void write_predictions(std::ostream& out, const PredictionSet& set) {
  out << "example_id,gold,predicted,score,doctype\n";
  for (const auto& e : set.entries) {
    std::vector<std::string> row = {e.example_id, std::to_string(e.gold), std::to_string(e.predicted),
                                    e.score ? nlohmann::json(*e.score).dump() : std::string{},
                                    e.doc_type ? std::string(to_string(*e.doc_type)) : std::string{}};
    detail::write_csv_row(out, row);
  }
}

inline void write_predictions(const std::filesystem::path& path, const PredictionSet& set) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  write_predictions(out, set);
}

}  // namespace policyscope
