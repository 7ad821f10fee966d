#pragma once

// Scalar document scores from per-case weights, and letter grades.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "policyscope/corpus.hpp"
#include "policyscope/error.hpp"

namespace policyscope {

struct GradeBand {
  std::optional<double> min;  // empty = no lower bound
  std::string grade;
};

/// Weights are positive for user-favorable cases and negative for
/// unfavorable ones; unlisted cases weigh 0. Abstain always weighs 0.
class ScoringConfig {
 public:
  ScoringConfig(std::map<int, double> weights, std::vector<GradeBand> grades)
      : weights_(std::move(weights)), grades_(std::move(grades)) {
    for (auto [c, w] : weights_) {
      if (c < 0 || c >= kCaseCount) throw ValidationError("scoring: case id " + std::to_string(c) + " out of range");
      if (c == kAbstainCase && w != 0.0) throw ValidationError("scoring: abstain must have weight 0");
      if (!std::isfinite(w)) throw ValidationError("scoring: non-finite weight for case " + std::to_string(c));
    }
    if (grades_.empty()) throw ValidationError("scoring: at least one grade band is required");
    std::sort(grades_.begin(), grades_.end(), [](const GradeBand& a, const GradeBand& b) {
      return a.min.value_or(-std::numeric_limits<double>::infinity()) >
             b.min.value_or(-std::numeric_limits<double>::infinity());
    });
    for (std::size_t i = 1; i < grades_.size(); ++i) {
      if (grades_[i].min == grades_[i - 1].min) throw ValidationError("scoring: grade bands overlap");
    }
    double lowest_score = 0.0;
    for (auto [c, w] : weights_) lowest_score = std::min(lowest_score, w);
    const auto& last = grades_.back();
    if (last.min && *last.min > lowest_score) {
      throw ValidationError("scoring: grade bands do not cover scores down to " + std::to_string(lowest_score));
    }
  }

  /// Inert: every weight 0, so every document scores 0 (grade C).
  static ScoringConfig make_default() {
    return ScoringConfig({}, {{0.5, "A"}, {0.1, "B"}, {-0.1, "C"}, {-0.5, "D"}, {std::nullopt, "E"}});
  }

  double weight(int case_id) const {
    auto it = weights_.find(case_id);
    return it == weights_.end() ? 0.0 : it->second;
  }

  const std::string& grade_for(double score) const {
    for (const auto& b : grades_) {
      if (!b.min || score >= *b.min) return b.grade;
    }
    return grades_.back().grade;
  }

  const std::vector<GradeBand>& grades() const noexcept { return grades_; }

  nlohmann::json to_json() const {
    nlohmann::json w = nlohmann::json::object();
    for (auto [c, v] : weights_) w[std::to_string(c)] = v;
    nlohmann::json g = nlohmann::json::array();
    for (const auto& b : grades_) {
      g.push_back({{"min", b.min ? nlohmann::json(*b.min) : nlohmann::json(nullptr)}, {"grade", b.grade}});
    }
    return {{"format_version", 1}, {"weights", w}, {"grades", g}};
  }

  static ScoringConfig from_json(const nlohmann::json& j) {
    try {
      std::map<int, double> weights;
      for (const auto& [key, value] : j.at("weights").items()) {
        auto id = detail::parse_case_id(key);
        if (!id) throw ValidationError("scoring: weight key '" + key + "' is not a case id");
        weights[*id] = value.get<double>();
      }
      std::vector<GradeBand> grades;
      for (const auto& g : j.at("grades")) {
        GradeBand b;
        if (!g.at("min").is_null()) b.min = g.at("min").get<double>();
        b.grade = g.at("grade").get<std::string>();
        grades.push_back(std::move(b));
      }
      return ScoringConfig(std::move(weights), std::move(grades));
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(std::string("scoring config: ") + e.what());
    }
  }

  static ScoringConfig load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open scoring config " + path.string());
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError("scoring config " + path.string() + ": " + e.what());
    }
    return from_json(j);
  }

 private:
  std::map<int, double> weights_;
  std::vector<GradeBand> grades_;
};

struct DocumentScore {
  double score = 0.0;
  std::size_t considered = 0;  // non-abstain sentences
};

/// Mean weight over sentences whose predicted case is not abstain; 0 when
/// every sentence abstains. Summed per case in id order, so the result does
/// not depend on sentence order.
inline DocumentScore score_document(std::span<const int> predicted_cases, const ScoringConfig& config) {
  DocumentScore s;
  std::map<int, std::size_t> counts;
  for (int c : predicted_cases) {
    if (c == kAbstainCase) continue;
    ++counts[c];
    ++s.considered;
  }
  double sum = 0.0;
  for (auto [c, n] : counts) sum += config.weight(c) * static_cast<double>(n);
  if (s.considered) s.score = sum / static_cast<double>(s.considered);
  return s;
}

}  // namespace policyscope
