#pragma once

// Classifier persistence and the variant used by the CLI pipeline.

#include <filesystem>
#include <fstream>
#include <string>
#include <variant>

#include "json.hpp"
#include "policyscope/forest.hpp"
#include "policyscope/svm.hpp"

namespace policyscope {

using Classifier = std::variant<LinearSvmModel, RandomForestModel>;

inline Prediction predict(const Classifier& model, const FeatureVector& x) {
  return std::visit([&](const auto& m) { return m.predict(x); }, model);
}

inline nlohmann::json classifier_to_json(const Classifier& model) {
  return std::visit([](const auto& m) { return m.to_json(); }, model);
}

inline Classifier classifier_from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("format")) throw ModelFormatError("model file has no format tag");
  const auto format = j.at("format");
  if (format == "policyscope.linear_svm") return LinearSvmModel::from_json(j);
  if (format == "policyscope.random_forest") return RandomForestModel::from_json(j);
  throw ModelFormatError("unknown model format " + format.dump());
}

inline void write_json_file(const nlohmann::json& j, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump() << '\n';
  if (!out) throw Error("failed writing " + path.string());
}

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  try {
    nlohmann::json j;
    in >> j;
    return j;
  } catch (const nlohmann::json::exception& e) {
    throw ModelFormatError(path.string() + ": corrupted JSON: " + e.what());
  }
}

inline void save_model(const Classifier& model, const std::filesystem::path& path) {
  write_json_file(classifier_to_json(model), path);
}

inline Classifier load_model(const std::filesystem::path& path) {
  return classifier_from_json(read_json_file(path));
}

}  // namespace policyscope
