#pragma once

// A trained text classifier: TF-IDF vectorizer plus model, persisted as one
// JSON file.

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "policyscope/corpus.hpp"
#include "policyscope/models.hpp"
#include "policyscope/predictions.hpp"
#include "policyscope/textproc.hpp"

namespace policyscope {

enum class ModelKind { Svm, RandomForest };
enum class Sampling { Normal, Oversample };

inline std::string_view to_string(ModelKind k) { return k == ModelKind::Svm ? "svm" : "rf"; }
inline std::string_view to_string(Sampling s) { return s == Sampling::Normal ? "normal" : "oversample"; }

struct PipelineConfig {
  ModelKind kind = ModelKind::Svm;
  TfidfConfig tfidf;
  SvmConfig svm;
  ForestConfig forest;
};

class PipelineModel {
 public:
  PipelineModel(Task task, Sampling sampling, TfidfModel vectorizer, Classifier classifier)
      : task_(task), sampling_(sampling), vectorizer_(std::move(vectorizer)), classifier_(std::move(classifier)) {}

  Task task() const noexcept { return task_; }
  Sampling sampling() const noexcept { return sampling_; }
  const TfidfModel& vectorizer() const noexcept { return vectorizer_; }
  const Classifier& classifier() const noexcept { return classifier_; }

  /// Input text is cleaned before vectorizing.
  Prediction predict(std::string_view text) const {
    return policyscope::predict(classifier_, vectorizer_.transform(clean_text(text)));
  }

  nlohmann::json to_json() const {
    return {{"format", "policyscope.pipeline"},
            {"format_version", 1},
            {"task", std::string(to_string(task_))},
            {"sampling", std::string(to_string(sampling_))},
            {"vectorizer", vectorizer_.to_json()},
            {"classifier", classifier_to_json(classifier_)}};
  }

  static PipelineModel from_json(const nlohmann::json& j) {
    try {
      if (!j.is_object() || j.value("format", "") != "policyscope.pipeline") {
        throw ModelFormatError("not a pipeline model file");
      }
      if (j.at("format_version") != 1) {
        throw ModelFormatError("unsupported pipeline format_version " + j.at("format_version").dump());
      }
      auto task = parse_task(j.at("task").get<std::string>());
      if (!task) throw ModelFormatError("pipeline: unknown task");
      const auto sampling = j.at("sampling") == "oversample" ? Sampling::Oversample : Sampling::Normal;
      return PipelineModel(*task, sampling, TfidfModel::from_json(j.at("vectorizer")),
                           classifier_from_json(j.at("classifier")));
    } catch (const nlohmann::json::exception& e) {
      throw ModelFormatError(std::string("corrupted pipeline model: ") + e.what());
    }
  }

  void save(const std::filesystem::path& path) const { write_json_file(to_json(), path); }
  static PipelineModel load(const std::filesystem::path& path) { return from_json(read_json_file(path)); }

 private:
  Task task_;
  Sampling sampling_;
  TfidfModel vectorizer_;
  Classifier classifier_;
};

inline int task_label(const LabeledRecord& r, Task task) {
  return task == Task::Case ? r.record.case_id : static_cast<int>(r.doc_type);
}

/// Fits the vectorizer on the cleaned training texts and trains the classifier.
inline PipelineModel train_pipeline(std::span<const LabeledRecord> train, Task task, Sampling sampling,
                                    const PipelineConfig& config, const TrainOptions& options = {},
                                    SvmTrainLog* log = nullptr) {
  if (train.empty()) throw ValidationError("training set is empty");
  std::vector<std::string> texts;
  texts.reserve(train.size());
  for (const auto& r : train) texts.push_back(clean_text(r.record.description));
  auto vectorizer = fit_tfidf(texts, config.tfidf);
  std::vector<LabeledVector> data;
  data.reserve(train.size());
  for (std::size_t i = 0; i < train.size(); ++i) {
    data.push_back({vectorizer.transform(texts[i]), task_label(train[i], task)});
  }
  Classifier classifier = config.kind == ModelKind::Svm
                              ? Classifier(train_svm(data, config.svm, options, log))
                              : Classifier(train_rf(data, config.forest, options));
  return PipelineModel(task, sampling, std::move(vectorizer), std::move(classifier));
}

}  // namespace policyscope
