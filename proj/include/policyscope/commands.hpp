#pragma once

// The pipeline verbs behind the command-line tool. Each command reads its
// inputs, writes its artifacts plus a run manifest into an output directory,
// and throws on failure: UsageError (exit code 2) for bad flags or missing
// inputs, AnalysisFailure (exit code 1) when the analysis itself cannot
// produce a result.

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "policyscope/corpus.hpp"
#include "policyscope/detail/digest.hpp"
#include "policyscope/eval.hpp"
#include "policyscope/models.hpp"
#include "policyscope/overlap.hpp"
#include "policyscope/pipeline.hpp"
#include "policyscope/predictions.hpp"
#include "policyscope/scoring.hpp"
#include "policyscope/textproc.hpp"

namespace policyscope::cli {

inline constexpr std::string_view kToolVersion = "1.0.0";

class UsageError : public Error {
 public:
  using Error::Error;
};

class AnalysisFailure : public Error {
 public:
  using Error::Error;
};

enum class ReportFormat { Json, Markdown, Csv };

namespace fs = std::filesystem;

namespace detail {

inline void require_file(const fs::path& p, const std::string& what, const std::string& hint = {}) {
  if (!fs::is_regular_file(p)) {
    throw UsageError(what + " not found: " + p.string() + (hint.empty() ? "" : " (" + hint + ")"));
  }
}

inline void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw UsageError("cannot create output directory " + dir.string());
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
  if (!out) throw Error("failed writing " + path.string());
}

inline void write_json(const fs::path& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// Records what a command read and wrote. Only created_at varies between
/// identical runs.
class Manifest {
 public:
  Manifest(std::string command, std::uint64_t seed, nlohmann::json flags)
      : command_(std::move(command)), seed_(seed), flags_(std::move(flags)) {}

  void input(const fs::path& p) { inputs_.push_back(p); }
  void output(const fs::path& p) { outputs_.push_back(p); }

  /// Writes manifest.<command>.json, or manifest.<command>.<tag>.json when
  /// several runs of one command share an output directory.
  fs::path write(const fs::path& out_dir, const std::string& tag = {}) const {
    auto files = [](const std::vector<fs::path>& v) {
      nlohmann::json a = nlohmann::json::array();
      for (const auto& p : v) {
        a.push_back({{"path", p.string()}, {"sha256", policyscope::detail::sha256_file(p)},
                     {"bytes", fs::file_size(p)}});
      }
      return a;
    };
    nlohmann::json j = {{"format", "policyscope.manifest"},
                        {"format_version", 1},
                        {"tool_version", std::string(kToolVersion)},
                        {"command", command_},
                        {"seed", seed_},
                        {"flags", flags_},
                        {"inputs", files(inputs_)},
                        {"outputs", files(outputs_)},
                        {"created_at", utc_timestamp()}};
    const auto path = out_dir / ("manifest." + command_ + (tag.empty() ? "" : "." + tag) + ".json");
    write_json(path, j);
    return path;
  }

 private:
  std::string command_;
  std::uint64_t seed_;
  nlohmann::json flags_;
  std::vector<fs::path> inputs_;
  std::vector<fs::path> outputs_;
};

inline std::vector<LabeledRecord> read_records_checked(const fs::path& p, const std::string& what,
                                                       const std::string& hint) {
  require_file(p, what, hint);
  try {
    return read_labeled_records(p);
  } catch (const ParseError& e) {
    throw UsageError(p.string() + ": " + e.what() + " (" + hint + ")");
  }
}

inline PipelineModel load_pipeline_checked(const fs::path& p, const std::string& what) {
  require_file(p, what, "run `policyscope train` first");
  try {
    return PipelineModel::load(p);
  } catch (const ModelFormatError& e) {
    throw UsageError(p.string() + ": " + e.what() + " (retrain with `policyscope train`)");
  }
}

inline std::map<std::string, std::size_t> doctype_counts(std::span<const LabeledRecord> records) {
  std::map<std::string, std::size_t> out;
  for (DocType d : kAllDocTypes) out[std::string(to_string(d))] = 0;
  for (const auto& r : records) ++out[std::string(to_string(r.doc_type))];
  return out;
}

inline void write_records(const fs::path& path, std::span<const LabeledRecord> records,
                          const std::optional<std::string>& split, std::optional<std::uint64_t> seed) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& r : records) {
    auto j = to_json(r);
    if (split) j["split"] = *split;
    if (seed) j["seed"] = *seed;
    out << j.dump() << '\n';
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// ingest

struct IngestArgs {
  fs::path input;
  std::optional<InputFormat> format;
  std::optional<fs::path> taxonomy;
  std::optional<fs::path> mapping;
  fs::path out_dir = ".";
  TrimPolicy trim;
  bool clean = true;
  bool strict = false;
  std::uint64_t seed = 0;
};

struct IngestResult {
  fs::path curated;
  fs::path report;
  std::size_t parsed = 0;
  std::size_t row_errors = 0;
  std::size_t output = 0;
  TrimResult trim;  // counts only; records moved out
};

/// parse -> clean -> taxonomy check -> trim -> map doctypes -> curated.jsonl
inline IngestResult cmd_ingest(const IngestArgs& args, std::ostream& log = std::cerr) {
  detail::require_file(args.input, "input file");
  if (args.taxonomy) detail::require_file(*args.taxonomy, "taxonomy file");
  if (args.mapping) detail::require_file(*args.mapping, "mapping file");
  const auto taxonomy = args.taxonomy ? CaseTaxonomy::load(*args.taxonomy) : CaseTaxonomy::make_default();
  const auto rules = args.mapping ? MappingRuleset::load(*args.mapping) : MappingRuleset::make_default();
  const auto format = args.format.value_or(guess_format(args.input));

  ParseResult parsed;
  try {
    parsed = parse_records(args.input, format);
  } catch (const SchemaError& e) {
    throw UsageError(args.input.string() + ": " + e.what());
  }
  std::vector<AnnotationRecord> valid;
  for (std::size_t i = 0; i < parsed.records.size(); ++i) {
    auto& r = parsed.records[i];
    if (!taxonomy.contains(r.case_id)) {
      parsed.errors.push_back({parsed.record_lines[i], "case id " + std::to_string(r.case_id) + " not in taxonomy"});
      continue;
    }
    if (args.clean) r.description = clean_text(r.description);
    valid.push_back(std::move(r));
  }
  std::sort(parsed.errors.begin(), parsed.errors.end(),
            [](const RowError& a, const RowError& b) { return a.line < b.line; });
  if (args.strict && !parsed.errors.empty()) {
    const auto& e = parsed.errors.front();
    throw UsageError(args.input.string() + ":" + std::to_string(e.line) + ": " + e.message + " (" +
                     std::to_string(parsed.errors.size()) + " bad rows; rerun without --strict to skip them)");
  }

  IngestResult result;
  result.parsed = parsed.records.size();
  result.row_errors = parsed.errors.size();
  result.trim = trim_records(valid, args.trim);
  auto labeled = map_doctypes(result.trim.records, rules);
  result.output = labeled.size();

  detail::ensure_dir(args.out_dir);
  result.curated = args.out_dir / "curated.jsonl";
  detail::write_records(result.curated, labeled, std::nullopt, std::nullopt);

  nlohmann::json errors = nlohmann::json::array();
  for (const auto& e : parsed.errors) {
    errors.push_back({{"file", args.input.string()}, {"line", e.line}, {"message", e.message}});
  }
  nlohmann::json report = {
      {"format_version", 1},
      {"input", args.input.string()},
      {"input_rows", parsed.records.size() + parsed.errors.size() - (parsed.records.size() - valid.size())},
      {"parsed_records", result.parsed},
      {"row_errors", errors},
      {"trim",
       {{"input", result.trim.input_count},
        {"dropped_status", result.trim.dropped_status},
        {"dropped_empty", result.trim.dropped_empty},
        {"dropped_duplicate", result.trim.dropped_duplicate},
        {"output", result.trim.records.size()}}},
      {"output_records", result.output},
      {"removed_total", parsed.records.size() + parsed.errors.size() -
                            (parsed.records.size() - valid.size()) - result.output},
      {"doctype_counts", detail::doctype_counts(labeled)}};
  result.report = args.out_dir / "ingest_report.json";
  detail::write_json(result.report, report);
  result.trim.records.clear();

  detail::Manifest m("ingest", args.seed,
                     {{"input", args.input.string()},
                      {"taxonomy", args.taxonomy ? args.taxonomy->string() : "(default)"},
                      {"mapping", args.mapping ? args.mapping->string() : "(default)"},
                      {"clean", args.clean},
                      {"strict", args.strict},
                      {"filter_status", args.trim.filter_status},
                      {"drop_empty", args.trim.drop_empty},
                      {"deduplicate", args.trim.deduplicate}});
  m.input(args.input);
  if (args.taxonomy) m.input(*args.taxonomy);
  if (args.mapping) m.input(*args.mapping);
  m.output(result.curated);
  m.output(result.report);
  m.write(args.out_dir);

  log << "ingest: " << report["input_rows"] << " rows -> " << result.output << " curated records ("
      << result.row_errors << " row errors, " << result.trim.dropped_status << " status, "
      << result.trim.dropped_empty << " empty, " << result.trim.dropped_duplicate << " duplicates dropped)\n";
  return result;
}

// ---------------------------------------------------------------------------
// split

struct SplitArgs {
  fs::path input;
  std::size_t threshold = 10;
  fs::path out_dir = ".";
  std::optional<Task> oversample_task;
  std::uint64_t seed = 0;
};

struct SplitResult {
  fs::path train;
  fs::path test;
  std::optional<fs::path> oversampled;
  DatasetSplit split;
};

inline SplitResult cmd_split(const SplitArgs& args, std::ostream& log = std::cerr) {
  auto records = detail::read_records_checked(args.input, "curated records", "run `policyscope ingest` first");
  SplitResult result;
  result.split = split_by_service(records, args.threshold);
  const auto& s = result.split;
  detail::ensure_dir(args.out_dir);
  result.train = args.out_dir / "train.jsonl";
  result.test = args.out_dir / "test.jsonl";
  detail::write_records(result.train, s.train, "train", args.seed);
  detail::write_records(result.test, s.test, "test", args.seed);

  nlohmann::json report = {{"format_version", 1},
                           {"threshold", s.threshold},
                           {"train_records", s.train.size()},
                           {"test_records", s.test.size()},
                           {"train_groups", s.train_groups},
                           {"test_groups", s.test_groups},
                           {"annotation_ratio_train", s.annotation_ratio()},
                           {"document_ratio_train", s.document_ratio()},
                           {"train_doctype_counts", detail::doctype_counts(s.train)},
                           {"test_doctype_counts", detail::doctype_counts(s.test)},
                           {"warnings", s.warnings}};
  detail::Manifest m("split", args.seed,
                     {{"input", args.input.string()}, {"threshold", args.threshold},
                      {"oversample", args.oversample_task ? std::string(to_string(*args.oversample_task)) : "none"}});
  m.input(args.input);
  m.output(result.train);
  m.output(result.test);

  if (args.oversample_task) {
    const Task task = *args.oversample_task;
    auto balanced = oversample(std::span<const LabeledRecord>(s.train),
                               [task](const LabeledRecord& r) { return task_label(r, task); }, args.seed);
    result.oversampled = args.out_dir / ("train_oversampled_" + std::string(to_string(task)) + ".jsonl");
    detail::write_records(*result.oversampled, balanced, "train", args.seed);
    report["oversampled"] = {{"task", std::string(to_string(task))},
                             {"before", s.train.size()},
                             {"after", balanced.size()},
                             {"seed", args.seed}};
    m.output(*result.oversampled);
  }
  const auto report_path = args.out_dir / "split_report.json";
  detail::write_json(report_path, report);
  m.output(report_path);
  m.write(args.out_dir);
  for (const auto& w : s.warnings) log << "warning: " << w << "\n";
  log << "split: " << s.train.size() << " train / " << s.test.size() << " test records, " << s.train_groups
      << " / " << s.test_groups << " documents\n";
  return result;
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  fs::path train;
  ModelKind kind = ModelKind::Svm;
  Task task = Task::Case;
  Sampling sampling = Sampling::Normal;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  PipelineConfig config;
  fs::path out_dir = ".";
  std::optional<fs::path> model_out;
  std::optional<fs::path> pairwise_test;  // retrain one binary model per label pair
};

struct TrainResult {
  fs::path model;
  fs::path log;
  std::optional<fs::path> pairwise;
  std::size_t examples = 0;
};

inline TrainResult cmd_train(const TrainArgs& args, std::ostream& log = std::cerr) {
  auto records = detail::read_records_checked(args.train, "training data", "run `policyscope split` first");
  if (records.empty()) throw UsageError("training data " + args.train.string() + " is empty");
  const std::size_t before = records.size();
  const Task task = args.task;
  auto label_of = [task](const LabeledRecord& r) { return task_label(r, task); };
  if (args.sampling == Sampling::Oversample) {
    records = oversample(std::span<const LabeledRecord>(records), label_of, args.seed);
  }
  PipelineConfig config = args.config;
  config.kind = args.kind;
  config.svm.seed = args.seed;
  config.forest.seed = args.seed;
  const TrainOptions options{args.threads};

  SvmTrainLog svm_log;
  auto pipeline = [&] {
    try {
      return train_pipeline(records, task, args.sampling, config, options, &svm_log);
    } catch (const FitError& e) {
      throw UsageError(std::string("cannot fit features: ") + e.what());
    } catch (const ValidationError& e) {
      throw UsageError(std::string("cannot train: ") + e.what());
    }
  }();

  detail::ensure_dir(args.out_dir);
  TrainResult result;
  result.examples = records.size();
  const std::string stem = std::string(to_string(args.kind)) + "_" + std::string(to_string(task));
  result.model = args.model_out.value_or(args.out_dir / ("model_" + stem + ".json"));
  pipeline.save(result.model);

  std::map<std::string, std::size_t> class_counts;
  std::size_t correct = 0;
  for (const auto& r : records) {
    ++class_counts[std::to_string(label_of(r))];
    if (pipeline.predict(r.record.description).label == label_of(r)) ++correct;
  }
  nlohmann::json train_log = {{"format_version", 1},
                              {"task", std::string(to_string(task))},
                              {"model", std::string(to_string(args.kind))},
                              {"sampling", std::string(to_string(args.sampling))},
                              {"examples_before_sampling", before},
                              {"examples", records.size()},
                              {"class_counts", class_counts},
                              {"vocabulary_size", pipeline.vectorizer().dimension()},
                              {"train_accuracy", static_cast<double>(correct) / static_cast<double>(records.size())}};
  if (args.kind == ModelKind::Svm && !svm_log.objective.empty()) {
    std::vector<double> per_epoch(svm_log.objective.front().size(), 0.0);
    for (const auto& cls : svm_log.objective)
      for (std::size_t e = 0; e < cls.size() && e < per_epoch.size(); ++e) per_epoch[e] += cls[e];
    train_log["objective_per_epoch"] = per_epoch;
  }
  result.log = args.out_dir / ("train_log_" + stem + ".json");
  detail::write_json(result.log, train_log);

  nlohmann::json flags = {{"train", args.train.string()},
                          {"model", std::string(to_string(args.kind))},
                          {"task", std::string(to_string(task))},
                          {"sampling", std::string(to_string(args.sampling))},
                          {"threads", args.threads},
                          {"min_df", config.tfidf.min_df},
                          {"max_features", config.tfidf.max_features},
                          {"stop_words", config.tfidf.remove_stop_words}};
  if (args.kind == ModelKind::Svm) {
    flags["epochs"] = config.svm.epochs;
    flags["lambda"] = config.svm.lambda;
  } else {
    flags["trees"] = config.forest.n_trees;
    flags["max_depth"] = config.forest.max_depth;
    flags["min_samples_leaf"] = config.forest.min_samples_leaf;
    flags["features_per_split"] = features_per_split_name(config.forest);
  }
  detail::Manifest m("train", args.seed, flags);
  m.input(args.train);

  if (args.pairwise_test) {
    if (task != Task::DocType) throw UsageError("--pairwise-retrain is only available for the doctype task");
    auto test = detail::read_records_checked(*args.pairwise_test, "test data", "run `policyscope split` first");
    nlohmann::json pairs = nlohmann::json::array();
    for (int a = 0; a < kDocTypeCount; ++a) {
      for (int b = a + 1; b < kDocTypeCount; ++b) {
        auto in_pair = [&](const LabeledRecord& r) { return label_of(r) == a || label_of(r) == b; };
        std::vector<LabeledRecord> tr, te;
        std::copy_if(records.begin(), records.end(), std::back_inserter(tr), in_pair);
        std::copy_if(test.begin(), test.end(), std::back_inserter(te), in_pair);
        nlohmann::json entry = {{"a", std::string(to_string(static_cast<DocType>(a)))},
                                {"b", std::string(to_string(static_cast<DocType>(b)))},
                                {"test_examples", te.size()}};
        std::set<int> labels;
        for (const auto& r : tr) labels.insert(label_of(r));
        if (labels.size() < 2 || te.empty()) {
          entry["accuracy"] = nullptr;
        } else {
          auto binary = train_pipeline(tr, task, args.sampling, config, options);
          std::size_t ok = 0;
          for (const auto& r : te) ok += binary.predict(r.record.description).label == label_of(r);
          entry["accuracy"] = static_cast<double>(ok) / static_cast<double>(te.size());
        }
        pairs.push_back(std::move(entry));
      }
    }
    result.pairwise = args.out_dir / ("pairwise_retrained_" + stem + ".json");
    detail::write_json(*result.pairwise, {{"format_version", 1}, {"method", "retrained binary model per pair"},
                                          {"pairs", pairs}});
    m.input(*args.pairwise_test);
  }
  m.output(result.model);
  m.output(result.log);
  if (result.pairwise) m.output(*result.pairwise);
  m.write(args.out_dir, stem);
  log << "train: " << to_string(args.kind) << " on " << records.size() << " " << to_string(task)
      << " examples, train accuracy " << train_log["train_accuracy"].get<double>() << "\n";
  return result;
}

// ---------------------------------------------------------------------------
// predict

struct PredictArgs {
  fs::path model;
  fs::path input;
  fs::path out_dir = ".";
  std::optional<fs::path> output;
  std::uint64_t seed = 0;
};

inline fs::path cmd_predict(const PredictArgs& args, std::ostream& log = std::cerr) {
  auto pipeline = detail::load_pipeline_checked(args.model, "model file");
  auto records = detail::read_records_checked(args.input, "input records", "run `policyscope split` first");
  PredictionSet set;
  set.task = pipeline.task();
  set.source_name = args.model.filename().string();
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    auto p = pipeline.predict(r.record.description);
    const auto& ids = std::visit([](const auto& m) -> const std::vector<int>& { return m.class_ids(); },
                                 pipeline.classifier());
    const auto k = static_cast<std::size_t>(std::find(ids.begin(), ids.end(), p.label) - ids.begin());
    set.entries.push_back({"ex-" + std::to_string(i), task_label(r, set.task), p.label, p.scores[k], r.doc_type});
  }
  detail::ensure_dir(args.out_dir);
  const auto out = args.output.value_or(args.out_dir / ("predictions_" + std::string(to_string(set.task)) + ".csv"));
  write_predictions(out, set);
  detail::Manifest m("predict", args.seed, {{"model", args.model.string()}, {"input", args.input.string()}});
  m.input(args.model);
  m.input(args.input);
  m.output(out);
  m.write(args.out_dir, std::string(to_string(set.task)));
  log << "predict: " << set.entries.size() << " predictions -> " << out.string() << "\n";
  return out;
}

// ---------------------------------------------------------------------------
// evaluate

struct EvaluateArgs {
  fs::path predictions;
  Task task = Task::Case;
  fs::path out_dir = ".";
  ReportFormat format = ReportFormat::Json;
  std::uint64_t seed = 0;
};

struct EvaluateResult {
  EvalReport report;
  std::vector<PairwiseEntry> pairwise;
  fs::path json;
};

inline EvaluateResult cmd_evaluate(const EvaluateArgs& args, std::ostream& log = std::cerr) {
  detail::require_file(args.predictions, "predictions file", "run `policyscope predict` or import external predictions");
  PredictionSet set;
  try {
    set = import_predictions(args.predictions, args.task);
  } catch (const SchemaError& e) {
    throw UsageError(args.predictions.string() + ": " + e.what());
  } catch (const ValidationError& e) {
    throw UsageError(args.predictions.string() + ": " + e.what());
  }
  if (set.entries.empty()) throw UsageError(args.predictions.string() + " contains no predictions");
  const auto matrix = confusion(set);
  EvaluateResult result;
  result.report = metrics(matrix);
  const auto namer = label_namer(args.task);
  nlohmann::json j = {{"format_version", 1},
                      {"source", args.predictions.string()},
                      {"task", std::string(to_string(args.task))},
                      {"metrics", to_json(result.report, namer)}};
  if (args.task == Task::DocType) {
    result.pairwise = pairwise_table(matrix);
    j["pairwise_accuracy"] = to_json(result.pairwise, namer);
    j["pairwise_interpretation"] = std::string(kPairwiseInterpretation);
  }
  detail::ensure_dir(args.out_dir);
  result.json = args.out_dir / ("eval_" + std::string(to_string(args.task)) + ".json");
  detail::write_json(result.json, j);
  detail::Manifest m("evaluate", args.seed,
                     {{"predictions", args.predictions.string()}, {"task", std::string(to_string(args.task))}});
  m.input(args.predictions);
  m.output(result.json);
  const std::string md = to_markdown(result.report, namer);
  if (args.format == ReportFormat::Markdown) {
    std::string text = md;
    if (!result.pairwise.empty()) {
      text += "\n| pair | pairwise accuracy |\n|---|---|\n";
      for (const auto& p : result.pairwise) {
        text += "| " + namer(p.a) + " / " + namer(p.b) + " | " +
                (p.accuracy ? policyscope::detail::fixed4(*p.accuracy) : std::string("n/a")) + " |\n";
      }
      text += "\n" + std::string(kPairwiseInterpretation) + "\n";
    }
    const auto path = args.out_dir / ("eval_" + std::string(to_string(args.task)) + ".md");
    detail::write_text(path, text);
    m.output(path);
  } else if (args.format == ReportFormat::Csv) {
    const auto path = args.out_dir / ("confusion_" + std::string(to_string(args.task)) + ".csv");
    std::ostringstream csv;
    write_confusion_csv(csv, matrix, namer);
    detail::write_text(path, csv.str());
    m.output(path);
  }
  m.write(args.out_dir, std::string(to_string(args.task)));
  log << md;
  return result;
}

// ---------------------------------------------------------------------------
// kappa

struct KappaArgs {
  fs::path labels;
  bool fleiss = false;
  fs::path out_dir = ".";
  ReportFormat format = ReportFormat::Json;
  std::uint64_t seed = 0;
};

inline AgreementReport load_agreement(const fs::path& labels, bool fleiss) {
  detail::require_file(labels, "annotator labels file");
  try {
    return agreement_report(read_annotator_labels(labels), fleiss);
  } catch (const ParseError& e) {
    throw UsageError(labels.string() + ": " + e.what());
  } catch (const SchemaError& e) {
    throw UsageError(labels.string() + ": " + e.what());
  } catch (const ValidationError& e) {
    throw UsageError(labels.string() + ": " + e.what());
  }
}

inline AgreementReport cmd_kappa(const KappaArgs& args, std::ostream& log = std::cerr) {
  auto report = load_agreement(args.labels, args.fleiss);
  detail::ensure_dir(args.out_dir);
  const auto json_path = args.out_dir / "agreement.json";
  auto j = to_json(report);
  j["format_version"] = 1;
  detail::write_json(json_path, j);
  detail::Manifest m("kappa", args.seed, {{"labels", args.labels.string()}, {"fleiss", args.fleiss}});
  m.input(args.labels);
  m.output(json_path);
  std::ostringstream md;
  md << "# Annotator agreement\n\n- annotators: " << report.annotators.size() << "\n- cases: "
     << report.consensus.size() << "\n- labels: " << report.labels_consumed
     << "\n- mean pairwise Cohen's kappa: " << policyscope::detail::fixed4(report.mean_kappa) << "\n";
  if (report.fleiss) md << "- Fleiss' kappa: " << policyscope::detail::fixed4(report.fleiss->kappa) << "\n";
  md << "\n| pair | kappa | degenerate |\n|---|---|---|\n";
  for (const auto& p : report.pairs) {
    md << "| " << report.annotators[p.first] << " / " << report.annotators[p.second] << " | "
       << policyscope::detail::fixed4(p.result.kappa) << " | " << (p.result.degenerate ? "yes" : "no") << " |\n";
  }
  if (args.format == ReportFormat::Markdown) {
    const auto path = args.out_dir / "agreement.md";
    detail::write_text(path, md.str());
    m.output(path);
  } else if (args.format == ReportFormat::Csv) {
    const auto path = args.out_dir / "consensus.csv";
    std::ostringstream csv;
    csv << "case_id,consensus,contested,positive_votes\n";
    for (const auto& [id, c] : report.consensus) {
      csv << id << ',' << c.label << ',' << (c.contested ? 1 : 0) << ',' << c.positive_votes << '\n';
    }
    detail::write_text(path, csv.str());
    m.output(path);
  }
  m.write(args.out_dir);
  log << md.str();
  return report;
}

// ---------------------------------------------------------------------------
// overlap

struct OverlapArgs {
  fs::path predictions;
  std::uint64_t min_count = 3;
  std::int64_t band = 5;
  std::set<int> exclude;
  bool exclude_abstain = false;
  std::optional<fs::path> labels;
  std::optional<fs::path> taxonomy;
  fs::path out_dir = ".";
  ReportFormat format = ReportFormat::Json;
  std::uint64_t seed = 0;
};

struct OverlapResult {
  CaseFrequencyTable table;
  std::optional<double> tv;
  RegimeReport regimes;
  std::optional<EncroachmentReport> encroachment;
  fs::path json;
};

inline OverlapResult cmd_overlap(const OverlapArgs& args, std::ostream& log = std::cerr) {
  detail::require_file(args.predictions, "case predictions file", "run `policyscope predict` with a case model first");
  if (args.taxonomy) detail::require_file(*args.taxonomy, "taxonomy file");
  PredictionSet set;
  OverlapResult result;
  try {
    set = import_predictions(args.predictions, Task::Case);
    result.table = case_frequencies(set, !args.exclude_abstain);
  } catch (const SchemaError& e) {
    throw UsageError(args.predictions.string() + ": " + e.what());
  } catch (const ValidationError& e) {
    throw UsageError(args.predictions.string() + ": " + e.what());
  }
  nlohmann::json j = {{"format_version", 1},
                      {"source", args.predictions.string()},
                      {"include_abstain", !args.exclude_abstain},
                      {"frequencies", to_json(result.table)}};
  nlohmann::json undefined = nlohmann::json::array();
  for (DocType d : result.table.empty_doc_types()) undefined.push_back(std::string(to_string(d)));
  j["undefined_fractions"] = undefined;
  const bool both = result.table.total(DocType::PrivacyPolicy) > 0 && result.table.total(DocType::TermsOfService) > 0;
  if (!both) {
    throw AnalysisFailure("overlap needs case predictions for both PrivacyPolicy and TermsOfService documents");
  }
  result.tv = tv_loss(result.table.fractions(DocType::PrivacyPolicy), result.table.fractions(DocType::TermsOfService));
  j["tv_loss"] = *result.tv;
  result.regimes = regime_partition(result.table, args.min_count, args.band, args.exclude);
  j["regimes"] = to_json(result.regimes);

  detail::Manifest m("overlap", args.seed,
                     {{"predictions", args.predictions.string()},
                      {"min_count", args.min_count},
                      {"band", args.band},
                      {"exclude", args.exclude},
                      {"exclude_abstain", args.exclude_abstain},
                      {"labels", args.labels ? args.labels->string() : ""}});
  m.input(args.predictions);
  std::string md = "# Case overlap: Privacy Policy vs Terms of Service\n\n- total-variation loss: " +
                   policyscope::detail::fixed4(*result.tv) + "\n\n";
  if (args.labels) {
    auto agreement = load_agreement(*args.labels, false);
    const auto taxonomy = args.taxonomy ? CaseTaxonomy::load(*args.taxonomy) : CaseTaxonomy::make_default();
    try {
      result.encroachment = encroachment_report(result.regimes, agreement, taxonomy);
    } catch (const ValidationError& e) {
      throw UsageError(args.labels->string() + ": " + e.what());
    }
    j["encroachment"] = to_json(*result.encroachment);
    j["mean_pairwise_kappa"] = agreement.mean_kappa;
    md += to_markdown(*result.encroachment);
    m.input(*args.labels);
    if (args.taxonomy) m.input(*args.taxonomy);
  } else {
    md += to_markdown(result.regimes);
  }
  detail::ensure_dir(args.out_dir);
  result.json = args.out_dir / "overlap.json";
  detail::write_json(result.json, j);
  m.output(result.json);
  if (args.format == ReportFormat::Markdown) {
    const auto path = args.out_dir / "overlap.md";
    detail::write_text(path, md);
    m.output(path);
  } else if (args.format == ReportFormat::Csv) {
    const auto path = args.out_dir / "regimes.csv";
    std::ostringstream csv;
    csv << "regime,case_id,count_pp,count_tos,diff\n";
    auto rows = [&](const char* name, const std::vector<RegimeEntry>& v) {
      for (const auto& e : v) csv << name << ',' << e.case_id << ',' << e.count_pp << ',' << e.count_tos << ',' << e.diff << '\n';
    };
    rows("pp_dominant", result.regimes.pp_dominant);
    rows("tos_dominant", result.regimes.tos_dominant);
    rows("contested", result.regimes.contested);
    detail::write_text(path, csv.str());
    m.output(path);
  }
  m.write(args.out_dir);
  log << md;
  return result;
}

// ---------------------------------------------------------------------------
// analyze

struct SentenceResult {
  std::string text;
  int case_id = 0;
  double confidence = 0.0;  // top class score
  DocType doc_type = DocType::OtherPolicy;
};

struct AnalysisReport {
  std::string digest;
  std::vector<SentenceResult> sentences;
  std::map<int, std::size_t> detected_cases;  // excludes abstain
  std::size_t abstained = 0;
  DocType doc_type = DocType::TermsOfService;
  std::map<DocType, std::size_t> doc_type_votes;
  double score = 0.0;
  std::size_t considered = 0;
  std::string grade;
};

struct AnalyzeArgs {
  fs::path document;
  fs::path case_model;
  fs::path doctype_model;
  std::optional<fs::path> scoring;
  std::optional<fs::path> taxonomy;
  SentenceConfig sentences;
  fs::path out_dir = ".";
  ReportFormat format = ReportFormat::Json;
  std::uint64_t seed = 0;
};

/// Core of `analyze` without file output.
inline AnalysisReport analyze_text(std::string_view raw, const PipelineModel& case_model,
                                   const PipelineModel& doctype_model, const ScoringConfig& scoring,
                                   const SentenceConfig& sentences = {}) {
  if (case_model.task() != Task::Case) throw UsageError("case model was trained for the doctype task");
  if (doctype_model.task() != Task::DocType) throw UsageError("doctype model was trained for the case task");
  AnalysisReport r;
  r.digest = policyscope::detail::sha256_hex(raw);
  const auto text = clean_text(raw);
  for (auto& s : split_sentences(text, sentences)) {
    auto pc = case_model.predict(s);
    auto pd = doctype_model.predict(s);
    SentenceResult sr;
    sr.text = std::move(s);
    sr.case_id = pc.label;
    sr.confidence = *std::max_element(pc.scores.begin(), pc.scores.end());
    sr.doc_type = static_cast<DocType>(pd.label);
    r.sentences.push_back(std::move(sr));
  }
  if (r.sentences.empty()) throw AnalysisFailure("no analyzable sentences");
  std::vector<int> cases;
  for (const auto& s : r.sentences) {
    cases.push_back(s.case_id);
    if (s.case_id == kAbstainCase) ++r.abstained;
    else ++r.detected_cases[s.case_id];
    ++r.doc_type_votes[s.doc_type];
  }
  // Majority over sentences; ties go to the lowest doctype, which puts
  // TermsOfService first.
  std::size_t best = 0;
  for (auto [d, n] : r.doc_type_votes) {
    if (n > best) {
      best = n;
      r.doc_type = d;
    }
  }
  const auto s = score_document(cases, scoring);
  r.score = s.score;
  r.considered = s.considered;
  r.grade = scoring.grade_for(s.score);
  return r;
}

inline nlohmann::json to_json(const AnalysisReport& r, const CaseTaxonomy& taxonomy) {
  auto name = [&](int c) { return taxonomy.contains(c) ? taxonomy.description(c) : std::to_string(c); };
  nlohmann::json sentences = nlohmann::json::array();
  for (const auto& s : r.sentences) {
    sentences.push_back({{"text", s.text}, {"case_id", s.case_id}, {"case", name(s.case_id)},
                         {"confidence", s.confidence}, {"doctype", std::string(to_string(s.doc_type))}});
  }
  nlohmann::json detected = nlohmann::json::array();
  for (auto [c, n] : r.detected_cases) detected.push_back({{"case_id", c}, {"case", name(c)}, {"count", n}});
  nlohmann::json votes = nlohmann::json::object();
  for (auto [d, n] : r.doc_type_votes) votes[std::string(to_string(d))] = n;
  return {{"format_version", 1},
          {"document_sha256", r.digest},
          {"sentence_count", r.sentences.size()},
          {"sentences", sentences},
          {"detected_cases", detected},
          {"abstained_sentences", r.abstained},
          {"doctype", std::string(to_string(r.doc_type))},
          {"doctype_votes", votes},
          {"score", r.score},
          {"scored_sentences", r.considered},
          {"grade", r.grade}};
}

inline std::string to_markdown(const AnalysisReport& r, const CaseTaxonomy& taxonomy) {
  auto name = [&](int c) { return taxonomy.contains(c) ? taxonomy.description(c) : std::to_string(c); };
  std::ostringstream out;
  out << "# Document analysis\n\n- document type: " << display_name(r.doc_type) << "\n- score: "
      << policyscope::detail::fixed4(r.score) << " (grade " << r.grade << ")\n- sentences: " << r.sentences.size()
      << " (" << r.abstained << " abstained)\n\n## Detected cases\n\n";
  if (r.detected_cases.empty()) out << "_none_\n";
  for (auto [c, n] : r.detected_cases) out << "- " << name(c) << " (" << n << ")\n";
  out << "\n## Sentences\n\n| # | case | confidence | sentence |\n|---|---|---|---|\n";
  for (std::size_t i = 0; i < r.sentences.size(); ++i) {
    const auto& s = r.sentences[i];
    out << "| " << i + 1 << " | " << name(s.case_id) << " | " << policyscope::detail::fixed4(s.confidence) << " | "
        << s.text << " |\n";
  }
  return out.str();
}

inline AnalysisReport cmd_analyze(const AnalyzeArgs& args, std::ostream& log = std::cerr) {
  detail::require_file(args.document, "document file");
  if (args.scoring) detail::require_file(*args.scoring, "scoring config");
  if (args.taxonomy) detail::require_file(*args.taxonomy, "taxonomy file");
  const auto case_model = detail::load_pipeline_checked(args.case_model, "case model");
  const auto doctype_model = detail::load_pipeline_checked(args.doctype_model, "doctype model");
  const auto scoring = args.scoring ? ScoringConfig::load(*args.scoring) : ScoringConfig::make_default();
  const auto taxonomy = args.taxonomy ? CaseTaxonomy::load(*args.taxonomy) : CaseTaxonomy::make_default();
  std::ifstream in(args.document, std::ios::binary);
  std::string raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  auto report = analyze_text(raw, case_model, doctype_model, scoring, args.sentences);
  detail::ensure_dir(args.out_dir);
  const auto json_path = args.out_dir / "analysis.json";
  detail::write_json(json_path, to_json(report, taxonomy));
  detail::Manifest m("analyze", args.seed,
                     {{"document", args.document.string()},
                      {"case_model", args.case_model.string()},
                      {"doctype_model", args.doctype_model.string()},
                      {"scoring", args.scoring ? args.scoring->string() : "(default)"},
                      {"min_tokens", args.sentences.min_tokens}});
  m.input(args.document);
  m.input(args.case_model);
  m.input(args.doctype_model);
  if (args.scoring) m.input(*args.scoring);
  m.output(json_path);
  const auto md = to_markdown(report, taxonomy);
  if (args.format == ReportFormat::Markdown) {
    const auto path = args.out_dir / "analysis.md";
    detail::write_text(path, md);
    m.output(path);
  } else if (args.format == ReportFormat::Csv) {
    const auto path = args.out_dir / "analysis.csv";
    std::ostringstream csv;
    csv << "index,case_id,confidence,doctype,sentence\n";
    for (std::size_t i = 0; i < report.sentences.size(); ++i) {
      const auto& s = report.sentences[i];
      std::vector<std::string> row = {std::to_string(i), std::to_string(s.case_id), nlohmann::json(s.confidence).dump(),
                                      std::string(to_string(s.doc_type)), s.text};
      policyscope::detail::write_csv_row(csv, row);
    }
    detail::write_text(path, csv.str());
    m.output(path);
  }
  m.write(args.out_dir);
  log << md;
  return report;
}

}  // namespace policyscope::cli
