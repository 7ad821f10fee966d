// policyscope command-line tool.
//
//   policyscope ingest   --input raw.csv --out data/
//   policyscope split    --input data/curated.jsonl --out data/
//   policyscope train    --train data/train.jsonl --model svm --task case --out models/
//   policyscope predict  --model models/model_svm_case.json --input data/test.jsonl --out runs/
//   policyscope evaluate --predictions runs/predictions_case.csv --task case --out runs/
//   policyscope overlap  --predictions runs/predictions_case.csv --out runs/
//   policyscope kappa    --labels annotators.csv --out runs/
//   policyscope analyze  --document policy.txt --case-model ... --doctype-model ... --out runs/
//
// Exit codes: 0 success, 1 analysis failure, 2 usage or input error.

#include <algorithm>
#include <cctype>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "policyscope/commands.hpp"

namespace cli = policyscope::cli;
namespace ps = policyscope;

namespace {

const std::map<std::string, cli::ReportFormat> kFormats = {
    {"json", cli::ReportFormat::Json}, {"md", cli::ReportFormat::Markdown}, {"csv", cli::ReportFormat::Csv}};
const std::map<std::string, ps::Task> kTasks = {{"case", ps::Task::Case}, {"doctype", ps::Task::DocType}};
const std::map<std::string, ps::ModelKind> kKinds = {{"svm", ps::ModelKind::Svm}, {"rf", ps::ModelKind::RandomForest}};
const std::map<std::string, ps::Sampling> kSamplings = {{"normal", ps::Sampling::Normal},
                                                        {"oversample", ps::Sampling::Oversample}};
const std::map<std::string, ps::InputFormat> kInputFormats = {{"csv", ps::InputFormat::Delimited},
                                                              {"jsonl", ps::InputFormat::JsonLines}};

template <class T>
T lookup(const std::map<std::string, T>& table, std::string key) {
  std::transform(key.begin(), key.end(), key.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return table.at(key);
}

struct Global {
  std::uint64_t seed = 0;
  std::string out = ".";
  cli::ReportFormat format = cli::ReportFormat::Json;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"policyscope: corpus curation, classification and concept-overlap analysis for policy documents"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(cli::kToolVersion));
  app.set_config("--config", "", "TOML/INI file with default flag values");

  Global g;
  auto add_globals = [&](CLI::App* sub) {
    sub->add_option("--seed", g.seed, "Random seed")->capture_default_str();
    sub->add_option("--out", g.out, "Output directory")->capture_default_str();
    sub->add_option("--format", g.format, "Extra report format: json, md or csv")
        ->transform(CLI::CheckedTransformer(kFormats, CLI::ignore_case));
  };

  // ingest
  cli::IngestArgs ingest;
  std::string ingest_input, ingest_taxonomy, ingest_mapping;
  std::optional<ps::InputFormat> ingest_format;
  bool keep_all_status = false, keep_empty = false, keep_duplicates = false, no_clean = false;
  auto* s_ingest = app.add_subcommand("ingest", "Parse, clean, trim and doctype-map a raw annotation export");
  s_ingest->add_option("--input", ingest_input, "Raw export (.csv/.tsv or .jsonl)")->required();
  s_ingest->add_option("--input-format", ingest_format, "csv or jsonl (default: by extension)")
      ->transform(CLI::CheckedTransformer(kInputFormats, CLI::ignore_case));
  s_ingest->add_option("--taxonomy", ingest_taxonomy, "Case taxonomy JSON");
  s_ingest->add_option("--mapping", ingest_mapping, "Title-keyword to doctype mapping JSON");
  s_ingest->add_flag("--keep-all-status", keep_all_status, "Keep records of every status");
  s_ingest->add_flag("--keep-empty", keep_empty, "Keep records with empty descriptions");
  s_ingest->add_flag("--keep-duplicates", keep_duplicates, "Keep duplicate (description, case) pairs");
  s_ingest->add_flag("--no-clean", no_clean, "Do not strip markup from descriptions");
  s_ingest->add_flag("--strict", ingest.strict, "Fail on the first malformed row");
  add_globals(s_ingest);

  // split
  cli::SplitArgs split;
  std::string split_input;
  std::string split_oversample;
  auto* s_split = app.add_subcommand("split", "Split curated records into train and test by document size");
  s_split->add_option("--input", split_input, "curated.jsonl from ingest")->required();
  s_split->add_option("--threshold", split.threshold, "Documents with at least this many annotations go to train")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  s_split->add_option("--oversample", split_oversample, "Also write an oversampled train file for this task")
      ->check(CLI::IsMember(kTasks, CLI::ignore_case));
  add_globals(s_split);

  // train
  cli::TrainArgs train;
  std::string train_input, train_model_out, pairwise_test, features_per_split = "sqrt";
  std::string train_kind = "svm", train_task = "case", train_sampling = "normal";
  auto* s_train = app.add_subcommand("train", "Fit a TF-IDF + classifier pipeline");
  s_train->add_option("--train", train_input, "train.jsonl from split")->required();
  s_train->add_option("--model", train_kind, "svm or rf")
      ->check(CLI::IsMember(kKinds, CLI::ignore_case))
      ->capture_default_str();
  s_train->add_option("--task", train_task, "case or doctype")
      ->check(CLI::IsMember(kTasks, CLI::ignore_case))
      ->capture_default_str();
  s_train->add_option("--sampling", train_sampling, "normal or oversample")
      ->check(CLI::IsMember(kSamplings, CLI::ignore_case))
      ->capture_default_str();
  s_train->add_option("--threads", train.threads, "Training threads (0 = all cores)")->capture_default_str();
  s_train->add_option("--model-out", train_model_out, "Model file path (default: <out>/model_<kind>_<task>.json)");
  s_train->add_option("--min-df", train.config.tfidf.min_df, "Minimum document frequency")->capture_default_str();
  s_train->add_option("--max-features", train.config.tfidf.max_features, "Vocabulary cap")->capture_default_str();
  s_train->add_flag("--stop-words", train.config.tfidf.remove_stop_words, "Drop English stop words");
  s_train->add_option("--ngram-max", train.config.tfidf.ngram_max, "Longest n-gram")->capture_default_str();
  s_train->add_option("--epochs", train.config.svm.epochs, "SVM epochs")->capture_default_str()->check(CLI::PositiveNumber);
  s_train->add_option("--lambda", train.config.svm.lambda, "SVM regularization")->capture_default_str()->check(CLI::PositiveNumber);
  s_train->add_option("--trees", train.config.forest.n_trees, "Forest size")->capture_default_str()->check(CLI::PositiveNumber);
  s_train->add_option("--max-depth", train.config.forest.max_depth, "Tree depth limit (0 = none)")->capture_default_str();
  s_train->add_option("--min-samples-leaf", train.config.forest.min_samples_leaf, "Minimum leaf size")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  s_train->add_option("--features-per-split", features_per_split, "sqrt, log2 or a fraction in (0,1]")
      ->capture_default_str();
  s_train->add_option("--pairwise-retrain", pairwise_test,
                      "Test file: also retrain one binary model per doctype pair and report its accuracy");
  add_globals(s_train);

  // predict
  cli::PredictArgs predict;
  std::string predict_model, predict_input, predict_output;
  auto* s_predict = app.add_subcommand("predict", "Run a trained pipeline over records and write predictions");
  s_predict->add_option("--model", predict_model, "Model file from train")->required();
  s_predict->add_option("--input", predict_input, "Records (JSON lines with a doctype field)")->required();
  s_predict->add_option("--output", predict_output, "Predictions CSV (default: <out>/predictions_<task>.csv)");
  add_globals(s_predict);

  // evaluate
  cli::EvaluateArgs evaluate;
  std::string eval_predictions, eval_task;
  auto* s_eval = app.add_subcommand("evaluate", "Score predictions: P/R/F1, accuracy, pairwise accuracy");
  s_eval->add_option("--predictions", eval_predictions, "CSV: example_id,gold,predicted[,score][,doctype]")->required();
  s_eval->add_option("--task", eval_task, "case or doctype")
      ->check(CLI::IsMember(kTasks, CLI::ignore_case))
      ->required();
  add_globals(s_eval);

  // overlap
  cli::OverlapArgs overlap;
  std::string overlap_predictions, overlap_labels, overlap_taxonomy;
  std::vector<int> overlap_exclude;
  auto* s_overlap = app.add_subcommand("overlap", "Compare case distributions of privacy policies and terms of service");
  s_overlap->add_option("--predictions", overlap_predictions, "Case predictions CSV with a doctype column")->required();
  s_overlap->add_option("--min-count", overlap.min_count, "Drop cases seen fewer times in both types")->capture_default_str();
  s_overlap->add_option("--band", overlap.band, "Count difference that counts as dominant")
      ->capture_default_str()
      ->check(CLI::NonNegativeNumber);
  s_overlap->add_option("--exclude", overlap_exclude, "Case ids to leave out (repeatable)")
      ->check(CLI::Range(0, ps::kCaseCount - 1));
  s_overlap->add_flag("--exclude-abstain", overlap.exclude_abstain, "Leave the abstain case out of the fractions");
  s_overlap->add_option("--labels", overlap_labels, "Annotator labels CSV for the encroachment report");
  s_overlap->add_option("--taxonomy", overlap_taxonomy, "Case taxonomy JSON");
  add_globals(s_overlap);

  // kappa
  cli::KappaArgs kappa;
  std::string kappa_labels;
  auto* s_kappa = app.add_subcommand("kappa", "Inter-annotator agreement on binary case labels");
  s_kappa->add_option("--labels", kappa_labels, "CSV: case_id,<annotator>...")->required();
  s_kappa->add_flag("--fleiss", kappa.fleiss, "Also report Fleiss' kappa");
  add_globals(s_kappa);

  // analyze
  cli::AnalyzeArgs analyze;
  std::string analyze_document, analyze_case, analyze_doctype, analyze_scoring, analyze_taxonomy;
  auto* s_analyze = app.add_subcommand("analyze", "Detect cases in a document, classify it and grade it");
  s_analyze->add_option("--document", analyze_document, "Plain text or HTML document")->required();
  s_analyze->add_option("--case-model", analyze_case, "Case model from train")->required();
  s_analyze->add_option("--doctype-model", analyze_doctype, "Doctype model from train")->required();
  s_analyze->add_option("--scoring", analyze_scoring, "Scoring config JSON (default: all weights 0)");
  s_analyze->add_option("--taxonomy", analyze_taxonomy, "Case taxonomy JSON");
  s_analyze->add_option("--min-tokens", analyze.sentences.min_tokens, "Shortest sentence kept")->capture_default_str();
  add_globals(s_analyze);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  auto opt_path = [](const std::string& s) { return s.empty() ? std::nullopt : std::optional<cli::fs::path>(s); };
  try {
    const cli::fs::path out = g.out;
    if (s_ingest->parsed()) {
      ingest.input = ingest_input;
      ingest.format = ingest_format;
      ingest.taxonomy = opt_path(ingest_taxonomy);
      ingest.mapping = opt_path(ingest_mapping);
      ingest.trim.filter_status = !keep_all_status;
      ingest.trim.drop_empty = !keep_empty;
      ingest.trim.deduplicate = !keep_duplicates;
      ingest.clean = !no_clean;
      ingest.out_dir = out;
      ingest.seed = g.seed;
      cli::cmd_ingest(ingest);
    } else if (s_split->parsed()) {
      split.input = split_input;
      if (!split_oversample.empty()) split.oversample_task = lookup(kTasks, split_oversample);
      split.out_dir = out;
      split.seed = g.seed;
      cli::cmd_split(split);
    } else if (s_train->parsed()) {
      try {
        ps::parse_features_per_split(features_per_split, train.config.forest);
      } catch (const ps::Error& e) {
        throw cli::UsageError(std::string("--features-per-split: ") + e.what());
      }
      train.kind = lookup(kKinds, train_kind);
      train.task = lookup(kTasks, train_task);
      train.sampling = lookup(kSamplings, train_sampling);
      train.train = train_input;
      train.model_out = opt_path(train_model_out);
      train.pairwise_test = opt_path(pairwise_test);
      train.out_dir = out;
      train.seed = g.seed;
      cli::cmd_train(train);
    } else if (s_predict->parsed()) {
      predict.model = predict_model;
      predict.input = predict_input;
      predict.output = opt_path(predict_output);
      predict.out_dir = out;
      predict.seed = g.seed;
      cli::cmd_predict(predict);
    } else if (s_eval->parsed()) {
      evaluate.task = lookup(kTasks, eval_task);
      evaluate.predictions = eval_predictions;
      evaluate.out_dir = out;
      evaluate.format = g.format;
      evaluate.seed = g.seed;
      cli::cmd_evaluate(evaluate);
    } else if (s_overlap->parsed()) {
      overlap.predictions = overlap_predictions;
      overlap.exclude.insert(overlap_exclude.begin(), overlap_exclude.end());
      overlap.labels = opt_path(overlap_labels);
      overlap.taxonomy = opt_path(overlap_taxonomy);
      overlap.out_dir = out;
      overlap.format = g.format;
      overlap.seed = g.seed;
      cli::cmd_overlap(overlap);
    } else if (s_kappa->parsed()) {
      kappa.labels = kappa_labels;
      kappa.out_dir = out;
      kappa.format = g.format;
      kappa.seed = g.seed;
      cli::cmd_kappa(kappa);
    } else if (s_analyze->parsed()) {
      analyze.document = analyze_document;
      analyze.case_model = analyze_case;
      analyze.doctype_model = analyze_doctype;
      analyze.scoring = opt_path(analyze_scoring);
      analyze.taxonomy = opt_path(analyze_taxonomy);
      analyze.out_dir = out;
      analyze.format = g.format;
      analyze.seed = g.seed;
      cli::cmd_analyze(analyze);
    }
  } catch (const cli::UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const cli::AnalysisFailure& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const ps::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const ps::SchemaError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
