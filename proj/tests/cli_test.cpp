#include <gtest/gtest.h>
#include <sys/wait.h>

#include <algorithm>
#include <cstdlib>
#include <sstream>

#include "policyscope/commands.hpp"
#include "synthetic.hpp"
#include "test_util.hpp"

using namespace policyscope;
namespace fs = std::filesystem;

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
  return q + "\"";
}

std::string raw_title(DocType d) {
  switch (d) {
    case DocType::TermsOfService: return "Terms of Service";
    case DocType::PrivacyPolicy: return "Privacy Policy";
    case DocType::CookiePolicy: return "Cookie Policy";
    case DocType::DataPolicy: return "Data Policy";
    default: return "Community Guidelines";
  }
}

void write_raw_csv(const fs::path& p, const std::vector<LabeledRecord>& records) {
  std::ostringstream out;
  out << "Description,Case,Title,Status,Service,Author ID,Comments\n";
  for (const auto& r : records) {
    out << csv_field(r.record.description) << ',' << r.record.case_id << ',' << raw_title(r.doc_type)
        << ",Accepted," << r.record.service_id << ",a1,\n";
  }
  testutil::write_file(p, out.str());
}

std::vector<LabeledRecord> small_corpus(int per_type = 40) {
  return synth::doctype_corpus(synth::disjoint_vocabularies(5, 30), per_type, 11);
}

// Pipeline models on the small corpus, trained once.
struct Models {
  fs::path case_model, doctype_model;
};

const Models& shared_models(const testutil::TempDir& dir) {
  static std::optional<Models> models;
  static fs::path owner;
  if (!models || owner != dir.path()) {
    owner = dir.path();
    const auto train = dir / "train.jsonl";
    auto records = small_corpus();
    cli::detail::write_records(train, records, std::nullopt, std::nullopt);
    std::ostringstream quiet;
    cli::TrainArgs a;
    a.train = train;
    a.out_dir = dir / "models";
    a.task = Task::Case;
    Models m;
    m.case_model = cli::cmd_train(a, quiet).model;
    a.task = Task::DocType;
    m.doctype_model = cli::cmd_train(a, quiet).model;
    models = m;
  }
  return *models;
}

nlohmann::json read_json(const fs::path& p) { return nlohmann::json::parse(testutil::read_file(p)); }

int run_cli(const std::string& args, std::string* err = nullptr, const fs::path& err_file = {}) {
  std::string cmd = std::string(POLICYSCOPE_CLI) + " " + args + " >/dev/null";
  if (!err_file.empty()) cmd += " 2>" + err_file.string();
  else cmd += " 2>/dev/null";
  const int status = std::system(cmd.c_str());
  if (err && !err_file.empty()) *err = testutil::read_file(err_file);
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST(Ingest, CuratedFileAndReport) {
  testutil::TempDir dir;
  auto records = small_corpus(5);
  write_raw_csv(dir / "raw.csv", records);
  testutil::write_file(dir / "extra.csv",
                       testutil::read_file(dir / "raw.csv") + "Bad row,notanumber,Terms,Accepted,s,a,\n" +
                           "<b>Declined one here</b>,3,Terms,Declined,s,a,\n");
  cli::IngestArgs a;
  a.input = dir / "extra.csv";
  a.out_dir = dir / "out";
  std::ostringstream log;
  auto r = cli::cmd_ingest(a, log);
  EXPECT_EQ(r.output, records.size());
  EXPECT_EQ(r.row_errors, 1u);
  EXPECT_EQ(r.trim.dropped_status, 1u);
  auto report = read_json(r.report);
  EXPECT_EQ(report["format_version"], 1);
  EXPECT_EQ(report["input_rows"], records.size() + 2);
  EXPECT_EQ(report["output_records"], records.size());
  EXPECT_EQ(report["removed_total"], 2);
  EXPECT_EQ(report["row_errors"][0]["line"], records.size() + 2);
  EXPECT_EQ(report["doctype_counts"]["PrivacyPolicy"], 5);
  auto curated = read_labeled_records(r.curated);
  ASSERT_EQ(curated.size(), records.size());
  EXPECT_EQ(curated[0].doc_type, DocType::TermsOfService);
  EXPECT_EQ(curated.back().doc_type, DocType::OtherPolicy);
}

TEST(Ingest, MissingTaxonomyNamesPath) {
  testutil::TempDir dir;
  write_raw_csv(dir / "raw.csv", small_corpus(2));
  cli::IngestArgs a;
  a.input = dir / "raw.csv";
  a.taxonomy = dir / "no_such_taxonomy.json";
  a.out_dir = dir / "out";
  try {
    cli::cmd_ingest(a);
    FAIL() << "expected UsageError";
  } catch (const cli::UsageError& e) {
    EXPECT_NE(std::string(e.what()).find("no_such_taxonomy.json"), std::string::npos) << e.what();
  }
}

TEST(Ingest, StrictModeRejectsBadRows) {
  testutil::TempDir dir;
  testutil::write_file(dir / "raw.csv", "Description,Case,Title,Status,Author ID\nok text,1,Terms,Accepted,a\n,2,Terms,Accepted,a\n");
  cli::IngestArgs a;
  a.input = dir / "raw.csv";
  a.out_dir = dir / "out";
  a.strict = true;
  try {
    cli::cmd_ingest(a);
    FAIL() << "expected UsageError";
  } catch (const cli::UsageError& e) {
    EXPECT_NE(std::string(e.what()).find("raw.csv:3"), std::string::npos) << e.what();
  }
}

TEST(Ingest, ManifestRecordsDigestsAndFlags) {
  testutil::TempDir dir;
  write_raw_csv(dir / "raw.csv", small_corpus(2));
  cli::IngestArgs a;
  a.input = dir / "raw.csv";
  a.out_dir = dir / "out";
  a.seed = 42;
  std::ostringstream log;
  cli::cmd_ingest(a, log);
  auto m = read_json(dir / "out" / "manifest.ingest.json");
  EXPECT_EQ(m["command"], "ingest");
  EXPECT_EQ(m["seed"], 42);
  EXPECT_EQ(m["tool_version"], std::string(cli::kToolVersion));
  EXPECT_EQ(m["flags"]["strict"], false);
  ASSERT_EQ(m["inputs"].size(), 1u);
  EXPECT_EQ(m["inputs"][0]["sha256"].get<std::string>().size(), 64u);
  EXPECT_EQ(m["inputs"][0]["sha256"], policyscope::detail::sha256_hex(testutil::read_file(dir / "raw.csv")));
  EXPECT_EQ(m["outputs"].size(), 2u);
  EXPECT_TRUE(m.contains("created_at"));
}

TEST(Split, WritesTrainTestAndOversampledFile) {
  testutil::TempDir dir;
  auto records = small_corpus(5);
  records.push_back(synth::record("lone sentence here.", 1, DocType::PrivacyPolicy, "tiny"));
  cli::detail::write_records(dir / "curated.jsonl", records, std::nullopt, std::nullopt);
  cli::SplitArgs a;
  a.input = dir / "curated.jsonl";
  a.out_dir = dir / "out";
  a.threshold = 5;
  a.oversample_task = Task::DocType;
  std::ostringstream log;
  auto r = cli::cmd_split(a, log);
  auto train = read_labeled_records(r.train);
  auto test = read_labeled_records(r.test);
  EXPECT_EQ(train.size() + test.size(), records.size());
  ASSERT_EQ(test.size(), 1u);
  EXPECT_EQ(test[0].record.service_id, "tiny");
  ASSERT_TRUE(r.oversampled);
  EXPECT_TRUE(fs::exists(*r.oversampled));
  EXPECT_TRUE(fs::exists(dir / "out" / "split_report.json"));
}

TEST(Split, MissingUpstreamIsUsageErrorWithHint) {
  testutil::TempDir dir;
  cli::SplitArgs a;
  a.input = dir / "curated.jsonl";
  a.out_dir = dir / "out";
  try {
    cli::cmd_split(a);
    FAIL() << "expected UsageError";
  } catch (const cli::UsageError& e) {
    EXPECT_NE(std::string(e.what()).find("policyscope ingest"), std::string::npos) << e.what();
  }
}

TEST(Train, ModelAndLogWritten) {
  testutil::TempDir dir;
  cli::detail::write_records(dir / "train.jsonl", small_corpus(), std::nullopt, std::nullopt);
  cli::TrainArgs a;
  a.train = dir / "train.jsonl";
  a.out_dir = dir / "m";
  std::ostringstream log;
  auto r = cli::cmd_train(a, log);
  EXPECT_EQ(r.model.filename(), "model_svm_case.json");
  auto tl = read_json(r.log);
  EXPECT_EQ(tl["format_version"], 1);
  EXPECT_EQ(tl["objective_per_epoch"].size(), 10u);
  EXPECT_DOUBLE_EQ(tl["train_accuracy"].get<double>(), 1.0);
  EXPECT_TRUE(fs::exists(dir / "m" / "manifest.train.svm_case.json"));
}

TEST(Train, OversampleBalancesDocTypes) {
  testutil::TempDir dir;
  auto records = synth::doctype_corpus(synth::disjoint_vocabularies(5, 20), 3, 5);
  auto extra = synth::doctype_corpus(synth::disjoint_vocabularies(1, 20), 17, 6);
  records.insert(records.end(), extra.begin(), extra.end());  // ToS: 20, others: 3
  cli::detail::write_records(dir / "train.jsonl", records, std::nullopt, std::nullopt);
  cli::TrainArgs a;
  a.train = dir / "train.jsonl";
  a.task = Task::DocType;
  a.sampling = Sampling::Oversample;
  a.config.tfidf.min_df = 1;
  a.out_dir = dir / "m";
  std::ostringstream log;
  auto tl = read_json(cli::cmd_train(a, log).log);
  EXPECT_EQ(tl["examples_before_sampling"], 32);
  EXPECT_EQ(tl["examples"], 100);
  for (const auto& [k, v] : tl["class_counts"].items()) EXPECT_EQ(v, 20) << k;
}

TEST(Train, PairwiseRetrainOnlyForDocType) {
  testutil::TempDir dir;
  cli::detail::write_records(dir / "train.jsonl", small_corpus(), std::nullopt, std::nullopt);
  cli::detail::write_records(dir / "test.jsonl", small_corpus(10), std::nullopt, std::nullopt);
  cli::TrainArgs a;
  a.train = dir / "train.jsonl";
  a.pairwise_test = dir / "test.jsonl";
  a.out_dir = dir / "m";
  std::ostringstream log;
  EXPECT_THROW(cli::cmd_train(a, log), cli::UsageError);
  a.task = Task::DocType;
  auto r = cli::cmd_train(a, log);
  ASSERT_TRUE(r.pairwise);
  auto j = read_json(*r.pairwise);
  ASSERT_EQ(j["pairs"].size(), 10u);
  for (const auto& p : j["pairs"]) EXPECT_DOUBLE_EQ(p["accuracy"].get<double>(), 1.0);
}

TEST(Pipeline, PredictEvaluateOverlapKappaEndToEnd) {
  testutil::TempDir dir;
  const auto& models = shared_models(dir);
  cli::detail::write_records(dir / "test.jsonl", small_corpus(8), std::nullopt, std::nullopt);
  std::ostringstream log;
  cli::PredictArgs p;
  p.model = models.case_model;
  p.input = dir / "test.jsonl";
  p.out_dir = dir / "runs";
  const auto preds = cli::cmd_predict(p, log);
  EXPECT_EQ(preds.filename(), "predictions_case.csv");

  cli::EvaluateArgs e;
  e.predictions = preds;
  e.out_dir = dir / "runs";
  e.format = cli::ReportFormat::Markdown;
  auto er = cli::cmd_evaluate(e, log);
  EXPECT_DOUBLE_EQ(er.report.accuracy, 1.0);
  EXPECT_TRUE(fs::exists(dir / "runs" / "eval_case.md"));
  EXPECT_EQ(read_json(er.json)["format_version"], 1);

  cli::OverlapArgs o;
  o.predictions = preds;
  o.out_dir = dir / "runs";
  o.format = cli::ReportFormat::Csv;
  o.min_count = 1;
  auto orr = cli::cmd_overlap(o, log);
  ASSERT_TRUE(orr.tv);
  EXPECT_DOUBLE_EQ(*orr.tv, 1.0);  // disjoint cases per doctype
  EXPECT_TRUE(fs::exists(dir / "runs" / "regimes.csv"));
  // each case occurs in only one doctype, so none passes the min-count filter
  EXPECT_EQ(orr.regimes.filtered_out.size(), 2u);
  EXPECT_TRUE(orr.regimes.pp_dominant.empty());

  testutil::write_file(dir / "labels.csv", "case_id,ann1,ann2\n11,1,1\n10,0,0\n12,1,0\n13,0,1\n");
  cli::KappaArgs k;
  k.labels = dir / "labels.csv";
  k.out_dir = dir / "runs";
  k.format = cli::ReportFormat::Csv;
  auto kr = cli::cmd_kappa(k, log);
  EXPECT_DOUBLE_EQ(kr.mean_kappa, 0.0);
  EXPECT_EQ(read_json(dir / "runs" / "agreement.json")["format_version"], 1);
  EXPECT_TRUE(fs::exists(dir / "runs" / "consensus.csv"));
  for (auto name : {"predict.case", "evaluate.case", "overlap", "kappa"}) {
    EXPECT_TRUE(fs::exists(dir / "runs" / (std::string("manifest.") + name + ".json"))) << name;
  }
}

TEST(Overlap, OnlyOneDocTypeIsAnalysisFailure) {
  testutil::TempDir dir;
  testutil::write_file(dir / "p.csv", "example_id,gold,predicted,doctype\na,1,1,PrivacyPolicy\nb,2,2,PrivacyPolicy\n");
  cli::OverlapArgs o;
  o.predictions = dir / "p.csv";
  o.out_dir = dir / "out";
  std::ostringstream log;
  EXPECT_THROW(cli::cmd_overlap(o, log), cli::AnalysisFailure);
}

TEST(Determinism, RepeatedRunsProduceIdenticalArtifacts) {
  testutil::TempDir dir;
  write_raw_csv(dir / "raw.csv", small_corpus(12));
  std::ostringstream log;
  auto run = [&](const std::string& sub) {
    const auto out = dir / sub;
    cli::IngestArgs i;
    i.input = dir / "raw.csv";
    i.out_dir = out;
    cli::cmd_ingest(i, log);
    cli::SplitArgs s;
    s.input = out / "curated.jsonl";
    s.out_dir = out;
    s.threshold = 10;
    s.oversample_task = Task::Case;
    s.seed = 9;
    cli::cmd_split(s, log);
    cli::TrainArgs t;
    t.train = out / "train.jsonl";
    t.kind = ModelKind::RandomForest;
    t.config.forest.n_trees = 10;
    t.out_dir = out;
    t.seed = 9;
    cli::cmd_train(t, log);
    return out;
  };
  const auto a = run("a"), b = run("b");
  for (auto name : {"curated.jsonl", "ingest_report.json", "train.jsonl", "test.jsonl", "train_oversampled_case.jsonl",
                    "model_rf_case.json", "train_log_rf_case.json"}) {
    EXPECT_EQ(testutil::read_file(a / name), testutil::read_file(b / name)) << name;
  }
  for (auto cmd : {"ingest", "split", "train.rf_case"}) {
    auto ma = read_json(a / (std::string("manifest.") + cmd + ".json"));
    auto mb = read_json(b / (std::string("manifest.") + cmd + ".json"));
    for (auto* m : {&ma, &mb}) {
      m->erase("created_at");
      for (auto& f : (*m)["outputs"]) f.erase("path");
      for (auto& f : (*m)["inputs"]) f.erase("path");
      for (auto& [k, v] : (*m)["flags"].items()) {
        if (v.is_string() && v.get<std::string>().find(dir.path().string()) == 0) v = "";
      }
    }
    EXPECT_EQ(ma, mb) << cmd;
  }
}

TEST(Analyze, AllAbstainScoresZeroWithZeroBandGrade) {
  testutil::TempDir dir;
  auto vocab = synth::disjoint_vocabularies(2, 20);
  std::mt19937_64 gen(3);
  std::vector<LabeledRecord> records;
  for (int i = 0; i < 30; ++i) {
    records.push_back(synth::record(synth::sentence(vocab[0], gen), kAbstainCase, DocType::TermsOfService, "s"));
    records.push_back(synth::record(synth::sentence(vocab[1], gen), 7, DocType::PrivacyPolicy, "s"));
  }
  auto case_model = train_pipeline(records, Task::Case, Sampling::Normal, {});
  auto doctype_model = train_pipeline(records, Task::DocType, Sampling::Normal, {});
  std::string doc;
  for (int i = 0; i < 4; ++i) doc += synth::sentence(vocab[0], gen) + " ";
  auto scoring = ScoringConfig({{7, -1.0}}, ScoringConfig::make_default().grades());
  auto r = cli::analyze_text(doc, case_model, doctype_model, scoring);
  EXPECT_EQ(r.sentences.size(), 4u);
  EXPECT_EQ(r.abstained, 4u);
  EXPECT_TRUE(r.detected_cases.empty());
  EXPECT_EQ(r.score, 0.0);
  EXPECT_EQ(r.considered, 0u);
  EXPECT_EQ(r.grade, scoring.grade_for(0.0));
  EXPECT_EQ(r.grade, "C");
  EXPECT_EQ(r.doc_type, DocType::TermsOfService);
}

TEST(Analyze, SingleSentenceDocument) {
  testutil::TempDir dir;
  const auto& models = shared_models(dir);
  auto case_model = PipelineModel::load(models.case_model);
  auto doctype_model = PipelineModel::load(models.doctype_model);
  const auto text = small_corpus()[45].record.description;  // a PrivacyPolicy sentence, case 11
  auto r = cli::analyze_text(text, case_model, doctype_model, ScoringConfig::make_default());
  ASSERT_EQ(r.sentences.size(), 1u);
  EXPECT_EQ(r.sentences[0].case_id, 11);
  ASSERT_EQ(r.detected_cases.size(), 1u);
  EXPECT_EQ(r.detected_cases.begin()->first, 11);
  EXPECT_EQ(r.doc_type, DocType::PrivacyPolicy);
}

TEST(Analyze, ScoreInvariantToSentenceOrder) {
  testutil::TempDir dir;
  const auto& models = shared_models(dir);
  auto case_model = PipelineModel::load(models.case_model);
  auto doctype_model = PipelineModel::load(models.doctype_model);
  auto corpus = small_corpus();
  std::vector<std::string> sentences;
  for (std::size_t i = 0; i < corpus.size(); i += 9) sentences.push_back(corpus[i].record.description);
  ScoringConfig scoring({{10, 0.3}, {11, -0.7}, {12, 0.1}, {13, -0.2}, {14, 1.0}},
                        ScoringConfig::make_default().grades());
  auto join = [](const std::vector<std::string>& v) {
    std::string s;
    for (const auto& x : v) s += x + " ";
    return s;
  };
  const auto base = cli::analyze_text(join(sentences), case_model, doctype_model, scoring);
  std::mt19937 gen(1);
  for (int trial = 0; trial < 10; ++trial) {
    std::shuffle(sentences.begin(), sentences.end(), gen);
    auto r = cli::analyze_text(join(sentences), case_model, doctype_model, scoring);
    EXPECT_EQ(r.score, base.score);
    EXPECT_EQ(r.grade, base.grade);
    EXPECT_EQ(r.detected_cases, base.detected_cases);
  }
}

TEST(Analyze, NoSentencesIsAnalysisFailure) {
  testutil::TempDir dir;
  const auto& models = shared_models(dir);
  auto case_model = PipelineModel::load(models.case_model);
  auto doctype_model = PipelineModel::load(models.doctype_model);
  EXPECT_THROW(cli::analyze_text("<p>Hi.</p>", case_model, doctype_model, ScoringConfig::make_default()),
               cli::AnalysisFailure);
  EXPECT_THROW(cli::analyze_text("some text here", doctype_model, doctype_model, ScoringConfig::make_default()),
               cli::UsageError);
}

TEST(Analyze, CommandWritesJsonAndMarkdown) {
  testutil::TempDir dir;
  const auto& models = shared_models(dir);
  auto corpus = small_corpus();
  testutil::write_file(dir / "doc.html", "<h1>Policy</h1><p>" + corpus[0].record.description + " " +
                                             corpus[1].record.description + "</p>");
  cli::AnalyzeArgs a;
  a.document = dir / "doc.html";
  a.case_model = models.case_model;
  a.doctype_model = models.doctype_model;
  a.out_dir = dir / "runs";
  a.format = cli::ReportFormat::Markdown;
  std::ostringstream log;
  cli::cmd_analyze(a, log);
  auto j = read_json(dir / "runs" / "analysis.json");
  EXPECT_EQ(j["format_version"], 1);
  EXPECT_EQ(j["doctype"], "TermsOfService");
  EXPECT_EQ(j["document_sha256"], policyscope::detail::sha256_hex(testutil::read_file(dir / "doc.html")));
  EXPECT_TRUE(fs::exists(dir / "runs" / "analysis.md"));
  EXPECT_TRUE(fs::exists(dir / "runs" / "manifest.analyze.json"));
}

TEST(Binary, ExitCodes) {
  testutil::TempDir dir;
  EXPECT_EQ(run_cli("--version"), 0);
  EXPECT_EQ(run_cli("--help"), 0);
  EXPECT_EQ(run_cli(""), 2);
  EXPECT_EQ(run_cli("frobnicate"), 2);
  EXPECT_EQ(run_cli("train"), 2);  // --train is required
  EXPECT_EQ(run_cli("train --train x.jsonl --model nope"), 2);

  write_raw_csv(dir / "raw.csv", small_corpus(2));
  std::string err;
  EXPECT_EQ(run_cli("ingest --input " + (dir / "raw.csv").string() + " --taxonomy " + (dir / "missing_tax.json").string() +
                        " --out " + (dir / "o").string(),
                    &err, dir / "err.txt"),
            2);
  EXPECT_NE(err.find("missing_tax.json"), std::string::npos) << err;

  EXPECT_EQ(run_cli("ingest --input " + (dir / "raw.csv").string() + " --out " + (dir / "o").string()), 0);
  EXPECT_TRUE(fs::exists(dir / "o" / "curated.jsonl"));

  testutil::write_file(dir / "p.csv", "example_id,gold,predicted,doctype\na,1,1,PrivacyPolicy\n");
  EXPECT_EQ(run_cli("overlap --predictions " + (dir / "p.csv").string() + " --out " + (dir / "o").string()), 1);
  EXPECT_EQ(run_cli("evaluate --predictions " + (dir / "nope.csv").string()), 2);
}

TEST(Binary, ConfigFileSuppliesDefaults) {
  testutil::TempDir dir;
  testutil::write_file(dir / "labels.csv", "case_id,ann1,ann2\n1,1,1\n2,0,0\n3,1,0\n");
  testutil::write_file(dir / "run.toml", "[kappa]\nformat = \"md\"\nseed = 5\n");
  ASSERT_EQ(run_cli("--config " + (dir / "run.toml").string() + " kappa --labels " + (dir / "labels.csv").string() +
                    " --out " + (dir / "o").string()),
            0);
  EXPECT_TRUE(fs::exists(dir / "o" / "agreement.md"));
  EXPECT_EQ(read_json(dir / "o" / "manifest.kappa.json")["seed"], 5);
}

TEST(DataFiles, ShippedDefaultsMatchBuiltIns) {
  const fs::path data = POLICYSCOPE_DATA_DIR;
  EXPECT_EQ(CaseTaxonomy::load(data / "taxonomy.json").to_json(), CaseTaxonomy::make_default().to_json());
  EXPECT_EQ(MappingRuleset::load(data / "mapping.json").to_json(), MappingRuleset::make_default().to_json());
  EXPECT_EQ(ScoringConfig::load(data / "scoring.json").to_json(), ScoringConfig::make_default().to_json());
}
