#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>
#include <sstream>

#include "policyscope/eval.hpp"

using namespace policyscope;

namespace {

ConfusionMatrix from_rows(const std::vector<std::vector<std::uint64_t>>& rows) {
  std::vector<int> labels(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) labels[i] = static_cast<int>(i);
  ConfusionMatrix m(labels);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows.size(); ++j) m.add(static_cast<int>(i), static_cast<int>(j), rows[i][j]);
  return m;
}

}  // namespace

TEST(Confusion, Tally) {
  std::vector<int> gold = {0, 0, 1}, pred = {0, 1, 1};
  auto m = confusion(gold, pred, {0, 1});
  EXPECT_EQ(m.at(0, 0), 1u);
  EXPECT_EQ(m.at(0, 1), 1u);
  EXPECT_EQ(m.at(1, 1), 1u);
  EXPECT_EQ(m.at(1, 0), 0u);
  auto empty = confusion(std::vector<int>{}, std::vector<int>{}, {0, 1, 2});
  EXPECT_EQ(empty.total(), 0u);
  EXPECT_THROW(metrics(empty), ValidationError);
  EXPECT_THROW(confusion(std::vector<int>{0}, std::vector<int>{}, {0}), ValidationError);
  EXPECT_THROW(confusion(std::vector<int>{0}, std::vector<int>{5}, {0, 1}), ValidationError);
}

TEST(Metrics, PerfectPredictions) {
  auto r = metrics(from_rows({{3, 0}, {0, 4}}));
  EXPECT_DOUBLE_EQ(r.accuracy, 1.0);
  EXPECT_DOUBLE_EQ(r.macro_f1, 1.0);
  EXPECT_DOUBLE_EQ(r.weighted_f1, 1.0);
}

TEST(Metrics, ThreeClassByHand) {
  auto r = metrics(from_rows({{5, 1, 0}, {2, 3, 0}, {0, 0, 4}}));
  const double p0 = 5.0 / 7.0, r0 = 5.0 / 6.0;
  EXPECT_NEAR(r.per_class[0].precision, p0, 1e-12);
  EXPECT_NEAR(r.per_class[0].recall, r0, 1e-12);
  EXPECT_NEAR(r.per_class[0].f1, 2 * p0 * r0 / (p0 + r0), 1e-12);
  EXPECT_NEAR(r.per_class[0].f1, 0.7692, 1e-4);
  EXPECT_NEAR(r.accuracy, 12.0 / 15.0, 1e-12);
  const double p1 = 3.0 / 4.0, r1 = 3.0 / 5.0, f1_1 = 2 * p1 * r1 / (p1 + r1);
  EXPECT_NEAR(r.weighted_f1, (6 * (2 * p0 * r0 / (p0 + r0)) + 5 * f1_1 + 4 * 1.0) / 15.0, 1e-12);
}

TEST(Metrics, ZeroSupportClass) {
  // class 2 is predicted once but never gold
  auto r = metrics(from_rows({{2, 0, 1}, {0, 2, 0}, {0, 0, 0}}));
  EXPECT_EQ(r.per_class[2].support, 0u);
  EXPECT_DOUBLE_EQ(r.per_class[2].precision, 0.0);
  EXPECT_DOUBLE_EQ(r.per_class[2].f1, 0.0);
  const double f0 = 2 * 1.0 * (2.0 / 3.0) / (1.0 + 2.0 / 3.0);
  EXPECT_NEAR(r.weighted_f1, (3 * f0 + 2 * 1.0) / 5.0, 1e-12);
  EXPECT_EQ(r.macro_classes, 3u);
  // a class absent from both gold and predictions stays out of the macro average
  auto s = metrics(from_rows({{2, 0, 0}, {0, 2, 0}, {0, 0, 0}}));
  EXPECT_EQ(s.macro_classes, 2u);
  EXPECT_DOUBLE_EQ(s.macro_f1, 1.0);
}

TEST(Metrics, LabelPermutationInvariance) {
  std::mt19937 gen(3);
  for (int trial = 0; trial < 100; ++trial) {
    const int k = 2 + static_cast<int>(gen() % 6);
    std::vector<int> gold, pred;
    for (int i = 0; i < 40; ++i) {
      gold.push_back(static_cast<int>(gen() % k));
      pred.push_back(static_cast<int>(gen() % k));
    }
    std::vector<int> space(k), perm(k);
    std::iota(space.begin(), space.end(), 0);
    perm = space;
    std::shuffle(perm.begin(), perm.end(), gen);
    std::vector<int> g2, p2;
    for (int x : gold) g2.push_back(perm[x]);
    for (int x : pred) p2.push_back(perm[x]);
    auto a = metrics(confusion(gold, pred, space));
    auto b = metrics(confusion(g2, p2, space));
    EXPECT_DOUBLE_EQ(a.accuracy, b.accuracy);
    EXPECT_NEAR(a.weighted_f1, b.weighted_f1, 1e-12);
    EXPECT_NEAR(a.macro_f1, b.macro_f1, 1e-12);
    for (int c = 0; c < k; ++c) EXPECT_DOUBLE_EQ(a.per_class[c].f1, b.per_class[perm[c]].f1);
  }
}

TEST(Metrics, EqualSupportsMakeWeightedEqualMacro) {
  auto r = metrics(from_rows({{3, 1, 1}, {0, 4, 1}, {2, 0, 3}}));
  EXPECT_NEAR(r.weighted_f1, r.macro_f1, 1e-12);
}

TEST(Pairwise, Examples) {
  auto identity = from_rows({{5, 0, 0}, {0, 3, 0}, {0, 0, 2}});
  EXPECT_DOUBLE_EQ(pairwise_accuracy(identity, 0, 2), 1.0);
  auto flat = from_rows({{4, 4}, {4, 4}});
  EXPECT_DOUBLE_EQ(pairwise_accuracy(flat, 0, 1), 0.5);
  auto hand = from_rows({{8, 2}, {3, 7}});
  EXPECT_DOUBLE_EQ(pairwise_accuracy(hand, 0, 1), 0.75);
  EXPECT_DOUBLE_EQ(pairwise_accuracy(hand, 1, 0), 0.75);
}

TEST(Pairwise, EmptyPairAndTable) {
  auto m = from_rows({{4, 0, 0}, {0, 0, 0}, {0, 0, 0}});
  EXPECT_THROW(pairwise_accuracy(m, 1, 2), ValidationError);
  auto table = pairwise_table(m);
  ASSERT_EQ(table.size(), 3u);
  EXPECT_TRUE(table[0].accuracy.has_value());
  EXPECT_FALSE(table[2].accuracy.has_value());
}

TEST(Pairwise, SymmetricOnRandomMatrices) {
  std::mt19937 gen(8);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::vector<std::uint64_t>> rows(4, std::vector<std::uint64_t>(4));
    for (auto& r : rows)
      for (auto& c : r) c = 1 + gen() % 9;
    auto m = from_rows(rows);
    for (int a = 0; a < 4; ++a)
      for (int b = a + 1; b < 4; ++b) EXPECT_DOUBLE_EQ(pairwise_accuracy(m, a, b), pairwise_accuracy(m, b, a));
  }
}

TEST(Reports, JsonMarkdownCsv) {
  auto m = from_rows({{5, 1}, {2, 3}});
  auto r = metrics(m);
  auto namer = label_namer(Task::DocType);
  auto j = to_json(r, namer);
  EXPECT_EQ(j["per_class"][0]["name"], "TermsOfService");
  EXPECT_EQ(j["total"], 11);
  auto md = to_markdown(r, namer);
  EXPECT_NE(md.find("| PrivacyPolicy |"), std::string::npos);
  std::ostringstream csv;
  write_confusion_csv(csv, m, namer);
  EXPECT_EQ(csv.str().substr(0, csv.str().find('\n')), "gold\\predicted,TermsOfService,PrivacyPolicy");
}

TEST(Predictions, ImportWellFormed) {
  std::istringstream in("example_id,gold,predicted,score\na,1,1,0.9\nb,2,245,\nc,0,0,0.1\n");
  auto set = import_predictions(in, Task::Case);
  ASSERT_EQ(set.entries.size(), 3u);
  EXPECT_EQ(set.entries[1].predicted, 245);
  EXPECT_FALSE(set.entries[1].score.has_value());
  EXPECT_DOUBLE_EQ(*set.entries[0].score, 0.9);
}

TEST(Predictions, OutOfRangeLabelNamesRow) {
  std::istringstream in("example_id,gold,predicted\na,1,1\nb,2,246\n");
  try {
    import_predictions(in, Task::Case);
    FAIL() << "expected ValidationError";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
  }
}

TEST(Predictions, DuplicateIdRejected) {
  std::istringstream in("example_id,gold,predicted\na,1,1\na,2,2\n");
  EXPECT_THROW(import_predictions(in, Task::Case), ValidationError);
}

TEST(Predictions, DocTypeNamesAndMissingColumn) {
  std::istringstream in("example_id,gold,predicted\nx,Privacy Policy,TermsOfService\n");
  auto set = import_predictions(in, Task::DocType);
  EXPECT_EQ(set.entries[0].gold, 1);
  EXPECT_EQ(set.entries[0].predicted, 0);
  std::istringstream bad("id,gold\nx,1\n");
  EXPECT_THROW(import_predictions(bad, Task::DocType), SchemaError);
}

TEST(Predictions, WriteThenImport) {
  PredictionSet set;
  set.task = Task::Case;
  set.entries = {{"e1", 3, 4, 0.5, DocType::PrivacyPolicy}, {"e,2", 245, 245, std::nullopt, std::nullopt}};
  std::stringstream io;
  write_predictions(io, set);
  auto back = import_predictions(io, Task::Case);
  ASSERT_EQ(back.entries.size(), 2u);
  EXPECT_EQ(back.entries[1].example_id, "e,2");
  EXPECT_EQ(back.entries[0].doc_type, DocType::PrivacyPolicy);
  EXPECT_FALSE(back.entries[1].doc_type.has_value());
}
