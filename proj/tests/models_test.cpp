#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "policyscope/models.hpp"
#include "test_util.hpp"

using namespace policyscope;

namespace {

FeatureVector dense(std::vector<double> xs) {
  FeatureVector v;
  v.dimension = xs.size();
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (xs[i] != 0.0) v.entries.push_back({static_cast<std::uint32_t>(i), xs[i]});
  }
  return v;
}

double dot(const std::vector<double>& w, const FeatureVector& x) {
  double s = 0.0;
  for (const auto& e : x.entries) s += w[e.index] * e.weight;
  return s;
}

// Classic perceptron with a bias; returns true once an epoch makes no mistake.
bool perceptron_separates(const std::vector<LabeledVector>& data, int positive, int max_epochs) {
  std::vector<double> w(data.front().features.dimension, 0.0);
  double b = 0.0;
  for (int epoch = 0; epoch < max_epochs; ++epoch) {
    bool clean = true;
    for (const auto& ex : data) {
      const double y = ex.label == positive ? 1.0 : -1.0;
      if (y * (dot(w, ex.features) + b) <= 0.0) {
        for (const auto& e : ex.features.entries) w[e.index] += y * e.weight;
        b += y;
        clean = false;
      }
    }
    if (clean) return true;
  }
  return false;
}

std::vector<LabeledVector> toy_separable() {
  // Two clusters either side of the line x + y = 1.
  const std::vector<std::pair<std::vector<double>, int>> pts = {
      {{0.1, 0.2}, 0}, {{0.3, 0.1}, 0}, {{0.2, 0.4}, 0}, {{0.0, 0.5}, 0}, {{0.4, 0.3}, 0},
      {{0.9, 0.8}, 1}, {{0.7, 0.9}, 1}, {{1.0, 0.6}, 1}, {{0.8, 0.7}, 1}, {{0.6, 1.0}, 1}};
  std::vector<LabeledVector> out;
  for (const auto& [x, y] : pts) out.push_back({dense(x), y});
  return out;
}

std::vector<LabeledVector> xor_points(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<LabeledVector> out;
  while (out.size() < n) {
    const double x = u(gen), y = u(gen);
    if (std::abs(x - 0.5) < 0.02 || std::abs(y - 0.5) < 0.02) continue;
    out.push_back({dense({x, y}), (x > 0.5) != (y > 0.5) ? 1 : 0});
  }
  return out;
}

// Best training accuracy of any single axis-aligned threshold split.
double best_stump_accuracy(const std::vector<LabeledVector>& data) {
  double best = 0.0;
  const std::size_t n = data.size();
  for (std::uint32_t f = 0; f < data.front().features.dimension; ++f) {
    std::vector<double> values;
    for (const auto& ex : data) values.push_back(ex.features.at(f));
    std::sort(values.begin(), values.end());
    values.push_back(values.back() + 1.0);
    for (double t : values) {
      for (int left_label = 0; left_label < 2; ++left_label) {
        for (int right_label = 0; right_label < 2; ++right_label) {
          std::size_t ok = 0;
          for (const auto& ex : data) ok += (ex.features.at(f) < t ? left_label : right_label) == ex.label;
          best = std::max(best, static_cast<double>(ok) / static_cast<double>(n));
        }
      }
    }
  }
  return best;
}

std::vector<LabeledVector> random_sparse(std::size_t n, std::size_t dim, int classes, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::vector<LabeledVector> out;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> x(dim, 0.0);
    for (auto& v : x) v = gen() % 3 == 0 ? static_cast<double>(gen() % 100) / 100.0 : 0.0;
    out.push_back({dense(x), static_cast<int>(gen() % static_cast<std::uint64_t>(classes))});
  }
  return out;
}

}  // namespace

TEST(Svm, SeparableToySetReachesFullTrainingAccuracy) {
  const auto data = toy_separable();
  ASSERT_TRUE(perceptron_separates(data, 1, 1000)) << "fixture must be linearly separable";
  SvmConfig c;
  c.epochs = 20;
  c.lambda = 0.01;
  auto m = train_svm(data, c);
  for (const auto& ex : data) EXPECT_EQ(predict_svm(m, ex.features).label, ex.label);
}

TEST(Svm, SingleClassAllowed) {
  std::vector<LabeledVector> data = {{dense({1, 0}), 4}, {dense({0, 1}), 4}};
  EXPECT_THROW(train_svm(data), ValidationError);
  SvmConfig c;
  c.allow_single_class = true;
  auto m = train_svm(data, c);
  EXPECT_EQ(m.predict(dense({0.3, 0.9})).label, 4);
  EXPECT_EQ(m.predict(dense({0, 0})).label, 4);
}

TEST(Svm, DecisionRule) {
  LinearSvmModel m({}, 1, {0, 1}, {{0.0}, {0.0}}, {0.9, -0.2});
  auto p = m.predict(dense({0.0}));
  EXPECT_EQ(p.label, 0);
  EXPECT_DOUBLE_EQ(p.scores[0], 0.9);
  LinearSvmModel tie({}, 1, {3, 7}, {{1.0}, {1.0}}, {0.5, 0.5});
  EXPECT_EQ(tie.predict(dense({2.0})).label, 3);
  LinearSvmModel biased({}, 2, {1, 2, 5}, {{1, 0}, {0, 1}, {5, 5}}, {0.1, 0.7, 0.3});
  EXPECT_EQ(biased.predict(dense({0, 0})).label, 2);
  EXPECT_THROW(biased.predict(dense({0, 0, 0})), DimensionError);
}

TEST(Svm, DeterministicAndOrderInvariant) {
  auto data = random_sparse(120, 8, 3, 3);
  SvmConfig c;
  c.seed = 17;
  const auto a = train_svm(data, c).to_json();
  EXPECT_EQ(a, train_svm(data, c).to_json());
  std::shuffle(data.begin(), data.end(), std::mt19937(1));
  EXPECT_EQ(a, train_svm(data, c).to_json());
  EXPECT_EQ(a, train_svm(data, c, TrainOptions{4}).to_json());
  c.seed = 18;
  EXPECT_NE(a, train_svm(data, c).to_json());
}

TEST(Svm, ObjectiveLoggedPerEpoch) {
  auto data = toy_separable();
  SvmConfig c;
  c.epochs = 15;
  c.lambda = 0.01;
  SvmTrainLog log;
  train_svm(data, c, {}, &log);
  ASSERT_EQ(log.objective.size(), 2u);  // one-vs-rest: one problem per label
  for (const auto& per_class : log.objective) {
    EXPECT_EQ(per_class.size(), 15u);
    for (double v : per_class) EXPECT_TRUE(std::isfinite(v));
  }
}

// Non-increasing objective, checked on the averaged per-epoch values.
TEST(Svm, ObjectiveNonIncreasingOverEpochs) {
  auto data = random_sparse(200, 10, 2, 9);
  SvmConfig c;
  c.epochs = 12;
  c.lambda = 0.05;
  SvmTrainLog log;
  train_svm(data, c, {}, &log);
  for (const auto& cls : log.objective) {
    for (std::size_t e = 1; e < cls.size(); ++e) EXPECT_LE(cls[e], cls[e - 1] + 1e-6) << "epoch " << e;
  }
}

TEST(Svm, PredictionIsPure) {
  auto data = random_sparse(60, 5, 3, 4);
  auto m = train_svm(data);
  for (const auto& ex : data) {
    auto a = m.predict(ex.features), b = m.predict(ex.features);
    EXPECT_EQ(a.label, b.label);
    EXPECT_EQ(a.scores, b.scores);
  }
}

TEST(Forest, SingleLabelNodeIsLeaf) {
  std::vector<LabeledVector> data = {{dense({1, 0}), 2}, {dense({0, 1}), 2}, {dense({1, 1}), 2}};
  ForestConfig c;
  c.n_trees = 3;
  auto m = train_rf(data, c);
  for (const auto& t : m.trees()) EXPECT_EQ(t.nodes.size(), 1u);
  auto p = m.predict(dense({0.5, 0.5}));
  EXPECT_EQ(p.label, 2);
  EXPECT_DOUBLE_EQ(p.scores[0], 1.0);
}

TEST(Forest, XorBeatsEveryStump) {
  const auto train = xor_points(200, 1);
  const auto test = xor_points(200, 2);
  const double ceiling = best_stump_accuracy(train);
  EXPECT_LE(ceiling, 0.6);
  ForestConfig c;
  c.n_trees = 50;
  c.seed = 3;
  auto m = train_rf(train, c);
  std::size_t ok = 0;
  for (const auto& ex : test) ok += m.predict(ex.features).label == ex.label;
  EXPECT_GT(static_cast<double>(ok) / static_cast<double>(test.size()), 0.9);
}

TEST(Forest, VotesAndTies) {
  auto leaf = [](std::uint32_t cls) {
    DecisionTree t;
    TreeNode n;
    n.histogram = {{cls, 1}};
    t.nodes.push_back(n);
    return t;
  };
  ForestConfig c;
  c.n_trees = 6;
  std::vector<DecisionTree> trees = {leaf(1), leaf(0), leaf(1), leaf(0), leaf(1), leaf(0)};
  RandomForestModel tied(c, 1, {4, 9}, trees);
  auto p = tied.predict(dense({0.0}));
  EXPECT_EQ(p.label, 4);
  EXPECT_DOUBLE_EQ(p.scores[0] + p.scores[1], 1.0);
  RandomForestModel all(c, 1, {0, 1, 2}, std::vector<DecisionTree>(6, leaf(2)));
  p = all.predict(dense({0.0}));
  EXPECT_EQ(p.label, 2);
  EXPECT_DOUBLE_EQ(p.scores[2], 1.0);
}

TEST(Forest, DeterministicAcrossThreadsAndOrder) {
  auto data = random_sparse(150, 12, 4, 5);
  ForestConfig c;
  c.n_trees = 20;
  c.seed = 8;
  const auto a = train_rf(data, c).to_json();
  EXPECT_EQ(a, train_rf(data, c, TrainOptions{3}).to_json());
  std::reverse(data.begin(), data.end());
  EXPECT_EQ(a, train_rf(data, c, TrainOptions{0}).to_json());
}

TEST(Forest, TrainingAccuracyAtLeastPluralityBaseline) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto data = random_sparse(80, 6, 3, seed);
    ForestConfig c;
    c.n_trees = 15;
    c.seed = seed;
    auto m = train_rf(data, c);
    std::map<int, std::size_t> counts;
    std::size_t ok = 0;
    for (const auto& ex : data) {
      ++counts[ex.label];
      ok += m.predict(ex.features).label == ex.label;
    }
    std::size_t plurality = 0;
    for (auto [l, n] : counts) plurality = std::max(plurality, n);
    EXPECT_GE(ok, plurality) << "seed " << seed;
  }
}

TEST(Forest, FeaturesPerSplit) {
  ForestConfig c;
  EXPECT_EQ(features_per_split_count(c, 100), 10u);
  parse_features_per_split("log2", c);
  EXPECT_EQ(features_per_split_count(c, 1024), 10u);
  parse_features_per_split("0.25", c);
  EXPECT_EQ(features_per_split_count(c, 100), 25u);
  EXPECT_THROW(parse_features_per_split("1.5", c), ValidationError);
  EXPECT_THROW(parse_features_per_split("half", c), ValidationError);
}

TEST(Persistence, RoundTripPreservesScores) {
  testutil::TempDir dir;
  auto data = random_sparse(100, 10, 3, 6);
  ForestConfig fc;
  fc.n_trees = 10;
  Classifier svm = train_svm(data);
  Classifier rf = train_rf(data, fc);
  save_model(svm, dir / "svm.json");
  save_model(rf, dir / "rf.json");
  auto svm2 = load_model(dir / "svm.json");
  auto rf2 = load_model(dir / "rf.json");
  EXPECT_TRUE(std::holds_alternative<LinearSvmModel>(svm2));
  EXPECT_TRUE(std::holds_alternative<RandomForestModel>(rf2));
  for (const auto& ex : data) {
    EXPECT_EQ(predict(svm, ex.features).scores, predict(svm2, ex.features).scores);
    EXPECT_EQ(predict(rf, ex.features).label, predict(rf2, ex.features).label);
  }
}

TEST(Persistence, BadFilesRejected) {
  testutil::TempDir dir;
  testutil::write_file(dir / "magic.json", R"({"format":"other.model","format_version":1})");
  EXPECT_THROW(load_model(dir / "magic.json"), ModelFormatError);
  testutil::write_file(dir / "truncated.json", R"({"format":"policyscope.linear_svm","format_ver)");
  EXPECT_THROW(load_model(dir / "truncated.json"), ModelFormatError);
  testutil::write_file(dir / "version.json", R"({"format":"policyscope.linear_svm","format_version":99})");
  EXPECT_THROW(load_model(dir / "version.json"), ModelFormatError);
}
