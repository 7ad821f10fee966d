#pragma once

// Random forest of Gini-impurity decision trees over sparse feature vectors.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "policyscope/detail/random.hpp"
#include "policyscope/detail/training.hpp"
#include "policyscope/error.hpp"
#include "policyscope/svm.hpp"
#include "policyscope/textproc.hpp"

namespace policyscope {

enum class FeatureSubset { Sqrt, Log2, Fraction };

struct ForestConfig {
  int n_trees = 200;
  int max_depth = 0;  // 0 = unlimited
  int min_samples_leaf = 1;
  FeatureSubset features_per_split = FeatureSubset::Sqrt;
  double feature_fraction = 1.0;  // used with FeatureSubset::Fraction
  std::uint64_t seed = 0;

  friend bool operator==(const ForestConfig&, const ForestConfig&) = default;
};

inline std::string features_per_split_name(const ForestConfig& c) {
  switch (c.features_per_split) {
    case FeatureSubset::Sqrt: return "sqrt";
    case FeatureSubset::Log2: return "log2";
    case FeatureSubset::Fraction: return nlohmann::json(c.feature_fraction).dump();
  }
  return "sqrt";
}

/// "sqrt", "log2", or a fraction in (0, 1].
inline void parse_features_per_split(const std::string& text, ForestConfig& c) {
  if (text == "sqrt") {
    c.features_per_split = FeatureSubset::Sqrt;
  } else if (text == "log2") {
    c.features_per_split = FeatureSubset::Log2;
  } else {
    double f = 0.0;
    try {
      std::size_t used = 0;
      f = std::stod(text, &used);
      if (used != text.size()) f = 0.0;
    } catch (const std::exception&) {
      f = 0.0;
    }
    if (!(f > 0.0 && f <= 1.0)) {
      throw ValidationError("features_per_split must be sqrt, log2 or a fraction in (0, 1]: " + text);
    }
    c.features_per_split = FeatureSubset::Fraction;
    c.feature_fraction = f;
  }
}

inline std::size_t features_per_split_count(const ForestConfig& c, std::size_t dimension) {
  double k = 1.0;
  switch (c.features_per_split) {
    case FeatureSubset::Sqrt: k = std::floor(std::sqrt(static_cast<double>(dimension))); break;
    case FeatureSubset::Log2:
      k = dimension > 0 ? std::floor(std::log2(static_cast<double>(dimension))) : 1.0;
      break;
    case FeatureSubset::Fraction: k = std::floor(c.feature_fraction * static_cast<double>(dimension)); break;
  }
  return std::max<std::size_t>(1, static_cast<std::size_t>(k));
}

struct TreeNode {
  std::int32_t feature = -1;  // -1 marks a leaf
  double threshold = 0.0;     // x[feature] <= threshold goes left
  std::int32_t left = -1;
  std::int32_t right = -1;
  std::vector<std::pair<std::uint32_t, std::uint32_t>> histogram;  // (class index, count), leaves only

  bool is_leaf() const noexcept { return feature < 0; }
};

struct DecisionTree {
  std::vector<TreeNode> nodes;

  const TreeNode& leaf_for(const FeatureVector& x) const {
    std::size_t i = 0;
    while (!nodes[i].is_leaf()) {
      const auto& n = nodes[i];
      i = static_cast<std::size_t>(x.at(static_cast<std::uint32_t>(n.feature)) <= n.threshold ? n.left : n.right);
    }
    return nodes[i];
  }

  /// Majority class index of the leaf reached by x, ties to the lowest index.
  std::uint32_t vote(const FeatureVector& x) const {
    const auto& leaf = leaf_for(x);
    std::uint32_t best = leaf.histogram.front().first;
    std::uint32_t best_count = 0;
    for (auto [c, n] : leaf.histogram) {
      if (n > best_count || (n == best_count && c < best)) {
        best = c;
        best_count = n;
      }
    }
    return best;
  }
};

class RandomForestModel {
 public:
  RandomForestModel() = default;
  RandomForestModel(ForestConfig config, std::size_t dimension, std::vector<int> class_ids,
                    std::vector<DecisionTree> trees)
      : config_(config), dimension_(dimension), class_ids_(std::move(class_ids)), trees_(std::move(trees)) {
    if (class_ids_.empty()) throw ValidationError("random forest: no classes");
    if (trees_.size() != static_cast<std::size_t>(config_.n_trees)) {
      throw ValidationError("random forest: tree count differs from n_trees");
    }
    for (const auto& t : trees_) validate(t);
  }

  const ForestConfig& config() const noexcept { return config_; }
  std::size_t dimension() const noexcept { return dimension_; }
  const std::vector<int>& class_ids() const noexcept { return class_ids_; }
  const std::vector<DecisionTree>& trees() const noexcept { return trees_; }

  /// Plurality vote; scores are vote fractions aligned with class_ids.
  Prediction predict(const FeatureVector& x) const {
    if (x.dimension != dimension_) throw DimensionError(dimension_, x.dimension);
    std::vector<std::uint32_t> votes(class_ids_.size(), 0);
    for (const auto& t : trees_) ++votes[t.vote(x)];
    Prediction p;
    p.scores.resize(votes.size());
    std::size_t best = 0;
    for (std::size_t k = 0; k < votes.size(); ++k) {
      p.scores[k] = static_cast<double>(votes[k]) / static_cast<double>(trees_.size());
      if (votes[k] > votes[best]) best = k;
    }
    p.label = class_ids_[best];
    return p;
  }

  nlohmann::json to_json() const {
    nlohmann::json trees = nlohmann::json::array();
    for (const auto& t : trees_) {
      nlohmann::json nodes = nlohmann::json::array();
      for (const auto& n : t.nodes) {
        if (n.is_leaf()) {
          nlohmann::json h = nlohmann::json::array();
          for (auto [c, k] : n.histogram) h.push_back({c, k});
          nodes.push_back({{"h", std::move(h)}});
        } else {
          nodes.push_back({{"f", n.feature}, {"t", n.threshold}, {"l", n.left}, {"r", n.right}});
        }
      }
      trees.push_back(std::move(nodes));
    }
    return {{"format", "policyscope.random_forest"},
            {"format_version", 1},
            {"config",
             {{"n_trees", config_.n_trees},
              {"max_depth", config_.max_depth},
              {"min_samples_leaf", config_.min_samples_leaf},
              {"features_per_split", features_per_split_name(config_)},
              {"seed", config_.seed}}},
            {"dimension", dimension_},
            {"class_ids", class_ids_},
            {"trees", std::move(trees)}};
  }

  static RandomForestModel from_json(const nlohmann::json& j) {
    try {
      if (!j.is_object() || j.value("format", "") != "policyscope.random_forest") {
        throw ModelFormatError("not a random forest model file");
      }
      if (j.at("format_version") != 1) {
        throw ModelFormatError("unsupported random forest format_version " + j.at("format_version").dump());
      }
      const auto& c = j.at("config");
      ForestConfig config;
      config.n_trees = c.at("n_trees").get<int>();
      config.max_depth = c.at("max_depth").get<int>();
      config.min_samples_leaf = c.at("min_samples_leaf").get<int>();
      parse_features_per_split(c.at("features_per_split").get<std::string>(), config);
      config.seed = c.at("seed").get<std::uint64_t>();
      std::vector<DecisionTree> trees;
      for (const auto& tj : j.at("trees")) {
        DecisionTree t;
        for (const auto& nj : tj) {
          TreeNode n;
          if (nj.contains("h")) {
            for (const auto& e : nj.at("h")) {
              n.histogram.emplace_back(e.at(0).get<std::uint32_t>(), e.at(1).get<std::uint32_t>());
            }
          } else {
            n.feature = nj.at("f").get<std::int32_t>();
            n.threshold = nj.at("t").get<double>();
            n.left = nj.at("l").get<std::int32_t>();
            n.right = nj.at("r").get<std::int32_t>();
          }
          t.nodes.push_back(std::move(n));
        }
        trees.push_back(std::move(t));
      }
      return RandomForestModel(config, j.at("dimension").get<std::size_t>(),
                               j.at("class_ids").get<std::vector<int>>(), std::move(trees));
    } catch (const nlohmann::json::exception& e) {
      throw ModelFormatError(std::string("corrupted random forest model: ") + e.what());
    } catch (const ValidationError& e) {
      throw ModelFormatError(std::string("corrupted random forest model: ") + e.what());
    }
  }

 private:
  void validate(const DecisionTree& t) const {
    if (t.nodes.empty()) throw ValidationError("random forest: empty tree");
    const auto n = static_cast<std::int32_t>(t.nodes.size());
    for (const auto& node : t.nodes) {
      if (node.is_leaf()) {
        std::uint64_t total = 0;
        for (auto [c, k] : node.histogram) {
          if (c >= class_ids_.size()) throw ValidationError("random forest: leaf class out of range");
          total += k;
        }
        if (total == 0) throw ValidationError("random forest: empty leaf histogram");
      } else if (node.left <= 0 || node.right <= 0 || node.left >= n || node.right >= n ||
                 static_cast<std::size_t>(node.feature) >= dimension_) {
        throw ValidationError("random forest: internal node with missing child");
      }
    }
  }

  ForestConfig config_;
  std::size_t dimension_ = 0;
  std::vector<int> class_ids_;
  std::vector<DecisionTree> trees_;
};

namespace detail {

struct SplitCandidate {
  double score = -1.0;  // sum over children of (sum of squared class counts) / size
  std::uint32_t feature = 0;
  double threshold = 0.0;
};

class TreeBuilder {
 public:
  TreeBuilder(std::span<const LabeledVector> data, std::span<const std::uint32_t> class_of,
              std::size_t n_classes, const ForestConfig& config, std::uint64_t seed)
      : data_(data),
        class_of_(class_of),
        n_classes_(n_classes),
        config_(config),
        k_features_(features_per_split_count(config, data.front().features.dimension)),
        rng_(seed) {}

  DecisionTree build(std::vector<std::uint32_t> samples) {
    struct Work {
      std::int32_t node;
      std::vector<std::uint32_t> samples;
      int depth;
    };
    DecisionTree tree;
    tree.nodes.emplace_back();
    std::vector<Work> stack;
    stack.push_back({0, std::move(samples), 0});
    while (!stack.empty()) {
      Work w = std::move(stack.back());
      stack.pop_back();
      std::vector<std::uint32_t> counts(n_classes_, 0);
      for (auto s : w.samples) ++counts[class_of_[s]];
      const auto n = w.samples.size();
      const std::size_t distinct = static_cast<std::size_t>(
          std::count_if(counts.begin(), counts.end(), [](std::uint32_t c) { return c > 0; }));
      const auto min_leaf = static_cast<std::size_t>(std::max(1, config_.min_samples_leaf));
      std::optional<SplitCandidate> split;
      if (distinct > 1 && (config_.max_depth <= 0 || w.depth < config_.max_depth) && n >= 2 * min_leaf) {
        split = best_split(w.samples, counts, min_leaf);
      }
      auto& node = tree.nodes[static_cast<std::size_t>(w.node)];
      if (!split) {
        for (std::uint32_t c = 0; c < n_classes_; ++c) {
          if (counts[c]) node.histogram.emplace_back(c, counts[c]);
        }
        continue;
      }
      std::vector<std::uint32_t> left, right;
      for (auto s : w.samples) {
        (data_[s].features.at(split->feature) <= split->threshold ? left : right).push_back(s);
      }
      const auto left_id = static_cast<std::int32_t>(tree.nodes.size());
      node.feature = static_cast<std::int32_t>(split->feature);
      node.threshold = split->threshold;
      node.left = left_id;
      node.right = left_id + 1;
      tree.nodes.emplace_back();
      tree.nodes.emplace_back();
      stack.push_back({left_id + 1, std::move(right), w.depth + 1});
      stack.push_back({left_id, std::move(left), w.depth + 1});
    }
    return tree;
  }

 private:
  struct Cell {
    std::uint32_t feature;
    std::uint32_t pos;
    double value;
  };

  // Candidate features are those with a non-zero value somewhere in the node
  // (all others are constant zero). They are visited in random order until
  // k_features_ non-constant ones have been evaluated.
  std::optional<SplitCandidate> best_split(const std::vector<std::uint32_t>& samples,
                                           const std::vector<std::uint32_t>& counts,
                                           std::size_t min_leaf) {
    std::vector<Cell> cells;
    for (std::uint32_t p = 0; p < samples.size(); ++p) {
      for (const auto& e : data_[samples[p]].features.entries) {
        if (e.weight != 0.0) cells.push_back({e.index, p, e.weight});
      }
    }
    std::stable_sort(cells.begin(), cells.end(),
                     [](const Cell& a, const Cell& b) { return a.feature < b.feature; });
    std::vector<std::pair<std::size_t, std::size_t>> groups;  // [begin, end) in cells
    for (std::size_t i = 0; i < cells.size();) {
      std::size_t j = i;
      while (j < cells.size() && cells[j].feature == cells[i].feature) ++j;
      groups.emplace_back(i, j);
      i = j;
    }
    rng_.shuffle(std::span(groups));

    std::optional<SplitCandidate> best;
    std::size_t evaluated = 0;
    for (auto [b, e] : groups) {
      if (evaluated >= k_features_) break;
      auto cand = evaluate_feature(std::span(cells).subspan(b, e - b), samples, counts, min_leaf);
      if (!cand.has_value()) continue;  // constant at this node
      ++evaluated;
      if (cand->score >= 0.0 && (!best || cand->score > best->score)) best = cand;
    }
    return best;
  }

  // Returns nullopt when the feature is constant over the node; a candidate
  // with score < 0 when no threshold respects min_leaf.
  std::optional<SplitCandidate> evaluate_feature(std::span<const Cell> cells,
                                                 const std::vector<std::uint32_t>& samples,
                                                 const std::vector<std::uint32_t>& counts,
                                                 std::size_t min_leaf) const {
    const std::size_t n = samples.size();
    const std::size_t m = cells.size();
    std::vector<std::pair<double, std::uint32_t>> nz;  // (value, class)
    nz.reserve(m);
    for (const auto& c : cells) nz.emplace_back(c.value, class_of_[samples[c.pos]]);
    std::sort(nz.begin(), nz.end());
    if (m == n && nz.front().first == nz.back().first) return std::nullopt;

    std::vector<std::uint32_t> zero_counts = counts;
    for (const auto& [v, c] : nz) --zero_counts[c];
    const std::size_t n_zero = n - m;

    std::vector<std::uint32_t> left(n_classes_, 0), right = counts;
    double left_sq = 0.0, right_sq = 0.0;
    for (auto c : counts) right_sq += static_cast<double>(c) * c;
    std::size_t nl = 0;

    SplitCandidate best;
    best.feature = cells.front().feature;
    auto consider = [&](double lo, double hi) {
      const std::size_t nr = n - nl;
      if (nl < min_leaf || nr < min_leaf) return;
      const double score = left_sq / static_cast<double>(nl) + right_sq / static_cast<double>(nr);
      if (score > best.score) {
        best.score = score;
        double t = lo + (hi - lo) / 2.0;
        if (!(t < hi)) t = lo;
        best.threshold = t;
      }
    };
    auto move_one = [&](std::uint32_t c, std::uint32_t k) {
      const double l = left[c], r = right[c];
      left_sq += (l + k) * (l + k) - l * l;
      right_sq += (r - k) * (r - k) - r * r;
      left[c] += k;
      right[c] -= k;
      nl += k;
    };

    // Walk values in ascending order with the zero block inserted in place.
    std::size_t i = 0;
    bool zero_done = n_zero == 0;
    auto next_value = [&]() -> std::optional<double> {
      if (!zero_done && (i == m || nz[i].first > 0.0)) return 0.0;
      if (i < m) return nz[i].first;
      return std::nullopt;
    };
    while (auto v = next_value()) {
      if (!zero_done && *v == 0.0 && (i == m || nz[i].first > 0.0)) {
        for (std::uint32_t c = 0; c < n_classes_; ++c) {
          if (zero_counts[c]) move_one(c, zero_counts[c]);
        }
        zero_done = true;
      } else {
        const double value = *v;
        while (i < m && nz[i].first == value) move_one(nz[i++].second, 1);
      }
      if (auto nv = next_value()) consider(*v, *nv);
    }
    return best;
  }

  std::span<const LabeledVector> data_;
  std::span<const std::uint32_t> class_of_;
  std::size_t n_classes_;
  ForestConfig config_;
  std::size_t k_features_;
  Rng rng_;
};

}  // namespace detail

/// Each tree sees a bootstrap sample drawn with a seed derived from
/// (config.seed, tree index); results do not depend on options.threads.
inline RandomForestModel train_rf(std::span<const LabeledVector> data, const ForestConfig& config = {},
                                  const TrainOptions& options = {}) {
  if (data.empty()) throw ValidationError("train_rf: empty dataset");
  if (config.n_trees < 1) throw ValidationError("train_rf: n_trees must be >= 1");
  const std::size_t dim = data.front().features.dimension;
  std::set<int> labels;
  for (const auto& ex : data) {
    if (ex.features.dimension != dim) throw DimensionError(dim, ex.features.dimension);
    labels.insert(ex.label);
  }
  std::vector<int> class_ids(labels.begin(), labels.end());

  // Work on a canonically ordered copy so the caller's ordering is irrelevant.
  const auto order = detail::canonical_order(data);
  std::vector<LabeledVector> sorted;
  sorted.reserve(data.size());
  for (auto i : order) sorted.push_back(data[i]);
  std::vector<std::uint32_t> class_of(sorted.size());
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    class_of[i] = static_cast<std::uint32_t>(
        std::lower_bound(class_ids.begin(), class_ids.end(), sorted[i].label) - class_ids.begin());
  }

  std::vector<DecisionTree> trees(static_cast<std::size_t>(config.n_trees));
  detail::parallel_for(trees.size(), options.threads, [&](std::size_t t) {
    const std::uint64_t seed = detail::derive_seed(config.seed, t);
    detail::Rng bootstrap_rng(seed);
    std::vector<std::uint32_t> sample(sorted.size());
    for (auto& s : sample) s = static_cast<std::uint32_t>(bootstrap_rng.below(sorted.size()));
    detail::TreeBuilder builder(sorted, class_of, class_ids.size(), config,
                                detail::splitmix64(seed));
    trees[t] = builder.build(std::move(sample));
  });
  return RandomForestModel(config, dim, std::move(class_ids), std::move(trees));
}

inline Prediction predict_rf(const RandomForestModel& model, const FeatureVector& x) {
  return model.predict(x);
}

}  // namespace policyscope
