#pragma once

// One-vs-rest linear SVM trained with Pegasos-style SGD on the regularized
// hinge loss.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "policyscope/detail/random.hpp"
#include "policyscope/detail/training.hpp"
#include "policyscope/error.hpp"
#include "policyscope/textproc.hpp"

namespace policyscope {

struct SvmConfig {
  int epochs = 10;
  double lambda = 1e-4;
  std::uint64_t seed = 0;
  bool allow_single_class = false;

  friend bool operator==(const SvmConfig&, const SvmConfig&) = default;
};

struct Prediction {
  int label = 0;
  std::vector<double> scores;  // per class, aligned with the model's class_ids
};

class LinearSvmModel {
 public:
  LinearSvmModel() = default;
  LinearSvmModel(SvmConfig config, std::size_t dimension, std::vector<int> class_ids,
                 std::vector<std::vector<double>> weights, std::vector<double> bias)
      : config_(config),
        dimension_(dimension),
        class_ids_(std::move(class_ids)),
        weights_(std::move(weights)),
        bias_(std::move(bias)) {
    if (class_ids_.empty()) throw ValidationError("linear SVM: no classes");
    if (weights_.size() != class_ids_.size() || bias_.size() != class_ids_.size()) {
      throw ValidationError("linear SVM: one (weights, bias) pair per class required");
    }
    for (const auto& w : weights_) {
      if (w.size() != dimension_) throw DimensionError(dimension_, w.size());
    }
    if (!std::is_sorted(class_ids_.begin(), class_ids_.end()) ||
        std::adjacent_find(class_ids_.begin(), class_ids_.end()) != class_ids_.end()) {
      throw ValidationError("linear SVM: class ids must be unique and ascending");
    }
  }

  const SvmConfig& config() const noexcept { return config_; }
  std::size_t dimension() const noexcept { return dimension_; }
  const std::vector<int>& class_ids() const noexcept { return class_ids_; }
  const std::vector<std::vector<double>>& weights() const noexcept { return weights_; }
  const std::vector<double>& bias() const noexcept { return bias_; }

  /// argmax of w·x + b; ties go to the lowest class id.
  Prediction predict(const FeatureVector& x) const {
    if (x.dimension != dimension_) throw DimensionError(dimension_, x.dimension);
    Prediction p;
    p.scores.resize(class_ids_.size());
    std::size_t best = 0;
    for (std::size_t k = 0; k < class_ids_.size(); ++k) {
      double s = bias_[k];
      const auto& w = weights_[k];
      for (const auto& e : x.entries) s += w[e.index] * e.weight;
      p.scores[k] = s;
      if (s > p.scores[best]) best = k;
    }
    p.label = class_ids_[best];
    return p;
  }

  nlohmann::json to_json() const {
    return {{"format", "policyscope.linear_svm"},
            {"format_version", 1},
            {"config",
             {{"epochs", config_.epochs},
              {"lambda", config_.lambda},
              {"seed", config_.seed},
              {"allow_single_class", config_.allow_single_class}}},
            {"dimension", dimension_},
            {"class_ids", class_ids_},
            {"bias", bias_},
            {"weights", weights_}};
  }

  static LinearSvmModel from_json(const nlohmann::json& j) {
    try {
      if (!j.is_object() || j.value("format", "") != "policyscope.linear_svm") {
        throw ModelFormatError("not a linear SVM model file");
      }
      if (j.at("format_version") != 1) {
        throw ModelFormatError("unsupported linear SVM format_version " + j.at("format_version").dump());
      }
      const auto& c = j.at("config");
      SvmConfig config{c.at("epochs").get<int>(), c.at("lambda").get<double>(),
                       c.at("seed").get<std::uint64_t>(), c.at("allow_single_class").get<bool>()};
      return LinearSvmModel(config, j.at("dimension").get<std::size_t>(),
                            j.at("class_ids").get<std::vector<int>>(),
                            j.at("weights").get<std::vector<std::vector<double>>>(),
                            j.at("bias").get<std::vector<double>>());
    } catch (const nlohmann::json::exception& e) {
      throw ModelFormatError(std::string("corrupted linear SVM model: ") + e.what());
    } catch (const ValidationError& e) {
      throw ModelFormatError(std::string("corrupted linear SVM model: ") + e.what());
    }
  }

 private:
  SvmConfig config_;
  std::size_t dimension_ = 0;
  std::vector<int> class_ids_;
  std::vector<std::vector<double>> weights_;
  std::vector<double> bias_;
};

/// Regularized hinge objective per epoch, one row per class.
struct SvmTrainLog {
  std::vector<std::vector<double>> objective;
};

namespace detail {

struct BinarySvm {
  std::vector<double> weights;
  double bias = 0.0;
  std::vector<double> objective;
};

inline double sparse_dot(const std::vector<double>& w, const FeatureVector& x) {
  double s = 0.0;
  for (const auto& e : x.entries) s += w[e.index] * e.weight;
  return s;
}

// The bias is the weight of a constant feature with value 1 and is
// regularized with the rest of the weights. w is held as scale * v so the
// per-step shrinkage is O(1).
inline BinarySvm train_binary_svm(std::span<const LabeledVector> data,
                                  const std::vector<std::size_t>& canonical, int positive,
                                  const SvmConfig& config, std::uint64_t seed) {
  const std::size_t dim = data.front().features.dimension;
  std::vector<double> v(dim, 0.0);
  double vb = 0.0;
  double scale = 1.0;
  std::uint64_t t = 0;
  Rng rng(seed);
  std::vector<std::size_t> order = canonical;
  BinarySvm out;
  auto rescale = [&] {
    for (auto& x : v) x *= scale;
    vb *= scale;
    scale = 1.0;
  };
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(std::span<std::size_t>(order));
    for (std::size_t i : order) {
      const auto& ex = data[i];
      const double y = ex.label == positive ? 1.0 : -1.0;
      ++t;
      const double eta = 1.0 / (config.lambda * static_cast<double>(t));
      const double margin = y * scale * (sparse_dot(v, ex.features) + vb);
      if (t == 1) {
        std::fill(v.begin(), v.end(), 0.0);
        vb = 0.0;
        scale = 1.0;
      } else {
        scale *= 1.0 - 1.0 / static_cast<double>(t);
      }
      if (margin < 1.0) {
        const double step = eta * y / scale;
        for (const auto& e : ex.features.entries) v[e.index] += step * e.weight;
        vb += step;
      }
      if (scale < 1e-9) rescale();
    }
    double sq = vb * vb;
    for (double x : v) sq += x * x;
    double hinge = 0.0;
    for (const auto& ex : data) {
      const double y = ex.label == positive ? 1.0 : -1.0;
      hinge += std::max(0.0, 1.0 - y * scale * (sparse_dot(v, ex.features) + vb));
    }
    out.objective.push_back(0.5 * config.lambda * scale * scale * sq +
                            hinge / static_cast<double>(data.size()));
  }
  rescale();
  out.weights = std::move(v);
  out.bias = vb;
  return out;
}

}  // namespace detail

/// Trains one binary classifier per distinct label. Class k shuffles with a
/// seed derived from (config.seed, k), so results do not depend on
/// options.threads.
inline LinearSvmModel train_svm(std::span<const LabeledVector> data, const SvmConfig& config = {},
                                const TrainOptions& options = {}, SvmTrainLog* log = nullptr) {
  if (data.empty()) throw ValidationError("train_svm: empty dataset");
  if (config.epochs < 1 || !(config.lambda > 0.0)) {
    throw ValidationError("train_svm: epochs must be >= 1 and lambda > 0");
  }
  const std::size_t dim = data.front().features.dimension;
  std::set<int> labels;
  for (const auto& ex : data) {
    if (ex.features.dimension != dim) throw DimensionError(dim, ex.features.dimension);
    labels.insert(ex.label);
  }
  std::vector<int> class_ids(labels.begin(), labels.end());
  if (class_ids.size() == 1) {
    if (!config.allow_single_class) throw ValidationError("train_svm: need at least 2 distinct labels");
    if (log) log->objective.assign(1, {});
    return LinearSvmModel(config, dim, class_ids, {std::vector<double>(dim, 0.0)}, {0.0});
  }

  const auto canonical = detail::canonical_order(data);
  std::vector<detail::BinarySvm> trained(class_ids.size());
  detail::parallel_for(class_ids.size(), options.threads, [&](std::size_t k) {
    trained[k] = detail::train_binary_svm(data, canonical, class_ids[k], config,
                                          detail::derive_seed(config.seed, k));
  });
  std::vector<std::vector<double>> weights;
  std::vector<double> bias;
  if (log) log->objective.clear();
  for (auto& b : trained) {
    weights.push_back(std::move(b.weights));
    bias.push_back(b.bias);
    if (log) log->objective.push_back(std::move(b.objective));
  }
  return LinearSvmModel(config, dim, std::move(class_ids), std::move(weights), std::move(bias));
}

inline Prediction predict_svm(const LinearSvmModel& model, const FeatureVector& x) {
  return model.predict(x);
}

}  // namespace policyscope
