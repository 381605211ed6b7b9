#ifndef OPADV_IDS_HPP_
#define OPADV_IDS_HPP_

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "opadv/corpus.hpp"

namespace opadv::ids {

enum class ModelKind { kLogistic, kForest };

std::string_view to_string(ModelKind kind);
ModelKind parse_model_kind(std::string_view text);

struct IdsConfig {
  ModelKind kind = ModelKind::kLogistic;
  std::uint64_t seed = 0;
  double split = 0.8;  // training fraction of the stratified split
  // logistic
  double regularization = 1e-4;  // L2 on weights
  double learning_rate = 20.0;
  std::size_t iterations = 3000;
  // forest
  std::size_t trees = 50;
  std::size_t depth = 8;
  std::size_t min_leaf = 2;
  std::size_t features_per_split = 0;  // 0 = round(sqrt(V))

  void validate() const;
};

struct LogisticParams {
  std::vector<double> weights;
  double bias = 0.0;
  bool operator==(const LogisticParams&) const = default;
};

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  double probability = 0.5;  // Laplace-smoothed P(malware) at leaves
  bool operator==(const TreeNode&) const = default;
};

struct DecisionTree {
  std::vector<TreeNode> nodes;  // nodes[0] is the root
  bool operator==(const DecisionTree&) const = default;
};

struct ForestParams {
  std::vector<DecisionTree> trees;
  bool operator==(const ForestParams&) const = default;
};

/// Trained discriminator. Scores L1-normalized op-code frequencies, so any
/// positive rescaling of a count vector scores identically.
class IdsModel {
 public:
  IdsModel(std::size_t input_dim, LogisticParams params, std::uint64_t seed = 0,
           std::uint64_t corpus_hash = 0);
  IdsModel(std::size_t input_dim, ForestParams params, std::uint64_t seed = 0,
           std::uint64_t corpus_hash = 0);

  ModelKind kind() const;
  std::size_t input_dim() const { return input_dim_; }
  std::uint64_t seed() const { return seed_; }
  std::uint64_t corpus_hash() const { return corpus_hash_; }
  const std::variant<LogisticParams, ForestParams>& params() const { return params_; }

  /// P(malicious) in [0,1].
  double predict_proba(const FeatureVector& fv) const;
  /// Same, on already-normalized frequencies.
  double predict_proba_normalized(std::span<const double> freq) const;

  void save(const std::filesystem::path& path) const;
  static IdsModel load(const std::filesystem::path& path);

  bool operator==(const IdsModel&) const = default;

 private:
  std::size_t input_dim_;
  std::variant<LogisticParams, ForestParams> params_;
  std::uint64_t seed_;
  std::uint64_t corpus_hash_;
};

/// Trains on the train part of stratified_split(corpus, cfg.split, cfg.seed).
IdsModel train_ids(const Corpus& corpus, const IdsConfig& cfg);
/// Trains on every sample given.
IdsModel fit_ids(const Corpus& train, const IdsConfig& cfg, std::uint64_t corpus_hash = 0);

struct IdsMetrics {
  double accuracy = 0.0;
  double true_positive_rate = 0.0;
  double false_positive_rate = 0.0;
  double threshold = 0.5;
};

/// A sample is classified malicious when P(malicious) >= threshold.
IdsMetrics evaluate_ids(const IdsModel& model, const Corpus& samples, double threshold = 0.5);

class RouterModel {
 public:
  explicit RouterModel(std::vector<std::vector<double>> centroids);

  std::size_t k() const { return centroids_.size(); }
  std::size_t input_dim() const { return centroids_.front().size(); }
  const std::vector<std::vector<double>>& centroids() const { return centroids_; }

  /// Nearest centroid (Euclidean, normalized counts); ties go to the lowest index.
  std::size_t route(const FeatureVector& fv) const;
  std::size_t route_normalized(std::span<const double> freq) const;

  void save(const std::filesystem::path& path) const;
  static RouterModel load(const std::filesystem::path& path);

  bool operator==(const RouterModel&) const = default;

 private:
  std::vector<std::vector<double>> centroids_;
};

struct RouterConfig {
  std::size_t max_iterations = 100;
  double tolerance = 1e-6;
};

/// k-means++ seeding then Lloyd iterations on normalized counts.
RouterModel train_router(const Corpus& corpus, std::size_t k, std::uint64_t seed,
                         const RouterConfig& cfg = {});

}  // namespace opadv::ids

#endif  // OPADV_IDS_HPP_
