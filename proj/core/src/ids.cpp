#include "opadv/ids.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <nlohmann/json.hpp>
#include <numeric>
#include <sstream>

#include "opadv/error.hpp"
#include "opadv/rng.hpp"

namespace opadv::ids {
namespace {

constexpr int kCheckpointVersion = 1;

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

void check_vector(const FeatureVector& fv, std::size_t dim) {
  if (fv.size() != dim) {
    throw ValidationError("feature vector has dimension " + std::to_string(fv.size()) +
                          ", model expects " + std::to_string(dim));
  }
}

std::string hex64(std::uint64_t v) {
  std::ostringstream ss;
  ss << std::hex << v;
  return ss.str();
}

std::uint64_t parse_hex64(const std::string& s) { return std::stoull(s, nullptr, 16); }

void write_json(const nlohmann::json& j, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeFailure("cannot write " + path.string());
  out << j.dump(1) << '\n';
  if (!out) throw RuntimeFailure("write failed: " + path.string());
}

nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

std::vector<std::vector<double>> normalized_rows(const Corpus& samples) {
  std::vector<std::vector<double>> rows;
  rows.reserve(samples.size());
  for (const auto& s : samples) rows.push_back(normalize(s.counts));
  return rows;
}

}  // namespace

std::string_view to_string(ModelKind kind) {
  return kind == ModelKind::kLogistic ? "logistic" : "forest";
}

ModelKind parse_model_kind(std::string_view text) {
  if (text == "logistic") return ModelKind::kLogistic;
  if (text == "forest") return ModelKind::kForest;
  throw ValidationError("unknown IDS kind '" + std::string(text) + "' (logistic|forest)");
}

void IdsConfig::validate() const {
  if (!(split > 0.0 && split < 1.0)) throw ValidationError("ids split must be in (0,1)");
  if (!(regularization >= 0.0)) throw ValidationError("ids regularization must be >= 0");
  if (!(learning_rate > 0.0)) throw ValidationError("ids learning_rate must be > 0");
  if (iterations < 1) throw ValidationError("ids iterations must be >= 1");
  if (trees < 1) throw ValidationError("ids trees must be >= 1");
  if (depth < 1) throw ValidationError("ids depth must be >= 1");
  if (min_leaf < 1) throw ValidationError("ids min_leaf must be >= 1");
}

// ---------------------------------------------------------------------------
// Model

IdsModel::IdsModel(std::size_t input_dim, LogisticParams params, std::uint64_t seed,
                   std::uint64_t corpus_hash)
    : input_dim_(input_dim), params_(std::move(params)), seed_(seed), corpus_hash_(corpus_hash) {
  const auto& lr = std::get<LogisticParams>(params_);
  if (lr.weights.size() != input_dim_) throw ValidationError("logistic weights do not match input_dim");
  if (!std::isfinite(lr.bias) ||
      !std::all_of(lr.weights.begin(), lr.weights.end(), [](double w) { return std::isfinite(w); })) {
    throw ValidationError("logistic parameters are not finite");
  }
}

IdsModel::IdsModel(std::size_t input_dim, ForestParams params, std::uint64_t seed,
                   std::uint64_t corpus_hash)
    : input_dim_(input_dim), params_(std::move(params)), seed_(seed), corpus_hash_(corpus_hash) {
  const auto& forest = std::get<ForestParams>(params_);
  if (forest.trees.empty()) throw ValidationError("forest has no trees");
  for (const auto& tree : forest.trees) {
    const auto n = static_cast<int>(tree.nodes.size());
    if (n == 0) throw ValidationError("forest contains an empty tree");
    for (const auto& node : tree.nodes) {
      if (node.feature < 0) {
        if (!(node.probability >= 0.0 && node.probability <= 1.0)) {
          throw ValidationError("leaf probability outside [0,1]");
        }
        continue;
      }
      if (static_cast<std::size_t>(node.feature) >= input_dim_ || node.left <= 0 ||
          node.right <= 0 || node.left >= n || node.right >= n) {
        throw ValidationError("malformed tree node");
      }
    }
  }
}

ModelKind IdsModel::kind() const {
  return std::holds_alternative<LogisticParams>(params_) ? ModelKind::kLogistic
                                                         : ModelKind::kForest;
}

double IdsModel::predict_proba(const FeatureVector& fv) const {
  check_vector(fv, input_dim_);
  return predict_proba_normalized(normalize(fv));
}

double IdsModel::predict_proba_normalized(std::span<const double> freq) const {
  if (freq.size() != input_dim_) throw ValidationError("frequency vector dimension mismatch");
  if (const auto* lr = std::get_if<LogisticParams>(&params_)) {
    double z = lr->bias;
    for (std::size_t i = 0; i < freq.size(); ++i) z += lr->weights[i] * freq[i];
    return sigmoid(z);
  }
  const auto& forest = std::get<ForestParams>(params_);
  double sum = 0.0;
  for (const auto& tree : forest.trees) {
    int node = 0;
    while (tree.nodes[node].feature >= 0) {
      const auto& n = tree.nodes[node];
      node = freq[n.feature] <= n.threshold ? n.left : n.right;
    }
    sum += tree.nodes[node].probability;
  }
  return std::clamp(sum / static_cast<double>(forest.trees.size()), 0.0, 1.0);
}

void IdsModel::save(const std::filesystem::path& path) const {
  nlohmann::json j;
  j["format"] = "opadv-ids";
  j["version"] = kCheckpointVersion;
  j["kind"] = std::string(to_string(kind()));
  j["input_dim"] = input_dim_;
  j["seed"] = seed_;
  j["corpus_hash"] = hex64(corpus_hash_);
  if (const auto* lr = std::get_if<LogisticParams>(&params_)) {
    j["weights"] = lr->weights;
    j["bias"] = lr->bias;
  } else {
    auto trees = nlohmann::json::array();
    for (const auto& tree : std::get<ForestParams>(params_).trees) {
      auto nodes = nlohmann::json::array();
      for (const auto& n : tree.nodes) {
        if (n.feature < 0) {
          nodes.push_back({{"p", n.probability}});
        } else {
          nodes.push_back(
              {{"f", n.feature}, {"t", n.threshold}, {"l", n.left}, {"r", n.right}, {"p", n.probability}});
        }
      }
      trees.push_back(std::move(nodes));
    }
    j["trees"] = std::move(trees);
  }
  write_json(j, path);
}

IdsModel IdsModel::load(const std::filesystem::path& path) {
  const auto j = read_json(path);
  try {
    if (j.at("format") != "opadv-ids") throw ValidationError("not an IDS checkpoint");
    if (j.at("version") != kCheckpointVersion) {
      throw ValidationError("unsupported IDS checkpoint version");
    }
    const auto dim = j.at("input_dim").get<std::size_t>();
    const auto seed = j.at("seed").get<std::uint64_t>();
    const auto hash = parse_hex64(j.at("corpus_hash").get<std::string>());
    if (parse_model_kind(j.at("kind").get<std::string>()) == ModelKind::kLogistic) {
      return IdsModel(dim,
                      LogisticParams{j.at("weights").get<std::vector<double>>(),
                                     j.at("bias").get<double>()},
                      seed, hash);
    }
    ForestParams forest;
    for (const auto& jt : j.at("trees")) {
      DecisionTree tree;
      for (const auto& jn : jt) {
        TreeNode n;
        n.probability = jn.at("p").get<double>();
        if (jn.contains("f")) {
          n.feature = jn.at("f").get<int>();
          n.threshold = jn.at("t").get<double>();
          n.left = jn.at("l").get<int>();
          n.right = jn.at("r").get<int>();
        }
        tree.nodes.push_back(n);
      }
      forest.trees.push_back(std::move(tree));
    }
    return IdsModel(dim, std::move(forest), seed, hash);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Training

namespace {

LogisticParams fit_logistic(const std::vector<std::vector<double>>& x,
                            const std::vector<double>& y, const IdsConfig& cfg) {
  const std::size_t n = x.size();
  const std::size_t dim = x.front().size();
  LogisticParams p{std::vector<double>(dim, 0.0), 0.0};
  std::vector<double> grad_w(dim);
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    std::fill(grad_w.begin(), grad_w.end(), 0.0);
    double grad_b = 0.0;
    for (std::size_t s = 0; s < n; ++s) {
      double z = p.bias;
      for (std::size_t i = 0; i < dim; ++i) z += p.weights[i] * x[s][i];
      const double err = sigmoid(z) - y[s];
      grad_b += err;
      for (std::size_t i = 0; i < dim; ++i) grad_w[i] += err * x[s][i];
    }
    for (std::size_t i = 0; i < dim; ++i) {
      p.weights[i] -= cfg.learning_rate * (grad_w[i] * inv_n + cfg.regularization * p.weights[i]);
    }
    p.bias -= cfg.learning_rate * grad_b * inv_n;
  }
  return p;
}

class TreeBuilder {
 public:
  TreeBuilder(const std::vector<std::vector<double>>& x, const std::vector<double>& y,
              const IdsConfig& cfg, std::size_t features_per_split, Rng& rng)
      : x_(x), y_(y), cfg_(cfg), mtry_(features_per_split), rng_(rng) {}

  DecisionTree build(std::vector<std::size_t> rows) {
    tree_.nodes.clear();
    grow(std::move(rows), 0);
    return std::move(tree_);
  }

 private:
  struct Split {
    int feature = -1;
    double threshold = 0.0;
    double impurity = std::numeric_limits<double>::infinity();
  };

  static double gini_sum(double pos, double n) {
    if (n <= 0.0) return 0.0;
    const double p = pos / n;
    return n * 2.0 * p * (1.0 - p);
  }

  int grow(std::vector<std::size_t> rows, std::size_t depth) {
    const int id = static_cast<int>(tree_.nodes.size());
    tree_.nodes.emplace_back();
    double pos = 0.0;
    for (const auto r : rows) pos += y_[r];
    const double n = static_cast<double>(rows.size());
    tree_.nodes[id].probability = (pos + 1.0) / (n + 2.0);

    const bool pure = pos == 0.0 || pos == n;
    if (pure || depth >= cfg_.depth || rows.size() < 2 * cfg_.min_leaf) return id;

    const auto split = best_split(rows, pos);
    if (split.feature < 0) return id;

    std::vector<std::size_t> left;
    std::vector<std::size_t> right;
    for (const auto r : rows) {
      (x_[r][split.feature] <= split.threshold ? left : right).push_back(r);
    }
    rows.clear();
    rows.shrink_to_fit();
    const int l = grow(std::move(left), depth + 1);
    const int r = grow(std::move(right), depth + 1);
    auto& node = tree_.nodes[id];
    node.feature = split.feature;
    node.threshold = split.threshold;
    node.left = l;
    node.right = r;
    return id;
  }

  Split best_split(const std::vector<std::size_t>& rows, double total_pos) {
    const std::size_t dim = x_.front().size();
    std::vector<std::size_t> features(dim);
    std::iota(features.begin(), features.end(), 0);
    for (std::size_t i = 0; i < mtry_ && i < dim; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, dim - 1);
      std::swap(features[i], features[pick(rng_)]);
    }
    features.resize(std::min(mtry_, dim));

    Split best;
    const double n = static_cast<double>(rows.size());
    std::vector<std::pair<double, double>> column(rows.size());
    for (const auto f : features) {
      for (std::size_t k = 0; k < rows.size(); ++k) column[k] = {x_[rows[k]][f], y_[rows[k]]};
      std::sort(column.begin(), column.end());
      double left_pos = 0.0;
      for (std::size_t k = 0; k + 1 < column.size(); ++k) {
        left_pos += column[k].second;
        if (column[k].first == column[k + 1].first) continue;
        const double n_left = static_cast<double>(k + 1);
        if (k + 1 < cfg_.min_leaf || column.size() - k - 1 < cfg_.min_leaf) continue;
        const double impurity =
            gini_sum(left_pos, n_left) + gini_sum(total_pos - left_pos, n - n_left);
        if (impurity < best.impurity) {
          best.impurity = impurity;
          best.feature = static_cast<int>(f);
          best.threshold = 0.5 * (column[k].first + column[k + 1].first);
        }
      }
    }
    return best;
  }

  const std::vector<std::vector<double>>& x_;
  const std::vector<double>& y_;
  const IdsConfig& cfg_;
  std::size_t mtry_;
  Rng& rng_;
  DecisionTree tree_;
};

ForestParams fit_forest(const std::vector<std::vector<double>>& x, const std::vector<double>& y,
                        const IdsConfig& cfg) {
  const std::size_t dim = x.front().size();
  const std::size_t mtry =
      cfg.features_per_split > 0
          ? cfg.features_per_split
          : std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(std::sqrt(double(dim)))));
  Rng rng(mix_seed(cfg.seed, 0xF0));
  ForestParams forest;
  std::uniform_int_distribution<std::size_t> pick(0, x.size() - 1);
  for (std::size_t t = 0; t < cfg.trees; ++t) {
    std::vector<std::size_t> rows(x.size());
    for (auto& r : rows) r = pick(rng);
    TreeBuilder builder(x, y, cfg, mtry, rng);
    forest.trees.push_back(builder.build(std::move(rows)));
  }
  return forest;
}

}  // namespace

IdsModel fit_ids(const Corpus& train, const IdsConfig& cfg, std::uint64_t corpus_hash) {
  cfg.validate();
  if (train.empty()) throw ValidationError("degenerate labels: empty training set");
  const bool has_mal = std::any_of(train.begin(), train.end(),
                                   [](const auto& s) { return s.label == Label::kMalware; });
  const bool has_ben = std::any_of(train.begin(), train.end(),
                                   [](const auto& s) { return s.label == Label::kBenign; });
  if (!has_mal || !has_ben) throw ValidationError("degenerate labels");
  const std::size_t dim = train.front().counts.size();
  for (const auto& s : train) check_vector(s.counts, dim);

  const auto x = normalized_rows(train);
  std::vector<double> y;
  y.reserve(train.size());
  for (const auto& s : train) y.push_back(s.label == Label::kMalware ? 1.0 : 0.0);

  if (cfg.kind == ModelKind::kLogistic) {
    return IdsModel(dim, fit_logistic(x, y, cfg), cfg.seed, corpus_hash);
  }
  return IdsModel(dim, fit_forest(x, y, cfg), cfg.seed, corpus_hash);
}

IdsModel train_ids(const Corpus& corpus, const IdsConfig& cfg) {
  cfg.validate();
  const bool has_mal = std::any_of(corpus.begin(), corpus.end(),
                                   [](const auto& s) { return s.label == Label::kMalware; });
  const bool has_ben = std::any_of(corpus.begin(), corpus.end(),
                                   [](const auto& s) { return s.label == Label::kBenign; });
  if (!has_mal || !has_ben) throw ValidationError("degenerate labels");
  const auto split = stratified_split(corpus, cfg.split, cfg.seed);
  return fit_ids(split.train, cfg, corpus_hash(corpus));
}

IdsMetrics evaluate_ids(const IdsModel& model, const Corpus& samples, double threshold) {
  if (samples.empty()) throw ValidationError("cannot evaluate on an empty sample set");
  if (!(threshold >= 0.0 && threshold <= 1.0)) throw ValidationError("threshold must be in [0,1]");
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  for (const auto& s : samples) {
    const bool flagged = model.predict_proba(s.counts) >= threshold;
    if (s.label == Label::kMalware) {
      flagged ? ++tp : ++fn;
    } else {
      flagged ? ++fp : ++tn;
    }
  }
  if (tp + fn == 0 || fp + tn == 0) {
    throw ValidationError("evaluation set must contain both labels");
  }
  IdsMetrics m;
  m.threshold = threshold;
  m.accuracy = static_cast<double>(tp + tn) / static_cast<double>(samples.size());
  m.true_positive_rate = static_cast<double>(tp) / static_cast<double>(tp + fn);
  m.false_positive_rate = static_cast<double>(fp) / static_cast<double>(fp + tn);
  return m;
}

// ---------------------------------------------------------------------------
// Router

RouterModel::RouterModel(std::vector<std::vector<double>> centroids)
    : centroids_(std::move(centroids)) {
  if (centroids_.empty()) throw ValidationError("router needs k >= 1");
  const auto dim = centroids_.front().size();
  for (const auto& c : centroids_) {
    if (c.size() != dim || dim == 0) throw ValidationError("router centroids have mixed sizes");
    for (const double v : c) {
      if (!std::isfinite(v)) throw ValidationError("router centroid is not finite");
    }
  }
}

std::size_t RouterModel::route(const FeatureVector& fv) const {
  check_vector(fv, input_dim());
  return route_normalized(normalize(fv));
}

std::size_t RouterModel::route_normalized(std::span<const double> freq) const {
  if (freq.size() != input_dim()) throw ValidationError("router input dimension mismatch");
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < centroids_.size(); ++c) {
    double d = 0.0;
    for (std::size_t i = 0; i < freq.size(); ++i) {
      const double diff = freq[i] - centroids_[c][i];
      d += diff * diff;
    }
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
  return best;
}

void RouterModel::save(const std::filesystem::path& path) const {
  nlohmann::json j;
  j["format"] = "opadv-router";
  j["version"] = kCheckpointVersion;
  j["k"] = k();
  j["input_dim"] = input_dim();
  j["centroids"] = centroids_;
  write_json(j, path);
}

RouterModel RouterModel::load(const std::filesystem::path& path) {
  const auto j = read_json(path);
  try {
    if (j.at("format") != "opadv-router") throw ValidationError("not a router checkpoint");
    if (j.at("version") != kCheckpointVersion) {
      throw ValidationError("unsupported router checkpoint version");
    }
    RouterModel router(j.at("centroids").get<std::vector<std::vector<double>>>());
    if (router.k() != j.at("k").get<std::size_t>() ||
        router.input_dim() != j.at("input_dim").get<std::size_t>()) {
      throw ValidationError("router checkpoint header disagrees with centroids");
    }
    return router;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

RouterModel train_router(const Corpus& corpus, std::size_t k, std::uint64_t seed,
                         const RouterConfig& cfg) {
  if (k < 1 || k > corpus.size()) {
    throw ValidationError("router k must be in [1, " + std::to_string(corpus.size()) + "]");
  }
  const auto x = normalized_rows(corpus);
  const std::size_t n = x.size();
  const std::size_t dim = x.front().size();
  for (const auto& row : x) {
    if (row.size() != dim) throw ValidationError("router corpus has mixed dimensions");
  }
  const auto dist2 = [dim](const std::vector<double>& a, const std::vector<double>& b) {
    double d = 0.0;
    for (std::size_t i = 0; i < dim; ++i) d += (a[i] - b[i]) * (a[i] - b[i]);
    return d;
  };

  Rng rng(mix_seed(seed, 0x4B));
  std::vector<std::vector<double>> centroids;
  std::uniform_int_distribution<std::size_t> first(0, n - 1);
  centroids.push_back(x[first(rng)]);
  std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
  while (centroids.size() < k) {
    double total = 0.0;
    for (std::size_t s = 0; s < n; ++s) {
      nearest[s] = std::min(nearest[s], dist2(x[s], centroids.back()));
      total += nearest[s];
    }
    std::size_t chosen = 0;
    if (total > 0.0) {
      std::uniform_real_distribution<double> u(0.0, total);
      double target = u(rng);
      chosen = n - 1;
      for (std::size_t s = 0; s < n; ++s) {
        target -= nearest[s];
        if (target < 0.0) {
          chosen = s;
          break;
        }
      }
    } else {
      // All points coincide with existing centroids.
      chosen = first(rng);
    }
    centroids.push_back(x[chosen]);
  }

  std::vector<std::size_t> assignment(n, 0);
  for (std::size_t it = 0; it < cfg.max_iterations; ++it) {
    const RouterModel current(centroids);
    for (std::size_t s = 0; s < n; ++s) assignment[s] = current.route_normalized(x[s]);
    std::vector<std::vector<double>> sums(k, std::vector<double>(dim, 0.0));
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t s = 0; s < n; ++s) {
      ++counts[assignment[s]];
      for (std::size_t i = 0; i < dim; ++i) sums[assignment[s]][i] += x[s][i];
    }
    double shift = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) continue;  // empty cluster keeps its centroid
      for (auto& v : sums[c]) v /= static_cast<double>(counts[c]);
      shift = std::max(shift, std::sqrt(dist2(sums[c], centroids[c])));
      centroids[c] = std::move(sums[c]);
    }
    if (shift < cfg.tolerance) break;
  }
  return RouterModel(std::move(centroids));
}

}  // namespace opadv::ids
