#ifndef OPADV_CONFIG_HPP_
#define OPADV_CONFIG_HPP_

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "opadv/agent.hpp"
#include "opadv/corpus.hpp"
#include "opadv/env.hpp"
#include "opadv/ids.hpp"

namespace opadv::config {

struct EvalConfig {
  std::size_t n_eval = 0;  // 0 = every held-out malware sample
  double threshold = 0.5;
  double similarity_bar = 0.8;
  std::size_t uplift_bins = 20;
  std::size_t similarity_bins = 20;
};

struct Paths {
  std::filesystem::path vocab = "data/vocab.txt";
  std::filesystem::path corpus = "data/corpus.txt";
  std::filesystem::path repository = "data/obfuscations.txt";
  std::filesystem::path ingest_dir = "disassembly";
  std::filesystem::path ids = "models/ids.json";
  std::filesystem::path router = "models/router.json";
  std::filesystem::path agent = "models/agent.json";
  std::filesystem::path ensemble_dir = "models/ensemble";
  std::filesystem::path training_log = "logs/training.jsonl";
  std::filesystem::path logs_dir = "logs";
  std::filesystem::path reports = "reports";
};

/// Every tunable of the pipeline. One global seed feeds every stage.
struct RunConfig {
  std::uint64_t seed = 0;
  SyntheticCorpusSpec corpus;
  UnknownPolicy unknown_policy = UnknownPolicy::kOovBucket;
  ids::IdsConfig ids;
  std::size_t router_k = 5;
  env::EnvConfig env;
  agent::PpoConfig ppo;
  agent::EnsembleConfig ensemble;
  EvalConfig eval;
  Paths paths;

  /// Copies the global seed into the per-stage configs.
  void propagate_seed();
  void validate() const;
};

/// `section.key=value` from the command line. The line number in error
/// messages is 0 for flags.
struct Override {
  std::string key;
  std::string value;
};

/// Line-oriented `key = value` with `[section]` headers and `#` comments.
/// Keys before the first header belong to [run]; `seed` is required (it may
/// come from an override). Unknown keys, bad values and missing required keys
/// raise ValidationError naming the key and line.
RunConfig parse_config(const std::filesystem::path& path, const std::vector<Override>& overrides = {});
RunConfig parse_config_text(const std::string& text, const std::vector<Override>& overrides = {});

/// Canonical `key = value` rendering of every field; parse_config_text of this
/// text yields the same configuration.
std::string render_config(const RunConfig& cfg);

}  // namespace opadv::config

#endif  // OPADV_CONFIG_HPP_
