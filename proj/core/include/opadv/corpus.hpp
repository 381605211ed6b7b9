#ifndef OPADV_CORPUS_HPP_
#define OPADV_CORPUS_HPP_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace opadv {

/// Ordered, case-folded set of op-code mnemonics. Position i names feature i.
class OpcodeVocabulary {
 public:
  /// Builds from one mnemonic per line. Blank lines are skipped, duplicates
  /// (after lowercasing) keep their first position.
  static OpcodeVocabulary from_lines(std::string_view mnemonic_lines);
  /// Vocabulary m_0 .. m_{size-1}, used by the synthetic generator.
  static OpcodeVocabulary synthetic(std::size_t size);
  static OpcodeVocabulary load(const std::filesystem::path& path);

  void save(const std::filesystem::path& path) const;

  std::size_t size() const { return mnemonics_.size(); }
  const std::vector<std::string>& mnemonics() const { return mnemonics_; }
  std::optional<std::size_t> index_of(std::string_view mnemonic) const;

  bool operator==(const OpcodeVocabulary& other) const { return mnemonics_ == other.mnemonics_; }

 private:
  std::vector<std::string> mnemonics_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Op-code counts aligned to a vocabulary.
struct FeatureVector {
  std::vector<std::int64_t> counts;

  FeatureVector() = default;
  explicit FeatureVector(std::vector<std::int64_t> c) : counts(std::move(c)) {}
  explicit FeatureVector(std::size_t dim) : counts(dim, 0) {}

  std::size_t size() const { return counts.size(); }
  std::int64_t total() const;
  std::int64_t operator[](std::size_t i) const { return counts[i]; }
  std::int64_t& operator[](std::size_t i) { return counts[i]; }

  bool operator==(const FeatureVector&) const = default;
};

enum class Label { kMalware, kBenign };

std::string_view to_string(Label label);
Label parse_label(std::string_view text);

struct LabeledSample {
  std::string id;
  Label label = Label::kMalware;
  std::optional<int> family;
  FeatureVector counts;

  bool operator==(const LabeledSample&) const = default;
};

using Corpus = std::vector<LabeledSample>;

enum class UnknownPolicy { kReject, kIgnore, kOovBucket };

UnknownPolicy parse_unknown_policy(std::string_view text);

/// Counts one-mnemonic-per-line disassembly text against `vocab`. With
/// kOovBucket the result has vocab.size()+1 entries, the last one counting
/// every unknown mnemonic.
FeatureVector parse_disassembly(std::string_view text, const OpcodeVocabulary& vocab,
                                UnknownPolicy policy = UnknownPolicy::kOovBucket);

struct SyntheticCorpusSpec {
  std::size_t vocab_size = 256;
  std::size_t n_malware = 500;
  std::size_t n_benign = 500;
  std::size_t n_families = 5;
  std::size_t n_benign_families = 10;
  double concentration = 0.1;
  double mean_length = 300.0;

  void validate() const;
};

/// Dirichlet-multinomial corpus with family structure. Malware samples come
/// first, then benign; ids are "mal-NNNNN" and "ben-NNNNN".
Corpus generate_synthetic_corpus(const SyntheticCorpusSpec& spec, std::uint64_t seed);

/// Corpus file: header `#opadv-corpus v1 dim=<V>` then one record per line,
///   id=<id> label=<malware|benign> family=<int|-> counts=[c0 c1 ... cV-1]
void save_corpus(const Corpus& samples, const std::filesystem::path& path);
void write_corpus(const Corpus& samples, std::ostream& out);
Corpus load_corpus(const std::filesystem::path& path);
Corpus read_corpus(std::istream& in);

/// FNV-1a over the serialized corpus; identifies training data in checkpoints.
std::uint64_t corpus_hash(const Corpus& samples);

std::vector<double> normalize(const FeatureVector& fv);

/// Stratified split: within each label, the first round(train_fraction * n)
/// samples of a seeded shuffle go to train. Order within each part follows the
/// input order.
struct CorpusSplit {
  Corpus train;
  Corpus held_out;
};
CorpusSplit stratified_split(const Corpus& samples, double train_fraction, std::uint64_t seed);

Corpus malware_only(const Corpus& samples);

struct ObfuscationRecord {
  std::string parent_id;
  std::string agent_id;
  std::int64_t episode = 0;
  FeatureVector counts;
  double p_nm_initial = 0.0;
  double p_nm_final = 0.0;
  double similarity = 0.0;

  bool operator==(const ObfuscationRecord&) const = default;
};

/// Append-only store of obfuscated variants. Every record is checked against
/// its parent: counts may only grow.
class ObfuscationRepository {
 public:
  ObfuscationRepository(std::filesystem::path path, const Corpus& parents);

  void record(const ObfuscationRecord& rec);
  std::vector<ObfuscationRecord> read_all() const;
  std::size_t size() const;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  std::size_t dim_ = 0;
  std::unordered_map<std::string, FeatureVector> parents_;
};

/// Parses the repository file without parent checks.
std::vector<ObfuscationRecord> load_repository(const std::filesystem::path& path);

/// Throws ValidationError("removal detected ...") if any count of `variant`
/// is below `parent`.
void check_insertion_only(const FeatureVector& parent, const FeatureVector& variant);

}  // namespace opadv

#endif  // OPADV_CORPUS_HPP_
