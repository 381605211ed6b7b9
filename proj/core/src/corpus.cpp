#include "opadv/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "opadv/error.hpp"
#include "opadv/rng.hpp"
#include "opadv/text.hpp"

namespace opadv {
namespace {

constexpr std::string_view kCorpusMagic = "#opadv-corpus v1";
constexpr std::string_view kRepoMagic = "#opadv-repository v1";

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::size_t parse_header_dim(std::string_view line, std::string_view magic) {
  line = text::trim(line);
  if (line.substr(0, magic.size()) != magic) {
    throw ValidationError("line 1: expected header '" + std::string(magic) + " dim=<V>'");
  }
  const auto fields = text::split_fields(line.substr(magic.size()));
  if (fields.size() != 1 || fields[0].key != "dim") {
    throw ValidationError("line 1: header must carry exactly dim=<V>");
  }
  const auto dim = text::parse_int(fields[0].value);
  if (dim < 1) throw ValidationError("line 1: dim must be >= 1");
  return static_cast<std::size_t>(dim);
}

std::string line_error(std::size_t line_no, const std::string& what) {
  return "line " + std::to_string(line_no) + ": " + what;
}

}  // namespace

// ---------------------------------------------------------------------------
// Vocabulary

OpcodeVocabulary OpcodeVocabulary::from_lines(std::string_view mnemonic_lines) {
  OpcodeVocabulary vocab;
  for (const auto raw : text::split_lines(mnemonic_lines)) {
    const auto line = text::trim(raw);
    if (line.empty()) continue;
    auto key = text::to_lower(line);
    if (vocab.index_.contains(key)) continue;
    vocab.index_.emplace(key, vocab.mnemonics_.size());
    vocab.mnemonics_.push_back(std::move(key));
  }
  if (vocab.mnemonics_.empty()) throw ValidationError("empty vocabulary");
  return vocab;
}

OpcodeVocabulary OpcodeVocabulary::synthetic(std::size_t size) {
  if (size == 0) throw ValidationError("empty vocabulary");
  std::string lines;
  for (std::size_t i = 0; i < size; ++i) lines += "m_" + std::to_string(i) + "\n";
  return from_lines(lines);
}

OpcodeVocabulary OpcodeVocabulary::load(const std::filesystem::path& path) {
  return from_lines(read_file(path));
}

void OpcodeVocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeFailure("cannot write " + path.string());
  for (const auto& m : mnemonics_) out << m << '\n';
  if (!out) throw RuntimeFailure("write failed: " + path.string());
}

std::optional<std::size_t> OpcodeVocabulary::index_of(std::string_view mnemonic) const {
  const auto it = index_.find(text::to_lower(mnemonic));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

// ---------------------------------------------------------------------------
// Feature vectors

std::int64_t FeatureVector::total() const {
  return std::accumulate(counts.begin(), counts.end(), std::int64_t{0});
}

std::string_view to_string(Label label) {
  return label == Label::kMalware ? "malware" : "benign";
}

Label parse_label(std::string_view text) {
  if (text == "malware") return Label::kMalware;
  if (text == "benign") return Label::kBenign;
  throw ValidationError("unknown label '" + std::string(text) + "'");
}

UnknownPolicy parse_unknown_policy(std::string_view text) {
  if (text == "reject") return UnknownPolicy::kReject;
  if (text == "ignore") return UnknownPolicy::kIgnore;
  if (text == "oov_bucket") return UnknownPolicy::kOovBucket;
  throw ValidationError("unknown policy '" + std::string(text) + "' (reject|ignore|oov_bucket)");
}

FeatureVector parse_disassembly(std::string_view text, const OpcodeVocabulary& vocab,
                                UnknownPolicy policy) {
  const bool bucket = policy == UnknownPolicy::kOovBucket;
  FeatureVector fv(vocab.size() + (bucket ? 1 : 0));
  bool any_line = false;
  std::size_t line_no = 0;
  for (const auto raw : text::split_lines(text)) {
    ++line_no;
    const auto line = text::trim(raw);
    if (line.empty()) continue;
    any_line = true;
    if (const auto idx = vocab.index_of(line)) {
      ++fv[*idx];
      continue;
    }
    switch (policy) {
      case UnknownPolicy::kReject:
        throw ValidationError("unknown mnemonic '" + std::string(line) + "' at line " +
                              std::to_string(line_no));
      case UnknownPolicy::kIgnore:
        break;
      case UnknownPolicy::kOovBucket:
        ++fv[vocab.size()];
        break;
    }
  }
  if (!any_line) throw ValidationError("empty program");
  return fv;
}

std::vector<double> normalize(const FeatureVector& fv) {
  const auto total = fv.total();
  if (total <= 0) throw ValidationError("cannot normalize a zero feature vector");
  std::vector<double> out(fv.size());
  const double inv = 1.0 / static_cast<double>(total);
  for (std::size_t i = 0; i < fv.size(); ++i) out[i] = static_cast<double>(fv[i]) * inv;
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic generator

void SyntheticCorpusSpec::validate() const {
  if (vocab_size < 8) throw ValidationError("corpus: V must be >= 8");
  if (n_malware < 1 || n_benign < 1) throw ValidationError("corpus: need >= 1 sample per class");
  if (n_families < 1 || n_benign_families < 1) throw ValidationError("corpus: need >= 1 family");
  if (!(concentration > 0.0)) throw ValidationError("corpus: concentration must be > 0");
  if (!(mean_length > 0.0)) throw ValidationError("corpus: mean_length must be > 0");
}

namespace {

std::vector<double> draw_dirichlet(std::size_t dim, double alpha, Rng& rng) {
  std::gamma_distribution<double> gamma(alpha, 1.0);
  std::vector<double> p(dim);
  double sum = 0.0;
  // Tiny alpha can underflow every draw; retry keeps the distribution proper.
  while (!(sum > 0.0)) {
    for (auto& x : p) {
      x = gamma(rng);
      sum += x;
    }
  }
  for (auto& x : p) x /= sum;
  return p;
}

FeatureVector draw_sample(const std::vector<double>& dist, double mean_length, Rng& rng) {
  std::poisson_distribution<std::int64_t> length_dist(mean_length);
  const auto length = std::max<std::int64_t>(1, length_dist(rng));
  std::discrete_distribution<std::size_t> pick(dist.begin(), dist.end());
  FeatureVector fv(dist.size());
  for (std::int64_t i = 0; i < length; ++i) ++fv[pick(rng)];
  return fv;
}

std::string make_id(std::string_view prefix, std::size_t n) {
  auto digits = std::to_string(n);
  if (digits.size() < 5) digits.insert(0, 5 - digits.size(), '0');
  return std::string(prefix) + digits;
}

}  // namespace

Corpus generate_synthetic_corpus(const SyntheticCorpusSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(mix_seed(seed, 0xC0));
  std::vector<std::vector<double>> malware_families;
  std::vector<std::vector<double>> benign_families;
  for (std::size_t f = 0; f < spec.n_families; ++f) {
    malware_families.push_back(draw_dirichlet(spec.vocab_size, spec.concentration, rng));
  }
  for (std::size_t f = 0; f < spec.n_benign_families; ++f) {
    benign_families.push_back(draw_dirichlet(spec.vocab_size, spec.concentration, rng));
  }

  Corpus corpus;
  corpus.reserve(spec.n_malware + spec.n_benign);
  std::uniform_int_distribution<std::size_t> mal_family(0, spec.n_families - 1);
  std::uniform_int_distribution<std::size_t> ben_family(0, spec.n_benign_families - 1);
  for (std::size_t i = 0; i < spec.n_malware; ++i) {
    const auto f = mal_family(rng);
    corpus.push_back({make_id("mal-", i), Label::kMalware, static_cast<int>(f),
                      draw_sample(malware_families[f], spec.mean_length, rng)});
  }
  // Benign families are numbered after the malware ones.
  for (std::size_t i = 0; i < spec.n_benign; ++i) {
    const auto f = ben_family(rng);
    corpus.push_back({make_id("ben-", i), Label::kBenign,
                      static_cast<int>(spec.n_families + f),
                      draw_sample(benign_families[f], spec.mean_length, rng)});
  }
  return corpus;
}

// ---------------------------------------------------------------------------
// Corpus files

void write_corpus(const Corpus& samples, std::ostream& out) {
  if (samples.empty()) throw ValidationError("cannot write an empty corpus");
  const auto dim = samples.front().counts.size();
  out << kCorpusMagic << " dim=" << dim << '\n';
  for (const auto& s : samples) {
    if (s.counts.size() != dim) throw ValidationError("sample " + s.id + " has wrong dimension");
    out << "id=" << s.id << " label=" << to_string(s.label) << " family="
        << (s.family ? std::to_string(*s.family) : std::string("-"))
        << " counts=" << text::format_int_list(s.counts.counts) << '\n';
  }
}

void save_corpus(const Corpus& samples, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeFailure("cannot write " + path.string());
  write_corpus(samples, out);
  if (!out) throw RuntimeFailure("write failed: " + path.string());
}

namespace {

LabeledSample parse_sample_line(std::string_view line, std::size_t dim, std::size_t line_no) {
  std::vector<text::Field> fields;
  try {
    fields = text::split_fields(line);
  } catch (const std::exception& e) {
    throw ValidationError(line_error(line_no, e.what()));
  }
  if (fields.size() != 4 || fields[0].key != "id" || fields[1].key != "label" ||
      fields[2].key != "family" || fields[3].key != "counts") {
    throw ValidationError(line_error(line_no, "expected fields id, label, family, counts"));
  }
  LabeledSample s;
  s.id = std::string(fields[0].value);
  if (s.id.empty()) throw ValidationError(line_error(line_no, "empty id"));
  try {
    s.label = parse_label(fields[1].value);
  } catch (const ValidationError& e) {
    throw ValidationError(line_error(line_no, e.what()));
  }
  try {
    if (fields[2].value != "-") s.family = static_cast<int>(text::parse_int(fields[2].value));
    s.counts = FeatureVector(text::parse_int_list(fields[3].value));
  } catch (const std::invalid_argument& e) {
    throw ValidationError(line_error(line_no, e.what()));
  }
  if (s.counts.size() != dim) {
    throw ValidationError(line_error(line_no, "counts length " + std::to_string(s.counts.size()) +
                                                  " != dim " + std::to_string(dim)));
  }
  for (const auto c : s.counts.counts) {
    if (c < 0) throw ValidationError(line_error(line_no, "negative count"));
  }
  if (s.counts.total() <= 0) throw ValidationError(line_error(line_no, "all-zero counts"));
  return s;
}

}  // namespace

Corpus read_corpus(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ValidationError("line 1: empty corpus file");
  const auto dim = parse_header_dim(line, kCorpusMagic);
  Corpus corpus;
  std::unordered_set<std::string> ids;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    const auto trimmed = text::trim(line);
    if (trimmed.empty()) continue;
    auto sample = parse_sample_line(trimmed, dim, line_no);
    if (!ids.insert(sample.id).second) {
      throw ValidationError(line_error(line_no, "duplicate id '" + sample.id + "'"));
    }
    corpus.push_back(std::move(sample));
  }
  return corpus;
}

Corpus load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path.string());
  return read_corpus(in);
}

std::uint64_t corpus_hash(const Corpus& samples) {
  std::ostringstream ss;
  write_corpus(samples, ss);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const unsigned char c : ss.str()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

CorpusSplit stratified_split(const Corpus& samples, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw ValidationError("split must be in (0,1)");
  }
  Rng rng(mix_seed(seed, 0x5b));
  std::vector<bool> in_train(samples.size(), false);
  for (const auto label : {Label::kMalware, Label::kBenign}) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      if (samples[i].label == label) idx.push_back(i);
    }
    // Fisher-Yates with our own index draw; std::shuffle is not portable.
    for (std::size_t i = idx.size(); i > 1; --i) {
      std::uniform_int_distribution<std::size_t> pick(0, i - 1);
      std::swap(idx[i - 1], idx[pick(rng)]);
    }
    const auto n_train =
        static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(idx.size())));
    for (std::size_t k = 0; k < n_train; ++k) in_train[idx[k]] = true;
  }
  CorpusSplit split;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    (in_train[i] ? split.train : split.held_out).push_back(samples[i]);
  }
  return split;
}

Corpus malware_only(const Corpus& samples) {
  Corpus out;
  std::copy_if(samples.begin(), samples.end(), std::back_inserter(out),
               [](const LabeledSample& s) { return s.label == Label::kMalware; });
  return out;
}

// ---------------------------------------------------------------------------
// Obfuscation repository

void check_insertion_only(const FeatureVector& parent, const FeatureVector& variant) {
  if (parent.size() != variant.size()) {
    throw ValidationError("dimension mismatch between variant and parent");
  }
  for (std::size_t i = 0; i < parent.size(); ++i) {
    if (variant[i] < parent[i]) {
      throw ValidationError("removal detected at op-code " + std::to_string(i) + " (" +
                            std::to_string(variant[i]) + " < " + std::to_string(parent[i]) + ")");
    }
  }
}

namespace {

void validate_record(const ObfuscationRecord& rec) {
  const auto in_unit = [](double p) { return p >= 0.0 && p <= 1.0; };
  if (!in_unit(rec.p_nm_initial) || !in_unit(rec.p_nm_final)) {
    throw ValidationError("record probabilities must be in [0,1]");
  }
  if (!(rec.similarity >= -1.0 && rec.similarity <= 1.0)) {
    throw ValidationError("record similarity must be in [-1,1]");
  }
  if (rec.parent_id.empty() || rec.agent_id.empty() ||
      rec.parent_id.find(' ') != std::string::npos || rec.agent_id.find(' ') != std::string::npos) {
    throw ValidationError("record ids must be non-empty and contain no spaces");
  }
}

ObfuscationRecord parse_record_line(std::string_view line, std::size_t dim, std::size_t line_no) {
  static constexpr std::string_view kKeys[] = {"parent",       "agent",      "episode", "p_nm_initial",
                                               "p_nm_final", "similarity", "counts"};
  std::vector<text::Field> fields;
  try {
    fields = text::split_fields(line);
  } catch (const std::exception& e) {
    throw ValidationError(line_error(line_no, e.what()));
  }
  if (fields.size() != std::size(kKeys)) {
    throw ValidationError(line_error(line_no, "expected 7 fields"));
  }
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (fields[i].key != kKeys[i]) {
      throw ValidationError(line_error(line_no, "expected field '" + std::string(kKeys[i]) + "'"));
    }
  }
  ObfuscationRecord rec;
  try {
    rec.parent_id = std::string(fields[0].value);
    rec.agent_id = std::string(fields[1].value);
    rec.episode = text::parse_int(fields[2].value);
    rec.p_nm_initial = text::parse_double(fields[3].value);
    rec.p_nm_final = text::parse_double(fields[4].value);
    rec.similarity = text::parse_double(fields[5].value);
    rec.counts = FeatureVector(text::parse_int_list(fields[6].value));
  } catch (const std::invalid_argument& e) {
    throw ValidationError(line_error(line_no, e.what()));
  }
  if (rec.counts.size() != dim) throw ValidationError(line_error(line_no, "counts length != dim"));
  return rec;
}

}  // namespace

std::vector<ObfuscationRecord> load_repository(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw ValidationError("line 1: empty repository file");
  const auto dim = parse_header_dim(line, kRepoMagic);
  std::vector<ObfuscationRecord> out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    const auto trimmed = text::trim(line);
    if (trimmed.empty()) continue;
    out.push_back(parse_record_line(trimmed, dim, line_no));
  }
  return out;
}

ObfuscationRepository::ObfuscationRepository(std::filesystem::path path, const Corpus& parents)
    : path_(std::move(path)) {
  if (parents.empty()) throw ValidationError("repository needs a non-empty parent corpus");
  dim_ = parents.front().counts.size();
  for (const auto& p : parents) parents_.emplace(p.id, p.counts);
  if (std::filesystem::exists(path_)) {
    for (const auto& rec : load_repository(path_)) {
      if (rec.counts.size() != dim_) throw ValidationError("repository dimension mismatch");
    }
  } else {
    std::ofstream out(path_, std::ios::binary);
    if (!out) throw RuntimeFailure("cannot create " + path_.string());
    out << kRepoMagic << " dim=" << dim_ << '\n';
  }
}

void ObfuscationRepository::record(const ObfuscationRecord& rec) {
  validate_record(rec);
  const auto it = parents_.find(rec.parent_id);
  if (it == parents_.end()) throw ValidationError("unknown parent_id '" + rec.parent_id + "'");
  check_insertion_only(it->second, rec.counts);
  std::ofstream out(path_, std::ios::binary | std::ios::app);
  if (!out) throw RuntimeFailure("cannot append to " + path_.string());
  out << "parent=" << rec.parent_id << " agent=" << rec.agent_id << " episode=" << rec.episode
      << " p_nm_initial=" << text::format_exact(rec.p_nm_initial)
      << " p_nm_final=" << text::format_exact(rec.p_nm_final)
      << " similarity=" << text::format_exact(rec.similarity)
      << " counts=" << text::format_int_list(rec.counts.counts) << '\n';
  if (!out) throw RuntimeFailure("append failed: " + path_.string());
}

std::vector<ObfuscationRecord> ObfuscationRepository::read_all() const {
  return load_repository(path_);
}

std::size_t ObfuscationRepository::size() const { return read_all().size(); }

}  // namespace opadv
