#ifndef OPADV_TESTS_SUPPORT_HPP_
#define OPADV_TESTS_SUPPORT_HPP_

#include <atomic>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <unistd.h>

#include "opadv/corpus.hpp"
#include "opadv/ids.hpp"

namespace testing {

// Scratch directory removed on scope exit.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("opadv-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void spit(const std::filesystem::path& p, const std::string& body) {
  std::ofstream out(p, std::ios::binary);
  out << body;
}

inline opadv::LabeledSample sample(std::string id, opadv::Label label, std::vector<std::int64_t> counts,
                                   std::optional<int> family = std::nullopt) {
  opadv::LabeledSample s;
  s.id = std::move(id);
  s.label = label;
  s.family = family;
  s.counts = opadv::FeatureVector(std::move(counts));
  return s;
}

// Malware concentrated on op-code 0, benign on op-code 1.
inline opadv::Corpus toy_corpus(std::size_t per_class = 50) {
  opadv::Corpus c;
  for (std::size_t i = 0; i < per_class; ++i) {
    c.push_back(sample("m" + std::to_string(i), opadv::Label::kMalware, {10, 0}));
  }
  for (std::size_t i = 0; i < per_class; ++i) {
    c.push_back(sample("b" + std::to_string(i), opadv::Label::kBenign, {0, 10}));
  }
  return c;
}

// Logistic model whose P(malicious) = sigmoid(bias + sum w_i x_i) on
// normalized counts.
inline opadv::ids::IdsModel logistic(std::vector<double> w, double b) {
  const auto dim = w.size();
  return opadv::ids::IdsModel(dim, opadv::ids::LogisticParams{std::move(w), b});
}

}  // namespace testing

#endif  // OPADV_TESTS_SUPPORT_HPP_
