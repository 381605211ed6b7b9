#ifndef OPADV_REPORT_HPP_
#define OPADV_REPORT_HPP_

#include <cstdint>
#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include "opadv/agent.hpp"
#include "opadv/corpus.hpp"
#include "opadv/env.hpp"
#include "opadv/ids.hpp"

namespace opadv::report {

struct EvalRecord {
  std::string sample_id;
  std::string agent_id;
  double p_nm_initial = 0.0;
  double p_nm_final = 0.0;
  double uplift = 0.0;
  double similarity = 1.0;
  bool same_cluster = true;
  std::int64_t inserted_total = 0;
  FeatureVector final_counts;
};

struct EvalResult {
  std::vector<EvalRecord> records;
};

/// One greedy episode per malware sample. Router agreement compares the
/// cluster of the original and of the obfuscated vector.
EvalResult evaluate_agent(const agent::PolicyParams& params,
                          std::shared_ptr<const ids::IdsModel> model,
                          const ids::RouterModel& router, const Corpus& eval_malware,
                          const env::EnvConfig& env_cfg, std::uint64_t seed,
                          const std::string& agent_id = "agent-0");

/// Uniform bins over [lo, hi]. Bins are half-open [e_i, e_{i+1}) except the
/// last, which is closed; values outside the range land in the end bins.
struct Histogram {
  std::vector<double> edges;  // n_bins + 1, strictly increasing
  std::vector<std::int64_t> counts;

  std::size_t bins() const { return counts.size(); }
  std::int64_t total() const;
};

Histogram make_histogram(const std::vector<double>& values, double lo, double hi,
                         std::size_t n_bins);

struct Summary {
  std::size_t samples = 0;
  double threshold = 0.5;
  double similarity_bar = 0.8;
  double mean_p_ndmf = 0.0;
  double mean_p_initial = 0.0;
  double mean_uplift = 0.0;
  double mean_similarity = 0.0;
  double evasion_rate = 0.0;
  double dual_objective_rate = 0.0;
  double routing_stability = 0.0;
  /// Routing stability restricted to records with p_nm_final >= threshold;
  /// 0 when nothing evades.
  double routing_stability_evading = 0.0;
};

Summary summary_metrics(const EvalResult& result, double threshold = 0.5,
                        double similarity_bar = 0.8);

// CSV: header row then one row per record, numbers with 6 decimals.
void write_csv(const EvalResult& result, std::ostream& out);
void write_csv(const Histogram& hist, std::ostream& out);
void write_csv(const Summary& summary, std::ostream& out);
void emit_csv(const EvalResult& result, const std::filesystem::path& path);
void emit_csv(const Histogram& hist, const std::filesystem::path& path);
void emit_csv(const Summary& summary, const std::filesystem::path& path);

/// Reads back the result CSV written above. final_counts is not part of the
/// CSV and comes back empty.
EvalResult read_eval_csv(const std::filesystem::path& path);

/// Standalone SVG bar chart. Bars are the only <rect> elements and carry
/// class="bar" plus data-count; bar height is proportional to the count.
std::string render_svg_histogram(const Histogram& hist, const std::string& title);
void emit_svg_histogram(const Histogram& hist, const std::string& title,
                        const std::filesystem::path& path);

}  // namespace opadv::report

#endif  // OPADV_REPORT_HPP_
