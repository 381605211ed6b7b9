#include "opadv/report.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "opadv/error.hpp"
#include "opadv/text.hpp"

namespace opadv::report {

EvalResult evaluate_agent(const agent::PolicyParams& params,
                          std::shared_ptr<const ids::IdsModel> model,
                          const ids::RouterModel& router, const Corpus& eval_malware,
                          const env::EnvConfig& env_cfg, std::uint64_t seed,
                          const std::string& agent_id) {
  if (eval_malware.empty()) throw ValidationError("evaluation set is empty");
  auto malware = std::make_shared<const Corpus>(eval_malware);
  env::ObfuscationEnv env(malware, std::move(model), env_cfg, seed);
  EvalResult result;
  result.records.reserve(eval_malware.size());
  for (const auto& sample : eval_malware) {
    const auto state = agent::run_greedy_episode(params, env, sample);
    EvalRecord rec;
    rec.sample_id = sample.id;
    rec.agent_id = agent_id;
    rec.p_nm_initial = state.p_nm_initial;
    rec.p_nm_final = state.p_nm_current;
    rec.uplift = state.p_nm_current - state.p_nm_initial;
    rec.similarity = env::similarity(state.original, state.current);
    rec.same_cluster = router.route(state.original) == router.route(state.current);
    rec.inserted_total = state.inserted_total;
    rec.final_counts = state.current;
    result.records.push_back(std::move(rec));
  }
  return result;
}

std::int64_t Histogram::total() const {
  return std::accumulate(counts.begin(), counts.end(), std::int64_t{0});
}

Histogram make_histogram(const std::vector<double>& values, double lo, double hi,
                         std::size_t n_bins) {
  if (n_bins < 1) throw ValidationError("histogram needs at least one bin");
  if (!(hi > lo)) throw ValidationError("histogram range must satisfy lo < hi");
  if (values.empty()) throw ValidationError("histogram of no values");
  Histogram h;
  h.edges.resize(n_bins + 1);
  const double width = (hi - lo) / static_cast<double>(n_bins);
  for (std::size_t i = 0; i <= n_bins; ++i) h.edges[i] = lo + width * static_cast<double>(i);
  h.edges.back() = hi;
  h.counts.assign(n_bins, 0);
  for (const double v : values) {
    if (std::isnan(v)) throw ValidationError("histogram value is NaN");
    // First edge strictly greater than v, minus one, is v's bin.
    const auto it = std::upper_bound(h.edges.begin(), h.edges.end(), v);
    auto bin = static_cast<std::ptrdiff_t>(it - h.edges.begin()) - 1;
    bin = std::clamp<std::ptrdiff_t>(bin, 0, static_cast<std::ptrdiff_t>(n_bins) - 1);
    ++h.counts[static_cast<std::size_t>(bin)];
  }
  return h;
}

Summary summary_metrics(const EvalResult& result, double threshold, double similarity_bar) {
  if (result.records.empty()) throw ValidationError("summary of an empty result");
  Summary s;
  s.samples = result.records.size();
  s.threshold = threshold;
  s.similarity_bar = similarity_bar;
  std::size_t evading = 0, dual = 0, same = 0, evading_same = 0;
  for (const auto& r : result.records) {
    s.mean_p_ndmf += r.p_nm_final;
    s.mean_p_initial += r.p_nm_initial;
    s.mean_uplift += r.uplift;
    s.mean_similarity += r.similarity;
    const bool evades = r.p_nm_final >= threshold;
    if (evades) ++evading;
    if (evades && r.similarity >= similarity_bar) ++dual;
    if (r.same_cluster) ++same;
    if (evades && r.same_cluster) ++evading_same;
  }
  const double n = static_cast<double>(s.samples);
  s.mean_p_ndmf /= n;
  s.mean_p_initial /= n;
  s.mean_uplift /= n;
  s.mean_similarity /= n;
  s.evasion_rate = static_cast<double>(evading) / n;
  s.dual_objective_rate = static_cast<double>(dual) / n;
  s.routing_stability = static_cast<double>(same) / n;
  s.routing_stability_evading =
      evading > 0 ? static_cast<double>(evading_same) / static_cast<double>(evading) : 0.0;
  return s;
}

// ---------------------------------------------------------------------------
// CSV

void write_csv(const EvalResult& result, std::ostream& out) {
  if (result.records.empty()) throw ValidationError("refusing to write an empty result CSV");
  out << "sample_id,agent_id,p_nm_initial,p_nm_final,uplift,similarity,same_cluster,inserted_total\n";
  for (const auto& r : result.records) {
    out << r.sample_id << ',' << r.agent_id << ',' << text::format_fixed(r.p_nm_initial) << ','
        << text::format_fixed(r.p_nm_final) << ',' << text::format_fixed(r.uplift) << ','
        << text::format_fixed(r.similarity) << ',' << (r.same_cluster ? 1 : 0) << ','
        << r.inserted_total << '\n';
  }
}

void write_csv(const Histogram& hist, std::ostream& out) {
  if (hist.counts.empty()) throw ValidationError("refusing to write an empty histogram CSV");
  out << "bin_lo,bin_hi,count\n";
  for (std::size_t i = 0; i < hist.bins(); ++i) {
    out << text::format_fixed(hist.edges[i]) << ',' << text::format_fixed(hist.edges[i + 1]) << ','
        << hist.counts[i] << '\n';
  }
}

void write_csv(const Summary& s, std::ostream& out) {
  if (s.samples == 0) throw ValidationError("refusing to write an empty summary CSV");
  out << "metric,value\n";
  const std::pair<const char*, double> rows[] = {
      {"samples", static_cast<double>(s.samples)},
      {"threshold", s.threshold},
      {"similarity_bar", s.similarity_bar},
      {"mean_p_initial", s.mean_p_initial},
      {"mean_p_ndmf", s.mean_p_ndmf},
      {"mean_uplift", s.mean_uplift},
      {"mean_similarity", s.mean_similarity},
      {"evasion_rate", s.evasion_rate},
      {"dual_objective_rate", s.dual_objective_rate},
      {"routing_stability", s.routing_stability},
      {"routing_stability_evading", s.routing_stability_evading},
  };
  for (const auto& [name, value] : rows) out << name << ',' << text::format_fixed(value) << '\n';
}

namespace {

template <typename T>
void emit(const T& value, const std::filesystem::path& path) {
  std::ostringstream buf;
  write_csv(value, buf);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeFailure("cannot write " + path.string());
  out << buf.str();
  if (!out) throw RuntimeFailure("write failed: " + path.string());
}

}  // namespace

void emit_csv(const EvalResult& result, const std::filesystem::path& path) { emit(result, path); }
void emit_csv(const Histogram& hist, const std::filesystem::path& path) { emit(hist, path); }
void emit_csv(const Summary& summary, const std::filesystem::path& path) { emit(summary, path); }

namespace {
constexpr std::string_view kResultHeader =
    "sample_id,agent_id,p_nm_initial,p_nm_final,uplift,similarity,same_cluster,inserted_total";
}  // namespace

EvalResult read_eval_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("missing results file " + path.string());
  std::string line;
  if (!std::getline(in, line) || text::trim(line) != kResultHeader) {
    throw ValidationError(path.string() + ": unexpected header");
  }
  EvalResult result;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (text::trim(line).empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) cells.emplace_back(text::trim(cell));
    if (cells.size() != 8) {
      throw ValidationError(path.string() + ": line " + std::to_string(line_no) + ": expected 8 fields");
    }
    try {
      EvalRecord r;
      r.sample_id = cells[0];
      r.agent_id = cells[1];
      r.p_nm_initial = text::parse_double(cells[2]);
      r.p_nm_final = text::parse_double(cells[3]);
      r.uplift = text::parse_double(cells[4]);
      r.similarity = text::parse_double(cells[5]);
      r.same_cluster = text::parse_bool(cells[6]);
      r.inserted_total = text::parse_int(cells[7]);
      result.records.push_back(std::move(r));
    } catch (const std::invalid_argument& e) {
      throw ValidationError(path.string() + ": line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (result.records.empty()) throw ValidationError(path.string() + ": no records");
  return result;
}

// ---------------------------------------------------------------------------
// SVG

namespace {

std::string escape_xml(const std::string& s) {
  std::string out;
  for (const char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string num(double v) { return text::format_fixed(v, 3); }

}  // namespace

std::string render_svg_histogram(const Histogram& hist, const std::string& title) {
  if (hist.counts.empty() || hist.edges.size() != hist.counts.size() + 1) {
    throw ValidationError("invalid histogram");
  }
  constexpr double kWidth = 640.0, kHeight = 400.0;
  constexpr double kLeft = 60.0, kRight = 20.0, kTop = 40.0, kBottom = 60.0;
  const double plot_w = kWidth - kLeft - kRight;
  const double plot_h = kHeight - kTop - kBottom;
  const double base_y = kTop + plot_h;
  const auto max_count = std::max<std::int64_t>(1, *std::max_element(hist.counts.begin(), hist.counts.end()));
  const double bar_w = plot_w / static_cast<double>(hist.bins());

  std::ostringstream svg;
  svg << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(kWidth) << "\" height=\""
      << num(kHeight) << "\" viewBox=\"0 0 " << num(kWidth) << ' ' << num(kHeight) << "\">\n"
      << "<text class=\"title\" x=\"" << num(kWidth / 2) << "\" y=\"24.000\" text-anchor=\"middle\" "
      << "font-family=\"sans-serif\" font-size=\"16\">" << escape_xml(title) << "</text>\n";

  // axes
  svg << "<line class=\"axis\" x1=\"" << num(kLeft) << "\" y1=\"" << num(base_y) << "\" x2=\""
      << num(kLeft + plot_w) << "\" y2=\"" << num(base_y) << "\" stroke=\"black\"/>\n"
      << "<line class=\"axis\" x1=\"" << num(kLeft) << "\" y1=\"" << num(kTop) << "\" x2=\""
      << num(kLeft) << "\" y2=\"" << num(base_y) << "\" stroke=\"black\"/>\n";
  svg << "<text class=\"ylabel\" x=\"" << num(kLeft - 6) << "\" y=\"" << num(kTop + 4)
      << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << max_count
      << "</text>\n"
      << "<text class=\"ylabel\" x=\"" << num(kLeft - 6) << "\" y=\"" << num(base_y + 4)
      << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">0</text>\n";

  for (std::size_t i = 0; i < hist.bins(); ++i) {
    const double h = plot_h * static_cast<double>(hist.counts[i]) / static_cast<double>(max_count);
    const double x = kLeft + bar_w * static_cast<double>(i);
    svg << "<rect class=\"bar\" x=\"" << num(x) << "\" y=\"" << num(base_y - h) << "\" width=\""
        << num(bar_w) << "\" height=\"" << num(h) << "\" data-count=\"" << hist.counts[i]
        << "\" fill=\"steelblue\" stroke=\"white\"/>\n";
  }
  // One label per edge, thinned to at most ~11 labels.
  const std::size_t stride = std::max<std::size_t>(1, (hist.bins() + 9) / 10);
  for (std::size_t i = 0; i <= hist.bins(); i += stride) {
    const double x = kLeft + bar_w * static_cast<double>(i);
    svg << "<text class=\"xlabel\" x=\"" << num(x) << "\" y=\"" << num(base_y + 16)
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">"
        << text::format_fixed(hist.edges[i], 2) << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

void emit_svg_histogram(const Histogram& hist, const std::string& title,
                        const std::filesystem::path& path) {
  const auto svg = render_svg_histogram(hist, title);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeFailure("cannot write " + path.string());
  out << svg;
  if (!out) throw RuntimeFailure("write failed: " + path.string());
}

}  // namespace opadv::report
