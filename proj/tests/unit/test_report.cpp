#include <doctest.h>

#include <cmath>
#include <random>
#include <regex>
#include <sstream>

#include "opadv/agent.hpp"
#include "opadv/corpus.hpp"
#include "opadv/error.hpp"
#include "opadv/ids.hpp"
#include "opadv/report.hpp"
#include "support.hpp"

using namespace opadv;
using report::EvalRecord;
using report::EvalResult;

namespace {

EvalRecord rec(std::string id, double p0, double p1, double sim, bool same, std::int64_t ins = 0) {
  EvalRecord r;
  r.sample_id = std::move(id);
  r.agent_id = "agent-0";
  r.p_nm_initial = p0;
  r.p_nm_final = p1;
  r.uplift = p1 - p0;
  r.similarity = sim;
  r.same_cluster = same;
  r.inserted_total = ins;
  return r;
}

EvalResult hand_result() {
  return EvalResult{{rec("mal-00001", 0.05, 0.62, 0.91, true, 40),
                     rec("mal-00002", 0.10, 0.30, 0.95, true, 12),
                     rec("mal-00003", 0.02, 0.55, 0.71, false, 80),
                     rec("mal-00004", 0.20, 0.50, 0.80, true, 33)}};
}

struct Bar {
  double height;
  long count;
};

std::vector<Bar> parse_bars(const std::string& svg) {
  static const std::regex rect(R"re(<rect class="bar"[^>]*height="([0-9.]+)"[^>]*data-count="([0-9]+)")re");
  std::vector<Bar> bars;
  for (std::sregex_iterator it(svg.begin(), svg.end(), rect), end; it != end; ++it) {
    bars.push_back({std::stod((*it)[1]), std::stol((*it)[2])});
  }
  return bars;
}

std::size_t count_substr(const std::string& s, const std::string& needle) {
  std::size_t n = 0;
  for (auto pos = s.find(needle); pos != std::string::npos; pos = s.find(needle, pos + 1)) ++n;
  return n;
}

}  // namespace

TEST_CASE("histogram boundary rules") {
  const auto h = report::make_histogram({0, 0, 0}, 0.0, 1.0, 10);
  CHECK(h.counts[0] == 3);
  CHECK(h.total() == 3);

  const auto e = report::make_histogram({0.5, 1.0, -3.0, 7.0}, 0.0, 1.0, 2);
  CHECK(e.counts == std::vector<std::int64_t>{1, 3});  // 0.5 goes up; 1.0 closed; out-of-range clamps
  CHECK(report::make_histogram({0.2}, 0.0, 1.0, 1).counts == std::vector<std::int64_t>{1});

  CHECK_THROWS_AS(report::make_histogram({}, 0.0, 1.0, 5), ValidationError);
  CHECK_THROWS_AS(report::make_histogram({0.1}, 0.0, 1.0, 0), ValidationError);
  CHECK_THROWS_AS(report::make_histogram({0.1}, 1.0, 1.0, 3), ValidationError);
}

TEST_CASE("histogram matches an independent recount") {
  std::mt19937_64 rng(10);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (const std::size_t bins : {1u, 7u, 20u, 33u}) {
    std::vector<double> v(1000);
    for (auto& x : v) x = u(rng);
    v[0] = 1.0;
    v[1] = 0.0;
    const auto h = report::make_histogram(v, 0.0, 1.0, bins);
    std::vector<std::int64_t> ref(bins, 0);
    for (const double x : v) {
      std::size_t b = 0;
      while (b + 1 < bins && x >= h.edges[b + 1]) ++b;
      ++ref[b];
    }
    CHECK(h.counts == ref);
    CHECK(h.total() == 1000);
  }
}

TEST_CASE("summary metrics on a hand-built result") {
  const auto s = report::summary_metrics(hand_result(), 0.5, 0.8);
  CHECK(s.samples == 4);
  CHECK(s.evasion_rate == doctest::Approx(3.0 / 4));        // 0.62, 0.55, 0.50
  CHECK(s.dual_objective_rate == doctest::Approx(2.0 / 4)); // 0.62@0.91, 0.50@0.80
  CHECK(s.routing_stability == doctest::Approx(3.0 / 4));
  CHECK(s.routing_stability_evading == doctest::Approx(2.0 / 3));
  CHECK(s.mean_p_ndmf == doctest::Approx((0.62 + 0.30 + 0.55 + 0.50) / 4));
  CHECK(s.mean_uplift == doctest::Approx((0.57 + 0.20 + 0.53 + 0.30) / 4));
  CHECK(s.mean_similarity == doctest::Approx((0.91 + 0.95 + 0.71 + 0.80) / 4));

  EvalResult all_evade;
  for (int i = 0; i < 5; ++i) all_evade.records.push_back(rec("m" + std::to_string(i), 0.1, 0.6, 0.9, true));
  CHECK(report::summary_metrics(all_evade).evasion_rate == 1.0);
  CHECK_THROWS_AS(report::summary_metrics(EvalResult{}), ValidationError);
}

TEST_CASE("summary rates stay ordered on random results") {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int t = 0; t < 100; ++t) {
    EvalResult r;
    const int n = 1 + static_cast<int>(rng() % 30);
    for (int i = 0; i < n; ++i) {
      r.records.push_back(rec("s" + std::to_string(i), 0.0, u(rng), u(rng), rng() % 2 == 0));
    }
    const auto s = report::summary_metrics(r);
    CHECK(s.dual_objective_rate <= s.evasion_rate);
    for (const double x : {s.evasion_rate, s.dual_objective_rate, s.routing_stability}) {
      CHECK(x >= 0.0);
      CHECK(x <= 1.0);
    }
  }
}

TEST_CASE("result CSV matches the golden file and reads back") {
  testing::TempDir dir;
  std::ostringstream out;
  report::write_csv(hand_result(), out);
  CHECK(out.str() == testing::slurp(std::filesystem::path(OPADV_GOLDEN_DIR) / "eval_hand.csv"));

  report::emit_csv(hand_result(), dir / "eval.csv");
  const auto back = report::read_eval_csv(dir / "eval.csv");
  const auto orig = hand_result();
  REQUIRE(back.records.size() == orig.records.size());
  for (std::size_t i = 0; i < orig.records.size(); ++i) {
    const auto& a = orig.records[i];
    const auto& b = back.records[i];
    CHECK(a.sample_id == b.sample_id);
    CHECK(std::abs(a.p_nm_final - b.p_nm_final) <= 5e-7);
    CHECK(std::abs(a.uplift - b.uplift) <= 5e-7);
    CHECK(std::abs(a.similarity - b.similarity) <= 5e-7);
    CHECK(a.same_cluster == b.same_cluster);
    CHECK(a.inserted_total == b.inserted_total);
  }
}

TEST_CASE("histogram and summary CSV layout") {
  const auto h = report::make_histogram({0.1, 0.1, 0.9}, 0.0, 1.0, 2);
  std::ostringstream out;
  report::write_csv(h, out);
  CHECK(out.str() == "bin_lo,bin_hi,count\n0.000000,0.500000,2\n0.500000,1.000000,1\n");

  std::ostringstream sum;
  report::write_csv(report::summary_metrics(hand_result()), sum);
  CHECK(sum.str() == testing::slurp(std::filesystem::path(OPADV_GOLDEN_DIR) / "summary_hand.csv"));
}

TEST_CASE("empty inputs are never written") {
  std::ostringstream out;
  CHECK_THROWS_AS(report::write_csv(EvalResult{}, out), ValidationError);
  CHECK_THROWS_AS(report::write_csv(report::Histogram{}, out), ValidationError);
  CHECK(out.str().empty());
  testing::TempDir dir;
  CHECK_THROWS_AS(report::emit_csv(hand_result(), dir / "missing-dir" / "x.csv"), RuntimeFailure);
}

TEST_CASE("svg bars re-parse to the histogram counts") {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> g(0.45, 0.15);
  std::vector<double> v(500);
  for (auto& x : v) x = g(rng);
  const auto h = report::make_histogram(v, 0.0, 1.0, 20);
  const auto svg = report::render_svg_histogram(h, "Uplift <test>");
  CHECK(svg.rfind("<?xml", 0) == 0);
  CHECK(svg.find("</svg>") != std::string::npos);
  CHECK(svg.find("Uplift &lt;test&gt;") != std::string::npos);
  CHECK(count_substr(svg, "<rect") == 20);
  CHECK(count_substr(svg, "class=\"axis\"") >= 2);
  const auto bars = parse_bars(svg);
  REQUIRE(bars.size() == 20);
  const auto max_count = *std::max_element(h.counts.begin(), h.counts.end());
  double max_h = 0.0;
  for (const auto& b : bars) max_h = std::max(max_h, b.height);
  for (std::size_t i = 0; i < bars.size(); ++i) {
    CHECK(bars[i].count == h.counts[i]);
    CHECK(std::abs(bars[i].height / max_h - double(h.counts[i]) / double(max_count)) <= 1e-3);
  }
  CHECK(report::render_svg_histogram(h, "Uplift <test>") == svg);

  const auto one = report::make_histogram({0.3}, 0.0, 1.0, 1);
  CHECK(count_substr(report::render_svg_histogram(one, "x"), "<rect") == 1);
}

TEST_CASE("constant IDS gives zero uplift and evaluation is repeatable") {
  SyntheticCorpusSpec spec;
  spec.vocab_size = 10;
  spec.n_malware = 12;
  spec.n_benign = 12;
  spec.mean_length = 40;
  const auto corpus = generate_synthetic_corpus(spec, 3);
  const auto malware = malware_only(corpus);
  const auto router = ids::train_router(corpus, 2, 3);
  agent::PpoConfig cfg;
  cfg.hidden = {8};
  auto params = agent::init_policy(13, 10, cfg, 1);
  for (auto& b : params.actor.bias(1)) b = 3.0;  // activate every op-code

  const auto flat = std::make_shared<const ids::IdsModel>(testing::logistic(std::vector<double>(10, 0.0), 0.0));
  const auto r = report::evaluate_agent(params, flat, router, malware, env::EnvConfig{}, 1);
  for (const auto& x : r.records) CHECK(x.uplift == 0.0);

  ids::IdsConfig icfg;
  icfg.seed = 3;
  const auto model = std::make_shared<const ids::IdsModel>(ids::train_ids(corpus, icfg));
  const auto a = report::evaluate_agent(params, model, router, malware, env::EnvConfig{}, 1);
  const auto b = report::evaluate_agent(params, model, router, malware, env::EnvConfig{}, 1);
  std::ostringstream ca, cb;
  report::write_csv(a, ca);
  report::write_csv(b, cb);
  CHECK(ca.str() == cb.str());
  for (const auto& x : a.records) {
    CHECK(x.similarity <= 1.0 + 1e-12);
    CHECK(x.uplift >= -1.0);
    CHECK(x.uplift <= 1.0);
  }
  CHECK_THROWS_AS(report::evaluate_agent(params, model, router, Corpus{}, env::EnvConfig{}, 1), ValidationError);
}

TEST_CASE("fixed-seed evaluation matches the frozen golden CSV") {
  SyntheticCorpusSpec spec;
  spec.vocab_size = 16;
  spec.n_malware = 20;
  spec.n_benign = 20;
  spec.mean_length = 300;
  const auto corpus = generate_synthetic_corpus(spec, 2024);
  ids::IdsConfig icfg;
  icfg.seed = 2024;
  const auto model = std::make_shared<const ids::IdsModel>(ids::train_ids(corpus, icfg));
  const auto router = ids::train_router(corpus, 3, 2024);
  agent::PpoConfig cfg;
  cfg.hidden = {8};
  auto params = agent::init_policy(19, 16, cfg, 2024);
  // Two op-codes pass the gate, so each step inserts a few of each.
  params.actor.bias(1)[2] = 3.0;
  params.actor.bias(1)[9] = 3.0;
  const auto r = report::evaluate_agent(params, model, router, malware_only(corpus), env::EnvConfig{}, 2024);
  std::ostringstream out;
  report::write_csv(r, out);
  const auto golden = std::filesystem::path(OPADV_GOLDEN_DIR) / "eval_fixed_seed.csv";
  if (std::getenv("OPADV_REGEN_GOLDEN")) testing::spit(golden, out.str());
  CHECK(out.str() == testing::slurp(golden));
}
