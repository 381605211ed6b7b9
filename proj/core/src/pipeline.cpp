#include "opadv/pipeline.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>

#include "opadv/agent.hpp"
#include "opadv/corpus.hpp"
#include "opadv/env.hpp"
#include "opadv/error.hpp"
#include "opadv/ids.hpp"
#include "opadv/report.hpp"
#include "opadv/rng.hpp"
#include "opadv/selfcheck.hpp"
#include "opadv/text.hpp"

namespace opadv::pipeline {

namespace fs = std::filesystem;

LogLevel log_level_from_env() {
  const char* v = std::getenv("OPADV_LOG");
  if (!v) return LogLevel::kInfo;
  const auto s = text::to_lower(v);
  if (s == "quiet" || s == "0" || s == "off") return LogLevel::kQuiet;
  if (s == "debug" || s == "2") return LogLevel::kDebug;
  return LogLevel::kInfo;
}

const std::vector<std::string>& subcommands() {
  static const std::vector<std::string> names = {"gen-corpus",   "ingest",         "train-ids",
                                                 "train-router", "train-agent",    "train-ensemble",
                                                 "evaluate",     "report",         "selfcheck"};
  return names;
}

std::string usage() {
  return "usage: opadv [--workdir DIR] [--config FILE] [--seed N] [--set section.key=value]... "
         "<subcommand>\n"
         "subcommands:\n"
         "  gen-corpus      synthetic vocabulary and labelled corpus\n"
         "  ingest          build a corpus from <ingest_dir>/{malware,benign}/* listings\n"
         "  train-ids       train the discriminator, print held-out metrics\n"
         "  train-router    k-means router over normalized counts\n"
         "  train-agent     PPO agent on training-split malware\n"
         "  train-ensemble  K agents plus pairwise dissimilarity\n"
         "  evaluate        greedy episodes on held-out malware\n"
         "  report          summary, histograms (CSV and SVG)\n"
         "  selfcheck       gradient, GAE and clip oracles\n"
         "environment: OPADV_LOG=quiet|info|debug\n";
}

namespace {

// Stream identifiers for mix_seed; fixed so artifacts stay reproducible.
constexpr std::uint64_t kCorpusStream = 0xC0;
constexpr std::uint64_t kRouterStream = 0xD0;
constexpr std::uint64_t kEvalStream = 0xEE;

class Stage {
 public:
  Stage(const config::RunConfig& cfg, fs::path workdir, Streams streams)
      : cfg_(cfg), workdir_(std::move(workdir)), s_(streams) {}

  int run(std::string_view cmd) {
    if (cmd == "gen-corpus") return gen_corpus();
    if (cmd == "ingest") return ingest();
    if (cmd == "train-ids") return train_ids();
    if (cmd == "train-router") return train_router();
    if (cmd == "train-agent") return train_agent();
    if (cmd == "train-ensemble") return train_ensemble();
    if (cmd == "evaluate") return evaluate();
    if (cmd == "report") return report();
    if (cmd == "selfcheck") return selfcheck();
    throw std::logic_error("unreachable");
  }

 private:
  fs::path at(const fs::path& p) const { return workdir_ / p; }

  fs::path output(const fs::path& p) const {
    const auto full = at(p);
    if (full.has_parent_path()) fs::create_directories(full.parent_path());
    return full;
  }

  std::ostream& info() { return s_.level >= LogLevel::kInfo ? s_.log : null_; }

  void require(const fs::path& p, const char* what) const {
    if (!fs::exists(at(p))) {
      throw ValidationError(std::string("missing ") + what + " " + at(p).string());
    }
  }

  Corpus corpus() const {
    require(cfg_.paths.corpus, "corpus");
    return load_corpus(at(cfg_.paths.corpus));
  }

  CorpusSplit split(const Corpus& c) const { return stratified_split(c, cfg_.ids.split, cfg_.ids.seed); }

  Corpus eval_malware(const Corpus& c) const {
    auto held = malware_only(split(c).held_out);
    if (held.empty()) throw ValidationError("no held-out malware to evaluate on");
    if (cfg_.eval.n_eval > 0 && cfg_.eval.n_eval < held.size()) held.resize(cfg_.eval.n_eval);
    return held;
  }

  std::shared_ptr<const ids::IdsModel> ids_model() const {
    require(cfg_.paths.ids, "checkpoint");
    return std::make_shared<const ids::IdsModel>(ids::IdsModel::load(at(cfg_.paths.ids)));
  }

  ids::RouterModel router() const {
    require(cfg_.paths.router, "checkpoint");
    return ids::RouterModel::load(at(cfg_.paths.router));
  }

  agent::EnvFactory env_factory(const Corpus& c, std::shared_ptr<const ids::IdsModel> model) const {
    auto malware = std::make_shared<const Corpus>(malware_only(split(c).train));
    if (malware->empty()) throw ValidationError("no training malware");
    const auto env_cfg = cfg_.env;
    return [malware, model, env_cfg](std::uint64_t seed) {
      return env::ObfuscationEnv(malware, model, env_cfg, seed);
    };
  }

  static void write_log(const std::vector<agent::TrainLogRecord>& log, const fs::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw RuntimeFailure("cannot write " + path.string());
    agent::write_training_log(log, out);
    if (!out) throw RuntimeFailure("write failed: " + path.string());
  }

  static void write_text(const std::string& body, const fs::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw RuntimeFailure("cannot write " + path.string());
    out << body;
    if (!out) throw RuntimeFailure("write failed: " + path.string());
  }

  int gen_corpus() {
    auto vocab = OpcodeVocabulary::synthetic(cfg_.corpus.vocab_size);
    auto c = generate_synthetic_corpus(cfg_.corpus, mix_seed(cfg_.seed, kCorpusStream));
    vocab.save(output(cfg_.paths.vocab));
    save_corpus(c, output(cfg_.paths.corpus));
    s_.out << "corpus samples=" << c.size() << " dim=" << vocab.size() << " hash=" << std::hex
           << corpus_hash(c) << std::dec << '\n';
    return 0;
  }

  int ingest() {
    const auto root = at(cfg_.paths.ingest_dir);
    std::vector<std::pair<Label, fs::path>> files;
    for (const auto label : {Label::kMalware, Label::kBenign}) {
      const auto dir = root / std::string(to_string(label));
      if (!fs::is_directory(dir)) throw ValidationError("missing input directory " + dir.string());
      std::vector<fs::path> found;
      for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.is_regular_file()) found.push_back(entry.path());
      }
      std::sort(found.begin(), found.end());
      for (auto& p : found) files.emplace_back(label, std::move(p));
    }
    if (files.empty()) throw ValidationError("no listings under " + root.string());

    auto read = [](const fs::path& p) {
      std::ifstream in(p, std::ios::binary);
      if (!in) throw RuntimeFailure("cannot read " + p.string());
      std::ostringstream ss;
      ss << in.rdbuf();
      return ss.str();
    };

    const auto vocab_path = at(cfg_.paths.vocab);
    std::optional<OpcodeVocabulary> vocab;
    if (fs::exists(vocab_path)) {
      vocab = OpcodeVocabulary::load(vocab_path);
    } else {
      std::string all;
      for (const auto& [label, p] : files) all += read(p) + "\n";
      vocab = OpcodeVocabulary::from_lines(all);
      vocab->save(output(cfg_.paths.vocab));
    }

    Corpus c;
    for (const auto& [label, p] : files) {
      LabeledSample s;
      s.id = std::string(to_string(label)) + "-" + p.filename().string();
      std::replace_if(s.id.begin(), s.id.end(), [](unsigned char ch) { return std::isspace(ch) || ch == '='; },
                      '_');
      s.label = label;
      try {
        s.counts = parse_disassembly(read(p), *vocab, cfg_.unknown_policy);
      } catch (const ValidationError& e) {
        throw ValidationError(p.string() + ": " + e.what());
      }
      c.push_back(std::move(s));
    }
    save_corpus(c, output(cfg_.paths.corpus));
    s_.out << "ingested samples=" << c.size() << " dim=" << c.front().counts.size() << '\n';
    return 0;
  }

  int train_ids() {
    const auto c = corpus();
    info() << "training " << ids::to_string(cfg_.ids.kind) << " IDS on " << c.size() << " samples\n";
    const auto model = ids::train_ids(c, cfg_.ids);
    model.save(output(cfg_.paths.ids));
    const auto m = ids::evaluate_ids(model, split(c).held_out, cfg_.eval.threshold);
    s_.out << "ids held-out accuracy=" << text::format_fixed(m.accuracy)
           << " tpr=" << text::format_fixed(m.true_positive_rate) << " fpr=" << text::format_fixed(m.false_positive_rate) << '\n';
    std::ostringstream csv;
    csv << "metric,value\n"
        << "accuracy," << text::format_fixed(m.accuracy) << '\n'
        << "tpr," << text::format_fixed(m.true_positive_rate) << '\n'
        << "fpr," << text::format_fixed(m.false_positive_rate) << '\n'
        << "threshold," << text::format_fixed(m.threshold) << '\n';
    write_text(csv.str(), output(cfg_.paths.reports / "ids_metrics.csv"));
    return 0;
  }

  int train_router() {
    const auto c = corpus();
    const auto r = ids::train_router(split(c).train, cfg_.router_k, mix_seed(cfg_.seed, kRouterStream));
    r.save(output(cfg_.paths.router));
    s_.out << "router k=" << r.k() << " dim=" << r.input_dim() << '\n';
    return 0;
  }

  int train_agent() {
    const auto c = corpus();
    const auto factory = env_factory(c, ids_model());
    info() << "training agent for " << cfg_.ppo.total_steps << " steps\n";
    const auto result = agent::train_agent(factory, cfg_.ppo);
    agent::save_agent(result.params, cfg_.ppo, output(cfg_.paths.agent));
    write_log(result.log, output(cfg_.paths.training_log));
    const auto& last = result.log.back();
    s_.out << "agent updates=" << result.log.size() << " final_success_rate="
           << text::format_fixed(last.success_rate) << " final_mean_uplift="
           << text::format_fixed(last.mean_uplift) << '\n';
    return 0;
  }

  int train_ensemble() {
    const auto c = corpus();
    const auto model = ids_model();
    const auto r = router();
    const auto factory = env_factory(c, model);
    const auto held = eval_malware(c);
    info() << "training ensemble of " << cfg_.ensemble.size() << " agents\n";
    const auto result = agent::train_ensemble(factory, cfg_.ensemble, cfg_.ppo, held);

    std::ostringstream agents_csv;
    agents_csv << "agent,seed,entropy_coef,evasion_rate,mean_uplift,mean_similarity,dual_objective_rate\n";
    for (std::size_t i = 0; i < result.agents.size(); ++i) {
      auto ppo = cfg_.ppo;
      ppo.seed = cfg_.ensemble.seeds[i];
      ppo.entropy_coef = cfg_.ensemble.entropy_coefs[i];
      const auto name = "agent-" + std::to_string(i);
      agent::save_agent(result.agents[i].params, ppo, output(cfg_.paths.ensemble_dir / (name + ".json")));
      write_log(result.agents[i].log, output(cfg_.paths.logs_dir / "ensemble" / (name + ".jsonl")));
      const auto ev = report::evaluate_agent(result.agents[i].params, model, r, held, cfg_.env,
                                             mix_seed(cfg_.seed, kEvalStream), name);
      const auto sm = report::summary_metrics(ev, cfg_.eval.threshold, cfg_.eval.similarity_bar);
      agents_csv << name << ',' << ppo.seed << ',' << text::format_fixed(ppo.entropy_coef) << ','
                 << text::format_fixed(sm.evasion_rate) << ',' << text::format_fixed(sm.mean_uplift)
                 << ',' << text::format_fixed(sm.mean_similarity) << ','
                 << text::format_fixed(sm.dual_objective_rate) << '\n';
    }
    write_text(agents_csv.str(), output(cfg_.paths.reports / "ensemble_agents.csv"));

    std::ostringstream dis;
    dis << "agent_a,agent_b,dissimilarity\n";
    for (const auto& p : result.dissimilarity.pairs) {
      dis << "agent-" << p.a << ",agent-" << p.b << ',' << text::format_fixed(p.dissimilarity) << '\n';
    }
    write_text(dis.str(), output(cfg_.paths.reports / "ensemble_dissimilarity.csv"));
    s_.out << "ensemble agents=" << result.agents.size()
           << " mean_dissimilarity=" << text::format_fixed(result.dissimilarity.mean) << '\n';
    return 0;
  }

  int evaluate() {
    require(cfg_.paths.agent, "checkpoint");
    const auto [params, ppo] = agent::load_agent(at(cfg_.paths.agent));
    const auto model = ids_model();
    const auto r = router();
    const auto c = corpus();
    const auto held = eval_malware(c);
    const auto agent_id = cfg_.paths.agent.stem().string();
    const auto result = report::evaluate_agent(params, model, r, held, cfg_.env,
                                               mix_seed(cfg_.seed, kEvalStream), agent_id);
    report::emit_csv(result, output(cfg_.paths.reports / "eval.csv"));

    ObfuscationRepository repo(output(cfg_.paths.repository), malware_only(c));
    for (std::size_t i = 0; i < result.records.size(); ++i) {
      const auto& e = result.records[i];
      ObfuscationRecord rec;
      rec.parent_id = e.sample_id;
      rec.agent_id = e.agent_id;
      rec.episode = static_cast<std::int64_t>(i);
      rec.counts = e.final_counts;
      rec.p_nm_initial = e.p_nm_initial;
      rec.p_nm_final = e.p_nm_final;
      rec.similarity = e.similarity;
      repo.record(rec);
    }
    const auto sm = report::summary_metrics(result, cfg_.eval.threshold, cfg_.eval.similarity_bar);
    s_.out << "evaluated samples=" << sm.samples << " mean_uplift=" << text::format_fixed(sm.mean_uplift)
           << " evasion_rate=" << text::format_fixed(sm.evasion_rate) << '\n';
    return 0;
  }

  int report() {
    const auto reports = cfg_.paths.reports;
    const auto result = report::read_eval_csv(at(reports / "eval.csv"));
    const auto sm = report::summary_metrics(result, cfg_.eval.threshold, cfg_.eval.similarity_bar);
    report::emit_csv(sm, output(reports / "summary.csv"));

    std::vector<double> uplift, similarity;
    for (const auto& r : result.records) {
      uplift.push_back(r.uplift);
      similarity.push_back(r.similarity);
    }
    const auto hu = report::make_histogram(uplift, 0.0, 1.0, cfg_.eval.uplift_bins);
    const auto hs = report::make_histogram(similarity, 0.0, 1.0, cfg_.eval.similarity_bins);
    report::emit_csv(hu, output(reports / "uplift_hist.csv"));
    report::emit_csv(hs, output(reports / "similarity_hist.csv"));
    report::emit_svg_histogram(hu, "Uplift in P(non-malicious)", output(reports / "uplift_hist.svg"));
    report::emit_svg_histogram(hs, "Op-code similarity", output(reports / "similarity_hist.svg"));

    s_.out << "samples=" << sm.samples << '\n'
           << "mean_p_ndmf=" << text::format_fixed(sm.mean_p_ndmf) << '\n'
           << "mean_uplift=" << text::format_fixed(sm.mean_uplift) << '\n'
           << "mean_similarity=" << text::format_fixed(sm.mean_similarity) << '\n'
           << "evasion_rate=" << text::format_fixed(sm.evasion_rate) << '\n'
           << "dual_objective_rate=" << text::format_fixed(sm.dual_objective_rate) << '\n'
           << "routing_stability=" << text::format_fixed(sm.routing_stability) << '\n'
           << "routing_stability_evading=" << text::format_fixed(sm.routing_stability_evading) << '\n';
    return 0;
  }

  int selfcheck() { return run_selfcheck(s_.out, cfg_.seed) ? 0 : 2; }

  const config::RunConfig& cfg_;
  fs::path workdir_;
  Streams s_;
  std::ostream null_{nullptr};
};

}  // namespace

int dispatch(std::string_view subcommand, const config::RunConfig& cfg, const fs::path& workdir,
             Streams streams) {
  const auto& names = subcommands();
  if (std::find(names.begin(), names.end(), subcommand) == names.end()) {
    streams.log << "unknown subcommand '" << subcommand << "'\n" << usage();
    return 1;
  }
  try {
    cfg.validate();
    if (streams.level >= LogLevel::kInfo) {
      streams.log << "opadv " << subcommand << " seed=" << cfg.seed << " workdir=" << workdir.string()
                  << '\n';
      for (const auto line : text::split_lines(config::render_config(cfg))) {
        if (!line.empty()) streams.log << "  " << line << '\n';
      }
    }
    Stage stage(cfg, workdir, streams);
    return stage.run(subcommand);
  } catch (const ValidationError& e) {
    streams.log << "error: " << e.what() << '\n';
    return 1;
  } catch (const RuntimeFailure& e) {
    streams.log << "failure: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    streams.log << "failure: " << e.what() << '\n';
    return 2;
  }
}

int dispatch(std::string_view subcommand, const config::RunConfig& cfg, const fs::path& workdir) {
  return dispatch(subcommand, cfg, workdir, Streams{std::cout, std::cerr, log_level_from_env()});
}

}  // namespace opadv::pipeline
