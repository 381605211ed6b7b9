#include "opadv/config.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include "opadv/error.hpp"
#include "opadv/text.hpp"

namespace opadv::config {
namespace {

using Check = std::function<std::optional<std::string>(double)>;

struct Entry {
  std::string name;  // section.key
  std::function<void(RunConfig&, std::string_view)> set;
  std::function<std::string(const RunConfig&)> get;
};

class TypeMismatch : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <typename T>
T parse_number(std::string_view v) {
  try {
    if constexpr (std::is_floating_point_v<T>) {
      return static_cast<T>(text::parse_double(v));
    } else {
      const auto x = text::parse_int(v);
      if constexpr (std::is_unsigned_v<T>) {
        if (x < 0) throw TypeMismatch("expected a non-negative integer");
      }
      return static_cast<T>(x);
    }
  } catch (const std::invalid_argument&) {
    throw TypeMismatch(std::is_floating_point_v<T> ? "expected a number" : "expected an integer");
  }
}

template <typename T>
std::string render_number(T v) {
  if constexpr (std::is_floating_point_v<T>) {
    return text::format_exact(v);
  } else {
    return std::to_string(v);
  }
}

template <typename T>
std::vector<T> parse_list(std::string_view v) {
  std::vector<T> out;
  for (std::size_t start = 0; start <= v.size();) {
    auto comma = v.find(',', start);
    if (comma == std::string_view::npos) comma = v.size();
    const auto item = text::trim(v.substr(start, comma - start));
    if (item.empty()) throw TypeMismatch("expected a comma-separated list");
    out.push_back(parse_number<T>(item));
    start = comma + 1;
  }
  return out;
}

template <typename T>
std::string render_list(const std::vector<T>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ", ";
    out += render_number(v[i]);
  }
  return out;
}

Check range(double lo, double hi, bool lo_open, bool hi_open, std::string message) {
  return [=](double x) -> std::optional<std::string> {
    const bool ok_lo = lo_open ? x > lo : x >= lo;
    const bool ok_hi = hi_open ? x < hi : x <= hi;
    if (ok_lo && ok_hi) return std::nullopt;
    return message;
  };
}

Check at_least(double lo, std::string message) {
  return [=](double x) -> std::optional<std::string> {
    if (x >= lo) return std::nullopt;
    return message;
  };
}

Check positive(std::string message) {
  return [=](double x) -> std::optional<std::string> {
    if (x > 0) return std::nullopt;
    return message;
  };
}

template <typename T, typename Access>
Entry number(std::string name, Access access, Check check = {}) {
  return Entry{name,
               [access, check](RunConfig& c, std::string_view v) {
                 const T x = parse_number<T>(v);
                 if (check) {
                   if (auto err = check(static_cast<double>(x))) throw ValidationError(*err);
                 }
                 access(c) = x;
               },
               [access](const RunConfig& c) {
                 return render_number(access(const_cast<RunConfig&>(c)));
               }};
}

template <typename Access>
Entry path(std::string name, Access access) {
  return Entry{name,
               [access](RunConfig& c, std::string_view v) {
                 if (v.empty()) throw TypeMismatch("expected a path");
                 access(c) = std::filesystem::path(std::string(v));
               },
               [access](const RunConfig& c) { return access(const_cast<RunConfig&>(c)).string(); }};
}

const std::vector<Entry>& entries() {
  static const std::vector<Entry> table = [] {
    std::vector<Entry> e;
    // run
    e.push_back(number<std::uint64_t>("run.seed", [](RunConfig& c) -> auto& { return c.seed; }));
    // corpus
    e.push_back(number<std::size_t>("corpus.vocab_size", [](RunConfig& c) -> auto& { return c.corpus.vocab_size; },
                                    at_least(8, "vocab_size must be >= 8")));
    e.push_back(number<std::size_t>("corpus.n_malware", [](RunConfig& c) -> auto& { return c.corpus.n_malware; },
                                    at_least(1, "n_malware must be >= 1")));
    e.push_back(number<std::size_t>("corpus.n_benign", [](RunConfig& c) -> auto& { return c.corpus.n_benign; },
                                    at_least(1, "n_benign must be >= 1")));
    e.push_back(number<std::size_t>("corpus.n_families", [](RunConfig& c) -> auto& { return c.corpus.n_families; },
                                    at_least(1, "n_families must be >= 1")));
    e.push_back(number<std::size_t>("corpus.n_benign_families",
                                    [](RunConfig& c) -> auto& { return c.corpus.n_benign_families; },
                                    at_least(1, "n_benign_families must be >= 1")));
    e.push_back(number<double>("corpus.concentration", [](RunConfig& c) -> auto& { return c.corpus.concentration; },
                               positive("concentration must be > 0")));
    e.push_back(number<double>("corpus.mean_length", [](RunConfig& c) -> auto& { return c.corpus.mean_length; },
                               positive("mean_length must be > 0")));
    e.push_back(Entry{"corpus.unknown_policy",
                      [](RunConfig& c, std::string_view v) { c.unknown_policy = parse_unknown_policy(v); },
                      [](const RunConfig& c) -> std::string {
                        switch (c.unknown_policy) {
                          case UnknownPolicy::kReject: return "reject";
                          case UnknownPolicy::kIgnore: return "ignore";
                          case UnknownPolicy::kOovBucket: break;
                        }
                        return "oov_bucket";
                      }});
    // ids
    e.push_back(Entry{"ids.kind",
                      [](RunConfig& c, std::string_view v) { c.ids.kind = ids::parse_model_kind(v); },
                      [](const RunConfig& c) { return std::string(ids::to_string(c.ids.kind)); }});
    e.push_back(number<double>("ids.split", [](RunConfig& c) -> auto& { return c.ids.split; },
                               range(0, 1, true, true, "split must be in (0,1)")));
    e.push_back(number<double>("ids.regularization", [](RunConfig& c) -> auto& { return c.ids.regularization; },
                               at_least(0, "regularization must be >= 0")));
    e.push_back(number<double>("ids.learning_rate", [](RunConfig& c) -> auto& { return c.ids.learning_rate; },
                               positive("learning_rate must be > 0")));
    e.push_back(number<std::size_t>("ids.iterations", [](RunConfig& c) -> auto& { return c.ids.iterations; },
                                    at_least(1, "iterations must be >= 1")));
    e.push_back(number<std::size_t>("ids.trees", [](RunConfig& c) -> auto& { return c.ids.trees; },
                                    at_least(1, "trees must be >= 1")));
    e.push_back(number<std::size_t>("ids.depth", [](RunConfig& c) -> auto& { return c.ids.depth; },
                                    at_least(1, "depth must be >= 1")));
    e.push_back(number<std::size_t>("ids.min_leaf", [](RunConfig& c) -> auto& { return c.ids.min_leaf; },
                                    at_least(1, "min_leaf must be >= 1")));
    e.push_back(number<std::size_t>("ids.features_per_split",
                                    [](RunConfig& c) -> auto& { return c.ids.features_per_split; }));
    // router
    e.push_back(number<std::size_t>("router.k", [](RunConfig& c) -> auto& { return c.router_k; },
                                    at_least(1, "k must be >= 1")));
    // env
    e.push_back(number<std::int64_t>("env.max_steps", [](RunConfig& c) -> auto& { return c.env.max_steps; },
                                     at_least(1, "max_steps must be >= 1")));
    e.push_back(number<double>("env.budget_fraction", [](RunConfig& c) -> auto& { return c.env.budget_fraction; },
                               positive("budget_fraction must be > 0")));
    e.push_back(number<double>("env.success_threshold",
                               [](RunConfig& c) -> auto& { return c.env.success_threshold; },
                               range(0, 1, true, true, "success_threshold must be in (0,1)")));
    e.push_back(number<double>("env.w_uplift", [](RunConfig& c) -> auto& { return c.env.w_uplift; },
                               at_least(0, "w_uplift must be >= 0")));
    e.push_back(number<double>("env.w_cost", [](RunConfig& c) -> auto& { return c.env.w_cost; },
                               at_least(0, "w_cost must be >= 0")));
    e.push_back(number<double>("env.terminal_bonus", [](RunConfig& c) -> auto& { return c.env.terminal_bonus; },
                               at_least(0, "terminal_bonus must be >= 0")));
    e.push_back(number<std::int64_t>("env.per_step_insertion_cap",
                                     [](RunConfig& c) -> auto& { return c.env.per_step_insertion_cap; },
                                     at_least(0, "per_step_insertion_cap must be >= 0")));
    // ppo
    e.push_back(number<double>("ppo.clip", [](RunConfig& c) -> auto& { return c.ppo.clip; },
                               range(0, 1, true, true, "clip must be in (0,1)")));
    e.push_back(number<double>("ppo.gamma", [](RunConfig& c) -> auto& { return c.ppo.gamma; },
                               range(0, 1, false, false, "gamma must be in [0,1]")));
    e.push_back(number<double>("ppo.lambda", [](RunConfig& c) -> auto& { return c.ppo.lambda; },
                               range(0, 1, false, false, "lambda must be in [0,1]")));
    e.push_back(number<std::size_t>("ppo.epochs", [](RunConfig& c) -> auto& { return c.ppo.epochs; },
                                    at_least(1, "epochs must be >= 1")));
    e.push_back(number<std::size_t>("ppo.minibatch", [](RunConfig& c) -> auto& { return c.ppo.minibatch; },
                                    at_least(1, "minibatch must be >= 1")));
    e.push_back(number<std::size_t>("ppo.horizon", [](RunConfig& c) -> auto& { return c.ppo.horizon; },
                                    at_least(1, "horizon must be >= 1")));
    e.push_back(number<double>("ppo.learning_rate", [](RunConfig& c) -> auto& { return c.ppo.learning_rate; },
                               positive("learning_rate must be > 0")));
    e.push_back(number<double>("ppo.value_coef", [](RunConfig& c) -> auto& { return c.ppo.value_coef; },
                               at_least(0, "value_coef must be >= 0")));
    e.push_back(number<double>("ppo.entropy_coef", [](RunConfig& c) -> auto& { return c.ppo.entropy_coef; },
                               at_least(0, "entropy_coef must be >= 0")));
    e.push_back(number<std::int64_t>("ppo.total_steps", [](RunConfig& c) -> auto& { return c.ppo.total_steps; },
                                     at_least(1, "total_steps must be >= 1")));
    e.push_back(Entry{"ppo.hidden",
                      [](RunConfig& c, std::string_view v) {
                        auto h = parse_list<std::size_t>(v);
                        for (const auto x : h) {
                          if (x < 1) throw ValidationError("hidden layer sizes must be >= 1");
                        }
                        c.ppo.hidden = std::move(h);
                      },
                      [](const RunConfig& c) { return render_list(c.ppo.hidden); }});
    e.push_back(number<double>("ppo.initial_mean_bias",
                               [](RunConfig& c) -> auto& { return c.ppo.initial_mean_bias; }));
    e.push_back(number<double>("ppo.initial_log_std", [](RunConfig& c) -> auto& { return c.ppo.initial_log_std; },
                               range(-5, 2, false, false, "initial_log_std must be in [-5,2]")));
    // ensemble
    e.push_back(Entry{"ensemble.seeds",
                      [](RunConfig& c, std::string_view v) { c.ensemble.seeds = parse_list<std::uint64_t>(v); },
                      [](const RunConfig& c) { return render_list(c.ensemble.seeds); }});
    e.push_back(Entry{"ensemble.entropy_coefs",
                      [](RunConfig& c, std::string_view v) {
                        c.ensemble.entropy_coefs = parse_list<double>(v);
                      },
                      [](const RunConfig& c) { return render_list(c.ensemble.entropy_coefs); }});
    // eval
    e.push_back(number<std::size_t>("eval.n_eval", [](RunConfig& c) -> auto& { return c.eval.n_eval; }));
    e.push_back(number<double>("eval.threshold", [](RunConfig& c) -> auto& { return c.eval.threshold; },
                               range(0, 1, true, true, "threshold must be in (0,1)")));
    e.push_back(number<double>("eval.similarity_bar", [](RunConfig& c) -> auto& { return c.eval.similarity_bar; },
                               range(0, 1, false, false, "similarity_bar must be in [0,1]")));
    e.push_back(number<std::size_t>("eval.uplift_bins", [](RunConfig& c) -> auto& { return c.eval.uplift_bins; },
                                    at_least(1, "uplift_bins must be >= 1")));
    e.push_back(number<std::size_t>("eval.similarity_bins",
                                    [](RunConfig& c) -> auto& { return c.eval.similarity_bins; },
                                    at_least(1, "similarity_bins must be >= 1")));
    // paths
    e.push_back(path("paths.vocab", [](RunConfig& c) -> auto& { return c.paths.vocab; }));
    e.push_back(path("paths.corpus", [](RunConfig& c) -> auto& { return c.paths.corpus; }));
    e.push_back(path("paths.repository", [](RunConfig& c) -> auto& { return c.paths.repository; }));
    e.push_back(path("paths.ingest_dir", [](RunConfig& c) -> auto& { return c.paths.ingest_dir; }));
    e.push_back(path("paths.ids", [](RunConfig& c) -> auto& { return c.paths.ids; }));
    e.push_back(path("paths.router", [](RunConfig& c) -> auto& { return c.paths.router; }));
    e.push_back(path("paths.agent", [](RunConfig& c) -> auto& { return c.paths.agent; }));
    e.push_back(path("paths.ensemble_dir", [](RunConfig& c) -> auto& { return c.paths.ensemble_dir; }));
    e.push_back(path("paths.training_log", [](RunConfig& c) -> auto& { return c.paths.training_log; }));
    e.push_back(path("paths.logs_dir", [](RunConfig& c) -> auto& { return c.paths.logs_dir; }));
    e.push_back(path("paths.reports", [](RunConfig& c) -> auto& { return c.paths.reports; }));
    return e;
  }();
  return table;
}

const Entry* find_entry(const std::string& name) {
  for (const auto& e : entries()) {
    if (e.name == name) return &e;
  }
  return nullptr;
}

std::string where(std::size_t line) {
  return line == 0 ? std::string("command line") : "line " + std::to_string(line);
}

void assign(RunConfig& cfg, const std::string& key, std::string_view value, std::size_t line) {
  const auto* entry = find_entry(key);
  if (!entry) throw ValidationError(where(line) + ": unknown key '" + key + "'");
  try {
    entry->set(cfg, value);
  } catch (const TypeMismatch& e) {
    throw ValidationError(where(line) + ": type mismatch for '" + key + "': " + e.what() +
                          ", got '" + std::string(value) + "'");
  } catch (const ValidationError& e) {
    throw ValidationError(where(line) + ": " + key + ": " + e.what());
  }
}

std::vector<double> default_entropy_coefs(std::size_t k) {
  std::vector<double> out;
  double c = 0.005;
  for (std::size_t i = 0; i < k; ++i, c *= 2.0) out.push_back(c);
  return out;
}

}  // namespace

void RunConfig::propagate_seed() {
  ids.seed = seed;
  ppo.seed = seed;
}

void RunConfig::validate() const {
  corpus.validate();
  ids.validate();
  env.validate();
  ppo.validate();
  ensemble.validate();
  if (router_k < 1) throw ValidationError("router.k must be >= 1");
}

RunConfig parse_config_text(const std::string& text, const std::vector<Override>& overrides) {
  RunConfig cfg;
  std::set<std::string> seen;
  std::string section = "run";
  std::size_t line_no = 0;
  for (const auto raw : text::split_lines(text)) {
    ++line_no;
    auto line = raw;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = text::trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']' || line.size() < 3) {
        throw ValidationError(where(line_no) + ": malformed section header");
      }
      section = std::string(text::trim(line.substr(1, line.size() - 2)));
      static const std::set<std::string> kSections = {"run", "corpus", "ids",  "router", "env",
                                                      "ppo", "ensemble", "eval", "paths"};
      if (!kSections.contains(section)) {
        throw ValidationError(where(line_no) + ": unknown section '" + section + "'");
      }
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ValidationError(where(line_no) + ": expected 'key = value'");
    }
    const auto key = section + "." + std::string(text::trim(line.substr(0, eq)));
    const auto value = text::trim(line.substr(eq + 1));
    if (!seen.insert(key).second) {
      throw ValidationError(where(line_no) + ": duplicate key '" + key + "'");
    }
    assign(cfg, key, value, line_no);
  }
  for (const auto& o : overrides) {
    const auto key = o.key.find('.') == std::string::npos ? "run." + o.key : o.key;
    seen.insert(key);
    assign(cfg, key, o.value, 0);
  }
  if (!seen.contains("run.seed")) throw ValidationError("missing required key 'seed' in [run]");

  if (!seen.contains("ensemble.seeds")) {
    const auto k = seen.contains("ensemble.entropy_coefs") ? cfg.ensemble.entropy_coefs.size()
                                                           : std::size_t{4};
    cfg.ensemble.seeds.clear();
    for (std::size_t i = 0; i < k; ++i) cfg.ensemble.seeds.push_back(cfg.seed + 1 + i);
  }
  if (!seen.contains("ensemble.entropy_coefs")) {
    cfg.ensemble.entropy_coefs = default_entropy_coefs(cfg.ensemble.seeds.size());
  }
  cfg.propagate_seed();
  try {
    cfg.validate();
  } catch (const ValidationError& e) {
    throw ValidationError(std::string("invalid configuration: ") + e.what());
  }
  return cfg;
}

RunConfig parse_config(const std::filesystem::path& path, const std::vector<Override>& overrides) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), overrides);
}

std::string render_config(const RunConfig& cfg) {
  std::ostringstream out;
  std::string section;
  for (const auto& e : entries()) {
    const auto dot = e.name.find('.');
    const auto sec = e.name.substr(0, dot);
    if (sec != section) {
      if (!section.empty()) out << '\n';
      out << '[' << sec << "]\n";
      section = sec;
    }
    out << e.name.substr(dot + 1) << " = " << e.get(cfg) << '\n';
  }
  return out.str();
}

}  // namespace opadv::config
