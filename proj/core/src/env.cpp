#include "opadv/env.hpp"

#include <algorithm>
#include <cmath>

#include "opadv/error.hpp"
#include "opadv/text.hpp"

namespace opadv::env {

void EnvConfig::validate() const {
  if (max_steps < 1) throw ValidationError("env max_steps must be >= 1");
  if (!(budget_fraction > 0.0)) throw ValidationError("env budget_fraction must be > 0");
  if (!(success_threshold > 0.0 && success_threshold < 1.0)) {
    throw ValidationError("env success_threshold must be in (0,1)");
  }
  if (!(w_uplift >= 0.0) || !(w_cost >= 0.0) || !(terminal_bonus >= 0.0)) {
    throw ValidationError("env reward weights must be >= 0");
  }
  if (per_step_insertion_cap < 0) throw ValidationError("env per_step_insertion_cap must be >= 0");
}

std::int64_t insertion_budget(const EnvConfig& cfg, std::int64_t original_total) {
  return static_cast<std::int64_t>(
      std::ceil(static_cast<double>(original_total) * cfg.budget_fraction));
}

std::int64_t per_step_cap(const EnvConfig& cfg, std::int64_t original_total) {
  if (cfg.per_step_insertion_cap > 0) return cfg.per_step_insertion_cap;
  const double raw = static_cast<double>(original_total) * cfg.budget_fraction /
                     static_cast<double>(cfg.max_steps);
  return std::max<std::int64_t>(1, static_cast<std::int64_t>(std::ceil(raw)));
}

std::vector<double> make_observation(const EnvConfig& cfg, const EpisodeState& state) {
  auto obs = normalize(state.current);
  obs.reserve(obs.size() + 3);
  obs.push_back(state.p_nm_current);
  obs.push_back(static_cast<double>(state.step) / static_cast<double>(cfg.max_steps));
  const double denom = static_cast<double>(state.original.total()) * cfg.budget_fraction;
  obs.push_back(std::min(1.0, static_cast<double>(state.inserted_total) / denom));
  return obs;
}

std::vector<std::int64_t> decode_action(const EnvConfig& /*cfg*/, const EpisodeState& state,
                                        std::span<const double> action) {
  const std::size_t dim = state.current.size();
  if (action.size() != dim) {
    throw ValidationError("action has size " + std::to_string(action.size()) + ", expected " +
                          std::to_string(dim));
  }
  std::vector<double> a(action.begin(), action.end());
  for (auto& v : a) v = std::isfinite(v) ? std::clamp(v, 0.0, 1.0) : 0.0;

  const auto n_active = std::count_if(a.begin(), a.end(), [](double v) { return v > 0.5; });
  const double share = static_cast<double>(state.step_cap) /
                       static_cast<double>(std::max<std::int64_t>(1, n_active));
  std::vector<std::int64_t> n(dim, 0);
  std::int64_t total = 0;
  for (std::size_t i = 0; i < dim; ++i) {
    if (a[i] > 0.5) {
      n[i] = static_cast<std::int64_t>(std::floor(a[i] * share));
      total += n[i];
    }
  }
  const auto remaining = std::max<std::int64_t>(0, state.budget - state.inserted_total);
  if (total > remaining) {
    const double scale = static_cast<double>(remaining) / static_cast<double>(total);
    std::int64_t scaled_total = 0;
    for (auto& v : n) {
      v = static_cast<std::int64_t>(std::floor(static_cast<double>(v) * scale));
      scaled_total += v;
    }
    // Floating-point rounding must never push past the budget.
    for (std::size_t i = 0; scaled_total > remaining && i < dim; ++i) {
      const auto cut = std::min(n[i], scaled_total - remaining);
      n[i] -= cut;
      scaled_total -= cut;
    }
  }
  return n;
}

FeatureVector apply_insertion(const EpisodeState& state, std::span<const std::int64_t> insertion) {
  if (insertion.size() != state.current.size()) {
    throw ValidationError("insertion vector has the wrong dimension");
  }
  FeatureVector next = state.current;
  for (std::size_t i = 0; i < insertion.size(); ++i) {
    if (insertion[i] < 0) {
      throw ValidationError("removal attempted at op-code " + std::to_string(i));
    }
    next[i] += insertion[i];
  }
  return next;
}

double similarity(const FeatureVector& a, const FeatureVector& b) {
  if (a.size() != b.size()) throw ValidationError("similarity: dimension mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double x = static_cast<double>(a[i]);
    const double y = static_cast<double>(b[i]);
    dot += x * y;
    na += x * x;
    nb += y * y;
  }
  if (na == 0.0 || nb == 0.0) throw ValidationError("similarity of a zero vector");
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

double compute_reward(const EnvConfig& cfg, double p_prev, double p_new,
                      std::int64_t inserted_this_step, std::int64_t original_total,
                      bool done_success) {
  const double cost = original_total > 0 ? static_cast<double>(inserted_this_step) /
                                               static_cast<double>(original_total)
                                         : 0.0;
  return cfg.w_uplift * (p_new - p_prev) - cfg.w_cost * cost +
         (done_success ? cfg.terminal_bonus : 0.0);
}

// ---------------------------------------------------------------------------

ObfuscationEnv::ObfuscationEnv(std::shared_ptr<const Corpus> malware,
                               std::shared_ptr<const ids::IdsModel> model, EnvConfig cfg,
                               std::uint64_t seed)
    : malware_(std::move(malware)), model_(std::move(model)), cfg_(cfg), rng_(mix_seed(seed, 0xE5)) {
  cfg_.validate();
  if (!model_) throw ValidationError("environment needs a trained IDS");
  if (!malware_ || malware_->empty()) throw ValidationError("environment has no malware samples");
  for (const auto& s : *malware_) {
    if (s.counts.size() != model_->input_dim()) {
      throw ValidationError("sample " + s.id + " does not match the IDS input dimension");
    }
  }
}

double ObfuscationEnv::p_non_malicious(const FeatureVector& fv) const {
  return 1.0 - model_->predict_proba(fv);
}

std::vector<double> ObfuscationEnv::reset() {
  std::uniform_int_distribution<std::size_t> pick(0, malware_->size() - 1);
  return reset_to((*malware_)[pick(rng_)]);
}

std::vector<double> ObfuscationEnv::reset_to(const LabeledSample& sample) {
  if (sample.counts.size() != model_->input_dim()) {
    throw ValidationError("sample " + sample.id + " does not match the IDS input dimension");
  }
  if (sample.counts.total() <= 0) throw ValidationError("sample " + sample.id + " is empty");
  state_ = EpisodeState{};
  state_.sample_id = sample.id;
  state_.original = sample.counts;
  state_.current = sample.counts;
  state_.p_nm_initial = p_non_malicious(sample.counts);
  state_.p_nm_current = state_.p_nm_initial;
  const auto total = sample.counts.total();
  state_.budget = insertion_budget(cfg_, total);
  state_.step_cap = per_step_cap(cfg_, total);
  started_ = true;
  ++episode_;
  return make_observation(cfg_, state_);
}

StepResult ObfuscationEnv::step(std::span<const double> action) {
  if (!started_) throw ValidationError("step before reset");
  if (state_.done) throw ValidationError("episode finished");

  const auto insertion = decode_action(cfg_, state_, action);
  std::int64_t inserted = 0;
  for (const auto v : insertion) inserted += v;
  state_.current = apply_insertion(state_, insertion);
  state_.inserted_total += inserted;
  ++state_.step;

  const double p_prev = state_.p_nm_current;
  state_.p_nm_current = p_non_malicious(state_.current);
  state_.success = state_.p_nm_current >= cfg_.success_threshold;
  state_.done = state_.success || state_.step >= cfg_.max_steps ||
                state_.inserted_total >= state_.budget;

  StepResult result;
  result.reward = compute_reward(cfg_, p_prev, state_.p_nm_current, inserted,
                                 state_.original.total(), state_.success);
  result.done = state_.done;
  result.info.p_nm_current = state_.p_nm_current;
  result.info.similarity = similarity(state_.original, state_.current);
  result.info.inserted_total = state_.inserted_total;
  result.info.inserted_this_step = inserted;
  result.info.success = state_.success;
  result.observation = make_observation(cfg_, state_);

  if (trace_) {
    *trace_ << "episode=" << episode_ << " step=" << state_.step
            << " p_nm=" << text::format_fixed(state_.p_nm_current)
            << " inserted=" << state_.inserted_total
            << " reward=" << text::format_fixed(result.reward) << '\n';
  }
  return result;
}

}  // namespace opadv::env
