#ifndef OPADV_ENV_HPP_
#define OPADV_ENV_HPP_

#include <cstdint>
#include <memory>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "opadv/corpus.hpp"
#include "opadv/ids.hpp"
#include "opadv/rng.hpp"

namespace opadv::env {

struct EnvConfig {
  std::int64_t max_steps = 16;
  double budget_fraction = 0.5;
  double success_threshold = 0.5;
  double w_uplift = 1.0;
  double w_cost = 0.1;
  double terminal_bonus = 1.0;
  /// 0 = derive per episode as ceil(original_total * budget_fraction / max_steps).
  std::int64_t per_step_insertion_cap = 0;

  void validate() const;
};

/// Total insertions allowed for a file of `original_total` op-codes.
std::int64_t insertion_budget(const EnvConfig& cfg, std::int64_t original_total);
std::int64_t per_step_cap(const EnvConfig& cfg, std::int64_t original_total);

struct EpisodeState {
  std::string sample_id;
  FeatureVector original;
  FeatureVector current;
  std::int64_t step = 0;
  double p_nm_initial = 0.0;
  double p_nm_current = 0.0;
  std::int64_t inserted_total = 0;
  std::int64_t budget = 0;
  std::int64_t step_cap = 0;
  bool done = false;
  bool success = false;
};

/// Normalized current frequencies followed by p_nm_current, step/max_steps,
/// and the used fraction of the insertion budget. Length V+3.
std::vector<double> make_observation(const EnvConfig& cfg, const EpisodeState& state);

/// Continuous intensities in [0,1] to integer insertion counts. Entries above
/// 0.5 are active; each active entry gets floor(a * cap / n_active). The whole
/// vector is floor-scaled to fit the remaining budget.
std::vector<std::int64_t> decode_action(const EnvConfig& cfg, const EpisodeState& state,
                                        std::span<const double> action);

/// Adds `insertion` to the current counts. Negative entries are refused:
/// obfuscation may only insert.
FeatureVector apply_insertion(const EpisodeState& state, std::span<const std::int64_t> insertion);

/// Cosine similarity of raw count vectors.
double similarity(const FeatureVector& a, const FeatureVector& b);

double compute_reward(const EnvConfig& cfg, double p_prev, double p_new,
                      std::int64_t inserted_this_step, std::int64_t original_total,
                      bool done_success);

struct StepInfo {
  double p_nm_current = 0.0;
  double similarity = 1.0;
  std::int64_t inserted_total = 0;
  std::int64_t inserted_this_step = 0;
  bool success = false;
};

struct StepResult {
  std::vector<double> observation;
  double reward = 0.0;
  bool done = false;
  StepInfo info;
};

/// Episodic insertion game against a fixed IDS. Each instance owns its RNG;
/// the corpus and model are shared read-only.
class ObfuscationEnv {
 public:
  ObfuscationEnv(std::shared_ptr<const Corpus> malware, std::shared_ptr<const ids::IdsModel> model,
                 EnvConfig cfg, std::uint64_t seed);

  /// Picks a malware sample uniformly at random.
  std::vector<double> reset();
  /// Starts an episode on a specific sample (used for evaluation).
  std::vector<double> reset_to(const LabeledSample& sample);
  StepResult step(std::span<const double> action);

  const EpisodeState& state() const { return state_; }
  const EnvConfig& config() const { return cfg_; }
  const ids::IdsModel& model() const { return *model_; }
  std::size_t vocab_size() const { return model_->input_dim(); }
  std::size_t observation_size() const { return vocab_size() + 3; }
  bool active() const { return started_ && !state_.done; }

  /// Per-step trace lines: episode, step, p_nm, inserted, reward.
  void set_trace(std::ostream* out) { trace_ = out; }
  std::int64_t episode_index() const { return episode_; }

 private:
  double p_non_malicious(const FeatureVector& fv) const;

  std::shared_ptr<const Corpus> malware_;
  std::shared_ptr<const ids::IdsModel> model_;
  EnvConfig cfg_;
  Rng rng_;
  EpisodeState state_;
  bool started_ = false;
  std::int64_t episode_ = -1;
  std::ostream* trace_ = nullptr;
};

}  // namespace opadv::env

#endif  // OPADV_ENV_HPP_
