#ifndef OPADV_AGENT_HPP_
#define OPADV_AGENT_HPP_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "opadv/env.hpp"
#include "opadv/nn.hpp"
#include "opadv/rng.hpp"

namespace opadv::agent {

inline constexpr double kMinLogStd = -5.0;
inline constexpr double kMaxLogStd = 2.0;

struct PpoConfig {
  double clip = 0.2;
  double gamma = 0.99;
  double lambda = 0.95;
  std::size_t epochs = 4;
  std::size_t minibatch = 64;
  std::size_t horizon = 2048;
  double learning_rate = 1e-3;
  double value_coef = 0.5;
  double entropy_coef = 0.01;
  std::int64_t total_steps = 150000;
  std::uint64_t seed = 0;
  std::vector<std::size_t> hidden = {64, 64};
  /// Actor output bias at init. Negative values keep sigmoid(mean) below the
  /// 0.5 activation gate so early exploration touches few op-codes per step.
  double initial_mean_bias = -2.0;
  double initial_log_std = 0.0;

  void validate() const;
};

void to_json(nlohmann::json& j, const PpoConfig& cfg);
void from_json(const nlohmann::json& j, PpoConfig& cfg);

/// Diagonal Gaussian over pre-squash actions, squashed by a logistic sigmoid,
/// plus a separate critic.
struct PolicyParams {
  nn::DenseNet actor;             // observation -> mean (length V)
  std::vector<double> log_std;    // state-independent, clamped to [-5, 2]
  nn::DenseNet critic;            // observation -> scalar value

  std::size_t observation_size() const { return actor.input_size(); }
  std::size_t action_size() const { return actor.output_size(); }
  bool operator==(const PolicyParams&) const = default;
};

PolicyParams init_policy(std::size_t observation_size, std::size_t action_size,
                         const PpoConfig& cfg, std::uint64_t seed);

struct ActionSample {
  std::vector<double> raw;     // Gaussian draw
  std::vector<double> action;  // sigmoid(raw), in (0,1)
  double log_prob = 0.0;       // density of `action` (change of variables)
  double value = 0.0;
};

ActionSample sample_action(const PolicyParams& params, std::span<const double> obs, Rng& rng);
/// sigmoid(mean(obs)); no sampling.
std::vector<double> greedy_action(const PolicyParams& params, std::span<const double> obs);
double state_value(const PolicyParams& params, std::span<const double> obs);

/// log N(raw; mean, std) - sum log sigmoid'(raw).
double squashed_gaussian_log_prob(std::span<const double> mean, std::span<const double> log_std,
                                  std::span<const double> raw);
double gaussian_entropy(std::span<const double> log_std);

struct LogProbEntropy {
  double log_prob = 0.0;
  double entropy = 0.0;
};
LogProbEntropy log_prob_and_entropy(const PolicyParams& params, std::span<const double> obs,
                                    std::span<const double> raw);

/// Rollout buffer. Advantages and returns are filled by compute_gae.
struct Trajectory {
  std::vector<std::vector<double>> observations;
  std::vector<std::vector<double>> raw_actions;
  std::vector<std::vector<double>> actions;
  std::vector<double> log_probs;
  std::vector<double> rewards;
  std::vector<double> values;
  std::vector<std::uint8_t> dones;
  /// V(s_T) for bootstrapping when the last step is not terminal.
  double last_value = 0.0;
  std::vector<double> advantages;
  std::vector<double> returns;

  std::size_t size() const { return rewards.size(); }
  void push(std::vector<double> obs, ActionSample sample, double reward, bool done);
};

inline constexpr double kAdvantageStdFloor = 1e-8;

/// delta_t = r_t + gamma V_{t+1} (1-done_t) - V_t,
/// A_t = delta_t + gamma lambda (1-done_t) A_{t+1}, returns = A + V.
/// With `normalize`, advantages are standardized afterwards (returns use the
/// raw advantages).
void compute_gae(Trajectory& traj, double gamma, double lambda, bool normalize = true);

/// min(r A, clamp(r, 1-eps, 1+eps) A).
double ppo_clip_objective(double ratio, double advantage, double eps);

struct UpdateStats {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double clip_fraction = 0.0;
  double approx_kl = 0.0;
  /// max |ratio - 1| over the batch before any gradient step.
  double initial_ratio_deviation = 0.0;

  bool operator==(const UpdateStats&) const = default;
};

struct PolicyGradient {
  nn::GradientSet actor;
  std::vector<double> log_std;
  nn::GradientSet critic;
};

struct LossBreakdown {
  double total = 0.0;
  double policy = 0.0;
  double value = 0.0;
  double entropy = 0.0;
  double clip_fraction = 0.0;
};

/// Clipped-surrogate loss over `indices` of `traj`:
///   -mean(clip objective) + value_coef * mean((V - R)^2) - entropy_coef * mean(entropy)
/// and, if `grad` is non-null, its exact gradient.
LossBreakdown ppo_loss(const PolicyParams& params, const Trajectory& traj,
                       std::span<const std::size_t> indices, const PpoConfig& cfg,
                       PolicyGradient* grad);

struct PpoOptimizer {
  nn::AdamState actor;
  nn::AdamState log_std;
  nn::AdamState critic;

  PpoOptimizer() = default;
  PpoOptimizer(const PolicyParams& params, double learning_rate);
};

/// Epochs of shuffled minibatch Adam steps on the clipped loss. Requires
/// compute_gae to have run on `traj`.
UpdateStats ppo_update(PolicyParams& params, PpoOptimizer& opt, const Trajectory& traj,
                       const PpoConfig& cfg, Rng& rng);

struct TrainLogRecord {
  std::int64_t update = 0;
  std::int64_t env_steps = 0;
  std::int64_t episodes = 0;
  double mean_uplift = 0.0;
  double mean_similarity = 0.0;
  double success_rate = 0.0;
  double mean_reward = 0.0;
  UpdateStats stats;

  bool operator==(const TrainLogRecord&) const = default;
};

void write_training_log(const std::vector<TrainLogRecord>& log, std::ostream& out);
std::vector<TrainLogRecord> read_training_log(const std::filesystem::path& path);

using EnvFactory = std::function<env::ObfuscationEnv(std::uint64_t seed)>;

struct TrainResult {
  PolicyParams params;
  std::vector<TrainLogRecord> log;
};

/// Rollout/update loop until cfg.total_steps environment steps.
TrainResult train_agent(const EnvFactory& make_env, const PpoConfig& cfg);

/// One deterministic episode with greedy actions; returns the final state.
env::EpisodeState run_greedy_episode(const PolicyParams& params, env::ObfuscationEnv& env,
                                     const LabeledSample& sample);

struct EnsembleConfig {
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4};
  std::vector<double> entropy_coefs = {0.005, 0.01, 0.02, 0.04};

  std::size_t size() const { return seeds.size(); }
  void validate() const;
};

struct PairDissimilarity {
  std::size_t a = 0;
  std::size_t b = 0;
  double dissimilarity = 0.0;
};

struct DissimilarityReport {
  std::vector<PairDissimilarity> pairs;
  double mean = 0.0;
};

struct EnsembleResult {
  std::vector<TrainResult> agents;
  DissimilarityReport dissimilarity;
};

/// 1 - cosine between two inserted-count vectors; two empty insertions are
/// identical (0) and one empty vs one non-empty is maximally different (1).
double insertion_dissimilarity(std::span<const std::int64_t> a, std::span<const std::int64_t> b);

DissimilarityReport measure_dissimilarity(const std::vector<PolicyParams>& agents,
                                          const EnvFactory& make_env, const Corpus& eval_malware);

/// K independent train_agent runs (agent i uses seeds[i] and entropy_coefs[i]),
/// one worker thread each, then pairwise dissimilarity on `eval_malware`.
EnsembleResult train_ensemble(const EnvFactory& make_env, const EnsembleConfig& ens,
                              const PpoConfig& base, const Corpus& eval_malware);

void save_agent(const PolicyParams& params, const PpoConfig& cfg,
                const std::filesystem::path& path);
std::pair<PolicyParams, PpoConfig> load_agent(const std::filesystem::path& path);

}  // namespace opadv::agent

#endif  // OPADV_AGENT_HPP_
