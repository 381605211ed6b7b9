#include "opadv/agent.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <fstream>
#include <nlohmann/json.hpp>
#include <numbers>
#include <numeric>
#include <sstream>
#include <thread>

#include "opadv/error.hpp"

namespace opadv::agent {
namespace {

constexpr int kCheckpointVersion = 1;
constexpr double kHalfLog2Pi = 0.91893853320467274178;  // 0.5 * ln(2 pi)

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

/// log sigmoid'(x) = log sigmoid(x) + log sigmoid(-x).
double log_sigmoid_derivative(double x) { return -softplus(-x) - softplus(x); }

void require_finite(std::span<const double> v, const char* what) {
  for (const double x : v) {
    if (!std::isfinite(x)) throw RuntimeFailure(std::string("non-finite ") + what);
  }
}

void clamp_log_std(std::vector<double>& log_std) {
  for (auto& s : log_std) s = std::clamp(s, kMinLogStd, kMaxLogStd);
}

}  // namespace

void PpoConfig::validate() const {
  if (!(clip > 0.0 && clip < 1.0)) throw ValidationError("clip must be in (0,1)");
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw ValidationError("gamma must be in [0,1]");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ValidationError("lambda must be in [0,1]");
  if (epochs < 1) throw ValidationError("epochs must be >= 1");
  if (minibatch < 1) throw ValidationError("minibatch must be >= 1");
  if (horizon < 1) throw ValidationError("horizon must be >= 1");
  if (!(learning_rate > 0.0)) throw ValidationError("learning_rate must be > 0");
  if (!(value_coef >= 0.0)) throw ValidationError("value_coef must be >= 0");
  if (!(entropy_coef >= 0.0)) throw ValidationError("entropy_coef must be >= 0");
  if (total_steps < 1) throw ValidationError("total_steps must be >= 1");
  for (const auto h : hidden) {
    if (h < 1) throw ValidationError("hidden layer sizes must be >= 1");
  }
  if (!(initial_log_std >= kMinLogStd && initial_log_std <= kMaxLogStd)) {
    throw ValidationError("initial_log_std must be in [-5,2]");
  }
}

void to_json(nlohmann::json& j, const PpoConfig& cfg) {
  j = nlohmann::json{{"clip", cfg.clip},
                     {"gamma", cfg.gamma},
                     {"lambda", cfg.lambda},
                     {"epochs", cfg.epochs},
                     {"minibatch", cfg.minibatch},
                     {"horizon", cfg.horizon},
                     {"learning_rate", cfg.learning_rate},
                     {"value_coef", cfg.value_coef},
                     {"entropy_coef", cfg.entropy_coef},
                     {"total_steps", cfg.total_steps},
                     {"seed", cfg.seed},
                     {"hidden", cfg.hidden},
                     {"initial_mean_bias", cfg.initial_mean_bias},
                     {"initial_log_std", cfg.initial_log_std}};
}

void from_json(const nlohmann::json& j, PpoConfig& cfg) {
  j.at("clip").get_to(cfg.clip);
  j.at("gamma").get_to(cfg.gamma);
  j.at("lambda").get_to(cfg.lambda);
  j.at("epochs").get_to(cfg.epochs);
  j.at("minibatch").get_to(cfg.minibatch);
  j.at("horizon").get_to(cfg.horizon);
  j.at("learning_rate").get_to(cfg.learning_rate);
  j.at("value_coef").get_to(cfg.value_coef);
  j.at("entropy_coef").get_to(cfg.entropy_coef);
  j.at("total_steps").get_to(cfg.total_steps);
  j.at("seed").get_to(cfg.seed);
  j.at("hidden").get_to(cfg.hidden);
  j.at("initial_mean_bias").get_to(cfg.initial_mean_bias);
  j.at("initial_log_std").get_to(cfg.initial_log_std);
}

// ---------------------------------------------------------------------------
// Policy

PolicyParams init_policy(std::size_t observation_size, std::size_t action_size,
                         const PpoConfig& cfg, std::uint64_t seed) {
  std::vector<std::size_t> actor_sizes{observation_size};
  actor_sizes.insert(actor_sizes.end(), cfg.hidden.begin(), cfg.hidden.end());
  auto critic_sizes = actor_sizes;
  actor_sizes.push_back(action_size);
  critic_sizes.push_back(1);

  PolicyParams p;
  p.actor = nn::init_net(actor_sizes, mix_seed(seed, 1));
  p.critic = nn::init_net(critic_sizes, mix_seed(seed, 2));
  for (auto& b : p.actor.bias(p.actor.num_layers() - 1)) b = cfg.initial_mean_bias;
  p.log_std.assign(action_size, cfg.initial_log_std);
  clamp_log_std(p.log_std);
  return p;
}

double squashed_gaussian_log_prob(std::span<const double> mean, std::span<const double> log_std,
                                  std::span<const double> raw) {
  if (mean.size() != raw.size() || log_std.size() != raw.size()) {
    throw ValidationError("log-prob: dimension mismatch");
  }
  double lp = 0.0;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const double z = (raw[i] - mean[i]) * std::exp(-log_std[i]);
    lp += -0.5 * z * z - log_std[i] - kHalfLog2Pi;
    lp -= log_sigmoid_derivative(raw[i]);
  }
  return lp;
}

double gaussian_entropy(std::span<const double> log_std) {
  double h = 0.0;
  for (const double s : log_std) h += s + 0.5 + kHalfLog2Pi;
  return h;
}

ActionSample sample_action(const PolicyParams& params, std::span<const double> obs, Rng& rng) {
  ActionSample out;
  const auto mean = nn::predict(params.actor, obs);
  require_finite(mean, "policy mean");
  out.raw.resize(mean.size());
  out.action.resize(mean.size());
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t i = 0; i < mean.size(); ++i) {
    out.raw[i] = mean[i] + std::exp(params.log_std[i]) * normal(rng);
    out.action[i] = sigmoid(out.raw[i]);
  }
  out.log_prob = squashed_gaussian_log_prob(mean, params.log_std, out.raw);
  out.value = state_value(params, obs);
  if (!std::isfinite(out.log_prob)) throw RuntimeFailure("non-finite action log-probability");
  return out;
}

std::vector<double> greedy_action(const PolicyParams& params, std::span<const double> obs) {
  auto mean = nn::predict(params.actor, obs);
  require_finite(mean, "policy mean");
  for (auto& m : mean) m = sigmoid(m);
  return mean;
}

double state_value(const PolicyParams& params, std::span<const double> obs) {
  const double v = nn::predict(params.critic, obs).front();
  if (!std::isfinite(v)) throw RuntimeFailure("non-finite value estimate");
  return v;
}

LogProbEntropy log_prob_and_entropy(const PolicyParams& params, std::span<const double> obs,
                                    std::span<const double> raw) {
  if (raw.size() != params.action_size()) throw ValidationError("raw action dimension mismatch");
  require_finite(raw, "raw action");
  const auto mean = nn::predict(params.actor, obs);
  return {squashed_gaussian_log_prob(mean, params.log_std, raw), gaussian_entropy(params.log_std)};
}

// ---------------------------------------------------------------------------
// Trajectory / GAE

void Trajectory::push(std::vector<double> obs, ActionSample sample, double reward, bool done) {
  observations.push_back(std::move(obs));
  raw_actions.push_back(std::move(sample.raw));
  actions.push_back(std::move(sample.action));
  log_probs.push_back(sample.log_prob);
  values.push_back(sample.value);
  rewards.push_back(reward);
  dones.push_back(done ? 1 : 0);
}

void compute_gae(Trajectory& traj, double gamma, double lambda, bool normalize) {
  const std::size_t n = traj.size();
  if (n == 0) throw ValidationError("compute_gae: empty trajectory");
  if (traj.values.size() != n || traj.dones.size() != n) {
    throw ValidationError("compute_gae: misaligned trajectory");
  }
  traj.advantages.assign(n, 0.0);
  traj.returns.assign(n, 0.0);
  double next_adv = 0.0;
  double next_value = traj.last_value;
  for (std::size_t t = n; t-- > 0;) {
    const double not_done = traj.dones[t] ? 0.0 : 1.0;
    const double delta = traj.rewards[t] + gamma * next_value * not_done - traj.values[t];
    next_adv = delta + gamma * lambda * not_done * next_adv;
    traj.advantages[t] = next_adv;
    traj.returns[t] = next_adv + traj.values[t];
    next_value = traj.values[t];
  }
  if (!normalize) return;
  const double mean =
      std::accumulate(traj.advantages.begin(), traj.advantages.end(), 0.0) / static_cast<double>(n);
  double var = 0.0;
  for (const double a : traj.advantages) var += (a - mean) * (a - mean);
  const double std_dev = std::sqrt(var / static_cast<double>(n));
  const double denom = std::max(std_dev, kAdvantageStdFloor);
  for (auto& a : traj.advantages) a = (a - mean) / denom;
}

double ppo_clip_objective(double ratio, double advantage, double eps) {
  const double clipped = std::clamp(ratio, 1.0 - eps, 1.0 + eps);
  return std::min(ratio * advantage, clipped * advantage);
}

// ---------------------------------------------------------------------------
// Loss and update

LossBreakdown ppo_loss(const PolicyParams& params, const Trajectory& traj,
                       std::span<const std::size_t> indices, const PpoConfig& cfg,
                       PolicyGradient* grad) {
  if (indices.empty()) throw ValidationError("ppo_loss: empty minibatch");
  if (traj.advantages.size() != traj.size() || traj.returns.size() != traj.size()) {
    throw ValidationError("ppo_loss: advantages not computed");
  }
  const std::size_t dim = params.action_size();
  const double inv_b = 1.0 / static_cast<double>(indices.size());
  if (grad) {
    grad->actor = nn::GradientSet(params.actor);
    grad->critic = nn::GradientSet(params.critic);
    grad->log_std.assign(dim, 0.0);
  }
  std::vector<double> inv_var(dim);
  for (std::size_t i = 0; i < dim; ++i) inv_var[i] = std::exp(-2.0 * params.log_std[i]);
  const double entropy = gaussian_entropy(params.log_std);

  LossBreakdown out;
  std::size_t clipped = 0;
  std::vector<double> mean_grad(dim);
  for (const auto idx : indices) {
    const auto& raw = traj.raw_actions[idx];
    const double adv = traj.advantages[idx];

    auto actor_fwd = nn::forward(params.actor, traj.observations[idx]);
    const auto& mean = actor_fwd.output;
    const double log_prob = squashed_gaussian_log_prob(mean, params.log_std, raw);
    const double ratio = std::exp(log_prob - traj.log_probs[idx]);
    const double clipped_ratio = std::clamp(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip);
    const double surrogate = std::min(ratio * adv, clipped_ratio * adv);
    out.policy -= surrogate * inv_b;
    if (std::abs(ratio - 1.0) > cfg.clip) ++clipped;

    auto critic_fwd = nn::forward(params.critic, traj.observations[idx]);
    const double value_err = critic_fwd.output.front() - traj.returns[idx];
    out.value += value_err * value_err * inv_b;

    if (!grad) continue;
    // d(-surrogate)/d(log_prob): only the unclipped branch carries gradient.
    const double d_logp = ratio * adv <= clipped_ratio * adv ? -ratio * adv * inv_b : 0.0;
    if (d_logp != 0.0) {
      for (std::size_t i = 0; i < dim; ++i) {
        const double diff = raw[i] - mean[i];
        mean_grad[i] = d_logp * diff * inv_var[i];
        grad->log_std[i] += d_logp * (diff * diff * inv_var[i] - 1.0);
      }
      nn::backward_into(params.actor, actor_fwd.cache, mean_grad, grad->actor);
    }
    const double d_value = cfg.value_coef * 2.0 * value_err * inv_b;
    nn::backward_into(params.critic, critic_fwd.cache, std::span<const double>(&d_value, 1),
                      grad->critic);
  }
  out.entropy = entropy;
  out.clip_fraction = static_cast<double>(clipped) * inv_b;
  out.total = out.policy + cfg.value_coef * out.value - cfg.entropy_coef * entropy;
  if (grad) {
    for (auto& g : grad->log_std) g -= cfg.entropy_coef;
  }
  return out;
}

PpoOptimizer::PpoOptimizer(const PolicyParams& params, double learning_rate)
    : actor(nn::AdamConfig{learning_rate}, params.actor.num_parameters()),
      log_std(nn::AdamConfig{learning_rate}, params.log_std.size()),
      critic(nn::AdamConfig{learning_rate}, params.critic.num_parameters()) {}

namespace {

void shuffle_indices(std::vector<std::size_t>& idx, Rng& rng) {
  for (std::size_t i = idx.size(); i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(idx[i - 1], idx[pick(rng)]);
  }
}

std::vector<double> batch_log_probs(const PolicyParams& params, const Trajectory& traj) {
  std::vector<double> out(traj.size());
  for (std::size_t t = 0; t < traj.size(); ++t) {
    const auto mean = nn::predict(params.actor, traj.observations[t]);
    out[t] = squashed_gaussian_log_prob(mean, params.log_std, traj.raw_actions[t]);
  }
  return out;
}

}  // namespace

UpdateStats ppo_update(PolicyParams& params, PpoOptimizer& opt, const Trajectory& traj,
                       const PpoConfig& cfg, Rng& rng) {
  cfg.validate();
  if (traj.size() == 0) throw ValidationError("ppo_update: empty trajectory");
  if (traj.advantages.size() != traj.size()) {
    throw ValidationError("ppo_update: advantages not computed");
  }
  UpdateStats stats;
  {
    const auto lp = batch_log_probs(params, traj);
    for (std::size_t t = 0; t < traj.size(); ++t) {
      stats.initial_ratio_deviation =
          std::max(stats.initial_ratio_deviation, std::abs(std::exp(lp[t] - traj.log_probs[t]) - 1.0));
    }
  }

  std::vector<std::size_t> order(traj.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t batches = 0;
  PolicyGradient grad;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_indices(order, rng);
    for (std::size_t start = 0; start < order.size(); start += cfg.minibatch) {
      const auto count = std::min(cfg.minibatch, order.size() - start);
      const std::span<const std::size_t> mb(order.data() + start, count);
      const auto loss = ppo_loss(params, traj, mb, cfg, &grad);
      if (!std::isfinite(loss.total)) {
        std::ostringstream msg;
        msg << "non-finite PPO loss (policy=" << loss.policy << " value=" << loss.value
            << " entropy=" << loss.entropy << ") at epoch " << epoch << ", minibatch offset "
            << start;
        throw RuntimeFailure(msg.str());
      }
      nn::adam_step(params.actor, grad.actor, opt.actor);
      nn::adam_step(params.log_std, grad.log_std, opt.log_std);
      nn::adam_step(params.critic, grad.critic, opt.critic);
      clamp_log_std(params.log_std);
      if (!params.actor.all_finite() || !params.critic.all_finite()) {
        throw RuntimeFailure("non-finite network parameters after optimizer step");
      }
      stats.policy_loss += loss.policy;
      stats.value_loss += loss.value;
      stats.entropy += loss.entropy;
      stats.clip_fraction += loss.clip_fraction;
      ++batches;
    }
  }
  const double inv = 1.0 / static_cast<double>(batches);
  stats.policy_loss *= inv;
  stats.value_loss *= inv;
  stats.entropy *= inv;
  stats.clip_fraction *= inv;

  const auto lp = batch_log_probs(params, traj);
  double kl = 0.0;
  for (std::size_t t = 0; t < traj.size(); ++t) kl += traj.log_probs[t] - lp[t];
  stats.approx_kl = kl / static_cast<double>(traj.size());
  return stats;
}

// ---------------------------------------------------------------------------
// Training

namespace {

nlohmann::ordered_json log_record_json(const TrainLogRecord& rec) {
  nlohmann::ordered_json o;
  o["update"] = rec.update;
  o["env_steps"] = rec.env_steps;
  o["episodes"] = rec.episodes;
  o["mean_uplift"] = rec.mean_uplift;
  o["mean_similarity"] = rec.mean_similarity;
  o["success_rate"] = rec.success_rate;
  o["mean_reward"] = rec.mean_reward;
  o["policy_loss"] = rec.stats.policy_loss;
  o["value_loss"] = rec.stats.value_loss;
  o["entropy"] = rec.stats.entropy;
  o["clip_fraction"] = rec.stats.clip_fraction;
  o["approx_kl"] = rec.stats.approx_kl;
  o["initial_ratio_deviation"] = rec.stats.initial_ratio_deviation;
  return o;
}

}  // namespace

void write_training_log(const std::vector<TrainLogRecord>& log, std::ostream& out) {
  for (const auto& rec : log) out << log_record_json(rec).dump() << '\n';
}

std::vector<TrainLogRecord> read_training_log(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path.string());
  std::vector<TrainLogRecord> log;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      TrainLogRecord rec;
      j.at("update").get_to(rec.update);
      j.at("env_steps").get_to(rec.env_steps);
      j.at("episodes").get_to(rec.episodes);
      j.at("mean_uplift").get_to(rec.mean_uplift);
      j.at("mean_similarity").get_to(rec.mean_similarity);
      j.at("success_rate").get_to(rec.success_rate);
      j.at("mean_reward").get_to(rec.mean_reward);
      j.at("policy_loss").get_to(rec.stats.policy_loss);
      j.at("value_loss").get_to(rec.stats.value_loss);
      j.at("entropy").get_to(rec.stats.entropy);
      j.at("clip_fraction").get_to(rec.stats.clip_fraction);
      j.at("approx_kl").get_to(rec.stats.approx_kl);
      j.at("initial_ratio_deviation").get_to(rec.stats.initial_ratio_deviation);
      log.push_back(rec);
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(path.string() + ": line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return log;
}

TrainResult train_agent(const EnvFactory& make_env, const PpoConfig& cfg) {
  cfg.validate();
  auto env = make_env(mix_seed(cfg.seed, 0xE0));
  TrainResult result;
  result.params =
      init_policy(env.observation_size(), env.vocab_size(), cfg, mix_seed(cfg.seed, 0xA0));
  PpoOptimizer opt(result.params, cfg.learning_rate);
  Rng sample_rng(mix_seed(cfg.seed, 0xA1));
  Rng shuffle_rng(mix_seed(cfg.seed, 0xA2));

  auto obs = env.reset();
  std::int64_t steps = 0;
  std::int64_t update = 0;
  while (steps < cfg.total_steps) {
    const auto n = std::min<std::int64_t>(static_cast<std::int64_t>(cfg.horizon),
                                          cfg.total_steps - steps);
    Trajectory traj;
    std::int64_t episodes = 0;
    std::int64_t successes = 0;
    double uplift_sum = 0.0;
    double similarity_sum = 0.0;
    double reward_sum = 0.0;
    for (std::int64_t t = 0; t < n; ++t) {
      auto sample = sample_action(result.params, obs, sample_rng);
      const auto action = sample.action;
      auto step = env.step(action);
      reward_sum += step.reward;
      traj.push(std::move(obs), std::move(sample), step.reward, step.done);
      if (step.done) {
        ++episodes;
        successes += step.info.success ? 1 : 0;
        uplift_sum += env.state().p_nm_current - env.state().p_nm_initial;
        similarity_sum += step.info.similarity;
        obs = env.reset();
      } else {
        obs = std::move(step.observation);
      }
    }
    steps += n;
    traj.last_value = traj.dones.back() ? 0.0 : state_value(result.params, obs);
    compute_gae(traj, cfg.gamma, cfg.lambda, true);

    TrainLogRecord rec;
    rec.update = update++;
    rec.env_steps = steps;
    rec.episodes = episodes;
    if (episodes > 0) {
      const double e = static_cast<double>(episodes);
      rec.mean_uplift = uplift_sum / e;
      rec.mean_similarity = similarity_sum / e;
      rec.success_rate = static_cast<double>(successes) / e;
    }
    rec.mean_reward = reward_sum / static_cast<double>(n);
    rec.stats = ppo_update(result.params, opt, traj, cfg, shuffle_rng);
    result.log.push_back(rec);
  }
  return result;
}

env::EpisodeState run_greedy_episode(const PolicyParams& params, env::ObfuscationEnv& env,
                                     const LabeledSample& sample) {
  auto obs = env.reset_to(sample);
  while (env.active()) {
    const auto action = greedy_action(params, obs);
    obs = env.step(action).observation;
  }
  return env.state();
}

// ---------------------------------------------------------------------------
// Ensemble

void EnsembleConfig::validate() const {
  if (seeds.empty()) throw ValidationError("ensemble needs K >= 1 agents");
  if (entropy_coefs.size() != seeds.size()) {
    throw ValidationError("ensemble: one entropy coefficient per seed required");
  }
  auto sorted = seeds;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
    throw ValidationError("ensemble: duplicate seeds");
  }
  for (const double c : entropy_coefs) {
    if (!(c >= 0.0)) throw ValidationError("ensemble: entropy coefficients must be >= 0");
  }
}

double insertion_dissimilarity(std::span<const std::int64_t> a, std::span<const std::int64_t> b) {
  if (a.size() != b.size()) throw ValidationError("dissimilarity: dimension mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<double>(a[i]) * static_cast<double>(b[i]);
    na += static_cast<double>(a[i]) * static_cast<double>(a[i]);
    nb += static_cast<double>(b[i]) * static_cast<double>(b[i]);
  }
  if (na == 0.0 && nb == 0.0) return 0.0;
  if (na == 0.0 || nb == 0.0) return 1.0;
  return 1.0 - std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

DissimilarityReport measure_dissimilarity(const std::vector<PolicyParams>& agents,
                                          const EnvFactory& make_env, const Corpus& eval_malware) {
  DissimilarityReport report;
  if (agents.size() < 2) return report;
  if (eval_malware.empty()) throw ValidationError("dissimilarity needs evaluation malware");
  // inserted[agent][sample] = final - original
  std::vector<std::vector<std::vector<std::int64_t>>> inserted(agents.size());
  for (std::size_t a = 0; a < agents.size(); ++a) {
    auto env = make_env(0);
    for (const auto& sample : eval_malware) {
      const auto state = run_greedy_episode(agents[a], env, sample);
      std::vector<std::int64_t> diff(state.current.size());
      for (std::size_t i = 0; i < diff.size(); ++i) diff[i] = state.current[i] - state.original[i];
      inserted[a].push_back(std::move(diff));
    }
  }
  double total = 0.0;
  for (std::size_t a = 0; a < agents.size(); ++a) {
    for (std::size_t b = a + 1; b < agents.size(); ++b) {
      double sum = 0.0;
      for (std::size_t s = 0; s < eval_malware.size(); ++s) {
        sum += insertion_dissimilarity(inserted[a][s], inserted[b][s]);
      }
      const double mean = sum / static_cast<double>(eval_malware.size());
      report.pairs.push_back({a, b, mean});
      total += mean;
    }
  }
  report.mean = total / static_cast<double>(report.pairs.size());
  return report;
}

EnsembleResult train_ensemble(const EnvFactory& make_env, const EnsembleConfig& ens,
                              const PpoConfig& base, const Corpus& eval_malware) {
  ens.validate();
  base.validate();
  const std::size_t k = ens.size();
  EnsembleResult result;
  result.agents.resize(k);
  std::vector<std::exception_ptr> errors(k);
  {
    std::vector<std::jthread> workers;
    workers.reserve(k);
    for (std::size_t i = 0; i < k; ++i) {
      workers.emplace_back([&, i] {
        try {
          auto cfg = base;
          cfg.seed = ens.seeds[i];
          cfg.entropy_coef = ens.entropy_coefs[i];
          result.agents[i] = train_agent(make_env, cfg);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      });
    }
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  std::vector<PolicyParams> params;
  for (const auto& a : result.agents) params.push_back(a.params);
  result.dissimilarity = measure_dissimilarity(params, make_env, eval_malware);
  return result;
}

// ---------------------------------------------------------------------------
// Checkpoints

void save_agent(const PolicyParams& params, const PpoConfig& cfg,
                const std::filesystem::path& path) {
  nlohmann::json j;
  j["format"] = "opadv-agent";
  j["version"] = kCheckpointVersion;
  j["ppo_config"] = cfg;
  j["observation_size"] = params.observation_size();
  j["action_size"] = params.action_size();
  j["actor"] = params.actor;
  j["critic"] = params.critic;
  j["log_std"] = params.log_std;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeFailure("cannot write " + path.string());
  out << j.dump(1) << '\n';
  if (!out) throw RuntimeFailure("write failed: " + path.string());
}

std::pair<PolicyParams, PpoConfig> load_agent(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("missing checkpoint " + path.string());
  try {
    const auto j = nlohmann::json::parse(in);
    if (j.at("format") != "opadv-agent") throw ValidationError("not an agent checkpoint");
    if (j.at("version") != kCheckpointVersion) {
      throw ValidationError("unsupported agent checkpoint version");
    }
    PolicyParams p;
    j.at("actor").get_to(p.actor);
    j.at("critic").get_to(p.critic);
    j.at("log_std").get_to(p.log_std);
    const auto cfg = j.at("ppo_config").get<PpoConfig>();
    if (p.log_std.size() != p.action_size() || p.critic.output_size() != 1 ||
        p.critic.input_size() != p.observation_size() ||
        p.observation_size() != j.at("observation_size").get<std::size_t>() ||
        p.action_size() != j.at("action_size").get<std::size_t>()) {
      throw ValidationError("agent checkpoint shapes are inconsistent");
    }
    return {std::move(p), cfg};
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

}  // namespace opadv::agent
