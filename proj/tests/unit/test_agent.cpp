#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "opadv/agent.hpp"
#include "opadv/corpus.hpp"
#include "opadv/error.hpp"
#include "opadv/ids.hpp"
#include "support.hpp"

using namespace opadv;
using agent::PolicyParams;
using agent::PpoConfig;
using agent::Trajectory;

namespace {

constexpr double kLog2Pi = 1.8378770664093453;

PpoConfig small_cfg(std::uint64_t seed = 1) {
  PpoConfig cfg;
  cfg.hidden = {8, 8};
  cfg.seed = seed;
  cfg.horizon = 64;
  cfg.minibatch = 16;
  cfg.total_steps = 128;
  return cfg;
}

std::vector<double> random_obs(std::mt19937_64& rng, std::size_t n) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Density of a = sigmoid(raw) under raw ~ N(mean, exp(log_std)^2).
double reference_log_prob(const std::vector<double>& mean, const std::vector<double>& log_std,
                          const std::vector<double>& raw) {
  double lp = 0.0;
  for (std::size_t i = 0; i < mean.size(); ++i) {
    const double sd = std::exp(log_std[i]);
    const double z = (raw[i] - mean[i]) / sd;
    lp += -0.5 * z * z - std::log(sd) - 0.5 * kLog2Pi;
    const double s = sigmoid(raw[i]);
    lp -= std::log(s * (1.0 - s));
  }
  return lp;
}

Trajectory random_traj(const PolicyParams& p, std::mt19937_64& rng, std::size_t n) {
  Trajectory t;
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    auto obs = random_obs(rng, p.observation_size());
    auto s = agent::sample_action(p, obs, rng);
    t.push(std::move(obs), std::move(s), u(rng), i % 5 == 4);
  }
  return t;
}

struct EnvFixture {
  std::shared_ptr<const Corpus> malware;
  std::shared_ptr<const ids::IdsModel> model;
  agent::EnvFactory factory;
};

EnvFixture env_fixture() {
  SyntheticCorpusSpec spec;
  spec.vocab_size = 12;
  spec.n_malware = 30;
  spec.n_benign = 30;
  spec.mean_length = 50;
  const auto corpus = generate_synthetic_corpus(spec, 8);
  ids::IdsConfig cfg;
  cfg.seed = 8;
  EnvFixture fx;
  fx.malware = std::make_shared<const Corpus>(malware_only(corpus));
  fx.model = std::make_shared<const ids::IdsModel>(ids::train_ids(corpus, cfg));
  auto m = fx.malware;
  auto model = fx.model;
  fx.factory = [m, model](std::uint64_t seed) {
    return env::ObfuscationEnv(m, model, env::EnvConfig{}, seed);
  };
  return fx;
}

}  // namespace

TEST_CASE("init_policy shapes") {
  const auto cfg = small_cfg();
  const auto p = agent::init_policy(10, 7, cfg, 3);
  CHECK(p.actor.layer_sizes() == std::vector<std::size_t>{10, 8, 8, 7});
  CHECK(p.critic.layer_sizes() == std::vector<std::size_t>{10, 8, 8, 1});
  CHECK(p.log_std == std::vector<double>(7, cfg.initial_log_std));
  for (const double b : p.actor.bias(2)) CHECK(b == cfg.initial_mean_bias);
  CHECK(agent::init_policy(10, 7, cfg, 3) == p);
}

TEST_CASE("sampled actions are squashed and their density is exact") {
  std::mt19937_64 rng(5);
  auto p = agent::init_policy(6, 4, small_cfg(), 2);
  for (int t = 0; t < 50; ++t) {
    const auto obs = random_obs(rng, 6);
    const auto s = agent::sample_action(p, obs, rng);
    for (const double a : s.action) {
      CHECK(a > 0.0);
      CHECK(a < 1.0);
    }
    const auto mean = nn::predict(p.actor, obs);
    CHECK(std::abs(s.log_prob - reference_log_prob(mean, p.log_std, s.raw)) <= 1e-9);
    CHECK(s.value == nn::predict(p.critic, obs)[0]);
    const auto le = agent::log_prob_and_entropy(p, obs, s.raw);
    CHECK(le.log_prob == s.log_prob);
  }
}

TEST_CASE("near-deterministic policy") {
  auto p = agent::init_policy(3, 3, small_cfg(), 4);
  p.log_std.assign(3, agent::kMinLogStd);
  const std::vector<double> obs = {0.2, 0.4, 0.6};
  std::mt19937_64 r1(9), r2(9);
  const auto a = agent::sample_action(p, obs, r1);
  const auto b = agent::sample_action(p, obs, r2);
  CHECK(a.action == b.action);
  const auto g = agent::greedy_action(p, obs);
  for (std::size_t i = 0; i < 3; ++i) CHECK(a.action[i] == doctest::Approx(g[i]).epsilon(0.02));
}

TEST_CASE("gaussian entropy closed form") {
  const std::vector<double> ls = {0.1, -0.3, 0.7, 0.0};
  const double h = agent::gaussian_entropy(ls);
  std::vector<double> doubled = ls;
  for (auto& x : doubled) x += std::log(2.0);
  CHECK(agent::gaussian_entropy(doubled) - h == doctest::Approx(4 * std::log(2.0)).epsilon(1e-12));
  double ref = 0.0;
  for (const double x : ls) ref += 0.5 * (1.0 + kLog2Pi) + x;
  CHECK(h == doctest::Approx(ref).epsilon(1e-12));

  auto p = agent::init_policy(3, 4, small_cfg(), 1);
  p.log_std = ls;
  const std::vector<double> raw = {0.0, 0.0, 0.0, 0.0};
  CHECK(agent::log_prob_and_entropy(p, std::vector<double>{0, 0, 0}, raw).entropy ==
        agent::log_prob_and_entropy(p, std::vector<double>{1, 5, -2}, raw).entropy);
  CHECK_THROWS_AS(agent::log_prob_and_entropy(p, std::vector<double>{0, 0, 0}, std::vector<double>{0.0}),
                  ValidationError);
}

TEST_CASE("gae telescopes with gamma = lambda = 1") {
  Trajectory t;
  t.rewards = {1.0, 2.0, 3.0, 4.0};
  t.values = {0.5, 0.1, -0.2, 0.3};
  t.dones = {0, 0, 0, 1};
  agent::compute_gae(t, 1.0, 1.0, false);
  CHECK(t.advantages[0] == doctest::Approx(10.0 - 0.5));
  CHECK(t.advantages[1] == doctest::Approx(9.0 - 0.1));
  CHECK(t.advantages[2] == doctest::Approx(7.0 + 0.2));
  CHECK(t.advantages[3] == doctest::Approx(4.0 - 0.3));
  for (std::size_t i = 0; i < 4; ++i) CHECK(t.returns[i] == doctest::Approx(t.advantages[i] + t.values[i]));
}

TEST_CASE("gae edge cases") {
  Trajectory t;
  t.rewards = {0, 0, 0};
  t.values = {0, 0, 0};
  t.dones = {0, 0, 1};
  agent::compute_gae(t, 0.99, 0.95, true);
  for (const double a : t.advantages) CHECK(a == 0.0);
  Trajectory empty;
  CHECK_THROWS_AS(agent::compute_gae(empty, 0.99, 0.95), ValidationError);
}

TEST_CASE("gae matches a quadratic-time recursion") {
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  for (int trial = 0; trial < 50; ++trial) {
    Trajectory t;
    const std::size_t n = 20;
    for (std::size_t i = 0; i < n; ++i) {
      t.rewards.push_back(u(rng));
      t.values.push_back(u(rng));
      t.dones.push_back(rng() % 4 == 0 ? 1 : 0);
    }
    t.last_value = u(rng);
    const double gamma = 0.9 + 0.1 * (rng() % 10) / 10.0, lambda = 0.8 + 0.02 * (rng() % 10);
    agent::compute_gae(t, gamma, lambda, false);
    auto next_v = [&](std::size_t k) { return k + 1 < n ? t.values[k + 1] : t.last_value; };
    for (std::size_t i = 0; i < n; ++i) {
      double a = 0.0, w = 1.0;
      for (std::size_t k = i; k < n; ++k) {
        a += w * (t.rewards[k] + (t.dones[k] ? 0.0 : gamma * next_v(k)) - t.values[k]);
        if (t.dones[k]) break;
        w *= gamma * lambda;
      }
      CHECK(std::abs(t.advantages[i] - a) <= 1e-10);
    }
    // normalized variant: same ordering, mean 0, std 1
    auto norm = t;
    agent::compute_gae(norm, gamma, lambda, true);
    const double mean = std::accumulate(norm.advantages.begin(), norm.advantages.end(), 0.0) / n;
    CHECK(std::abs(mean) <= 1e-12);
    CHECK(norm.returns == t.returns);
  }
}

TEST_CASE("clip objective") {
  CHECK(agent::ppo_clip_objective(1.0, 3.7, 0.2) == 3.7);
  CHECK(agent::ppo_clip_objective(1.5, 1.0, 0.2) == doctest::Approx(1.2));
  CHECK(agent::ppo_clip_objective(0.5, -1.0, 0.2) == doctest::Approx(-0.8));
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> r(0.01, 3.0), a(-10, 10), e(0.01, 0.9);
  for (int i = 0; i < 1000; ++i) {
    const double ratio = r(rng), adv = a(rng), eps = e(rng);
    const double c = std::min(std::max(ratio, 1.0 - eps), 1.0 + eps);
    CHECK(agent::ppo_clip_objective(ratio, adv, eps) == std::min(ratio * adv, c * adv));
  }
}

TEST_CASE("null update leaves parameters unchanged") {
  std::mt19937_64 rng(1);
  auto cfg = small_cfg();
  cfg.entropy_coef = 0.0;
  auto p = agent::init_policy(5, 3, cfg, 1);
  auto t = random_traj(p, rng, 32);
  t.advantages.assign(t.size(), 0.0);
  t.returns = t.values;
  const auto before = p;
  agent::PpoOptimizer opt(p, cfg.learning_rate);
  agent::ppo_update(p, opt, t, cfg, rng);
  CHECK(p == before);
}

TEST_CASE("ppo loss gradient matches finite differences") {
  std::mt19937_64 rng(21);
  auto cfg = small_cfg();
  cfg.entropy_coef = 0.05;
  for (int trial = 0; trial < 6; ++trial) {
    auto p = agent::init_policy(4, 3, cfg, rng());
    for (auto& v : p.log_std) v = -0.5 + 0.3 * (rng() % 4);
    auto t = random_traj(p, rng, 1);
    t.advantages = {trial % 2 ? 1.3 : -0.7};
    t.returns = {0.4};
    if (trial >= 2) {
      // move the policy so the ratio leaves 1 and possibly the clip range
      for (auto& w : p.actor.parameters()) w += 0.05 * ((rng() % 3) - 1.0);
    }
    const std::vector<std::size_t> idx = {0};
    agent::PolicyGradient g;
    agent::ppo_loss(p, t, idx, cfg, &g);
    auto loss = [&](const PolicyParams& q) { return agent::ppo_loss(q, t, idx, cfg, nullptr).total; };

    auto check_block = [&](std::span<double> params, std::span<const double> analytic) {
      for (std::size_t i = 0; i < params.size(); ++i) {
        const double saved = params[i];
        params[i] = saved + 1e-5;
        const double up = loss(p);
        params[i] = saved - 1e-5;
        const double down = loss(p);
        params[i] = saved;
        const double num = (up - down) / 2e-5;
        CHECK(std::abs(num - analytic[i]) / std::max({1.0, std::abs(num), std::abs(analytic[i])}) <= 1e-4);
      }
    };
    check_block(p.actor.parameters(), g.actor.params);
    check_block(p.log_std, g.log_std);
    check_block(p.critic.parameters(), g.critic.params);
  }
}

TEST_CASE("first-epoch ratio and approx_kl recomputation") {
  std::mt19937_64 rng(31);
  const auto cfg = small_cfg();
  auto p = agent::init_policy(5, 4, cfg, 2);
  auto t = random_traj(p, rng, 48);
  agent::compute_gae(t, cfg.gamma, cfg.lambda, true);
  agent::PpoOptimizer opt(p, cfg.learning_rate);
  const auto stats = agent::ppo_update(p, opt, t, cfg, rng);
  CHECK(stats.initial_ratio_deviation <= 1e-12);
  double kl = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    kl += t.log_probs[i] - agent::log_prob_and_entropy(p, t.observations[i], t.raw_actions[i]).log_prob;
  }
  CHECK(stats.approx_kl == doctest::Approx(kl / t.size()).epsilon(1e-12));
  CHECK(stats.clip_fraction >= 0.0);
  CHECK(stats.clip_fraction <= 1.0);
  for (const double ls : p.log_std) {
    CHECK(ls >= agent::kMinLogStd);
    CHECK(ls <= agent::kMaxLogStd);
  }
}

TEST_CASE("train_agent loop arithmetic and determinism") {
  const auto fx = env_fixture();
  auto cfg = small_cfg(4);
  cfg.total_steps = 40;  // < horizon
  const auto one = agent::train_agent(fx.factory, cfg);
  CHECK(one.log.size() == 1);
  CHECK(one.log[0].env_steps == 40);

  cfg.total_steps = 150;
  const auto a = agent::train_agent(fx.factory, cfg);
  const auto b = agent::train_agent(fx.factory, cfg);
  CHECK(a.log.size() == 3);
  CHECK(a.log.back().env_steps == 150);
  CHECK(a.params == b.params);
  std::ostringstream la, lb;
  agent::write_training_log(a.log, la);
  agent::write_training_log(b.log, lb);
  CHECK(la.str() == lb.str());
  CHECK(a.params.actor.all_finite());
  CHECK(a.params.critic.all_finite());
}

TEST_CASE("training log round-trip") {
  const auto fx = env_fixture();
  auto cfg = small_cfg(2);
  const auto r = agent::train_agent(fx.factory, cfg);
  testing::TempDir dir;
  {
    std::ofstream out(dir / "log.jsonl", std::ios::binary);
    agent::write_training_log(r.log, out);
  }
  CHECK(agent::read_training_log(dir / "log.jsonl") == r.log);
  const auto text = testing::slurp(dir / "log.jsonl");
  CHECK(std::count(text.begin(), text.end(), '\n') == static_cast<long>(r.log.size()));
}

TEST_CASE("agent checkpoint round-trip") {
  testing::TempDir dir;
  const auto cfg = small_cfg(6);
  auto p = agent::init_policy(7, 4, cfg, 6);
  p.log_std = {-0.1, 0.3333333333333333, 1.0 / 7.0, -4.9};
  agent::save_agent(p, cfg, dir / "agent.json");
  const auto [back, back_cfg] = agent::load_agent(dir / "agent.json");
  CHECK(back == p);
  CHECK(back_cfg.hidden == cfg.hidden);
  CHECK(back_cfg.seed == cfg.seed);
  CHECK_THROWS_WITH_AS(agent::load_agent(dir / "nope.json"), doctest::Contains("missing checkpoint"),
                       ValidationError);
}

TEST_CASE("greedy episode is deterministic and insertion-only") {
  const auto fx = env_fixture();
  const auto p = agent::init_policy(15, 12, small_cfg(), 3);
  auto e1 = fx.factory(1), e2 = fx.factory(99);
  const auto& s = fx.malware->front();
  const auto a = agent::run_greedy_episode(p, e1, s);
  const auto b = agent::run_greedy_episode(p, e2, s);
  CHECK(a.current == b.current);
  CHECK(a.done);
  for (std::size_t i = 0; i < a.current.size(); ++i) CHECK(a.current[i] >= a.original[i]);
}

TEST_CASE("insertion dissimilarity") {
  using V = std::vector<std::int64_t>;
  CHECK(agent::insertion_dissimilarity(V{0, 0}, V{0, 0}) == 0.0);
  CHECK(agent::insertion_dissimilarity(V{0, 0}, V{1, 0}) == 1.0);
  CHECK(agent::insertion_dissimilarity(V{2, 0}, V{5, 0}) == doctest::Approx(0.0));
  CHECK(agent::insertion_dissimilarity(V{1, 0}, V{0, 1}) == 1.0);
  CHECK(agent::insertion_dissimilarity(V{1, 1}, V{1, 0}) == doctest::Approx(1.0 - std::sqrt(0.5)));
}

TEST_CASE("ensemble validation and degenerate sizes") {
  agent::EnsembleConfig dup;
  dup.seeds = {1, 1};
  dup.entropy_coefs = {0.01, 0.02};
  CHECK_THROWS_AS(dup.validate(), ValidationError);
  agent::EnsembleConfig mismatch;
  mismatch.seeds = {1, 2};
  mismatch.entropy_coefs = {0.01};
  CHECK_THROWS_AS(mismatch.validate(), ValidationError);

  const auto fx = env_fixture();
  auto cfg = small_cfg();
  cfg.total_steps = 64;
  agent::EnsembleConfig single;
  single.seeds = {5};
  single.entropy_coefs = {0.01};
  const auto one = agent::train_ensemble(fx.factory, single, cfg, *fx.malware);
  CHECK(one.agents.size() == 1);
  CHECK(one.dissimilarity.pairs.empty());

  agent::EnsembleConfig three;
  three.seeds = {1, 2, 3};
  three.entropy_coefs = {0.005, 0.01, 0.02};
  const auto r = agent::train_ensemble(fx.factory, three, cfg, *fx.malware);
  CHECK(r.agents.size() == 3);
  CHECK(r.dissimilarity.pairs.size() == 3);
  double mean = 0.0;
  for (const auto& pr : r.dissimilarity.pairs) {
    CHECK(pr.dissimilarity >= 0.0);
    CHECK(pr.dissimilarity <= 1.0);
    mean += pr.dissimilarity;
  }
  CHECK(r.dissimilarity.mean == doctest::Approx(mean / 3.0));
  // each worker reproduces a sequential run with the same seed
  auto solo = cfg;
  solo.seed = 2;
  solo.entropy_coef = 0.01;
  CHECK(agent::train_agent(fx.factory, solo).params == r.agents[1].params);
}

TEST_CASE("ppo config validation") {
  PpoConfig cfg;
  cfg.clip = 1.5;
  CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("clip must be in (0,1)"), ValidationError);
  cfg = {};
  cfg.hidden = {};
  CHECK_NOTHROW(cfg.validate());
  cfg.minibatch = 0;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
}
