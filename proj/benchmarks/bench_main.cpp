#include <benchmark/benchmark.h>

#include <memory>
#include <random>

#include "opadv/agent.hpp"
#include "opadv/corpus.hpp"
#include "opadv/env.hpp"
#include "opadv/ids.hpp"
#include "opadv/nn.hpp"

using namespace opadv;

namespace {

struct World {
  std::shared_ptr<const Corpus> malware;
  std::shared_ptr<const ids::IdsModel> model;
};

const World& world() {
  static const World w = [] {
    SyntheticCorpusSpec spec;
    spec.vocab_size = 64;
    spec.n_malware = 200;
    spec.n_benign = 200;
    const auto corpus = generate_synthetic_corpus(spec, 1);
    ids::IdsConfig cfg;
    cfg.seed = 1;
    return World{std::make_shared<const Corpus>(malware_only(corpus)),
                 std::make_shared<const ids::IdsModel>(ids::train_ids(corpus, cfg))};
  }();
  return w;
}

void BM_Forward(benchmark::State& state) {
  const auto width = static_cast<std::size_t>(state.range(0));
  const auto net = nn::init_net({67, width, width, 64}, 1);
  std::vector<double> x(67, 0.1);
  for (auto _ : state) benchmark::DoNotOptimize(nn::forward(net, x));
}
BENCHMARK(BM_Forward)->Arg(32)->Arg(64)->Arg(128);

void BM_ForwardBackward(benchmark::State& state) {
  const auto width = static_cast<std::size_t>(state.range(0));
  const auto net = nn::init_net({67, width, width, 64}, 1);
  std::vector<double> x(67, 0.1), g(64, 1.0);
  for (auto _ : state) {
    const auto f = nn::forward(net, x);
    benchmark::DoNotOptimize(nn::backward(net, f.cache, g));
  }
}
BENCHMARK(BM_ForwardBackward)->Arg(32)->Arg(64)->Arg(128);

void BM_EnvStep(benchmark::State& state) {
  env::ObfuscationEnv e(world().malware, world().model, env::EnvConfig{}, 1);
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> a(64);
  e.reset();
  for (auto _ : state) {
    for (auto& v : a) v = u(rng);
    const auto r = e.step(a);
    if (r.done) e.reset();
    benchmark::DoNotOptimize(r);
  }
}
BENCHMARK(BM_EnvStep);

void BM_PpoUpdate(benchmark::State& state) {
  agent::PpoConfig cfg;
  cfg.horizon = static_cast<std::size_t>(state.range(0));
  env::ObfuscationEnv e(world().malware, world().model, env::EnvConfig{}, 1);
  auto obs = e.reset();
  const auto params0 = agent::init_policy(obs.size(), 64, cfg, 1);
  Rng rng(1);
  agent::Trajectory traj;
  for (std::size_t i = 0; i < cfg.horizon; ++i) {
    auto s = agent::sample_action(params0, obs, rng);
    const auto r = e.step(s.action);
    traj.push(obs, std::move(s), r.reward, r.done);
    obs = r.done ? e.reset() : r.observation;
  }
  traj.last_value = agent::state_value(params0, obs);
  agent::compute_gae(traj, cfg.gamma, cfg.lambda);
  for (auto _ : state) {
    auto params = params0;
    agent::PpoOptimizer opt(params, cfg.learning_rate);
    Rng shuffle(2);
    benchmark::DoNotOptimize(agent::ppo_update(params, opt, traj, cfg, shuffle));
  }
}
BENCHMARK(BM_PpoUpdate)->Arg(512)->Arg(2048)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
