#include "opadv/selfcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "opadv/agent.hpp"
#include "opadv/nn.hpp"
#include "opadv/rng.hpp"
#include "opadv/text.hpp"

namespace opadv {
namespace {

bool report_line(std::ostream& out, bool ok, const std::string& name, const std::string& detail) {
  out << (ok ? "PASS " : "FAIL ") << name << ' ' << detail << '\n';
  return ok;
}

double gradient_check(Rng& rng) {
  std::uniform_int_distribution<std::size_t> width(1, 6);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  double worst = 0.0;
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<std::size_t> sizes = {width(rng), width(rng), width(rng), width(rng)};
    auto net = nn::init_net(sizes, rng());
    std::vector<double> x(sizes.front()), w(sizes.back());
    for (auto& v : x) v = u(rng);
    for (auto& v : w) v = u(rng);
    worst = std::max(worst, nn::finite_diff_check(net, x, w));
  }
  return worst;
}

// Direct sum A_t = sum_l (gamma lambda)^l delta_{t+l}, cut at the first done.
double gae_check(Rng& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::bernoulli_distribution done(0.2);
  double worst = 0.0;
  for (int trial = 0; trial < 5; ++trial) {
    agent::Trajectory traj;
    const std::size_t n = 12;
    for (std::size_t t = 0; t < n; ++t) {
      traj.rewards.push_back(u(rng));
      traj.values.push_back(u(rng));
      traj.dones.push_back(done(rng) ? 1 : 0);
    }
    traj.last_value = u(rng);
    const double gamma = 0.99, lambda = 0.95;
    agent::compute_gae(traj, gamma, lambda, false);
    for (std::size_t t = 0; t < n; ++t) {
      double a = 0.0, weight = 1.0;
      for (std::size_t k = t; k < n; ++k) {
        const double next = k + 1 < n ? traj.values[k + 1] : traj.last_value;
        const double delta = traj.rewards[k] + (traj.dones[k] ? 0.0 : gamma * next) - traj.values[k];
        a += weight * delta;
        if (traj.dones[k]) break;
        weight *= gamma * lambda;
      }
      worst = std::max(worst, std::abs(a - traj.advantages[t]));
    }
  }
  return worst;
}

std::size_t clip_check(Rng& rng) {
  std::uniform_real_distribution<double> ratio(0.0, 3.0), adv(-5.0, 5.0), eps(0.01, 0.5);
  std::size_t mismatches = 0;
  for (int i = 0; i < 200; ++i) {
    const double r = ratio(rng), a = adv(rng), e = eps(rng);
    const double clipped = r < 1.0 - e ? 1.0 - e : (r > 1.0 + e ? 1.0 + e : r);
    const double expect = std::min(r * a, clipped * a);
    if (agent::ppo_clip_objective(r, a, e) != expect) ++mismatches;
  }
  return mismatches;
}

double first_ratio_check(Rng& rng) {
  agent::PpoConfig cfg;
  cfg.hidden = {8};
  cfg.minibatch = 8;
  cfg.epochs = 1;
  cfg.seed = rng();
  const std::size_t obs_dim = 6, act_dim = 3;
  auto params = agent::init_policy(obs_dim, act_dim, cfg, cfg.seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  agent::Trajectory traj;
  for (int t = 0; t < 32; ++t) {
    std::vector<double> obs(obs_dim);
    for (auto& v : obs) v = u(rng);
    auto sample = agent::sample_action(params, obs, rng);
    traj.push(std::move(obs), std::move(sample), u(rng), t % 8 == 7);
  }
  agent::compute_gae(traj, cfg.gamma, cfg.lambda, true);
  agent::PpoOptimizer opt(params, cfg.learning_rate);
  return agent::ppo_update(params, opt, traj, cfg, rng).initial_ratio_deviation;
}

}  // namespace

bool run_selfcheck(std::ostream& out, std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0x5E1F));
  bool ok = true;
  const double fd = gradient_check(rng);
  ok &= report_line(out, fd <= 1e-4, "backward-vs-finite-difference", "max_rel_err=" + text::format_exact(fd));
  const double gae = gae_check(rng);
  ok &= report_line(out, gae <= 1e-10, "gae-vs-direct-sum", "max_abs_err=" + text::format_exact(gae));
  const auto clip = clip_check(rng);
  ok &= report_line(out, clip == 0, "clip-objective-formula", "mismatches=" + std::to_string(clip));
  const double ratio = first_ratio_check(rng);
  ok &= report_line(out, ratio <= 1e-12, "first-epoch-ratio", "max_dev=" + text::format_exact(ratio));
  return ok;
}

}  // namespace opadv
