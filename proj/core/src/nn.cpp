#include "opadv/nn.hpp"

#include <algorithm>
#include <cmath>
#include <nlohmann/json.hpp>

#include "opadv/error.hpp"
#include "opadv/rng.hpp"

namespace opadv::nn {

DenseNet::DenseNet(std::vector<std::size_t> layer_sizes) : sizes_(std::move(layer_sizes)) {
  if (sizes_.size() < 2) throw ValidationError("a network needs at least 2 layer sizes");
  for (const auto s : sizes_) {
    if (s < 1) throw ValidationError("layer sizes must be >= 1");
  }
  std::size_t offset = 0;
  for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
    offsets_.push_back(offset);
    offset += sizes_[l] * sizes_[l + 1] + sizes_[l + 1];
  }
  params_.assign(offset, 0.0);
}

std::span<double> DenseNet::weights(std::size_t l) {
  return std::span<double>(params_).subspan(weight_offset(l), sizes_[l] * sizes_[l + 1]);
}
std::span<const double> DenseNet::weights(std::size_t l) const {
  return std::span<const double>(params_).subspan(weight_offset(l), sizes_[l] * sizes_[l + 1]);
}
std::span<double> DenseNet::bias(std::size_t l) {
  return std::span<double>(params_).subspan(bias_offset(l), sizes_[l + 1]);
}
std::span<const double> DenseNet::bias(std::size_t l) const {
  return std::span<const double>(params_).subspan(bias_offset(l), sizes_[l + 1]);
}

bool DenseNet::all_finite() const {
  return std::all_of(params_.begin(), params_.end(), [](double x) { return std::isfinite(x); });
}

DenseNet init_net(const std::vector<std::size_t>& layer_sizes, std::uint64_t seed) {
  DenseNet net(layer_sizes);
  Rng rng(mix_seed(seed, 0x11));
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    const double fan_in = static_cast<double>(layer_sizes[l]);
    const double fan_out = static_cast<double>(layer_sizes[l + 1]);
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (auto& w : net.weights(l)) w = dist(rng);
  }
  return net;
}

namespace {

// out = W x + b, W row-major (n_out x n_in).
void affine(std::span<const double> w, std::span<const double> b, std::span<const double> x,
            std::vector<double>& out) {
  const std::size_t n_in = x.size();
  const std::size_t n_out = b.size();
  out.resize(n_out);
  for (std::size_t o = 0; o < n_out; ++o) {
    const double* row = w.data() + o * n_in;
    double acc = b[o];
    for (std::size_t i = 0; i < n_in; ++i) acc += row[i] * x[i];
    out[o] = acc;
  }
}

void check_input(const DenseNet& net, std::span<const double> x) {
  if (x.size() != net.input_size()) {
    throw ValidationError("network input has size " + std::to_string(x.size()) + ", expected " +
                          std::to_string(net.input_size()));
  }
}

}  // namespace

ForwardResult forward(const DenseNet& net, std::span<const double> x) {
  check_input(net, x);
  ForwardResult result;
  result.cache.layer_sizes = net.layer_sizes();
  auto& acts = result.cache.activations;
  acts.resize(net.num_layers() + 1);
  acts[0].assign(x.begin(), x.end());
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    affine(net.weights(l), net.bias(l), acts[l], acts[l + 1]);
    if (l + 1 < net.num_layers()) {
      for (auto& a : acts[l + 1]) a = std::tanh(a);
    }
  }
  result.output = acts.back();
  return result;
}

std::vector<double> predict(const DenseNet& net, std::span<const double> x) {
  check_input(net, x);
  std::vector<double> cur(x.begin(), x.end());
  std::vector<double> next;
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    affine(net.weights(l), net.bias(l), cur, next);
    if (l + 1 < net.num_layers()) {
      for (auto& a : next) a = std::tanh(a);
    }
    std::swap(cur, next);
  }
  return cur;
}

void backward_into(const DenseNet& net, const ActivationCache& cache,
                   std::span<const double> output_grad, GradientSet& grads) {
  if (cache.layer_sizes != net.layer_sizes() || cache.activations.size() != net.num_layers() + 1) {
    throw ValidationError("activation cache does not match the network");
  }
  for (std::size_t l = 0; l <= net.num_layers(); ++l) {
    if (cache.activations[l].size() != net.layer_sizes()[l]) {
      throw ValidationError("activation cache does not match the network");
    }
  }
  if (output_grad.size() != net.output_size()) {
    throw ValidationError("output gradient has the wrong size");
  }
  if (grads.params.size() != net.num_parameters()) {
    throw ValidationError("gradient set does not match the network");
  }

  const auto& sizes = net.layer_sizes();
  // delta = dLoss / d(pre-activation) of the current layer.
  std::vector<double> delta(output_grad.begin(), output_grad.end());
  std::vector<double> prev_delta;
  for (std::size_t l = net.num_layers(); l-- > 0;) {
    const auto& in = cache.activations[l];
    const std::size_t n_in = sizes[l];
    const std::size_t n_out = sizes[l + 1];
    const auto w = net.weights(l);

    const std::size_t w_off = static_cast<std::size_t>(net.weights(l).data() - net.parameters().data());
    const std::size_t b_off = static_cast<std::size_t>(net.bias(l).data() - net.parameters().data());
    double* gw = grads.params.data() + w_off;
    double* gb = grads.params.data() + b_off;
    for (std::size_t o = 0; o < n_out; ++o) {
      const double d = delta[o];
      gb[o] += d;
      if (d == 0.0) continue;
      double* row = gw + o * n_in;
      for (std::size_t i = 0; i < n_in; ++i) row[i] += d * in[i];
    }

    prev_delta.assign(n_in, 0.0);
    for (std::size_t o = 0; o < n_out; ++o) {
      const double d = delta[o];
      if (d == 0.0) continue;
      const double* row = w.data() + o * n_in;
      for (std::size_t i = 0; i < n_in; ++i) prev_delta[i] += row[i] * d;
    }
    if (l > 0) {
      // in = tanh(z) so dtanh/dz = 1 - in^2.
      for (std::size_t i = 0; i < n_in; ++i) prev_delta[i] *= 1.0 - in[i] * in[i];
    }
    std::swap(delta, prev_delta);
  }
  grads.input = std::move(delta);
}

GradientSet backward(const DenseNet& net, const ActivationCache& cache,
                     std::span<const double> output_grad) {
  GradientSet grads(net);
  backward_into(net, cache, output_grad, grads);
  return grads;
}

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state) {
  if (grads.size() != params.size() || state.m.size() != params.size() ||
      state.v.size() != params.size()) {
    throw ValidationError("adam: shape mismatch");
  }
  for (const double g : grads) {
    if (!std::isfinite(g)) throw RuntimeFailure("gradient blow-up");
  }
  const auto& c = state.config;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    state.m[i] = c.beta1 * state.m[i] + (1.0 - c.beta1) * g;
    state.v[i] = c.beta2 * state.v[i] + (1.0 - c.beta2) * g * g;
    const double m_hat = state.m[i] / bc1;
    const double v_hat = state.v[i] / bc2;
    params[i] -= c.learning_rate * m_hat / (std::sqrt(v_hat) + c.eps);
  }
}

void adam_step(DenseNet& net, const GradientSet& grads, AdamState& state) {
  adam_step(net.parameters(), grads.params, state);
}

double finite_diff_check(DenseNet& net, const std::function<double(const DenseNet&)>& loss,
                         std::span<const double> analytic, double step) {
  if (analytic.size() != net.num_parameters()) {
    throw ValidationError("analytic gradient has the wrong size");
  }
  double worst = 0.0;
  auto params = net.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double saved = params[i];
    params[i] = saved + step;
    const double up = loss(net);
    params[i] = saved - step;
    const double down = loss(net);
    params[i] = saved;
    const double numeric = (up - down) / (2.0 * step);
    const double denom = std::max({1.0, std::abs(numeric), std::abs(analytic[i])});
    worst = std::max(worst, std::abs(numeric - analytic[i]) / denom);
  }
  return worst;
}

double finite_diff_check(DenseNet& net, std::span<const double> x,
                         std::span<const double> output_weights, double step) {
  const auto fwd = forward(net, x);
  const auto grads = backward(net, fwd.cache, output_weights);
  const auto loss = [&](const DenseNet& n) {
    const auto out = predict(n, x);
    double acc = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) acc += out[i] * output_weights[i];
    return acc;
  };
  return finite_diff_check(net, loss, grads.params, step);
}

void to_json(nlohmann::json& j, const DenseNet& net) {
  j = nlohmann::json{{"layer_sizes", net.layer_sizes()},
                     {"parameters", std::vector<double>(net.parameters().begin(),
                                                        net.parameters().end())}};
}

void from_json(const nlohmann::json& j, DenseNet& net) {
  DenseNet out(j.at("layer_sizes").get<std::vector<std::size_t>>());
  const auto params = j.at("parameters").get<std::vector<double>>();
  if (params.size() != out.num_parameters()) {
    throw ValidationError("network checkpoint: parameter count mismatch");
  }
  std::copy(params.begin(), params.end(), out.parameters().begin());
  net = std::move(out);
}

}  // namespace opadv::nn
