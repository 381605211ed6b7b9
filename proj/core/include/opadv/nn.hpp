#ifndef OPADV_NN_HPP_
#define OPADV_NN_HPP_

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace opadv::nn {

/// Dense feed-forward stack: tanh on hidden layers, identity on the output.
///
/// All parameters live in one flat buffer, layer by layer, each layer stored
/// as its row-major weight matrix (out x in) followed by its bias vector. A
/// GradientSet uses the same layout, which is what lets the optimizer treat
/// every network as a single vector.
class DenseNet {
 public:
  DenseNet() = default;
  /// Zero-initialized parameters.
  explicit DenseNet(std::vector<std::size_t> layer_sizes);

  const std::vector<std::size_t>& layer_sizes() const { return sizes_; }
  std::size_t num_layers() const { return sizes_.size() - 1; }
  std::size_t input_size() const { return sizes_.front(); }
  std::size_t output_size() const { return sizes_.back(); }
  std::size_t num_parameters() const { return params_.size(); }

  std::span<double> parameters() { return params_; }
  std::span<const double> parameters() const { return params_; }

  /// Layer `l` weight matrix (rows = outputs) and bias.
  std::span<double> weights(std::size_t l);
  std::span<const double> weights(std::size_t l) const;
  std::span<double> bias(std::size_t l);
  std::span<const double> bias(std::size_t l) const;

  bool all_finite() const;
  bool operator==(const DenseNet&) const = default;

 private:
  std::size_t weight_offset(std::size_t l) const { return offsets_[l]; }
  std::size_t bias_offset(std::size_t l) const { return offsets_[l] + sizes_[l] * sizes_[l + 1]; }

  std::vector<std::size_t> sizes_;
  std::vector<std::size_t> offsets_;
  std::vector<double> params_;
};

/// Glorot-uniform weights, zero biases.
DenseNet init_net(const std::vector<std::size_t>& layer_sizes, std::uint64_t seed);

/// Everything backward() needs: the input and each layer's post-activation.
struct ActivationCache {
  std::vector<std::size_t> layer_sizes;
  std::vector<std::vector<double>> activations;  // [0] = input, [L] = output
};

struct ForwardResult {
  std::vector<double> output;
  ActivationCache cache;
};

ForwardResult forward(const DenseNet& net, std::span<const double> x);
/// Output only, no cache.
std::vector<double> predict(const DenseNet& net, std::span<const double> x);

struct GradientSet {
  std::vector<double> params;  // same layout as DenseNet::parameters()
  std::vector<double> input;

  explicit GradientSet(const DenseNet& net)
      : params(net.num_parameters(), 0.0), input(net.input_size(), 0.0) {}
  GradientSet() = default;
};

/// Gradient of dot(output, output_grad) w.r.t. parameters and input.
GradientSet backward(const DenseNet& net, const ActivationCache& cache,
                     std::span<const double> output_grad);
/// Accumulating form: adds into `grads` (input gradient overwritten).
void backward_into(const DenseNet& net, const ActivationCache& cache,
                   std::span<const double> output_grad, GradientSet& grads);

struct AdamConfig {
  double learning_rate = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  AdamConfig config;
  std::int64_t step = 0;
  std::vector<double> m;
  std::vector<double> v;

  AdamState() = default;
  AdamState(AdamConfig cfg, std::size_t n) : config(cfg), m(n, 0.0), v(n, 0.0) {}
  bool operator==(const AdamState&) const = default;
};

/// One bias-corrected Adam update of `params` in place. Throws
/// RuntimeFailure("gradient blow-up") if any gradient is non-finite; the
/// parameters are untouched in that case.
void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state);
void adam_step(DenseNet& net, const GradientSet& grads, AdamState& state);

/// Worst relative error between `analytic` and central differences of
/// `loss` over every parameter, using |a-b| / max(1, |a|, |b|).
double finite_diff_check(DenseNet& net, const std::function<double(const DenseNet&)>& loss,
                         std::span<const double> analytic, double step = 1e-5);
/// Same, but computes the analytic gradient as backward(forward(x), d loss/d out)
/// for loss(out) = dot(out, weights).
double finite_diff_check(DenseNet& net, std::span<const double> x,
                         std::span<const double> output_weights, double step = 1e-5);

void to_json(nlohmann::json& j, const DenseNet& net);
void from_json(const nlohmann::json& j, DenseNet& net);

}  // namespace opadv::nn

#endif  // OPADV_NN_HPP_
