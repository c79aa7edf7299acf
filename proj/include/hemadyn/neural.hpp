#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

namespace hemadyn {

enum class Activation { Sigmoid, Tanh, Rbf, Linear };

std::string_view to_string(Activation activation);
Activation activation_from_string(std::string_view name);

/// Elementwise activation and its derivative. rbf is the Gaussian exp(-x^2).
double activate(Activation activation, double x);
double activate_derivative(Activation activation, double x);

/// Dense network: input -> hidden layers (activation) -> linear output.
struct MlpSpec {
  std::vector<int> layer_sizes{3, 10, 1};
  Activation activation = Activation::Tanh;
  double l2 = 0.0;

  void validate() const;
  /// Hidden layer count in [1,3] and widths from {3,5,10,20,50}.
  bool is_default_architecture() const;
  /// sum over layers of (n_in + 1) * n_out.
  std::size_t parameter_count() const;

  bool operator==(const MlpSpec&) const = default;
};

/// Per-evaluation intermediate values kept for the backward pass.
struct MlpCache {
  std::vector<std::vector<double>> inputs;  ///< input to each layer
  std::vector<std::vector<double>> pre;     ///< pre-activation of each layer
};

/// Parameters are stored flat; per layer the weight matrix (row-major,
/// n_out x n_in) followed by the bias vector.
class MlpNet {
 public:
  MlpNet() = default;
  explicit MlpNet(MlpSpec spec);
  MlpNet(MlpSpec spec, std::vector<double> parameters);

  const MlpSpec& spec() const noexcept { return spec_; }
  std::span<double> parameters() noexcept { return params_; }
  std::span<const double> parameters() const noexcept { return params_; }
  std::size_t parameter_count() const noexcept { return params_.size(); }
  std::size_t input_size() const noexcept { return static_cast<std::size_t>(spec_.layer_sizes.front()); }

  /// Whether the flat parameter at `index` is a weight (as opposed to a bias).
  bool is_weight(std::size_t index) const;

  double forward(std::span<const double> input) const;
  double forward(std::span<const double> input, MlpCache& cache) const;

  /// Reverse pass for output * upstream: accumulates into `param_grad` and
  /// overwrites `input_grad` (either may be empty to skip it).
  void backward(const MlpCache& cache, double upstream, std::span<double> param_grad,
                std::span<double> input_grad) const;

  /// l2 * sum of squared weights (biases excluded).
  double l2_penalty() const;
  /// Adds 2 * l2 * w to the weight entries of `grad`.
  void add_l2_gradient(std::span<double> grad) const;
  double weight_norm_squared() const;

  bool operator==(const MlpNet&) const = default;

 private:
  MlpSpec spec_;
  std::vector<double> params_;
  std::vector<std::size_t> offsets_;  ///< start of each layer's weights
};

double mlp_forward(const MlpNet& net, std::span<const double> input);

struct MlpGradient {
  std::vector<double> parameters;
  std::vector<double> input;
};

MlpGradient mlp_gradient(const MlpNet& net, std::span<const double> input, double upstream);

/// Glorot-uniform weights, zero biases, reproducible per seed.
MlpNet init_weights(const MlpSpec& spec, std::uint64_t seed, double gain = 1.0);

}  // namespace hemadyn
