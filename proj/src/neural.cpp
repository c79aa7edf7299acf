#include "hemadyn/neural.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "hemadyn/errors.hpp"

namespace hemadyn {

std::string_view to_string(Activation activation) {
  switch (activation) {
    case Activation::Sigmoid: return "sigmoid";
    case Activation::Tanh: return "tanh";
    case Activation::Rbf: return "rbf";
    case Activation::Linear: return "linear";
  }
  return "?";
}

Activation activation_from_string(std::string_view name) {
  for (Activation a : {Activation::Sigmoid, Activation::Tanh, Activation::Rbf, Activation::Linear}) {
    if (to_string(a) == name) return a;
  }
  throw PreconditionError("unknown activation '" + std::string(name) + "'");
}

double activate(Activation activation, double x) {
  switch (activation) {
    case Activation::Sigmoid: return 1.0 / (1.0 + std::exp(-x));
    case Activation::Tanh: return std::tanh(x);
    case Activation::Rbf: return std::exp(-x * x);
    case Activation::Linear: return x;
  }
  return x;
}

double activate_derivative(Activation activation, double x) {
  switch (activation) {
    case Activation::Sigmoid: {
      const double s = 1.0 / (1.0 + std::exp(-x));
      return s * (1.0 - s);
    }
    case Activation::Tanh: {
      const double t = std::tanh(x);
      return 1.0 - t * t;
    }
    case Activation::Rbf: return -2.0 * x * std::exp(-x * x);
    case Activation::Linear: return 1.0;
  }
  return 1.0;
}

void MlpSpec::validate() const {
  if (layer_sizes.size() < 2) throw PreconditionError("MLP needs at least input and output layers");
  for (int n : layer_sizes)
    if (n <= 0) throw PreconditionError("MLP layer sizes must be positive");
  if (!(l2 >= 0.0)) throw PreconditionError("l2 must be non-negative");
}

bool MlpSpec::is_default_architecture() const {
  const auto hidden = static_cast<int>(layer_sizes.size()) - 2;
  if (hidden < 1 || hidden > 3) return false;
  for (int i = 1; i <= hidden; ++i) {
    const int w = layer_sizes[static_cast<std::size_t>(i)];
    if (w != 3 && w != 5 && w != 10 && w != 20 && w != 50) return false;
  }
  return true;
}

std::size_t MlpSpec::parameter_count() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l)
    n += static_cast<std::size_t>(layer_sizes[l] + 1) * static_cast<std::size_t>(layer_sizes[l + 1]);
  return n;
}

MlpNet::MlpNet(MlpSpec spec) : MlpNet(spec, std::vector<double>(spec.parameter_count(), 0.0)) {}

MlpNet::MlpNet(MlpSpec spec, std::vector<double> parameters) : spec_(std::move(spec)), params_(std::move(parameters)) {
  spec_.validate();
  if (params_.size() != spec_.parameter_count())
    throw PreconditionError("MLP parameter vector has " + std::to_string(params_.size()) + " entries, expected " +
                            std::to_string(spec_.parameter_count()));
  std::size_t off = 0;
  for (std::size_t l = 0; l + 1 < spec_.layer_sizes.size(); ++l) {
    offsets_.push_back(off);
    off += static_cast<std::size_t>(spec_.layer_sizes[l] + 1) * static_cast<std::size_t>(spec_.layer_sizes[l + 1]);
  }
}

bool MlpNet::is_weight(std::size_t index) const {
  for (std::size_t l = 0; l < offsets_.size(); ++l) {
    const auto n_in = static_cast<std::size_t>(spec_.layer_sizes[l]);
    const auto n_out = static_cast<std::size_t>(spec_.layer_sizes[l + 1]);
    if (index >= offsets_[l] && index < offsets_[l] + n_in * n_out + n_out) return index < offsets_[l] + n_in * n_out;
  }
  return false;
}

double MlpNet::forward(std::span<const double> input) const {
  MlpCache cache;
  return forward(input, cache);
}

double MlpNet::forward(std::span<const double> input, MlpCache& cache) const {
  if (input.size() != input_size()) throw PreconditionError("MLP input has wrong size");
  const std::size_t layers = offsets_.size();
  cache.inputs.resize(layers);
  cache.pre.resize(layers);
  cache.inputs[0].assign(input.begin(), input.end());
  for (std::size_t l = 0; l < layers; ++l) {
    const auto n_in = static_cast<std::size_t>(spec_.layer_sizes[l]);
    const auto n_out = static_cast<std::size_t>(spec_.layer_sizes[l + 1]);
    const double* w = params_.data() + offsets_[l];
    const double* b = w + n_in * n_out;
    const auto& x = cache.inputs[l];
    auto& z = cache.pre[l];
    z.resize(n_out);
    for (std::size_t o = 0; o < n_out; ++o) {
      double acc = b[o];
      for (std::size_t i = 0; i < n_in; ++i) acc += w[o * n_in + i] * x[i];
      z[o] = acc;
    }
    if (l + 1 < layers) {
      auto& next = cache.inputs[l + 1];
      next.resize(n_out);
      for (std::size_t o = 0; o < n_out; ++o) next[o] = activate(spec_.activation, z[o]);
    }
  }
  return cache.pre.back()[0];
}

void MlpNet::backward(const MlpCache& cache, double upstream, std::span<double> param_grad,
                      std::span<double> input_grad) const {
  const std::size_t layers = offsets_.size();
  std::vector<double> delta{upstream};  // d out / d pre-activation of the current layer
  std::vector<double> prev;
  for (std::size_t l = layers; l-- > 0;) {
    const auto n_in = static_cast<std::size_t>(spec_.layer_sizes[l]);
    const auto n_out = static_cast<std::size_t>(spec_.layer_sizes[l + 1]);
    const double* w = params_.data() + offsets_[l];
    const auto& x = cache.inputs[l];
    if (!param_grad.empty()) {
      double* gw = param_grad.data() + offsets_[l];
      double* gb = gw + n_in * n_out;
      for (std::size_t o = 0; o < n_out; ++o) {
        for (std::size_t i = 0; i < n_in; ++i) gw[o * n_in + i] += delta[o] * x[i];
        gb[o] += delta[o];
      }
    }
    if (l == 0 && input_grad.empty()) break;
    prev.assign(n_in, 0.0);
    for (std::size_t o = 0; o < n_out; ++o)
      for (std::size_t i = 0; i < n_in; ++i) prev[i] += w[o * n_in + i] * delta[o];
    if (l > 0) {
      const auto& z = cache.pre[l - 1];
      for (std::size_t i = 0; i < n_in; ++i) prev[i] *= activate_derivative(spec_.activation, z[i]);
    }
    delta.swap(prev);
  }
  if (!input_grad.empty()) std::copy(delta.begin(), delta.end(), input_grad.begin());
}

double MlpNet::weight_norm_squared() const {
  double s = 0.0;
  for (std::size_t l = 0; l < offsets_.size(); ++l) {
    const auto n = static_cast<std::size_t>(spec_.layer_sizes[l]) * static_cast<std::size_t>(spec_.layer_sizes[l + 1]);
    for (std::size_t k = 0; k < n; ++k) s += params_[offsets_[l] + k] * params_[offsets_[l] + k];
  }
  return s;
}

double MlpNet::l2_penalty() const { return spec_.l2 * weight_norm_squared(); }

void MlpNet::add_l2_gradient(std::span<double> grad) const {
  if (spec_.l2 == 0.0) return;
  for (std::size_t l = 0; l < offsets_.size(); ++l) {
    const auto n = static_cast<std::size_t>(spec_.layer_sizes[l]) * static_cast<std::size_t>(spec_.layer_sizes[l + 1]);
    for (std::size_t k = 0; k < n; ++k) grad[offsets_[l] + k] += 2.0 * spec_.l2 * params_[offsets_[l] + k];
  }
}

double mlp_forward(const MlpNet& net, std::span<const double> input) { return net.forward(input); }

MlpGradient mlp_gradient(const MlpNet& net, std::span<const double> input, double upstream) {
  MlpCache cache;
  net.forward(input, cache);
  MlpGradient g;
  g.parameters.assign(net.parameter_count(), 0.0);
  g.input.assign(net.input_size(), 0.0);
  net.backward(cache, upstream, g.parameters, g.input);
  return g;
}

MlpNet init_weights(const MlpSpec& spec, std::uint64_t seed, double gain) {
  MlpNet net(spec);
  std::mt19937_64 rng(seed);
  auto params = net.parameters();
  std::size_t off = 0;
  for (std::size_t l = 0; l + 1 < spec.layer_sizes.size(); ++l) {
    const auto n_in = static_cast<std::size_t>(spec.layer_sizes[l]);
    const auto n_out = static_cast<std::size_t>(spec.layer_sizes[l + 1]);
    const double limit = gain * std::sqrt(6.0 / static_cast<double>(n_in + n_out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (std::size_t k = 0; k < n_in * n_out; ++k) params[off + k] = dist(rng);
    off += n_in * n_out + n_out;  // biases stay zero
  }
  return net;
}

}  // namespace hemadyn
