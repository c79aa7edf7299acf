#include "hemadyn/arx_gru.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <string>

#include "hemadyn/errors.hpp"

namespace hemadyn {

namespace {

constexpr int kGates = 3;

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

std::size_t gate_block(int h) { return static_cast<std::size_t>(h) * static_cast<std::size_t>(GruNet::kInputs + h + 1); }

std::vector<DayValue> log_day_values(const std::vector<Observation>& obs, CountScale scale) {
  auto out = to_day_values(obs);
  if (scale == CountScale::Linear) {
    for (auto& dv : out) {
      if (!(dv.value > 0.0)) throw DomainError("non-positive platelet count");
      dv.value = std::log(dv.value);
    }
  }
  return out;
}

}  // namespace

GruNet::GruNet(int hidden) : GruNet(hidden, std::vector<double>(parameter_count(hidden > 0 ? hidden : 1), 0.0)) {
  if (hidden <= 0) throw PreconditionError("GRU hidden size must be positive");
}

GruNet::GruNet(int hidden, std::vector<double> parameters) : hidden_(hidden), params_(std::move(parameters)) {
  if (hidden_ <= 0) throw PreconditionError("GRU hidden size must be positive");
  if (params_.size() != parameter_count(hidden_))
    throw PreconditionError("GRU parameter vector has " + std::to_string(params_.size()) + " entries, expected " +
                            std::to_string(parameter_count(hidden_)));
}

std::size_t GruNet::parameter_count(int hidden) noexcept {
  return kGates * gate_block(hidden) + static_cast<std::size_t>(hidden) + 1;
}

std::size_t GruNet::gate_offset(int gate) const noexcept { return static_cast<std::size_t>(gate) * gate_block(hidden_); }

std::size_t GruNet::readout_offset() const noexcept { return kGates * gate_block(hidden_); }

bool GruNet::is_weight(std::size_t index) const {
  const auto h = static_cast<std::size_t>(hidden_);
  const std::size_t w = h * static_cast<std::size_t>(kInputs + hidden_);
  if (index < readout_offset()) return index % gate_block(hidden_) < w;
  return index < readout_offset() + h;
}

double GruNet::weight_norm_squared() const {
  double s = 0.0;
  for (std::size_t i = 0; i < params_.size(); ++i)
    if (is_weight(i)) s += params_[i] * params_[i];
  return s;
}

GruNet init_gru(int hidden, std::uint64_t seed) {
  GruNet net(hidden);
  std::mt19937_64 rng(seed);
  const auto h = static_cast<std::size_t>(hidden);
  const std::size_t cols = static_cast<std::size_t>(GruNet::kInputs + hidden);
  auto p = net.parameters();
  std::uniform_real_distribution<double> gate_dist(-std::sqrt(6.0 / static_cast<double>(cols + h)),
                                                   std::sqrt(6.0 / static_cast<double>(cols + h)));
  for (int g = 0; g < kGates; ++g) {
    const std::size_t off = net.gate_offset(g);
    for (std::size_t k = 0; k < h * cols; ++k) p[off + k] = gate_dist(rng);
  }
  std::uniform_real_distribution<double> out_dist(-std::sqrt(6.0 / static_cast<double>(h + 1)),
                                                  std::sqrt(6.0 / static_cast<double>(h + 1)));
  for (std::size_t k = 0; k < h; ++k) p[net.readout_offset() + k] = out_dist(rng);
  return net;
}

double gru_step(const GruNet& net, std::span<const double> input, std::span<const double> hidden,
                GruStepCache& c) {
  const int H = net.hidden();
  const auto h = static_cast<std::size_t>(H);
  if (input.size() != GruNet::kInputs) throw PreconditionError("GRU input must have 2 entries");
  if (hidden.size() != h) throw PreconditionError("GRU hidden state has wrong size");
  const std::size_t cols = GruNet::kInputs + h;
  const auto p = net.parameters();

  c.x[0] = input[0];
  c.x[1] = input[1];
  c.h_prev.assign(hidden.begin(), hidden.end());
  c.z.resize(h);
  c.r.resize(h);
  c.n.resize(h);
  c.h.resize(h);

  auto affine = [&](int gate, std::size_t row, const double* hv) {
    const double* w = p.data() + net.gate_offset(gate) + row * cols;
    double acc = p[net.gate_offset(gate) + h * cols + row] + w[0] * c.x[0] + w[1] * c.x[1];
    for (std::size_t j = 0; j < h; ++j) acc += w[GruNet::kInputs + j] * hv[j];
    return acc;
  };
  for (std::size_t i = 0; i < h; ++i) {
    c.z[i] = sigmoid(affine(0, i, c.h_prev.data()));
    c.r[i] = sigmoid(affine(1, i, c.h_prev.data()));
  }
  std::vector<double> rh(h);
  for (std::size_t i = 0; i < h; ++i) rh[i] = c.r[i] * c.h_prev[i];
  double out = p[net.readout_offset() + h];
  for (std::size_t i = 0; i < h; ++i) {
    c.n[i] = std::tanh(affine(2, i, rh.data()));
    c.h[i] = (1.0 - c.z[i]) * c.n[i] + c.z[i] * c.h_prev[i];
    out += p[net.readout_offset() + i] * c.h[i];
  }
  return out;
}

GruStepResult gru_step(const GruNet& net, std::span<const double> input, std::span<const double> hidden) {
  GruStepCache c;
  GruStepResult r;
  r.output = gru_step(net, input, hidden, c);
  r.hidden = std::move(c.h);
  return r;
}

void gru_step_backward(const GruNet& net, const GruStepCache& c, double g_output, std::span<const double> g_hidden,
                       std::span<double> param_grad, std::span<double> g_input, std::span<double> g_hidden_prev) {
  const auto h = static_cast<std::size_t>(net.hidden());
  const std::size_t cols = GruNet::kInputs + h;
  const auto p = net.parameters();
  const std::size_t ro = net.readout_offset();

  std::vector<double> gh(h);
  for (std::size_t i = 0; i < h; ++i) {
    gh[i] = (g_hidden.empty() ? 0.0 : g_hidden[i]) + p[ro + i] * g_output;
    param_grad[ro + i] += g_output * c.h[i];
  }
  param_grad[ro + h] += g_output;

  std::fill(g_input.begin(), g_input.end(), 0.0);
  std::fill(g_hidden_prev.begin(), g_hidden_prev.end(), 0.0);

  std::vector<double> ga_z(h), ga_r(h), ga_n(h), rh(h), g_rh(h, 0.0);
  for (std::size_t i = 0; i < h; ++i) {
    rh[i] = c.r[i] * c.h_prev[i];
    g_hidden_prev[i] += gh[i] * c.z[i];
    ga_n[i] = gh[i] * (1.0 - c.z[i]) * (1.0 - c.n[i] * c.n[i]);
    ga_z[i] = gh[i] * (c.h_prev[i] - c.n[i]) * c.z[i] * (1.0 - c.z[i]);
  }

  // candidate gate: input is [x, r*h]
  auto backprop_gate = [&](int gate, const std::vector<double>& ga, const double* hv, double* g_hv) {
    const std::size_t off = net.gate_offset(gate);
    for (std::size_t i = 0; i < h; ++i) {
      const double* w = p.data() + off + i * cols;
      double* gw = param_grad.data() + off + i * cols;
      gw[0] += ga[i] * c.x[0];
      gw[1] += ga[i] * c.x[1];
      for (std::size_t j = 0; j < h; ++j) gw[GruNet::kInputs + j] += ga[i] * hv[j];
      param_grad[off + h * cols + i] += ga[i];
      g_input[0] += w[0] * ga[i];
      g_input[1] += w[1] * ga[i];
      for (std::size_t j = 0; j < h; ++j) g_hv[j] += w[GruNet::kInputs + j] * ga[i];
    }
  };
  backprop_gate(2, ga_n, rh.data(), g_rh.data());
  for (std::size_t i = 0; i < h; ++i) {
    g_hidden_prev[i] += g_rh[i] * c.r[i];
    ga_r[i] = g_rh[i] * c.h_prev[i] * c.r[i] * (1.0 - c.r[i]);
  }
  backprop_gate(0, ga_z, c.h_prev.data(), g_hidden_prev.data());
  backprop_gate(1, ga_r, c.h_prev.data(), g_hidden_prev.data());
}

void ArxConfig::validate() const {
  if (hidden <= 0) throw PreconditionError("hidden size must be positive");
  if (!(l2 >= 0.0)) throw PreconditionError("l2 must be non-negative");
  if (!(baseline_penalty >= 0.0)) throw PreconditionError("baseline_penalty must be non-negative");
  if (!(smse_neighbor >= 0.0)) throw PreconditionError("smse neighbor weight must be non-negative");
  if (warmup_days < 0) throw PreconditionError("warmup_days must be non-negative");
  if (!(scale > 0.0)) throw PreconditionError("scale must be positive");
  schedule.validate();
}

ArxSeries make_series(const PatientRecord& record, const std::vector<Observation>& observations) {
  if (record.observations.empty()) throw PreconditionError("record has no observations");
  ArxSeries s{record.schedule, 0.0, {}};
  const double first = record.observations.front().platelet_count;
  if (record.scale == CountScale::Linear) {
    if (!(first > 0.0)) throw DomainError("non-positive platelet count");
    s.baseline = std::log(first);
  } else {
    s.baseline = first;
  }
  std::map<int, std::pair<double, int>> by_day;
  for (const auto& dv : log_day_values(observations, record.scale)) {
    auto& [sum, n] = by_day[dv.day];
    sum += dv.value;
    ++n;
  }
  for (const auto& [day, acc] : by_day) s.observed.push_back({day, acc.first / acc.second});
  return s;
}

int rollout_start(const ArxSeries& series, int start_day, const ArxConfig& config) {
  const auto first = series.schedule.first_event_day();
  const int anchor = first ? *first - config.warmup_days : start_day;
  return std::min(anchor, start_day);
}

namespace {

// Runs the recurrence over [r0, r1]; returns normalized outputs, filling
// caches and the feedback mask when requested.
std::vector<double> run(const GruNet& net, const ArxSeries& s, int r0, int r1, bool teacher_forcing,
                        const ArxConfig& cfg, std::vector<GruStepCache>* caches, std::vector<char>* forced) {
  const auto n_days = static_cast<std::size_t>(r1 - r0 + 1);
  std::vector<double> out(n_days);
  std::vector<double> hidden(static_cast<std::size_t>(net.hidden()), 0.0);
  std::map<int, double> obs;
  if (teacher_forcing)
    for (const auto& dv : s.observed) obs[dv.day] = (dv.value - s.baseline) / cfg.scale;
  if (caches) caches->resize(n_days);
  if (forced) forced->assign(n_days, 0);

  double prev = 0.0;
  GruStepCache local;
  for (std::size_t k = 0; k < n_days; ++k) {
    const int day = r0 + static_cast<int>(k);
    const double input[2] = {prev, s.schedule.relative_dose(day - 1)};
    GruStepCache& c = caches ? (*caches)[k] : local;
    const double y = gru_step(net, input, hidden, c);
    if (!std::isfinite(y)) throw NumericalError("non-finite GRU output on day " + std::to_string(day));
    out[k] = y;
    hidden = c.h;
    prev = y;
    if (teacher_forcing) {
      if (auto it = obs.find(day); it != obs.end()) {
        prev = it->second;
        if (forced) (*forced)[k] = 1;
      }
    }
  }
  return out;
}

}  // namespace

DailySeries rollout(const GruNet& net, const ArxSeries& series, int start_day, int end_day, bool teacher_forcing,
                    const ArxConfig& config) {
  if (end_day < start_day) throw PreconditionError("rollout end precedes start");
  const int r0 = rollout_start(series, start_day, config);
  const auto norm = run(net, series, r0, end_day, teacher_forcing, config, nullptr, nullptr);
  DailySeries out{start_day, {}};
  out.values.reserve(static_cast<std::size_t>(end_day - start_day + 1));
  for (int d = start_day; d <= end_day; ++d)
    out.values.push_back(series.baseline + config.scale * norm[static_cast<std::size_t>(d - r0)]);
  return out;
}

ArxObjective::ArxObjective(int hidden, std::vector<ArxTrainingSeries> series, ArxConfig config)
    : hidden_(hidden), series_(std::move(series)), config_(std::move(config)) {
  config_.validate();
  if (hidden_ <= 0) throw PreconditionError("hidden size must be positive");
  if (series_.empty()) throw PreconditionError("ARX objective needs at least one series");
  for (auto& s : series_) {
    if (s.targets.empty()) throw PreconditionError("training series without targets");
    std::sort(s.targets.begin(), s.targets.end(), [](const DayValue& a, const DayValue& b) { return a.day < b.day; });
  }
}

double ArxObjective::series_loss(const GruNet& net, const ArxTrainingSeries& ts, std::span<double> grad) const {
  const auto& s = ts.series;
  const int r0 = rollout_start(s, ts.targets.front().day, config_);
  // one day beyond the last target so its t+1 neighbor term is present
  const int r1 = ts.targets.back().day + 1;
  const bool want_grad = !grad.empty();
  std::vector<GruStepCache> caches;
  std::vector<char> forced;
  const auto norm = run(net, s, r0, r1, ts.teacher_forcing, config_, want_grad ? &caches : nullptr, &forced);

  DailySeries pred{r0, std::vector<double>(norm.size())};
  for (std::size_t k = 0; k < norm.size(); ++k) pred.values[k] = s.baseline + config_.scale * norm[k];

  std::vector<double> g_pred(want_grad ? norm.size() : 0, 0.0);
  double loss = want_grad ? smse_with_gradient(ts.targets, pred, SmseWeights{config_.smse_neighbor}, g_pred)
                          : smse(ts.targets, pred, SmseWeights{config_.smse_neighbor});

  if (config_.baseline_penalty > 0.0) {
    std::size_t window = norm.size();
    if (!config_.baseline_all_days) {
      const auto first = s.schedule.first_event_day();
      window = first ? static_cast<std::size_t>(std::clamp(*first - r0, 0, static_cast<int>(norm.size()))) : window;
    }
    const double inv = window ? 1.0 / static_cast<double>(window) : 0.0;
    for (std::size_t k = 0; k < window; ++k) {
      const double dev = pred.values[k] - s.baseline;
      loss += config_.baseline_penalty * inv * dev * dev;
      if (want_grad) g_pred[k] += 2.0 * config_.baseline_penalty * inv * dev;
    }
  }
  if (!want_grad) return loss;

  const auto h = static_cast<std::size_t>(net.hidden());
  std::vector<double> g_h(h, 0.0), g_h_prev(h);
  double g_in[2];
  double g_feedback = 0.0;  // cotangent of this step's output via the next step's input
  for (std::size_t k = norm.size(); k-- > 0;) {
    const double g_out = config_.scale * g_pred[k] + (forced[k] ? 0.0 : g_feedback);
    gru_step_backward(net, caches[k], g_out, g_h, grad, g_in, g_h_prev);
    g_h.swap(g_h_prev);
    g_feedback = g_in[0];
  }
  return loss;
}

double ArxObjective::loss(std::span<const double> theta) const {
  const GruNet net(hidden_, std::vector<double>(theta.begin(), theta.end()));
  double total = 0.0;
  for (const auto& s : series_) total += series_loss(net, s, {});
  return total / static_cast<double>(series_.size()) + config_.l2 * net.weight_norm_squared();
}

double ArxObjective::loss_and_gradient(std::span<const double> theta, std::span<double> grad) const {
  if (grad.size() != dimension()) throw PreconditionError("gradient buffer has wrong size");
  const GruNet net(hidden_, std::vector<double>(theta.begin(), theta.end()));
  std::vector<double> acc(dimension(), 0.0);
  double total = 0.0;
  for (const auto& s : series_) total += series_loss(net, s, acc);
  const double inv = 1.0 / static_cast<double>(series_.size());
  for (std::size_t i = 0; i < acc.size(); ++i) {
    grad[i] = acc[i] * inv;
    if (net.is_weight(i)) grad[i] += 2.0 * config_.l2 * theta[i];
    if (!std::isfinite(grad[i]))
      throw NumericalError("non-finite gradient component " + std::to_string(i), static_cast<int>(i));
  }
  return total * inv + config_.l2 * net.weight_norm_squared();
}

namespace {

ArxObjective record_objective(const GruNet& net, const PatientRecord& record, const ArxConfig& config,
                              const CycleSplit& split) {
  ArxTrainingSeries ts;
  ts.series = make_series(record, split.train_obs);
  ts.targets = log_day_values(split.train_obs, record.scale);
  ts.teacher_forcing = false;
  return ArxObjective(net.hidden(), {std::move(ts)}, config);
}

}  // namespace

double arx_loss(const GruNet& net, const PatientRecord& record, const ArxConfig& config, const CycleSplit& split) {
  return record_objective(net, record, config, split).loss(net.parameters());
}

std::vector<double> arx_gradient(const GruNet& net, const PatientRecord& record, const ArxConfig& config,
                                 const CycleSplit& split) {
  std::vector<double> g(net.parameter_count());
  record_objective(net, record, config, split).loss_and_gradient(net.parameters(), g);
  return g;
}

}  // namespace hemadyn
