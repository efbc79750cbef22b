#pragma once

// Dense ReLU network with a hand-derived backward pass. All parameters live in
// one flat vector so that clients and server exchange a single array.
//
// Layout per layer: fan_out x fan_in weights (row-major, one row per output
// unit) followed by fan_out biases. Layers are stored in forward order.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dbfed/debias_head.hpp"
#include "dbfed/error.hpp"
#include "dbfed/random.hpp"

namespace dbfed {

enum class HeadMode { Plain, DomainIndependent };

struct ClassifierSpec {
  std::size_t input_dim = 1;
  std::vector<std::size_t> hidden_widths;
  std::size_t num_classes = 2;
  std::size_t num_groups = 1;
  HeadMode head_mode = HeadMode::Plain;

  std::size_t output_dim() const {
    return head_mode == HeadMode::Plain ? num_classes : num_classes * num_groups;
  }

  /// input, hidden..., output
  std::vector<std::size_t> widths() const {
    std::vector<std::size_t> w{input_dim};
    w.insert(w.end(), hidden_widths.begin(), hidden_widths.end());
    w.push_back(output_dim());
    return w;
  }

  void validate() const {
    if (input_dim == 0) throw ConfigError("classifier: input_dim must be positive");
    for (auto h : hidden_widths)
      if (h == 0) throw ConfigError("classifier: hidden widths must be positive");
    if (num_classes < 2) throw ConfigError("classifier: need at least 2 classes");
    if (num_groups < 1) throw ConfigError("classifier: need at least 1 group");
  }

  friend bool operator==(const ClassifierSpec&, const ClassifierSpec&) = default;
};

struct LayerShape {
  std::size_t index = 0;
  std::size_t fan_in = 0;
  std::size_t fan_out = 0;
  std::size_t offset = 0;  // first weight in the flat vector

  std::size_t bias_offset() const { return offset + fan_in * fan_out; }
  std::size_t param_count() const { return (fan_in + 1) * fan_out; }

  friend bool operator==(const LayerShape&, const LayerShape&) = default;
};

inline std::vector<LayerShape> layout_for(const ClassifierSpec& spec) {
  const auto w = spec.widths();
  std::vector<LayerShape> layout;
  std::size_t offset = 0;
  for (std::size_t l = 0; l + 1 < w.size(); ++l) {
    layout.push_back({l, w[l], w[l + 1], offset});
    offset += layout.back().param_count();
  }
  return layout;
}

struct ModelWeights {
  std::vector<double> values;
  std::vector<LayerShape> layout;

  std::size_t size() const { return values.size(); }

  bool same_layout(const ModelWeights& other) const { return layout == other.layout; }

  friend bool operator==(const ModelWeights&, const ModelWeights&) = default;
};

inline ModelWeights zero_weights(const ClassifierSpec& spec) {
  spec.validate();
  ModelWeights w;
  w.layout = layout_for(spec);
  const auto& last = w.layout.back();
  w.values.assign(last.offset + last.param_count(), 0.0);
  return w;
}

/// Uniform(-sqrt(6/fan_in), +sqrt(6/fan_in)) weights, zero biases.
inline ModelWeights init_weights(const ClassifierSpec& spec, std::uint64_t seed) {
  auto w = zero_weights(spec);
  Rng rng(seed);
  for (const auto& layer : w.layout) {
    const double half_width = std::sqrt(6.0 / static_cast<double>(layer.fan_in));
    for (std::size_t i = 0; i < layer.fan_in * layer.fan_out; ++i)
      w.values[layer.offset + i] = uniform(rng, -half_width, half_width);
  }
  return w;
}

namespace detail {

inline void check_weights(const ClassifierSpec& spec, const ModelWeights& weights) {
  if (weights.layout != layout_for(spec))
    throw RejectedInput("weights layout does not match classifier spec");
}

/// Pre-activations of every layer for one input. `pre[l]` is z_l.
inline std::vector<std::vector<double>> forward_trace(const ModelWeights& weights,
                                                      std::span<const double> x) {
  std::vector<std::vector<double>> pre;
  pre.reserve(weights.layout.size());
  std::vector<double> act(x.begin(), x.end());
  for (const auto& layer : weights.layout) {
    std::vector<double> z(layer.fan_out);
    const double* w = weights.values.data() + layer.offset;
    const double* b = weights.values.data() + layer.bias_offset();
    for (std::size_t o = 0; o < layer.fan_out; ++o) {
      double s = b[o];
      const double* row = w + o * layer.fan_in;
      for (std::size_t i = 0; i < layer.fan_in; ++i) s += row[i] * act[i];
      z[o] = s;
    }
    act.resize(layer.fan_out);
    for (std::size_t o = 0; o < layer.fan_out; ++o) act[o] = z[o] > 0.0 ? z[o] : 0.0;
    pre.push_back(std::move(z));
  }
  return pre;
}

}  // namespace detail

/// Raw logits: length N for a plain head, N*D for a domain-independent head.
inline std::vector<double> forward(const ClassifierSpec& spec, const ModelWeights& weights,
                                   std::span<const double> x) {
  if (x.size() != spec.input_dim)
    throw RejectedInput("forward: expected " + std::to_string(spec.input_dim) +
                        " features, got " + std::to_string(x.size()));
  detail::check_weights(spec, weights);
  auto pre = detail::forward_trace(weights, x);
  return std::move(pre.back());
}

/// Distribution over classes for each group. A plain head is treated as a
/// single group so both heads share the same softmax path.
inline GroupConditionalDistribution output_distribution(const ClassifierSpec& spec,
                                                        std::span<const double> logits) {
  return spec.head_mode == HeadMode::Plain
             ? group_conditional_probs(logits, spec.num_classes, 1)
             : group_conditional_probs(logits, spec.num_classes, spec.num_groups);
}

/// Group-blind class prediction for either head.
inline std::size_t predict_class(const ClassifierSpec& spec, const ModelWeights& weights,
                                 std::span<const double> x) {
  return predict(output_distribution(spec, forward(spec, weights, x)));
}

enum class LossMode { PlainCE, DomainIndependentCE };

struct GradientResult {
  std::vector<double> gradient;
  double mean_loss = 0.0;
};

/// Gradient of the mean per-example cross-entropy over `batch`.
/// PlainCE is -log softmax(f)_y over the N-unit head; DomainIndependentCE is
/// -log P(y | d, x) taken over group d's slice of the N*D head.
inline GradientResult backward(const ClassifierSpec& spec, const ModelWeights& weights,
                               std::span<const LabeledExample* const> batch,
                               LossMode loss_mode) {
  const bool di = loss_mode == LossMode::DomainIndependentCE;
  if (di != (spec.head_mode == HeadMode::DomainIndependent))
    throw ConfigError(di ? "domain-independent loss requires a domain-independent head"
                         : "plain loss requires a plain head");
  if (batch.empty()) throw RejectedInput("backward: empty batch");
  detail::check_weights(spec, weights);

  const auto& layout = weights.layout;
  const std::size_t n_layers = layout.size();
  const std::size_t n_cls = spec.num_classes;

  GradientResult result;
  result.gradient.assign(weights.size(), 0.0);
  double loss_sum = 0.0;
  std::vector<double> delta, prev_delta, log_p(n_cls);

  for (const LabeledExample* ex : batch) {
    if (ex->features.size() != spec.input_dim)
      throw RejectedInput("backward: feature dimension mismatch");
    if (ex->target >= n_cls || (di && ex->group >= spec.num_groups))
      throw RejectedInput("backward: label out of range");

    const auto pre = detail::forward_trace(weights, ex->features);
    const auto& logits = pre.back();
    for (double l : logits)
      if (!std::isfinite(l)) throw NumericError("backward: non-finite logit");

    // d loss / d logits: softmax minus one-hot inside the conditioning slice.
    const std::size_t slice = di ? ex->group * n_cls : 0;
    detail::log_softmax(std::span<const double>(logits).subspan(slice, n_cls), log_p);
    loss_sum += -log_p[ex->target];
    delta.assign(logits.size(), 0.0);
    for (std::size_t c = 0; c < n_cls; ++c) delta[slice + c] = std::exp(log_p[c]);
    delta[slice + ex->target] -= 1.0;

    for (std::size_t l = n_layers; l-- > 0;) {
      const auto& layer = layout[l];
      const bool relu_input = l > 0;
      const std::span<const double> input =
          relu_input ? std::span<const double>(pre[l - 1]) : std::span<const double>(ex->features);
      double* gw = result.gradient.data() + layer.offset;
      double* gb = result.gradient.data() + layer.bias_offset();
      for (std::size_t o = 0; o < layer.fan_out; ++o) {
        const double d = delta[o];
        gb[o] += d;
        double* row = gw + o * layer.fan_in;
        for (std::size_t i = 0; i < layer.fan_in; ++i)
          row[i] += d * (relu_input && !(input[i] > 0.0) ? 0.0 : input[i]);
      }
      if (l == 0) break;
      // Propagate through W_l and the ReLU of the previous layer.
      const double* w = weights.values.data() + layer.offset;
      prev_delta.assign(layer.fan_in, 0.0);
      for (std::size_t o = 0; o < layer.fan_out; ++o) {
        const double d = delta[o];
        const double* row = w + o * layer.fan_in;
        for (std::size_t i = 0; i < layer.fan_in; ++i) prev_delta[i] += row[i] * d;
      }
      for (std::size_t i = 0; i < layer.fan_in; ++i)
        if (!(pre[l - 1][i] > 0.0)) prev_delta[i] = 0.0;
      std::swap(delta, prev_delta);
    }
  }

  const auto n = static_cast<double>(batch.size());
  for (auto& g : result.gradient) g /= n;
  result.mean_loss = loss_sum / n;
  return result;
}

inline GradientResult backward(const ClassifierSpec& spec, const ModelWeights& weights,
                               std::span<const LabeledExample> batch, LossMode loss_mode) {
  std::vector<const LabeledExample*> ptrs;
  ptrs.reserve(batch.size());
  for (const auto& ex : batch) ptrs.push_back(&ex);
  return backward(spec, weights, std::span<const LabeledExample* const>(ptrs), loss_mode);
}

enum class OptimizerKind { Sgd, Adam };

struct OptimizerSettings {
  OptimizerKind kind = OptimizerKind::Adam;
  double learning_rate = 1e-4;
  double weight_decay = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const {
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
      throw ConfigError("optimizer: learning rate must be finite and non-negative");
    if (!(weight_decay >= 0.0)) throw ConfigError("optimizer: weight decay must be non-negative");
    if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0))
      throw ConfigError("optimizer: Adam betas must lie in (0, 1)");
    if (!(epsilon > 0.0)) throw ConfigError("optimizer: Adam epsilon must be positive");
  }

  friend bool operator==(const OptimizerSettings&, const OptimizerSettings&) = default;
};

struct OptimizerState {
  OptimizerSettings settings;
  std::vector<double> first_moment;
  std::vector<double> second_moment;
  std::uint64_t step_count = 0;

  static OptimizerState fresh(const OptimizerSettings& settings, std::size_t n_params) {
    settings.validate();
    return {settings, std::vector<double>(n_params, 0.0), std::vector<double>(n_params, 0.0), 0};
  }
};

/// One update. Sgd: theta -= lr * (g + wd * theta). Adam: bias-corrected
/// moment step, then decoupled decay theta -= lr * wd * theta.
inline std::pair<ModelWeights, OptimizerState> optimizer_step(OptimizerState state,
                                                              ModelWeights weights,
                                                              std::span<const double> gradient) {
  if (gradient.size() != weights.size())
    throw RejectedInput("optimizer_step: gradient length " + std::to_string(gradient.size()) +
                        " != weight length " + std::to_string(weights.size()));
  const auto& s = state.settings;
  auto& theta = weights.values;

  if (s.kind == OptimizerKind::Sgd) {
    for (std::size_t i = 0; i < theta.size(); ++i)
      theta[i] -= s.learning_rate * (gradient[i] + s.weight_decay * theta[i]);
  } else {
    if (state.first_moment.size() != theta.size() || state.second_moment.size() != theta.size())
      throw RejectedInput("optimizer_step: moment length mismatch");
    const auto t = static_cast<double>(state.step_count + 1);
    const double correction1 = 1.0 - std::pow(s.beta1, t);
    const double correction2 = 1.0 - std::pow(s.beta2, t);
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double g = gradient[i];
      auto& m = state.first_moment[i];
      auto& v = state.second_moment[i];
      m = s.beta1 * m + (1.0 - s.beta1) * g;
      v = s.beta2 * v + (1.0 - s.beta2) * g * g;
      const double m_hat = m / correction1;
      const double v_hat = v / correction2;
      theta[i] -= s.learning_rate * m_hat / (std::sqrt(v_hat) + s.epsilon);
      theta[i] -= s.learning_rate * s.weight_decay * theta[i];
    }
  }
  ++state.step_count;
  return {std::move(weights), std::move(state)};
}

}  // namespace dbfed
