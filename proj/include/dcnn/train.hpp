#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <vector>

#include "dcnn/error.hpp"
#include "dcnn/network.hpp"
#include "dcnn/rng.hpp"

namespace dcnn::tensornet {

/// Labeled samples of a fixed shape, stored contiguously.
struct SampleSet {
  Shape shape;
  std::vector<float> inputs;
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  std::size_t sample_size() const { return shape.size(); }
  const float* sample(std::size_t i) const { return inputs.data() + i * sample_size(); }
  float* sample(std::size_t i) { return inputs.data() + i * sample_size(); }

  void reserve(std::size_t n) {
    inputs.reserve(n * sample_size());
    labels.reserve(n);
  }
  /// Appends one zero-filled sample and returns its storage.
  float* append(int label) {
    labels.push_back(label);
    inputs.resize(inputs.size() + sample_size(), 0.0f);
    return inputs.data() + inputs.size() - sample_size();
  }
  std::size_t count(int label) const { return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), label)); }
};

struct TrainConfig {
  double lr_start = 0.002;
  double lr_end = 0.0001;
  int epochs = 20;
  int batch_size = 128;
  std::uint64_t seed = 0;
  double momentum = 0.0;

  void validate() const {
    if (!(lr_start >= lr_end && lr_end > 0.0))
      throw ParameterError("train config: need lr_start >= lr_end > 0");
    if (epochs < 1) throw ParameterError("train config: epochs must be >= 1");
    if (batch_size < 1) throw ParameterError("train config: batch_size must be >= 1");
    if (momentum < 0.0 || momentum >= 1.0) throw ParameterError("train config: momentum must be in [0, 1)");
  }

  /// Linear decay from lr_start (epoch 0) to lr_end (last epoch).
  double learning_rate(int epoch) const {
    if (epochs == 1) return lr_start;
    return lr_start + (lr_end - lr_start) * static_cast<double>(epoch) / static_cast<double>(epochs - 1);
  }
};

struct TrainResult {
  std::vector<double> epoch_loss;  // mean sample loss seen during each epoch
};

using EpochCallback = std::function<void(int epoch, double lr, double mean_loss)>;

/// Mini-batch SGD on the mean batch loss, reshuffling with `rng` every epoch.
/// Deterministic for a fixed seed, configuration and sample order.
template <typename T>
TrainResult sgd_train(Network<T>& net, const SampleSet& data, const TrainConfig& cfg, Rng& rng,
                      const EpochCallback& on_epoch = {}) {
  cfg.validate();
  if (data.size() == 0) throw TrainingError("no training samples");
  if (data.shape != net.arch().input())
    throw ShapeError("samples are " + data.shape.str() + " but the network expects " + net.arch().input().str());
  if (net.arch().output().size() != 2) throw TrainingError("training needs a two-unit output layer");

  const std::size_t N = data.size(), S = data.sample_size();
  std::vector<std::size_t> order(N);
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto grads = zero_like<T>(net.arch());
  auto velocity = zero_like<T>(net.arch());
  Workspace<T> ws;
  std::vector<T> batch, dlogits;
  TrainResult result;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    const double lr = cfg.learning_rate(epoch);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < N; start += static_cast<std::size_t>(cfg.batch_size)) {
      const int n = static_cast<int>(std::min<std::size_t>(cfg.batch_size, N - start));
      batch.resize(static_cast<std::size_t>(n) * S);
      for (int i = 0; i < n; ++i) {
        const float* src = data.sample(order[start + i]);
        std::copy(src, src + S, batch.begin() + static_cast<std::ptrdiff_t>(i) * S);
      }
      net.forward(batch.data(), n, ws);
      const T* z = net.logits(ws);
      dlogits.resize(static_cast<std::size_t>(n) * 2);
      const T inv_n = T(1) / static_cast<T>(n);
      for (int i = 0; i < n; ++i) {
        auto r = softmax_xent(z[2 * i], z[2 * i + 1], data.labels[order[start + i]]);
        loss_sum += static_cast<double>(r.loss);
        dlogits[2 * i] = r.grad[0] * inv_n;
        dlogits[2 * i + 1] = r.grad[1] * inv_n;
      }
      for (auto& g : grads) {
        std::fill(g.weights.begin(), g.weights.end(), T(0));
        std::fill(g.bias.begin(), g.bias.end(), T(0));
      }
      net.backward(ws, dlogits.data(), grads);
      const T step = static_cast<T>(lr), mu = static_cast<T>(cfg.momentum);
      auto& params = net.params().layers;
      for (std::size_t l = 0; l < params.size(); ++l) {
        auto update = [&](std::vector<T>& p, const std::vector<T>& g, std::vector<T>& v) {
          if (cfg.momentum == 0.0) {
            for (std::size_t k = 0; k < p.size(); ++k) p[k] -= step * g[k];
          } else {
            for (std::size_t k = 0; k < p.size(); ++k) {
              v[k] = mu * v[k] + g[k];
              p[k] -= step * v[k];
            }
          }
        };
        update(params[l].weights, grads[l].weights, velocity[l].weights);
        update(params[l].bias, grads[l].bias, velocity[l].bias);
      }
    }
    result.epoch_loss.push_back(loss_sum / static_cast<double>(N));
    if (on_epoch) on_epoch(epoch, lr, result.epoch_loss.back());
  }
  return result;
}

/// Fraction of samples whose class-1 probability lands on the labeled side of 0.5.
template <typename T>
double classification_accuracy(const Network<T>& net, const SampleSet& data, int batch = 64) {
  if (data.size() == 0) throw TrainingError("no samples to evaluate");
  Workspace<T> ws;
  std::size_t correct = 0;
  std::vector<T> buf;
  for (std::size_t start = 0; start < data.size(); start += static_cast<std::size_t>(batch)) {
    const int n = static_cast<int>(std::min<std::size_t>(batch, data.size() - start));
    buf.assign(data.sample(start), data.sample(start) + static_cast<std::size_t>(n) * data.sample_size());
    auto s = net.scores(buf.data(), n, ws);
    for (int i = 0; i < n; ++i) correct += (s[i] > T(0.5) ? 1 : 0) == data.labels[start + i];
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

// ---------------------------------------------------------------------------
// Gradient checking.

struct GradCheckOptions {
  int params_per_layer = 50;
  double step = 1e-5;
  /// When a ReLU or max-pool switch falls inside [p - h, p + h] the step is
  /// divided by 10, at most this many times.
  int max_step_reductions = 3;
  double denominator_floor = 1e-6;
  std::uint64_t seed = 1234;
  /// Applied to the analytic gradients before comparison; a fault-injection
  /// hook for testing the checker itself.
  std::function<void(std::vector<LayerParams<double>>&)> corrupt;
};

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::vector<double> layer_max;  // per layer; 0 for layers without parameters
  std::size_t checked = 0;
  std::size_t reduced_steps = 0;   // parameters that needed a smaller step
  std::size_t unresolved_kinks = 0;  // still straddling a switch at the smallest step
};

/// Which side of every ReLU and which max-pool winner the last forward took.
inline std::vector<std::int32_t> activation_pattern(const Network<double>& net, const Workspace<double>& ws) {
  std::vector<std::int32_t> pattern;
  for (std::size_t i = 0; i < net.arch().size(); ++i) {
    const auto kind = net.arch().layers()[i].kind;
    if (kind == LayerKind::relu)
      for (double v : ws.acts[i]) pattern.push_back(v > 0.0);
    else if (kind == LayerKind::maxpool)
      pattern.insert(pattern.end(), ws.argmax[i].begin(), ws.argmax[i].end());
  }
  return pattern;
}

inline double single_loss(const Network<double>& net, const double* input, int label, Workspace<double>& ws) {
  net.forward(input, 1, ws);
  const double* z = net.logits(ws);
  return softmax_xent(z[0], z[1], label).loss;
}

/// Compares backprop gradients with central differences on a random subset of
/// every layer's parameters (weights and biases pooled). Returns the worst
/// relative error |a - n| / max(|a|, |n|, floor). The loss is only piecewise
/// smooth, so a difference whose two probes land on other linear pieces than
/// the unperturbed point is retried with a smaller step.
inline GradCheckResult grad_check(Network<double>& net, const std::vector<double>& input, int label,
                                  const GradCheckOptions& opt = {}) {
  if (input.size() != net.arch().input().size()) throw ShapeError("grad_check: input does not match network");
  Workspace<double> ws;
  net.forward(input.data(), 1, ws);
  const double* z = net.logits(ws);
  auto xr = softmax_xent(z[0], z[1], label);
  auto grads = zero_like<double>(net.arch());
  double dz[2] = {xr.grad[0], xr.grad[1]};
  net.backward(ws, dz, grads);
  if (opt.corrupt) opt.corrupt(grads);
  const auto base = activation_pattern(net, ws);

  Rng rng(opt.seed);
  GradCheckResult res;
  res.layer_max.assign(net.arch().size(), 0.0);
  auto& layers = net.params().layers;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const std::size_t nw = layers[l].weights.size(), nb = layers[l].bias.size(), total = nw + nb;
    if (total == 0) continue;
    std::vector<std::size_t> picks(total);
    std::iota(picks.begin(), picks.end(), std::size_t{0});
    rng.shuffle(picks);
    picks.resize(std::min<std::size_t>(total, static_cast<std::size_t>(opt.params_per_layer)));
    for (std::size_t k : picks) {
      double& p = k < nw ? layers[l].weights[k] : layers[l].bias[k - nw];
      const double analytic = k < nw ? grads[l].weights[k] : grads[l].bias[k - nw];
      const double saved = p;
      double h = opt.step, numeric = 0.0;
      for (int reduction = 0;; ++reduction) {
        p = saved + h;
        const double up = single_loss(net, input.data(), label, ws);
        const bool up_clean = activation_pattern(net, ws) == base;
        p = saved - h;
        const double down = single_loss(net, input.data(), label, ws);
        const bool down_clean = activation_pattern(net, ws) == base;
        p = saved;
        numeric = (up - down) / (2.0 * h);
        if (up_clean && down_clean) break;
        if (reduction == opt.max_step_reductions) {
          ++res.unresolved_kinks;
          break;
        }
        if (reduction == 0) ++res.reduced_steps;
        h /= 10.0;
      }
      const double denom = std::max({std::abs(analytic), std::abs(numeric), opt.denominator_floor});
      const double rel = std::abs(analytic - numeric) / denom;
      res.layer_max[l] = std::max(res.layer_max[l], rel);
      res.max_relative_error = std::max(res.max_relative_error, rel);
      ++res.checked;
    }
  }
  return res;
}

}  // namespace dcnn::tensornet
