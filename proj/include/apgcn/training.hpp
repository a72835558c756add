#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "apgcn/graph.hpp"
#include "apgcn/model.hpp"
#include "apgcn/nn.hpp"
#include "apgcn/rng.hpp"

namespace apgcn {

enum class ModelKind {
  adaptive,  // per-node halting
  fixed,     // every node propagates exactly `fixed_steps` times
};

enum class HaltingInit {
  neutral,      // q = 0: h = 0.5, every node starts at K = 2
  long_budget,  // q = logit(1 / (T + 1)): every node starts at K = T
};

struct TrainConfig {
  double lr = 0.01;
  double dropout = 0.5;
  double adjacency_dropout = 0.5;
  double l2_first_layer = 0.008;
  bool l2_include_bias = false;
  int max_steps = 10;
  double epsilon = 0.01;
  double alpha = 0.0;
  PMode p_mode = PMode::act;
  PenaltyReduction penalty = PenaltyReduction::mean;
  OperatorKind op_kind = OperatorKind::renorm_adjacency;
  int halting_period = 5;
  int max_epochs = 1000;
  int patience = 100;
  std::size_t hidden = 64;
  ModelKind model = ModelKind::adaptive;
  int fixed_steps = 2;
  HaltingInit halting_init = HaltingInit::long_budget;

  double halting_bias() const {
    if (halting_init == HaltingInit::neutral) return 0.0;
    const double h0 = 1.0 / static_cast<double>(max_steps + 1);
    return std::log(h0 / (1.0 - h0));
  }

  HaltingConfig halting() const { return {max_steps, epsilon, alpha, p_mode, penalty}; }
  DropoutConfig dropouts() const { return {dropout, dropout, adjacency_dropout}; }

  void validate() const {
    halting().validate();
    if (!(lr > 0.0)) throw InvalidArgument("TrainConfig: lr must be > 0");
    if (!(dropout >= 0.0 && dropout < 1.0) || !(adjacency_dropout >= 0.0 && adjacency_dropout < 1.0))
      throw InvalidArgument("TrainConfig: dropout must be in [0, 1)");
    if (!(l2_first_layer >= 0.0)) throw InvalidArgument("TrainConfig: l2 must be >= 0");
    if (halting_period < 1) throw InvalidArgument("TrainConfig: halting_period must be >= 1");
    if (max_epochs < 1 || patience < 1 || patience >= max_epochs)
      throw InvalidArgument("TrainConfig: need 1 <= patience < max_epochs");
    if (hidden == 0) throw InvalidArgument("TrainConfig: hidden must be >= 1");
    if (fixed_steps < 0) throw InvalidArgument("TrainConfig: fixed_steps must be >= 0");
  }
};

/// Node index sets of one split. train/stop/valid come from the visible set;
/// test is everything else.
struct Splits {
  std::vector<std::size_t> train;
  std::vector<std::size_t> stop;
  std::vector<std::size_t> valid;
  std::vector<std::size_t> test;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double stop_loss = 0.0;
  double stop_accuracy = 0.0;
  double mean_K = 0.0;
};

struct EvalResult {
  double accuracy = 0.0;
  double mean_K = 0.0;
  /// histogram[k-1] = number of nodes with budget k.
  std::vector<std::size_t> K_histogram;
};

template <typename T>
struct TrainResult {
  ModelParams<T> params;
  std::vector<EpochRecord> history;
  int best_epoch = 0;
  int epochs_run = 0;
  double ms_per_epoch = 0.0;
};

template <typename T>
struct TrainHooks {
  /// Replaces the default stopping loss (eval-mode cross-entropy on the stop split).
  std::function<double(int epoch, const ModelParams<T>&)> stopping_loss;
  /// Called after each epoch's parameter updates.
  std::function<void(int epoch, const ModelParams<T>&)> on_epoch;
};

namespace detail {

/// Data-loss gradient step for the selected model; accumulates into params'
/// gradients and returns the penalized training loss.
template <typename T>
double forward_backward(const ModelInputs<T>& in, std::span<const std::int32_t> labels,
                        std::span<const std::size_t> mask, ModelParams<T>& params, const TrainConfig& cfg, Rng& rng) {
  params.zero_grad();
  if (cfg.model == ModelKind::fixed) {
    auto fwd = fixed_forward(in, params, cfg.fixed_steps, cfg.dropouts(), Mode::train, rng);
    auto ce = softmax_cross_entropy(fwd.z, labels, mask);
    fixed_backward(fwd, ce.dlogits, params, in.op);
    return ce.loss;
  }
  const auto hc = cfg.halting();
  auto fwd = adaptive_forward(in, params, hc, cfg.dropouts(), Mode::train, rng);
  auto loss = penalized_loss(fwd.z_hat, labels, mask, fwd.trace, hc);
  adaptive_backward(fwd, loss.dlogits, hc, params, in.op);
  return loss.total;
}

template <typename T>
struct EvalOutput {
  Matrix<T> logits;
  std::vector<int> K;
};

template <typename T>
EvalOutput<T> eval_forward(const ModelInputs<T>& in, const ModelParams<T>& params, const TrainConfig& cfg) {
  Rng unused(0);
  if (cfg.model == ModelKind::fixed) {
    auto fwd = fixed_forward(in, params, cfg.fixed_steps, cfg.dropouts(), Mode::eval, unused);
    return {std::move(fwd.z), std::vector<int>(in.n_nodes(), cfg.fixed_steps)};
  }
  auto fwd = adaptive_forward(in, params, cfg.halting(), cfg.dropouts(), Mode::eval, unused);
  return {std::move(fwd.z_hat), std::move(fwd.trace.K)};
}

template <typename T>
double masked_accuracy(const Matrix<T>& logits, std::span<const std::int32_t> labels,
                       std::span<const std::size_t> mask) {
  if (mask.empty()) throw InvalidArgument("evaluate: empty mask");
  std::size_t correct = 0;
  for (auto i : mask) {
    auto row = logits.row(i);
    const auto pred = static_cast<std::int32_t>(std::max_element(row.begin(), row.end()) - row.begin());
    correct += pred == labels[i];
  }
  return static_cast<double>(correct) / static_cast<double>(mask.size());
}

}  // namespace detail

/// Eval-mode accuracy over `mask` plus the budget distribution over all nodes.
template <typename T>
EvalResult evaluate(const ModelInputs<T>& in, std::span<const std::int32_t> labels, const ModelParams<T>& params,
                    const TrainConfig& cfg, std::span<const std::size_t> mask) {
  if (mask.empty()) throw InvalidArgument("evaluate: empty mask");
  auto out = detail::eval_forward(in, params, cfg);
  EvalResult r;
  r.accuracy = detail::masked_accuracy(out.logits, labels, mask);
  const int bins = std::max(cfg.max_steps, cfg.model == ModelKind::fixed ? cfg.fixed_steps : 0);
  r.K_histogram.assign(static_cast<std::size_t>(std::max(bins, 1)), 0);
  double sum = 0.0;
  for (int k : out.K) {
    sum += k;
    if (k >= 1) ++r.K_histogram[static_cast<std::size_t>(k - 1)];
  }
  r.mean_K = out.K.empty() ? 0.0 : sum / static_cast<double>(out.K.size());
  return r;
}

/// Full-batch training. Every epoch takes one Adam step on the main group
/// with the halting unit frozen; every `halting_period`-th epoch also takes
/// one Adam step on the halting unit from a fresh forward/backward with the
/// main group frozen. Early stopping keeps the parameters with the lowest
/// stopping loss and stops after `patience` epochs without improvement.
template <typename T>
TrainResult<T> train(const ModelInputs<T>& in, std::span<const std::int32_t> labels, const Splits& splits,
                     ModelParams<T> params, const TrainConfig& cfg, Rng& rng, const TrainHooks<T>& hooks = {}) {
  cfg.validate();
  if (splits.train.empty()) throw InvalidArgument("train: empty training split");
  if (splits.stop.empty() && !hooks.stopping_loss) throw InvalidArgument("train: empty stopping split");
  if (labels.size() != in.n_nodes()) throw InvalidArgument("train: label count != node count");

  const AdamOptions adam{cfg.lr};
  TrainResult<T> result;
  result.params = params;
  double best = std::numeric_limits<double>::infinity();
  const auto t0 = std::chrono::steady_clock::now();

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = detail::forward_backward(in, labels, splits.train, params, cfg, rng);
    if (!std::isfinite(rec.train_loss))
      throw NumericalError("train: non-finite loss at epoch " + std::to_string(epoch));
    params.for_each_main([&](ParamTensor<T>& p) { adam_step(p, adam); });

    if (cfg.model == ModelKind::adaptive && epoch % cfg.halting_period == 0) {
      detail::forward_backward(in, labels, splits.train, params, cfg, rng);
      params.for_each_halting([&](ParamTensor<T>& p) { adam_step(p, adam); });
    }
    if (hooks.on_epoch) hooks.on_epoch(epoch, params);

    if (hooks.stopping_loss) {
      rec.stop_loss = hooks.stopping_loss(epoch, params);
    } else {
      auto out = detail::eval_forward(in, params, cfg);
      rec.stop_loss = softmax_cross_entropy(out.logits, labels, splits.stop).loss;
      rec.stop_accuracy = detail::masked_accuracy(out.logits, labels, splits.stop);
      double s = 0.0;
      for (int k : out.K) s += k;
      rec.mean_K = s / static_cast<double>(out.K.size());
    }
    if (!std::isfinite(rec.stop_loss))
      throw NumericalError("train: non-finite stopping loss at epoch " + std::to_string(epoch));
    result.history.push_back(rec);
    result.epochs_run = epoch;

    if (rec.stop_loss < best) {
      best = rec.stop_loss;
      result.best_epoch = epoch;
      result.params = params;
    } else if (epoch - result.best_epoch >= cfg.patience) {
      break;
    }
  }
  const std::chrono::duration<double, std::milli> elapsed = std::chrono::steady_clock::now() - t0;
  result.ms_per_epoch = elapsed.count() / static_cast<double>(result.epochs_run);
  return result;
}

}  // namespace apgcn
