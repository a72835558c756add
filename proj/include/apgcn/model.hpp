#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "apgcn/dense.hpp"
#include "apgcn/error.hpp"
#include "apgcn/graph.hpp"
#include "apgcn/nn.hpp"
#include "apgcn/rng.hpp"

namespace apgcn {

/// How the per-step combination weights are derived from the halting values.
enum class PMode {
  act,      // p^k = h^k before the budget step, remainder R at it; weights sum to one
  literal,  // p^k = sum_{j<=K} h^j before the budget step (verbatim case formula)
};

/// How the propagation costs of all nodes enter the loss.
enum class PenaltyReduction {
  sum,   // alpha * sum_i S_i
  mean,  // alpha * mean_i S_i
};

struct HaltingConfig {
  int max_steps = 10;
  double epsilon = 0.01;
  double alpha = 0.0;
  PMode p_mode = PMode::act;
  PenaltyReduction reduction = PenaltyReduction::sum;

  /// Coefficient on each node's S_i.
  double penalty_weight(std::size_t n_nodes) const {
    return reduction == PenaltyReduction::mean && n_nodes > 0 ? alpha / static_cast<double>(n_nodes) : alpha;
  }

  void validate() const {
    if (max_steps < 1) throw InvalidArgument("HaltingConfig: max_steps must be >= 1");
    if (!(epsilon > 0.0 && epsilon < 1.0)) throw InvalidArgument("HaltingConfig: epsilon must be in (0, 1)");
    if (!(alpha >= 0.0)) throw InvalidArgument("HaltingConfig: alpha must be >= 0");
  }
};

struct DropoutConfig {
  double features = 0.5;
  double hidden = 0.5;
  /// Edge dropout on the propagation operator, resampled every step.
  double adjacency = 0.5;
};

/// Node features and propagation operator in the model's precision.
template <typename T>
struct ModelInputs {
  SparseRows<T> features;
  PropagationOperator<T> op;

  std::size_t n_nodes() const { return features.rows; }
};

template <typename T>
ModelInputs<T> make_inputs(const GraphBundle& g, OperatorKind kind = OperatorKind::renorm_adjacency) {
  return {SparseRows<T>::from_dense(g.features), build_operator<T>(g, kind)};
}

/// Trainable tensors. The main group is the two-layer node-wise network;
/// the halting group is the linear halting unit (halt_w: C x 1, halt_b: 1 x 1).
template <typename T>
struct ModelParams {
  ParamTensor<T> w1, b1, w2, b2;
  ParamTensor<T> halt_w, halt_b;

  std::size_t n_features() const { return w1.value.rows(); }
  std::size_t n_hidden() const { return w1.value.cols(); }
  std::size_t n_classes() const { return w2.value.cols(); }

  template <typename F>
  void for_each_main(F&& f) {
    f(w1), f(b1), f(w2), f(b2);
  }
  template <typename F>
  void for_each_halting(F&& f) {
    f(halt_w), f(halt_b);
  }
  template <typename F>
  void for_each(F&& f) {
    for_each_main(f);
    for_each_halting(f);
  }

  void zero_grad() {
    for_each([](ParamTensor<T>& p) { p.zero_grad(); });
  }

  /// Glorot-uniform weights, zero biases, zero halting weights. With the
  /// default halting bias of 0, h = 0.5 everywhere.
  static ModelParams init(std::size_t d, std::size_t hidden, std::size_t classes, Rng& rng, double l2_first_layer,
                          bool l2_include_bias = false, double halting_bias = 0.0) {
    if (d == 0 || hidden == 0 || classes == 0) throw InvalidArgument("ModelParams::init: zero dimension");
    ModelParams p;
    p.w1 = ParamTensor<T>(glorot_uniform<T>(d, hidden, rng), l2_first_layer);
    p.b1 = ParamTensor<T>(Matrix<T>(1, hidden), l2_include_bias ? l2_first_layer : 0.0);
    p.w2 = ParamTensor<T>(glorot_uniform<T>(hidden, classes, rng));
    p.b2 = ParamTensor<T>(Matrix<T>(1, classes));
    p.halt_w = ParamTensor<T>(Matrix<T>(classes, 1));
    p.halt_b = ParamTensor<T>(Matrix<T>(1, 1, static_cast<T>(halting_bias)));
    return p;
  }
};

// ------------------------------------------------------ node-wise network

template <typename T>
struct SeedCache {
  SparseRows<T> x;  // input after dropout
  Matrix<T> pre_hidden;
  DropoutMask<T> hidden_mask;
  Matrix<T> hidden;  // relu + dropout, input of layer 2
};

/// z0 = affine2(dropout(relu(affine1(dropout(X))))). Dropout is active only in train mode.
template <typename T>
Matrix<T> seed_embeddings(const SparseRows<T>& x, const ModelParams<T>& p, const DropoutConfig& drop, Mode mode,
                          Rng& rng, SeedCache<T>* cache = nullptr) {
  SeedCache<T> local;
  SeedCache<T>& c = cache ? *cache : local;
  c.x = dropout_forward(x, drop.features, mode, rng);
  c.pre_hidden = affine_forward(c.x, p.w1, p.b1);
  c.hidden = dropout_forward(relu(c.pre_hidden), drop.hidden, mode, rng, c.hidden_mask);
  return affine_forward(c.hidden, p.w2, p.b2);
}

/// Accumulates main-group gradients from dL/dz0.
template <typename T>
void seed_backward(const Matrix<T>& dz0, const SeedCache<T>& c, ModelParams<T>& p) {
  auto g2 = affine_backward(dz0, c.hidden, p.w2.value);
  for (std::size_t i = 0; i < g2.dw.size(); ++i) p.w2.grad.storage()[i] += g2.dw.storage()[i];
  for (std::size_t i = 0; i < g2.db.size(); ++i) p.b2.grad.storage()[i] += g2.db.storage()[i];
  const Matrix<T> dpre = relu_backward(dropout_backward(g2.dx, c.hidden_mask), c.pre_hidden);
  affine_backward_params(dpre, c.x, p.w1, p.b1);
}

// ------------------------------------------------------- halting forward

template <typename T>
T halting_logit(std::span<const T> z, const ModelParams<T>& p) {
  if (z.size() != p.halt_w.value.rows()) detail::throw_shape("halting_probability", "state width != halting weights");
  T acc = p.halt_b.value(0, 0);
  for (std::size_t c = 0; c < z.size(); ++c) acc += p.halt_w.value(c, 0) * z[c];
  return acc;
}

/// h = sigmoid(Q . z + q).
template <typename T>
T halting_probability(std::span<const T> z, const ModelParams<T>& p) {
  return sigmoid(halting_logit(z, p));
}

/// Per-node record of one adaptive forward pass, kept for the backward.
template <typename T>
struct HaltingTrace {
  std::vector<int> K;  // budget step, 1..max_steps
  std::vector<T> R;    // remainder 1 - sum_{k<K} h^k
  std::vector<T> S;    // propagation cost K + R
  Matrix<T> h;         // n x max_steps; column k-1 holds h^k, zero past K
  Matrix<T> p;         // n x max_steps; combination weights, zero past K
  std::vector<Matrix<T>> states;                // z^0 .. z^{steps_run}
  std::vector<PropagationOperator<T>> step_ops;  // sampled operators (train mode with edge dropout)

  std::size_t n_nodes() const { return K.size(); }
  std::size_t steps_run() const { return states.empty() ? 0 : states.size() - 1; }

  double mean_K() const {
    double s = 0;
    for (int k : K) s += k;
    return K.empty() ? 0.0 : s / static_cast<double>(K.size());
  }
};

template <typename T>
struct AdaptiveResult {
  Matrix<T> z_hat;
  HaltingTrace<T> trace;
  SeedCache<T> seed;
};

namespace detail {

template <typename T>
void require_finite(const Matrix<T>& m, const char* where) {
  if (!all_finite(m)) throw NumericalError(std::string(where) + ": non-finite state");
}

/// Given one node's halting values, fills K, R and the combination weights.
/// Shared by the forward pass and by tests that replay recorded sequences.
template <typename T>
void combination_weights(std::span<const T> h, int K, T R, PMode mode, std::span<T> p_out) {
  T total = 0;
  for (int k = 0; k < K; ++k) total += h[static_cast<std::size_t>(k)];
  for (int k = 0; k + 1 < K; ++k)
    p_out[static_cast<std::size_t>(k)] = mode == PMode::act ? h[static_cast<std::size_t>(k)] : total;
  p_out[static_cast<std::size_t>(K - 1)] = R;
}

}  // namespace detail

template <typename T>
struct NodeSchedule {
  int K = 0;
  T R = 0;
  T S = 0;
  std::vector<T> p;
};

/// Budget, remainder, weights and cost for one node given its halting
/// values h^1, h^2, ... (at least K of them, at most max_steps are read).
template <typename T>
NodeSchedule<T> halting_schedule(std::span<const T> h, const HaltingConfig& cfg) {
  cfg.validate();
  const T threshold = static_cast<T>(1.0 - cfg.epsilon);
  const auto steps = static_cast<std::size_t>(cfg.max_steps);
  NodeSchedule<T> s;
  T cumulative = 0;
  for (std::size_t k = 1; k <= steps; ++k) {
    if (k > h.size()) throw InvalidArgument("halting_schedule: sequence ends before the budget is reached");
    if (cumulative + h[k - 1] >= threshold || k == steps) {
      s.K = static_cast<int>(k);
      s.R = T(1) - cumulative;
      break;
    }
    cumulative += h[k - 1];
  }
  s.p.assign(static_cast<std::size_t>(s.K), T(0));
  detail::combination_weights<T>(h, s.K, s.R, cfg.p_mode, s.p);
  s.S = static_cast<T>(s.K) + s.R;
  return s;
}

/// Adaptive propagation. Each step applies the (optionally edge-dropped)
/// operator to the whole state; rows of halted nodes are frozen but still
/// feed their neighbours. Node i halts at the first step where the running
/// sum of h reaches 1 - epsilon, or at max_steps.
template <typename T>
AdaptiveResult<T> adaptive_forward(const ModelInputs<T>& in, const ModelParams<T>& params, const HaltingConfig& cfg,
                                   const DropoutConfig& drop, Mode mode, Rng& rng) {
  cfg.validate();
  AdaptiveResult<T> r;
  Matrix<T> z0 = seed_embeddings(in.features, params, drop, mode, rng, &r.seed);
  detail::require_finite(z0, "adaptive_forward");
  const std::size_t n = z0.rows();
  const std::size_t steps = static_cast<std::size_t>(cfg.max_steps);
  if (in.op.n != n) detail::throw_shape("adaptive_forward", "operator size != node count");

  auto& tr = r.trace;
  tr.K.assign(n, 0);
  tr.R.assign(n, T(0));
  tr.S.assign(n, T(0));
  tr.h = Matrix<T>(n, steps);
  tr.p = Matrix<T>(n, steps);
  tr.states.push_back(std::move(z0));

  const bool sample = mode == Mode::train && drop.adjacency > 0.0;
  const T threshold = static_cast<T>(1.0 - cfg.epsilon);
  std::vector<T> cumulative(n, T(0));
  std::size_t active = n;
  for (std::size_t k = 1; k <= steps && active > 0; ++k) {
    const PropagationOperator<T>* op = &in.op;
    if (sample) {
      tr.step_ops.push_back(sample_edge_dropout(in.op, drop.adjacency, rng));
      op = &tr.step_ops.back();
    }
    const Matrix<T>& prev = tr.states.back();
    Matrix<T> next = propagate(*op, prev);
    for (std::size_t i = 0; i < n; ++i) {
      if (tr.K[i] != 0) {
        std::copy(prev.row(i).begin(), prev.row(i).end(), next.row(i).begin());
        continue;
      }
      const T h = halting_probability<T>(next.row(i), params);
      tr.h(i, k - 1) = h;
      if (cumulative[i] + h >= threshold || k == steps) {
        tr.K[i] = static_cast<int>(k);
        tr.R[i] = T(1) - cumulative[i];
        --active;
      }
      cumulative[i] += h;
    }
    detail::require_finite(next, "adaptive_forward");
    tr.states.push_back(std::move(next));
  }

  const std::size_t c = tr.states.front().cols();
  r.z_hat = Matrix<T>(n, c);
  for (std::size_t i = 0; i < n; ++i) {
    const int K = tr.K[i];
    detail::combination_weights<T>(tr.h.row(i), K, tr.R[i], cfg.p_mode, tr.p.row(i));
    const T inv_k = T(1) / static_cast<T>(K);
    auto out = r.z_hat.row(i);
    for (int k = 1; k <= K; ++k) {
      const T pk = tr.p(i, static_cast<std::size_t>(k - 1));
      auto cur = tr.states[static_cast<std::size_t>(k)].row(i);
      auto before = tr.states[static_cast<std::size_t>(k - 1)].row(i);
      for (std::size_t j = 0; j < c; ++j) out[j] += (pk * cur[j] + (T(1) - pk) * before[j]) * inv_k;
    }
    tr.S[i] = static_cast<T>(K) + tr.R[i];
  }
  return r;
}

// ---------------------------------------------------------------- loss

template <typename T>
struct PenalizedLoss {
  double total = 0.0;
  double data = 0.0;
  double penalty = 0.0;
  Matrix<T> dlogits;  // gradient of the data term only
};

/// Cross-entropy over `mask` plus alpha times the sum (or mean) of S_i over
/// all nodes. The l2 term is applied by the optimizer.
template <typename T>
PenalizedLoss<T> penalized_loss(const Matrix<T>& z_hat, std::span<const std::int32_t> labels,
                                std::span<const std::size_t> mask, const HaltingTrace<T>& trace,
                                const HaltingConfig& cfg) {
  auto ce = softmax_cross_entropy(z_hat, labels, mask);
  double cost = 0.0;
  for (T s : trace.S) cost += static_cast<double>(s);
  PenalizedLoss<T> out;
  out.data = ce.loss;
  out.penalty = cfg.penalty_weight(trace.S.size()) * cost;
  out.total = out.data + out.penalty;
  out.dlogits = std::move(ce.dlogits);
  return out;
}

// ------------------------------------------------------ halting backward

/// Accumulates gradients of (data loss + penalty) into every tensor of
/// `params`. `dz_hat` is the data-loss gradient w.r.t. z_hat. Budgets K and
/// the case structure are constants of the forward pass, so the penalty
/// reaches the halting unit only through the remainders.
template <typename T>
void adaptive_backward(const AdaptiveResult<T>& fwd, const Matrix<T>& dz_hat, const HaltingConfig& cfg,
                       ModelParams<T>& params, const PropagationOperator<T>& base_op) {
  const auto& tr = fwd.trace;
  const std::size_t n = tr.n_nodes();
  if (dz_hat.rows() != n || tr.states.empty() || dz_hat.cols() != tr.states.front().cols())
    detail::throw_shape("adaptive_backward", "gradient shape does not match trace");
  const std::size_t c = dz_hat.cols();
  const std::size_t steps = tr.steps_run();
  if (!tr.step_ops.empty() && tr.step_ops.size() != steps)
    detail::throw_shape("adaptive_backward", "trace step operators incomplete");

  std::vector<Matrix<T>> dz(steps + 1, Matrix<T>(n, c));
  const Matrix<T> q_w = params.halt_w.value;
  std::vector<T> dp(static_cast<std::size_t>(cfg.max_steps));
  std::vector<T> dh(static_cast<std::size_t>(cfg.max_steps));
  const T penalty = static_cast<T>(cfg.penalty_weight(n));

  for (std::size_t i = 0; i < n; ++i) {
    const int K = tr.K[i];
    const T inv_k = T(1) / static_cast<T>(K);
    auto g = dz_hat.row(i);
    for (int k = 1; k <= K; ++k) {
      const auto ks = static_cast<std::size_t>(k);
      const T pk = tr.p(i, ks - 1);
      auto cur = tr.states[ks].row(i);
      auto before = tr.states[ks - 1].row(i);
      auto dcur = dz[ks].row(i);
      auto dbefore = dz[ks - 1].row(i);
      T acc = 0;
      for (std::size_t j = 0; j < c; ++j) {
        acc += g[j] * (cur[j] - before[j]);
        dcur[j] += pk * inv_k * g[j];
        dbefore[j] += (T(1) - pk) * inv_k * g[j];
      }
      dp[ks - 1] = acc * inv_k;
    }

    // R = 1 - sum_{k<K} h^k feeds p^K and the penalty.
    const T d_remainder = dp[static_cast<std::size_t>(K - 1)] + penalty;
    std::fill(dh.begin(), dh.end(), T(0));
    if (cfg.p_mode == PMode::act) {
      for (int k = 1; k < K; ++k) dh[static_cast<std::size_t>(k - 1)] = dp[static_cast<std::size_t>(k - 1)];
    } else {
      T through_total = 0;
      for (int k = 1; k < K; ++k) through_total += dp[static_cast<std::size_t>(k - 1)];
      if (K > 1)
        for (int k = 1; k <= K; ++k) dh[static_cast<std::size_t>(k - 1)] = through_total;
    }
    for (int k = 1; k < K; ++k) dh[static_cast<std::size_t>(k - 1)] -= d_remainder;

    for (int k = 1; k <= K; ++k) {
      const auto ks = static_cast<std::size_t>(k);
      const T dhk = dh[ks - 1];
      if (dhk == T(0)) continue;
      const T hk = tr.h(i, ks - 1);
      const T dlogit = dhk * hk * (T(1) - hk);
      auto zk = tr.states[ks].row(i);
      auto dzk = dz[ks].row(i);
      params.halt_b.grad(0, 0) += dlogit;
      for (std::size_t j = 0; j < c; ++j) {
        params.halt_w.grad(j, 0) += dlogit * zk[j];
        dzk[j] += dlogit * q_w(j, 0);
      }
    }
  }

  // Back through the propagation chain. Active rows came from op * z^{k-1},
  // frozen rows were copied. Every operator is symmetric.
  for (std::size_t k = steps; k >= 1; --k) {
    Matrix<T> masked(n, c);
    for (std::size_t i = 0; i < n; ++i) {
      auto src = dz[k].row(i);
      if (static_cast<std::size_t>(tr.K[i]) >= k) {
        std::copy(src.begin(), src.end(), masked.row(i).begin());
      } else {
        auto dst = dz[k - 1].row(i);
        for (std::size_t j = 0; j < c; ++j) dst[j] += src[j];
      }
    }
    const auto& op = tr.step_ops.empty() ? base_op : tr.step_ops[k - 1];
    const Matrix<T> back = propagate(op, masked);
    auto dst = dz[k - 1].flat();
    auto add = back.flat();
    for (std::size_t a = 0; a < dst.size(); ++a) dst[a] += add[a];
  }

  seed_backward(dz[0], fwd.seed, params);
}

// ------------------------------------------------- fixed-depth baseline

template <typename T>
struct FixedResult {
  Matrix<T> z;
  std::vector<PropagationOperator<T>> step_ops;
  SeedCache<T> seed;
  int steps = 0;
};

/// op^K z0 with per-step edge dropout in train mode. K = 0 is the plain
/// node-wise network.
template <typename T>
FixedResult<T> fixed_forward(const ModelInputs<T>& in, const ModelParams<T>& params, int steps,
                             const DropoutConfig& drop, Mode mode, Rng& rng) {
  if (steps < 0) throw InvalidArgument("fixed_forward: steps must be >= 0");
  FixedResult<T> r;
  r.steps = steps;
  r.z = seed_embeddings(in.features, params, drop, mode, rng, &r.seed);
  const bool sample = mode == Mode::train && drop.adjacency > 0.0;
  for (int k = 0; k < steps; ++k) {
    if (sample) {
      r.step_ops.push_back(sample_edge_dropout(in.op, drop.adjacency, rng));
      r.z = propagate(r.step_ops.back(), r.z);
    } else {
      r.z = propagate(in.op, r.z);
    }
  }
  detail::require_finite(r.z, "fixed_forward");
  return r;
}

template <typename T>
void fixed_backward(const FixedResult<T>& fwd, const Matrix<T>& dz, ModelParams<T>& params,
                    const PropagationOperator<T>& base_op) {
  Matrix<T> g = dz;
  for (int k = fwd.steps; k >= 1; --k) {
    const auto& op = fwd.step_ops.empty() ? base_op : fwd.step_ops[static_cast<std::size_t>(k - 1)];
    g = propagate(op, g);
  }
  seed_backward(g, fwd.seed, params);
}

/// Eval-mode fixed-depth output.
template <typename T>
Matrix<T> propagate_fixed(const ModelInputs<T>& in, const ModelParams<T>& params, int steps) {
  Rng unused(0);
  return fixed_forward(in, params, steps, DropoutConfig{}, Mode::eval, unused).z;
}

}  // namespace apgcn
