#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "apgcn/dense.hpp"
#include "apgcn/error.hpp"
#include "apgcn/rng.hpp"

// Forward/backward kernels for the fixed node-wise network. Each backward
// takes the upstream gradient plus whatever the forward cached.

namespace apgcn {

enum class Mode { train, eval };

template <typename T>
struct ParamTensor {
  Matrix<T> value;
  Matrix<T> grad;
  Matrix<T> adam_m;
  Matrix<T> adam_v;
  std::int64_t step_count = 0;
  /// l2 coefficient; the penalty lambda * ||value||^2 enters as 2 * lambda * value.
  double weight_decay = 0.0;

  ParamTensor() = default;
  explicit ParamTensor(Matrix<T> v, double decay = 0.0)
      : value(std::move(v)),
        grad(value.rows(), value.cols()),
        adam_m(value.rows(), value.cols()),
        adam_v(value.rows(), value.cols()),
        weight_decay(decay) {}

  void zero_grad() { grad.fill(T(0)); }
};

// ---------------------------------------------------------------- affine

template <typename T>
void check_affine(std::size_t in_cols, const ParamTensor<T>& w, const ParamTensor<T>& b, const char* where) {
  if (in_cols != w.value.rows())
    detail::throw_shape(where, "input has " + std::to_string(in_cols) + " columns, W has " +
                                   std::to_string(w.value.rows()) + " rows");
  if (b.value.rows() != 1 || b.value.cols() != w.value.cols()) detail::throw_shape(where, "bias must be 1 x W.cols");
}

/// X W + b, bias broadcast over rows.
template <typename T>
Matrix<T> affine_forward(const Matrix<T>& x, const ParamTensor<T>& w, const ParamTensor<T>& b) {
  check_affine(x.cols(), w, b, "affine_forward");
  Matrix<T> out = matmul(x, w.value);
  const auto bias = b.value.row(0);
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto r = out.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) r[j] += bias[j];
  }
  debug_check_finite(out, "affine_forward");
  return out;
}

template <typename T>
Matrix<T> affine_forward(const SparseRows<T>& x, const ParamTensor<T>& w, const ParamTensor<T>& b) {
  check_affine(x.cols, w, b, "affine_forward");
  const std::size_t m = w.value.cols();
  Matrix<T> out(x.rows, m);
  const auto bias = b.value.row(0);
  for (std::size_t i = 0; i < x.rows; ++i) {
    auto r = out.row(i);
    std::copy(bias.begin(), bias.end(), r.begin());
    for (std::size_t a = x.offsets[i]; a < x.offsets[i + 1]; ++a) {
      const T v = x.values[a];
      auto wrow = w.value.row(x.indices[a]);
      for (std::size_t j = 0; j < m; ++j) r[j] += v * wrow[j];
    }
  }
  debug_check_finite(out, "affine_forward");
  return out;
}

template <typename T>
struct AffineGrads {
  Matrix<T> dx;
  Matrix<T> dw;
  Matrix<T> db;
};

/// dX = up W^T, dW = X^T up, db = column sums of up.
template <typename T>
AffineGrads<T> affine_backward(const Matrix<T>& upstream, const Matrix<T>& x, const Matrix<T>& w) {
  if (upstream.rows() != x.rows() || x.cols() != w.rows() || upstream.cols() != w.cols())
    detail::throw_shape("affine_backward", "shapes inconsistent with forward");
  AffineGrads<T> g{Matrix<T>(x.rows(), x.cols()), Matrix<T>(w.rows(), w.cols()), Matrix<T>(1, w.cols())};
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto up = upstream.row(i);
    auto dxr = g.dx.row(i);
    for (std::size_t k = 0; k < w.rows(); ++k) {
      auto wr = w.row(k);
      T acc = 0;
      for (std::size_t j = 0; j < up.size(); ++j) acc += up[j] * wr[j];
      dxr[k] = acc;
      const T xik = x(i, k);
      if (xik == T(0)) continue;
      auto dwr = g.dw.row(k);
      for (std::size_t j = 0; j < up.size(); ++j) dwr[j] += xik * up[j];
    }
    auto db = g.db.row(0);
    for (std::size_t j = 0; j < up.size(); ++j) db[j] += up[j];
  }
  return g;
}

/// Parameter-only backward for sparse inputs; accumulates into the tensors' grads.
template <typename T>
void affine_backward_params(const Matrix<T>& upstream, const SparseRows<T>& x, ParamTensor<T>& w, ParamTensor<T>& b) {
  if (upstream.rows() != x.rows || upstream.cols() != w.value.cols())
    detail::throw_shape("affine_backward_params", "shapes inconsistent with forward");
  auto db = b.grad.row(0);
  for (std::size_t i = 0; i < x.rows; ++i) {
    auto up = upstream.row(i);
    for (std::size_t a = x.offsets[i]; a < x.offsets[i + 1]; ++a) {
      const T v = x.values[a];
      auto dwr = w.grad.row(x.indices[a]);
      for (std::size_t j = 0; j < up.size(); ++j) dwr[j] += v * up[j];
    }
    for (std::size_t j = 0; j < up.size(); ++j) db[j] += up[j];
  }
}

// ---------------------------------------------------------- elementwise

template <typename T>
Matrix<T> relu(const Matrix<T>& x) {
  Matrix<T> out = x;
  for (T& v : out.flat()) v = v > T(0) ? v : T(0);
  return out;
}

template <typename T>
Matrix<T> relu_backward(const Matrix<T>& upstream, const Matrix<T>& x) {
  require_same_shape(upstream, x, "relu_backward");
  Matrix<T> out = upstream;
  auto xs = x.flat();
  auto os = out.flat();
  for (std::size_t i = 0; i < os.size(); ++i)
    if (!(xs[i] > T(0))) os[i] = T(0);
  return out;
}

template <typename T>
T sigmoid(T x) {
  // Split on sign so exp never overflows.
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

template <typename T>
Matrix<T> sigmoid(const Matrix<T>& x) {
  Matrix<T> out = x;
  for (T& v : out.flat()) v = sigmoid(v);
  return out;
}

/// Takes the cached forward output y = sigmoid(x).
template <typename T>
Matrix<T> sigmoid_backward(const Matrix<T>& upstream, const Matrix<T>& y) {
  require_same_shape(upstream, y, "sigmoid_backward");
  Matrix<T> out = upstream;
  auto ys = y.flat();
  auto os = out.flat();
  for (std::size_t i = 0; i < os.size(); ++i) os[i] *= ys[i] * (T(1) - ys[i]);
  return out;
}

inline void check_dropout_rate(double rate) {
  if (!(rate >= 0.0 && rate < 1.0)) throw InvalidArgument("dropout: rate must be in [0, 1)");
}

/// Inverted dropout. `scale` holds 0 or 1/(1-rate) per entry; empty in eval
/// mode or at rate 0.
template <typename T>
struct DropoutMask {
  std::vector<T> scale;
  bool identity() const { return scale.empty(); }
};

template <typename T>
Matrix<T> dropout_forward(const Matrix<T>& x, double rate, Mode mode, Rng& rng, DropoutMask<T>& mask) {
  check_dropout_rate(rate);
  mask.scale.clear();
  if (mode == Mode::eval || rate == 0.0) return x;
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  mask.scale.resize(x.size());
  Matrix<T> out = x;
  auto os = out.flat();
  for (std::size_t i = 0; i < os.size(); ++i) {
    mask.scale[i] = rng.uniform() >= rate ? keep_scale : T(0);
    os[i] *= mask.scale[i];
  }
  return out;
}

template <typename T>
Matrix<T> dropout_backward(const Matrix<T>& upstream, const DropoutMask<T>& mask) {
  if (mask.identity()) return upstream;
  if (mask.scale.size() != upstream.size()) detail::throw_shape("dropout_backward", "mask size mismatch");
  Matrix<T> out = upstream;
  auto os = out.flat();
  for (std::size_t i = 0; i < os.size(); ++i) os[i] *= mask.scale[i];
  return out;
}

/// Dropout over the stored entries of a sparse matrix. Implicit zeros stay
/// zero, so this matches dense dropout on the same matrix.
template <typename T>
SparseRows<T> dropout_forward(const SparseRows<T>& x, double rate, Mode mode, Rng& rng) {
  check_dropout_rate(rate);
  if (mode == Mode::eval || rate == 0.0) return x;
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  SparseRows<T> out = x;
  for (T& v : out.values) v = rng.uniform() >= rate ? v * keep_scale : T(0);
  return out;
}

// ------------------------------------------------------------------ loss

template <typename T>
struct LossAndGrad {
  double loss = 0.0;
  Matrix<T> dlogits;
};

/// Mean negative log-likelihood of softmax(logits) over the masked nodes.
template <typename T>
LossAndGrad<T> softmax_cross_entropy(const Matrix<T>& logits, std::span<const std::int32_t> labels,
                                     std::span<const std::size_t> mask) {
  if (mask.empty()) throw InvalidArgument("softmax_cross_entropy: empty mask");
  if (labels.size() != logits.rows()) detail::throw_shape("softmax_cross_entropy", "label count != rows");
  LossAndGrad<T> out{0.0, Matrix<T>(logits.rows(), logits.cols())};
  const double inv = 1.0 / static_cast<double>(mask.size());
  std::vector<double> prob(logits.cols());
  for (auto i : mask) {
    if (i >= logits.rows()) throw InvalidArgument("softmax_cross_entropy: mask index out of range");
    const auto y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= logits.cols())
      throw InvalidArgument("softmax_cross_entropy: label out of range");
    auto row = logits.row(i);
    double mx = -std::numeric_limits<double>::infinity();
    for (T v : row) {
      if (std::isnan(v)) throw NumericalError("softmax_cross_entropy: NaN logit at node " + std::to_string(i));
      mx = std::max(mx, static_cast<double>(v));
    }
    double denom = 0.0;
    for (std::size_t c = 0; c < row.size(); ++c) {
      prob[c] = std::exp(static_cast<double>(row[c]) - mx);
      denom += prob[c];
    }
    out.loss += (std::log(denom) - (static_cast<double>(row[y]) - mx)) * inv;
    auto g = out.dlogits.row(i);
    for (std::size_t c = 0; c < row.size(); ++c) {
      const double pc = prob[c] / denom - (static_cast<std::size_t>(y) == c ? 1.0 : 0.0);
      g[c] = static_cast<T>(pc * inv);
    }
  }
  return out;
}

// ------------------------------------------------------------------ adam

struct AdamOptions {
  double lr = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam step. The l2 term 2 * weight_decay * value is added
/// to the gradient before the moment updates.
template <typename T>
void adam_step(ParamTensor<T>& p, const AdamOptions& opt) {
  require_same_shape(p.value, p.grad, "adam_step");
  for (T g : p.grad.flat())
    if (!std::isfinite(g)) throw NumericalError("adam_step: non-finite gradient");
  ++p.step_count;
  const double t = static_cast<double>(p.step_count);
  const double c1 = 1.0 - std::pow(opt.beta1, t);
  const double c2 = 1.0 - std::pow(opt.beta2, t);
  auto val = p.value.flat();
  auto grd = p.grad.flat();
  auto m = p.adam_m.flat();
  auto v = p.adam_v.flat();
  for (std::size_t i = 0; i < val.size(); ++i) {
    double g = static_cast<double>(grd[i]);
    if (p.weight_decay > 0.0) g += 2.0 * p.weight_decay * static_cast<double>(val[i]);
    const double mi = opt.beta1 * static_cast<double>(m[i]) + (1.0 - opt.beta1) * g;
    const double vi = opt.beta2 * static_cast<double>(v[i]) + (1.0 - opt.beta2) * g * g;
    m[i] = static_cast<T>(mi);
    v[i] = static_cast<T>(vi);
    val[i] = static_cast<T>(static_cast<double>(val[i]) - opt.lr * (mi / c1) / (std::sqrt(vi / c2) + opt.eps));
  }
}

/// Glorot/Xavier uniform initialisation.
template <typename T>
Matrix<T> glorot_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Matrix<T> m(fan_in, fan_out);
  for (T& v : m.flat()) v = static_cast<T>(rng.uniform(-limit, limit));
  return m;
}

}  // namespace apgcn
