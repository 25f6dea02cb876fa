#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "crossalign/kernels.hpp"
#include "crossalign/tensor.hpp"

namespace crossalign::nn {

/// y = W^T x (+ bias), with W of shape in x out.
template <typename T>
std::vector<T> dense(const Tensor<T>& W, std::span<const T> x, std::span<const T> bias = {}) {
  if (W.rows() != x.size()) {
    throw ShapeError("dense: weight " + shape_string(W.shape()) + " does not accept input of length " +
                     std::to_string(x.size()));
  }
  if (!bias.empty() && bias.size() != W.cols()) throw ShapeError("dense: bias length mismatch");
  std::vector<T> y(W.cols(), T{0});
  if (!bias.empty()) std::copy(bias.begin(), bias.end(), y.begin());
  kernels::gemv_t_acc(W.data(), W.rows(), W.cols(), x.data(), y.data());
  return y;
}

template <typename T>
std::vector<T> relu(std::span<const T> x) {
  std::vector<T> y(x.size());
  // NaN passes through so a corrupted input still surfaces as a non-finite loss.
  std::transform(x.begin(), x.end(), y.begin(), [](T v) { return v < T{0} ? T{0} : v; });
  return y;
}

template <typename T>
std::vector<T> tanh_op(std::span<const T> x) {
  std::vector<T> y(x.size());
  std::transform(x.begin(), x.end(), y.begin(), [](T v) { return std::tanh(v); });
  return y;
}

template <typename T>
T log_sum_exp(std::span<const T> x) {
  const T m = *std::max_element(x.begin(), x.end());
  T s{0};
  for (T v : x) s += std::exp(v - m);
  return m + std::log(s);
}

template <typename T>
std::vector<T> softmax(std::span<const T> x) {
  if (x.empty()) throw ShapeError("softmax of an empty vector");
  const T m = *std::max_element(x.begin(), x.end());
  std::vector<T> y(x.size());
  T s{0};
  for (std::size_t i = 0; i < x.size(); ++i) {
    y[i] = std::exp(x[i] - m);
    s += y[i];
  }
  for (T& v : y) v /= s;
  return y;
}

template <typename T>
std::vector<T> log_softmax(std::span<const T> x) {
  const T lse = log_sum_exp(x);
  std::vector<T> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] - lse;
  return y;
}

/// Result of an entrywise max over time: the pooled vector and, per column,
/// the first row attaining the max (the row that receives the gradient).
template <typename T>
struct PoolResult {
  std::vector<T> values;
  std::vector<std::size_t> argmax;
};

template <typename T>
PoolResult<T> max_pool_time(const Tensor<T>& seq, std::size_t valid_len) {
  if (valid_len == 0) throw ValidationError("max_pool_time: valid_len must be at least 1");
  if (valid_len > seq.rows()) throw ShapeError("max_pool_time: valid_len exceeds sequence length");
  PoolResult<T> out{std::vector<T>(seq.row(0).begin(), seq.row(0).end()),
                    std::vector<std::size_t>(seq.cols(), 0)};
  for (std::size_t t = 1; t < valid_len; ++t) {
    auto row = seq.row(t);
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (row[c] > out.values[c]) {
        out.values[c] = row[c];
        out.argmax[c] = t;
      }
    }
  }
  return out;
}

/// -sum_c y_c log p_c.
template <typename T>
T cross_entropy(std::span<const T> p, std::span<const T> y_onehot) {
  if (p.size() != y_onehot.size()) throw ShapeError("cross_entropy: length mismatch");
  T loss{0};
  for (std::size_t c = 0; c < p.size(); ++c) {
    if (y_onehot[c] != T{0}) loss -= y_onehot[c] * std::log(p[c]);
  }
  return loss;
}

/// -log softmax(z)[target], evaluated from logits via log-sum-exp.
template <typename T>
T cross_entropy_from_logits(std::span<const T> logits, std::size_t target) {
  if (target >= logits.size()) throw ValidationError("cross_entropy: target class out of range");
  return log_sum_exp(logits) - logits[target];
}

/// cross_entropy_from_logits minus log(C), computed as
/// log1p(mean_c expm1(z_c - z_target)). Same gradient, but near uniform
/// predictions the value is small and carries far less rounding error.
template <typename T>
T cross_entropy_excess(std::span<const T> logits, std::size_t target) {
  if (target >= logits.size()) throw ValidationError("cross_entropy: target class out of range");
  T acc{0};
  for (T z : logits) acc += std::expm1(z - logits[target]);
  return std::log1p(acc / static_cast<T>(logits.size()));
}

template <typename T>
T sigmoid(T x) {
  return T{1} / (T{1} + std::exp(-x));
}

}  // namespace crossalign::nn
