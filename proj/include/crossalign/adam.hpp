#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "crossalign/params.hpp"

namespace crossalign::nn {

/// Bias-corrected Adam. Moments are kept per parameter in the parameter's
/// precision; the bias corrections are evaluated in double.
template <typename T>
struct AdamState {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t t = 0;
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;

  AdamState() = default;
  explicit AdamState(const ParameterSet<T>& params, double learning_rate = 0.001)
      : lr(learning_rate), m(params.make_grad_buffer()), v(params.make_grad_buffer()) {}
};

template <typename T>
void adam_step(AdamState<T>& state, ParameterSet<T>& params) {
  if (state.m.size() != params.size()) throw StateError("adam state does not match parameter set");
  ++state.t;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  const T b1 = static_cast<T>(state.beta1), b2 = static_cast<T>(state.beta2);
  const T lr = static_cast<T>(state.lr), eps = static_cast<T>(state.eps);
  const T inv_bc1 = static_cast<T>(1.0 / bc1), inv_bc2 = static_cast<T>(1.0 / bc2);
  for (std::size_t p = 0; p < params.size(); ++p) {
    T* w = params.value(p).data();
    const T* g = params.grad(p).data();
    T* m = state.m[p].data();
    T* v = state.v[p].data();
    const std::size_t n = params.value(p).size();
    for (std::size_t i = 0; i < n; ++i) {
      m[i] = b1 * m[i] + (T{1} - b1) * g[i];
      v[i] = b2 * v[i] + (T{1} - b2) * g[i] * g[i];
      const T m_hat = m[i] * inv_bc1;
      const T v_hat = v[i] * inv_bc2;
      w[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
    }
  }
}

/// Rescales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
template <typename T>
double clip_grad_norm(ParameterSet<T>& params, double max_norm) {
  double sq = 0.0;
  for (const auto& g : params.grads())
    for (T x : g.flat()) sq += static_cast<double>(x) * static_cast<double>(x);
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const T scale = static_cast<T>(max_norm / norm);
    for (auto& g : params.grads())
      for (T& x : g.flat()) x *= scale;
  }
  return norm;
}

}  // namespace crossalign::nn
