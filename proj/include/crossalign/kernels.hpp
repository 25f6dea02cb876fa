#pragma once

// Inner-loop kernels shared by every layer. The simd reductions use a fixed
// lane order, so results are reproducible for a given build but may differ in
// the last ulp from a strictly sequential sum.

#include <cstddef>

namespace crossalign::kernels {

template <typename T>
inline T dot(const T* a, const T* b, std::size_t n) {
  T acc{0};
#pragma omp simd reduction(+ : acc)
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

// y[r] += W[r, :] . x   for W of shape rows x cols.
template <typename T>
inline void gemv_acc(const T* W, std::size_t rows, std::size_t cols, const T* x, T* y) {
  for (std::size_t r = 0; r < rows; ++r) y[r] += dot(W + r * cols, x, cols);
}

// y += W^T x   for W of shape rows x cols, x of length rows, y of length cols.
template <typename T>
inline void gemv_t_acc(const T* W, std::size_t rows, std::size_t cols, const T* x, T* y) {
  for (std::size_t r = 0; r < rows; ++r) {
    const T xr = x[r];
    const T* w = W + r * cols;
#pragma omp simd
    for (std::size_t c = 0; c < cols; ++c) y[c] += xr * w[c];
  }
}

// W += a b^T   for W of shape rows x cols.
template <typename T>
inline void ger_acc(T* W, std::size_t rows, std::size_t cols, const T* a, const T* b) {
  for (std::size_t r = 0; r < rows; ++r) {
    const T ar = a[r];
    T* w = W + r * cols;
#pragma omp simd
    for (std::size_t c = 0; c < cols; ++c) w[c] += ar * b[c];
  }
}

template <typename T>
inline void axpy(T alpha, const T* x, T* y, std::size_t n) {
#pragma omp simd
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

}  // namespace crossalign::kernels
