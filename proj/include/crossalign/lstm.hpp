#pragma once

#include <span>
#include <string>
#include <vector>

#include "crossalign/params.hpp"
#include "crossalign/tensor.hpp"

namespace crossalign::nn {

/// Weights of one unidirectional LSTM. Gate blocks are stacked in the order
/// [input, forget, cell candidate, output]: W_x is 4H x D, W_h is 4H x H,
/// bias has length 4H.
template <typename T>
struct LstmCellParams {
  const Tensor<T>& W_x;
  const Tensor<T>& W_h;
  const Tensor<T>& bias;

  std::size_t hidden() const { return W_h.cols(); }
  std::size_t input_dim() const { return W_x.cols(); }
  void validate() const;
};

template <typename T>
struct LstmState {
  std::vector<T> h;
  std::vector<T> c;
};

/// One step of the standard LSTM recurrence (no peepholes).
template <typename T>
LstmState<T> lstm_cell(const LstmCellParams<T>& params, std::span<const T> x, std::span<const T> h_prev,
                       std::span<const T> c_prev);

/// Runs the cell over the first `valid_len` rows of X from a zero state.
/// With `reverse`, rows are consumed last-to-first; output row k always holds
/// the state after the k-th processing step. Rows past valid_len are zero.
template <typename T>
Tensor<T> lstm_forward(const LstmCellParams<T>& params, const Tensor<T>& X, bool reverse,
                       std::size_t valid_len);

template <typename T>
Tensor<T> lstm_forward(const LstmCellParams<T>& params, const Tensor<T>& X, bool reverse) {
  return lstm_forward(params, X, reverse, X.rows());
}

/// Activations retained for backpropagation through time. Rows are indexed by
/// processing step.
template <typename T>
struct LstmCache {
  Tensor<T> inputs;  // original order, possibly padded
  Tensor<T> gates;   // post-activation i, f, g, o
  Tensor<T> cells;
  Tensor<T> tanh_cells;
  Tensor<T> hidden;
  std::size_t steps = 0;
  bool reverse = false;
};

/// A unidirectional LSTM whose weights live in a ParameterSet under
/// "<prefix>.W_x", "<prefix>.W_h" and "<prefix>.bias".
template <typename T>
class LstmLayer {
 public:
  LstmLayer() = default;
  LstmLayer(ParameterSet<T>& params, const std::string& prefix, std::size_t input_dim, std::size_t hidden);

  std::size_t input_dim() const { return input_dim_; }
  std::size_t hidden() const { return hidden_; }
  std::size_t w_x_index() const { return w_x_; }
  std::size_t w_h_index() const { return w_h_; }
  std::size_t bias_index() const { return bias_; }

  LstmCellParams<T> cell_params(const ParameterSet<T>& params) const {
    return {params.value(w_x_), params.value(w_h_), params.value(bias_)};
  }

  Tensor<T> forward(const ParameterSet<T>& params, const Tensor<T>& X, std::size_t valid_len, bool reverse,
                    LstmCache<T>& cache) const;

  /// `d_out` holds dLoss/dh per processing step (rows >= steps ignored).
  /// Gradients are accumulated into `grads`; input gradients, when `d_inputs`
  /// is non-null, are accumulated into it in original row order.
  void backward(const ParameterSet<T>& params, const LstmCache<T>& cache, const Tensor<T>& d_out, GradSpan<T> grads,
                Tensor<T>* d_inputs) const;

 private:
  std::size_t input_dim_ = 0;
  std::size_t hidden_ = 0;
  std::size_t w_x_ = 0;
  std::size_t w_h_ = 0;
  std::size_t bias_ = 0;
};

}  // namespace crossalign::nn
