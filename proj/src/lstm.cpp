#include "crossalign/lstm.hpp"

#include <cmath>

#include "crossalign/kernels.hpp"
#include "crossalign/ops.hpp"

namespace crossalign::nn {
namespace {

// z = b + W_x x + W_h h_prev, then gate nonlinearities and the cell update.
// `gates` receives the post-activation values of all four blocks.
template <typename T>
void lstm_step(const LstmCellParams<T>& p, const T* x, const T* h_prev, const T* c_prev, T* gates, T* c,
               T* tanh_c, T* h) {
  const std::size_t H = p.hidden();
  const std::size_t D = p.input_dim();
  const T* Wx = p.W_x.data();
  const T* Wh = p.W_h.data();
  const T* b = p.bias.data();
  for (std::size_t r = 0; r < 4 * H; ++r) {
    gates[r] = b[r] + kernels::dot(Wx + r * D, x, D) + kernels::dot(Wh + r * H, h_prev, H);
  }
  for (std::size_t k = 0; k < H; ++k) {
    const T i = sigmoid(gates[k]);
    const T f = sigmoid(gates[H + k]);
    const T g = std::tanh(gates[2 * H + k]);
    const T o = sigmoid(gates[3 * H + k]);
    gates[k] = i;
    gates[H + k] = f;
    gates[2 * H + k] = g;
    gates[3 * H + k] = o;
    c[k] = f * c_prev[k] + i * g;
    tanh_c[k] = std::tanh(c[k]);
    h[k] = o * tanh_c[k];
  }
}

}  // namespace

template <typename T>
void LstmCellParams<T>::validate() const {
  const std::size_t H = W_h.cols();
  if (H == 0 || W_h.rank() != 2 || W_x.rank() != 2) throw ShapeError("lstm: weights must be matrices with H > 0");
  if (W_h.rows() != 4 * H) throw ShapeError("lstm: W_h must be 4H x H, got " + shape_string(W_h.shape()));
  if (W_x.rows() != 4 * H) throw ShapeError("lstm: W_x must have 4H rows, got " + shape_string(W_x.shape()));
  if (bias.size() != 4 * H) throw ShapeError("lstm: bias must have length 4H");
}

template <typename T>
LstmState<T> lstm_cell(const LstmCellParams<T>& params, std::span<const T> x, std::span<const T> h_prev,
                       std::span<const T> c_prev) {
  params.validate();
  const std::size_t H = params.hidden();
  if (x.size() != params.input_dim()) {
    throw ShapeError("lstm_cell: input length " + std::to_string(x.size()) + " but W_x expects " +
                     std::to_string(params.input_dim()));
  }
  if (h_prev.size() != H || c_prev.size() != H) throw ShapeError("lstm_cell: state length must equal H");
  std::vector<T> gates(4 * H), tanh_c(H);
  LstmState<T> out{std::vector<T>(H), std::vector<T>(H)};
  lstm_step(params, x.data(), h_prev.data(), c_prev.data(), gates.data(), out.c.data(), tanh_c.data(),
            out.h.data());
  return out;
}

template <typename T>
Tensor<T> lstm_forward(const LstmCellParams<T>& params, const Tensor<T>& X, bool reverse, std::size_t valid_len) {
  params.validate();
  if (valid_len == 0 || X.rows() == 0) throw ValidationError("lstm_forward: empty sequence");
  if (valid_len > X.rows()) throw ShapeError("lstm_forward: valid_len exceeds sequence length");
  if (X.cols() != params.input_dim()) throw ShapeError("lstm_forward: input width does not match W_x");
  const std::size_t H = params.hidden();
  Tensor<T> out({X.rows(), H});
  std::vector<T> gates(4 * H), c(H, T{0}), tanh_c(H), h(H, T{0}), c_next(H);
  for (std::size_t s = 0; s < valid_len; ++s) {
    const std::size_t t = reverse ? valid_len - 1 - s : s;
    lstm_step(params, X.row(t).data(), h.data(), c.data(), gates.data(), c_next.data(), tanh_c.data(),
              out.row(s).data());
    std::copy(out.row(s).begin(), out.row(s).end(), h.begin());
    c.swap(c_next);
  }
  return out;
}

template <typename T>
LstmLayer<T>::LstmLayer(ParameterSet<T>& params, const std::string& prefix, std::size_t input_dim,
                        std::size_t hidden)
    : input_dim_(input_dim), hidden_(hidden) {
  w_x_ = params.add(prefix + ".W_x", {4 * hidden, input_dim});
  w_h_ = params.add(prefix + ".W_h", {4 * hidden, hidden});
  bias_ = params.add(prefix + ".bias", {4 * hidden});
}

template <typename T>
Tensor<T> LstmLayer<T>::forward(const ParameterSet<T>& params, const Tensor<T>& X, std::size_t valid_len,
                                bool reverse, LstmCache<T>& cache) const {
  if (valid_len == 0 || X.rows() == 0) throw ValidationError("lstm: empty sequence");
  if (valid_len > X.rows()) throw ShapeError("lstm: valid_len exceeds sequence length");
  if (X.cols() != input_dim_) {
    throw ShapeError("lstm: input width " + std::to_string(X.cols()) + " but layer expects " +
                     std::to_string(input_dim_));
  }
  const auto p = cell_params(params);
  const std::size_t H = hidden_;
  cache.inputs = X;
  cache.steps = valid_len;
  cache.reverse = reverse;
  cache.gates = Tensor<T>({valid_len, 4 * H});
  cache.cells = Tensor<T>({valid_len, H});
  cache.tanh_cells = Tensor<T>({valid_len, H});
  cache.hidden = Tensor<T>({valid_len, H});

  Tensor<T> out({X.rows(), H});
  const std::vector<T> zeros(H, T{0});
  for (std::size_t s = 0; s < valid_len; ++s) {
    const std::size_t t = reverse ? valid_len - 1 - s : s;
    const T* h_prev = s ? cache.hidden.row(s - 1).data() : zeros.data();
    const T* c_prev = s ? cache.cells.row(s - 1).data() : zeros.data();
    lstm_step(p, X.row(t).data(), h_prev, c_prev, cache.gates.row(s).data(), cache.cells.row(s).data(),
              cache.tanh_cells.row(s).data(), cache.hidden.row(s).data());
    std::copy(cache.hidden.row(s).begin(), cache.hidden.row(s).end(), out.row(s).begin());
  }
  return out;
}

template <typename T>
void LstmLayer<T>::backward(const ParameterSet<T>& params, const LstmCache<T>& cache, const Tensor<T>& d_out,
                            GradSpan<T> grads, Tensor<T>* d_inputs) const {
  if (cache.steps == 0) throw StateError("lstm backward called before forward");
  const std::size_t H = hidden_;
  const std::size_t D = input_dim_;
  const auto p = cell_params(params);
  T* gWx = grads[w_x_].data();
  T* gWh = grads[w_h_].data();
  T* gb = grads[bias_].data();

  std::vector<T> dh(H), dh_next(H, T{0}), dc_next(H, T{0}), dz(4 * H);
  const std::vector<T> zeros(H, T{0});
  for (std::size_t s = cache.steps; s-- > 0;) {
    const std::size_t t = cache.reverse ? cache.steps - 1 - s : s;
    const T* gate = cache.gates.row(s).data();
    const T* tc = cache.tanh_cells.row(s).data();
    const T* c_prev = s ? cache.cells.row(s - 1).data() : zeros.data();
    const T* h_prev = s ? cache.hidden.row(s - 1).data() : zeros.data();
    const T* dout = d_out.row(s).data();
    for (std::size_t k = 0; k < H; ++k) {
      const T i = gate[k], f = gate[H + k], g = gate[2 * H + k], o = gate[3 * H + k];
      const T dhk = dout[k] + dh_next[k];
      const T dc = dc_next[k] + dhk * o * (T{1} - tc[k] * tc[k]);
      dz[k] = dc * g * i * (T{1} - i);
      dz[H + k] = dc * c_prev[k] * f * (T{1} - f);
      dz[2 * H + k] = dc * i * (T{1} - g * g);
      dz[3 * H + k] = dhk * tc[k] * o * (T{1} - o);
      dc_next[k] = dc * f;
    }
    const T* x = cache.inputs.row(t).data();
    kernels::ger_acc(gWx, 4 * H, D, dz.data(), x);
    kernels::ger_acc(gWh, 4 * H, H, dz.data(), h_prev);
    for (std::size_t r = 0; r < 4 * H; ++r) gb[r] += dz[r];
    if (d_inputs) kernels::gemv_t_acc(p.W_x.data(), 4 * H, D, dz.data(), d_inputs->row(t).data());
    std::fill(dh_next.begin(), dh_next.end(), T{0});
    kernels::gemv_t_acc(p.W_h.data(), 4 * H, H, dz.data(), dh_next.data());
  }
}

#define CROSSALIGN_INSTANTIATE_LSTM(T)                                                                       \
  template struct LstmCellParams<T>;                                                                         \
  template LstmState<T> lstm_cell(const LstmCellParams<T>&, std::span<const T>, std::span<const T>,          \
                                  std::span<const T>);                                                       \
  template Tensor<T> lstm_forward(const LstmCellParams<T>&, const Tensor<T>&, bool, std::size_t);            \
  template class LstmLayer<T>;

CROSSALIGN_INSTANTIATE_LSTM(float)
CROSSALIGN_INSTANTIATE_LSTM(double)

}  // namespace crossalign::nn
