// Independent reference computations used by the unit and acceptance tests.
// They restate each definition directly, with plain loops and no shared code
// from the library beyond container types.
#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <vector>

#include "crossalign/align.hpp"
#include "crossalign/params.hpp"
#include "crossalign/rng.hpp"

namespace oracle {

using crossalign::Rng;
using crossalign::nn::Tensor;

inline Tensor<double> random_matrix(Rng& rng, std::size_t rows, std::size_t cols, double scale = 1.0) {
  Tensor<double> t({rows, cols});
  for (auto& x : t.flat()) x = rng.uniform(-scale, scale);
  return t;
}

inline void randomize(crossalign::nn::ParameterSet<double>& params, Rng& rng, double scale = 0.5) {
  for (auto& v : params.values())
    for (auto& x : v.flat()) x = rng.uniform(-scale, scale);
}

// |X_k| for k = 0 .. W/2 - 1 by the O(W^2) sum.
inline std::vector<double> dft_magnitude(const std::vector<double>& x) {
  const std::size_t W = x.size();
  std::vector<double> out(W / 2);
  for (std::size_t k = 0; k < out.size(); ++k) {
    std::complex<double> acc = 0.0;
    for (std::size_t n = 0; n < W; ++n) {
      const double phase = -2.0 * std::numbers::pi * static_cast<double>((k * n) % W) / static_cast<double>(W);
      acc += x[n] * std::polar(1.0, phase);
    }
    out[k] = std::abs(acc);
  }
  return out;
}

inline std::vector<double> hamming_windowed(const std::vector<double>& x) {
  std::vector<double> y(x.size());
  const double n1 = static_cast<double>(x.size() - 1);
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] * (0.54 - 0.46 * std::cos(2 * std::numbers::pi * i / n1));
  return y;
}

// Centroid of the magnitude spectrum in units of Nyquist.
inline double centroid(const std::vector<double>& mag) {
  double num = 0.0, den = 0.0;
  for (std::size_t k = 0; k < mag.size(); ++k) {
    num += static_cast<double>(k) / static_cast<double>(mag.size()) * mag[k];
    den += mag[k];
  }
  return num / den;
}

// 26 triangular filters with corners evenly spaced on the mel scale between
// 0 Hz and Nyquist, log energies with a 1e-10 floor, orthonormal DCT-II,
// first 13 coefficients. Bin k of the L-bin power spectrum is at k*sr/(2L).
inline std::vector<double> mfcc(const std::vector<double>& power, int sample_rate) {
  constexpr int kFilters = 26, kCoeffs = 13;
  const double L = static_cast<double>(power.size());
  const double nyq = sample_rate / 2.0;
  auto mel = [](double f) { return 1127.0 * std::log1p(f / 700.0); };
  auto inv = [](double m) { return 700.0 * std::expm1(m / 1127.0); };
  std::vector<double> corner(kFilters + 2);
  for (int m = 0; m < kFilters + 2; ++m) corner[m] = inv(mel(nyq) * m / (kFilters + 1));

  std::vector<double> logE(kFilters);
  for (int m = 0; m < kFilters; ++m) {
    double e = 0.0;
    for (std::size_t k = 0; k < power.size(); ++k) {
      const double f = static_cast<double>(k) * nyq / L;
      const double up = (f - corner[m]) / (corner[m + 1] - corner[m]);
      const double down = (corner[m + 2] - f) / (corner[m + 2] - corner[m + 1]);
      e += std::max(0.0, std::min(up, down)) * power[k];
    }
    logE[m] = std::log(e + 1e-10);
  }
  // DCT-II as an explicit orthonormal matrix.
  std::vector<double> out(kCoeffs, 0.0);
  for (int n = 0; n < kCoeffs; ++n) {
    const double norm = n == 0 ? std::sqrt(1.0 / kFilters) : std::sqrt(2.0 / kFilters);
    for (int m = 0; m < kFilters; ++m) out[n] += norm * std::cos(std::numbers::pi * n * (2 * m + 1) / (2.0 * kFilters)) * logE[m];
  }
  return out;
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Chained LSTM cells, gate order [i, f, g, o], zero initial state. Returns
// one row per processing step.
inline std::vector<std::vector<double>> lstm(const Tensor<double>& Wx, const Tensor<double>& Wh,
                                             const Tensor<double>& b, const std::vector<std::vector<double>>& xs) {
  const std::size_t H = Wh.cols(), D = Wx.cols();
  std::vector<double> h(H, 0.0), c(H, 0.0);
  std::vector<std::vector<double>> out;
  for (const auto& x : xs) {
    std::vector<double> z(4 * H);
    for (std::size_t r = 0; r < 4 * H; ++r) {
      double s = b[r];
      for (std::size_t d = 0; d < D; ++d) s += Wx(r, d) * x[d];
      for (std::size_t k = 0; k < H; ++k) s += Wh(r, k) * h[k];
      z[r] = s;
    }
    for (std::size_t k = 0; k < H; ++k) {
      const double i = sigmoid(z[k]), f = sigmoid(z[H + k]), g = std::tanh(z[2 * H + k]), o = sigmoid(z[3 * H + k]);
      c[k] = f * c[k] + i * g;
      h[k] = o * std::tanh(c[k]);
    }
    out.push_back(h);
  }
  return out;
}

// BiLSTM under `prefix` in `params`: row t = [forward h_t, backward h_t],
// where the backward pass runs over rows len-1 .. 0.
inline Tensor<double> bilstm(const crossalign::nn::ParameterSet<double>& params, const std::string& prefix,
                             const Tensor<double>& X, std::size_t len) {
  auto get = [&](const std::string& n) -> const Tensor<double>& { return params.value(params.index(prefix + n)); };
  std::vector<std::vector<double>> xs;
  for (std::size_t t = 0; t < len; ++t) xs.emplace_back(X.row(t).begin(), X.row(t).end());
  auto fwd = lstm(get(".fwd.W_x"), get(".fwd.W_h"), get(".fwd.bias"), xs);
  std::reverse(xs.begin(), xs.end());
  auto bwd = lstm(get(".bwd.W_x"), get(".bwd.W_h"), get(".bwd.bias"), xs);
  const std::size_t H = fwd.front().size();
  Tensor<double> out({X.rows(), 2 * H});
  for (std::size_t t = 0; t < len; ++t) {
    for (std::size_t k = 0; k < H; ++k) {
      out(t, k) = fwd[t][k];
      out(t, H + k) = bwd[len - 1 - t][k];
    }
  }
  return out;
}

// Word-to-frame attention per head on contiguous state chunks:
//   a_ji = tanh(u_h . s_i + v_h . h_j + b_h), alpha_j = softmax_i(a_j),
//   out_j = sum_i alpha_ji s_i, over the first N frames and M words.
struct Attention {
  Tensor<double> out;                             // M x D
  std::vector<std::vector<std::vector<double>>> alpha;  // [h][j][i]
};

inline Attention attend(const Tensor<double>& u, const Tensor<double>& v, const Tensor<double>& b,
                        const Tensor<double>& S, std::size_t N, const Tensor<double>& Hs, std::size_t M) {
  const std::size_t heads = u.rows(), C = u.cols();
  Attention r{Tensor<double>({Hs.rows(), S.cols()}), {}};
  r.alpha.assign(heads, std::vector<std::vector<double>>(M, std::vector<double>(N)));
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t j = 0; j < M; ++j) {
      std::vector<double> a(N);
      for (std::size_t i = 0; i < N; ++i) {
        double s = b[h];
        for (std::size_t c = 0; c < C; ++c) s += u(h, c) * S(i, h * C + c) + v(h, c) * Hs(j, h * C + c);
        a[i] = std::tanh(s);
      }
      const double mx = *std::max_element(a.begin(), a.end());
      double z = 0.0;
      for (double x : a) z += std::exp(x - mx);
      for (std::size_t i = 0; i < N; ++i) {
        const double w = std::exp(a[i] - mx) / z;
        r.alpha[h][j][i] = w;
        for (std::size_t c = 0; c < C; ++c) r.out(j, h * C + c) += w * S(i, h * C + c);
      }
    }
  }
  return r;
}

// Textbook Adam on a flat vector.
struct Adam {
  double lr, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  std::vector<double> m, v;
  int t = 0;
  void step(std::vector<double>& w, const std::vector<double>& g) {
    if (m.empty()) m.assign(w.size(), 0.0), v.assign(w.size(), 0.0);
    ++t;
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = b1 * m[i] + (1 - b1) * g[i];
      v[i] = b2 * v[i] + (1 - b2) * g[i] * g[i];
      const double mh = m[i] / (1 - std::pow(b1, t));
      const double vh = v[i] / (1 - std::pow(b2, t));
      w[i] -= lr * mh / (std::sqrt(vh) + eps);
    }
  }
};

}  // namespace oracle
