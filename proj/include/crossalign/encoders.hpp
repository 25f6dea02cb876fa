#pragma once

#include <string>
#include <vector>

#include "crossalign/lstm.hpp"

namespace crossalign {

using nn::ParameterSet;
using nn::Tensor;

/// Per-position encoder states, T x 2H. Rows at or past valid_len are padding
/// and hold zeros.
template <typename T>
struct HiddenSequence {
  Tensor<T> values;
  std::size_t valid_len = 0;

  std::size_t rows() const { return values.rows(); }
  std::size_t width() const { return values.cols(); }
};

/// M x D word embeddings with the tokens they came from.
template <typename T>
struct TokenEmbeddingSequence {
  Tensor<T> values;
  std::vector<std::string> tokens;
};

template <typename T>
struct BiLstmCache {
  nn::LstmCache<T> fwd;
  nn::LstmCache<T> bwd;
  std::size_t valid_len = 0;
  std::size_t rows = 0;
};

/// Bidirectional LSTM. Position i of the output pairs the forward state after
/// inputs 1..i with the backward state after inputs N..i.
template <typename T>
class BiLstmEncoder {
 public:
  BiLstmEncoder() = default;
  BiLstmEncoder(ParameterSet<T>& params, const std::string& prefix, std::size_t input_dim, std::size_t hidden)
      : fwd_(params, prefix + ".fwd", input_dim, hidden), bwd_(params, prefix + ".bwd", input_dim, hidden) {}

  std::size_t input_dim() const { return fwd_.input_dim(); }
  std::size_t hidden() const { return fwd_.hidden(); }
  std::size_t output_dim() const { return 2 * fwd_.hidden(); }
  const nn::LstmLayer<T>& forward_layer() const { return fwd_; }
  const nn::LstmLayer<T>& backward_layer() const { return bwd_; }

  HiddenSequence<T> forward(const ParameterSet<T>& params, const Tensor<T>& inputs, std::size_t valid_len,
                            BiLstmCache<T>& cache) const;

  /// Accumulates parameter gradients; adds input gradients into `d_inputs`
  /// when non-null (same shape as the forward inputs).
  void backward(const ParameterSet<T>& params, const BiLstmCache<T>& cache, const Tensor<T>& d_states,
                nn::GradSpan<T> grads, Tensor<T>* d_inputs) const;

 private:
  nn::LstmLayer<T> fwd_;
  nn::LstmLayer<T> bwd_;
};

/// Speech BiLSTM over N x 34 acoustic features.
template <typename T>
HiddenSequence<T> encode_speech(const BiLstmEncoder<T>& encoder, const ParameterSet<T>& params,
                                const Tensor<T>& features, std::size_t valid_len, BiLstmCache<T>& cache);

/// Text BiLSTM over M x D word embeddings.
template <typename T>
HiddenSequence<T> encode_text(const BiLstmEncoder<T>& encoder, const ParameterSet<T>& params,
                              const TokenEmbeddingSequence<T>& embeds, BiLstmCache<T>& cache);

}  // namespace crossalign
