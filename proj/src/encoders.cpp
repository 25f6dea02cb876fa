#include "crossalign/encoders.hpp"

#include "crossalign/dsp.hpp"

namespace crossalign {

template <typename T>
HiddenSequence<T> BiLstmEncoder<T>::forward(const ParameterSet<T>& params, const Tensor<T>& inputs,
                                            std::size_t valid_len, BiLstmCache<T>& cache) const {
  if (valid_len == 0 || inputs.rows() == 0) throw ValidationError("encoder: empty sequence");
  const std::size_t H = hidden();
  const auto f = fwd_.forward(params, inputs, valid_len, false, cache.fwd);
  const auto b = bwd_.forward(params, inputs, valid_len, true, cache.bwd);
  cache.valid_len = valid_len;
  cache.rows = inputs.rows();

  HiddenSequence<T> out{Tensor<T>({inputs.rows(), 2 * H}), valid_len};
  for (std::size_t i = 0; i < valid_len; ++i) {
    auto row = out.values.row(i);
    std::copy(f.row(i).begin(), f.row(i).end(), row.begin());
    const auto back = b.row(valid_len - 1 - i);
    std::copy(back.begin(), back.end(), row.begin() + static_cast<std::ptrdiff_t>(H));
  }
  return out;
}

template <typename T>
void BiLstmEncoder<T>::backward(const ParameterSet<T>& params, const BiLstmCache<T>& cache,
                                const Tensor<T>& d_states, nn::GradSpan<T> grads, Tensor<T>* d_inputs) const {
  if (cache.valid_len == 0) throw StateError("encoder backward called before forward");
  const std::size_t H = hidden();
  const std::size_t L = cache.valid_len;
  Tensor<T> d_fwd({L, H}), d_bwd({L, H});
  for (std::size_t i = 0; i < L; ++i) {
    const auto d = d_states.row(i);
    std::copy(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(H), d_fwd.row(i).begin());
    std::copy(d.begin() + static_cast<std::ptrdiff_t>(H), d.end(), d_bwd.row(L - 1 - i).begin());
  }
  fwd_.backward(params, cache.fwd, d_fwd, grads, d_inputs);
  bwd_.backward(params, cache.bwd, d_bwd, grads, d_inputs);
}

template <typename T>
HiddenSequence<T> encode_speech(const BiLstmEncoder<T>& encoder, const ParameterSet<T>& params,
                                const Tensor<T>& features, std::size_t valid_len, BiLstmCache<T>& cache) {
  if (features.cols() != encoder.input_dim()) {
    throw ShapeError("encode_speech: expected " + std::to_string(encoder.input_dim()) + " features per frame, got " +
                     std::to_string(features.cols()));
  }
  return encoder.forward(params, features, valid_len, cache);
}

template <typename T>
HiddenSequence<T> encode_text(const BiLstmEncoder<T>& encoder, const ParameterSet<T>& params,
                              const TokenEmbeddingSequence<T>& embeds, BiLstmCache<T>& cache) {
  if (embeds.values.cols() != encoder.input_dim()) {
    throw ShapeError("encode_text: expected embeddings of width " + std::to_string(encoder.input_dim()) + ", got " +
                     std::to_string(embeds.values.cols()));
  }
  return encoder.forward(params, embeds.values, embeds.values.rows(), cache);
}

#define CROSSALIGN_INSTANTIATE_ENCODERS(T)                                                                       \
  template class BiLstmEncoder<T>;                                                                             \
  template HiddenSequence<T> encode_speech(const BiLstmEncoder<T>&, const ParameterSet<T>&, const Tensor<T>&,  \
                                           std::size_t, BiLstmCache<T>&);                                      \
  template HiddenSequence<T> encode_text(const BiLstmEncoder<T>&, const ParameterSet<T>&,                      \
                                         const TokenEmbeddingSequence<T>&, BiLstmCache<T>&);

CROSSALIGN_INSTANTIATE_ENCODERS(float)
CROSSALIGN_INSTANTIATE_ENCODERS(double)

}  // namespace crossalign
