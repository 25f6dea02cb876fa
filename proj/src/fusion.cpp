#include "crossalign/fusion.hpp"

#include "crossalign/kernels.hpp"

namespace crossalign {

template <typename T>
Tensor<T> fusion_input(const HiddenSequence<T>& aligned, const HiddenSequence<T>& text) {
  if (aligned.valid_len != text.valid_len || aligned.rows() != text.rows()) {
    throw ValidationError("fuse: aligned speech has " + std::to_string(aligned.valid_len) + " words but text has " +
                          std::to_string(text.valid_len));
  }
  const std::size_t Da = aligned.width(), Dt = text.width();
  Tensor<T> x({text.rows(), Da + Dt});
  for (std::size_t j = 0; j < text.valid_len; ++j) {
    auto row = x.row(j);
    std::copy(aligned.values.row(j).begin(), aligned.values.row(j).end(), row.begin());
    std::copy(text.values.row(j).begin(), text.values.row(j).end(), row.begin() + static_cast<std::ptrdiff_t>(Da));
  }
  return x;
}

template <typename T>
HiddenSequence<T> fuse(const BiLstmEncoder<T>& fusion, const ParameterSet<T>& params,
                       const HiddenSequence<T>& aligned, const HiddenSequence<T>& text, BiLstmCache<T>& cache) {
  const auto x = fusion_input(aligned, text);
  return fusion.forward(params, x, text.valid_len, cache);
}

template <typename T>
Prediction<T> ClassifierHead<T>::forward(const ParameterSet<T>& params, std::span<const T> input,
                                         HeadCache<T>* cache) const {
  const auto& W = params.value(w_);
  auto pre = nn::dense<T>(W, input);
  Prediction<T> pred;
  pred.logits = nn::relu<T>(pre);
  pred.probs = nn::softmax<T>(pred.logits);
  pred.label = static_cast<std::size_t>(std::max_element(pred.probs.begin(), pred.probs.end()) - pred.probs.begin());
  pred.pooled.assign(input.begin(), input.end());
  if (cache) {
    cache->input = pred.pooled;
    cache->pre = std::move(pre);
    cache->probs = pred.probs;
  }
  return pred;
}

template <typename T>
std::vector<T> ClassifierHead<T>::backward(const ParameterSet<T>& params, const HeadCache<T>& cache,
                                           std::size_t target, nn::GradSpan<T> grads) const {
  if (cache.probs.empty()) throw StateError("classifier backward called before forward");
  const auto& W = params.value(w_);
  const std::size_t C = W.cols();
  std::vector<T> d_pre(C);
  for (std::size_t c = 0; c < C; ++c) {
    const T dz = cache.probs[c] - (c == target ? T{1} : T{0});
    d_pre[c] = cache.pre[c] > T{0} ? dz : T{0};
  }
  kernels::ger_acc(grads[w_].data(), W.rows(), C, cache.input.data(), d_pre.data());
  std::vector<T> d_input(W.rows(), T{0});
  kernels::gemv_acc(W.data(), W.rows(), C, d_pre.data(), d_input.data());
  return d_input;
}

template <typename T>
Prediction<T> classify(const ClassifierHead<T>& head, const ParameterSet<T>& params, const HiddenSequence<T>& fused,
                       nn::PoolResult<T>* pool, HeadCache<T>* cache) {
  auto pooled = nn::max_pool_time(fused.values, fused.valid_len);
  auto pred = head.forward(params, pooled.values, cache);
  if (pool) *pool = std::move(pooled);
  return pred;
}

template <typename T>
LossValue<T> loss(const Prediction<T>& pred, std::size_t target) {
  return {nn::cross_entropy_from_logits<T>(pred.logits, target), target};
}

#define CROSSALIGN_INSTANTIATE_FUSION(T)                                                                        \
  template Tensor<T> fusion_input(const HiddenSequence<T>&, const HiddenSequence<T>&);                        \
  template HiddenSequence<T> fuse(const BiLstmEncoder<T>&, const ParameterSet<T>&, const HiddenSequence<T>&,  \
                                  const HiddenSequence<T>&, BiLstmCache<T>&);                                 \
  template class ClassifierHead<T>;                                                                           \
  template Prediction<T> classify(const ClassifierHead<T>&, const ParameterSet<T>&, const HiddenSequence<T>&, \
                                  nn::PoolResult<T>*, HeadCache<T>*);                                         \
  template LossValue<T> loss(const Prediction<T>&, std::size_t);

CROSSALIGN_INSTANTIATE_FUSION(float)
CROSSALIGN_INSTANTIATE_FUSION(double)

}  // namespace crossalign
