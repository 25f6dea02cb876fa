#pragma once

#include <array>
#include <string_view>
#include <vector>

#include "crossalign/align.hpp"
#include "crossalign/encoders.hpp"

namespace crossalign {

inline constexpr std::size_t kNumClasses = 4;
inline constexpr std::array<std::string_view, kNumClasses> kClassNames = {"angry", "happy", "neutral", "sad"};

template <typename T>
struct Prediction {
  std::vector<T> probs;
  std::vector<T> logits;  // post-ReLU
  std::size_t label = 0;
  std::vector<T> pooled;  // classifier input
};

template <typename T>
struct LossValue {
  T value{0};
  std::size_t target = 0;
};

/// Builds the fusion input [aligned_j ; text_j] row by row.
template <typename T>
Tensor<T> fusion_input(const HiddenSequence<T>& aligned, const HiddenSequence<T>& text);

/// Fusion BiLSTM over the concatenated aligned-speech and text states.
template <typename T>
HiddenSequence<T> fuse(const BiLstmEncoder<T>& fusion, const ParameterSet<T>& params,
                       const HiddenSequence<T>& aligned, const HiddenSequence<T>& text, BiLstmCache<T>& cache);

template <typename T>
struct HeadCache {
  std::vector<T> input;
  std::vector<T> pre;  // W^T x before the ReLU
  std::vector<T> probs;
};

/// z = relu(W^T x), softmax over classes. "head.W" is (input width) x C.
template <typename T>
class ClassifierHead {
 public:
  ClassifierHead() = default;
  ClassifierHead(ParameterSet<T>& params, std::size_t input_dim, std::size_t classes = kNumClasses)
      : w_(params.add("head.W", {input_dim, classes})) {}

  std::size_t w_index() const { return w_; }

  Prediction<T> forward(const ParameterSet<T>& params, std::span<const T> input, HeadCache<T>* cache) const;

  /// Gradient of -log p[target] for the cached forward. Returns dLoss/dinput.
  std::vector<T> backward(const ParameterSet<T>& params, const HeadCache<T>& cache, std::size_t target,
                          nn::GradSpan<T> grads) const;

 private:
  std::size_t w_ = 0;
};

/// Max-pool over the valid positions, then the classifier head.
template <typename T>
Prediction<T> classify(const ClassifierHead<T>& head, const ParameterSet<T>& params, const HiddenSequence<T>& fused,
                       nn::PoolResult<T>* pool = nullptr, HeadCache<T>* cache = nullptr);

/// -log p[target], computed from the logits with log-sum-exp.
template <typename T>
LossValue<T> loss(const Prediction<T>& pred, std::size_t target);

}  // namespace crossalign
