#pragma once

#include <atomic>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "crossalign/encoders.hpp"
#include "crossalign/ops.hpp"

namespace crossalign {

/// Pre-softmax logit given to padded speech frames.
inline constexpr double kMaskLogit = -1e9;

/// Inclusive, 1-based frame range covered by one word.
struct WordSpan {
  std::size_t start_frame = 0;
  std::size_t end_frame = 0;
  bool operator==(const WordSpan&) const = default;
};

/// Per-head scoring vectors. The encoder state of width D is split into
/// `heads` contiguous chunks of D / heads; head h scores and pools chunk h.
/// u and v are heads x chunk, b has one entry per head.
template <typename T>
struct AttentionParams {
  const Tensor<T>& u;
  const Tensor<T>& v;
  const Tensor<T>& b;

  std::size_t heads() const { return u.rows(); }
  std::size_t chunk() const { return u.cols(); }
};

/// Row-stochastic alignment weights, heads x M x N (padded extents).
template <typename T>
struct AttentionMap {
  Tensor<T> weights;
  std::size_t valid_frames = 0;
  std::size_t valid_words = 0;

  std::size_t heads() const { return weights.shape()[0]; }
  std::size_t words() const { return weights.shape()[1]; }
  std::size_t frames() const { return weights.shape()[2]; }
  T at(std::size_t h, std::size_t j, std::size_t i) const { return weights[(h * words() + j) * frames() + i]; }
};

template <typename T>
struct AttentionCache {
  Tensor<T> speech;           // N x D
  Tensor<T> text;             // M x D
  Tensor<T> squashed;         // heads x M x N, tanh logits (valid entries only)
  AttentionMap<T> map;
};

template <typename T>
struct AttendResult {
  HiddenSequence<T> aligned;  // M x D
  AttentionMap<T> map;
};

/// Each word attends over the valid speech frames:
///   a[j,i] = tanh(u_h . s_i + v_h . h_j + b_h), alpha = softmax_i(a),
///   aligned_j = sum_i alpha[j,i] s_i   (per head chunk).
template <typename T>
AttendResult<T> attend(const AttentionParams<T>& params, const HiddenSequence<T>& speech,
                       const HiddenSequence<T>& text, AttentionCache<T>* cache = nullptr);

/// Backward of attend. Accumulates into du, dv, db and, when non-null, into
/// d_speech / d_text.
template <typename T>
void attend_backward(const AttentionParams<T>& params, const AttentionCache<T>& cache, const Tensor<T>& d_aligned,
                     Tensor<T>& du, Tensor<T>& dv, Tensor<T>& db, Tensor<T>* d_speech, Tensor<T>* d_text);

/// Number of attend() calls since process start (instrumentation).
std::uint64_t attend_call_count();

/// Unweighted mean of the speech states inside each word's span. The output
/// has `rows` rows (>= spans.size()); extra rows are zero padding.
template <typename T>
HiddenSequence<T> hard_align(const HiddenSequence<T>& speech, std::span<const WordSpan> spans, std::size_t rows);

template <typename T>
void hard_align_backward(std::span<const WordSpan> spans, const Tensor<T>& d_aligned, Tensor<T>& d_speech);

/// Throws ValidationError naming the first offending word when spans are
/// empty, reversed, or outside [1, valid_frames].
void validate_spans(std::span<const WordSpan> spans, std::size_t valid_frames);

template <typename T>
struct ConcatPoolResult {
  std::vector<T> values;  // [maxpool(speech); maxpool(text)]
  nn::PoolResult<T> speech;
  nn::PoolResult<T> text;
};

template <typename T>
ConcatPoolResult<T> concat_pool(const HiddenSequence<T>& speech, const HiddenSequence<T>& text);

/// Attention parameters registered as "<prefix>.u", "<prefix>.v", "<prefix>.b".
template <typename T>
class AttentionLayer {
 public:
  AttentionLayer() = default;
  AttentionLayer(ParameterSet<T>& params, const std::string& prefix, std::size_t state_dim, std::size_t heads);

  AttentionParams<T> view(const ParameterSet<T>& params) const {
    return {params.value(u_), params.value(v_), params.value(b_)};
  }
  std::size_t u_index() const { return u_; }
  std::size_t v_index() const { return v_; }
  std::size_t b_index() const { return b_; }

  void backward(const ParameterSet<T>& params, const AttentionCache<T>& cache, const Tensor<T>& d_aligned,
                nn::GradSpan<T> grads, Tensor<T>* d_speech, Tensor<T>* d_text) const {
    attend_backward(view(params), cache, d_aligned, grads[u_], grads[v_], grads[b_], d_speech, d_text);
  }

 private:
  std::size_t u_ = 0;
  std::size_t v_ = 0;
  std::size_t b_ = 0;
};

}  // namespace crossalign
