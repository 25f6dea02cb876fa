#include "crossalign/align.hpp"

#include <cmath>

#include "crossalign/kernels.hpp"

namespace crossalign {
namespace {

std::atomic<std::uint64_t> g_attend_calls{0};

}  // namespace

std::uint64_t attend_call_count() { return g_attend_calls.load(std::memory_order_relaxed); }

template <typename T>
AttendResult<T> attend(const AttentionParams<T>& params, const HiddenSequence<T>& speech,
                       const HiddenSequence<T>& text, AttentionCache<T>* cache) {
  g_attend_calls.fetch_add(1, std::memory_order_relaxed);
  const std::size_t heads = params.heads();
  const std::size_t chunk = params.chunk();
  const std::size_t D = heads * chunk;
  if (speech.valid_len == 0) throw ValidationError("attend: speech sequence has zero valid frames");
  if (text.valid_len == 0) throw ValidationError("attend: text sequence has zero valid words");
  if (speech.width() != D || text.width() != D) {
    throw ShapeError("attend: states of width " + std::to_string(speech.width()) + "/" +
                     std::to_string(text.width()) + " do not match " + std::to_string(heads) + " heads x " +
                     std::to_string(chunk));
  }
  if (params.v.rows() != heads || params.v.cols() != chunk || params.b.size() != heads) {
    throw ShapeError("attend: u, v, b shapes disagree");
  }
  const std::size_t N = speech.rows(), M = text.rows();
  const std::size_t Nv = speech.valid_len, Mv = text.valid_len;
  if (Nv > N || Mv > M) throw ShapeError("attend: valid length exceeds sequence length");

  AttendResult<T> out{HiddenSequence<T>{Tensor<T>({M, D}), Mv}, AttentionMap<T>{Tensor<T>({heads, M, N}), Nv, Mv}};
  Tensor<T> squashed({heads, M, N});
  std::vector<T> e(Nv), logits(N);
  for (std::size_t h = 0; h < heads; ++h) {
    const T* u = params.u.row(h).data();
    const T* v = params.v.row(h).data();
    const std::size_t off = h * chunk;
    for (std::size_t i = 0; i < Nv; ++i) e[i] = kernels::dot(u, speech.values.row(i).data() + off, chunk);
    for (std::size_t j = 0; j < Mv; ++j) {
      const T f = kernels::dot(v, text.values.row(j).data() + off, chunk);
      T* a = squashed.data() + (h * M + j) * N;
      for (std::size_t i = 0; i < N; ++i) {
        if (i < Nv) {
          a[i] = std::tanh(e[i] + f + params.b[h]);
          logits[i] = a[i];
        } else {
          logits[i] = static_cast<T>(kMaskLogit);
        }
      }
      const auto alpha = nn::softmax<T>(logits);
      T* w = out.map.weights.data() + (h * M + j) * N;
      std::copy(alpha.begin(), alpha.end(), w);
      T* ctx = out.aligned.values.row(j).data() + off;
      for (std::size_t i = 0; i < Nv; ++i) kernels::axpy(w[i], speech.values.row(i).data() + off, ctx, chunk);
    }
  }
  if (cache) {
    cache->speech = speech.values;
    cache->text = text.values;
    cache->squashed = std::move(squashed);
    cache->map = out.map;
  }
  return out;
}

template <typename T>
void attend_backward(const AttentionParams<T>& params, const AttentionCache<T>& cache, const Tensor<T>& d_aligned,
                     Tensor<T>& du, Tensor<T>& dv, Tensor<T>& db, Tensor<T>* d_speech, Tensor<T>* d_text) {
  if (cache.map.weights.empty()) throw StateError("attend backward called before forward");
  const std::size_t heads = params.heads();
  const std::size_t chunk = params.chunk();
  const std::size_t N = cache.map.frames(), M = cache.map.words();
  const std::size_t Nv = cache.map.valid_frames, Mv = cache.map.valid_words;
  std::vector<T> d_alpha(Nv), de(Nv);
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t off = h * chunk;
    std::fill(de.begin(), de.end(), T{0});
    for (std::size_t j = 0; j < Mv; ++j) {
      const T* alpha = cache.map.weights.data() + (h * M + j) * N;
      const T* a = cache.squashed.data() + (h * M + j) * N;
      const T* g = d_aligned.row(j).data() + off;
      T weighted{0};
      for (std::size_t i = 0; i < Nv; ++i) {
        d_alpha[i] = kernels::dot(g, cache.speech.row(i).data() + off, chunk);
        weighted += alpha[i] * d_alpha[i];
        if (d_speech) kernels::axpy(alpha[i], g, d_speech->row(i).data() + off, chunk);
      }
      T df{0};
      for (std::size_t i = 0; i < Nv; ++i) {
        const T d_pre = alpha[i] * (d_alpha[i] - weighted) * (T{1} - a[i] * a[i]);
        de[i] += d_pre;
        df += d_pre;
      }
      db[h] += df;
      kernels::axpy(df, cache.text.row(j).data() + off, dv.row(h).data(), chunk);
      if (d_text) kernels::axpy(df, params.v.row(h).data(), d_text->row(j).data() + off, chunk);
    }
    for (std::size_t i = 0; i < Nv; ++i) {
      kernels::axpy(de[i], cache.speech.row(i).data() + off, du.row(h).data(), chunk);
      if (d_speech) kernels::axpy(de[i], params.u.row(h).data(), d_speech->row(i).data() + off, chunk);
    }
  }
}

void validate_spans(std::span<const WordSpan> spans, std::size_t valid_frames) {
  for (std::size_t j = 0; j < spans.size(); ++j) {
    const auto& s = spans[j];
    if (s.start_frame < 1 || s.end_frame < s.start_frame || s.end_frame > valid_frames) {
      throw ValidationError("word " + std::to_string(j) + ": span [" + std::to_string(s.start_frame) + ", " +
                            std::to_string(s.end_frame) + "] is empty or outside frames 1.." +
                            std::to_string(valid_frames));
    }
  }
}

template <typename T>
HiddenSequence<T> hard_align(const HiddenSequence<T>& speech, std::span<const WordSpan> spans, std::size_t rows) {
  if (spans.empty()) throw ValidationError("hard_align: no word spans");
  validate_spans(spans, speech.valid_len);
  rows = std::max(rows, spans.size());
  const std::size_t D = speech.width();
  HiddenSequence<T> out{Tensor<T>({rows, D}), spans.size()};
  for (std::size_t j = 0; j < spans.size(); ++j) {
    T* dst = out.values.row(j).data();
    for (std::size_t i = spans[j].start_frame - 1; i < spans[j].end_frame; ++i) {
      const T* src = speech.values.row(i).data();
      for (std::size_t d = 0; d < D; ++d) dst[d] += src[d];
    }
    const T count = static_cast<T>(spans[j].end_frame - spans[j].start_frame + 1);
    for (std::size_t d = 0; d < D; ++d) dst[d] /= count;
  }
  return out;
}

template <typename T>
void hard_align_backward(std::span<const WordSpan> spans, const Tensor<T>& d_aligned, Tensor<T>& d_speech) {
  const std::size_t D = d_aligned.cols();
  for (std::size_t j = 0; j < spans.size(); ++j) {
    const T scale = T{1} / static_cast<T>(spans[j].end_frame - spans[j].start_frame + 1);
    for (std::size_t i = spans[j].start_frame - 1; i < spans[j].end_frame; ++i) {
      kernels::axpy(scale, d_aligned.row(j).data(), d_speech.row(i).data(), D);
    }
  }
}

template <typename T>
ConcatPoolResult<T> concat_pool(const HiddenSequence<T>& speech, const HiddenSequence<T>& text) {
  ConcatPoolResult<T> out{{}, nn::max_pool_time(speech.values, speech.valid_len),
                          nn::max_pool_time(text.values, text.valid_len)};
  out.values = out.speech.values;
  out.values.insert(out.values.end(), out.text.values.begin(), out.text.values.end());
  return out;
}

template <typename T>
AttentionLayer<T>::AttentionLayer(ParameterSet<T>& params, const std::string& prefix, std::size_t state_dim,
                                  std::size_t heads) {
  if (heads == 0 || state_dim % heads != 0) {
    throw ValidationError("attention: state width " + std::to_string(state_dim) + " is not divisible by " +
                          std::to_string(heads) + " heads");
  }
  u_ = params.add(prefix + ".u", {heads, state_dim / heads});
  v_ = params.add(prefix + ".v", {heads, state_dim / heads});
  b_ = params.add(prefix + ".b", {heads});
}

#define CROSSALIGN_INSTANTIATE_ALIGN(T)                                                                      \
  template AttendResult<T> attend(const AttentionParams<T>&, const HiddenSequence<T>&,                     \
                                  const HiddenSequence<T>&, AttentionCache<T>*);                           \
  template void attend_backward(const AttentionParams<T>&, const AttentionCache<T>&, const Tensor<T>&,     \
                                Tensor<T>&, Tensor<T>&, Tensor<T>&, Tensor<T>*, Tensor<T>*);               \
  template HiddenSequence<T> hard_align(const HiddenSequence<T>&, std::span<const WordSpan>, std::size_t); \
  template void hard_align_backward(std::span<const WordSpan>, const Tensor<T>&, Tensor<T>&);              \
  template ConcatPoolResult<T> concat_pool(const HiddenSequence<T>&, const HiddenSequence<T>&);            \
  template class AttentionLayer<T>;

CROSSALIGN_INSTANTIATE_ALIGN(float)
CROSSALIGN_INSTANTIATE_ALIGN(double)

}  // namespace crossalign
