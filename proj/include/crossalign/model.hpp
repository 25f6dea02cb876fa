#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "crossalign/align.hpp"
#include "crossalign/encoders.hpp"
#include "crossalign/fusion.hpp"
#include "crossalign/rng.hpp"

namespace crossalign {

enum class Variant { kProposed, kHardAlign, kConcat, kSpeechOnly, kTextOnly };

std::string_view to_string(Variant v);
Variant parse_variant(std::string_view name);

/// Proposed, hard-align and concat use both modalities.
bool is_multimodal(Variant v);
/// Variants whose forward pass produces a word-to-frame attention map.
bool has_alignment_map(Variant v);

struct ModelConfig {
  Variant variant = Variant::kProposed;
  std::size_t feature_dim = 34;
  std::size_t embed_dim = 300;
  std::size_t hidden = 100;  // per direction
  std::size_t heads = 5;
  std::size_t classes = kNumClasses;
  /// When nonzero, the model owns a trainable "embed.table" of this many rows
  /// and examples supply token ids instead of embedding matrices.
  std::size_t vocab_size = 0;

  std::size_t state_dim() const { return 2 * hidden; }
  void validate() const;
};

/// One utterance as the model sees it. Matrices may carry padding rows past
/// `frames` / `words`; those rows never influence the output.
template <typename T>
struct ExampleView {
  const Tensor<T>* features = nullptr;  // frames x feature_dim
  std::size_t frames = 0;
  const Tensor<T>* embeddings = nullptr;  // words x embed_dim (frozen embeddings)
  std::size_t words = 0;
  std::span<const int> token_ids;  // trainable embeddings; -1 marks OOV
  std::span<const WordSpan> spans;  // required by the hard-align variant
  std::size_t label = 0;
  std::string_view id;
};

template <typename T>
struct ForwardCache {
  bool ready = false;
  std::size_t label = 0;
  BiLstmCache<T> speech;
  BiLstmCache<T> text;
  BiLstmCache<T> fusion;
  std::size_t speech_rows = 0;
  std::size_t text_rows = 0;
  AttentionCache<T> attention;
  nn::PoolResult<T> fused_pool;
  ConcatPoolResult<T> concat;
  HeadCache<T> head;
  std::vector<WordSpan> spans;
  std::vector<int> token_ids;
};

template <typename T>
struct ForwardResult {
  LossValue<T> loss;
  Prediction<T> prediction;
  std::optional<AttentionMap<T>> attention;
};

/// The full classifier: speech and text BiLSTM encoders, alignment, fusion
/// BiLSTM and the pooled ReLU/softmax head, or one of the baseline wirings.
template <typename T>
class Model {
 public:
  explicit Model(ModelConfig config);

  const ModelConfig& config() const { return config_; }
  ParameterSet<T>& params() { return params_; }
  const ParameterSet<T>& params() const { return params_; }

  /// uniform(-k, k) with k = scale / sqrt(fan_in) for weight matrices and
  /// scoring vectors; zero biases except LSTM forget-gate biases set to 1.
  void init(Rng& rng, double scale = 1.0);

  ForwardResult<T> forward(const ExampleView<T>& example, ForwardCache<T>& cache) const;
  ForwardResult<T> forward(const ExampleView<T>& example) const;

  /// Accumulates dLoss/dparam for the cached forward into `grads`.
  void backward(const ForwardCache<T>& cache, nn::GradSpan<T> grads) const;
  /// Same, into the parameters' own gradient slots.
  void backward(const ForwardCache<T>& cache) { backward(cache, params_.grads()); }

  const BiLstmEncoder<T>& speech_encoder() const { return speech_enc_; }
  const BiLstmEncoder<T>& text_encoder() const { return text_enc_; }
  const BiLstmEncoder<T>& fusion_encoder() const { return fusion_; }
  const AttentionLayer<T>& attention() const { return attention_; }
  const ClassifierHead<T>& head() const { return head_; }
  std::optional<std::size_t> embedding_index() const { return embed_; }

 private:
  bool uses_speech() const { return config_.variant != Variant::kTextOnly; }
  bool uses_text() const { return config_.variant != Variant::kSpeechOnly; }
  ForwardResult<T> forward_impl(const ExampleView<T>& example, ForwardCache<T>& cache) const;

  ModelConfig config_;
  ParameterSet<T> params_;
  BiLstmEncoder<T> speech_enc_;
  BiLstmEncoder<T> text_enc_;
  BiLstmEncoder<T> fusion_;
  AttentionLayer<T> attention_;  // "align.*" or, for unimodal variants, "pool.*"
  std::optional<std::size_t> query_;
  std::optional<std::size_t> embed_;
  ClassifierHead<T> head_;
};

}  // namespace crossalign
