#include "crossalign/model.hpp"

#include <cmath>

namespace crossalign {
namespace {

[[noreturn]] void rethrow_with_id(const Error& e, std::string_view id) {
  const std::string msg = "utterance '" + std::string(id) + "': " + e.what();
  if (dynamic_cast<const ShapeError*>(&e)) throw ShapeError(msg);
  if (dynamic_cast<const ValidationError*>(&e)) throw ValidationError(msg);
  if (dynamic_cast<const NumericError*>(&e)) throw NumericError(msg);
  if (dynamic_cast<const StateError*>(&e)) throw StateError(msg);
  if (dynamic_cast<const IoError*>(&e)) throw IoError(msg);
  throw Error(msg, e.exit_code());
}

bool ends_with(std::string_view s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

}  // namespace

std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::kProposed: return "proposed";
    case Variant::kHardAlign: return "hard";
    case Variant::kConcat: return "concat";
    case Variant::kSpeechOnly: return "speech-only";
    case Variant::kTextOnly: return "text-only";
  }
  return "?";
}

Variant parse_variant(std::string_view name) {
  for (auto v : {Variant::kProposed, Variant::kHardAlign, Variant::kConcat, Variant::kSpeechOnly, Variant::kTextOnly})
    if (to_string(v) == name) return v;
  throw ValidationError("unknown model variant '" + std::string(name) +
                        "' (expected proposed, hard, concat, speech-only or text-only)");
}

bool is_multimodal(Variant v) {
  return v == Variant::kProposed || v == Variant::kHardAlign || v == Variant::kConcat;
}

bool has_alignment_map(Variant v) { return v == Variant::kProposed; }

void ModelConfig::validate() const {
  if (hidden == 0 || heads == 0 || feature_dim == 0 || embed_dim == 0 || classes < 2) {
    throw ValidationError("model dimensions must be positive");
  }
  if (state_dim() % heads != 0) {
    throw ValidationError("state width " + std::to_string(state_dim()) + " is not divisible by " +
                          std::to_string(heads) + " attention heads");
  }
}

template <typename T>
Model<T>::Model(ModelConfig config) : config_(config) {
  config_.validate();
  const std::size_t H = config_.hidden, D = config_.state_dim();
  if (config_.vocab_size > 0 && uses_text()) {
    embed_ = params_.add("embed.table", {config_.vocab_size, config_.embed_dim});
  }
  if (uses_speech()) speech_enc_ = BiLstmEncoder<T>(params_, "speech_enc", config_.feature_dim, H);
  if (uses_text()) text_enc_ = BiLstmEncoder<T>(params_, "text_enc", config_.embed_dim, H);
  std::size_t head_in = D;
  switch (config_.variant) {
    case Variant::kProposed:
      attention_ = AttentionLayer<T>(params_, "align", D, config_.heads);
      fusion_ = BiLstmEncoder<T>(params_, "fusion", 2 * D, H);
      break;
    case Variant::kHardAlign:
      fusion_ = BiLstmEncoder<T>(params_, "fusion", 2 * D, H);
      break;
    case Variant::kConcat:
      head_in = 2 * D;
      break;
    case Variant::kSpeechOnly:
    case Variant::kTextOnly:
      attention_ = AttentionLayer<T>(params_, "pool", D, config_.heads);
      query_ = params_.add("pool.query", {1, D});
      break;
  }
  head_ = ClassifierHead<T>(params_, head_in, config_.classes);
}

template <typename T>
void Model<T>::init(Rng& rng, double scale) {
  for (std::size_t p = 0; p < params_.size(); ++p) {
    const std::string& name = params_.name(p);
    auto& value = params_.value(p);
    if (name == "embed.table") continue;
    if (ends_with(name, ".bias")) {
      const std::size_t H = value.size() / 4;
      value.zero();
      for (std::size_t k = H; k < 2 * H; ++k) value[k] = T{1};
      continue;
    }
    if (ends_with(name, ".b")) {
      value.zero();
      continue;
    }
    // head.W is in x out; every other matrix is out x in.
    const std::size_t fan_in = name == "head.W" ? value.rows() : value.cols();
    const double k = scale / std::sqrt(static_cast<double>(fan_in));
    for (auto& x : value.flat()) x = static_cast<T>(rng.uniform(-k, k));
  }
}

template <typename T>
ForwardResult<T> Model<T>::forward(const ExampleView<T>& example, ForwardCache<T>& cache) const {
  try {
    return forward_impl(example, cache);
  } catch (const Error& e) {
    rethrow_with_id(e, example.id);
  }
}

template <typename T>
ForwardResult<T> Model<T>::forward(const ExampleView<T>& example) const {
  ForwardCache<T> cache;
  return forward(example, cache);
}

template <typename T>
ForwardResult<T> Model<T>::forward_impl(const ExampleView<T>& ex, ForwardCache<T>& cache) const {
  cache.ready = false;
  if (ex.label >= config_.classes) throw ValidationError("label out of range");
  cache.label = ex.label;

  HiddenSequence<T> speech, text;
  if (uses_speech()) {
    if (!ex.features || ex.frames == 0) throw ValidationError("example has no acoustic frames");
    speech = encode_speech(speech_enc_, params_, *ex.features, ex.frames, cache.speech);
    cache.speech_rows = ex.features->rows();
  }
  if (uses_text()) {
    if (ex.words == 0) throw ValidationError("example has no tokens");
    if (embed_) {
      if (ex.token_ids.size() < ex.words) throw ValidationError("token ids missing for trainable embeddings");
      const auto& table = params_.value(*embed_);
      Tensor<T> emb({ex.words, config_.embed_dim});
      cache.token_ids.assign(ex.token_ids.begin(), ex.token_ids.begin() + static_cast<std::ptrdiff_t>(ex.words));
      for (std::size_t j = 0; j < ex.words; ++j) {
        const int id = cache.token_ids[j];
        if (id >= 0) std::copy(table.row(id).begin(), table.row(id).end(), emb.row(j).begin());
      }
      text = text_enc_.forward(params_, emb, ex.words, cache.text);
      cache.text_rows = ex.words;
    } else {
      if (!ex.embeddings) throw ValidationError("example has no embeddings");
      if (ex.embeddings->cols() != config_.embed_dim) {
        throw ShapeError("embedding width " + std::to_string(ex.embeddings->cols()) + " but model expects " +
                         std::to_string(config_.embed_dim));
      }
      text = text_enc_.forward(params_, *ex.embeddings, ex.words, cache.text);
      cache.text_rows = ex.embeddings->rows();
    }
  }

  ForwardResult<T> result;
  switch (config_.variant) {
    case Variant::kProposed:
    case Variant::kHardAlign: {
      HiddenSequence<T> aligned;
      if (config_.variant == Variant::kProposed) {
        auto att = attend(attention_.view(params_), speech, text, &cache.attention);
        aligned = std::move(att.aligned);
        result.attention = std::move(att.map);
      } else {
        if (ex.spans.size() != ex.words) {
          throw ValidationError("hard alignment needs one span per word (" + std::to_string(ex.words) +
                                " words, " + std::to_string(ex.spans.size()) + " spans)");
        }
        cache.spans.assign(ex.spans.begin(), ex.spans.end());
        aligned = hard_align(speech, ex.spans, text.rows());
      }
      const auto fused = fuse(fusion_, params_, aligned, text, cache.fusion);
      result.prediction = classify(head_, params_, fused, &cache.fused_pool, &cache.head);
      break;
    }
    case Variant::kConcat: {
      cache.concat = concat_pool(speech, text);
      result.prediction = head_.forward(params_, cache.concat.values, &cache.head);
      break;
    }
    case Variant::kSpeechOnly:
    case Variant::kTextOnly: {
      const HiddenSequence<T> query{params_.value(*query_), 1};
      const auto& seq = config_.variant == Variant::kSpeechOnly ? speech : text;
      auto att = attend(attention_.view(params_), seq, query, &cache.attention);
      result.prediction = head_.forward(params_, att.aligned.values.row(0), &cache.head);
      break;
    }
  }
  result.loss = loss(result.prediction, ex.label);
  if (!std::isfinite(static_cast<double>(result.loss.value))) throw NumericError("non-finite loss");
  cache.ready = true;
  return result;
}

template <typename T>
void Model<T>::backward(const ForwardCache<T>& cache, nn::GradSpan<T> grads) const {
  if (!cache.ready) throw StateError("backward called before a successful forward pass");
  if (grads.size() != params_.size()) throw ShapeError("gradient buffer does not match the parameter set");
  const std::size_t D = config_.state_dim();
  const auto d_head = head_.backward(params_, cache.head, cache.label, grads);

  Tensor<T> d_speech, d_text;
  if (uses_speech()) d_speech = Tensor<T>({cache.speech_rows, D});
  if (uses_text()) d_text = Tensor<T>({cache.text_rows, D});

  switch (config_.variant) {
    case Variant::kProposed:
    case Variant::kHardAlign: {
      Tensor<T> d_fused({cache.text_rows, D});
      for (std::size_t k = 0; k < D; ++k) d_fused(cache.fused_pool.argmax[k], k) += d_head[k];
      Tensor<T> d_input({cache.text_rows, 2 * D});
      fusion_.backward(params_, cache.fusion, d_fused, grads, &d_input);
      Tensor<T> d_aligned({cache.text_rows, D});
      for (std::size_t j = 0; j < cache.text_rows; ++j) {
        for (std::size_t k = 0; k < D; ++k) {
          d_aligned(j, k) = d_input(j, k);
          d_text(j, k) += d_input(j, D + k);
        }
      }
      if (config_.variant == Variant::kProposed) {
        attention_.backward(params_, cache.attention, d_aligned, grads, &d_speech, &d_text);
      } else {
        hard_align_backward<T>(cache.spans, d_aligned, d_speech);
      }
      break;
    }
    case Variant::kConcat:
      for (std::size_t k = 0; k < D; ++k) {
        d_speech(cache.concat.speech.argmax[k], k) += d_head[k];
        d_text(cache.concat.text.argmax[k], k) += d_head[D + k];
      }
      break;
    case Variant::kSpeechOnly:
    case Variant::kTextOnly: {
      Tensor<T> d_pooled({1, D});
      std::copy(d_head.begin(), d_head.end(), d_pooled.data());
      Tensor<T> d_query({1, D});
      auto* d_seq = config_.variant == Variant::kSpeechOnly ? &d_speech : &d_text;
      attention_.backward(params_, cache.attention, d_pooled, grads, d_seq, &d_query);
      grads[*query_] += d_query;
      break;
    }
  }

  if (uses_speech()) speech_enc_.backward(params_, cache.speech, d_speech, grads, nullptr);
  if (uses_text()) {
    if (embed_) {
      Tensor<T> d_emb({cache.text_rows, config_.embed_dim});
      text_enc_.backward(params_, cache.text, d_text, grads, &d_emb);
      auto& g = grads[*embed_];
      for (std::size_t j = 0; j < cache.token_ids.size(); ++j) {
        const int id = cache.token_ids[j];
        if (id < 0) continue;
        for (std::size_t d = 0; d < config_.embed_dim; ++d) g(static_cast<std::size_t>(id), d) += d_emb(j, d);
      }
    } else {
      text_enc_.backward(params_, cache.text, d_text, grads, nullptr);
    }
  }
}

template class Model<float>;
template class Model<double>;

}  // namespace crossalign
